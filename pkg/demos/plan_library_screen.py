"""Plan a pooled screen of a 33,000-clone library with ten expected positives.

Finds the fewest pools that resolve half the positives on average, reports
the expected unresolved clones, then builds the design and its robot
transfer list.

    python3 demos/plan_library_screen.py
"""

from poolkit import (
    DesignShape,
    LibraryModel,
    OptimizationTarget,
    emit_schedule,
    evaluate,
    generate_random_ksets,
    min_pools,
    schedule_summary,
)

model = LibraryModel(n=33_000, c=10)

for method in ("approx", "exact"):
    res = min_pools(model, OptimizationTarget(0.5, method))
    print(f"{method:>6}: v={res.v_min} k={res.k_opt} resolved={res.resolved:.3f} "
          f"clones/pool={res.clones_per_pool:.0f}")

# the exact optimum; metrics at full precision
shape = DesignShape(170, 10)
m = evaluate(model, shape, "exact")
print(f"expected resolved positives {m.resolved_positives:.3f}, "
      f"unresolved negatives {m.n_bar:.2f}, confirmatory load {m.confirmatory_load:.1f}")

design = generate_random_ksets(model.n, shape.v, shape.k, seed=1)
transfers = emit_schedule(design, volume_ul=400)
summary = schedule_summary(transfers)
print(f"{len(transfers)} transfers from {len(summary.plate_transfers)} plates; "
      f"pool volumes {summary.pool_volume_ul.min() / 1000:.0f}-"
      f"{summary.pool_volume_ul.max() / 1000:.0f} mL")
