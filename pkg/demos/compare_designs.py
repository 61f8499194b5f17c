"""Compare pooling designs for the 1298-clone library at 2.5 expected positives.

Random 4-sets on 47 pools are scored by closed forms and by simulation; the
balanced packing (no two clones share more than two pools) is scored by
simulation. A row-column layout of two lots of seven 96-well dishes (1344
clones, the nearest whole-dish library) is simulated for contrast.

    python3 demos/compare_designs.py
"""

from poolkit import (
    DesignShape,
    LibraryModel,
    PackingConstraints,
    evaluate,
    generate_ksets_packing,
    generate_random_ksets,
    generate_row_column,
    simulate_metrics,
    validate,
)

model = LibraryModel(1298, 2.5)
REPLICATES = 20_000

closed = evaluate(model, DesignShape(47, 4), "exact")
print(f"random 4-sets, closed form : resolved {closed.resolved_positives:.3f}  "
      f"unresolved negatives {closed.n_bar:.3f}")

designs = {
    "random 4-sets, simulated  ": generate_random_ksets(1298, 47, 4, seed=2),
    "4-sets packing, simulated ": generate_ksets_packing(1298, 47, 4,
                                                         PackingConstraints(2, (109, 111)), seed=1),
}
rc = generate_row_column(2, [7, 7])

for name, design in designs.items():
    report = validate(design)
    sim = simulate_metrics(design, model, replicates=REPLICATES, seed=3)
    print(f"{name}: resolved {sim.resolved_positives:.3f}  unresolved negatives "
          f"{sim.unresolved_negatives:.3f}  (max shared pools {report.max_intersection})")

sim = simulate_metrics(rc, LibraryModel(rc.n, 2.5), replicates=REPLICATES, seed=3)
print(f"row-column ({rc.v} pools)     : resolved {sim.resolved_positives:.3f}  "
      f"unresolved negatives {sim.unresolved_negatives:.3f}")
