"""``poolkit`` command line: one binary, one subcommand per task.

Every run that writes to ``--out`` also writes ``<out>.manifest.json``
recording the subcommand, its parameters, the resolved seed, the tool version
and SHA-256 digests of the files read and written. ``poolkit --replay M``
reruns a manifest and checks that the outputs are byte-identical.

Exit codes: 0 success, 2 usage error, 3 infeasible target or failed
validation, 4 numerical precision failure. Failures print one JSON object
``{"error": category, "message": ...}`` on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List

import numpy as np

from . import __version__
from .combinatorics import DEFAULT_DIGITS, DesignShape
from .decoder import (PosteriorRanking, posterior_exact, posterior_gibbs,
                      rank_for_confirmation)
from .design import (DesignFormatError, GenerationExhausted, PackingConstraints, dumps,
                     generate_cubic, generate_ksets_packing, generate_random_ksets,
                     generate_row_column, read_design, validate)
from .metrics import BudgetExceeded, LibraryModel, PrecisionError, evaluate
from .optimizer import Infeasible, OptimizationTarget, min_pools, sweep_grid, write_sweep_csv
from .scheduling import PlateLayout, emit_schedule, schedule_summary
from .screening import (AssayOutcome, ErrorModel, assay_pools, draw_positives,
                        replicate_rng, simulate_metrics)

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_PRECISION = 0, 2, 3, 4
SEED_ENV = "POOLKIT_SEED"


class UsageError(ValueError):
    pass


class ValidationFailed(RuntimeError):
    pass


@dataclass
class RunManifest:
    subcommand: str
    argv: List[str]
    params: Dict[str, object]
    seed: int | None
    version: str = __version__
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)

    def dumps(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))


def sha256_file(path: str | os.PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _ints(text: str) -> List[int]:
    return [int(x) for x in text.split(",") if x.strip()]


class _Run:
    """Collects inputs read during a subcommand so the manifest can digest them."""

    def __init__(self, args):
        self.args = args
        self.inputs: Dict[str, str] = {}

    def design(self, path):
        self.inputs[str(path)] = sha256_file(path)
        return read_design(path)

    def text(self, path) -> str:
        self.inputs[str(path)] = sha256_file(path)
        return Path(path).read_text()


# -- subcommands ----------------------------------------------------------------


def cmd_generate(run: _Run) -> str:
    a = run.args
    seed = _seed(a)
    if a.kind == "random_ksets":
        _need(a, "n", "v", "k")
        design = generate_random_ksets(a.n, a.v, a.k, seed)
    elif a.kind == "ksets_packing":
        _need(a, "n", "v", "k", "t")
        balance = tuple(a.balance) if a.balance else None
        design = generate_ksets_packing(a.n, a.v, a.k,
                                        PackingConstraints(a.t, balance, a.max_retries), seed)
    elif a.kind == "row_column":
        _need(a, "lots")
        design = generate_row_column(a.lots, a.dishes, a.rows, a.cols, not a.no_dish_pools)
    else:
        _need(a, "n")
        design = generate_cubic(a.n, a.side, a.configurations, seed)
    return dumps(design)


def _need(args, *names):
    missing = [f"--{x}" for x in names if getattr(args, x, None) is None]
    if missing:
        raise UsageError(f"{args.kind} needs {' '.join(missing)}")


def cmd_validate(run: _Run) -> str:
    a = run.args
    design = run.design(a.design)
    expected = PackingConstraints(a.t, tuple(a.balance) if a.balance else None) \
        if a.t is not None else None
    report = validate(design, expected, a.k)
    lines = [f"n={report.n}", f"v={report.v}",
             f"k={report.k if report.k is not None else 'ragged'}",
             f"duplicates={report.duplicates}",
             f"max_intersection={report.max_intersection}",
             "pool_sizes=" + ",".join(f"{s}:{c}" for s, c in report.pool_size_histogram.items())]
    lines += [f"problem={p}" for p in report.problems]
    lines.append(f"ok={str(report.ok).lower()}")
    text = "\n".join(lines) + "\n"
    if not report.ok:
        raise ValidationFailed(text)
    return text


def _shape(run: _Run) -> tuple[int, DesignShape]:
    a = run.args
    if a.design is not None:
        design = run.design(a.design)
        if design.k is None:
            raise ValidationFailed("design is not k-uniform; closed forms need a k-sets shape")
        return design.n, DesignShape(design.v, design.k)
    if None in (a.n, a.v, a.k):
        raise UsageError("give --design or all of --n --v --k")
    return a.n, DesignShape(a.v, a.k)


def cmd_evaluate(run: _Run) -> str:
    a = run.args
    n, shape = _shape(run)
    res = evaluate(LibraryModel(n, a.c), shape, a.method, a.precision_digits)
    rows = [("n", n), ("c", a.c), ("v", shape.v), ("k", shape.k), ("method", a.method),
            ("unresolved_negatives", res.n_bar), ("unresolved_positives", res.p_bar),
            ("resolved_positives", res.resolved_positives),
            ("resolved_negatives", res.resolved_negatives),
            ("confirmatory_load", res.confirmatory_load)]
    return "".join(f"{key}={_fmt(val)}\n" for key, val in rows)


def _fmt(value) -> str:
    return f"{value:.10g}" if isinstance(value, float) else str(value)


def cmd_optimize(run: _Run) -> str:
    a = run.args
    k_range = (a.k, a.k) if a.k is not None else (tuple(a.k_range) if a.k_range else None)
    res = min_pools(LibraryModel(a.n, a.c), OptimizationTarget(a.fraction, a.method, k_range,
                                                               (1, a.v_max)))
    return (f"v={res.v_min} k={res.k_opt}\n"
            f"resolved_positives={res.resolved:.10g}\n"
            f"unresolved_negatives={res.unresolved_negatives:.10g}\n"
            f"clones_per_pool={res.clones_per_pool:.10g}\n")


def cmd_sweep(run: _Run) -> str:
    a = run.args
    resolution = tuple(a.resolution) if len(a.resolution) == 2 else a.resolution[0]
    rows = sweep_grid(tuple(a.n_range), tuple(a.c_range), a.fraction, resolution, a.method,
                      tuple(a.k_range) if a.k_range else None, workers=a.threads)
    return write_sweep_csv(rows)


def _errors(a) -> ErrorModel:
    return ErrorModel(a.fp, a.fn)


def cmd_simulate(run: _Run) -> str:
    a = run.args
    seed = _seed(a)
    if a.design is not None:
        source = run.design(a.design)
        n = source.n
    else:
        if None in (a.n, a.v, a.k):
            raise UsageError("give --design or all of --n --v --k")
        n, v, k = a.n, a.v, a.k

        def source(rng, n=n, v=v, k=k):
            return generate_random_ksets(n, v, k, rng)
    model = LibraryModel(n, a.c)
    errors = _errors(a)
    if a.assay_out is not None:
        design = source if a.design is not None else source(replicate_rng(seed, 0))
        positives = np.array(_ints(a.positives), dtype=np.int64) if a.positives is not None \
            else draw_positives(model, replicate_rng(seed, 1))
        if len(positives) and (positives.min() < 0 or positives.max() >= n):
            raise UsageError("planted positives must be clone indices of the design")
        outcome = assay_pools(design, positives, errors, replicate_rng(seed, 2))
        Path(a.assay_out).write_text(outcome.dumps())
        run.extra_outputs = [a.assay_out]
        return "positives=" + ",".join(map(str, positives.tolist())) + "\n"
    result = simulate_metrics(source, model, errors if not errors.error_free else None,
                              a.replicates, seed, workers=a.threads)
    return result.report_csv()


def cmd_decode(run: _Run) -> str:
    a = run.args
    design = run.design(a.design)
    outcome = AssayOutcome.loads(run.text(a.assay))
    if outcome.v != design.v:
        raise UsageError(f"assay has {outcome.v} pools, design has {design.v}")
    model = LibraryModel(design.n, a.c)
    if a.method == "exact":
        ranking = posterior_exact(design, outcome, _errors(a), model)
    else:
        ranking = posterior_gibbs(design, outcome, _errors(a), model, a.sweeps, a.burn_in,
                                  a.chains, _seed(a))
    return ranking.to_csv()


def cmd_rank(run: _Run) -> str:
    a = run.args
    ranking = PosteriorRanking.from_csv(run.text(a.posterior))
    picks = rank_for_confirmation(ranking, a.budget)
    lines = ["clone_id,posterior,rank"]
    lines += [f"{i},{ranking.posterior[i]:.10g},{int(ranking.rank[i])}" for i in picks]
    return "\n".join(lines) + "\n"


def cmd_schedule(run: _Run) -> str:
    a = run.args
    design = run.design(a.design)
    transfers = emit_schedule(design, PlateLayout(a.rows, a.cols, a.plates), a.volume)
    if not a.summary:
        return transfers.to_csv()
    summary = schedule_summary(transfers)
    lines = ["scope,id,transfers,volume_ul"]
    lines += [f"pool,{q},{int(summary.pool_transfers[q])},{summary.pool_volume_ul[q]:g}"
              for q in range(len(summary.pool_volume_ul))]
    lines += [f"plate,{p},{summary.plate_transfers[p]},{summary.plate_volume_ul[p]:g}"
              for p in sorted(summary.plate_volume_ul)]
    return "\n".join(lines) + "\n"


COMMANDS = {
    "generate": cmd_generate, "validate": cmd_validate, "evaluate": cmd_evaluate,
    "optimize": cmd_optimize, "sweep": cmd_sweep, "simulate": cmd_simulate,
    "decode": cmd_decode, "rank": cmd_rank, "schedule": cmd_schedule,
}
SEEDED = {"generate", "simulate", "decode"}


# -- argument parsing -------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="poolkit", description="pooling design toolkit")
    parser.add_argument("--version", action="version", version=f"poolkit {__version__}")
    parser.add_argument("--replay", metavar="MANIFEST",
                        help="rerun a manifest and verify its outputs")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, seed=False):
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
        p.add_argument("--threads", type=int, default=1, help="cap on worker processes")
        p.add_argument("--precision-digits", type=int, default=DEFAULT_DIGITS)
        if seed:
            p.add_argument("--seed", type=int, help=f"RNG seed (fallback: ${SEED_ENV}, then 0)")

    p = sub.add_parser("generate", help="build a pooling design")
    common(p, seed=True)
    p.add_argument("--kind", default="random_ksets",
                   choices=["random_ksets", "ksets_packing", "row_column", "cubic"])
    p.add_argument("--n", type=int)
    p.add_argument("--v", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--t", type=int)
    p.add_argument("--balance", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--max-retries", type=int, default=10_000)
    p.add_argument("--lots", type=int)
    p.add_argument("--dishes", type=int, default=8)
    p.add_argument("--rows", type=int, default=8)
    p.add_argument("--cols", type=int, default=12)
    p.add_argument("--no-dish-pools", action="store_true")
    p.add_argument("--side", type=int, default=43)
    p.add_argument("--configurations", type=int, default=2)

    p = sub.add_parser("validate", help="check a design file")
    common(p)
    p.add_argument("--design", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--t", type=int)
    p.add_argument("--balance", type=int, nargs=2, metavar=("LO", "HI"))

    p = sub.add_parser("evaluate", help="expected unresolved clones of a k-sets shape")
    common(p)
    p.add_argument("--design")
    p.add_argument("--n", type=int)
    p.add_argument("--v", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--c", type=float, required=True)
    p.add_argument("--method", default="exact",
                   choices=["exact", "float", "approx", "independent_pools"])

    p = sub.add_parser("optimize", help="fewest pools reaching a resolved fraction")
    common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--c", type=float, required=True)
    p.add_argument("--fraction", type=float, default=0.5)
    p.add_argument("--method", default="exact", choices=["exact", "approx"])
    p.add_argument("--k", type=int, help="fix the number of pools per clone")
    p.add_argument("--k-range", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--v-max", type=int, default=5000)

    p = sub.add_parser("sweep", help="optimizer over a log-spaced (n, c) grid, as CSV")
    common(p)
    p.add_argument("--n-range", type=float, nargs=2, default=[1000, 100_000])
    p.add_argument("--c-range", type=float, nargs=2, default=[0.25, 16])
    p.add_argument("--fraction", type=float, default=0.5)
    p.add_argument("--resolution", type=int, nargs="+", default=[5])
    p.add_argument("--method", default="approx", choices=["exact", "approx"])
    p.add_argument("--k-range", type=int, nargs=2, metavar=("LO", "HI"))

    p = sub.add_parser("simulate", help="Monte Carlo category counts, or one assay vector")
    common(p, seed=True)
    p.add_argument("--design")
    p.add_argument("--n", type=int)
    p.add_argument("--v", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--c", type=float, required=True)
    p.add_argument("--replicates", type=int, default=1000)
    p.add_argument("--fp", type=float, default=0.0)
    p.add_argument("--fn", type=float, default=0.0)
    p.add_argument("--assay-out", help="write one noisy assay vector here instead")
    p.add_argument("--positives", help="comma-separated planted positives for --assay-out")

    p = sub.add_parser("decode", help="posterior probability of each clone being positive")
    common(p, seed=True)
    p.add_argument("--design", required=True)
    p.add_argument("--assay", required=True)
    p.add_argument("--c", type=float, required=True)
    p.add_argument("--fp", type=float, default=0.0)
    p.add_argument("--fn", type=float, default=0.0)
    p.add_argument("--method", default="gibbs", choices=["gibbs", "exact"])
    p.add_argument("--sweeps", type=int, default=2000)
    p.add_argument("--burn-in", type=int, default=200)
    p.add_argument("--chains", type=int, default=4)

    p = sub.add_parser("rank", help="pick clones for confirmatory tests")
    common(p)
    p.add_argument("--posterior", required=True)
    p.add_argument("--budget", type=int, required=True)

    p = sub.add_parser("schedule", help="well-to-pool transfer list")
    common(p)
    p.add_argument("--design", required=True)
    p.add_argument("--rows", type=int, default=8)
    p.add_argument("--cols", type=int, default=12)
    p.add_argument("--plates", type=int)
    p.add_argument("--volume", type=float, default=400.0, help="microlitres per transfer")
    p.add_argument("--summary", action="store_true", help="per-pool and per-plate totals")
    return parser


# -- dispatch -----------------------------------------------------------------------


def _fail(category: str, message: str, code: int) -> int:
    print(json.dumps({"error": category, "message": message.strip()}), file=sys.stderr)
    return code


def run(argv: List[str]) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    if args.replay:
        return replay(args.replay)
    if args.command is None:
        return _fail("usage", "a subcommand is required", EXIT_USAGE)
    job = _Run(args)
    job.extra_outputs = []
    try:
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        if args.precision_digits < 15:
            raise UsageError("--precision-digits must be at least 15")
        text = COMMANDS[args.command](job)
    except (UsageError, DesignFormatError) as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    except OSError as exc:
        return _fail("usage", f"{exc.strerror}: {exc.filename}", EXIT_USAGE)
    except ValidationFailed as exc:
        if args.command == "validate":
            sys.stdout.write(str(exc))
            return _fail("validation", "design failed validation", EXIT_INFEASIBLE)
        return _fail("validation", str(exc), EXIT_INFEASIBLE)
    except (Infeasible, GenerationExhausted, BudgetExceeded) as exc:
        return _fail("infeasible", str(exc), EXIT_INFEASIBLE)
    except PrecisionError as exc:
        return _fail("precision", str(exc), EXIT_PRECISION)
    except ValueError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    if args.out is None:
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    manifest_path = args.manifest or (f"{args.out}.manifest.json" if args.out else None)
    if manifest_path is not None:
        outputs = [p for p in [args.out, *job.extra_outputs] if p is not None]
        params = {k: v for k, v in vars(args).items() if k not in ("replay", "manifest")}
        manifest = RunManifest(args.command, list(argv), params,
                               _seed(args) if args.command in SEEDED else None,
                               inputs=job.inputs,
                               outputs={str(p): sha256_file(p) for p in outputs})
        Path(manifest_path).write_text(manifest.dumps())
    return EXIT_OK


def replay(path: str) -> int:
    """Rerun a manifest; exit 3 if any output digest differs."""
    manifest = RunManifest.loads(Path(path).read_text())
    for name, digest in manifest.inputs.items():
        if not Path(name).exists() or sha256_file(name) != digest:
            return _fail("validation", f"input {name} changed since the recorded run",
                         EXIT_INFEASIBLE)
    argv = [a for a in manifest.argv]
    if manifest.seed is not None and "--seed" not in argv:
        argv += ["--seed", str(manifest.seed)]
    # never overwrite the recorded manifest while replaying
    argv += ["--manifest", os.devnull]
    code = run(argv)
    if code != EXIT_OK:
        return code
    for name, digest in manifest.outputs.items():
        if sha256_file(name) != digest:
            return _fail("validation", f"output {name} differs from the manifest",
                         EXIT_INFEASIBLE)
    print(f"replayed {manifest.subcommand}: {len(manifest.outputs)} output(s) identical")
    return EXIT_OK


def main(argv: List[str] | None = None) -> int:
    return run(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
