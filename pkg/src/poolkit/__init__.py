"""Design, evaluate and decode nonadaptive pooling screens of clone libraries."""

from .combinatorics import DesignShape, binom_exact, binom_pmf, coverage_prob_K, negative_pools_prob_L
from .decoder import (PosteriorRanking, log_likelihood, posterior_exact, posterior_gibbs,
                      rank_for_confirmation)
from .design import (PackingConstraints, PoolingDesign, generate_cubic, generate_ksets_packing,
                     generate_random_ksets, generate_row_column, read_design, validate,
                     write_design)
from .metrics import (LibraryModel, MetricsResult, evaluate, unresolved_negatives_exact,
                      unresolved_positives_exact)
from .optimizer import OptimizationTarget, min_pools, sweep_grid
from .scheduling import PlateLayout, TransferList, emit_schedule, schedule_summary
from .screening import (AssayOutcome, ErrorModel, assay_pools, classify_observed, classify_truth,
                        draw_positives, simulate_metrics, simulate_random_ksets)

__version__ = "0.1.0"

__all__ = [
    "AssayOutcome", "DesignShape", "ErrorModel", "LibraryModel", "MetricsResult",
    "assay_pools", "classify_observed", "draw_positives",
    "OptimizationTarget", "PackingConstraints", "PlateLayout", "PoolingDesign",
    "PosteriorRanking", "TransferList", "binom_exact", "binom_pmf", "classify_truth",
    "coverage_prob_K", "emit_schedule", "evaluate", "generate_cubic", "generate_ksets_packing",
    "generate_random_ksets", "generate_row_column", "log_likelihood", "min_pools",
    "negative_pools_prob_L", "posterior_exact", "posterior_gibbs", "rank_for_confirmation",
    "read_design", "schedule_summary", "simulate_metrics", "simulate_random_ksets", "sweep_grid",
    "unresolved_negatives_exact", "unresolved_positives_exact", "validate", "write_design",
]
