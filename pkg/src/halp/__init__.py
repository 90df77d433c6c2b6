"""Low-precision variance-reduced SGD: fixed-point lattices, LP-SVRG, HALP."""
__version__ = "0.1.0"

from .fixed_point import (
    LPRepr, LPScalar, LPVector, add_same_scale, dot_lp, mul_scalar, quantize_scalar,
    quantize_vector, to_real, widen_shift,
)
from .objectives import (
    Dataset, Objective, load_csv, load_idx, make_classification, make_conditioned_regression,
    make_regression, quantize_dataset,
)
from .optimizers import (
    DivergenceError, OptimizerConfig, RunRecord, run, run_clipping_variant, run_halp,
    run_lm_halp, run_lp_sgd, run_lp_svrg, run_sgd, run_svrg,
)
from .harness import (
    ExperimentSpec, GridSpec, conditioning_sweep, degradation_threshold, comparison_spec,
    grid_search, run_experiment,
)
from .rng import QuantRng
from . import theory


__all__ = [
    "LPRepr", "LPScalar", "LPVector", "add_same_scale", "dot_lp", "mul_scalar", "quantize_scalar",
    "quantize_vector", "to_real", "widen_shift",
    "Dataset", "Objective", "load_csv", "load_idx", "make_classification",
    "make_conditioned_regression", "make_regression", "quantize_dataset",
    "DivergenceError", "OptimizerConfig", "RunRecord", "run", "run_clipping_variant", "run_halp",
    "run_lm_halp", "run_lp_sgd", "run_lp_svrg", "run_sgd", "run_svrg",
    "ExperimentSpec", "GridSpec", "conditioning_sweep", "degradation_threshold", "comparison_spec",
    "grid_search", "run_experiment",
    "QuantRng", "theory", "__version__",
]
