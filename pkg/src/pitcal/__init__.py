"""pitcal: calibrated percentile prediction intervals in PIT space.

The core workflow: fit any conditional-CDF model, compute calibration PIT
values, pick lower/upper PIT cutoffs as order statistics, and invert the
model at the cutoffs to get finite-sample-valid intervals. Symmetric-score
and regression-based conformal baselines share the same predictor surface,
and an experiment harness reproduces the benchmark studies.
"""

__version__ = "0.1.0"

from .baselines import (
    CqrPredictor,
    RescaledPredictor,
    ResidualPredictor,
    fit_cqr,
    fit_rescaled,
    fit_residual,
)
from .cdf import (
    BetaCdfModel,
    CdfModel,
    HazardCdf,
    OracleDgpCdf,
    cdf_eval,
    fit_hazard_cdf,
    oracle_cdf_components,
    quantile_eval,
)
from .conformal import (
    AmortizedZ,
    CalibrationState,
    CpiPredictor,
    DcpPredictor,
    FixedZ,
    GridZ,
    Interval,
    PitCutoffs,
    compute_pits,
    cpi_cutoffs,
    dcp_cutoffs,
    fit_amortized_z,
    optimal_z_grid,
    predict_interval_cpi,
    predict_interval_dcp,
    rank_indices,
)
from .data import Dataset, SplitSpec, Standardizer, load_csv, split_dataset
from .evaluate import (
    BinSpec,
    binned_metrics,
    coverage_and_width,
    pc1_groups,
    smooth_conditional,
)
from .experiments import RunConfig, run
from .nn import Mlp, MlpConfig, TrainConfig, loss_and_grad, train
from .synth import (
    mean_function,
    mixture_weights,
    noise_scale,
    noise_variance,
    sample_beta_pits,
    sample_dgp,
)

__all__ = [name for name in dir() if not name.startswith("_")]
