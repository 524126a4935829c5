"""Percentile-interval calibration in PIT space.

A fitted conditional-CDF model turns calibration responses into PIT values.
Lower and upper PIT cutoffs are then selected as order statistics of those
values (independently, so the interval can sit asymmetrically wherever the
PIT mass is), and mapped back through the conditional quantile function.
The symmetric-score construction around a fixed center is provided as a
baseline under the same interface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cdf import CdfModel, CDF_CLIP, quantile_eval
from .data import Dataset
from .nn import Mlp, MlpConfig, ScaledSigmoidMse, TrainConfig, sigmoid, train

TIE_JITTER = 1e-10
INTERVAL_SWAP_TOL = 1e-8


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if self.hi < self.lo:
            raise ValueError(f"inverted interval [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, y: float) -> bool:
        return self.lo <= y <= self.hi


def make_interval(lo: float, hi: float, tol: float = INTERVAL_SWAP_TOL) -> Interval:
    """Build an interval, tolerating inversion-noise flips up to ``tol``."""
    if hi < lo:
        if lo - hi <= tol:
            lo, hi = hi, lo
        else:
            raise ValueError(f"interval endpoints inverted beyond tolerance: "
                             f"lo={lo}, hi={hi}")
    return Interval(lo, hi)


@dataclass(frozen=True)
class CalibrationState:
    """Sorted calibration PIT values with the tie-breaking seed on record."""

    sorted_pits: np.ndarray
    tie_seed: int = 0

    def __post_init__(self):
        pits = np.asarray(self.sorted_pits, dtype=float)
        if pits.ndim != 1 or pits.size < 1:
            raise ValueError("need at least one calibration PIT value")
        if np.any(np.diff(pits) < 0):
            raise ValueError("PIT values must be sorted")
        if pits.min() < 0.0 or pits.max() > 1.0:
            raise ValueError("PIT values must lie in [0, 1]")
        object.__setattr__(self, "sorted_pits", pits)

    @property
    def n(self) -> int:
        return self.sorted_pits.size


def compute_pits(model: CdfModel, cal: Dataset, tie_seed: int = 0) -> CalibrationState:
    """PIT values of the calibration pairs, jittered for ties and sorted.

    The jitter is uniform on [0, TIE_JITTER] from a seeded generator: far too
    small to move non-tied values past each other, but enough to randomize
    the order of exact ties reproducibly.
    """
    pits = np.asarray(model.cdf_values(cal.responses, cal.features), dtype=float)
    pits = np.clip(pits, CDF_CLIP, 1.0 - CDF_CLIP)
    rng = np.random.default_rng(tie_seed)
    pits = np.clip(pits + rng.uniform(0.0, TIE_JITTER, size=pits.size), 0.0, 1.0)
    return CalibrationState(np.sort(pits), tie_seed=tie_seed)


def pit_state_from_values(values, tie_seed: int = 0) -> CalibrationState:
    """Calibration state from raw PIT draws (for PIT-space benchmarks)."""
    vals = np.clip(np.asarray(values, dtype=float), 0.0, 1.0)
    rng = np.random.default_rng(tie_seed)
    vals = np.clip(vals + rng.uniform(0.0, TIE_JITTER, size=vals.size), 0.0, 1.0)
    return CalibrationState(np.sort(vals), tie_seed=tie_seed)


def _check_alpha_z(alpha: float, z: float):
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if z < -1e-12 or z > alpha + 1e-12:
        raise ValueError(f"starting point z={z} outside [0, alpha={alpha}]")


def rank_indices(n: int, alpha: float, z: float) -> tuple[int, int]:
    """Calibration ranks (L, H) of the lower and upper PIT cutoffs.

    L = max(1, floor(z (n+1))) and H = ceil((z + 1 - alpha)(n+1)), so the
    enclosed rank mass satisfies H - L + 1 >= (1 - alpha)(n+1) for every z.
    H is clamped to n; callers that need the out-of-range convention
    (rank n+1 meaning the upper support edge) use :func:`raw_rank_indices`.
    """
    L, H = raw_rank_indices(n, alpha, z)
    return L, min(H, n)


def raw_rank_indices(n: int, alpha: float, z: float) -> tuple[int, int]:
    if n < 1:
        raise ValueError("n must be >= 1")
    _check_alpha_z(alpha, z)
    L = max(1, math.floor(z * (n + 1)))
    H = math.ceil((z + 1.0 - alpha) * (n + 1))
    return L, H


@dataclass(frozen=True)
class PitCutoffs:
    """PIT-space interval endpoints; ranks are kept when order statistics
    were selected directly (None for the symmetric-score construction)."""

    u_lo: float
    u_hi: float
    lo_rank: int | None = None
    hi_rank: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.u_lo <= self.u_hi <= 1.0:
            raise ValueError(f"invalid cutoffs ({self.u_lo}, {self.u_hi})")


def cpi_cutoffs(state: CalibrationState, alpha: float, z: float) -> PitCutoffs:
    """Independent order-statistic cutoffs at ranks (L, H).

    A raw H beyond n maps to u_hi = 1 (the upper support edge); symmetric
    convention of u_lo = 0 for a raw L below 1, which the clamped L makes
    unreachable in practice.
    """
    n = state.n
    L, H = raw_rank_indices(n, alpha, z)
    u = state.sorted_pits
    u_lo = 0.0 if L < 1 else float(u[min(L, n) - 1])
    u_hi = 1.0 if H > n else float(u[H - 1])
    return PitCutoffs(u_lo, u_hi, lo_rank=max(L, 1), hi_rank=min(H, n))


def conformal_score_quantile(scores, alpha: float) -> float:
    """Finite-sample score quantile: the ceil((1-alpha)(n+1))-th smallest
    score, +inf when that rank exceeds n."""
    scores = np.sort(np.asarray(scores, dtype=float))
    n = scores.size
    k = math.ceil((1.0 - alpha) * (n + 1))
    if k > n:
        return float("inf")
    return float(scores[k - 1])


def dcp_cutoffs(state: CalibrationState, alpha: float, z: float) -> PitCutoffs:
    """Symmetric cutoffs around c = z + (1-alpha)/2 from the score |U - c|."""
    _check_alpha_z(alpha, z)
    c = z + (1.0 - alpha) / 2.0
    q_hat = conformal_score_quantile(np.abs(state.sorted_pits - c), alpha)
    return PitCutoffs(max(0.0, c - q_hat), min(1.0, c + q_hat))


def optimal_z_grid(model: CdfModel, x, alpha: float, grid_points: int = 41) -> float:
    """Starting point minimizing the estimated quantile-difference width
    over an even grid on (1e-6, alpha - 1e-6); ties go to the smallest z."""
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")
    zs = np.linspace(1e-6, alpha - 1e-6, grid_points)
    q = model.quantile_curve(np.concatenate([zs, zs + 1.0 - alpha]), x)
    widths = q[grid_points:] - q[:grid_points]
    return float(zs[int(np.argmin(widths))])


class FixedZ:
    """Constant starting point, z in [0, alpha]."""

    def __init__(self, z: float, alpha: float):
        _check_alpha_z(alpha, z)
        self.z = float(z)
        self.alpha = float(alpha)

    def resolve(self, model: CdfModel, x) -> float:
        return self.z


class GridZ:
    """Per-test-point grid search for the width-minimizing starting point."""

    def __init__(self, alpha: float, grid_points: int = 41):
        self.alpha = float(alpha)
        self.grid_points = int(grid_points)

    def resolve(self, model: CdfModel, x) -> float:
        return optimal_z_grid(model, x, self.alpha, self.grid_points)


class AmortizedZ:
    """Starting point from a trained regressor, squashed into (0, alpha)."""

    def __init__(self, net: Mlp, alpha: float, feature_mean, feature_scale):
        self.net = net
        self.alpha = float(alpha)
        self.feature_mean = np.asarray(feature_mean, dtype=float)
        self.feature_scale = np.asarray(feature_scale, dtype=float)

    def _z_batch(self, X) -> np.ndarray:
        X = (np.atleast_2d(X) - self.feature_mean) / self.feature_scale
        raw = self.net.forward(X)[:, 0]
        return self.alpha * sigmoid(raw)

    def resolve(self, model: CdfModel, x) -> float:
        return float(self._z_batch(np.asarray(x, dtype=float)[None, :])[0])


def fit_amortized_z(model: CdfModel, train_data: Dataset, alpha: float,
                    mlp_cfg: MlpConfig | None = None,
                    train_cfg: TrainConfig | None = None,
                    grid_points: int = 41) -> AmortizedZ:
    """Regress the per-point grid-optimal starting points on the training
    covariates; the squashed output keeps predictions strictly inside
    (0, alpha)."""
    targets = np.array([
        optimal_z_grid(model, x, alpha, grid_points) for x in train_data.features
    ])
    if mlp_cfg is None:
        mlp_cfg = MlpConfig(input_dim=train_data.dim, hidden_dims=(32, 32),
                            output_dim=1)
    if train_cfg is None:
        train_cfg = TrainConfig(learning_rate=1e-3, batch_size=256,
                                max_epochs=180, patience=10, val_fraction=0.3)
    mean = train_data.features.mean(axis=0)
    scale = train_data.features.std(axis=0)
    scale = np.where(scale < 1e-12, 1.0, scale)
    standardized = Dataset((train_data.features - mean) / scale, targets)
    net = train(Mlp(mlp_cfg), standardized, train_cfg, ScaledSigmoidMse(alpha))
    return AmortizedZ(net, alpha, mean, scale)


def predict_interval_cpi(model: CdfModel, state: CalibrationState, strategy,
                         alpha: float, x) -> Interval:
    """Map the order-statistic PIT cutoffs back through the quantile function."""
    z = strategy.resolve(model, x)
    cut = cpi_cutoffs(state, alpha, z)
    lo = quantile_eval(model, cut.u_lo, x)
    hi = quantile_eval(model, cut.u_hi, x)
    return make_interval(lo, hi)


def predict_interval_dcp(model: CdfModel, state: CalibrationState, strategy,
                         alpha: float, x) -> Interval:
    """As :func:`predict_interval_cpi` but with symmetric-score cutoffs."""
    z = strategy.resolve(model, x)
    cut = dcp_cutoffs(state, alpha, z)
    lo = quantile_eval(model, cut.u_lo, x)
    hi = quantile_eval(model, cut.u_hi, x)
    return make_interval(lo, hi)


class _PitIntervalPredictor:
    """Shared calibrate/predict surface over a fitted CDF model."""

    method = ""
    _cutoffs = None

    def __init__(self, model: CdfModel, alpha: float, strategy=None,
                 tie_seed: int = 0):
        self.model = model
        self.alpha = float(alpha)
        self.strategy = strategy if strategy is not None else FixedZ(alpha / 2.0, alpha)
        self.tie_seed = tie_seed
        self.state: CalibrationState | None = None
        self.metadata: dict = {}

    def calibrate(self, cal: Dataset):
        self.state = compute_pits(self.model, cal, tie_seed=self.tie_seed)
        return self

    def _require_state(self):
        if self.state is None:
            raise RuntimeError(f"{self.method}: calibrate() must run before predict()")

    def predict(self, x) -> Interval:
        self._require_state()
        z = self.strategy.resolve(self.model, x)
        cut = type(self)._cutoffs(self.state, self.alpha, z)
        lo = quantile_eval(self.model, cut.u_lo, x)
        hi = quantile_eval(self.model, cut.u_hi, x)
        if hi < lo and lo - hi <= INTERVAL_SWAP_TOL:
            self.metadata["swapped_intervals"] = (
                self.metadata.get("swapped_intervals", 0) + 1)
        return make_interval(lo, hi)

    def predict_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        out = np.empty((len(X), 2))
        for i, x in enumerate(X):
            iv = self.predict(x)
            out[i] = (iv.lo, iv.hi)
        return out


class CpiPredictor(_PitIntervalPredictor):
    method = "cpi"
    _cutoffs = staticmethod(cpi_cutoffs)


class DcpPredictor(_PitIntervalPredictor):
    method = "dcp"
    _cutoffs = staticmethod(dcp_cutoffs)
