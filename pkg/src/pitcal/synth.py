"""Synthetic heteroscedastic regression data and analytic noise helpers.

The generator draws a 5-dimensional covariate with mixed marginals and a
response whose noise blends a heavy-tailed, a Gaussian, and a skewed
component with weights that vary smoothly in the first covariate: heavy
tails near x1 = 0, nearly pure Gaussian at x1 = 0.5, right-skewed near
x1 = 1. An optional location shift delta lets calibration/test draws come
from a shifted distribution while estimators stay fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betaincinv

from .data import Dataset

VAR_T3 = 3.0          # Var of Student-t with 3 dof: 3/(3-2)
VAR_NORMAL = 1.0
VAR_EXP_CENTERED = 1.0


def noise_scale(x1):
    """Scale g(x1) = 0.05 + 1.5 (x1 - 0.5)^2, minimal at the center."""
    x1 = np.asarray(x1, dtype=float)
    return 0.05 + 1.5 * (x1 - 0.5) ** 2


def mixture_weights(x1):
    """Component weights (w_t3, w_normal, w_exp) at x1; nonnegative, sum 1.

    The heavy-tail weight is active left of 0.5, the skewed weight right of
    it, both vanishing quadratically at the center.
    """
    x1 = np.asarray(x1, dtype=float)
    q = 4.0 * (x1 - 0.5) ** 2
    w1 = np.where(x1 < 0.5, q, 0.0)
    w3 = np.where(x1 >= 0.5, q, 0.0)
    w2 = 1.0 - w1 - w3
    return w1, w2, w3


def noise_variance(x1):
    """Exact Var of the noise term at x1 (weighted sum of independent parts)."""
    w1, w2, w3 = mixture_weights(x1)
    g = noise_scale(x1)
    return g * g * (VAR_T3 * w1 ** 2 + VAR_NORMAL * w2 ** 2 + VAR_EXP_CENTERED * w3 ** 2)


def mean_function(features):
    """Noiseless response part: x1^2 + x2*x3 + x3*x4 + x5."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    return x[:, 0] ** 2 + x[:, 1] * x[:, 2] + x[:, 2] * x[:, 3] + x[:, 4]


def _rejection(draw, accept, rng, n):
    out = draw(n)
    bad = ~accept(out)
    while bad.any():
        out[bad] = draw(int(bad.sum()))
        bad = ~accept(out)
    return out


def sample_student_t3(rng, n):
    """t with 3 dof as N(0,1) / sqrt(chi2_3 / 3), chi2_3 from three squared normals."""
    z = rng.standard_normal(n)
    chi2 = (rng.standard_normal((3, n)) ** 2).sum(axis=0)
    return z / np.sqrt(chi2 / 3.0)


def sample_covariates(rng, n):
    """Draw the 5 covariates: U(0,1), N(0,1) truncated to [-3,3],
    Beta(.5,.5), Bernoulli(.5), Poisson(2) resampled above 5."""
    x1 = rng.uniform(size=n)
    x2 = _rejection(lambda m: rng.standard_normal(m),
                    lambda v: np.abs(v) <= 3.0, rng, n)
    x3 = rng.beta(0.5, 0.5, size=n)
    x4 = rng.integers(0, 2, size=n).astype(float)
    x5 = _rejection(lambda m: rng.poisson(2.0, m).astype(float),
                    lambda v: v <= 5.0, rng, n)
    return np.column_stack([x1, x2, x3, x4, x5])


def sample_noise(rng, x1):
    """Weighted sum of independent t3, normal, and centered-exponential draws,
    scaled by g(x1)."""
    x1 = np.asarray(x1, dtype=float)
    n = x1.size
    d1 = sample_student_t3(rng, n)
    d2 = rng.standard_normal(n)
    d3 = rng.exponential(1.0, size=n) - 1.0
    w1, w2, w3 = mixture_weights(x1)
    return noise_scale(x1) * (w1 * d1 + w2 * d2 + w3 * d3)


@dataclass
class DgpDraws:
    """One batch of generator output with the noise decomposition kept."""

    features: np.ndarray     # (n, 5)
    responses: np.ndarray    # (n,)
    noise: np.ndarray        # (n,) the scaled noise term
    mean_part: np.ndarray    # (n,) noiseless response
    delta: float = 0.0

    def to_dataset(self, tag="dgp") -> Dataset:
        return Dataset(self.features, self.responses, source=tag,
                       metadata={"delta": self.delta})


def sample_dgp(n: int, delta: float = 0.0, seed=None, rng=None,
               features=None) -> DgpDraws:
    """Draw n (x, y) pairs; y = mean_function(x) + noise + delta.

    ``features`` short-circuits covariate sampling so a fixed test design can
    be reused across replications.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if rng is None:
        rng = np.random.default_rng(seed)
    x = sample_covariates(rng, n) if features is None else np.atleast_2d(features)
    eps = sample_noise(rng, x[:, 0])
    f = mean_function(x)
    return DgpDraws(x, f + eps + delta, eps, f, delta)


def sample_fixed_x1_design(rng, x1_values):
    """Covariates with x1 pinned to the given values, the rest drawn fresh."""
    x1_values = np.asarray(x1_values, dtype=float)
    x = sample_covariates(rng, x1_values.size)
    x[:, 0] = x1_values
    return x


def sample_beta_pits(n: int, a: float = 3.0, b: float = 1.0, seed=None,
                     rng=None) -> np.ndarray:
    """n i.i.d. Beta(a, b) draws via inverse-CDF sampling of a uniform stream."""
    if a <= 0 or b <= 0:
        raise ValueError("beta parameters must be positive")
    if rng is None:
        rng = np.random.default_rng(seed)
    return betaincinv(a, b, rng.uniform(size=n))
