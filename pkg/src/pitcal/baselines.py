"""Split-conformal baselines on plain regression networks: absolute
residual, variance-rescaled residual, and quantile regression."""

from __future__ import annotations

from typing import Protocol

import numpy as np

from .conformal import Interval, conformal_score_quantile, make_interval
from .data import Dataset
from .nn import GaussianNll, Mlp, MlpConfig, Mse, Pinball, TrainConfig, train

SIGMA_FLOOR = 1e-4


class IntervalPredictor(Protocol):
    """Common surface: calibrate on held-out data, then map x to [lo, hi]."""

    method: str
    alpha: float

    def calibrate(self, cal: Dataset): ...

    def predict(self, x) -> Interval: ...


def _default_train_cfg(seed):
    return TrainConfig(learning_rate=1e-3, batch_size=256, max_epochs=180,
                       patience=10, val_fraction=0.3, seed=seed)


class _NetBackedPredictor:
    def __init__(self, alpha):
        self.alpha = float(alpha)
        self.q_hat: float | None = None
        self.metadata: dict = {}

    def _require_calibrated(self):
        if self.q_hat is None:
            raise RuntimeError(f"{self.method}: calibrate() must run before predict()")

    def predict_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        out = np.empty((len(X), 2))
        for i, x in enumerate(X):
            iv = self.predict(x)
            out[i] = (iv.lo, iv.hi)
        return out


class ResidualPredictor(_NetBackedPredictor):
    """Absolute-residual score on an MSE-trained mean network; the interval
    is the mean prediction plus/minus one global margin (constant width)."""

    method = "residual"

    def __init__(self, mean_net: Mlp, standardize, alpha: float):
        super().__init__(alpha)
        self.mean_net = mean_net
        self._standardize = standardize

    def _mu(self, X) -> np.ndarray:
        # single-precision centers make mu +/- margin exact in float64, so
        # the interval width is bitwise identical across test points
        mu = self.mean_net.forward(self._standardize(X))[:, 0]
        return mu.astype(np.float32).astype(np.float64)

    def calibrate(self, cal: Dataset):
        scores = np.abs(cal.responses - self._mu(cal.features))
        q = conformal_score_quantile(scores, self.alpha)
        self.q_hat = float(np.float32(q)) if np.isfinite(q) else q
        return self

    def predict(self, x) -> Interval:
        self._require_calibrated()
        mu = float(self._mu(np.atleast_2d(x))[0])
        return Interval(mu - self.q_hat, mu + self.q_hat)


class RescaledPredictor(_NetBackedPredictor):
    """Standardized-residual score |y - mu| / sigma from a two-head
    mean/log-variance network trained with the Gaussian likelihood.

    The center and margin share the residual predictor's single-precision
    quantization, so forcing sigma to 1 reproduces its intervals exactly.
    """

    method = "rescaled"

    def __init__(self, meanvar_net: Mlp, standardize, alpha: float):
        super().__init__(alpha)
        self.meanvar_net = meanvar_net
        self._standardize = standardize

    def _mu_sigma(self, X):
        out = self.meanvar_net.forward(self._standardize(X))
        sigma = np.exp(0.5 * out[:, 1])
        floored = sigma < SIGMA_FLOOR
        if floored.any():
            self.metadata["sigma_floored"] = (
                self.metadata.get("sigma_floored", 0) + int(floored.sum()))
        mu = out[:, 0].astype(np.float32).astype(np.float64)
        return mu, np.maximum(sigma, SIGMA_FLOOR)

    def calibrate(self, cal: Dataset):
        mu, sigma = self._mu_sigma(cal.features)
        scores = np.abs(cal.responses - mu) / sigma
        q = conformal_score_quantile(scores, self.alpha)
        self.q_hat = float(np.float32(q)) if np.isfinite(q) else q
        return self

    def predict(self, x) -> Interval:
        self._require_calibrated()
        mu, sigma = self._mu_sigma(np.atleast_2d(x))
        return Interval(float(mu[0] - self.q_hat * sigma[0]),
                        float(mu[0] + self.q_hat * sigma[0]))


class CqrPredictor(_NetBackedPredictor):
    """Two-head quantile network at levels alpha/2 and 1 - alpha/2; the
    score max(lo - y, y - hi) widens (or shrinks) both ends by one margin."""

    method = "cqr"

    def __init__(self, quantile_net: Mlp, standardize, alpha: float):
        super().__init__(alpha)
        self.quantile_net = quantile_net
        self._standardize = standardize

    def _bounds(self, X):
        out = self.quantile_net.forward(self._standardize(X))
        lo, hi = out[:, 0], out[:, 1]
        crossed = lo > hi
        if crossed.any():
            self.metadata["crossed_quantiles"] = (
                self.metadata.get("crossed_quantiles", 0) + int(crossed.sum()))
            lo, hi = np.minimum(lo, hi), np.maximum(lo, hi)
        return lo, hi

    def calibrate(self, cal: Dataset):
        lo, hi = self._bounds(cal.features)
        scores = np.maximum(lo - cal.responses, cal.responses - hi)
        self.q_hat = conformal_score_quantile(scores, self.alpha)
        return self

    def predict(self, x) -> Interval:
        self._require_calibrated()
        lo, hi = self._bounds(np.atleast_2d(x))
        return make_interval(float(lo[0] - self.q_hat), float(hi[0] + self.q_hat))


def _standardizer_fn(train_data: Dataset):
    mean = train_data.features.mean(axis=0)
    scale = train_data.features.std(axis=0)
    scale = np.where(scale < 1e-12, 1.0, scale)
    return lambda X: (np.atleast_2d(X) - mean) / scale


def fit_residual(train_data: Dataset, alpha: float = 0.1, hidden=(32, 32),
                 train_cfg: TrainConfig | None = None, seed: int = 0) -> ResidualPredictor:
    cfg = MlpConfig(input_dim=train_data.dim, hidden_dims=hidden, output_dim=1,
                    seed=seed)
    tc = train_cfg if train_cfg is not None else _default_train_cfg(seed)
    standardize = _standardizer_fn(train_data)
    scaled = Dataset(standardize(train_data.features), train_data.responses)
    net = train(Mlp(cfg), scaled, tc, Mse())
    return ResidualPredictor(net, standardize, alpha)


def fit_rescaled(train_data: Dataset, alpha: float = 0.1, hidden=(32, 32),
                 train_cfg: TrainConfig | None = None, seed: int = 0) -> RescaledPredictor:
    cfg = MlpConfig(input_dim=train_data.dim, hidden_dims=hidden, output_dim=2,
                    seed=seed)
    tc = train_cfg if train_cfg is not None else _default_train_cfg(seed)
    standardize = _standardizer_fn(train_data)
    scaled = Dataset(standardize(train_data.features), train_data.responses)
    net = train(Mlp(cfg), scaled, tc, GaussianNll())
    return RescaledPredictor(net, standardize, alpha)


def fit_cqr(train_data: Dataset, alpha: float = 0.1, hidden=(16, 16),
            train_cfg: TrainConfig | None = None, seed: int = 0) -> CqrPredictor:
    cfg = MlpConfig(input_dim=train_data.dim, hidden_dims=hidden, output_dim=2,
                    seed=seed)
    tc = train_cfg if train_cfg is not None else _default_train_cfg(seed)
    standardize = _standardizer_fn(train_data)
    scaled = Dataset(standardize(train_data.features), train_data.responses)
    net = train(Mlp(cfg), scaled, tc, Pinball([alpha / 2.0, 1.0 - alpha / 2.0]))
    return CqrPredictor(net, standardize, alpha)
