"""Dense ReLU MLPs with hand-rolled backprop, Adam, and early stopping.

Shared substrate for the hazard CDF network, the amortized starting-point
model, and the residual/rescaled/quantile baselines. Everything is plain
numpy; a trained network is a value object that should not be mutated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NonFiniteLossError(RuntimeError):
    """Loss became NaN/Inf; carries the first offending in-batch index."""

    def __init__(self, batch_index: int):
        self.batch_index = batch_index
        super().__init__(f"non-finite loss at batch index {batch_index}")


class DegenerateTargetsError(ValueError):
    """Targets cannot support the requested loss (e.g. constant responses
    under the Gaussian likelihood, whose variance head diverges)."""


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_dims: tuple[int, ...] = (64, 64)
    output_dim: int = 1
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if not self.hidden_dims or any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden_dims must be a non-empty tuple of positive ints")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 256
    max_epochs: int = 500
    patience: int = 40
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")
        if not 0 < self.patience < self.max_epochs:
            raise ValueError("patience must satisfy 0 < patience < max_epochs")


class Mlp:
    """Fully-connected ReLU network with a linear output layer."""

    def __init__(self, config: MlpConfig, weights=None, biases=None):
        self.config = config
        dims = config.layer_dims
        if weights is None:
            rng = np.random.default_rng(config.seed)
            weights, biases = [], []
            for fan_in, fan_out in zip(dims[:-1], dims[1:]):
                limit = np.sqrt(6.0 / fan_in)
                weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
                biases.append(np.zeros(fan_out))
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            if self.weights[i].shape != (fan_in, fan_out):
                raise ValueError(
                    f"layer {i} weight shape {self.weights[i].shape} != {(fan_in, fan_out)}"
                )

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "Mlp":
        return Mlp(
            self.config,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Batch forward pass: (m, input_dim) -> (m, output_dim)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.config.input_dim:
            raise ValueError(
                f"input has {x.shape[1]} features, network expects "
                f"{self.config.input_dim}"
            )
        out = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out = out @ w + b
            if i < self.n_layers - 1:
                out = np.maximum(out, 0.0)
        return out

    def _forward_cached(self, x: np.ndarray):
        acts = [x]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ w + b
            if i < self.n_layers - 1:
                z = np.maximum(z, 0.0)
            acts.append(z)
        return acts

    def _backward(self, acts, d_out):
        """Gradients for all layers given d(loss)/d(output)."""
        grads_w = [None] * self.n_layers
        grads_b = [None] * self.n_layers
        d = d_out
        for i in reversed(range(self.n_layers)):
            grads_w[i] = acts[i].T @ d
            grads_b[i] = d.sum(axis=0)
            if i > 0:
                d = (d @ self.weights[i].T) * (acts[i] > 0)
        return grads_w, grads_b


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))


def softplus(x):
    return np.logaddexp(0.0, x)


class Mse:
    """Mean squared error over all output entries."""

    def per_sample(self, out, y):
        return ((out - y) ** 2).mean(axis=1)

    def value_and_output_grad(self, out, y):
        diff = out - y
        return float((diff ** 2).mean()), 2.0 * diff / diff.size


class GaussianNll:
    """Negative Gaussian log-likelihood; output columns are (mean, log-variance)."""

    def per_sample(self, out, y):
        mu, logvar = out[:, 0], out[:, 1]
        r = y[:, 0] - mu
        with np.errstate(over="ignore"):  # inf is caught by the caller
            return 0.5 * (np.log(2.0 * np.pi) + logvar + r * r * np.exp(-logvar))

    def value_and_output_grad(self, out, y):
        mu, logvar = out[:, 0], out[:, 1]
        r = y[:, 0] - mu
        n = out.shape[0]
        with np.errstate(over="ignore"):
            inv_var = np.exp(-logvar)
            grad = np.empty_like(out)
            grad[:, 0] = -r * inv_var / n
            grad[:, 1] = 0.5 * (1.0 - r * r * inv_var) / n
        loss = self.per_sample(out, y)
        return float(loss.mean()), grad

    def check_targets(self, y):
        if np.ptp(y) == 0:
            raise DegenerateTargetsError(
                "all responses identical: the Gaussian log-variance head diverges"
            )


class Pinball:
    """Pinball (quantile) loss averaged over samples and levels.

    One output column per level; a single level tau=0.5 reduces to half the
    absolute error.
    """

    def __init__(self, taus):
        self.taus = np.atleast_1d(np.asarray(taus, dtype=float))
        if np.any((self.taus <= 0) | (self.taus >= 1)):
            raise ValueError("pinball levels must lie strictly in (0, 1)")

    def per_sample(self, out, y):
        diff = y - out  # y broadcast against each level column
        return np.maximum(self.taus * diff, (self.taus - 1.0) * diff).mean(axis=1)

    def value_and_output_grad(self, out, y):
        diff = y - out
        grad = np.where(diff > 0, -self.taus, 1.0 - self.taus) / diff.size
        loss = self.per_sample(out, y)
        return float(loss.mean()), grad


class HazardBce:
    """Discrete-hazard log-likelihood on a binned response.

    ``bin_edges`` are the n_bins+1 grid knots; raw responses are binned on
    the fly (cell b covers (edge[b], edge[b+1]], clamped at the ends). For
    an observation in bin k with per-bin hazards h_b = sigmoid(logit_b), the
    per-sample loss is -sum_{b<k} log(1 - h_b) - log(h_k).
    """

    def __init__(self, bin_edges):
        self.bin_edges = np.asarray(bin_edges, dtype=float)
        if self.bin_edges.ndim != 1 or len(self.bin_edges) < 3:
            raise ValueError("bin_edges must hold at least 3 knots")

    def _idx(self, y):
        y = np.asarray(y, dtype=float).ravel()
        idx = np.searchsorted(self.bin_edges, y, side="left") - 1
        return np.clip(idx, 0, len(self.bin_edges) - 2)

    def per_sample(self, out, y):
        k = self._idx(y)
        n, n_bins = out.shape
        before = np.arange(n_bins)[None, :] < k[:, None]
        return (softplus(out) * before).sum(axis=1) + softplus(-out[np.arange(n), k])

    def value_and_output_grad(self, out, y):
        k = self._idx(y)
        n, n_bins = out.shape
        h = sigmoid(out)
        before = np.arange(n_bins)[None, :] < k[:, None]
        grad = np.where(before, h, 0.0)
        grad[np.arange(n), k] = h[np.arange(n), k] - 1.0
        loss = self.per_sample(out, y)
        return float(loss.mean()), grad / n


class ScaledSigmoidMse:
    """MSE applied after a scaled sigmoid: prediction = scale * sigmoid(raw).

    Used to regress targets that must stay inside (0, scale).
    """

    def __init__(self, scale: float):
        if scale <= 0:
            raise ValueError("scale must be positive")
        self.scale = scale

    def per_sample(self, out, y):
        pred = self.scale * sigmoid(out)
        return ((pred - y) ** 2).mean(axis=1)

    def value_and_output_grad(self, out, y):
        s = sigmoid(out)
        pred = self.scale * s
        diff = pred - y
        grad = 2.0 * diff * self.scale * s * (1.0 - s) / diff.size
        return float((diff ** 2).mean()), grad


def loss_and_grad(net: Mlp, batch_x, batch_y, loss):
    """Scalar loss plus per-layer gradients, by reverse-mode accumulation."""
    x = np.atleast_2d(np.asarray(batch_x, dtype=float))
    y = np.atleast_2d(np.asarray(batch_y, dtype=float))
    if y.shape[0] != x.shape[0]:
        y = y.reshape(x.shape[0], -1)
    if x.shape[1] != net.config.input_dim:
        raise ValueError(
            f"batch has {x.shape[1]} features, network expects {net.config.input_dim}"
        )
    acts = net._forward_cached(x)
    value, d_out = loss.value_and_output_grad(acts[-1], y)
    if not np.isfinite(value):
        per = loss.per_sample(acts[-1], y)
        bad = int(np.flatnonzero(~np.isfinite(per))[0]) if (~np.isfinite(per)).any() else 0
        raise NonFiniteLossError(bad)
    grads_w, grads_b = net._backward(acts, d_out)
    return value, (grads_w, grads_b)


class AdamState:
    """First/second-moment accumulators for one parameter list."""

    def __init__(self, params):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        c1 = 1.0 - ADAM_BETA1 ** self.t
        c2 = 1.0 - ADAM_BETA2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def _as_targets(responses, loss, output_dim):
    y = np.asarray(responses, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if isinstance(loss, (Mse,)) and y.shape[1] == 1 and output_dim > 1:
        y = np.repeat(y, output_dim, axis=1)
    return y


def train(net: Mlp, data: Dataset, tc: TrainConfig, loss,
          val_metric=None) -> Mlp:
    """Mini-batch Adam with early stopping on a held-out validation split.

    Returns a new network carrying the weights of the best validation epoch.
    ``val_metric(net, x_val, y_val) -> float`` overrides the default
    validation loss (the training loss on the held-out split).
    """
    if data.n < 2:
        raise ValueError("need at least 2 rows to carve out a validation split")
    if hasattr(loss, "check_targets"):
        loss.check_targets(data.responses)

    y_all = _as_targets(data.responses, loss, net.config.output_dim)
    x_all = data.features

    rng = np.random.default_rng(tc.seed)
    perm = rng.permutation(data.n)
    n_val = max(1, round(tc.val_fraction * data.n))
    if data.n - n_val < 1:
        raise ValueError("validation split leaves no training rows")
    tr_idx, val_idx = perm[:-n_val], perm[-n_val:]
    x_tr, y_tr = x_all[tr_idx], y_all[tr_idx]
    x_val, y_val = x_all[val_idx], y_all[val_idx]

    model = net.copy()
    adam_w = AdamState(model.weights)
    adam_b = AdamState(model.biases)

    best_val = np.inf
    best_snapshot = (model.weights, model.biases)
    stale = 0
    n_tr = len(tr_idx)
    for _ in range(tc.max_epochs):
        order = rng.permutation(n_tr)
        for start in range(0, n_tr, tc.batch_size):
            sel = order[start:start + tc.batch_size]
            _, (gw, gb) = loss_and_grad(model, x_tr[sel], y_tr[sel], loss)
            adam_w.step(model.weights, gw, tc.learning_rate)
            adam_b.step(model.biases, gb, tc.learning_rate)
        if val_metric is not None:
            val = float(val_metric(model, x_val, y_val))
        else:
            per = loss.per_sample(model.forward(x_val), y_val)
            val = float(per.mean())
        if val < best_val:
            best_val = val
            best_snapshot = ([w.copy() for w in model.weights],
                             [b.copy() for b in model.biases])
            stale = 0
        else:
            stale += 1
            if stale >= tc.patience:
                break
    return Mlp(net.config, *best_snapshot)


SNAPSHOT_MAGIC = "pitcal-mlp v1"


def save_weights(net: Mlp, path):
    """Plain-text snapshot: magic line, layer count, then per layer the
    (fan_in, fan_out) dims followed by row-major weights and the bias row."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(SNAPSHOT_MAGIC + "\n")
        fh.write(f"{net.n_layers}\n")
        for w, b in zip(net.weights, net.biases):
            fh.write(f"{w.shape[0]} {w.shape[1]}\n")
            for row in w:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")
            fh.write(" ".join(repr(float(v)) for v in b) + "\n")


def load_weights(path, config: MlpConfig) -> Mlp:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a {SNAPSHOT_MAGIC!r} snapshot")
    n_layers = int(lines[1])
    pos = 2
    weights, biases = [], []
    parse = lambda ln: np.array([float(t) for t in ln.split()])
    for _ in range(n_layers):
        fan_in, fan_out = (int(t) for t in lines[pos].split())
        pos += 1
        rows = [parse(lines[pos + r]) for r in range(fan_in)]
        pos += fan_in
        weights.append(np.vstack(rows).reshape(fan_in, fan_out))
        biases.append(parse(lines[pos]))
        pos += 1
    return Mlp(config, weights, biases)
