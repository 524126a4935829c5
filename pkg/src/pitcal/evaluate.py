"""Coverage/width metrics, binned and kernel-smoothed conditional summaries,
and principal-component grouping of test points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class PowerIterationError(RuntimeError):
    """Power iteration failed to converge; carries the diagnostics."""

    def __init__(self, iterations, residual, tol):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"power iteration did not reach tol={tol} after {iterations} "
            f"iterations (residual {residual:.3e})"
        )


def coverage_and_width(intervals, responses):
    """(coverage, mean width, width sd) of closed intervals against responses."""
    iv = np.atleast_2d(np.asarray(intervals, dtype=float))
    y = np.asarray(responses, dtype=float).ravel()
    if iv.shape[0] != y.size:
        raise ValueError(f"{iv.shape[0]} intervals vs {y.size} responses")
    if iv.shape[0] == 0:
        raise ValueError("need at least one interval")
    lo, hi = iv[:, 0], iv[:, 1]
    covered = (y >= lo) & (y <= hi)
    widths = hi - lo
    return float(covered.mean()), float(widths.mean()), float(widths.std())


@dataclass(frozen=True)
class BinSpec:
    """Partition of a conditioning variable into half-open bins (lo, hi],
    with the first bin closed on the left."""

    edges: tuple

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges)
        if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("edges must be strictly increasing, length >= 2")
        object.__setattr__(self, "edges", edges)

    @property
    def labels(self):
        return [f"({a:g},{b:g}]" for a, b in zip(self.edges, self.edges[1:])]

    def assign(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.min() < self.edges[0] or values.max() > self.edges[-1]:
            raise ValueError("values fall outside the binning range")
        idx = np.searchsorted(self.edges, values, side="left") - 1
        return np.clip(idx, 0, len(self.edges) - 2)


def binned_metrics(values, intervals, responses, spec: BinSpec):
    """Per-bin coverage/width rows plus a marginal row.

    Empty bins are reported with count 0 and None statistics rather than
    fabricated zeros.
    """
    iv = np.atleast_2d(np.asarray(intervals, dtype=float))
    y = np.asarray(responses, dtype=float).ravel()
    idx = spec.assign(values)
    rows = []
    for b, label in enumerate(spec.labels):
        m = idx == b
        if not m.any():
            rows.append({"bin": label, "count": 0, "coverage": None,
                         "mean_width": None, "width_sd": None})
            continue
        cov, mw, sd = coverage_and_width(iv[m], y[m])
        rows.append({"bin": label, "count": int(m.sum()), "coverage": cov,
                     "mean_width": mw, "width_sd": sd})
    cov, mw, sd = coverage_and_width(iv, y)
    rows.append({"bin": "marginal", "count": int(y.size), "coverage": cov,
                 "mean_width": mw, "width_sd": sd})
    return rows


def silverman_bandwidth(xs) -> float:
    """h = 1.06 * sd * n^(-1/5), the classical normal-reference rule."""
    xs = np.asarray(xs, dtype=float)
    sd = xs.std()
    if sd <= 0:
        raise ValueError("bandwidth undefined for constant conditioning values")
    return 1.06 * sd * xs.size ** (-0.2)


def smooth_conditional(xs, values, grid, bandwidth=None):
    """Gaussian-kernel weighted average of ``values`` evaluated on ``grid``.

    Returns (smoothed curve, metadata). Grid points whose kernel mass
    underflows get a locally widened bandwidth, doubled until mass appears,
    with the event counted in the metadata.
    """
    xs = np.asarray(xs, dtype=float).ravel()
    values = np.asarray(values, dtype=float).ravel()
    grid = np.asarray(grid, dtype=float).ravel()
    if xs.size != values.size:
        raise ValueError("xs and values must have equal length")
    if np.unique(xs).size < 2:
        raise ValueError("need at least two distinct conditioning values")
    h = silverman_bandwidth(xs) if bandwidth is None else float(bandwidth)
    meta = {"bandwidth": h, "widened_points": 0}
    out = np.empty(grid.size)
    for i, g in enumerate(grid):
        hh = h
        while True:
            w = np.exp(-0.5 * ((g - xs) / hh) ** 2)
            mass = w.sum()
            if mass > 0.0:
                break
            hh *= 2.0
            meta["widened_points"] += 1
        out[i] = float(w @ values / mass)
    return out, meta


def power_iteration_top(cov, tol: float = 1e-10, max_iter: int = 10_000,
                        seed: int = 0) -> np.ndarray:
    """Dominant eigenvector of a symmetric PSD matrix, sign-normalized so
    the largest-magnitude component is positive."""
    cov = np.asarray(cov, dtype=float)
    d = cov.shape[0]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    residual = np.inf
    for it in range(1, max_iter + 1):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            # v sits in the nullspace; restart from a fresh direction
            v = rng.standard_normal(d)
            v /= np.linalg.norm(v)
            continue
        w /= norm
        residual = float(np.linalg.norm(w - v * np.sign(v @ w)))
        v = w
        if residual < tol:
            break
    else:
        raise PowerIterationError(max_iter, residual, tol)
    pivot = int(np.argmax(np.abs(v)))
    if v[pivot] < 0:
        v = -v
    return v


def quartile_group_labels(scores) -> np.ndarray:
    """Rank-based quartile labels 1..4 with group sizes differing by <= 1."""
    scores = np.asarray(scores, dtype=float)
    order = np.argsort(scores, kind="stable")
    labels = np.empty(scores.size, dtype=int)
    for g, chunk in enumerate(np.array_split(order, 4), start=1):
        labels[chunk] = g
    return labels


def pc1_groups(train_features, test_features, tol: float = 1e-10,
               max_iter: int = 10_000, seed: int = 0):
    """Project standardized test features on the training data's first
    principal component and split the test set into quartile groups.

    Returns (labels 1..4, projection scores, direction). Constant training
    columns are dropped from both standardization and the projection.
    """
    train = np.atleast_2d(np.asarray(train_features, dtype=float))
    test = np.atleast_2d(np.asarray(test_features, dtype=float))
    if train.shape[0] < 2:
        raise ValueError("need at least two training rows")
    mean = train.mean(axis=0)
    sd = train.std(axis=0)
    keep = np.flatnonzero(sd >= 1e-12)
    if keep.size == 0:
        raise ValueError("all training features are constant")
    z_train = (train[:, keep] - mean[keep]) / sd[keep]
    z_test = (test[:, keep] - mean[keep]) / sd[keep]
    cov = z_train.T @ z_train / z_train.shape[0]
    direction = power_iteration_top(cov, tol=tol, max_iter=max_iter, seed=seed)
    scores = z_test @ direction
    return quartile_group_labels(scores), scores, direction
