"""Dataset container, CSV ingestion, seeded splitting, and feature standardization."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


class CsvParseError(ValueError):
    """Raised when a CSV file cannot be turned into a numeric dataset."""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        loc = ""
        if row is not None:
            loc += f" (row {row}"
            loc += f", column {column!r})" if column is not None else ")"
        super().__init__(message + loc)


@dataclass
class Dataset:
    """Feature matrix plus response vector, the carrier used everywhere.

    Parameters
    ----------
    features : ndarray of shape (n, d)
    responses : ndarray of shape (n,)
    column_names : optional list of the d feature names
    source : free-form provenance tag
    metadata : mutable dict for counters (rejected rows, flags, ...)
    """

    features: np.ndarray
    responses: np.ndarray
    column_names: list[str] | None = None
    source: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        self.responses = np.asarray(self.responses, dtype=float).ravel()
        if self.features.shape[0] != self.responses.shape[0]:
            raise ValueError(
                f"feature rows ({self.features.shape[0]}) != responses "
                f"({self.responses.shape[0]})"
            )
        if self.n == 0 or self.dim == 0:
            raise ValueError("dataset must have at least one row and one feature")
        if not (np.isfinite(self.features).all() and np.isfinite(self.responses).all()):
            raise ValueError("dataset contains non-finite values")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(
            self.features[idx],
            self.responses[idx],
            column_names=self.column_names,
            source=self.source,
            metadata=dict(self.metadata),
        )


@dataclass(frozen=True)
class SplitSpec:
    """Three-way split fractions (train, cal, test) plus shuffle seed."""

    train: float = 0.45
    cal: float = 0.35
    test: float = 0.20
    seed: int = 0

    def __post_init__(self):
        fr = (self.train, self.cal, self.test)
        if any(f <= 0 for f in fr):
            raise ValueError(f"all split fractions must be positive, got {fr}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fr)}")


_MISSING_TOKENS = {"", "na", "nan", "n/a", "null", "none"}


def load_csv(path, response_column) -> Dataset:
    """Load a numeric CSV (header + comma-separated rows) into a Dataset.

    Rows with missing values are dropped (count recorded under
    ``metadata['rejected_rows']``); a non-numeric cell that is not a
    missing-value token is a hard :class:`CsvParseError` carrying the
    offending row and column.
    """
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise CsvParseError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if response_column not in header:
            raise CsvParseError(
                f"{path}: response column {response_column!r} not in header {header}"
            )
        y_pos = header.index(response_column)
        feat_names = [h for i, h in enumerate(header) if i != y_pos]

        rows, responses = [], []
        rejected = 0
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not c.strip() for c in raw):
                continue
            if len(raw) != len(header):
                rejected += 1
                continue
            vals = []
            missing = False
            for pos, cell in enumerate(raw):
                cell = cell.strip()
                if cell.lower() in _MISSING_TOKENS:
                    missing = True
                    break
                try:
                    v = float(cell)
                except ValueError:
                    raise CsvParseError(
                        f"{path}: non-numeric value {cell!r}",
                        row=lineno,
                        column=header[pos],
                    ) from None
                if not np.isfinite(v):
                    missing = True
                    break
                vals.append(v)
            if missing:
                rejected += 1
                continue
            responses.append(vals[y_pos])
            rows.append([v for i, v in enumerate(vals) if i != y_pos])

    if not rows:
        raise CsvParseError(f"{path}: no data rows")
    return Dataset(
        np.array(rows, dtype=float),
        np.array(responses, dtype=float),
        column_names=feat_names,
        source=str(path),
        metadata={"rejected_rows": rejected},
    )


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    """Largest-remainder apportionment of n rows into (train, cal, test).

    Ties in the fractional remainders are resolved train > cal > test.
    """
    fracs = (spec.train, spec.cal, spec.test)
    raw = [f * n for f in fracs]
    sizes = [int(np.floor(r)) for r in raw]
    rem = [r - s for r, s in zip(raw, sizes)]
    short = n - sum(sizes)
    # stable sort keeps train > cal > test priority on equal remainders
    order = sorted(range(3), key=lambda i: -rem[i])
    for i in range(short):
        sizes[order[i]] += 1
    if any(s == 0 for s in sizes):
        raise ValueError(f"split of n={n} with fractions {fracs} leaves an empty part")
    return tuple(sizes)


def split_dataset(data: Dataset, spec: SplitSpec):
    """Seeded shuffle followed by contiguous slicing into (train, cal, test)."""
    n_tr, n_cal, n_te = split_sizes(data.n, spec)
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(data.n)
    tr = data.subset(perm[:n_tr])
    cal = data.subset(perm[n_tr:n_tr + n_cal])
    te = data.subset(perm[n_tr + n_cal:])
    return tr, cal, te


class Standardizer:
    """Per-feature z-scoring with statistics frozen from the fitting set.

    Constant columns get a unit scale and are listed in ``constant_columns``
    so downstream consumers (PCA grouping) can drop them.
    """

    def __init__(self, fit_on: Dataset):
        self.mean = fit_on.features.mean(axis=0)
        sd = fit_on.features.std(axis=0)
        self.constant_columns = np.flatnonzero(sd < 1e-12)
        self.scale = np.where(sd < 1e-12, 1.0, sd)

    def transform(self, data: Dataset) -> Dataset:
        out = data.subset(slice(None))
        out.features = (data.features - self.mean) / self.scale
        if len(self.constant_columns):
            out.metadata["constant_columns"] = self.constant_columns.tolist()
        return out

    def transform_features(self, features: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(features) - self.mean) / self.scale
