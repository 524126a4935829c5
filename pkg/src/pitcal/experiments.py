"""Replication harness behind the CLI: PIT-space benchmark, synthetic
simulation, distribution-shift study, and the real-CSV pipeline.

Every replication derives its own seeds from (master seed, experiment,
replication index, stream name), so runs are reproducible and replications
can execute on a worker pool with a deterministic, order-independent merge.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import betainc

from . import __version__
from .baselines import fit_cqr, fit_rescaled, fit_residual
from .cdf import fit_hazard_cdf
from .conformal import (
    CpiPredictor,
    DcpPredictor,
    FixedZ,
    GridZ,
    cpi_cutoffs,
    dcp_cutoffs,
    fit_amortized_z,
    pit_state_from_values,
)
from .data import Dataset, SplitSpec, load_csv, split_dataset
from .evaluate import BinSpec, binned_metrics, coverage_and_width, pc1_groups, smooth_conditional
from .nn import TrainConfig
from .synth import sample_beta_pits, sample_dgp, sample_fixed_x1_design

ALL_METHODS = ("cpi", "dcp", "residual", "rescaled", "cqr")
X1_BINS = BinSpec(edges=(0.0, 0.2, 0.4, 0.6, 0.8, 1.0))
CURVE_GRID = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    alpha: float = 0.1
    n_tr: int = 2000
    n_cal: int = 300
    n_test: int = 200
    replications: int = 50
    methods: tuple[str, ...] = ALL_METHODS
    z_strategy: str = "grid"          # fixed | grid | amortized
    fixed_z: float | None = None      # defaults to alpha/2 under "fixed"
    deltas: tuple[float, ...] = (0.0, 0.05, 0.1)
    z_values: tuple[float, ...] = (0.05, 0.06, 0.07, 0.08, 0.09, 0.10)
    beta_a: float = 3.0
    beta_b: float = 1.0
    csv_path: str | None = None
    response_column: str | None = None
    partitions: int = 10
    out_dir: str = "runs"
    master_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.experiment not in ("pit-bench", "simulate", "shift", "real"):
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.methods:
            raise ValueError("methods must be non-empty")
        unknown = set(self.methods) - set(ALL_METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}; "
                             f"choose from {ALL_METHODS}")
        if self.z_strategy not in ("fixed", "grid", "amortized"):
            raise ValueError(f"unknown z_strategy {self.z_strategy!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.experiment == "real" and not self.csv_path:
            raise ValueError("experiment 'real' needs csv_path")
        if self.experiment == "real" and not self.response_column:
            raise ValueError("experiment 'real' needs response_column")
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "deltas", tuple(float(d) for d in self.deltas))
        object.__setattr__(self, "z_values", tuple(float(z) for z in self.z_values))


def derive_seed(master_seed: int, experiment: str, replication: int,
                stream: str = "") -> int:
    """Stable 63-bit stream seed from the run coordinates."""
    key = f"{master_seed}:{experiment}:{replication}:{stream}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1


def _run_id(cfg: RunConfig) -> str:
    digest = hashlib.sha256(
        json.dumps(asdict(cfg), sort_keys=True).encode()).hexdigest()[:10]
    return f"{cfg.experiment}-{digest}"


def _write_csv(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v)
                             for v in row])


def _write_outputs(cfg: RunConfig, tables: dict, summary: dict) -> Path:
    out = Path(cfg.out_dir) / _run_id(cfg)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"config": asdict(cfg), "version": __version__, "summary": summary,
               "notes": {"z_objective": "both PIT-space methods resolve the "
                                        "starting point with the same "
                                        "quantile-difference width objective"}}
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for name, (header, rows) in tables.items():
        _write_csv(out / f"{name}.csv", header, rows)
    return out


# ----------------------------------------------------------------------
# pit-bench: PIT-space comparison on a parametric PIT source
# ----------------------------------------------------------------------

def run_pit_bench(cfg: RunConfig) -> Path:
    """Average PIT-interval coverage and length of both constructions over
    seeded replications of Beta(a, b) calibration draws.

    Per-replication coverage is computed exactly as the Beta probability
    mass enclosed by the cutoffs, removing test-sampling noise.
    """
    records = {}  # (z, method) -> (list of coverages, list of lengths)
    for z in cfg.z_values:
        for method in ("cpi", "dcp"):
            records[(z, method)] = ([], [])
    for r in range(cfg.replications):
        seed = derive_seed(cfg.master_seed, cfg.experiment, r, "pits")
        pits = sample_beta_pits(cfg.n_cal, cfg.beta_a, cfg.beta_b, seed=seed)
        state = pit_state_from_values(
            pits, tie_seed=derive_seed(cfg.master_seed, cfg.experiment, r, "ties"))
        for z in cfg.z_values:
            for method, cutter in (("cpi", cpi_cutoffs), ("dcp", dcp_cutoffs)):
                cut = cutter(state, cfg.alpha, z)
                mass = float(betainc(cfg.beta_a, cfg.beta_b, cut.u_hi)
                             - betainc(cfg.beta_a, cfg.beta_b, cut.u_lo))
                covs, lens = records[(z, method)]
                covs.append(mass)
                lens.append(cut.u_hi - cut.u_lo)

    rows = []
    for z in cfg.z_values:
        means = {}
        for method in ("cpi", "dcp"):
            covs, lens = records[(z, method)]
            means[method] = (float(np.mean(covs)), float(np.mean(lens)),
                             float(np.std(lens)))
        reduction = 1.0 - means["cpi"][1] / means["dcp"][1]
        for method in ("cpi", "dcp"):
            cov, mlen, slen = means[method]
            rows.append([z, method, cov, mlen,
                         slen if cfg.replications > 1 else None,
                         reduction if method == "cpi" else None])
    summary = {f"{m}_length_z={z:g}": r[3]
               for z in cfg.z_values for m, r in
               [(row[1], row) for row in rows if row[0] == z]}
    return _write_outputs(
        cfg,
        {"marginal": (["z", "method", "coverage", "mean_length", "sd_length",
                       "cpi_vs_dcp_reduction"], rows)},
        summary,
    )


# ----------------------------------------------------------------------
# shared machinery for the synthetic experiments
# ----------------------------------------------------------------------

def _nn_cde_train_cfg(seed: int) -> TrainConfig:
    return TrainConfig(learning_rate=5e-4, batch_size=256, max_epochs=500,
                       patience=40, val_fraction=0.2, seed=seed)


def _make_strategy(cfg: RunConfig, model, train_data, seed: int):
    if cfg.z_strategy == "fixed":
        z = cfg.alpha / 2.0 if cfg.fixed_z is None else cfg.fixed_z
        return FixedZ(z, cfg.alpha)
    if cfg.z_strategy == "grid":
        return GridZ(cfg.alpha)
    return fit_amortized_z(
        model, train_data, cfg.alpha,
        train_cfg=TrainConfig(learning_rate=1e-3, batch_size=256, max_epochs=180,
                              patience=10, val_fraction=0.3, seed=seed))


def _fit_baselines(cfg: RunConfig, train_data: Dataset, rep: int, real: bool):
    out = {}
    if real:
        tc = lambda s: TrainConfig(learning_rate=1e-3, batch_size=128,
                                   max_epochs=200, patience=20,
                                   val_fraction=0.3, seed=s)
        hidden = {"residual": (32, 32), "rescaled": (48, 48), "cqr": (48, 48)}
    else:
        tc = lambda s: TrainConfig(learning_rate=1e-3, batch_size=256,
                                   max_epochs=180, patience=10,
                                   val_fraction=0.3, seed=s)
        hidden = {"residual": (32, 32), "rescaled": (32, 32), "cqr": (16, 16)}
    fitters = {"residual": fit_residual, "rescaled": fit_rescaled, "cqr": fit_cqr}
    for name, fitter in fitters.items():
        if name in cfg.methods:
            seed = derive_seed(cfg.master_seed, cfg.experiment, rep, name)
            out[name] = fitter(train_data, alpha=cfg.alpha, hidden=hidden[name],
                               train_cfg=tc(seed), seed=seed)
    return out


def _predict_all(predictors: dict, X) -> dict:
    return {name: p.predict_batch(X) for name, p in predictors.items()}


def _simulate_replication(cfg: RunConfig, rep: int, x1_design: np.ndarray):
    rng = np.random.default_rng(derive_seed(cfg.master_seed, cfg.experiment, rep, "data"))
    train_draws = sample_dgp(cfg.n_tr, rng=rng)
    cal = sample_dgp(cfg.n_cal, rng=rng).to_dataset()
    test_x = sample_fixed_x1_design(rng, x1_design)
    test = sample_dgp(cfg.n_test, rng=rng, features=test_x)
    train_data = train_draws.to_dataset()

    predictors = {}
    if "cpi" in cfg.methods or "dcp" in cfg.methods:
        cde_seed = derive_seed(cfg.master_seed, cfg.experiment, rep, "cde")
        model = fit_hazard_cdf(train_data, train_cfg=_nn_cde_train_cfg(cde_seed))
        strategy = _make_strategy(
            cfg, model, train_data,
            derive_seed(cfg.master_seed, cfg.experiment, rep, "zmodel"))
        tie = derive_seed(cfg.master_seed, cfg.experiment, rep, "ties")
        if "cpi" in cfg.methods:
            predictors["cpi"] = CpiPredictor(model, cfg.alpha, strategy, tie_seed=tie)
        if "dcp" in cfg.methods:
            predictors["dcp"] = DcpPredictor(model, cfg.alpha, strategy, tie_seed=tie)
    predictors.update(_fit_baselines(cfg, train_data, rep, real=False))

    for p in predictors.values():
        p.calibrate(cal)
    intervals = _predict_all(predictors, test.features)
    return {
        "rep": rep,
        "x1": test.features[:, 0],
        "y": test.responses,
        "intervals": intervals,
    }


def _aggregate_synthetic(cfg: RunConfig, results: list, with_delta=False):
    """Marginal / binned / pooled-curve tables from per-replication records."""
    method_names = [m for m in ALL_METHODS if m in cfg.methods]
    deltas = sorted({r.get("delta", 0.0) for r in results}) if with_delta else [None]

    marginal_rows, binned_rows, rep_rows = [], [], []
    curves = {}
    for delta in deltas:
        chunk = [r for r in results if not with_delta or r["delta"] == delta]
        per_method = {}
        for m in method_names:
            covs, widths, wsds = [], [], []
            pooled_x, pooled_cov, pooled_w = [], [], []
            bin_acc = {}
            for rec in chunk:
                iv = rec["intervals"][m]
                cov, mw, wsd = coverage_and_width(iv, rec["y"])
                covs.append(cov)
                widths.append(mw)
                wsds.append(wsd)
                rep_rows.append([rec["rep"], delta, m, cov, mw, wsd])
                pooled_x.append(rec["x1"])
                pooled_cov.append(((rec["y"] >= iv[:, 0]) & (rec["y"] <= iv[:, 1]))
                                  .astype(float))
                pooled_w.append(iv[:, 1] - iv[:, 0])
                for row in binned_metrics(rec["x1"], iv, rec["y"], X1_BINS):
                    if row["bin"] == "marginal" or row["count"] == 0:
                        continue
                    acc = bin_acc.setdefault(row["bin"], ([], [], []))
                    acc[0].append(row["coverage"])
                    acc[1].append(row["mean_width"])
                    acc[2].append(row["width_sd"])
            per_method[m] = {
                "coverage": float(np.mean(covs)),
                "coverage_sd": float(np.std(covs)),
                "width": float(np.mean(widths)),
                "width_sd": float(np.mean(wsds)),
            }
            for label in X1_BINS.labels:
                if label in bin_acc:
                    c, w, s = bin_acc[label]
                    per_method[m].setdefault("bins", {})[label] = (
                        float(np.mean(c)), float(np.mean(w)), float(np.mean(s)))
            xs = np.concatenate(pooled_x)
            cov_curve, _ = smooth_conditional(xs, np.concatenate(pooled_cov), CURVE_GRID)
            w_curve, _ = smooth_conditional(xs, np.concatenate(pooled_w), CURVE_GRID)
            curves[(delta, m)] = (cov_curve, w_curve)

        red = {}
        if "cpi" in per_method and "dcp" in per_method:
            red["marginal"] = 1.0 - per_method["cpi"]["width"] / per_method["dcp"]["width"]
            for label in X1_BINS.labels:
                cb = per_method["cpi"].get("bins", {}).get(label)
                db = per_method["dcp"].get("bins", {}).get(label)
                if cb and db and db[1] > 0:
                    red[label] = 1.0 - cb[1] / db[1]
        for m in method_names:
            s = per_method[m]
            marginal_rows.append(
                [delta, m, s["coverage"], s["coverage_sd"], s["width"], s["width_sd"],
                 red.get("marginal") if m == "cpi" else None])
            for label in X1_BINS.labels:
                if label in per_method[m].get("bins", {}):
                    c, w, sd = per_method[m]["bins"][label]
                    binned_rows.append([delta, m, label, c, w, sd,
                                        red.get(label) if m == "cpi" else None])
            c, w, sd = s["coverage"], s["width"], s["width_sd"]
            binned_rows.append([delta, m, "marginal", c, w, sd,
                                red.get("marginal") if m == "cpi" else None])

    curve_rows = []
    for (delta, m), (cov_curve, w_curve) in sorted(
            curves.items(), key=lambda kv: (str(kv[0][0]), kv[0][1])):
        for g, cv, wv in zip(CURVE_GRID, cov_curve, w_curve):
            curve_rows.append([delta, m, float(g), float(cv), float(wv)])

    tables = {
        "marginal": (["delta", "method", "coverage", "coverage_sd",
                      "mean_width", "width_sd", "cpi_vs_dcp_reduction"],
                     marginal_rows),
        "binned": (["delta", "method", "bin", "coverage", "mean_width",
                    "width_sd", "cpi_vs_dcp_reduction"], binned_rows),
        "curves": (["delta", "method", "x1", "smoothed_coverage",
                    "smoothed_width"], curve_rows),
        "replications": (["rep", "delta", "method", "coverage", "mean_width",
                          "width_sd"], rep_rows),
    }
    summary = {
        f"{row[1]}_coverage" + (f"_delta={row[0]:g}" if with_delta else ""): row[2]
        for row in marginal_rows
    }
    summary.update({
        f"{row[1]}_width" + (f"_delta={row[0]:g}" if with_delta else ""): row[4]
        for row in marginal_rows
    })
    return tables, summary


def _map_replications(cfg: RunConfig, worker, reps):
    if cfg.workers == 1:
        return [worker(r) for r in reps]
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(worker, reps))


def run_simulate(cfg: RunConfig) -> Path:
    """Synthetic benchmark: fresh models per replication, evaluated on a
    test design whose x1 values stay fixed across replications."""
    design_rng = np.random.default_rng(
        derive_seed(cfg.master_seed, cfg.experiment, 0, "design"))
    x1_design = design_rng.uniform(size=cfg.n_test)
    worker = _SimulateWorker(cfg, x1_design)
    results = _map_replications(cfg, worker, range(cfg.replications))
    results.sort(key=lambda r: r["rep"])
    tables, summary = _aggregate_synthetic(cfg, results, with_delta=False)
    return _write_outputs(cfg, tables, summary)


class _SimulateWorker:
    """Picklable replication callable for the process pool."""

    def __init__(self, cfg, x1_design):
        self.cfg = cfg
        self.x1_design = x1_design

    def __call__(self, rep):
        return _simulate_replication(self.cfg, rep, self.x1_design)


def _shift_replication(cfg: RunConfig, rep: int, x1_design: np.ndarray):
    rng = np.random.default_rng(derive_seed(cfg.master_seed, cfg.experiment, rep, "data"))
    train_data = sample_dgp(cfg.n_tr, delta=0.0, rng=rng).to_dataset()
    cde_seed = derive_seed(cfg.master_seed, cfg.experiment, rep, "cde")
    model = fit_hazard_cdf(train_data, train_cfg=_nn_cde_train_cfg(cde_seed))
    strategy = _make_strategy(
        cfg, model, train_data,
        derive_seed(cfg.master_seed, cfg.experiment, rep, "zmodel"))
    tie = derive_seed(cfg.master_seed, cfg.experiment, rep, "ties")

    out = []
    for delta in cfg.deltas:
        cal = sample_dgp(cfg.n_cal, delta=delta, rng=rng).to_dataset()
        test_x = sample_fixed_x1_design(rng, x1_design)
        test = sample_dgp(cfg.n_test, delta=delta, rng=rng, features=test_x)
        predictors = {}
        if "cpi" in cfg.methods:
            predictors["cpi"] = CpiPredictor(model, cfg.alpha, strategy, tie_seed=tie)
        if "dcp" in cfg.methods:
            predictors["dcp"] = DcpPredictor(model, cfg.alpha, strategy, tie_seed=tie)
        for p in predictors.values():
            p.calibrate(cal)
        out.append({
            "rep": rep,
            "delta": delta,
            "x1": test.features[:, 0],
            "y": test.responses,
            "intervals": _predict_all(predictors, test.features),
        })
    return out


class _ShiftWorker:
    def __init__(self, cfg, x1_design):
        self.cfg = cfg
        self.x1_design = x1_design

    def __call__(self, rep):
        return _shift_replication(self.cfg, rep, self.x1_design)


def run_shift(cfg: RunConfig) -> Path:
    """Location-shift study: the CDF model is fit once per replication on
    unshifted data, then calibrated and tested at each shift level."""
    if not set(cfg.methods) <= {"cpi", "dcp"}:
        raise ValueError("the shift experiment compares the CDF-based methods "
                         "only (cpi, dcp)")
    design_rng = np.random.default_rng(
        derive_seed(cfg.master_seed, cfg.experiment, 0, "design"))
    x1_design = design_rng.uniform(size=cfg.n_test)
    worker = _ShiftWorker(cfg, x1_design)
    nested = _map_replications(cfg, worker, range(cfg.replications))
    results = [rec for group in nested for rec in group]
    results.sort(key=lambda r: (r["rep"], r["delta"]))
    tables, summary = _aggregate_synthetic(cfg, results, with_delta=True)
    return _write_outputs(cfg, tables, summary)


# ----------------------------------------------------------------------
# real-CSV pipeline
# ----------------------------------------------------------------------

def _real_partition(cfg: RunConfig, data: Dataset, part: int):
    spec = SplitSpec(seed=derive_seed(cfg.master_seed, cfg.experiment, part, "split"))
    train_data, cal, test = split_dataset(data, spec)

    predictors = {}
    if "cpi" in cfg.methods or "dcp" in cfg.methods:
        cde_seed = derive_seed(cfg.master_seed, cfg.experiment, part, "cde")
        model = fit_hazard_cdf(train_data, train_cfg=_nn_cde_train_cfg(cde_seed))
        strategy = _make_strategy(
            cfg, model, train_data,
            derive_seed(cfg.master_seed, cfg.experiment, part, "zmodel"))
        tie = derive_seed(cfg.master_seed, cfg.experiment, part, "ties")
        if "cpi" in cfg.methods:
            predictors["cpi"] = CpiPredictor(model, cfg.alpha, strategy, tie_seed=tie)
        if "dcp" in cfg.methods:
            predictors["dcp"] = DcpPredictor(model, cfg.alpha, strategy, tie_seed=tie)
    predictors.update(_fit_baselines(cfg, train_data, part, real=True))
    for p in predictors.values():
        p.calibrate(cal)

    groups, _, _ = pc1_groups(train_data.features, test.features)
    intervals = _predict_all(predictors, test.features)
    return {"rep": part, "groups": groups, "y": test.responses,
            "intervals": intervals}


class _RealWorker:
    def __init__(self, cfg, data):
        self.cfg = cfg
        self.data = data

    def __call__(self, part):
        return _real_partition(self.cfg, self.data, part)


def run_real(cfg: RunConfig) -> Path:
    """CSV pipeline: repeated 45/35/20 partitions, per-method marginal and
    PC1-quartile-group metrics averaged over the partitions."""
    data = load_csv(cfg.csv_path, cfg.response_column)
    worker = _RealWorker(cfg, data)
    results = _map_replications(cfg, worker, range(cfg.partitions))
    results.sort(key=lambda r: r["rep"])

    method_names = [m for m in ALL_METHODS if m in cfg.methods]
    marginal_rows, group_rows, rep_rows = [], [], []
    for m in method_names:
        covs, widths, wsds = [], [], []
        group_acc = {g: ([], []) for g in (1, 2, 3, 4)}
        for rec in results:
            iv = rec["intervals"][m]
            cov, mw, wsd = coverage_and_width(iv, rec["y"])
            covs.append(cov)
            widths.append(mw)
            wsds.append(wsd)
            rep_rows.append([rec["rep"], m, cov, mw, wsd])
            for g in (1, 2, 3, 4):
                sel = rec["groups"] == g
                if sel.any():
                    gcov, gw, _ = coverage_and_width(iv[sel], rec["y"][sel])
                    group_acc[g][0].append(gcov)
                    group_acc[g][1].append(gw)
        marginal_rows.append([m, float(np.mean(covs)), float(np.std(covs)),
                              float(np.mean(widths)), float(np.mean(wsds))])
        for g in (1, 2, 3, 4):
            gc, gw = group_acc[g]
            if gc:
                group_rows.append([m, g, float(np.mean(gc)), float(np.mean(gw))])

    tables = {
        "marginal": (["method", "coverage", "coverage_sd", "mean_width",
                      "width_sd"], marginal_rows),
        "binned": (["method", "pc1_group", "coverage", "mean_width"], group_rows),
        "replications": (["partition", "method", "coverage", "mean_width",
                          "width_sd"], rep_rows),
    }
    summary = {f"{row[0]}_coverage": row[1] for row in marginal_rows}
    summary.update({f"{row[0]}_width": row[3] for row in marginal_rows})
    return _write_outputs(cfg, tables, summary)


RUNNERS = {
    "pit-bench": run_pit_bench,
    "simulate": run_simulate,
    "shift": run_shift,
    "real": run_real,
}


def run(cfg: RunConfig) -> Path:
    return RUNNERS[cfg.experiment](cfg)
