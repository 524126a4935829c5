"""Acceptance suite: every criterion at its stated tolerance, one printed
pass/fail line each. The heavy experiment criteria drive the same runners
the command-line tool uses."""

import csv
import math
import os
import time

import numpy as np
import pytest

from pitcal.cdf import BetaCdfModel, OracleDgpCdf, fit_hazard_cdf
from pitcal.conformal import (
    CalibrationState,
    FixedZ,
    GridZ,
    compute_pits,
    cpi_cutoffs,
    fit_amortized_z,
    predict_interval_cpi,
    predict_interval_dcp,
    raw_rank_indices,
)
from pitcal.data import Dataset
from pitcal.evaluate import power_iteration_top
from pitcal.experiments import RunConfig, run
from pitcal.nn import (
    GaussianNll,
    HazardBce,
    Mlp,
    MlpConfig,
    Mse,
    Pinball,
    ScaledSigmoidMse,
    TrainConfig,
    loss_and_grad,
)
from pitcal.synth import mixture_weights, sample_dgp

WORKERS = min(2, os.cpu_count() or 1)


def report(criterion, ok, detail):
    print(f"[acceptance] criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {criterion}: {detail}"


def load_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_criterion_1_pit_bench_table(tmp_path):
    t0 = time.time()
    cfg = RunConfig(experiment="pit-bench", alpha=0.1, n_cal=200,
                    replications=5000, z_values=(0.05, 0.10),
                    out_dir=str(tmp_path), master_seed=0)
    rows = load_rows(run(cfg) / "marginal.csv")
    got = {(float(r["z"]), r["method"]): r for r in rows}
    anchors = {(0.05, "cpi"): 0.618, (0.10, "cpi"): 0.536,
               (0.05, "dcp"): 0.931, (0.10, "dcp"): 0.833}
    checks = []
    for key, target in anchors.items():
        length = float(got[key]["mean_length"])
        cov = float(got[key]["coverage"])
        checks.append((f"len{key}={length:.4f}", abs(length - target) <= 0.01))
        checks.append((f"cov{key}={cov:.4f}", 0.885 <= cov <= 0.905))
    for z in (0.05, 0.10):
        red = float(got[(z, "cpi")]["cpi_vs_dcp_reduction"])
        checks.append((f"red(z={z})={red:.3f}", 0.32 <= red <= 0.38))
    ok = all(c[1] for c in checks)
    fails = [c[0] for c in checks if not c[1]]
    report(1, ok, f"{'all anchors in tolerance' if ok else fails}; "
                  f"runtime {time.time() - t0:.0f}s")


def test_criterion_2_marginal_coverage_any_model():
    t0 = time.time()
    reps, n_cal, alpha = 10_000, 200, 0.1
    model = BetaCdfModel(1.0 / 3.0, 1.0, feature_dim=2)  # wrong on purpose:
    # uniform responses become Beta(3,1)-shaped PITs through this CDF
    rng = np.random.default_rng(2024)
    train = Dataset(rng.normal(size=(500, 2)), rng.uniform(size=500))
    amortized = fit_amortized_z(
        model, train, alpha,
        mlp_cfg=MlpConfig(2, (16,), 1, seed=0),
        train_cfg=TrainConfig(learning_rate=1e-2, batch_size=128, max_epochs=60,
                              patience=10, val_fraction=0.3, seed=0))
    strategies = {"fixed": FixedZ(alpha / 2, alpha), "grid": GridZ(alpha),
                  "amortized": amortized}
    hits = {name: 0 for name in strategies}
    hits["dcp"] = 0
    for rep in range(reps):
        y = rng.uniform(size=n_cal + 1)
        x = np.zeros((n_cal + 1, 2))
        state = compute_pits(model, Dataset(x[:n_cal], y[:n_cal]), tie_seed=rep)
        x_test, y_test = x[n_cal], y[n_cal]
        for name, strat in strategies.items():
            iv = predict_interval_cpi(model, state, strat, alpha, x_test)
            hits[name] += iv.contains(y_test)
        iv = predict_interval_dcp(model, state, strategies["fixed"], alpha, x_test)
        hits["dcp"] += iv.contains(y_test)
    bound = 1 - alpha - 3 * math.sqrt(alpha * (1 - alpha) / reps)
    coverages = {k: v / reps for k, v in hits.items()}
    ok = all(c >= bound for c in coverages.values())
    report(2, ok, f"coverages {dict((k, round(v, 4)) for k, v in coverages.items())} "
                  f">= {bound:.4f}; runtime {time.time() - t0:.0f}s")


def test_criterion_3_oracle_pit_uniformity():
    from scipy import stats

    t0 = time.time()
    model = OracleDgpCdf()
    passes = 0
    for rep in range(100):
        draws = sample_dgp(2000, seed=30_000 + rep)
        pits = model.cdf_values(draws.responses, draws.features)
        passes += stats.kstest(pits, "uniform").pvalue > 0.01
    ok = passes >= 95
    report(3, ok, f"{passes}/100 replications pass the 1% KS test; "
                  f"runtime {time.time() - t0:.0f}s")


def test_criterion_4_simulate_table(tmp_path):
    t0 = time.time()
    cfg = RunConfig(experiment="simulate", alpha=0.1, n_tr=2000, n_cal=300,
                    n_test=200, replications=50, workers=WORKERS,
                    out_dir=str(tmp_path), master_seed=0)
    rows = load_rows(run(cfg) / "marginal.csv")
    stats_by_method = {r["method"]: r for r in rows}
    checks = []
    for m, r in stats_by_method.items():
        cov = float(r["coverage"])
        checks.append((f"{m} cov={cov:.3f}", 0.87 <= cov <= 0.94))
    w_cpi = float(stats_by_method["cpi"]["mean_width"])
    w_dcp = float(stats_by_method["dcp"]["mean_width"])
    checks.append((f"cpi width {w_cpi:.3f} <= dcp width {w_dcp:.3f}",
                   w_cpi <= w_dcp))
    res_sd = float(stats_by_method["residual"]["width_sd"])
    checks.append((f"residual width sd {res_sd!r} == 0", res_sd == 0.0))
    ok = all(c[1] for c in checks)
    fails = [c[0] for c in checks if not c[1]]
    widths = {m: round(float(r["mean_width"]), 3)
              for m, r in stats_by_method.items()}
    report(4, ok, f"{'windows hold' if ok else fails}; widths {widths}; "
                  f"runtime {time.time() - t0:.0f}s")


def test_criterion_5_shift_table(tmp_path):
    t0 = time.time()
    cfg = RunConfig(experiment="shift", alpha=0.1, n_tr=2000, n_cal=300,
                    n_test=200, replications=50, deltas=(0.1,),
                    methods=("cpi", "dcp"), workers=WORKERS,
                    out_dir=str(tmp_path), master_seed=0)
    out = run(cfg)
    marginal = {r["method"]: r for r in load_rows(out / "marginal.csv")}
    binned = load_rows(out / "binned.csv")
    checks = []
    for m in ("cpi", "dcp"):
        cov = float(marginal[m]["coverage"])
        checks.append((f"{m} cov={cov:.3f}", 0.87 <= cov <= 0.94))
    w_cpi = float(marginal["cpi"]["mean_width"])
    w_dcp = float(marginal["dcp"]["mean_width"])
    checks.append((f"cpi width {w_cpi:.3f} < 50% of dcp {w_dcp:.3f}",
                   w_cpi < 0.5 * w_dcp))
    top_bin = {r["method"]: float(r["width_sd"]) for r in binned
               if r["bin"] == "(0.8,1]"}
    checks.append((f"top-bin width sd cpi {top_bin['cpi']:.3f} < "
                   f"dcp {top_bin['dcp']:.3f}",
                   top_bin["cpi"] < top_bin["dcp"]))
    ok = all(c[1] for c in checks)
    fails = [c[0] for c in checks if not c[1]]
    report(5, ok, f"{'windows hold' if ok else fails}; "
                  f"runtime {time.time() - t0:.0f}s")


class TestCriterion6NumericalProperties:
    """No experiment runs: gradients, inversion, order statistics, ranks,
    principal direction, and mixture weights, each against its oracle."""

    def test_gradients_match_finite_differences_all_losses(self):
        edges = np.linspace(-1, 1, 6)
        losses = [
            (Mse(), 1, lambda r: r.normal(size=(5, 1))),
            (GaussianNll(), 2, lambda r: r.normal(size=(5, 1))),
            (Pinball([0.05, 0.95]), 2, lambda r: r.normal(size=(5, 1))),
            (HazardBce(edges), 5, lambda r: r.uniform(-0.9, 0.9, size=(5, 1))),
            (ScaledSigmoidMse(0.1), 1, lambda r: r.uniform(0.01, 0.09, size=(5, 1))),
        ]
        worst = 0.0
        for loss, out_dim, draw in losses:
            rng = np.random.default_rng(5)
            net = Mlp(MlpConfig(3, (4, 3), out_dim, seed=17))
            x = rng.normal(size=(5, 3))
            y = draw(rng)
            _, (gw, gb) = loss_and_grad(net, x, y, loss)
            step = 1e-5
            for params, grads in ((net.weights, gw), (net.biases, gb)):
                for p, g in zip(params, grads):
                    flat, gf = p.ravel(), g.ravel()
                    for i in range(flat.size):
                        orig = flat[i]
                        flat[i] = orig + step
                        up, _ = loss_and_grad(net, x, y, loss)
                        flat[i] = orig - step
                        down, _ = loss_and_grad(net, x, y, loss)
                        flat[i] = orig
                        fd = (up - down) / (2 * step)
                        rel = abs(gf[i] - fd) / max(abs(fd), 1e-6)
                        worst = max(worst, rel)
        report("6a", worst <= 1e-4,
               f"max gradient relative error {worst:.2e} <= 1e-4")

    def test_quantile_inversion_round_trip(self):
        data = sample_dgp(1200, seed=61).to_dataset()
        model = fit_hazard_cdf(data, train_cfg=TrainConfig(
            learning_rate=2e-3, batch_size=128, max_epochs=60, patience=15,
            seed=61))
        xs = sample_dgp(100, seed=62).features
        us = np.linspace(0.01, 0.99, 99)
        worst_excess = -np.inf
        for x in xs:
            knot_cdf = model.cdf_knots(x)
            cell_inc = np.diff(knot_cdf)
            top_gap = 1.0 - knot_cdf[-1]
            q = model.quantile_curve(us, x)
            back = model.cdf_values(q, np.tile(x, (99, 1)))
            cell = np.clip(np.searchsorted(model.grid, q, side="left") - 1,
                           0, len(cell_inc) - 1)
            tol = np.maximum(cell_inc[cell], top_gap) + 1e-9
            worst_excess = max(worst_excess,
                               float(np.max(np.abs(back - us) - tol)))
        report("6b", worst_excess <= 0.0,
               f"round-trip error within grid tolerance on 99x100 sweep "
               f"(worst excess {worst_excess:.2e})")

    def test_cutoffs_match_brute_force_order_statistics(self):
        rng = np.random.default_rng(63)
        bad = 0
        for _ in range(1000):
            n = int(rng.integers(1, 400))
            alpha = float(rng.uniform(0.02, 0.5))
            z = float(rng.uniform(0.0, alpha))
            pits = np.sort(rng.uniform(size=n))
            cut = cpi_cutoffs(CalibrationState(pits), alpha, z)
            L = max(1, math.floor(z * (n + 1)))
            H = math.ceil((z + 1 - alpha) * (n + 1))
            lo = pits[L - 1]
            hi = 1.0 if H > n else pits[H - 1]
            bad += not (cut.u_lo == lo and cut.u_hi == hi)
        report("6c", bad == 0, f"{1000 - bad}/1000 brute-force matches")

    def test_rank_coverage_mass_condition(self):
        rng = np.random.default_rng(64)
        bad = 0
        for _ in range(5000):
            n = int(rng.integers(1, 1000))
            alpha = float(rng.uniform(0.01, 0.5))
            z = float(rng.uniform(0.0, alpha))
            L, H = raw_rank_indices(n, alpha, z)
            bad += (H - L + 1) < (1 - alpha) * (n + 1) - 1e-9
        report("6d", bad == 0, f"mass condition holds on {5000 - bad}/5000 draws")

    def test_pc1_against_dense_eigensolver(self):
        rng = np.random.default_rng(65)
        worst = 1.0
        for _ in range(200):
            m = rng.normal(size=(5, 5))
            cov = m @ m.T + 1e-9 * np.eye(5)
            v = power_iteration_top(cov, seed=1)
            w, vecs = np.linalg.eigh(cov)
            worst = min(worst, abs(v @ vecs[:, np.argmax(w)]))
        report("6e", worst > 0.999,
               f"min |cosine| vs dense eigensolver {worst:.6f} > 0.999")

    def test_mixture_weight_simplex_sweep(self):
        x1 = np.linspace(0.0, 1.0, 1001)
        w1, w2, w3 = mixture_weights(x1)
        ok = (np.allclose(w1 + w2 + w3, 1.0, atol=1e-12)
              and min(w1.min(), w2.min(), w3.min()) >= 0.0)
        report("6f", ok, "weights nonnegative and sum to 1 on 1001-point sweep")


def test_criterion_7_real_pipeline_on_synthetic_csv(tmp_path):
    t0 = time.time()
    draws = sample_dgp(2500, seed=7)
    path = tmp_path / "dgp.csv"
    lines = ["x1,x2,x3,x4,x5,y"]
    for row, y in zip(draws.features, draws.responses):
        lines.append(",".join(repr(float(v)) for v in (*row, y)))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    cfg = RunConfig(experiment="real", csv_path=str(path), response_column="y",
                    partitions=10, workers=WORKERS, out_dir=str(tmp_path),
                    master_seed=0)
    out = run(cfg)
    marginal = {r["method"]: r for r in load_rows(out / "marginal.csv")}
    group_width = {(r["method"], int(r["pc1_group"])): float(r["mean_width"])
                   for r in load_rows(out / "binned.csv")}
    checks = []
    for m, r in marginal.items():
        cov = float(r["coverage"])
        checks.append((f"{m} cov={cov:.3f}", 0.87 <= cov <= 0.94))
    for other in ("dcp", "residual", "rescaled", "cqr"):
        wins = sum(group_width[("cpi", g)] <= group_width[(other, g)]
                   for g in (1, 2, 3, 4))
        checks.append((f"cpi narrower than {other} in {wins}/4 groups", wins >= 3))
    ok = all(c[1] for c in checks)
    fails = [c[0] for c in checks if not c[1]]
    report(7, ok, f"{'windows hold' if ok else fails}; "
                  f"runtime {time.time() - t0:.0f}s")
