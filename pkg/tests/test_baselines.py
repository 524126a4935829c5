import numpy as np
import pytest

from pitcal.baselines import (
    CqrPredictor,
    RescaledPredictor,
    ResidualPredictor,
    fit_cqr,
    fit_rescaled,
    fit_residual,
)
from pitcal.data import Dataset
from pitcal.nn import Mlp, MlpConfig, TrainConfig

FAST = TrainConfig(learning_rate=3e-3, batch_size=64, max_epochs=120,
                   patience=20, val_fraction=0.3, seed=0)

identity = lambda X: np.atleast_2d(X)


def linear_net(weights_col, bias=0.0, out_dim=1, in_dim=2):
    """Hand-built net computing an exact affine map (ReLU kept inactive)."""
    cfg = MlpConfig(input_dim=in_dim, hidden_dims=(in_dim,), output_dim=out_dim)
    net = Mlp(cfg)
    net.weights[0][:] = np.eye(in_dim)
    net.biases[0][:] = 100.0  # keeps hidden units positive on test inputs
    w = np.zeros((in_dim, out_dim))
    w[:, :] = np.asarray(weights_col).reshape(in_dim, out_dim)
    net.weights[1][:] = w
    net.biases[1][:] = np.asarray(bias) - (100.0 * w).sum(axis=0)
    return net


class TestResidual:
    def test_perfect_fit_gives_zero_width(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(0, 1, size=(100, 2))
        net = linear_net([[2.0], [1.0]])
        p = ResidualPredictor(net, identity, alpha=0.1)
        y = p._mu(x)  # responses equal to the model's own predictions
        p.calibrate(Dataset(x, y))
        assert p.q_hat == 0.0
        iv = p.predict_batch(x[:5])
        np.testing.assert_array_equal(iv[:, 0], iv[:, 1])

    def test_width_exactly_constant(self):
        rng = np.random.default_rng(1)
        train = Dataset(rng.normal(size=(400, 2)),
                        rng.normal(size=400) * 2 + 1)
        p = fit_residual(train, alpha=0.1, train_cfg=FAST)
        p.calibrate(Dataset(rng.normal(size=(150, 2)),
                            rng.normal(size=150) * 2 + 1))
        iv = p.predict_batch(rng.normal(size=(300, 2)))
        widths = iv[:, 1] - iv[:, 0]
        assert np.unique(widths).size == 1
        assert widths.std() == 0.0

    def test_requires_calibration(self):
        p = ResidualPredictor(linear_net([[1.0], [0.0]]), identity, 0.1)
        with pytest.raises(RuntimeError, match="calibrate"):
            p.predict(np.zeros(2))


class TestRescaled:
    def test_unit_sigma_reduces_to_residual(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(0, 1, size=(200, 2))
        y = rng.normal(size=200)
        # constant heads: mean 1.5 (exact in single precision), log-var 0
        mean_net = linear_net([[0.0], [0.0]], bias=[1.5])
        mv_net = linear_net(np.zeros((2, 2)), bias=[1.5, 0.0], out_dim=2)
        res = ResidualPredictor(mean_net, identity, 0.1).calibrate(Dataset(x, y))
        rsc = RescaledPredictor(mv_net, identity, 0.1).calibrate(Dataset(x, y))
        xt = rng.uniform(0, 1, size=(20, 2))
        np.testing.assert_array_equal(res.predict_batch(xt),
                                      rsc.predict_batch(xt))

    def test_sigma_floor_applied_and_counted(self):
        mv_net = linear_net(np.zeros((2, 2)), bias=[0.0, -100.0], out_dim=2)
        p = RescaledPredictor(mv_net, identity, 0.1)
        _, sigma = p._mu_sigma(np.zeros((4, 2)))
        assert np.all(sigma == 1e-4)
        assert p.metadata["sigma_floored"] == 4

    def test_homoscedastic_data_keeps_widths_nearly_flat(self):
        rng = np.random.default_rng(3)
        n = 6000  # enough data for a well-fit, nearly flat variance head
        x = rng.uniform(-1, 1, size=(n, 2))
        y = x[:, 0] + 0.5 * rng.standard_normal(n)
        tc = TrainConfig(learning_rate=1e-3, batch_size=256, max_epochs=200,
                         patience=20, val_fraction=0.3, seed=0)
        p = fit_rescaled(Dataset(x, y), alpha=0.1, hidden=(16, 16), train_cfg=tc)
        xc = rng.uniform(-1, 1, size=(300, 2))
        p.calibrate(Dataset(xc, xc[:, 0] + 0.5 * rng.standard_normal(300)))
        iv = p.predict_batch(rng.uniform(-1, 1, size=(400, 2)))
        widths = iv[:, 1] - iv[:, 0]
        assert 1.0 <= widths.max() / widths.min() <= 1.5


class TestCqr:
    def test_oracle_heads_on_uniform_noise(self):
        rng = np.random.default_rng(4)
        # y = 2 x1 + x2 + U(-0.5, 0.5); exact 0.05/0.95 quantile heads
        q_net = linear_net(np.column_stack([[2.0, 1.0], [2.0, 1.0]]),
                           bias=[-0.45, 0.45], out_dim=2)
        p = CqrPredictor(q_net, identity, alpha=0.1)
        x = rng.uniform(0, 1, size=(3000, 2))
        y = 2 * x[:, 0] + x[:, 1] + rng.uniform(-0.5, 0.5, size=3000)
        p.calibrate(Dataset(x, y))
        assert abs(p.q_hat) <= 0.02
        xt = rng.uniform(0, 1, size=(50, 2))
        iv = p.predict_batch(xt)
        truth = 2 * xt[:, 0] + xt[:, 1]
        np.testing.assert_allclose(iv[:, 0], truth - 0.45, atol=0.03)
        np.testing.assert_allclose(iv[:, 1], truth + 0.45, atol=0.03)

    def test_zero_correction_returns_raw_heads(self):
        q_net = linear_net(np.column_stack([[1.0, 0.0], [1.0, 0.0]]),
                           bias=[-0.3, 0.3], out_dim=2)
        p = CqrPredictor(q_net, identity, alpha=0.1)
        p.q_hat = 0.0
        x = np.array([0.2, 0.9])
        iv = p.predict(x)
        assert iv.lo == pytest.approx(0.2 - 0.3)
        assert iv.hi == pytest.approx(0.2 + 0.3)

    def test_crossed_heads_swapped_and_counted(self):
        q_net = linear_net(np.column_stack([[0.0, 0.0], [0.0, 0.0]]),
                           bias=[0.5, -0.5], out_dim=2)
        p = CqrPredictor(q_net, identity, alpha=0.1)
        lo, hi = p._bounds(np.zeros((3, 2)))
        assert np.all(lo <= hi)
        assert p.metadata["crossed_quantiles"] == 3

    def test_interval_contains_heads_when_q_positive(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(size=(500, 2))
        y = x[:, 0] + rng.standard_normal(500)
        p = fit_cqr(Dataset(x, y), alpha=0.1, train_cfg=FAST)
        p.calibrate(Dataset(x[:200], y[:200]))
        if p.q_hat >= 0:
            xt = x[:30]
            lo, hi = p._bounds(xt)
            iv = p.predict_batch(xt)
            assert np.all(iv[:, 0] <= lo + 1e-12)
            assert np.all(iv[:, 1] >= hi - 1e-12)


def test_fitters_are_deterministic():
    rng = np.random.default_rng(6)
    train = Dataset(rng.normal(size=(300, 2)), rng.normal(size=300))
    cal = Dataset(rng.normal(size=(100, 2)), rng.normal(size=100))
    xt = rng.normal(size=(20, 2))
    for fitter in (fit_residual, fit_rescaled, fit_cqr):
        a = fitter(train, alpha=0.1, train_cfg=FAST, seed=9).calibrate(cal)
        b = fitter(train, alpha=0.1, train_cfg=FAST, seed=9).calibrate(cal)
        np.testing.assert_array_equal(a.predict_batch(xt), b.predict_batch(xt))
