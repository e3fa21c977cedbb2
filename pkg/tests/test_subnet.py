import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from subnet_init import nnet, subnet
from subnet_init.data import Dataset, default_wh_config, generate_white_gaussian, simulate_wh
from subnet_init.errors import (ConfigurationError, DimensionError, LagMismatchError, RolloutDivergence,
                                TrainingDivergence)
from subnet_init.linear_id import LinearSS, build_recon_maps, reconstruct_state, simulate_lss
from subnet_init.subnet import (SubnetModel, TrainConfig, TrainHistory, apply_init_scheme, batch_loss, encode,
                                flatten, rollout, subnet_new, train, unflatten, valid_starts)

from .helpers import random_stable_ss


def lin_model(ss, n=4, hidden=(16, 16), seed=0, scheme="LinDY+LinENC"):
    m = subnet_new(ss.n_x, ss.n_u, ss.n_y, n, n, hidden, seed=seed)
    return apply_init_scheme(m, scheme, ss, build_recon_maps(ss, n))


def linear_record(ss, N, rng):
    u = rng.standard_normal((N, ss.n_u))
    x0 = rng.standard_normal(ss.n_x)
    return Dataset(u, simulate_lss(ss, u, x0))


class TestConstruction:
    def test_psi_width(self):
        m = subnet_new(4, 1, 1, 4, 4, (8,), seed=0)
        assert m.psi_net.in_dim == 8
        m.check()

    def test_zero_output_biases_and_bounds(self):
        m = subnet_new(4, 2, 1, 3, 5, (16, 16), seed=2)
        for net in (m.f_net, m.h_net, m.psi_net):
            assert np.all(net.last_bias == 0)
        assert np.all(np.abs(m.A) <= 1 / np.sqrt(4))
        assert m.W_u.shape == (4, 10) and m.W_y.shape == (4, 3)

    def test_flatten_order(self):
        m = subnet_new(2, 1, 1, 2, 2, (3,), seed=0)
        v = flatten(m)
        np.testing.assert_array_equal(v[:4], m.A.ravel())
        np.testing.assert_array_equal(v[4:6], m.B.ravel())
        back = unflatten(m, v)
        np.testing.assert_array_equal(flatten(back), v)

    def test_json_roundtrip(self, tmp_path):
        from subnet_init.data import Normalizer
        m = subnet_new(3, 1, 2, 2, 3, (5, 4), seed=1)
        nz = Normalizer(np.zeros(1), np.ones(1), np.ones(2), 2 * np.ones(2))
        subnet.save_model(m, tmp_path / "m.json", nz)
        back, nz2 = subnet.load_model(tmp_path / "m.json")
        np.testing.assert_array_equal(flatten(back), flatten(m))
        np.testing.assert_array_equal(nz2.std_y, nz.std_y)


class TestInitSchemes:
    def test_scalar_linenc(self):
        bla = LinearSS([[0.5]], [[1.0]], [[2.0]])
        m = subnet_new(1, 1, 1, 1, 1, (4,), seed=0)
        out = apply_init_scheme(m, "LinDY+LinENC", bla, build_recon_maps(bla, 1))
        np.testing.assert_allclose(out.W_y, [[0.25]])
        np.testing.assert_allclose(out.W_u, [[1.0]])

    def test_lindy_zeroes_nonlinear_terms(self):
        ss = random_stable_ss(3, 1, 1, np.random.default_rng(0))
        m = apply_init_scheme(subnet_new(3, 1, 1, 3, 3, (8, 8), seed=1), "LinDY+RanENC", ss)
        x = np.random.default_rng(1).standard_normal((10, 4))
        assert np.all(nnet.mlp_forward(m.f_net, x) == 0)
        assert np.all(nnet.mlp_forward(m.h_net, x[:, :3]) == 0)
        np.testing.assert_array_equal(m.A, ss.A)
        # encoder stays random
        assert np.any(m.psi_net.last_weight != 0)

    def test_random_scheme_identity(self):
        m = subnet_new(3, 1, 1, 3, 3, (8,), seed=4)
        np.testing.assert_array_equal(flatten(apply_init_scheme(m, "RanDY+RanENC")), flatten(m))

    def test_errors(self):
        ss = random_stable_ss(3, 1, 1, np.random.default_rng(0))
        m = subnet_new(3, 1, 1, 3, 3, (8,), seed=1)
        with pytest.raises(ConfigurationError):
            apply_init_scheme(m, "LinDY+RanENC")
        with pytest.raises(ConfigurationError):
            apply_init_scheme(m, "LinDY+LinENC", ss)
        with pytest.raises(LagMismatchError):
            apply_init_scheme(m, "LinDY+LinENC", ss, build_recon_maps(ss, 4))
        with pytest.raises(ConfigurationError):
            apply_init_scheme(m, "bogus")
        with pytest.raises(ConfigurationError):
            apply_init_scheme(subnet_new(2, 1, 1, 3, 3, (8,)), "LinDY+RanENC", ss)


class TestEncodeRollout:
    def test_encode_matches_reconstruction_on_bla_data(self):
        rng = np.random.default_rng(3)
        ss = random_stable_ss(4, 1, 1, rng)
        m = lin_model(ss)
        maps = build_recon_maps(ss, 4)
        ds = linear_record(ss, 40, rng)
        for t in range(4, 40):
            a = encode(m, ds.u[t - 4:t], ds.y[t - 4:t])
            b = reconstruct_state(maps, ss, ds.y[t - 4:t], ds.u[t - 4:t])
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-10)

    def test_zero_windows_zero_psi(self):
        m = subnet_new(3, 1, 1, 2, 2, (4,), seed=0)
        m.psi_net.last_weight[:] = 0
        np.testing.assert_array_equal(encode(m, np.zeros(2), np.zeros(2)), np.zeros(3))

    @given(st.integers(0, 10_000))
    def test_random_finite(self, seed):
        rng = np.random.default_rng(seed)
        m = subnet_new(3, 2, 1, 3, 2, (8,), seed=seed)
        assert np.all(np.isfinite(encode(m, rng.standard_normal(4), rng.standard_normal(3))))

    def test_window_mismatch(self):
        m = subnet_new(3, 1, 1, 2, 2, (4,), seed=0)
        with pytest.raises(DimensionError):
            encode(m, np.zeros(3), np.zeros(2))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_linear_reduction(self, seed):
        rng = np.random.default_rng(seed)
        ss = random_stable_ss(4, 1, 1, rng)
        m = lin_model(ss, seed=seed % 1000, scheme="LinDY+RanENC")
        x0 = rng.standard_normal(4)
        u = rng.standard_normal((30, 1))
        np.testing.assert_allclose(rollout(m, x0, u), simulate_lss(ss, u, x0), rtol=0, atol=1e-12)

    def test_single_step(self):
        m = subnet_new(3, 1, 2, 2, 2, (4,), seed=0)
        x0 = np.array([0.1, -0.2, 0.3])
        np.testing.assert_allclose(rollout(m, x0, np.ones((1, 1)))[0],
                                   m.C @ x0 + nnet.mlp_forward(m.h_net, x0), rtol=1e-15)

    def test_divergence(self):
        m = subnet_new(2, 1, 1, 2, 2, (4,), seed=0)
        m.A = 1e4 * np.eye(2)
        with pytest.raises(RolloutDivergence) as exc:
            rollout(m, np.ones(2), np.zeros((10, 1)))
        assert exc.value.step is not None

    def test_wh_embedding_identity(self):
        cfg = default_wh_config(nonlinearity="identity")
        A, Bu, Bg, Cz, Cy = cfg.full_ss()
        m = subnet_new(4, 1, 1, 4, 4, (4,), seed=0)
        m.A, m.B, m.C = A + Bg @ Cz, Bu, Cy
        m.f_net.last_weight[:] = 0
        m.h_net.last_weight[:] = 0
        u = generate_white_gaussian(500, 1.0, 1)
        np.testing.assert_allclose(rollout(m, np.zeros(4), u), simulate_wh(cfg, u).y, rtol=0, atol=1e-10)

    def test_wh_embedding_sine(self):
        """Linear blocks in the bypass, sin(C1 x) fitted by the state network's output layer."""
        cfg = default_wh_config()
        A, Bu, Bg, Cz, Cy = cfg.full_ss()
        rng = np.random.default_rng(0)
        width = 48
        m = subnet_new(4, 1, 1, 4, 4, (width,), seed=0)
        # hidden layer sees z = C1 x1 only, through random scalings
        a = rng.uniform(0.2, 1.5, width) * rng.choice([-1, 1], width)
        c = rng.uniform(-2, 2, width)
        m.f_net.hidden[0] = (np.outer(a, np.hstack([Cz[0], 0.0])), c)
        zs = np.linspace(-3, 3, 2001)
        Phi = np.tanh(np.outer(zs, a) + c)
        w = np.linalg.lstsq(Phi, np.sin(zs), rcond=None)[0]
        assert np.abs(Phi @ w - np.sin(zs)).max() < 1e-4
        m.f_net.last_weight = Bg @ w[None, :]
        m.A, m.B, m.C = A, Bu, Cy
        m.h_net.last_weight[:] = 0
        u = generate_white_gaussian(2000, 0.8, 3)
        y_true = simulate_wh(cfg, u).y
        y_model = rollout(m, np.zeros(4), u)
        assert np.sqrt(np.mean((y_model - y_true) ** 2)) / y_true.std() < 1e-3


def brute_force_v(model, ds, T):
    """Direct double sum with 1-based t = n+1 .. N-T+1 and M = (N-T-n+1) T."""
    N, n = ds.N, model.n
    total = 0.0
    for t in range(n + 1, N - T + 2):
        s = t - 1  # 0-based index of y_t
        x = encode(model, ds.u[s - model.n_b:s], ds.y[s - model.n_a:s])
        y_hat = rollout(model, x, ds.u[s:s + T])
        for k in range(T):
            total += float(np.sum((y_hat[k] - ds.y[s + k]) ** 2))
    return total / ((N - T - n + 1) * T)


class TestLoss:
    def test_perfect_fit(self):
        rng = np.random.default_rng(5)
        ss = random_stable_ss(3, 1, 1, rng)
        m = lin_model(ss, n=3)
        ds = linear_record(ss, 200, rng)
        starts = valid_starts(ds.N, 3, 10)
        assert batch_loss(m, ds, starts, 10) < 1e-20

    def test_arithmetic(self):
        m = subnet_new(2, 1, 1, 1, 1, (3,), seed=0)
        for k in ("A", "B", "C", "W_u", "W_y"):
            getattr(m, k)[:] = 0
        for net in (m.f_net, m.h_net, m.psi_net):
            net.last_weight[:] = 0
        ds = Dataset(np.zeros(5), np.array([0.0, -1.0, -3.0, 0.0, 0.0]))
        assert batch_loss(m, ds, [1], 2) == pytest.approx(5.0, abs=1e-15)

    def test_brute_force(self):
        rng = np.random.default_rng(6)
        m = subnet_new(3, 1, 1, 3, 2, (8, 8), seed=3)
        ds = Dataset(rng.standard_normal(120), rng.standard_normal(120))
        T = 7
        v = batch_loss(m, ds, valid_starts(ds.N, m.n, T), T)
        assert v == pytest.approx(brute_force_v(m, ds, T), rel=1e-12)

    def test_partition_consistency(self):
        rng = np.random.default_rng(7)
        m = subnet_new(3, 1, 1, 3, 3, (8,), seed=3)
        ds = Dataset(rng.standard_normal(150), rng.standard_normal(150))
        T = 5
        starts = rng.permutation(valid_starts(ds.N, 3, T))
        full = batch_loss(m, ds, starts, T)
        parts = np.array_split(starts, 7)
        weighted = sum(len(p) * batch_loss(m, ds, p, T) for p in parts) / len(starts)
        assert weighted == pytest.approx(full, rel=1e-12)

    def test_invalid_start(self):
        m = subnet_new(2, 1, 1, 3, 3, (4,), seed=0)
        ds = Dataset(np.zeros(20), np.zeros(20))
        with pytest.raises(IndexError):
            batch_loss(m, ds, [2], 5)
        with pytest.raises(IndexError):
            batch_loss(m, ds, [16], 5)

    def test_gradient_finite_differences(self):
        rng = np.random.default_rng(8)
        m = subnet_new(2, 1, 1, 3, 3, (8, 8), seed=1)
        ds = Dataset(rng.standard_normal(40), rng.standard_normal(40))
        starts = [3, 9, 15, 22, 30]
        loss, g = batch_loss(m, ds, starts, 3, grad=True)
        p = flatten(m)
        fd = np.empty_like(p)
        for i in range(p.size):
            e = np.zeros_like(p)
            e[i] = 1e-6
            fd[i] = (batch_loss(unflatten(m, p + e), ds, starts, 3)
                     - batch_loss(unflatten(m, p - e), ds, starts, 3)) / 2e-6
        assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-6

    def test_gradient_matches_tape(self):
        """Hand-written backward vs the generic reverse-mode engine on the same loss."""
        rng = np.random.default_rng(9)
        m = subnet_new(2, 1, 1, 2, 2, (5,), seed=2)
        ds = Dataset(rng.standard_normal(30), rng.standard_normal(30))
        starts, T = np.array([2, 10, 20]), 4
        _, g = batch_loss(m, ds, starts, T, grad=True)
        g_tape = nnet.gradient(lambda v: _loss_var(m, v, ds, starts, T), flatten(m))
        np.testing.assert_allclose(g, g_tape, rtol=1e-10, atol=1e-14)


def _loss_var(template, v, ds, starts, T):
    sizes = [a.size for a in template.arrays()]
    shapes = [a.shape for a in template.arrays()]
    offs = np.cumsum([0] + sizes)
    A, B, C, Wu, Wy = (v[offs[i]:offs[i + 1]].reshape(shapes[i]) for i in range(5))

    def net(idx0, mlp):
        k = sum(a.size for a in mlp.arrays())
        return v[offs[idx0]:offs[idx0] + k], idx0 + len(mlp.arrays())

    f_flat, nxt = net(5, template.f_net)
    h_flat, nxt = net(nxt, template.h_net)
    psi_flat, _ = net(nxt, template.psi_net)
    total = None
    for s in starts:
        up = ds.u[s - template.n_b:s].reshape(-1)
        yp = ds.y[s - template.n_a:s].reshape(-1)
        x = Wu @ up + Wy @ yp + nnet.mlp_forward_var(template.psi_net, psi_flat, np.concatenate([yp, up]))
        for k in range(T):
            y_hat = C @ x + nnet.mlp_forward_var(template.h_net, h_flat, x)
            e = (y_hat - ds.y[s + k]).square().sum()
            total = e if total is None else total + e
            fin = _concat(x, ds.u[s + k])
            x = A @ x + B @ ds.u[s + k] + nnet.mlp_forward_var(template.f_net, f_flat, fin)
    return total * (1.0 / (len(starts) * T))


def _concat(x, u):
    """[x; u] for a tape variable x and a constant u."""
    n = x.shape[0]
    E = np.vstack([np.eye(n), np.zeros((len(u), n))])
    return E @ x + np.concatenate([np.zeros(n), u])


class TestTrain:
    def _setup(self, N=600, seed=0):
        rng = np.random.default_rng(seed)
        ss = random_stable_ss(2, 1, 1, rng)
        return ss, linear_record(ss, N, rng), linear_record(ss, 300, rng)

    def test_lr_zero(self):
        ss, tr, va = self._setup()
        m = lin_model(ss, n=2, hidden=(8,), scheme="LinDY+RanENC")
        best, hist = train(m, tr, va, TrainConfig(T=10, batch_size=64, lr=0.0, epochs=3, seed=1))
        np.testing.assert_array_equal(flatten(best), flatten(m))
        assert hist.best_epoch == 0
        assert len(hist.records) == 3

    def test_linear_fixed_point(self):
        ss, tr, va = self._setup(N=2000, seed=3)
        m = lin_model(ss, n=2, hidden=(8, 8))
        best, hist = train(m, tr, va, TrainConfig(T=20, batch_size=128, epochs=20, seed=0, dtype="float64"))
        assert hist.records[hist.best_epoch].val_nrms < 1e-3

    def test_deterministic_and_best_epoch(self):
        rng = np.random.default_rng(4)
        u = rng.standard_normal(800)
        y = np.tanh(np.convolve(u, [0.0, 0.5, 0.3, 0.1])[:800])
        tr, va = Dataset(u[:500], y[:500]), Dataset(u[500:], y[500:])
        cfg = TrainConfig(T=8, batch_size=32, epochs=4, seed=2, scheme="RanDY+RanENC")
        runs = [train(subnet_new(2, 1, 1, 2, 2, (8,), seed=5), tr, va, cfg) for _ in range(2)]
        (m1, h1), (m2, h2) = runs
        assert h1 == h2
        np.testing.assert_array_equal(flatten(m1), flatten(m2))
        vals = [r.val_loss for r in h1.records]
        assert h1.best_epoch == int(np.argmin(vals))

    def test_history_csv(self, tmp_path):
        h = TrainHistory([subnet.EpochRecord(0, 1.0, 0.25, 0.5), subnet.EpochRecord(1, 0.5, 0.25, 0.5)], 0)
        h.to_csv(tmp_path / "h.csv")
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss,val_nrms,is_best"
        assert [l.split(",")[-1] for l in lines[1:]] == ["1", "0"]
        assert TrainHistory.from_csv(tmp_path / "h.csv") == h

    def test_too_short(self):
        m = subnet_new(2, 1, 1, 4, 4, (4,), seed=0)
        ds = Dataset(np.arange(10.0), np.arange(10.0))
        with pytest.raises(ConfigurationError):
            train(m, ds, ds, TrainConfig(T=8, epochs=1))

    def test_divergence(self):
        rng = np.random.default_rng(0)
        ds = Dataset(rng.standard_normal(200), rng.standard_normal(200))
        m = subnet_new(2, 1, 1, 2, 2, (4,), seed=0)
        m.A = 50 * np.eye(2)
        with pytest.raises(TrainingDivergence) as exc:
            train(m, ds, ds, TrainConfig(T=20, batch_size=16, epochs=1, dtype="float64"))
        assert exc.value.epoch == 0 and exc.value.batch == 0

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(T=0)
        with pytest.raises(ConfigurationError):
            TrainConfig(scheme="nope")
