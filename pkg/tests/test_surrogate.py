import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_omc import BoConfig, ConfigurationError, bayes_opt, gp_fit, gp_hessian, gp_predict
from robust_omc import kernels
from robust_omc.surrogate.bayesopt import expected_improvement, sobol_design
from robust_omc.surrogate.gp import Hyperparameters, _neg_log_marginal, robust_cholesky


def fd_hessian(f, x, h=1e-4):
    x = np.asarray(x, dtype=float)
    d = len(x)
    out = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            ei, ej = np.eye(d)[i] * h, np.eye(d)[j] * h
            out[i, j] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h * h)
    return out


class TestKernelBackends:
    def setup_method(self):
        r = np.random.default_rng(0)
        self.X = r.normal(size=(15, 3))
        self.x = r.normal(size=3)
        self.alpha = r.normal(size=15)
        self.ls = np.array([0.7, 1.3, 2.0])

    def test_covariance_properties(self, backend):
        K = kernels.matern52_cov(self.X, self.X, self.ls, 2.0, backend=backend)
        assert np.allclose(K, K.T) and np.allclose(np.diag(K), 2.0)
        assert np.all(np.linalg.eigvalsh(K) > 0)

    def test_closed_form(self, backend):
        r = np.sqrt(5) * 0.5
        k = kernels.matern52_cov(np.zeros((1, 1)), np.array([[0.5]]), np.ones(1), 1.0, backend=backend)
        assert k[0, 0] == pytest.approx((1 + r + r * r / 3) * np.exp(-r), rel=1e-14)

    def test_gradient_matches_finite_differences(self, backend):
        g = kernels.matern52_grad(self.x, self.X, self.ls, 1.5, backend=backend)
        h = 1e-6
        for k in range(3):
            e = np.eye(3)[k] * h
            fd = (
                kernels.matern52_cov((self.x + e)[None], self.X, self.ls, 1.5)
                - kernels.matern52_cov((self.x - e)[None], self.X, self.ls, 1.5)
            )[0] / (2 * h)
            assert np.allclose(g[:, k], fd, atol=1e-8)

    def test_mean_hessian_matches_finite_differences(self, backend):
        H = kernels.matern52_mean_hessian(self.x, self.X, self.alpha, self.ls, 1.5, backend=backend)
        f = lambda x: kernels.matern52_cov(x[None], self.X, self.ls, 1.5)[0] @ self.alpha  # noqa: E731
        assert np.allclose(H, fd_hessian(f, self.x), atol=1e-4)

    def test_lengthscale_grads(self, backend):
        G = kernels.matern52_lengthscale_grads(self.X, self.ls, 1.5, backend=backend)
        h = 1e-6
        for k in range(3):
            up, dn = self.ls.copy(), self.ls.copy()
            up[k] *= np.exp(h)
            dn[k] *= np.exp(-h)
            fd = (kernels.matern52_cov(self.X, self.X, up, 1.5) - kernels.matern52_cov(self.X, self.X, dn, 1.5)) / (2 * h)
            assert np.allclose(G[k], fd, atol=1e-7)

    def test_backends_agree(self):
        names = sorted(kernels.BACKENDS)
        ref = names[0]
        for name in names[1:]:
            for fn, args in [
                (kernels.matern52_cov, (self.X, self.X[:4], self.ls, 1.1)),
                (kernels.matern52_grad, (self.x, self.X, self.ls, 1.1)),
                (kernels.matern52_mean_hessian, (self.x, self.X, self.alpha, self.ls, 1.1)),
                (kernels.matern52_lengthscale_grads, (self.X, self.ls, 1.1)),
            ]:
                assert np.allclose(fn(*args, backend=name), fn(*args, backend=ref), rtol=1e-12, atol=1e-14)


class TestGpFit:
    def test_constant_targets(self, rng):
        X = rng.uniform(0, 1, (10, 2))
        g = gp_fit(X, np.full(10, 3.0))
        mean, var = gp_predict(g, rng.uniform(0, 1, (5, 2)))
        assert np.allclose(mean, 3.0)
        _, var_train = gp_predict(g, X)
        assert np.all(var_train <= g.hyper.noise_var + 1e-12)
        assert np.allclose(gp_hessian(g, [0.5, 0.5]), 0.0, atol=1e-8)

    def test_interpolates_without_noise(self, rng):
        X = rng.uniform(-1, 1, (12, 2))
        y = np.sin(3 * X[:, 0]) + X[:, 1] ** 2
        hyper = Hyperparameters(1.0, np.array([0.5, 0.5]), 1e-12)
        g = gp_fit(X, y, hyper_opt=False, hyperparameters=hyper)
        assert np.allclose(g.mean(X), y, atol=1e-6)

    def test_training_predictions_within_noise(self, rng):
        X = rng.uniform(-1, 1, (20, 1))
        y = np.cos(4 * X[:, 0])
        g = gp_fit(X, y, rng=rng)
        assert np.all(np.abs(g.mean(X) - y) <= 3 * np.sqrt(g.hyper.noise_var) + 1e-9)

    def test_sine_held_out_rmse(self, rng):
        X = np.linspace(0, 2 * np.pi, 20)[:, None]
        g = gp_fit(X, np.sin(X[:, 0]), rng=rng)
        test = rng.uniform(0, 2 * np.pi, (200, 1))
        rmse = np.sqrt(np.mean((g.mean(test) - np.sin(test[:, 0])) ** 2))
        assert rmse < 0.05

    def test_permutation_invariance(self, rng):
        X = rng.uniform(-1, 1, (15, 2))
        y = X[:, 0] ** 2 - X[:, 1]
        hyper = Hyperparameters(1.0, np.array([0.4, 0.8]), 1e-8)
        perm = rng.permutation(15)
        a = gp_fit(X, y, hyper_opt=False, hyperparameters=hyper)
        b = gp_fit(X[perm], y[perm], hyper_opt=False, hyperparameters=hyper)
        q = rng.uniform(-1, 1, (10, 2))
        assert np.allclose(a.predict(q)[0], b.predict(q)[0], atol=1e-10)
        assert np.allclose(a.predict(q)[1], b.predict(q)[1], atol=1e-10)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31))
    def test_variance_monotonicity(self, seed):
        r = np.random.default_rng(seed)
        X = np.sort(r.uniform(0, 10, 8))[:, None]
        g = gp_fit(X, np.sin(X[:, 0]), hyper_opt=False)
        gaps = np.diff(X[:, 0])
        k = int(np.argmax(gaps))
        mid = 0.5 * (X[k, 0] + X[k + 1, 0])
        _, v_train = g.predict(X)
        _, v_mid = g.predict([[mid]])
        assert np.all(v_train <= v_mid[0] + 1e-15)

    def test_log_marginal_gradient(self, rng):
        X = rng.uniform(-1, 1, (12, 2))
        y = np.sin(2 * X[:, 0]) * X[:, 1]
        p = np.log([0.8, 0.5, 0.9, 1e-3])
        _, g = _neg_log_marginal(p, X, y - y.mean())
        h = 1e-6
        fd = [(_neg_log_marginal(p + h * e, X, y - y.mean())[0] - _neg_log_marginal(p - h * e, X, y - y.mean())[0]) / (2 * h) for e in np.eye(4)]
        assert np.allclose(g, fd, rtol=1e-4, atol=1e-6)

    @pytest.mark.parametrize("X", [[[0.0]], [[0.0], [1e-12]]])
    def test_invalid_inputs(self, X):
        with pytest.raises(ConfigurationError):
            gp_fit(X, np.zeros(len(X)))

    def test_jitter_escalation(self):
        K = np.ones((3, 3))
        L = robust_cholesky(K)
        assert np.allclose(L @ L.T, K, atol=1e-4)


class TestHessian:
    def test_quadratic_recovery(self, rng):
        q = np.array([[2.0, 0.5], [0.5, 1.0]])
        g1 = np.linspace(-1, 1, 9)
        X = np.array(np.meshgrid(g1, g1)).reshape(2, -1).T
        y = 0.5 * np.einsum("ni,ij,nj->n", X, q, X)
        g = gp_fit(X, y, rng=rng)
        H = gp_hessian(g, [0.1, -0.1])
        assert np.allclose(H, q, rtol=0.05, atol=0.05 * np.abs(q).max())

    def test_two_dimensional_finite_differences(self, rng):
        X = rng.uniform(-1, 1, (30, 2))
        g = gp_fit(X, np.sin(2 * X[:, 0]) + X[:, 0] * X[:, 1], hyper_opt=False)
        f = lambda x: g.mean(x[None])[0]  # noqa: E731
        for x in ([0.1, -0.1], [0.5, 0.3]):
            assert np.allclose(gp_hessian(g, x), fd_hessian(f, x), atol=1e-4)

    def test_one_dimensional_second_difference(self, rng):
        X = rng.uniform(-2, 2, (15, 1))
        g = gp_fit(X, np.exp(-X[:, 0] ** 2), rng=rng)
        h = 1e-4
        for x in (-0.7, 0.2, 1.1):
            m = g.mean(np.array([[x - h], [x], [x + h]]))
            assert gp_hessian(g, [x])[0, 0] == pytest.approx((m[0] - 2 * m[1] + m[2]) / h**2, abs=1e-4)

    def test_symmetry(self, rng):
        X = rng.uniform(-1, 1, (25, 3))
        g = gp_fit(X, np.sum(X**2, axis=1) + X[:, 0] * X[:, 1], rng=rng)
        raw = g.hessian([0.1, 0.2, -0.3], symmetrise=False)
        assert np.max(np.abs(raw - raw.T)) < 1e-8
        sym = gp_hessian(g, [0.1, 0.2, -0.3])
        assert np.max(np.abs(sym - sym.T)) == 0.0


class TestExpectedImprovement:
    @settings(max_examples=100, deadline=None)
    @given(st.floats(-10, 10), st.floats(1e-12, 10) | st.just(0.0), st.floats(-10, 10))
    def test_nonnegative(self, mean, var, best):
        assert expected_improvement(mean, var, best) >= 0

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-10, 10), st.floats(0, 10))
    def test_zero_without_uncertainty_or_gain(self, best, excess):
        assert expected_improvement(best + excess, 0.0, best) == 0.0

    def test_known_value(self):
        # mean == best: EI = sd * phi(0).
        assert expected_improvement(1.0, 4.0, 1.0) == pytest.approx(2 / np.sqrt(2 * np.pi))


class TestBayesOpt:
    def quadratic(self, t):
        return lambda x: float(np.sum((np.asarray(x) - t) ** 2))

    def test_replicate_study(self):
        t = np.array([1.3, -2.1])
        hits = 0
        for r in range(20):
            res = bayes_opt(self.quadratic(t), [-5, -5], [5, 5], BoConfig(), np.random.default_rng(r))
            hits += np.linalg.norm(res.theta - t) < 0.1
        assert hits >= 18

    def test_zero_iterations(self):
        res = bayes_opt(self.quadratic(np.zeros(2)), [-5, -5], [5, 5], BoConfig(iterations=0), np.random.default_rng(0))
        assert len(res.y) == 10
        assert res.distance == res.y.min()

    def test_deterministic(self):
        cfg = BoConfig(iterations=8)
        a = bayes_opt(self.quadratic(np.ones(2)), [-5, -5], [5, 5], cfg, np.random.default_rng(4))
        b = bayes_opt(self.quadratic(np.ones(2)), [-5, -5], [5, 5], cfg, np.random.default_rng(4))
        assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)

    def test_non_finite_values_logged(self):
        def objective(x):
            return np.nan if x[0] > 0 else float(np.sum(x**2))

        res = bayes_opt(objective, [-1, -1], [1, 1], BoConfig(iterations=5), np.random.default_rng(0))
        bad = res.X[:, 0] > 0
        assert bad.any() and np.all(np.isinf(res.y[bad]))
        assert len(res.gp.X) == np.count_nonzero(~bad)

    def test_unbounded_support(self):
        with pytest.raises(ConfigurationError):
            bayes_opt(self.quadratic(0.0), [-np.inf], [1.0], BoConfig(), np.random.default_rng(0))

    def test_sobol_design_in_bounds(self):
        pts = sobol_design(10, np.array([-1.0, 2.0]), np.array([1.0, 3.0]), np.random.default_rng(0))
        assert pts.shape == (10, 2)
        assert np.all((pts >= [-1, 2]) & (pts <= [1, 3]))

    def test_trace_csv(self, tmp_path):
        res = bayes_opt(self.quadratic(0.0), [-1.0], [1.0], BoConfig(iterations=2), np.random.default_rng(0))
        res.to_csv(tmp_path / "trace.csv")
        rows = (tmp_path / "trace.csv").read_text().splitlines()
        assert rows[0] == "step,theta_0,distance" and len(rows) == len(res.y) + 1

    @pytest.mark.parametrize("kwargs", [{"iterations": -1}, {"restarts": 0}, {"refit_every": 0}])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ConfigurationError):
            BoConfig(**kwargs)
