import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from robust_omc import (
    AcceptanceCheck,
    BoConfig,
    ConfigurationError,
    Exp1Simulator,
    Exp2Simulator,
    FunctionSimulator,
    LinearGaussianSimulator,
    UniformPrior,
    omc,
    rethreshold,
    romc_weights,
    run_boxed_romc,
    run_ellipsoidal_romc,
    select_epsilon,
)
from robust_omc.experiments import exp2_prior
from robust_omc.model import IndependentPrior, batch_distance, nuisance_seeds
from robust_omc.romc import Thresholds
from robust_omc.simulators import LinearRegionOverride, exp1_region_override
from robust_omc.thresholds import QuantileConfig


class TestSelectEpsilon:
    def test_constant(self):
        assert select_epsilon([1, 1, 1], 0.9) == 1

    def test_exact_median(self):
        assert select_epsilon(np.arange(11), 0.5) == 5

    def test_exponential_quantile(self):
        d = np.random.default_rng(0).exponential(size=1000)
        assert abs(select_epsilon(d, 0.9) - np.log(10)) < 0.15

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0, 1e6), min_size=1, max_size=40), st.floats(0.01, 1.0))
    def test_matches_numpy_linear_quantile(self, d, q):
        assert select_epsilon(d, q) == pytest.approx(np.quantile(d, q), rel=1e-12, abs=1e-12)

    def test_failed_seeds_rank_last(self):
        assert select_epsilon([1.0, 2.0, np.inf], 0.5) == 2.0
        assert select_epsilon([np.inf, np.inf], 0.9) == np.inf

    @pytest.mark.parametrize("bad", [([], 0.9), ([1.0], 0.0), ([1.0], 1.1), ([-1.0], 0.5)])
    def test_invalid(self, bad):
        with pytest.raises(ConfigurationError):
            select_epsilon(*bad)


class TestQuantileConfig:
    def test_parse(self):
        assert QuantileConfig.parse("0.9,0.95,0.975").as_list() == [0.9, 0.95, 0.975]
        assert QuantileConfig.parse("0.9").as_list() == [0.9, 0.9, 0.9]

    @pytest.mark.parametrize("text", ["0.95,0.9,0.975", "a,b,c", "0.9,0.95"])
    def test_invalid(self, text):
        with pytest.raises(ConfigurationError):
            QuantileConfig.parse(text)


class TestRomcWeights:
    prior = UniformPrior([-1.0], [1.0])

    def test_outside_region_has_zero_weight(self):
        w, ind, d, _ = romc_weights(np.array([[0.9]]), 0.5, self.prior, AcceptanceCheck(0.1), lambda t: np.abs(t[:, 0]))
        assert w[0] == 0.0 and not ind[0] and d[0] == 0.9

    def test_all_accepted(self):
        w, ind, _, _ = romc_weights(np.zeros((4, 1)), 0.3, self.prior, AcceptanceCheck(0.1), lambda t: np.zeros(len(t)))
        assert np.all(ind) and np.allclose(w, 0.5 * 0.3)

    def test_prior_zero(self):
        w, ind, _, _ = romc_weights(np.array([[2.0]]), 1.0, self.prior, AcceptanceCheck(1.0), lambda t: np.zeros(len(t)))
        assert ind[0] and w[0] == 0.0

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            AcceptanceCheck(0.0)
        with pytest.raises(ConfigurationError):
            AcceptanceCheck(1.0, "oracle")
        with pytest.raises(ConfigurationError):
            romc_weights(np.zeros((1, 1)), 0.0, self.prior, AcceptanceCheck(1.0), lambda t: np.zeros(1))


def grid_expectations(sim, prior, obs, seeds, eps, lower, upper, points):
    """Exact posterior moments by enumerating every seed's acceptance region on a dense grid."""
    axes = [np.linspace(lo, hi, points) for lo, hi in zip(lower, upper)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(lower))
    dens = prior.pdf(mesh)
    total = np.zeros(len(mesh))
    for s in seeds:
        total += dens * (batch_distance(sim, mesh, s, obs) <= eps)
    w = total / total.sum()
    return w @ mesh, w @ mesh**2


def romc_moments(post):
    w = post.normalised_weights()
    out = []
    for h in (post.theta, post.theta**2):
        mu = w @ h
        se = np.sqrt(np.sum(w[:, None] ** 2 * (h - mu) ** 2, axis=0))
        out.append((mu, se))
    return out


class TestImportanceSamplingConsistency:
    def test_exp1_exact_regions(self):
        sim, prior = Exp1Simulator(), UniformPrior([-2.5], [2.5])
        res = run_boxed_romc(sim, prior, [0.0], 40, 400, master_seed=3, region_override=exp1_region_override)
        seeds = nuisance_seeds(3, 40)[np.unique(res.posterior.seed_index)]
        m1, m2 = grid_expectations(sim, prior, [0.0], seeds, res.thresholds.accept, [-2.5], [2.5], 200_001)
        (r1, s1), (r2, s2) = romc_moments(res.posterior)
        assert np.all(np.abs(r1 - m1) <= 3 * s1)
        assert np.all(np.abs(r2 - m2) <= 3 * s2)

    def test_linear_gaussian_boxes(self):
        # Three summaries for two parameters: end distances vary by seed.
        sim = LinearGaussianSimulator([[1.0, 0.4], [-0.3, 0.8], [0.5, 0.5]], noise_scale=0.5)
        prior = IndependentPrior([stats.norm(0, 1), stats.norm(0.5, 2)], [-4, -4], [4, 4])
        obs = [0.3, -0.2, 0.1]
        res = run_boxed_romc(sim, prior, obs, 12, 2000, master_seed=5)
        seeds = nuisance_seeds(5, 12)[np.unique(res.posterior.seed_index)]
        lo = res.posterior.theta.min(axis=0) - 0.1
        hi = res.posterior.theta.max(axis=0) + 0.1
        m1, m2 = grid_expectations(sim, prior, obs, seeds, res.thresholds.accept, lo, hi, 700)
        (r1, s1), (r2, s2) = romc_moments(res.posterior)
        assert np.all(np.abs(r1 - m1) <= 3 * s1)
        assert np.all(np.abs(r2 - m2) <= 3 * s2)


@pytest.fixture(scope="module")
def exp2_run():
    sim, prior = Exp2Simulator(), exp2_prior()
    return sim, prior, run_boxed_romc(sim, prior, [1.0], 20, 50, master_seed=2)


class TestBoxedRomc:
    def test_region_containment(self, exp2_run):
        sim, prior, res = exp2_run
        post = res.posterior
        seeds = nuisance_seeds(2, 20)
        for i in np.unique(post.seed_index):
            rows = (post.seed_index == i) & post.indicator
            d = batch_distance(sim, post.theta[rows], seeds[i], [1.0], prior=prior)
            assert np.all(d <= res.thresholds.accept)
            assert np.array_equal(d, post.distance[rows])

    def test_weights_follow_indicator(self, exp2_run):
        _, _, res = exp2_run
        post = res.posterior
        assert np.all((post.weight == 0) | post.indicator)
        assert np.allclose(post.weight[post.indicator], (res.prior_density * res.volume)[post.indicator])

    def test_rethreshold_without_simulation(self, exp2_run):
        sim, _, res = exp2_run
        before = sim.calls
        eps = 0.5 * res.thresholds.accept
        new = rethreshold(res, eps)
        assert sim.calls == before and new.calls["weighting"] == 0
        assert np.array_equal(new.posterior.indicator, new.posterior.distance <= eps)
        assert np.all(new.parent_d_star <= eps)
        same = rethreshold(res, res.thresholds.accept)
        assert np.array_equal(same.posterior.weight, res.posterior.weight)
        with pytest.raises(ConfigurationError):
            rethreshold(res, 2 * res.thresholds.proposal)

    def test_reuses_omc_result(self, exp2_run):
        sim, prior, res = exp2_run
        base = omc(sim, prior, [1.0], 20, master_seed=2)
        reused = run_boxed_romc(sim, prior, [1.0], 20, 50, master_seed=2, omc_result=base)
        assert reused.calls["optimisation"] == 0
        assert np.array_equal(reused.posterior.theta, res.posterior.theta)
        assert np.array_equal(reused.posterior.weight, res.posterior.weight)

    def test_mismatched_omc_result(self, exp2_run):
        sim, prior, _ = exp2_run
        base = omc(sim, prior, [1.0], 5, master_seed=2)
        with pytest.raises(ConfigurationError):
            run_boxed_romc(sim, prior, [1.0], 5, 10, master_seed=3, omc_result=base)

    def test_parallel_matches_serial(self):
        sim, prior = Exp2Simulator(), exp2_prior()
        a = run_boxed_romc(sim, prior, [1.0], 6, 20, master_seed=8, workers=1)
        b = run_boxed_romc(sim, prior, [1.0], 6, 20, master_seed=8, workers=2)
        assert np.array_equal(a.posterior.theta, b.posterior.theta)
        assert np.array_equal(a.posterior.weight, b.posterior.weight)
        assert a.calls == b.calls

    def test_unattainable_epsilon(self):
        sim = Exp1Simulator()
        seed_pos = next(i for i in range(200) if float(sim.nuisance(int(nuisance_seeds(i, 1)[0]))) > 0.1)
        res = run_boxed_romc(
            sim, UniformPrior([-2.5], [2.5]), [0.0], 1, 10, master_seed=seed_pos,
            thresholds=Thresholds(1e-6, 1e-6, 1e-6),
        )
        assert res.posterior.is_empty and len(res.posterior) == 0
        (report,) = res.reports
        assert report.status == "excluded" and "epsilon" in report.message

    def test_rows(self, exp2_run):
        _, _, res = exp2_run
        row = next(res.rows())
        assert list(row) == [
            "parent_seed_index", "theta_0", "theta_1", "weight", "indicator", "distance",
            "prior_density", "volume", "parent_d_star",
        ]


class TestReductionToOmc:
    # Exact elliptical regions: with a flat prior the only gap left is
    # sampling noise inside each region, which shrinks with epsilon.
    def test_romc_mean_approaches_omc(self):
        sim = LinearGaussianSimulator([[1.0, 0.3], [0.2, 0.7]])
        prior = UniformPrior([-20, -20], [20, 20])
        base = omc(sim, prior, [0.4, -0.6], 60, master_seed=1, epsilon=np.inf)
        omc_post = base.posterior()
        gaps = []
        for scale in (1.0, 0.1, 0.01):
            eps = 0.5 * scale
            res = run_boxed_romc(
                sim, prior, [0.4, -0.6], 60, 200, master_seed=1, omc_result=base, thresholds=Thresholds(eps, eps, eps),
                region_override=LinearRegionOverride((0.4, -0.6)),
            )
            gaps.append(np.max(np.abs(res.posterior.mean() - omc_post.mean()) / omc_post.std()))
        assert np.all(np.diff(gaps) < 0)
        assert gaps[-1] < 0.01


def bowl_simulator(q):
    q = np.asarray(q, dtype=float)
    return FunctionSimulator(lambda t, u: np.array([(t - u) @ q @ (t - u)]), 2, 1, nuisance_shape=(2,))


BOWL_THRESHOLDS = Thresholds(0.3, 0.5, 0.8)


@pytest.fixture(scope="module")
def bowl_runs():
    q = np.array([[3.0, 1.0], [1.0, 2.0]])
    sim, prior = bowl_simulator(q), UniformPrior([-4, -4], [4, 4])
    true = run_ellipsoidal_romc(
        sim, prior, [0.0], 4, 200, master_seed=0, bo=BoConfig(iterations=30), thresholds=BOWL_THRESHOLDS
    )
    return q, sim, prior, true


class TestEllipsoidalRomc:

    def test_ellipse_volume_matches_sublevel_set(self, bowl_runs):
        q, _, _, res = bowl_runs
        ok = [r for r in res.reports if r.status == "ok"]
        assert ok
        for r in ok:
            # Sublevel set {(t-u)^T q (t-u) <= eps_prop} of the bowl.
            exact = np.pi * res.thresholds.proposal / np.sqrt(np.linalg.det(q))
            assert r.kind == "ellipsoid"
            assert r.volume == pytest.approx(exact, rel=0.05)

    def test_surrogate_acceptance_makes_no_simulator_calls(self, bowl_runs):
        q, sim, prior, true = bowl_runs
        from robust_omc.romc import bayes_opt_seeds

        bo = bayes_opt_seeds(sim, prior, [0.0], 4, 0, cfg=BoConfig(iterations=30))
        before = sim.calls
        gp = run_ellipsoidal_romc(
            sim, prior, [0.0], 4, 200, master_seed=0, evaluator="gp", bo_results=bo, thresholds=BOWL_THRESHOLDS
        )
        assert gp.calls["weighting"] == 0
        assert sim.calls == before
        assert gp.posterior.method == "gp_romc"
        assert np.array_equal(gp.posterior.theta, true.posterior.theta)

    def test_failed_optimisation_is_reported(self):
        sim = FunctionSimulator(lambda t, u: np.array([np.nan]), 1, 1)
        res = run_ellipsoidal_romc(sim, UniformPrior([0.0], [1.0]), [0.0], 1, 10, master_seed=0, bo=BoConfig(iterations=2))
        assert res.posterior.is_empty
        assert res.reports[0].status == "failed"

    @pytest.mark.parametrize("kwargs", [{"evaluator": "both"}, {"loose_box": "grow"}])
    def test_invalid_options(self, kwargs):
        with pytest.raises(ConfigurationError):
            run_ellipsoidal_romc(Exp1Simulator(), UniformPrior([-1.0], [1.0]), [0.0], 1, 1, 0, **kwargs)
