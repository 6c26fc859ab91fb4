import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from robust_omc import ConfigurationError, GridDensity, GridSpec, PosteriorEstimate, UndefinedESSError, ess, jsd, to_grid
from robust_omc.metrics import marginal_jsd

# Nonzero weights stay above 1e-6 so that rescaling by c cannot underflow to zero.
positive_weights = hnp.arrays(
    float, st.integers(1, 50), elements=st.just(0.0) | st.floats(1e-6, 1e3)
).filter(lambda w: w.sum() > 0)


class TestEss:
    @pytest.mark.parametrize(
        "weights, expected",
        [([1, 1, 1, 1], 4.0), ([2, 0, 0, 0], 1.0), ([1, 2, 3], 36 / 14)],
    )
    def test_examples(self, weights, expected):
        assert ess(weights) == pytest.approx(expected, rel=1e-14)

    def test_all_zero(self):
        with pytest.raises(UndefinedESSError):
            ess([0.0, 0.0])

    @pytest.mark.parametrize("bad", [[1.0, -1.0], [1.0, np.nan], [1.0, np.inf]])
    def test_rejects_invalid(self, bad):
        with pytest.raises(ConfigurationError):
            ess(bad)

    @settings(max_examples=100, deadline=None)
    @given(positive_weights, st.floats(1e-100, 1e100))
    def test_scale_invariance(self, w, c):
        assert ess(c * w) == pytest.approx(ess(w), rel=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(positive_weights)
    def test_bounds(self, w):
        assert 1.0 - 1e-12 <= ess(w) <= np.count_nonzero(w) + 1e-9


def line(mass):
    mass = np.asarray(mass, dtype=float)
    return GridDensity(GridSpec((0.0,), (1.0,), (len(mass),)), mass)


class TestJsd:
    def test_identical(self):
        assert jsd(line([0.2, 0.3, 0.5]), line([0.2, 0.3, 0.5])) == 0.0

    def test_disjoint(self):
        assert jsd(line([1, 0]), line([0, 1])) == pytest.approx(np.log(2), abs=1e-15)

    def test_forced_arithmetic(self):
        expected = 0.5 * (0.5 * np.log(0.5 / 0.75) + 0.5 * np.log(0.5 / 0.25)) + 0.5 * np.log(1 / 0.75)
        assert jsd(line([0.5, 0.5]), line([1, 0])) == pytest.approx(expected, rel=1e-14)
        # The second term alone is ln(4/3)/2 ~= 0.1438; the total is ~0.2158.
        assert 0.5 * np.log(4 / 3) == pytest.approx(0.1438, abs=5e-5)
        assert jsd(line([0.5, 0.5]), line([1, 0])) == pytest.approx(0.2158, abs=5e-5)

    def test_grid_mismatch(self):
        with pytest.raises(ConfigurationError):
            jsd(line([0.5, 0.5]), line([0.2, 0.3, 0.5]))

    def test_random_pairs_symmetric_and_bounded(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            a = rng.dirichlet(np.full(20, 0.3))
            b = rng.dirichlet(np.full(20, 0.3))
            ab, ba = jsd(line(a), line(b)), jsd(line(b), line(a))
            assert ab == ba
            assert 0.0 <= ab <= np.log(2)

    def test_marginals(self):
        spec = GridSpec((0, 0), (1, 1), (2, 3))
        a = GridDensity(spec, np.full((2, 3), 1 / 6))
        b = GridDensity(spec, np.array([[1 / 3, 1 / 3, 1 / 3], [0, 0, 0]]))
        assert marginal_jsd(a, b, 1) == pytest.approx(0.0, abs=1e-15)
        assert marginal_jsd(a, b, 0) == pytest.approx(jsd(line([0.5, 0.5]), line([1, 0])))


class TestToGrid:
    spec = GridSpec((-1.0,), (1.0,), (10,))

    def test_single_sample_at_center(self):
        c = self.spec.centers()[0][3]
        g = to_grid((np.array([c]), np.array([1.0])), self.spec)
        assert g.mass[3] == 1.0 and g.mass.sum() == 1.0

    def test_uniform_law_of_large_numbers(self, rng):
        n = 200_000
        g = to_grid((rng.uniform(-1, 1, n), np.ones(n)), self.spec)
        per_bin = n / 10
        assert np.max(np.abs(g.mass * 10 - 1)) < 3 / np.sqrt(per_bin)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31))
    def test_mass_conservation(self, seed):
        r = np.random.default_rng(seed)
        theta = r.uniform(-2, 2, 300)
        w = r.exponential(size=300)
        g = to_grid((theta, w), self.spec)
        inside = np.abs(theta) <= 1
        assert abs(w[inside].sum() / w.sum() - (1 - g.out_of_bounds)) < 1e-12
        assert abs(g.mass.sum() - 1) < 1e-12

    def test_smoothing_keeps_normalisation(self, rng):
        g = to_grid((rng.uniform(-1, 1, 100), np.ones(100)), self.spec, smooth=True)
        assert abs(g.mass.sum() - 1) < 1e-12 and np.all(g.mass >= 0)

    def test_no_mass_inside(self):
        with pytest.raises(ConfigurationError):
            to_grid((np.array([5.0]), np.array([1.0])), self.spec)

    def test_two_dimensional(self):
        spec = GridSpec((0, 0), (2, 2), (2, 2))
        g = to_grid((np.array([[0.5, 0.5], [1.5, 0.5], [1.5, 0.5]]), np.ones(3)), spec)
        assert np.allclose(g.mass, [[1 / 3, 0], [2 / 3, 0]])

    def test_csv_roundtrip(self, tmp_path):
        g = to_grid((np.array([0.05]), np.array([1.0])), self.spec)
        g.to_csv(tmp_path / "g.csv")
        rows = np.loadtxt(tmp_path / "g.csv", delimiter=",", skiprows=1)
        assert np.allclose(rows[:, 0], self.spec.centers()[0])
        assert np.array_equal(rows[:, 1], g.mass)


class TestGridSpec:
    @pytest.mark.parametrize("args", [((0,), (0,), (3,)), ((0,), (1,), (0,)), ((0, 0), (1,), (3,)), ((0,), (np.inf,), (2,))])
    def test_invalid(self, args):
        with pytest.raises(ConfigurationError):
            GridSpec(*args)


class TestPosteriorEstimate:
    def test_singular_weights_keep_highest_degeneracy(self):
        post = PosteriorEstimate(
            theta=np.arange(4.0),
            weight=[1.0, np.inf, np.inf, 0.0],
            degeneracy=np.array([0, 1, 1, 1]),
            leading=np.array([1.0, 2.0, 6.0, 5.0]),
        )
        assert np.array_equal(post.effective_weights(), [0.0, 2.0, 6.0, 0.0])
        assert post.mean()[0] == pytest.approx(1.75)
        assert post.ess_ratio() == pytest.approx(ess([2, 6]) / 4)

    def test_moments(self):
        post = PosteriorEstimate(theta=[[0.0], [2.0]], weight=[1.0, 3.0])
        assert post.mean()[0] == 1.5
        assert post.std()[0] == pytest.approx(np.sqrt(0.75))

    def test_rejects_negative(self):
        with pytest.raises(ConfigurationError):
            PosteriorEstimate(theta=[0.0], weight=[-1.0])

    def test_empty(self):
        post = PosteriorEstimate(theta=np.zeros((0, 1)), weight=[])
        assert post.is_empty
        with pytest.raises(UndefinedESSError):
            post.ess()

    def test_samples_view(self):
        post = PosteriorEstimate(theta=[[0.0]], weight=[2.0], indicator=np.array([True]), seed_index=np.array([4]))
        (s,) = post.samples
        assert s.indicator_passed and s.parent_seed_index == 4 and s.weight == 2.0
