
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fjupload.adaptive import (
    AdaptiveScheduler,
    OneSampleSampler,
    OracleSampler,
    PosteriorSampler,
    chain_base,
    estimate_subgradient,
    make_sampler,
    mc_cost,
    project_simplex,
    round_allocation,
    step,
    subgradient_samples,
)
from fjupload.distributions import Exponential, MarkovModulatedExp, MmppParams
from fjupload.simulator import (
    BatchInfo,
    FixedBatches,
    PathConfig,
    PoissonBatches,
    StaticScheduler,
    TrafficConfig,
    lindley_waiting,
    simulate,
)

finite = st.floats(-50, 50, allow_nan=False)


class TestProjection:
    def test_inside_is_fixed(self):
        v = np.array([0.2, 0.3, 0.5])
        assert project_simplex(v) == pytest.approx(v)

    def test_symmetric(self):
        assert project_simplex([1.0, 1.0]) == pytest.approx([0.5, 0.5])

    def test_against_grid_search(self):
        v = np.array([0.8, 0.4, -0.2])
        step_ = 1e-3
        a = np.arange(0, 1 + step_ / 2, step_)
        A, B = np.meshgrid(a, a, indexing="ij")
        C = 1 - A - B
        ok = C >= -1e-12
        d = (A - v[0]) ** 2 + (B - v[1]) ** 2 + (C - v[2]) ** 2
        d[~ok] = np.inf
        i = np.unravel_index(np.argmin(d), d.shape)
        assert project_simplex(v) == pytest.approx([A[i], B[i], C[i]], abs=step_)
        assert project_simplex(v) == pytest.approx([0.7, 0.3, 0.0])

    @given(v=st.lists(finite, min_size=1, max_size=6), data=st.data())
    @settings(max_examples=150, deadline=None)
    def test_feasible_idempotent_optimal(self, v, data):
        v = np.asarray(v)
        p = project_simplex(v)
        assert p.min() >= 0 and p.sum() == pytest.approx(1.0)
        assert project_simplex(p) == pytest.approx(p, abs=1e-12)
        w = np.asarray(data.draw(st.lists(st.floats(0, 1), min_size=len(v), max_size=len(v))))
        if w.sum() > 0:
            c = w / w.sum()
            assert np.linalg.norm(p - v) <= np.linalg.norm(c - v) + 1e-9

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            project_simplex([np.nan, 1.0])


class TestRounding:
    @pytest.mark.parametrize(
        "x,K,expected",
        [((0.5, 0.5), 5, (2, 3)), ((1, 0, 0), 7, (7, 0, 0)), ((1 / 3, 1 / 3, 1 / 3), 100, (33, 33, 34))],
    )
    def test_examples(self, x, K, expected):
        assert round_allocation(x, K) == expected

    @given(w=st.lists(st.floats(0, 1), min_size=1, max_size=6), K=st.integers(0, 500))
    @settings(max_examples=200, deadline=None)
    def test_valid_and_close(self, w, K):
        w = np.asarray(w)
        x = w / w.sum() if w.sum() > 0 else np.full(len(w), 1 / len(w))
        k = np.asarray(round_allocation(x, K))
        assert k.sum() == K and k.min() >= 0
        assert np.all(np.abs(k - x * K) < len(x))


class TestSubgradient:
    def test_loaded_single_path(self, rng):
        s = rng.exponential(5.0, (1000, 1))
        g = estimate_subgradient([1.0], s, 0.1, [100.0])
        assert g == pytest.approx([s.mean()])

    def test_empty_system(self, rng):
        s = rng.exponential(1.0, (200, 3))
        assert np.all(estimate_subgradient([0.3, 0.3, 0.4], s, 1e6, np.zeros(3)) == 0)

    def test_maximizer_only(self):
        s = np.array([[1.0, 3.0], [5.0, 1.0]])
        g = subgradient_samples([0.5, 0.5], s, 0.2, [0.0, 0.0])
        assert g.tolist() == [[0.0, 3.0], [5.0, 0.0]]

    def test_tie_goes_to_lowest_index(self):
        g = subgradient_samples([0.5, 0.5], np.array([[2.0, 2.0]]), 0.1, [0.0, 0.0])
        assert g.tolist() == [[2.0, 0.0]]

    def test_finite_differences(self, rng):
        x = np.array([0.55, 0.45])
        samples = np.column_stack([rng.gamma(20, 1 / 2.0, 10_000), rng.gamma(20, 1 / 1.5, 10_000)])
        base = np.array([1.5, 0.4])
        t = 4.0
        contrib = subgradient_samples(x, samples, t, base)
        g = contrib.mean(axis=0)
        se = contrib.std(axis=0, ddof=1) / np.sqrt(len(contrib))
        h = 1e-3
        for n in range(2):
            e = np.zeros(2)
            e[n] = h
            fd = (mc_cost(x + e, samples, t, base) - mc_cost(x - e, samples, t, base)) / (2 * h)
            assert abs(g[n] - fd) <= 3 * se[n]


class TestChainBase:
    def test_equals_backlog(self, rng):
        x = rng.dirichlet([1, 1], 40)
        s = rng.exponential(2.0, (40, 2))
        t = rng.exponential(1.0, 40)
        W = lindley_waiting(x * s, t)
        backlog = np.maximum(0, chain_base(x, s, t))
        # last-batch backlog per path from the recursion
        cur = np.zeros(2)
        for j in range(40):
            cur = np.maximum(0, cur + x[j] * s[j] - t[j])
        assert backlog == pytest.approx(cur)
        assert W[-1] <= cur.max() + x[-1] @ s[-1]

    def test_regeneration_truncation_exact(self, rng):
        x = np.full((200, 2), 0.5)
        s = rng.exponential(1.0, (200, 2))
        t = rng.exponential(1.2, 200)
        inc = (x * s - t[:, None])
        cur = np.zeros(2)
        regens = []
        for j in range(200):
            cur = np.maximum(0, cur + inc[j])
            if not cur.any():
                regens.append(j + 1)
        r = regens[len(regens) // 2]
        end = max(j for j in range(r + 1, 200) if j not in regens)
        full = chain_base(x[:end], s[:end], t[:end])
        cut = chain_base(x[r:end], s[r:end], t[r:end])
        assert full == pytest.approx(cut, abs=1e-12)

    def test_sampled_histories(self, rng):
        s = rng.exponential(1.0, (7, 30, 3))
        x = np.full((30, 3), 1 / 3)
        out = chain_base(x, s, np.full(30, 0.2))
        assert out.shape == (7, 3)
        assert out[2] == pytest.approx(chain_base(x, s[2], np.full(30, 0.2)))


class TestStep:
    def test_zero_gradient(self):
        x = np.array([0.2, 0.8])
        assert step(x, np.zeros(2), 0.1) == pytest.approx(x)

    def test_descent_moves_away(self):
        x1 = step([0.5, 0.5], [1.0, 0.0], 0.1)
        assert x1[0] < 0.5 < x1[1]

    def test_paper_sign(self):
        x1 = step([0.5, 0.5], [1.0, 0.0], 0.1, paper_sign=True)
        assert x1[0] > 0.5

    def test_needs_positive_rate(self):
        with pytest.raises(ValueError):
            step([1.0], [0.0], 0.0)


def _info(j, alloc, services, t, backlog, nxt, states=(None, None)):
    return BatchInfo(j, sum(alloc), tuple(alloc), np.asarray(services, float), t, np.asarray(backlog, float),
                     np.asarray(nxt, float), states)


class TestSamplers:
    paths = PathConfig((Exponential(2.0), Exponential(1.0)))

    def test_ose_single_observed_sample(self, rng):
        smp = OneSampleSampler()
        smp.reset(self.paths, rng)
        assert smp.draw(10).tolist() == [[0.0, 0.0]]
        smp.observe(_info(0, (4, 0), [2.0, 0.0], 1.0, [0, 0], [1, 0]))
        # unobserved path borrows the observed per-packet time
        assert smp.draw(10).tolist() == [[5.0, 5.0]]
        smp.observe(_info(1, (3, 1), [0.6, 2.0], 1.0, [0, 0], [0, 0]))
        np.testing.assert_allclose(smp.draw(10), [[2.0, 20.0]])

    def test_posterior_concentrates(self, rng):
        smp = PosteriorSampler(20_000)
        smp.reset(self.paths, rng)
        for j in range(200):
            smp.observe(_info(j, (50, 50), [25.0, 50.0], 1.0, [0, 0], [0, 0]))
        assert smp.draw(10).mean(axis=0) == pytest.approx([5.0, 10.0], rel=0.01)

    def test_oracle_uses_true_state(self, rng):
        mm = MmppParams(np.array([0.5, 0.5]), np.eye(2), np.array([1.0, 100.0]))
        paths = PathConfig((MarkovModulatedExp(mm),))
        smp = OracleSampler(5000)
        smp.reset(paths, rng)
        smp.observe(BatchInfo(0, 1, (1,), np.ones(1), 1.0, np.zeros(1), np.zeros(1), (1,)))
        assert smp.draw(10).mean() == pytest.approx(0.1, rel=0.05)

    def test_factory(self):
        assert make_sampler("ose").n_samples == 1
        with pytest.raises(ValueError):
            make_sampler("nope")


class TestAdaptiveScheduler:
    def test_first_batch_uniform(self):
        sch = AdaptiveScheduler(OracleSampler(10))
        sch.reset(PathConfig((Exponential(1.0),) * 4), np.random.default_rng(0))
        assert sch.allocate(0, 10, np.zeros(4)) == (2, 2, 2, 4)

    def test_learns_toward_fast_path(self):
        traffic = TrafficConfig(Exponential(1 / 6.0), FixedBatches(20), 3000)
        paths = PathConfig((Exponential(5.0), Exponential(1.0)))
        sch = AdaptiveScheduler(OracleSampler(50), eta=5e-3)
        ad = simulate(traffic, paths, sch, seed=3)
        uniform = simulate(traffic, paths, StaticScheduler([0.5, 0.5]), seed=3)
        assert ad.proportions[-500:, 0].mean() > 0.7
        assert ad.waiting.mean() < uniform.waiting.mean()

    @pytest.mark.parametrize("history", ["observed", "resampled"])
    @pytest.mark.parametrize("sampler", ["oracle", "iid_posterior", "ose"])
    def test_runs(self, history, sampler):
        traffic = TrafficConfig(Exponential(0.4), PoissonBatches(5), 200)
        paths = PathConfig((Exponential(2.0), Exponential(3.0), Exponential(1.0)))
        T = simulate(traffic, paths, AdaptiveScheduler(make_sampler(sampler, 20), eta=1e-2, history=history), seed=1)
        assert np.all(np.abs(T.proportions.sum(axis=1) - 1) < 1e-12)
        assert np.array_equal(T.alloc.sum(axis=1), T.sizes)

    def test_observed_history_matches_explicit_chain(self):
        """The backlog fed to the estimator equals the chain value rebuilt from the realized history."""
        traffic = TrafficConfig(Exponential(0.3), FixedBatches(6), 80)
        paths = PathConfig((Exponential(2.0), Exponential(3.0)))
        T = simulate(traffic, paths, StaticScheduler([0.4, 0.6]), seed=9)
        for j in (10, 40, 79):
            rebuilt = chain_base(np.ones((j, 2)), T.services[:j], T.interarrival[:j])
            assert rebuilt == pytest.approx(T.backlog[j], abs=1e-9)
