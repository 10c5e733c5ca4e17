import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from fjupload.distributions import (
    AnalyticCdf,
    DiscretizedCdf,
    DomainError,
    Exponential,
    Gamma,
    GridError,
    GridSpec,
    LogNormal,
    MarkovModulatedExp,
    MmppParams,
    Weibull,
    chunk_cdf,
    laplace_log,
    mean_rate,
    mgf_log,
    sample_chain,
    sample_chunks,
    sample_packets,
)


class TestModels:
    @pytest.mark.parametrize(
        "ctor,args",
        [(Exponential, (0.0,)), (Gamma, (1.0, -1.0)), (Weibull, (0.0, 1.0)), (LogNormal, (0.0, 0.0))],
    )
    def test_rejects_bad_parameters(self, ctor, args):
        with pytest.raises(ValueError):
            ctor(*args)

    def test_moments(self):
        assert Gamma(2, 40).mean == pytest.approx(0.05)
        assert Weibull(1, 1).var == pytest.approx(1.0)
        assert LogNormal(0, 0.25).mean == pytest.approx(math.exp(0.25**2 / 2))

    def test_stationary_weighted_rate(self):
        params = MmppParams(np.array([0.5, 0.5]), np.array([[0.5, 0.5], [0.5, 0.5]]), np.array([1.0, 3.0]))
        assert mean_rate(MarkovModulatedExp(params)) == pytest.approx(2.0)

    def test_mmpp_validation(self):
        with pytest.raises(ValueError):
            MmppParams(np.array([0.5, 0.6]), np.eye(2), np.array([1.0, 2.0]))
        with pytest.raises(ValueError):
            MmppParams(np.array([0.5, 0.5]), np.array([[0.9, 0.2], [0.5, 0.5]]), np.array([1.0, 2.0]))


class TestChunkCdf:
    def test_erlang_three(self):
        F = chunk_cdf(Exponential(1.0), 3)
        x = np.array([0.5, 1.0, 4.0])
        assert F.cdf(x) == pytest.approx(1 - np.exp(-x) * (1 + x + x**2 / 2), abs=1e-14)

    def test_single_exponential(self):
        F = chunk_cdf(Exponential(2.0), 1)
        assert isinstance(F, AnalyticCdf)
        assert F.mean == pytest.approx(0.5)

    def test_gamma_shape_scales(self):
        F = chunk_cdf(Gamma(2.0, 40.0), 5)
        assert (F.shape, F.rate) == (10.0, 40.0)

    def test_weibull_shape_one_matches_erlang(self):
        F = chunk_cdf(Weibull(1.0, 1.0), 2)
        assert isinstance(F, DiscretizedCdf)
        x = F.grid
        exact = stats.gamma(2).cdf(x)
        assert np.max(np.abs(F.values - exact)) < F.step

    def test_zero_chunk_rejected(self):
        with pytest.raises(ValueError):
            chunk_cdf(Exponential(1.0), 0)

    def test_modulated_has_no_cdf(self):
        with pytest.raises(TypeError):
            chunk_cdf(MarkovModulatedExp(MmppParams.symmetric(1.0)), 2)

    def test_fixed_support_too_small_names_bound(self):
        with pytest.raises(GridError) as err:
            chunk_cdf(Weibull(1.0, 1.0), 2, GridSpec(upper=10.0))
        assert err.value.required_upper > 10.0
        assert "T >=" in str(err.value)

    @pytest.mark.parametrize(
        "model,k",
        [(Weibull(1.0, 1.5), 10), (LogNormal(0.0, 0.25), 50), (Weibull(2.0, 0.8), 3), (LogNormal(-1.0, 0.6), 7)],
    )
    def test_lattice_mean_is_k_times_packet_mean(self, model, k):
        F = chunk_cdf(model, k)
        assert F.mean == pytest.approx(k * model.mean, rel=1e-5)

    @given(
        scale=st.floats(0.2, 5.0),
        shape=st.floats(0.7, 4.0),
        k=st.integers(1, 12),
    )
    @settings(max_examples=25, deadline=None)
    def test_lattice_cdf_valid(self, scale, shape, k):
        F = chunk_cdf(Weibull(scale, shape), k, GridSpec(step_exp2=11))
        v = F.values
        assert np.all(np.diff(v) >= 0)
        assert v.min() >= 0 and v.max() <= 1
        assert v[-1] >= 1 - 1e-9


class TestTransforms:
    def test_exponential_plug_in(self):
        assert mgf_log(Exponential(2.0), 1, 1.0) == pytest.approx(math.log(2))

    def test_zero_argument(self):
        assert mgf_log(Exponential(3.0), 7, 0.0) == 0.0

    def test_gamma_against_quadrature(self):
        g = stats.gamma(2, scale=1 / 40)
        numeric = math.log(integrate.quad(lambda x: math.exp(10 * x) * g.pdf(x), 0, 5, epsabs=1e-15)[0])
        assert mgf_log(Gamma(2.0, 40.0), 1, 10.0) == pytest.approx(-2 * math.log(0.75), rel=1e-14)
        assert numeric == pytest.approx(-2 * math.log(0.75), rel=1e-12)

    def test_domain_error_carries_boundary(self):
        with pytest.raises(DomainError) as err:
            mgf_log(Exponential(2.0), 1, 2.0)
        assert err.value.boundary == 2.0

    @pytest.mark.parametrize("model", [Exponential(3.0), Gamma(1.5, 2.0), Weibull(1.0, 1.5), Weibull(1.0, 1.0)])
    def test_additive_in_chunk_size(self, model):
        assert mgf_log(model, 4, 0.3) == pytest.approx(4 * mgf_log(model, 1, 0.3), rel=1e-12)

    def test_weibull_lattice_against_quadrature(self):
        w = stats.weibull_min(1.5, scale=1.0)
        exact = math.log(integrate.quad(lambda x: math.exp(0.8 * x) * w.pdf(x), 0, 60, epsabs=1e-14, limit=400)[0])
        assert mgf_log(Weibull(1.0, 1.5), 1, 0.8) == pytest.approx(exact, rel=1e-7)

    def test_laplace_of_exponential(self):
        assert laplace_log(Exponential(0.5), 1.0) == pytest.approx(math.log(0.5 / 1.5))


class TestSampling:
    def test_chunk_mean(self, rng):
        s = sample_chunks(Weibull(1.0, 2.0), 5, rng, 200_000)
        assert s.mean() == pytest.approx(5 * Weibull(1.0, 2.0).mean, rel=5e-3)

    def test_chain_frozen(self, rng):
        params = MmppParams(np.array([0.0, 1.0]), np.eye(2), np.array([1.0, 2.0]))
        assert np.all(sample_chain(params, 100, rng) == 1)

    def test_chain_occupancy(self, rng):
        params = MmppParams.symmetric(1.0, (1.0, 2.0, 4.0), self_loop=0.7)
        s = sample_chain(params, 300_000, rng)
        assert np.bincount(s, minlength=3) / len(s) == pytest.approx(np.full(3, 1 / 3), abs=0.01)

    def test_modulated_packets_mean(self, rng):
        params = MmppParams.symmetric(2.0, self_loop=0.9)
        x = sample_packets(MarkovModulatedExp(params), rng, 400_000)
        assert x.mean() == pytest.approx(params.mean_time(), rel=0.02)
