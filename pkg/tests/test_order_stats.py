import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from fjupload.distributions import Exponential, LogNormal, Weibull, chunk_cdf
from fjupload.order_stats import (
    MAX_PATHS,
    cdf_vector,
    d_operator,
    erlang_product_integral,
    eta_r,
    mean_upload_latency,
    mu_operator,
)


def erlangs(ks, rates):
    return [chunk_cdf(Exponential(r), k) for k, r in zip(ks, rates)]


def quad_order_stat(ks, rates, r):
    """``E[Y_r] = int P(fewer than r chunks done by x) dx`` by adaptive quadrature."""
    dists = [stats.gamma(k, scale=1 / lam) for k, lam in zip(ks, rates)]
    n = len(dists)

    def tail(x):
        F = [d.cdf(x) for d in dists]
        total = 0.0
        for done in range(r):
            for S in itertools.combinations(range(n), done):
                p = 1.0
                for i in range(n):
                    p *= F[i] if i in S else 1 - F[i]
                total += p
        return total

    return integrate.quad(tail, 0, np.inf, epsabs=1e-13, epsrel=1e-12, limit=400)[0]


class TestDOperator:
    def test_min_of_two_unit_exponentials(self):
        assert d_operator(2, erlangs((1, 1), (1, 1))) == pytest.approx(0.5)

    def test_single_mean(self):
        assert d_operator(1, erlangs((1,), (4.0,))) == pytest.approx(0.25)

    def test_sum_of_means(self):
        assert d_operator(1, erlangs((1, 1), (1, 2))) == pytest.approx(1.5)

    def test_range_checked(self):
        with pytest.raises(ValueError):
            d_operator(3, erlangs((1, 1), (1, 1)))

    def test_too_many_paths(self):
        with pytest.raises(ValueError, match="1..20"):
            d_operator(1, erlangs((1,) * (MAX_PATHS + 1), (1.0,) * (MAX_PATHS + 1)))

    def test_erlang_product_large_counts(self):
        # log-space accumulation keeps chunks of 500 packets finite
        v = erlang_product_integral((500, 400), (1.0, 0.9))
        exact = integrate.quad(
            lambda x: stats.gamma(500).sf(x) * stats.gamma(400, scale=1 / 0.9).sf(x), 0, 2000, points=[444], limit=400
        )[0]
        assert v == pytest.approx(exact, rel=1e-9)


class TestMuOperator:
    def test_min_two(self):
        assert mu_operator(1, erlangs((1, 1), (1, 1))) == pytest.approx(0.5)

    def test_max_two(self):
        assert mu_operator(2, erlangs((1, 1), (1, 1))) == pytest.approx(1.5)

    def test_single_path(self):
        assert mu_operator(1, erlangs((7,), (2.0,))) == pytest.approx(3.5)

    @pytest.mark.parametrize(
        "ks,rates",
        [((3, 4, 2), (1.0, 2.0, 0.5)), ((5, 1, 5), (1.0, 5.0, 10.0)), ((2, 2, 2, 2), (1.0, 1.5, 2.0, 3.0))],
    )
    def test_every_order_against_quadrature(self, ks, rates):
        F = erlangs(ks, rates)
        for r in range(1, len(ks) + 1):
            assert mu_operator(r, F) == pytest.approx(quad_order_stat(ks, rates, r), rel=1e-9)

    @given(
        ks=st.lists(st.integers(1, 8), min_size=2, max_size=4),
        data=st.data(),
    )
    @settings(max_examples=40, deadline=None)
    def test_monotone_and_sum_identity(self, ks, data):
        rates = data.draw(st.lists(st.floats(0.2, 5.0), min_size=len(ks), max_size=len(ks)))
        F = erlangs(ks, rates)
        mus = [mu_operator(r, F) for r in range(1, len(ks) + 1)]
        assert all(a <= b + 1e-9 for a, b in zip(mus, mus[1:]))
        assert sum(mus) == pytest.approx(sum(k / lam for k, lam in zip(ks, rates)), rel=1e-9)

    def test_monte_carlo(self, rng):
        ks, rates = (3, 2, 4), (1.0, 0.7, 2.0)
        draws = np.sort(np.column_stack([rng.gamma(k, 1 / lam, 10**6) for k, lam in zip(ks, rates)]), axis=1)
        F = erlangs(ks, rates)
        for r in range(1, 4):
            col = draws[:, r - 1]
            assert abs(mu_operator(r, F) - col.mean()) < 3 * col.std() / math.sqrt(len(col))

    def test_mixed_lattice_and_erlang(self):
        # Weibull shape 1 is an exponential: lattice and closed form must agree
        lattice = mean_upload_latency((4, 3), [Weibull(1.0, 1.0), Exponential(2.0)])
        closed = mean_upload_latency((4, 3), [Exponential(1.0), Exponential(2.0)])
        assert lattice == pytest.approx(closed, rel=1e-5)


class TestMeanUploadLatency:
    def test_corner(self):
        assert mean_upload_latency((9, 0), [Exponential(3.0), Exponential(1.0)]) == pytest.approx(3.0)

    def test_two_unit_exponentials(self):
        assert mean_upload_latency((1, 1), [Exponential(1.0), Exponential(1.0)]) == pytest.approx(1.5)

    def test_closed_form_two_terms(self):
        # E[max] = E[X1] + E[X2] - E[min] = 1 + 1 - 1/2
        assert mean_upload_latency((1, 1), [Exponential(1.0)] * 2) == pytest.approx(1 + 1 - 0.5)

    def test_empty(self):
        assert mean_upload_latency((0, 0), [Exponential(1.0)] * 2) == 0.0

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            mean_upload_latency((-1, 2), [Exponential(1.0)] * 2)

    @pytest.mark.parametrize(
        "alloc,rates,expected",
        [
            # adaptive quadrature of int (1 - prod F)
            ((7, 5, 3), (1.0, 2.0, 3.0), 7.035127084390569),
            ((10, 20), (1.0, 2.0), 11.530152431924908),
            ((33, 17), (4.0, 2.0), 9.373235028914142),
            ((35, 15), (4.0, 2.0), 9.231413819608628),
        ],
    )
    def test_frozen_quadrature_values(self, alloc, rates, expected):
        assert mean_upload_latency(alloc, [Exponential(r) for r in rates]) == pytest.approx(expected, rel=1e-10)

    def test_lognormal_monte_carlo(self, rng):
        models = [Weibull(1.0, 1.5), LogNormal(0.0, 0.25)]
        alloc = (27, 23)
        a = rng.weibull(1.5, (400_000, 27)).sum(axis=1)
        b = rng.lognormal(0.0, 0.25, (400_000, 23)).sum(axis=1)
        m = np.maximum(a, b)
        assert abs(mean_upload_latency(alloc, models) - m.mean()) < 3 * m.std() / math.sqrt(len(m))


class TestEtaR:
    def test_full_order_is_psi(self):
        models = [Exponential(1.0), Exponential(2.0), Exponential(3.0)]
        assert eta_r((2, 2, 2), models, 3, 6) == pytest.approx(mean_upload_latency((2, 2, 2), models))

    def test_replication_of_one_packet(self):
        assert eta_r((1, 1, 1), [Exponential(1.0)] * 3, 1, 1) == pytest.approx(1 / 3)

    def test_three_two_allocation_against_quadrature(self):
        models = [Exponential(1.0), Exponential(5.0), Exponential(10.0)]
        exact = quad_order_stat((5, 1, 5), (1.0, 5.0, 10.0), 2)
        assert eta_r((5, 1, 5), models, 2, 6) == pytest.approx(exact, rel=1e-10)
        assert exact == pytest.approx(0.5262179296815188, rel=1e-10)

    def test_membership_violation_names_subset(self):
        with pytest.raises(ValueError, match=r"paths \(0, 1\)"):
            eta_r((4, 1, 5), [Exponential(1.0)] * 3, 2, 6)

    def test_entries_must_be_positive(self):
        with pytest.raises(ValueError):
            eta_r((0, 6, 6), [Exponential(1.0)] * 3, 1, 6)

    def test_cdf_vector_zero_entries(self):
        F = cdf_vector((0, 2), [Exponential(1.0)] * 2)
        assert F[0].mean == 0.0 and F[0].cdf(0.0) == 1.0
