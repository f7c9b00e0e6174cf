import time
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from implosion.weights import (
    CascadeFailure,
    ProfileSamples,
    build_phi1,
    build_phiA,
    damping_direct,
    damping_terms,
    japanese,
    repulsive_expression,
    smoothstep_down,
    verification_grid,
    verify_repulsive_weight,
    verify_weights,
)


@pytest.fixture(scope="module")
def ps(profile):
    return ProfileSamples.from_profile(profile, verification_grid(profile))


@pytest.fixture(scope="module")
def swirl_report(weights, profile):
    return verify_weights(weights, profile)


class TestSmoothstep:
    @given(st.floats(min_value=0.1, max_value=5), st.floats(min_value=0.1, max_value=5))
    def test_plateaus_and_monotone(self, a, width):
        b = a + width
        xi = np.linspace(0, b + 3, 2001)
        v, d = smoothstep_down(xi, a, b)
        assert np.all(v[xi <= a] == 1.0) and np.all(v[xi >= b] == 0.5)
        assert np.all(d <= 0)
        assert np.all(np.diff(v) <= 1e-15)

    def test_derivative_consistent(self):
        xi = np.linspace(0.9, 3.1, 101)
        h = 1e-6
        v, d = smoothstep_down(xi, 1.0, 3.0)
        vp = smoothstep_down(xi + h, 1.0, 3.0)[0]
        vm = smoothstep_down(xi - h, 1.0, 3.0)[0]
        np.testing.assert_allclose(d, (vp - vm) / (2 * h), atol=1e-8)


class TestPhi1:
    def test_plateau_on_sonic_ball(self, weights, profile):
        xi = np.linspace(0, profile.xi_s, 50)
        assert np.all(weights.phi_b(xi) == 1.0)
        np.testing.assert_array_equal(weights.phi_1(xi), weights.phi_f(xi))

    def test_bulk_shape(self, weights):
        c = weights.cascade
        assert c.xi_s < c.R1 < c.R2
        xi = np.linspace(c.R1, c.R2, 200)
        assert np.all(weights.dphi_b(xi) <= -c.c1 * (1 - 1e-12))
        assert np.all(weights.phi_b(np.linspace(c.R2 + 1, 50, 30)) == 0.5)
        assert np.all(np.diff(weights.phi_b(np.linspace(0, 40, 4001))) <= 0)

    def test_R1_inside_repulsive_zone(self, weights, profile):
        assert weights.cascade.R1 < profile.xi_1

    def test_positive_mu1(self, weights, profile):
        rep = verify_repulsive_weight(weights, profile)
        assert weights.cascade.mu1 > 0
        assert rep.margin_ell0 > 0 and rep.margin_ell1 > 0
        assert rep.passed

    def test_ell0_dominates_ell1(self, weights, ps):
        v0 = -japanese(ps.xi) * repulsive_expression(weights, ps, 0)
        v1 = -japanese(ps.xi) * repulsive_expression(weights, ps, 1)
        assert np.all(v0 >= v1)

    def test_tail_never_binds(self, weights, profile):
        # phi_1 ~ nu <xi> makes the expression decay like 1/xi, so -<xi> value
        # levels off at a positive constant well above mu1
        rep = verify_repulsive_weight(weights, profile)
        assert rep.expression_tail_limit > 10 * rep.mu1
        assert rep.worst_xi < 100 * profile.xi_s

    def test_phi1_comparable_to_japanese(self, swirl_report):
        C = 10.0
        assert swirl_report.phi1_over_jx_min >= 1 / C
        assert swirl_report.phi1_over_jx_max <= C

    def test_derivative_bounded(self, swirl_report):
        assert swirl_report.dphi1_sup < 1.0

    def test_corrupted_profile_violates(self, weights, profile):
        bad = replace(profile.with_sampler(None), dUbar=profile.dUbar - 1.5)
        rep = verify_repulsive_weight(weights, bad, raise_on_fail=False)
        assert not rep.passed


class TestPhiA:
    def test_beta1_window(self, weights, profile):
        a = weights.A
        assert 3 < a.beta1 < 4
        dU0 = profile.dUbar[0]
        assert (2 * dU0 + profile.r) - (4 - a.beta1) * (1 + dU0) / 2 >= 2 * a.c1 > 0

    def test_I1_plus_I4_at_origin(self, weights, ps):
        I = damping_terms(weights, ps)
        dU0 = ps.dU[0]
        assert ps.xi[0] == 0.0
        expect = 0.5 * weights.A.beta1 * (1 + dU0) + (ps.r - 2)
        assert I[0, 0] + I[3, 0] == pytest.approx(expect, abs=1e-14)

    def test_direct_damping_matches_split(self, weights, ps):
        pos = ps.xi > 0
        np.testing.assert_allclose(damping_terms(weights, ps).sum(axis=0)[pos],
                                   damping_direct(weights, ps)[pos], atol=1e-10)

    def test_lower_bound(self, weights, ps, swirl_report):
        D = damping_terms(weights, ps).sum(axis=0)
        assert weights.A.lambda_tilde > 0
        assert np.all(D >= weights.A.lambda_tilde)
        assert swirl_report.passed

    def test_near_origin_scaling(self, weights):
        xi = np.geomspace(1e-8, 1e-2, 40)
        v = weights.phi_A(xi) * xi ** weights.A.beta1
        assert v.max() / v.min() < 1.01

    def test_ratio_bounds(self, swirl_report):
        assert np.isfinite(swirl_report.ratio_g_over_A_max)
        assert 0 < swirl_report.ratio_g_over_A_far_min <= swirl_report.ratio_g_over_A_far_max < 100

    def test_log_derivative_scale(self, swirl_report):
        assert swirl_report.xi_dlogA_sup < 10

    def test_cutoff_slope_on_middle_zone(self, weights):
        a = weights.A
        xi = np.linspace(a.p, a.q, 50)
        assert np.all(-weights.dg(xi) >= a.c2 * (1 - 1e-12))

    def test_needs_phi1_only_family_to_fail(self, profile):
        with pytest.raises(ValueError):
            build_phi1(profile).phi_A(1.0)

    def test_cascade_failure_without_damping(self, profile):
        bad = replace(profile.with_sampler(None), dUbar=np.concatenate([[-0.9], profile.dUbar[1:]]))
        with pytest.raises(CascadeFailure):
            build_phiA(bad)


def test_build_and_verify_fast(profile):
    t0 = time.perf_counter()
    wf = build_phiA(profile)
    verify_repulsive_weight(wf, profile)
    verify_weights(wf, profile)
    assert time.perf_counter() - t0 < 10
