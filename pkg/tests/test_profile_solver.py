import math

import numpy as np
import pytest

from implosion.phase_plane import ModelParams, critical_points, eval_field, PhasePoint
from implosion.profile_solver import (
    BRANCH_EXTERIOR,
    BRANCH_INTERIOR,
    GridOutOfRange,
    GridSpec,
    PropertyViolation,
    SeriesDivergence,
    SolverTolerances,
    build_branches,
    integrate_branch,
    local_series_at_P2,
    loglog_slope,
    origin_series,
    reconstruct_profile,
    regular_interior,
    sample_curves,
    verify_profile,
)

P = ModelParams(3.0, 1.2)
R_EYE = 3.0 / (1.0 + math.sqrt(2.0))


@pytest.fixture(scope="module")
def cp():
    return critical_points(P)


class TestSonicSeries:
    @pytest.mark.parametrize("order", [2, 4, 8])
    def test_residual_small_at_offset(self, cp, order):
        s = local_series_at_P2(cp, P, order=order)
        assert s.residual(1e-3, P) < 1e-10
        assert s.residual(-1e-3, P) < 1e-10

    def test_residual_order(self, cp):
        # residual of truncation order n scales like t^(n+1)
        s = local_series_at_P2(cp, P, order=2)
        r1, r2 = s.residual(1e-2, P), s.residual(5e-3, P)
        assert 2.0 ** 2.5 < r1 / r2 < 2.0 ** 3.5

    def test_order_zero_is_P2(self, cp):
        s = local_series_at_P2(cp, P, order=4)
        assert s.S[0] == cp.P2.S and s.W[0] == cp.P2.W

    def test_first_order_ratio_is_a_slope(self, cp):
        s = local_series_at_P2(cp, P, order=4)
        assert s.W[1] / s.S[1] == pytest.approx(cp.slopes_at_P2[s.slope_index], rel=1e-12)

    def test_order_out_of_range(self, cp):
        with pytest.raises(ValueError):
            local_series_at_P2(cp, P, order=0)

    def test_bad_slope_index_rejected_or_diverges(self, cp):
        # the other eigen-direction either diverges or gives a valid but different branch
        try:
            s = local_series_at_P2(cp, P, order=8, slope_index=1 - local_series_at_P2(cp, P, 2).slope_index)
        except SeriesDivergence:
            return
        assert s.residual(1e-3, P) < 1e-8


class TestOriginSeries:
    def test_leading_coefficients(self):
        org = origin_series(P, 8)
        assert org.a[0] == P.W_e
        assert org.g[0] == pytest.approx(0.0, abs=1e-15)

    def test_W_tends_to_We(self):
        org = origin_series(P, 8)
        assert abs(org.W(1e-8) - P.W_e) < 1e-8


class TestBranches:
    def test_exterior_tail_slopes(self, profile, curves):
        ext = curves[1]
        assert ext.branch == BRANCH_EXTERIOR
        x, S, W = ext.samples.T
        tail = S < 1e-4
        assert tail.sum() > 10
        for f in (S, W):
            k = np.polyfit(x[tail], np.log(f[tail]), 1)[0]
            assert k == pytest.approx(-profile.r, rel=0.02)

    def test_returned_terminals(self, curves):
        assert curves[0].terminal == "reached_We"
        assert curves[0].branch == BRANCH_INTERIOR
        assert curves[1].terminal == "reached_S_zero"

    def test_samples_monotone_in_x(self, curves):
        for c in curves:
            assert np.all(np.diff(c.samples[:, 0]) > 0)

    def test_exterior_below_sonic_line(self, curves, profile):
        _, S, W = curves[1].samples.T
        below = S < profile.meta["P2_S"]
        assert np.all(1.0 - W[below] - S[below] > 0)

    @pytest.mark.parametrize("factor", [0.98, 1.02])
    def test_perturbed_speed_fails(self, profile, factor):
        params = ModelParams(3.0, profile.r * factor)
        series = local_series_at_P2(critical_points(params), params, order=48)
        interior = integrate_branch(series, params, BRANCH_INTERIOR)
        exterior = integrate_branch(series, params, BRANCH_EXTERIOR)
        failures = {"hit_barrier", "hit_sonic"}
        assert interior.terminal in failures or exterior.terminal in failures
        assert interior.terminal != "reached_We"

    def test_regular_interior_gap_vanishes_at_speed(self, profile, curves):
        # the zero sits just past the beta = 3 resonance, so nearby gaps share a sign
        assert abs(curves[0].discriminator) < 1e-9
        for f in (0.995, 1.005):
            params = ModelParams(3.0, profile.r * f)
            series = local_series_at_P2(critical_points(params), params, order=48)
            assert abs(regular_interior(series, params).discriminator) > 1e-4

    def test_grid_out_of_range(self, curves, profile):
        with pytest.raises(GridOutOfRange):
            sample_curves(curves, profile.params, [math.exp(curves[1].x_range[1]) * 10])


class TestProfile:
    def test_speed_inside_bracket(self, profile):
        assert 1.0 < profile.r < R_EYE

    def test_slope_at_origin(self, profile):
        assert abs(profile.dUbar[0] + (profile.r - 1) / (2 * profile.alpha)) < 1e-4
        assert profile.Ubar[0] == 0.0

    def test_sonic_radius(self, profile):
        U, Sg = profile.evaluate(np.array([profile.xi_s]))[:2]
        assert abs(profile.xi_s + U[0] - profile.alpha * Sg[0]) < 1e-10

    def test_sonic_point_is_P2(self, profile):
        cp = critical_points(profile.params)
        W = -profile.evaluate([profile.xi_s])[0][0] / profile.xi_s
        assert W == pytest.approx(cp.P2.W, abs=1e-10)
        D = eval_field(PhasePoint(cp.P2.S, cp.P2.W), profile.params)
        assert max(map(abs, D)) < 1e-10

    def test_far_field_constant(self, profile):
        xi = profile.grid
        tail = xi >= xi[-1] / 10
        c = np.abs(profile.Ubar[tail]) * xi[tail] ** (profile.r - 1)
        assert c.max() / c.min() - 1 < 0.02

    def test_far_field_slopes(self, profile, report):
        e = -(profile.r - 1)
        assert abs(report.farfield_slope_U - e) < 0.05
        assert abs(report.farfield_slope_Sigma - e) < 0.05
        assert abs(report.farfield_slope_dU - (e - 1)) < 0.1

    @pytest.mark.parametrize("k", [0, 1, 2])
    def test_derivative_decay_induction(self, profile, k):
        xi = profile.grid
        tail = xi >= xi[-1] / 10
        f = (profile.Ubar, profile.dUbar, profile.d2Ubar)[k]
        assert abs(loglog_slope(xi[tail], f[tail]) - (1 - profile.r - k)) < 0.1

    def test_positive_and_repulsive(self, profile, report):
        assert np.all(profile.Sigmabar > 0)
        assert report.rep1_margin > 0 and report.rep2_min > 0 and report.rep22_margin > 0
        assert profile.xi_1 > profile.xi_s
        assert report.exterior_sonic_margin > 0 and report.interior_containment
        assert report.passed

    def test_rep22_curve_form(self, profile, report):
        xi = profile.grid[1:]
        assert np.all(-profile.Ubar[1:] / xi < 1 - report.rep22_margin + 1e-14)

    def test_derivatives_match_differences(self, profile):
        xi = np.linspace(0.5, 5.0, 40)
        h = 1e-5
        v, vp, vm = (profile.evaluate(xi + d) for d in (0.0, h, -h))
        np.testing.assert_allclose(v[2], (vp[0] - vm[0]) / (2 * h), atol=1e-7)
        np.testing.assert_allclose(v[3], (vp[1] - vm[1]) / (2 * h), atol=1e-7)
        np.testing.assert_allclose(v[4], (vp[2] - vm[2]) / (2 * h), atol=1e-6)

    def test_damping_at_origin(self, profile, report):
        r, a = profile.r, profile.alpha
        assert report.damping_at_origin == pytest.approx(r - (r - 1) / a, abs=1e-4)
        assert report.damping_at_origin > 0
        assert not report.damping_sign_matches_prose

    def test_interpolant_matches_sampler(self, profile):
        xi = np.geomspace(1e-3, 1e2, 57) * 1.013
        exact = profile.evaluate(xi)
        approx = profile.with_sampler(None).evaluate(xi)
        # the cell just outside xi_s carries a large third derivative (beta near 3)
        np.testing.assert_allclose(approx[:2], exact[:2], rtol=5e-4, atol=1e-10)
        away = np.abs(np.log(xi / profile.xi_s)) > 0.1
        np.testing.assert_allclose(approx[:2, away], exact[:2, away], rtol=1e-7, atol=1e-10)

    def test_deterministic(self, profile, curves):
        params = profile.params
        a = reconstruct_profile(build_branches(params, xi_s=profile.xi_s), params)
        b = reconstruct_profile(build_branches(params, xi_s=profile.xi_s), params)
        for ca, cb in zip(a.columns(), b.columns()):
            assert np.array_equal(ca, cb)

    def test_short_grid_rejected(self, curves, profile):
        short = reconstruct_profile(curves, profile.params, GridSpec(hi_factor=10.0))
        with pytest.raises(ValueError):
            verify_profile(short)

    def test_violation_raised(self, profile):
        bad = profile.with_sampler(None)
        from dataclasses import replace
        bad = replace(bad, Ubar=bad.Ubar - 2.0 * bad.grid)
        with pytest.raises(PropertyViolation):
            verify_profile(bad)


@pytest.mark.slow
def test_gamma_five_thirds_speed_in_window():
    from implosion.profile_solver import find_admissible_r

    tol = SolverTolerances(beta_max=math.inf)
    r, curves = find_admissible_r(5.0 / 3.0, tol=tol)
    assert 1.13273 - 5e-5 < r < 1.13398
    assert curves[0].terminal == "reached_We"
