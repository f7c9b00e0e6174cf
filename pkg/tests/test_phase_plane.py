import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from implosion.phase_plane import (
    BracketError,
    ComplexMiddleRoot,
    ModelParams,
    PhasePoint,
    S2_threshold,
    admissible_bracket,
    critical_points,
    eval_field,
    field,
    field_gradients,
    middle_root,
    roots_Delta1,
    roots_Delta2,
)

P = ModelParams(3.0, 1.2)
R_EYE = 3.0 / (1.0 + math.sqrt(2.0))

speeds = st.floats(min_value=1.0 + 1e-3, max_value=R_EYE - 1e-3)
small_S = st.floats(min_value=1e-4, max_value=0.7)


def brute_roots(f, lo, hi, n=200001):
    w = np.linspace(lo, hi, n)
    v = f(w)
    idx = np.nonzero(np.sign(v[:-1]) * np.sign(v[1:]) < 0)[0]
    return [0.5 * (w[i] + w[i + 1]) for i in idx]


class TestParams:
    def test_derived_constants(self):
        assert P.alpha == 1.0
        assert P.l == 1.0
        assert P.W_e == pytest.approx((P.r - 1.0) / (2 * P.alpha), abs=1e-15)
        assert P.exponent_sigma == pytest.approx(0.2 / 1.2)
        assert P.exponent_omega == pytest.approx(0.2 / 1.2)

    def test_bracket_gamma3(self):
        lo, hi = admissible_bracket(1.0)
        assert lo == 1.0
        assert hi == pytest.approx(1.24264, abs=1e-5)

    def test_bracket_gamma_five_thirds(self):
        a = 1.0 / 3.0
        lo, hi = admissible_bracket(a)
        assert lo == pytest.approx((1 + 2 * a) / (1 + a * math.sqrt(2)), abs=1e-14)
        assert hi == pytest.approx(1 + a / (math.sqrt(a) + 1) ** 2, abs=1e-14)
        # published five-digit window, which rounds the lower end loosely
        assert lo == pytest.approx(1.13273, abs=5e-5)
        assert hi == pytest.approx(1.13398, abs=1e-5)

    def test_alpha_half_excluded(self):
        with pytest.raises(BracketError):
            admissible_bracket(0.5)

    def test_r_outside_rejected(self):
        with pytest.raises(BracketError):
            ModelParams(3.0, 1.3)
        assert ModelParams(3.0, 1.3, check_bracket=False).r == 1.3

    @given(st.floats(min_value=1.01, max_value=10.0))
    def test_l_is_inverse_alpha(self, gamma):
        p = ModelParams(gamma, 1.0, check_bracket=False)
        assert p.l * p.alpha == pytest.approx(1.0, rel=1e-14)


class TestField:
    def test_origin(self):
        assert eval_field(PhasePoint(0.0, 0.0), P) == (1.0, 0.0, 0.0)

    @given(st.floats(min_value=1e-3, max_value=0.999))
    def test_sonic_line(self, S):
        D, _, _ = eval_field(PhasePoint(S, 1.0 - S), P)
        assert abs(D) < 1e-14

    @given(st.floats(min_value=-3, max_value=3))
    def test_S_zero_factorization(self, W):
        _, D1, D2 = eval_field(PhasePoint(0.0, W), P)
        assert D1 == pytest.approx(W * (W - 1) * (W - P.r), abs=1e-14)
        assert D2 == 0.0

    @given(st.floats(min_value=-1, max_value=2), st.floats(min_value=0, max_value=2))
    def test_gradients_match_differences(self, W, S):
        g = field_gradients(W, S, P)
        h = 1e-6
        for j, (dw, ds) in enumerate(((h, 0.0), (0.0, h))):
            fp = np.array(field(W + dw, S + ds, P))
            fm = np.array(field(W - dw, S - ds, P))
            np.testing.assert_allclose(g[:, j], (fp - fm) / (2 * h), atol=1e-7)


class TestDelta1Roots:
    def test_S_zero_exact(self):
        for r in (1.05, 1.2, 1.24):
            assert roots_Delta1(0.0, ModelParams(3.0, r)) == (0.0, 1.0, r)

    def test_matches_brute_force_scan(self):
        W1, W2, W3 = roots_Delta1(0.1, P)
        scan = brute_roots(lambda w: field(w, 0.1, P)[1], -2, 3)
        np.testing.assert_allclose([W1, W2, W3], scan, atol=3e-5)
        assert W1 <= 0 < P.W_e < W2 <= 1 < P.r <= W3

    @given(speeds, st.floats(min_value=1e-4, max_value=5.0))
    def test_ordering_and_residual(self, r, S):
        p = ModelParams(3.0, r)
        try:
            W1, W2, W3 = roots_Delta1(S, p)
        except ComplexMiddleRoot:
            return
        assert W1 <= 0 < p.W_e < W2 <= 1 < r <= W3
        for w in (W1, W2, W3):
            assert abs(field(w, S, p)[1]) < 1e-10 * (1 + S**3)

    @given(speeds)
    def test_middle_root_decreasing(self, r):
        p = ModelParams(3.0, r)
        W2 = middle_root(np.linspace(1e-3, 5.0, 4000), p)
        assert np.all(np.diff(W2) < 0)

    def test_middle_root_vectorised_matches_scalar(self):
        S = np.array([0.05, 0.3, 0.9, 3.0])
        np.testing.assert_allclose(middle_root(S, P), [roots_Delta1(s, P)[1] for s in S], atol=1e-13)


class TestDelta2Roots:
    def test_residual_and_brute_force(self):
        lo, hi = roots_Delta2(0.5, P)
        for w in (lo, hi):
            assert abs(field(w, 0.5, P)[2]) < 1e-12
        scan = brute_roots(lambda w: field(w, 0.5, P)[2], -2, 3)
        np.testing.assert_allclose([lo, hi], scan, atol=3e-5)

    def test_no_real_root_below_threshold(self):
        S0 = S2_threshold(P)
        assert S0 > 0
        S = 0.5 * S0
        assert roots_Delta2(S, P) is None
        W = np.linspace(-5, 5, 100001)
        assert field(W, S, P)[2].min() > 0

    def test_small_S_limit(self):
        # with real roots at S = 0 the limit solves (l+d-1) W^2 - (l+d+lr-r) W + lr = 0
        p = ModelParams(3.0, 1.05)
        a, b, c = p.l + p.d - 1, p.l + p.d + p.l * p.r - p.r, p.l * p.r
        expect = sorted(np.roots([a, -b, c]).real)
        np.testing.assert_allclose(roots_Delta2(1e-8, p), expect, atol=1e-12)

    def test_nonpositive_S_rejected(self):
        with pytest.raises(ValueError):
            roots_Delta2(0.0, P)


class TestCriticalPoints:
    def test_on_sonic_line(self):
        cp = critical_points(P)
        for pt in (cp.P2, cp.P3):
            assert abs(pt.S + pt.W - 1.0) < 1e-12
            assert pt.W == pytest.approx(middle_root(pt.S, P), abs=1e-10)
            assert pt.W > 0
            D = eval_field(pt, P)
            assert max(abs(v) for v in D) < 1e-10
        assert cp.P3.S < cp.P2.S
        assert cp.P5 is not None and cp.P5.W > 0
        assert abs(eval_field(cp.P5, P)[2]) < 1e-10

    def test_grid_scan_oracle(self):
        cp = critical_points(P)
        S = np.arange(1e-4, 1.0, 1e-4)
        d1 = field(1.0 - S, S, P)[1]
        idx = np.nonzero(np.sign(d1[:-1]) * np.sign(d1[1:]) < 0)[0]
        found = sorted(0.5 * (S[i] + S[i + 1]) for i in idx)
        assert min(abs(cp.P2.S - s) for s in found) < 1e-4
        assert min(abs(cp.P3.S - s) for s in found) < 1e-4

    def test_slopes_solve_quadratic(self):
        from implosion.phase_plane import slope_quadratic

        cp = critical_points(P)
        a, b, c = slope_quadratic(cp.P2, P)
        for k in cp.slopes_at_P2:
            assert abs(a * k * k + b * k + c) < 1e-12
        assert not cp.degenerate_slopes

    @settings(max_examples=25, deadline=None)
    @given(speeds)
    def test_sonic_sum_any_speed(self, r):
        cp = critical_points(ModelParams(3.0, r))
        assert abs(cp.P2.S + cp.P2.W - 1.0) < 1e-12
        assert abs(cp.P3.S + cp.P3.W - 1.0) < 1e-12

    @settings(max_examples=25, deadline=None)
    @given(speeds)
    def test_below_sonic_between_sonic_points(self, r):
        p = ModelParams(3.0, r)
        cp = critical_points(p)
        S = np.linspace(cp.P3.S, cp.P2.S, 400)[1:-1]
        assert np.all(S + middle_root(S, p) < 1.0)
