"""Autonomous phase-plane ODE for the stationary self-similar profile.

The stationary radial profile (Ubar, Sigmabar) is encoded by

    W = -Ubar / xi,    S = alpha * Sigmabar / xi,    x = log xi,

which turns the stationary equations into the autonomous system

    dW/dx = -Delta1 / Delta,    dS/dx = -Delta2 / Delta

with polynomial numerators and denominator.  This module evaluates the
field, its root curves and the sonic points where all three polynomials
vanish simultaneously.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from dataclasses import field as dc_field

import numpy as np


class NoSonicPoint(RuntimeError):
    """The sonic-line restriction of Delta1 has no root with S in (0, 1)."""


class ComplexMiddleRoot(RuntimeError):
    """The cubic Delta1(., S) has non-real roots for the queried S."""


class BracketError(ValueError):
    """The blowup speed lies outside the admissible window."""


def admissible_bracket(alpha: float) -> tuple[float, float]:
    """Open window (r_lo, r_hi) of admissible blowup speeds in two dimensions."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    lower_eye = (1.0 + 2.0 * alpha) / (1.0 + alpha * math.sqrt(2.0))
    if alpha > 0.5:
        return 1.0, lower_eye
    if alpha < 0.5:
        return lower_eye, 1.0 + alpha / (math.sqrt(alpha) + 1.0) ** 2
    raise BracketError("alpha = 1/2 separates the two branches and is excluded")


@dataclass(frozen=True)
class ModelParams:
    gamma: float
    r: float
    d: int = 2
    check_bracket: bool = dc_field(default=True, compare=False, repr=False)

    def __post_init__(self) -> None:
        if not self.gamma > 1.0:
            raise ValueError(f"gamma must exceed 1, got {self.gamma}")
        if self.d < 1:
            raise ValueError("dimension must be positive")
        if self.check_bracket:
            lo, hi = self.bracket
            if not lo < self.r < hi:
                raise BracketError(f"r = {self.r} outside admissible window ({lo}, {hi})")

    @property
    def alpha(self) -> float:
        return (self.gamma - 1.0) / 2.0

    @property
    def l(self) -> float:  # noqa: E743
        return 2.0 / (self.gamma - 1.0)

    @property
    def W_e(self) -> float:
        return self.l * (self.r - 1.0) / self.d

    @property
    def bracket(self) -> tuple[float, float]:
        return admissible_bracket(self.alpha)

    @property
    def r_lo(self) -> float:
        return self.bracket[0]

    @property
    def r_hi(self) -> float:
        return self.bracket[1]

    @property
    def exponent_sigma(self) -> float:
        return (self.r - 1.0) / self.r

    @property
    def exponent_omega(self) -> float:
        return (self.r - 1.0) / (self.alpha * self.r)

    def with_r(self, r: float, check_bracket: bool | None = None) -> "ModelParams":
        chk = self.check_bracket if check_bracket is None else check_bracket
        return ModelParams(self.gamma, r, self.d, chk)


@dataclass(frozen=True)
class PhasePoint:
    S: float
    W: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.S) and math.isfinite(self.W)):
            raise ValueError("phase point coordinates must be finite")


@dataclass(frozen=True)
class CriticalPoints:
    P2: PhasePoint
    P3: PhasePoint
    P5: PhasePoint | None
    slopes_at_P2: tuple[float, float]
    S_star: float | None = None
    degenerate_slopes: bool = False
    S2_zero: float = 0.0


# ---------------------------------------------------------------
# Field evaluation


def field(W, S, params: ModelParams):
    """Vectorised (Delta, Delta1, Delta2) at arrays W, S."""
    r, d, l, We = params.r, params.d, params.l, params.W_e
    delta = (1.0 - W) ** 2 - S**2
    delta1 = W * (W - 1.0) * (W - r) - d * (W - We) * S**2
    delta2 = (S / l) * ((l + d - 1.0) * W**2 - W * (l + d + l * r - r) + l * r - l * S**2)
    return delta, delta1, delta2


def eval_field(p: PhasePoint, params: ModelParams) -> tuple[float, float, float]:
    D, D1, D2 = field(p.W, p.S, params)
    return float(D), float(D1), float(D2)


def field_gradients(W: float, S: float, params: ModelParams) -> np.ndarray:
    """Rows grad(Delta), grad(Delta1), grad(Delta2), columns (d/dW, d/dS)."""
    r, d, l, We = params.r, params.d, params.l, params.W_e
    a = l + d - 1.0
    b = l + d + l * r - r
    return np.array(
        [
            [-2.0 * (1.0 - W), -2.0 * S],
            [3.0 * W**2 - 2.0 * (1.0 + r) * W + r - d * S**2, -2.0 * d * (W - We) * S],
            [(S / l) * (2.0 * a * W - b), (a * W**2 - b * W + l * r - 3.0 * l * S**2) / l],
        ]
    )


def velocity(W, S, params: ModelParams):
    """Right-hand side (dW/dx, dS/dx)."""
    D, D1, D2 = field(W, S, params)
    return -D1 / D, -D2 / D


# ---------------------------------------------------------------
# Root curves


def _cubic_coeffs(S: float, params: ModelParams) -> tuple[float, float, float, float]:
    r, d, We = params.r, params.d, params.W_e
    return 1.0, -(1.0 + r), r - d * S**2, d * We * S**2


def _polish_cubic(w: float, coeffs) -> float:
    c3, c2, c1, c0 = coeffs
    for _ in range(3):
        f = ((c3 * w + c2) * w + c1) * w + c0
        fp = (3.0 * c3 * w + 2.0 * c2) * w + c1
        if fp == 0.0:
            break
        step = f / fp
        w -= step
        if abs(step) <= 1e-16 * max(1.0, abs(w)):
            break
    return w


def roots_Delta1(S: float, params: ModelParams) -> tuple[float, float, float]:
    """Sorted real roots (W1, W2, W3) of the cubic Delta1(., S)."""
    if S < 0:
        raise ValueError("S must be nonnegative")
    if S == 0:
        # Delta1(W, 0) = W (W - 1) (W - r) with r > 1
        return 0.0, 1.0, float(params.r)
    coeffs = _cubic_coeffs(S, params)
    raw = np.roots(coeffs)
    if np.max(np.abs(raw.imag)) > 1e-9 * max(1.0, np.max(np.abs(raw.real))):
        raise ComplexMiddleRoot(f"non-real roots of Delta1 at S = {S}")
    roots = sorted(_polish_cubic(float(w), coeffs) for w in raw.real)
    return roots[0], roots[1], roots[2]


def middle_root(S, params: ModelParams) -> np.ndarray:
    """Vectorised middle root W2(S) via the trigonometric cubic formula."""
    S = np.asarray(S, dtype=float)
    _, c2, c1, c0 = _cubic_coeffs(S, params)
    shift = -c2 / 3.0
    p = c1 - c2**2 / 3.0
    q = 2.0 * c2**3 / 27.0 - c2 * c1 / 3.0 + c0
    if np.any(p >= 0):
        raise ComplexMiddleRoot("Delta1 has a single real root")
    m = 2.0 * np.sqrt(-p / 3.0)
    arg = np.clip(3.0 * q / (p * m), -1.0, 1.0)
    theta = np.arccos(arg) / 3.0
    # k = 0, 1, 2 give the largest, middle and smallest root respectively
    w = shift + m * np.cos(theta - 2.0 * np.pi / 3.0)
    for _ in range(2):
        f = ((w + c2) * w + c1) * w + c0
        fp = (3.0 * w + 2.0 * c2) * w + c1
        w = w - f / fp
    return w


def _quadratic_coeffs(S, params: ModelParams):
    r, d, l = params.r, params.d, params.l
    return l + d - 1.0, -(l + d + l * r - r), l * r - l * S**2


def S2_threshold(params: ModelParams) -> float:
    """Smallest S at which Delta2(., S) acquires real roots (0 if always)."""
    a, b, _ = _quadratic_coeffs(0.0, params)
    l, r = params.l, params.r
    sq = (4.0 * a * l * r - b * b) / (4.0 * a * l)
    return math.sqrt(sq) if sq > 0 else 0.0


def roots_Delta2(S: float, params: ModelParams) -> tuple[float, float] | None:
    """Sorted real roots (W2_minus, W2_plus) of Delta2(., S), or None."""
    if S <= 0:
        raise ValueError("S must be positive")
    a, b, c = _quadratic_coeffs(S, params)
    disc = b * b - 4.0 * a * c
    if disc < 0:
        return None
    sq = math.sqrt(disc)
    # cancellation-free quadratic formula
    qq = -0.5 * (b - sq) if b < 0 else -0.5 * (b + sq)
    w1 = qq / a
    w2 = c / qq if qq != 0 else w1
    return (min(w1, w2), max(w1, w2))


def lower_Delta2_root(S, params: ModelParams) -> np.ndarray:
    """Vectorised W2_minus(S); NaN where no real root exists."""
    S = np.asarray(S, dtype=float)
    a, b, c = _quadratic_coeffs(S, params)
    disc = b * b - 4.0 * a * c
    sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
    # b < 0 here, so the minus root is c / qq
    return c / (-0.5 * (b - sq))


# ---------------------------------------------------------------
# Sonic points


def _bisect(f, a: float, b: float, tol: float) -> float:
    fa = f(a)
    for _ in range(200):
        if b - a <= tol:
            break
        m = 0.5 * (a + b)
        fm = f(m)
        if fm == 0.0:
            return m
        if (fm > 0) == (fa > 0):
            a, fa = m, fm
        else:
            b = m
    return 0.5 * (a + b)


def _sign_change_roots(f, lo: float, hi: float, step: float, tol: float) -> list[float]:
    grid = np.arange(lo + step, hi, step)
    vals = np.array([f(s) for s in grid])
    roots = []
    for i in range(len(grid) - 1):
        if vals[i] == 0.0:
            roots.append(float(grid[i]))
        elif vals[i] * vals[i + 1] < 0:
            roots.append(_bisect(f, float(grid[i]), float(grid[i + 1]), tol))
    return roots


def slope_quadratic(point: PhasePoint, params: ModelParams) -> tuple[float, float, float]:
    """Coefficients (a, b, c) of a k^2 + b k + c = 0 for k = dW/dS at a critical point."""
    g = field_gradients(point.W, point.S, params)
    d1W, d1S = g[1]
    d2W, d2S = g[2]
    return d2W, d2S - d1W, -d1S


def critical_points(params: ModelParams, scan_step: float = 1e-3, tol: float = 1e-13) -> CriticalPoints:
    lo, hi = params.bracket
    if not lo < params.r < hi:
        raise BracketError(f"r = {params.r} outside admissible window")

    def sonic(s: float) -> float:
        return float(field(1.0 - s, s, params)[1])

    roots = _sign_change_roots(sonic, 0.0, 1.0, scan_step, tol)
    if len(roots) < 2:
        raise NoSonicPoint(f"found {len(roots)} sonic roots for r = {params.r}")
    pts = [PhasePoint(S=s, W=1.0 - s) for s in roots]
    # P2 and P3 are the two sonic roots on the middle-root curve
    on_middle = [p for p in pts if abs(p.W - float(middle_root(p.S, params))) < 1e-8]
    if len(on_middle) < 2:
        raise NoSonicPoint("sonic roots do not lie on the middle-root curve")
    on_middle.sort(key=lambda p: p.S)
    P3, P2 = on_middle[0], on_middle[-1]

    # P5: remaining zero of Delta2 along the middle-root curve, off the sonic line
    def along(s: float) -> float:
        return float(field(middle_root(s, params), s, params)[2] / s)

    P5 = None
    cand = _sign_change_roots(along, 0.0, P2.S + 0.5, scan_step, tol)
    off = [s for s in cand if min(abs(s - P2.S), abs(s - P3.S)) > 1e-6]
    if off:
        s5 = min(off, key=lambda s: abs(s - P2.S))
        P5 = PhasePoint(S=s5, W=float(middle_root(s5, params)))

    a, b, c = slope_quadratic(P2, params)
    disc = b * b - 4.0 * a * c
    degenerate = abs(disc) <= 1e-14 * max(1.0, b * b)
    sq = math.sqrt(max(disc, 0.0))
    k1, k2 = sorted(((-b - sq) / (2 * a), (-b + sq) / (2 * a)))
    return CriticalPoints(
        P2=P2, P3=P3, P5=P5, slopes_at_P2=(k1, k2), degenerate_slopes=degenerate,
        S2_zero=S2_threshold(params),
    )
