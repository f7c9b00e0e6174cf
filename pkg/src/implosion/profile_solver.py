"""Shooting computation of the stationary profile through the sonic point.

The phase curve crosses the sonic line only at P2.  Near P2 the solutions
leaving along the slow eigen-direction form a one-parameter family

    (W, S)(t) = analytic(t) + C |t|^beta v_fast + ...,    t = x - x_P2,

with beta = mu_fast / mu_slow > 1.  Integrating away from P2 amplifies any
start-up error like |t|^beta, which for beta of order ten already exhausts
double precision.  The speed r is therefore selected in the contracting
direction: the regular solution emanating from the centre (S -> infinity,
W -> W_e) is integrated toward P2 and compared with a high-order Taylor
series of the analytic branch at a fixed fraction of its convergence
radius.  The signed gap is the shooting discriminator.  Its zeros in r, away
from the resonances where beta is an integer, are the candidate speeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .phase_plane import (
    CriticalPoints,
    ModelParams,
    NoSonicPoint,
    critical_points,
    field_gradients,
    lower_Delta2_root,
    middle_root,
    velocity,
)
from .phase_plane import field as phase_field


class SeriesDivergence(RuntimeError):
    pass


class NoSignChange(RuntimeError):
    pass


class GridOutOfRange(ValueError):
    pass


class PropertyViolation(RuntimeError):
    def __init__(self, name: str, location: float, value: float) -> None:
        super().__init__(f"{name} violated at xi = {location:.6g} (value {value:.6g})")
        self.name = name
        self.location = location
        self.value = value


@dataclass(frozen=True)
class SolverTolerances:
    rtol: float = 1e-11
    atol: float = 1e-14
    shoot_rtol: float = 1e-13
    eps_start: float | None = None  # None: start_fraction of the series radius
    start_fraction: float = 0.35
    sonic_order: int = 48
    S_big: float = 1e3
    tol_We: float = 1e-6
    S_stop: float = 1e-8
    bisect_tol: float = 1e-10
    S_match: float = 25.0
    origin_order: int = 16
    scan_points: int = 48
    beta_max: float = 12.0

    def describe(self) -> str:
        return (f"rtol={self.rtol:g};shoot_rtol={self.shoot_rtol:g};S_big={self.S_big:g};"
                f"tol_We={self.tol_We:g};S_stop={self.S_stop:g};bisect_tol={self.bisect_tol:g};"
                f"sonic_order={self.sonic_order};start_fraction={self.start_fraction:g}")


# ---------------------------------------------------------------
# Truncated power series helpers


def _mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.convolve(a, b)[: len(a)]


def _field_series(W: np.ndarray, S: np.ndarray, params: ModelParams):
    """Coefficients of (Delta, Delta1, Delta2) along truncated series W, S."""
    r, d, l, We = params.r, params.d, params.l, params.W_e
    one = np.zeros_like(W)
    one[0] = 1.0
    S2 = _mul(S, S)
    delta = _mul(one - W, one - W) - S2
    delta1 = _mul(_mul(W, W - one), W - r * one) - d * _mul(W - We * one, S2)
    quad = (l + d - 1.0) * _mul(W, W) - (l + d + l * r - r) * W + l * r * one - l * S2
    delta2 = _mul(S, quad) / l
    return delta, delta1, delta2


def _poly(c: np.ndarray, t):
    return np.polynomial.polynomial.polyval(t, c)


@dataclass(frozen=True)
class SonicSeries:
    """Taylor coefficients of (W, S) in t = x - x0 around the sonic point P2."""

    W: np.ndarray
    S: np.ndarray
    x0: float
    slope: float
    slope_index: int
    eigenvalue: float
    beta: float

    @property
    def order(self) -> int:
        return len(self.W) - 1

    @property
    def radius(self) -> float:
        """Root-test estimate of the convergence radius in t."""
        n = self.order
        ks = np.arange(max(1, n // 2), n + 1)
        mag = np.maximum(np.maximum(np.abs(self.W[ks]), np.abs(self.S[ks])), 1e-300)
        return float(np.median(mag ** (-1.0 / ks)))

    def __call__(self, t):
        return _poly(self.W, t), _poly(self.S, t)

    def derivative(self, t, k: int = 1):
        P = np.polynomial.polynomial
        return _poly(P.polyder(self.W, k), t), _poly(P.polyder(self.S, k), t)

    def residual(self, t: float, params: ModelParams) -> float:
        """Max of |Delta W' + Delta1|, |Delta S' + Delta2| at offset t."""
        W, S = self(t)
        dW, dS = self.derivative(t)
        D, D1, D2 = phase_field(W, S, params)
        return float(max(abs(D * dW + D1), abs(D * dS + D2)))


def barrier_slopes(cp: CriticalPoints, params: ModelParams) -> tuple[float, float]:
    """Slopes dW/dS at P2 of the middle-root curve W2 and of W2_minus."""
    g = field_gradients(cp.P2.W, cp.P2.S, params)
    return float(-g[1, 1] / g[1, 0]), float(-g[2, 1] / g[2, 0])


def choose_slope_index(cp: CriticalPoints, params: ModelParams) -> int:
    """Index of the P2 slope lying strictly between the two barrier slopes.

    Only that direction keeps W2_minus < W < W2 beyond P2 on the interior
    side and the reversed ordering on the exterior side.
    """
    lo, hi = sorted(barrier_slopes(cp, params))
    for i, k in enumerate(cp.slopes_at_P2):
        if lo < k < hi:
            return i
    raise SeriesDivergence("no P2 slope lies between the barrier curves")


def _eigen_data(cp: CriticalPoints, params: ModelParams, slope_index: int):
    g = field_gradients(cp.P2.W, cp.P2.S, params)
    J = g[1:]
    lams = [float((J @ np.array([k, 1.0]))[1]) for k in cp.slopes_at_P2]
    lam = lams[slope_index]
    v = np.array([cp.slopes_at_P2[slope_index], 1.0])
    gd = float(g[0] @ v)
    if gd == 0.0 or lam == 0.0:
        raise SeriesDivergence("degenerate eigen-direction at P2")
    # scale so that d(Delta)/dt at P2 equals -lam
    return v * (-lam / gd), lam, lams[1 - slope_index] / lam, g


def local_series_at_P2(
    cp: CriticalPoints,
    params: ModelParams,
    order: int = 4,
    slope_index: int | None = None,
    x0: float = 0.0,
) -> SonicSeries:
    """Analytic branch through P2 along the chosen eigen-direction."""
    if not 1 <= order <= 64:
        raise ValueError("order must lie in 1..64")
    if slope_index is None:
        slope_index = choose_slope_index(cp, params)
    p1, lam, beta, g = _eigen_data(cp, params, slope_index)
    n = order + 1
    W = np.zeros(n)
    S = np.zeros(n)
    W[0], S[0] = cp.P2.W, cp.P2.S
    W[1], S[1] = p1
    M0 = np.outer(p1, g[0]) + g[1:]
    steps = np.arange(1, n)
    for m in range(2, n):
        # order-m equations are linear in (W[m], S[m]); evaluate with them zeroed
        D, D1, D2 = _field_series(W, S, params)
        known = np.array([
            np.convolve(D, steps * W[1:])[m] + D1[m],
            np.convolve(D, steps * S[1:])[m] + D2[m],
        ])
        try:
            pm = np.linalg.solve(M0 - m * lam * np.eye(2), -known)
        except np.linalg.LinAlgError as exc:
            raise SeriesDivergence(f"resonant order {m}") from exc
        if not np.all(np.isfinite(pm)):
            raise SeriesDivergence(f"non-finite coefficient at order {m}")
        W[m], S[m] = pm
    return SonicSeries(W=W, S=S, x0=x0, slope=float(cp.slopes_at_P2[slope_index]),
                       slope_index=slope_index, eigenvalue=lam, beta=beta)


# ---------------------------------------------------------------
# Regular expansion at the centre, in u = 1/S^2


@dataclass(frozen=True)
class OriginSeries:
    """W(u) = sum a_k u^k and x + log S = X_inf - sum g_k u^k / (2k)."""

    a: np.ndarray
    g: np.ndarray
    X_inf: float = 0.0

    def W(self, u):
        return _poly(self.a, u)

    def X(self, u):
        k = np.arange(1, len(self.g))
        return _poly(np.concatenate([[self.X_inf], -self.g[1:] / (2.0 * k)]), u)

    def gval(self, u):
        return _poly(self.g, u)

    def shifted(self, X_inf: float) -> "OriginSeries":
        return OriginSeries(self.a, self.g, X_inf)

    def S_of_x(self, x):
        """Invert x = X(1/S^2) - log S by Newton iteration in log S."""
        x = np.asarray(x, dtype=float)
        v = self.X_inf - x
        for _ in range(60):
            u = np.exp(-2.0 * v)
            dv = (self.X(u) - v - x) / (self.gval(u) - 1.0)
            v = v - dv
            if np.all(np.abs(dv) <= 1e-15 * np.maximum(1.0, np.abs(v))):
                break
        return np.exp(v)


def origin_series(params: ModelParams, order: int = 16) -> OriginSeries:
    r, d, l, We = params.r, params.d, params.l, params.W_e
    n = order + 1
    a = np.zeros(n)
    a[0] = We
    u = np.zeros(n)
    u[1] = 1.0
    one = np.zeros(n)
    one[0] = 1.0

    def quad(w):
        return (l + d - 1.0) * _mul(w, w) - (l + d + l * r - r) * w + l * r * one

    for m in range(1, n):
        # (2m + d) a_m = [u P(W)]_m + (2/l) [u^2 W' q(W)]_m, lower orders only
        P = _mul(_mul(a, a - one), a - r * one)
        u2dW = np.zeros(n)
        u2dW[2:] = (np.arange(1, n) * a[1:])[: n - 2]
        rhs = _mul(u, P)[m] + (2.0 / l) * _mul(u2dW, quad(a))[m]
        a[m] = rhs / (2.0 * m + d)
    # g(u) = 1 - (1 - u (1-W)^2) / (1 - u q(W) / l)
    num = one - _mul(u, _mul(one - a, one - a))
    den = one - _mul(u, quad(a)) / l
    ratio = np.zeros(n)
    for m in range(n):
        ratio[m] = num[m] - np.dot(den[1 : m + 1], ratio[:m][::-1])
    return OriginSeries(a=a, g=one - ratio)


# ---------------------------------------------------------------
# Phase curves


BRANCH_INTERIOR = "interior"
BRANCH_EXTERIOR = "exterior"
TERMINALS = ("reached_We", "reached_S_zero", "hit_barrier", "hit_sonic", "step_failure", "missed_We")


@dataclass
class PhaseCurve:
    """Sampled solution (x, S, W) with x increasing, plus evaluation zones.

    Near P2 the Taylor series is used, deep inside (S above S_match) the
    centre expansion; in between the integrator's dense output.
    """

    samples: np.ndarray
    branch: str
    terminal: str
    side: str | None = None  # "above" (middle root) or "below" (W2_minus) for hit_barrier
    discriminator: float = float("nan")
    x_range: tuple[float, float] = (float("nan"), float("nan"))
    series: SonicSeries | None = field(default=None, repr=False)
    t_series: float = 0.0
    dense: Callable | None = field(default=None, repr=False)
    origin: OriginSeries | None = field(default=None, repr=False)
    x_match: float = -math.inf

    def evaluate(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        W = np.empty_like(x)
        S = np.empty_like(x)
        t = x - self.series.x0 if self.series is not None else np.full_like(x, np.inf)
        near = np.abs(t) <= self.t_series
        deep = (x < self.x_match) & ~near
        mid = ~(near | deep)
        if np.any(near):
            W[near], S[near] = self.series(t[near])
        if np.any(deep):
            S[deep] = self.origin.S_of_x(x[deep])
            W[deep] = self.origin.W(1.0 / S[deep] ** 2)
        if np.any(mid):
            lo, hi = self.x_range
            span = 1e-9 * max(1.0, abs(hi - lo))
            if np.any(x[mid] < lo - span) or np.any(x[mid] > hi + span):
                raise GridOutOfRange("requested x outside the integrated range")
            y = self.dense(np.clip(x[mid], lo, hi))
            W[mid], S[mid] = y[0], y[1]
        return W, S


def _start_offset(series: SonicSeries, tol: SolverTolerances) -> float:
    if tol.eps_start is not None:
        return tol.eps_start
    return tol.start_fraction * series.radius


def _solve(params, x_span, y0, tol, events, method="RK45", rtol=None, atol=None):
    return solve_ivp(
        lambda _x, y: velocity(y[0], y[1], params), x_span, y0, method=method,
        rtol=rtol or tol.rtol, atol=atol or tol.atol, events=events, dense_output=True,
    )


def integrate_branch(
    series: SonicSeries,
    params: ModelParams,
    direction: str,
    tol: SolverTolerances = SolverTolerances(),
    max_span: float = 80.0,
) -> PhaseCurve:
    """Integrate away from P2, starting on the local series."""
    if direction not in (BRANCH_INTERIOR, BRANCH_EXTERIOR):
        raise ValueError(f"unknown branch {direction!r}")
    sgn = -1.0 if direction == BRANCH_INTERIOR else 1.0
    t0 = sgn * _start_offset(series, tol)
    W0, S0 = series(t0)
    x_start = series.x0 + t0

    def ev_sonic(_x, y):
        return 1.0 - y[0] - y[1]

    events = [ev_sonic]
    names = ["hit_sonic"]
    if direction == BRANCH_INTERIOR:
        def ev_big(_x, y):
            return y[1] - tol.S_big

        def ev_upper(_x, y):
            return float(middle_root(y[1], params)) - y[0]

        def ev_lower(_x, y):
            w = float(lower_Delta2_root(y[1], params))
            return y[0] - w if math.isfinite(w) else 1.0

        events += [ev_big, ev_upper, ev_lower]
        names += ["reached_S_big", "above", "below"]
    else:
        def ev_zero(_x, y):
            return y[1] - tol.S_stop

        events.append(ev_zero)
        names.append("reached_S_zero")
    for ev in events:
        ev.terminal = True

    sol = _solve(params, (x_start, x_start + sgn * max_span), [W0, S0], tol, events)
    terminal, side = "step_failure", None
    if sol.status == 1:
        fired = [i for i, te in enumerate(sol.t_events) if len(te)]
        terminal = names[fired[0]]
    W_end, S_end = float(sol.y[0, -1]), float(sol.y[1, -1])
    if terminal == "step_failure" and abs(1.0 - W_end - S_end) < 1e-6:
        terminal = "hit_sonic"
    if terminal in ("above", "below"):
        # W2 tends to W_e like 1/S^2 while outward errors grow like S^2, so a
        # crossing already inside the tolerance band of the node counts as arrival
        if S_end >= tol.S_match and abs(W_end - params.W_e) <= tol.tol_We:
            terminal = "reached_S_big"
        else:
            terminal, side = "hit_barrier", terminal
    disc = float("nan")
    if terminal == "reached_S_big":
        terminal = "reached_We" if abs(W_end - params.W_e) <= tol.tol_We else "missed_We"
        disc = (W_end - float(origin_series(params).W(1.0 / S_end**2))) * S_end**2
    elif side == "above":
        disc = math.inf
    elif side == "below":
        disc = -math.inf
    order = np.argsort(sol.t)
    samples = np.column_stack([sol.t[order], sol.y[1][order], sol.y[0][order]])
    lo, hi = sorted((x_start, float(sol.t[-1])))
    return PhaseCurve(samples=samples, branch=direction, terminal=terminal, side=side,
                      discriminator=disc, x_range=(lo, hi), series=series, t_series=abs(t0),
                      dense=sol.sol)


def regular_interior(
    series: SonicSeries,
    params: ModelParams,
    tol: SolverTolerances = SolverTolerances(),
) -> PhaseCurve:
    """Regular centre solution integrated toward P2 and aligned with the series.

    Starts on the centre expansion at S = S_big, integrates with x increasing
    until S reaches the series start value, and fixes the autonomous x-shift
    by matching there.  The discriminator is the W gap at the match point.
    """
    t_m = -_start_offset(series, tol)
    W_m, S_m = (float(v) for v in series(t_m))
    org = origin_series(params, tol.origin_order)
    S0 = tol.S_big
    y0 = [float(org.W(1.0 / S0**2)), S0]
    x_init = float(org.X(1.0 / S0**2)) - math.log(S0)

    def ev_hit(_x, y):
        return y[1] - S_m

    def ev_sonic(_x, y):
        return 1.0 - y[0] - y[1]

    ev_hit.terminal = True
    ev_sonic.terminal = True
    sol = _solve(params, (x_init, x_init + 80.0), y0, tol, [ev_hit, ev_sonic],
                 method="DOP853", rtol=tol.shoot_rtol, atol=1e-15)
    if sol.status != 1 or not len(sol.t_events[0]):
        terminal = "hit_sonic" if sol.status == 1 else "step_failure"
        return PhaseCurve(samples=np.column_stack([sol.t, sol.y[1], sol.y[0]]),
                          branch=BRANCH_INTERIOR, terminal=terminal, series=series)
    x_hit = float(sol.t_events[0][0])
    shift = (series.x0 + t_m) - x_hit

    def dense(x, _sol=sol.sol, _shift=shift):
        return _sol(np.asarray(x) - _shift)

    x_match = float(org.X(1.0 / tol.S_match**2)) - math.log(tol.S_match) + shift
    W_end = y0[0]
    terminal = "reached_We" if abs(W_end - params.W_e) <= tol.tol_We else "missed_We"
    return PhaseCurve(
        samples=np.column_stack([sol.t + shift, sol.y[1], sol.y[0]]),
        branch=BRANCH_INTERIOR, terminal=terminal,
        discriminator=float(sol.y_events[0][0][0]) - W_m,
        x_range=(x_init + shift, series.x0 + t_m), series=series, t_series=abs(t_m),
        dense=dense, origin=org.shifted(shift), x_match=x_match,
    )


# ---------------------------------------------------------------
# Shooting in r


@dataclass(frozen=True)
class Shot:
    r: float
    beta: float
    gap: float
    label: str


def shoot(gamma: float, r: float, tol: SolverTolerances = SolverTolerances(), d: int = 2) -> Shot:
    """Signed gap between the regular centre solution and the analytic P2 branch.

    A positive gap means the analytic branch runs below the regular one and is
    driven into W2_minus; a negative gap sends it into the middle root W2.
    """
    params = ModelParams(gamma, r, d)
    try:
        cp = critical_points(params)
        series = local_series_at_P2(cp, params, order=tol.sonic_order)
    except (NoSonicPoint, SeriesDivergence):
        return Shot(r, math.nan, math.nan, "step_failure")
    curve = regular_interior(series, params, tol)
    if curve.terminal in ("hit_sonic", "step_failure"):
        return Shot(r, series.beta, math.nan, curve.terminal)
    gap = curve.discriminator
    label = "hit_barrier_below" if gap > 0 else "hit_barrier_above" if gap < 0 else "reached_We"
    return Shot(r, series.beta, gap, label)


def scan_discriminator(gamma: float, bracket: tuple[float, float], n: int,
                       tol: SolverTolerances = SolverTolerances()) -> list[Shot]:
    lo, hi = bracket
    pad = 1e-3 * (hi - lo)
    return [shoot(gamma, float(r), tol) for r in np.linspace(lo + pad, hi - pad, n)]


def _usable(a: Shot, b: Shot, beta_max: float) -> bool:
    return (math.isfinite(a.gap) and math.isfinite(b.gap) and max(a.beta, b.beta) <= beta_max
            and math.floor(a.beta) == math.floor(b.beta))


def sign_change_brackets(shots: list[Shot], beta_max: float) -> list[tuple[Shot, Shot]]:
    """Consecutive pairs where the gap changes sign, excluding integer-beta poles."""
    return [(a, b) for a, b in zip(shots[:-1], shots[1:])
            if _usable(a, b, beta_max) and (a.gap == 0.0 or a.gap * b.gap < 0)]


def _refine_scan(gamma, shots, tol, points=10):
    """Resample intervals that straddle a resonance; zeros sit just past the poles."""
    extra = []
    for a, b in zip(shots[:-1], shots[1:]):
        if not (math.isfinite(a.beta) and math.isfinite(b.beta)):
            continue
        if min(a.beta, b.beta) > tol.beta_max or math.floor(a.beta) == math.floor(b.beta):
            continue
        extra += scan_discriminator(gamma, (a.r, b.r), points + 2, tol)[1:-1]
    return sorted(shots + extra, key=lambda s: s.r)


def bisect_r(gamma: float, a: Shot, b: Shot, tol: SolverTolerances = SolverTolerances()) -> Shot:
    lo, hi = (a, b) if a.r < b.r else (b, a)
    while hi.r - lo.r > tol.bisect_tol:
        mid = shoot(gamma, 0.5 * (lo.r + hi.r), tol)
        if not math.isfinite(mid.gap):
            raise NoSignChange(f"shot failed inside bracket at r = {mid.r}")
        if mid.gap == 0.0:
            return mid
        if (mid.gap > 0) == (lo.gap > 0):
            lo = mid
        else:
            hi = mid
    return lo if abs(lo.gap) <= abs(hi.gap) else hi


def scan_candidates(gamma: float, bracket: tuple[float, float] | None = None,
                    tol: SolverTolerances = SolverTolerances()) -> tuple[list[Shot], list[tuple[Shot, Shot]]]:
    full = ModelParams(gamma, 0.0, check_bracket=False).bracket
    if bracket is None:
        bracket = full
    if not (full[0] <= bracket[0] < bracket[1] <= full[1]):
        raise ValueError(f"bracket {bracket} not inside admissible window {full}")
    shots = _refine_scan(gamma, scan_discriminator(gamma, bracket, tol.scan_points, tol), tol)
    return shots, sign_change_brackets(shots, tol.beta_max)


def find_admissible_r(
    gamma: float,
    bracket: tuple[float, float] | None = None,
    tol: SolverTolerances = SolverTolerances(),
    candidate: int = 0,
    xi_s: float = 2.0,
) -> tuple[float, tuple[PhaseCurve, PhaseCurve]]:
    """Bisect r on the sign of the shooting gap and return both branches.

    candidate selects among the sign-change sub-brackets found by the scan,
    ordered by increasing r.
    """
    shots, pairs = scan_candidates(gamma, bracket, tol)
    if not pairs:
        raise NoSignChange(
            f"no sign change: endpoint classes {shots[0].label} / {shots[-1].label}")
    if candidate >= len(pairs):
        raise NoSignChange(f"only {len(pairs)} candidate brackets found")
    best = bisect_r(gamma, *pairs[candidate], tol=tol)
    return best.r, build_branches(ModelParams(gamma, best.r), tol, xi_s)


def build_branches(params: ModelParams, tol: SolverTolerances = SolverTolerances(),
                   xi_s: float = 2.0) -> tuple[PhaseCurve, PhaseCurve]:
    cp = critical_points(params)
    series = local_series_at_P2(cp, params, order=tol.sonic_order, x0=math.log(xi_s))
    return regular_interior(series, params, tol), integrate_branch(series, params, BRANCH_EXTERIOR, tol)


# ---------------------------------------------------------------
# Profile reconstruction


@dataclass(frozen=True)
class GridSpec:
    lo_factor: float = 1e-4
    hi_factor: float = 1e3
    per_decade: int = 64

    def build(self, xi_s: float) -> np.ndarray:
        k = int(round(math.log10(self.hi_factor / self.lo_factor) * self.per_decade))
        pos = xi_s * self.lo_factor * 10.0 ** (np.arange(k + 1) / self.per_decade)
        return np.concatenate([[0.0], pos])


PROFILE_COLUMNS = ("xi", "Ubar", "Sigmabar", "dUbar", "dSigmabar", "d2Ubar", "d2Sigmabar")


@dataclass(frozen=True)
class Profile:
    r: float
    gamma: float
    grid: np.ndarray
    Ubar: np.ndarray
    Sigmabar: np.ndarray
    dUbar: np.ndarray
    dSigmabar: np.ndarray
    d2Ubar: np.ndarray
    d2Sigmabar: np.ndarray
    xi_s: float
    xi_1: float = float("nan")
    kappa: float = float("nan")
    meta: dict = field(default_factory=dict, compare=False)
    sampler: Callable | None = field(default=None, compare=False, repr=False)

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.gamma, self.r)

    @property
    def alpha(self) -> float:
        return (self.gamma - 1.0) / 2.0

    @property
    def W_e(self) -> float:
        return (self.r - 1.0) / (2.0 * self.alpha)

    def columns(self) -> list[np.ndarray]:
        return [getattr(self, "grid" if c == "xi" else c) for c in PROFILE_COLUMNS]

    def with_margins(self, xi_1: float, kappa: float) -> "Profile":
        return replace(self, xi_1=xi_1, kappa=kappa, meta=dict(self.meta))

    def with_sampler(self, sampler: Callable | None) -> "Profile":
        return replace(self, sampler=sampler)

    def interpolate(self, xi) -> np.ndarray:
        """Array (2, 3, n): (Ubar, Sigmabar) and their first two xi-derivatives."""
        return profile_interpolant(self)(xi)

    def evaluate(self, xi) -> np.ndarray:
        """Rows (Ubar, Sigmabar, dUbar, dSigmabar, d2Ubar, d2Sigmabar) at xi.

        Uses the exact phase-curve sampler when attached, otherwise the
        quintic interpolant of the stored grid.
        """
        if self.sampler is not None:
            return self.sampler(xi)
        v = self.interpolate(xi)
        return np.array([v[0, 0], v[1, 0], v[0, 1], v[1, 1], v[0, 2], v[1, 2]])


def _chain_derivatives(W, S, params):
    """(W_x, S_x, W_xx, S_xx) from the field by the exact chain rule."""
    W = np.atleast_1d(W)
    S = np.atleast_1d(S)
    D, D1, D2 = phase_field(W, S, params)
    Wx, Sx = -D1 / D, -D2 / D
    g = np.stack([field_gradients(w, s, params) for w, s in zip(W, S)])
    FW = -(g[:, 1, :] * D[:, None] - D1[:, None] * g[:, 0, :]) / D[:, None] ** 2
    FS = -(g[:, 2, :] * D[:, None] - D2[:, None] * g[:, 0, :]) / D[:, None] ** 2
    Wxx = FW[:, 0] * Wx + FW[:, 1] * Sx
    Sxx = FS[:, 0] * Wx + FS[:, 1] * Sx
    return Wx, Sx, Wxx, Sxx


def sample_curves(curves: tuple[PhaseCurve, PhaseCurve], params: ModelParams, xi) -> np.ndarray:
    """Rows (Ubar, Sigmabar, dUbar, dSigmabar, d2Ubar, d2Sigmabar) at xi >= 0."""
    interior, exterior = curves
    series = interior.series
    if interior.origin is None:
        raise GridOutOfRange("interior curve did not reach the centre")
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    out = np.empty((6, xi.size))
    zero = xi == 0.0
    org = interior.origin
    alpha = params.alpha
    sigma0 = math.exp(org.X_inf) / alpha
    out[:, zero] = np.array([0.0, sigma0, -params.W_e, 0.0, 0.0,
                             -sigma0 * org.g[1] * math.exp(-2.0 * org.X_inf)])[:, None]
    pos = ~zero
    x = np.log(xi[pos])
    if np.any(x > exterior.x_range[1]):
        raise GridOutOfRange(f"xi = {xi.max():.4g} lies beyond the exterior range")
    t = x - series.x0
    W = np.empty_like(x)
    S = np.empty_like(x)
    inn = t < 0
    if np.any(inn):
        W[inn], S[inn] = interior.evaluate(x[inn])
    if np.any(~inn):
        W[~inn], S[~inn] = exterior.evaluate(x[~inn])
    near = np.abs(t) <= max(interior.t_series, exterior.t_series)
    Wx, Sx, Wxx, Sxx = (np.empty_like(x) for _ in range(4))
    if np.any(near):
        Wx[near], Sx[near] = series.derivative(t[near], 1)
        Wxx[near], Sxx[near] = series.derivative(t[near], 2)
    far = ~near
    if np.any(far):
        Wx[far], Sx[far], Wxx[far], Sxx[far] = _chain_derivatives(W[far], S[far], params)
    z = xi[pos]
    out[:, pos] = np.array([
        -z * W, z * S / alpha, -(W + Wx), (S + Sx) / alpha,
        -(Wx + Wxx) / z, (Sx + Sxx) / (alpha * z),
    ])
    return out


def reconstruct_profile(
    curves: tuple[PhaseCurve, PhaseCurve],
    params: ModelParams,
    grid_spec: GridSpec = GridSpec(),
    tol: SolverTolerances = SolverTolerances(),
) -> Profile:
    """Sample Ubar = -xi W and Sigmabar = xi S / alpha with exact derivatives."""
    series = curves[0].series
    xi_s = math.exp(series.x0)
    grid = grid_spec.build(xi_s)
    cols = sample_curves(curves, params, grid)
    meta = {
        "alpha": params.alpha,
        "W_e": params.W_e,
        "beta": series.beta,
        "P2_S": float(series.S[0]),
        "P2_W": float(series.W[0]),
        "tolerances": tol.describe(),
        "shoot_gap": curves[0].discriminator,
    }
    return Profile(params.r, params.gamma, grid, *cols, xi_s=xi_s, meta=meta,
                   sampler=lambda z: sample_curves(curves, params, z))


def _quintic(s, h, f0, d0, s0, f1, d1, s1):
    """Quintic Hermite on the unit cell, returning (f, f', f'') in physical units."""
    a1, a2 = d0 * h, 0.5 * s0 * h * h
    b1, b2 = d1 * h, 0.5 * s1 * h * h
    jump = f1 - f0
    c3 = 10 * jump - 6 * a1 - 4 * b1 - 3 * a2 + b2
    c4 = -15 * jump + 8 * a1 + 7 * b1 + 3 * a2 - 2 * b2
    c5 = 6 * jump - 3 * (a1 + b1) - a2 + b2
    f = f0 + s * (a1 + s * (a2 + s * (c3 + s * (c4 + s * c5))))
    df = a1 + s * (2 * a2 + s * (3 * c3 + s * (4 * c4 + 5 * s * c5)))
    d2f = 2 * a2 + s * (6 * c3 + s * (12 * c4 + 20 * s * c5))
    return np.array([f, df / h, d2f / (h * h)])


def profile_interpolant(p: Profile) -> Callable:
    """Piecewise quintic Hermite interpolant of the profile and two derivatives.

    Past the last node the far-field power law with the local exponent is
    continued.
    """
    xs = p.grid
    last = len(xs) - 1
    cols = [(p.Ubar, p.dUbar, p.d2Ubar), (p.Sigmabar, p.dSigmabar, p.d2Sigmabar)]
    tails = [xs[last] * df[last] / f[last] for f, df, _ in cols]

    def evaluate(xi):
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        out = np.zeros((2, 3, xi.size))
        inside = xi <= xs[last]
        idx = np.clip(np.searchsorted(xs, xi[inside], side="right") - 1, 0, last - 1)
        h = xs[idx + 1] - xs[idx]
        s = (xi[inside] - xs[idx]) / h
        for c, (f, df, d2f) in enumerate(cols):
            out[c][:, inside] = _quintic(s, h, f[idx], df[idx], d2f[idx],
                                         f[idx + 1], df[idx + 1], d2f[idx + 1])
        outside = ~inside
        if np.any(outside):
            z = xi[outside] / xs[last]
            for c, (f, _, _) in enumerate(cols):
                pw = tails[c]
                val = f[last] * z**pw
                out[c, 0, outside] = val
                out[c, 1, outside] = pw * val / xi[outside]
                out[c, 2, outside] = pw * (pw - 1.0) * val / xi[outside] ** 2
        return out

    return evaluate


# ---------------------------------------------------------------
# Verification


@dataclass(frozen=True)
class ProfileReport:
    slope_at_origin: float
    farfield_slope_U: float
    farfield_slope_Sigma: float
    farfield_slope_dU: float
    farfield_slope_dSigma: float
    farfield_slope_d2U: float
    rep1_margin: float
    rep2_min: float
    rep22_margin: float
    damping_at_origin: float
    damping_near_origin: float
    xi_1: float
    kappa: float
    exterior_sonic_margin: float = float("nan")
    interior_containment: bool = True

    @property
    def damping_sign_matches_prose(self) -> bool:
        """The swirl-damping discussion writes r + 2 Ubar/xi < 0 near 0; the slope identity gives > 0."""
        return self.damping_at_origin < 0

    @property
    def passed(self) -> bool:
        ext = not (self.exterior_sonic_margin <= 0)
        return (self.rep1_margin > 0 and self.rep2_min > 0 and self.rep22_margin > 0
                and self.xi_1 > 0 and ext and self.interior_containment)


def loglog_slope(xi, f) -> float:
    return float(np.polyfit(np.log(xi), np.log(np.abs(f)), 1)[0])


def curve_containment(curve: PhaseCurve, params: ModelParams, P2_S: float) -> tuple[float, bool]:
    """(min of 1-W-S below P2 on the exterior, interior barrier ordering above P2)."""
    _, S, W = curve.samples.T
    if curve.branch == BRANCH_EXTERIOR:
        below = S < P2_S
        return float((1.0 - W[below] - S[below]).min()), True
    above = S > P2_S
    upper = middle_root(S[above], params)
    lower = lower_Delta2_root(S[above], params)
    ok_lower = np.where(np.isfinite(lower), W[above] > lower, True)
    # in the node band W2 - W_e is below the integration tolerance
    band = upper - params.W_e < 1e-9
    ok_upper = (W[above] < upper) | band
    return math.nan, bool(np.all(ok_lower & ok_upper))


def verify_profile(
    p: Profile,
    curves: tuple[PhaseCurve, PhaseCurve] | None = None,
    raise_on_fail: bool = True,
) -> ProfileReport:
    xi = p.grid
    if xi[-1] < 100.0 * p.xi_s:
        raise ValueError("profile grid must reach 100 xi_s")
    if not np.all(p.Sigmabar > 0):
        j = int(np.argmin(p.Sigmabar))
        raise PropertyViolation("Sigmabar > 0", float(xi[j]), float(p.Sigmabar[j]))
    alpha = p.alpha

    def fail(name, values, mask):
        j = int(np.argmin(np.where(mask, values, np.inf)))
        if raise_on_fail:
            raise PropertyViolation(name, float(xi[j]), float(values[j]))

    rep1 = 1.0 + p.dUbar - alpha * np.abs(p.dSigmabar)
    first_out = int(np.searchsorted(xi, p.xi_s, side="right"))
    bad = np.nonzero(rep1 <= 0)[0]
    if len(bad) and bad[0] <= first_out:
        fail("rep1", rep1, xi <= xi[first_out])
        i1 = max(int(bad[0]) - 1, 0)
    else:
        i1 = int(bad[0]) - 1 if len(bad) else len(xi) - 1
    rep1_margin = float(rep1[: i1 + 1].min())

    outer = xi > p.xi_s
    rep2 = xi + p.Ubar - alpha * p.Sigmabar
    rep2_min = float(rep2[outer].min())
    if rep2_min <= 0:
        fail("rep2", rep2, outer)

    ratio = np.empty_like(xi)
    ratio[0] = p.dUbar[0]
    ratio[1:] = p.Ubar[1:] / xi[1:]
    rep22 = 1.0 + ratio
    rep22_margin = float(rep22.min())
    if rep22_margin <= 0:
        fail("rep22", rep22, np.ones_like(xi, dtype=bool))

    ext_margin, inside = math.nan, True
    if curves is not None:
        P2_S = p.meta.get("P2_S", curves[0].series.S[0])
        _, inside = curve_containment(curves[0], p.params, P2_S)
        ext_margin, _ = curve_containment(curves[1], p.params, P2_S)
        if ext_margin <= 0 and raise_on_fail:
            raise PropertyViolation("exterior 1-W-S > 0", math.nan, ext_margin)
        if not inside and raise_on_fail:
            raise PropertyViolation("interior barrier ordering", math.nan, 0.0)

    tail = xi >= xi[-1] / 10.0
    return ProfileReport(
        slope_at_origin=float(p.dUbar[0]),
        farfield_slope_U=loglog_slope(xi[tail], p.Ubar[tail]),
        farfield_slope_Sigma=loglog_slope(xi[tail], p.Sigmabar[tail]),
        farfield_slope_dU=loglog_slope(xi[tail], p.dUbar[tail]),
        farfield_slope_dSigma=loglog_slope(xi[tail], p.dSigmabar[tail]),
        farfield_slope_d2U=loglog_slope(xi[tail], p.d2Ubar[tail]),
        rep1_margin=rep1_margin,
        rep2_min=rep2_min,
        rep22_margin=rep22_margin,
        damping_at_origin=float(p.r + 2.0 * p.dUbar[0]),
        damping_near_origin=float(p.r + 2.0 * ratio[1]),
        xi_1=float(xi[i1]),
        kappa=min(rep1_margin, rep22_margin),
        exterior_sonic_margin=ext_margin,
        interior_containment=inside,
    )


def compute_profile(
    gamma: float,
    tol: SolverTolerances = SolverTolerances(),
    grid_spec: GridSpec = GridSpec(),
    bracket: tuple[float, float] | None = None,
    candidate: int = 0,
    xi_s: float = 2.0,
) -> tuple[Profile, ProfileReport, tuple[PhaseCurve, PhaseCurve]]:
    """find_admissible_r, reconstruct_profile and verify_profile in sequence."""
    r, curves = find_admissible_r(gamma, bracket, tol, candidate, xi_s)
    params = ModelParams(gamma, r)
    prof = reconstruct_profile(curves, params, grid_spec, tol)
    rep = verify_profile(prof, curves)
    return prof.with_margins(rep.xi_1, rep.kappa), rep, curves


def attach_sampler(p: Profile, tol: SolverTolerances = SolverTolerances()) -> Profile:
    """Rebuild the phase curves at the stored (gamma, r, xi_s) for exact sampling."""
    params = ModelParams(p.gamma, p.r)
    curves = build_branches(params, tol, p.xi_s)
    return p.with_sampler(lambda z: sample_curves(curves, params, z))
