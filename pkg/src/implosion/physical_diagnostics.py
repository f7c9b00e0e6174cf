"""Physical-variable views of self-similar states, blowup fits, and particle-path diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .profile_solver import Profile
from .radial import ODD, RadialGrid
from .simulator import DecayDiagnostics, SimState


class TimeOutOfRange(ValueError):
    pass


class InsufficientRange(ValueError):
    pass


# ---------------------------------------------------------------
# physical variables


@dataclass
class PhysicalSnapshot:
    t: float
    R: np.ndarray
    u_R: np.ndarray
    u_theta: np.ndarray
    sigma: np.ndarray
    omega: np.ndarray
    divu: np.ndarray


def time_of(s: float, r: float) -> float:
    """t with T - t = exp(-r s); T is recovered separately."""
    return math.exp(-r * s)


def _radial_ops(grid: RadialGrid, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(1/xi + d/dxi) f for an odd field, and its derivative at the origin."""
    d = grid.d1(ODD) @ f
    out = np.zeros_like(f)
    out[1:] = f[1:] / grid.xi[1:] + d[1:]
    out[0] = 2.0 * d[0]
    return out, d


def to_physical(state: SimState, grid: RadialGrid, r: float, T: float) -> PhysicalSnapshot:
    tau = math.exp(-r * state.s)  # T - t
    t = T - tau
    if not (0.0 <= t < T) and not math.isclose(t, 0.0, abs_tol=1e-12 * T):
        raise TimeOutOfRange(f"s = {state.s} gives t = {t} outside [0, T)")
    amp = tau ** (1.0 / r - 1.0) / r
    Om, _ = _radial_ops(grid, state.A)
    Dv, _ = _radial_ops(grid, state.U)
    return PhysicalSnapshot(
        t=max(t, 0.0), R=tau ** (1.0 / r) * grid.xi,
        u_R=amp * state.U, u_theta=amp * state.A, sigma=amp * state.Sigma,
        omega=Om / (r * tau), divu=Dv / (r * tau),
    )


def from_physical(snap: PhysicalSnapshot, r: float, T: float) -> SimState:
    tau = T - snap.t
    amp = tau ** (1.0 / r - 1.0) / r
    return SimState(-math.log(tau) / r, snap.u_R / amp, snap.u_theta / amp, snap.sigma / amp)


# ---------------------------------------------------------------
# blowup asymptotics at the origin


@dataclass
class BlowupFit:
    sigma_exponent: float
    omega_exponent: float
    omega_constant: float
    omega_constant_predicted: float
    sigma_exponent_predicted: float
    omega_exponent_predicted: float
    decades: float

    def errors(self) -> dict[str, float]:
        return {
            "sigma_exponent": abs(self.sigma_exponent / self.sigma_exponent_predicted - 1.0),
            "omega_exponent": abs(self.omega_exponent / self.omega_exponent_predicted - 1.0),
            "omega_constant": abs(self.omega_constant / self.omega_constant_predicted - 1.0),
        }


def blowup_fit(diag: DecayDiagnostics, r: float, alpha: float, T: float = 1.0,
               decades: float = 2.0) -> BlowupFit:
    """Log-log fits of sigma(0,t) and omega(0,t) over the final decades of T - t."""
    s = diag.s
    tau = np.exp(-r * s)
    span = math.log10(tau[0] / tau[-1])
    if span < decades:
        raise InsufficientRange(f"run covers {span:.2f} decades of T - t, need {decades}")
    keep = tau <= tau[-1] * 10.0**decades
    sig = np.exp((r - 1.0) * s) * diag["Sigma0"] / r
    om = 2.0 * np.exp(r * s) * diag["dA0"] / r
    lt = np.log(tau[keep])
    sigma_exp = -np.polyfit(lt, np.log(sig[keep]), 1)[0]
    omega_exp = -np.polyfit(lt, np.log(np.abs(om[keep])), 1)[0]
    w_exp = (r - 1.0) / (alpha * r)
    const = float(tau[-1] ** w_exp * om[-1])
    omega0 = om[0]
    sigma0 = sig[0]
    # at t = 0 the field is the profile near the origin, so Sigma(0, s_in) = Sigmabar(0)
    sigbar0 = diag["Sigma0"][0]
    predicted = float(omega0 * (sigbar0 / (r * sigma0)) ** (1.0 / alpha))
    return BlowupFit(float(sigma_exp), float(omega_exp), const, predicted,
                     (r - 1.0) / r, w_exp, float(span))


def integral_sup(diag: DecayDiagnostics, key: str, s_ends) -> np.ndarray:
    """int max|.| dt up to each s_end; with dt = r (T - t) ds the physical factor cancels."""
    return np.array([diag.time_integral(key, s_end=float(se)) for se in s_ends])


@dataclass
class BKMReport:
    s_ends: np.ndarray
    omega_integrals: np.ndarray
    divu_integrals: np.ndarray
    omega_cauchy: bool
    divu_growth_ok: bool
    divu_growth_rates: np.ndarray
    required_rate: float


def bkm_contrast(diag: DecayDiagnostics, r: float, s_ends=(4.0, 6.0, 8.0), s_in: float = 0.0) -> BKMReport:
    s_ends = np.asarray(s_ends, dtype=float)
    om = integral_sup(diag, "Omega_max", s_in + s_ends)
    dv = integral_sup(diag, "Div_max", s_in + s_ends)
    d_om = np.abs(np.diff(om))
    cauchy = bool(np.all(d_om[1:] * 2.0 <= d_om[:-1])) if len(d_om) > 1 else True
    rates = np.diff(dv) / np.diff(s_ends)
    return BKMReport(s_ends, om, dv, cauchy, bool(np.all(rates >= r / 2.0)), rates, r / 2.0)


# ---------------------------------------------------------------
# fields along particle paths from recorded states


class CheckpointField:
    """(U, Omega, Sigma) on the grid at recorded s, cubic in xi and in s."""

    def __init__(self, grid: RadialGrid, states: list[SimState]):
        if len(states) < 4:
            raise ValueError("need at least four checkpoints")
        self.grid = grid
        self.s = np.array([st.s for st in states])
        if np.any(np.diff(self.s) <= 0):
            raise ValueError("checkpoints must be strictly increasing in s")
        self.U = np.array([st.U for st in states])
        self.Omega = np.array([_radial_ops(grid, st.A)[0] for st in states])
        self.Sigma = np.array([st.Sigma for st in states])
        self._splines: dict[int, CubicSpline] = {}

    def _spline(self, i: int) -> CubicSpline:
        sp_ = self._splines.get(i)
        if sp_ is None:
            sp_ = CubicSpline(self.grid.xi, np.stack([self.U[i], self.Omega[i], self.Sigma[i]], axis=1))
            self._splines[i] = sp_
        return sp_

    def at(self, xi, s: float) -> np.ndarray:
        """Rows (U, Omega, Sigma) at the points xi and time s."""
        xi = np.clip(np.atleast_1d(xi), 0.0, self.grid.xi_max)
        i = int(np.clip(np.searchsorted(self.s, s) - 1, 1, len(self.s) - 3))
        idx = np.arange(i - 1, i + 3)
        nodes = self.s[idx]
        w = np.ones(4)
        for j in range(4):
            for k in range(4):
                if k != j:
                    w[j] *= (s - nodes[k]) / (nodes[j] - nodes[k])
        vals = sum(w[j] * self._spline(idx[j])(xi) for j in range(4))
        return vals.T

    def at_checkpoint(self, xi, i: int) -> np.ndarray:
        return self._spline(i)(np.atleast_1d(xi)).T


@dataclass
class VorticityReport:
    a: np.ndarray
    max_drift: float
    drift_per_a: np.ndarray
    zero_a: np.ndarray
    zero_max_abs: float
    s: np.ndarray
    paths: np.ndarray = field(repr=False)


def specific_vorticity(r: float, alpha: float, s, Omega, Sigma):
    """omega/rho up to a constant factor."""
    return np.exp(r * s) * Omega / (np.exp((r - 1.0) * s) * Sigma) ** (1.0 / alpha)


def check_specific_vorticity(fieldc: CheckpointField, r: float, alpha: float, a=None,
                             zero_a=(1.2, 1.35, 1.5), rtol: float = 1e-10,
                             inside: float = 0.9) -> VorticityReport:
    """Max relative drift of omega/rho along particle paths started at s_in from radii a.

    A path counts only while it stays below ``inside * xi_max``; further out the
    recorded field is no longer trustworthy.
    """
    if a is None:
        a = np.linspace(0.05, 0.75, 16)
    a = np.asarray(a, dtype=float)
    z = np.asarray(zero_a, dtype=float)
    start = np.concatenate([a, z])
    s0, s1 = fieldc.s[0], fieldc.s[-1]

    def rhs(s, y):
        return y + fieldc.at(y, s)[0]

    sol = solve_ivp(rhs, (s0, s1), start, method="DOP853", rtol=rtol, atol=1e-12,
                    t_eval=fieldc.s, dense_output=False)
    if not sol.success:
        raise RuntimeError(sol.message)
    paths = sol.y
    q = np.empty_like(paths)
    for i in range(len(fieldc.s)):
        v = fieldc.at_checkpoint(paths[:, i], i)
        q[:, i] = specific_vorticity(r, alpha, fieldc.s[i], v[1], v[2])
    valid = np.logical_and.accumulate(paths <= inside * fieldc.grid.xi_max, axis=1)
    n = len(a)
    q0 = q[:n, :1]
    rel = np.where(valid[:n], np.abs(q[:n] - q0) / np.abs(q0), 0.0)
    drift = rel.max(axis=1)
    # physical omega/rho: (1/r) e^{rs} Omega / (alpha e^{(r-1)s} Sigma / r)^{1/alpha}
    phys = np.where(valid[n:], q[n:], 0.0) / r / (alpha / r) ** (1.0 / alpha)
    zmax = float(np.max(np.abs(phys))) if len(z) else 0.0
    return VorticityReport(a, float(drift.max()), drift, z, zmax, fieldc.s, paths)


# ---------------------------------------------------------------
# particle paths of the exact self-similar flow


class ProfileWS:
    """W = -Ubar/xi and Sigmabar as functions of x = log xi over the whole line.

    Below x_lo the even/odd Taylor form is used; above x_hi the far-field power laws.
    """

    def __init__(self, profile: Profile, xi_lo: float = 1e-3, xi_hi: float | None = None):
        self.r = profile.r
        self.profile = profile
        hi = float(profile.grid[-1]) if xi_hi is None else xi_hi
        self.x_lo, self.x_hi = math.log(xi_lo), math.log(hi)
        v0 = profile.evaluate(np.array([0.0, xi_lo, hi]))
        self.W0, self.S0 = -v0[2, 0], v0[1, 0]
        self.W_lo, self.S_lo = -v0[0, 1] / xi_lo, v0[1, 1]
        self.W_hi, self.S_hi = -v0[0, 2] / hi, v0[1, 2]

    def __call__(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        W = np.empty_like(x)
        S = np.empty_like(x)
        lo = x < self.x_lo
        hi = x > self.x_hi
        mid = ~(lo | hi)
        if np.any(mid):
            v = self.profile.evaluate(np.exp(x[mid]))
            W[mid] = -v[0] / np.exp(x[mid])
            S[mid] = v[1]
        if np.any(lo):
            q = np.exp(2.0 * (x[lo] - self.x_lo))
            W[lo] = self.W0 + (self.W_lo - self.W0) * q
            S[lo] = self.S0 + (self.S_lo - self.S0) * q
        if np.any(hi):
            d = x[hi] - self.x_hi
            W[hi] = self.W_hi * np.exp(-self.r * d)
            S[hi] = self.S_hi * np.exp((1.0 - self.r) * d)
        return W, S


@dataclass
class TrajectoryRecord:
    a: float
    t: np.ndarray
    X: np.ndarray
    stretch_radial: np.ndarray
    stretch_tangential: np.ndarray


@dataclass
class TrajectoryFlow:
    """Paths of the exact self-similar flow from radii a at t = 0 (T = 1 gauge)."""

    a: np.ndarray
    s: np.ndarray
    t: np.ndarray
    X: np.ndarray  # (n_a, n_s)
    stretch_radial: np.ndarray
    stretch_tangential: np.ndarray
    density_ratio: np.ndarray  # rho(X, t) / rho_0(a)

    def record(self, i: int) -> TrajectoryRecord:
        return TrajectoryRecord(float(self.a[i]), self.t, self.X[i], self.stretch_radial[i],
                                self.stretch_tangential[i])


def default_sample_as(lo_exp: float = -50.0, hi_exp: float = 1.0, per_decade: int = 2) -> np.ndarray:
    k = int(round((hi_exp - lo_exp) * per_decade))
    return 10.0 ** np.linspace(lo_exp, hi_exp, k + 1)


def trace_profile_flow(profile: Profile, sample_as=None, s_end: float = 120.0, n_s: int = 1201,
                       rel_step: float = 1e-6, rtol: float = 1e-11) -> TrajectoryFlow:
    """Integrate d log xi / ds = 1 - W for each a and its two neighbours a(1 +- rel_step)."""
    a = default_sample_as() if sample_as is None else np.asarray(sample_as, dtype=float)
    if np.any(a <= 0):
        raise ValueError("sample radii must be positive (a = 0 is the fixed origin)")
    ws = ProfileWS(profile)
    x0 = np.log(np.concatenate([a, a * (1 + rel_step), a * (1 - rel_step)]))
    s = np.linspace(0.0, s_end, n_s)

    def rhs(_s, x):
        return 1.0 - ws(x)[0]

    sol = solve_ivp(rhs, (0.0, s_end), x0, method="DOP853", rtol=rtol, atol=1e-12, t_eval=s)
    if not sol.success:
        raise RuntimeError(sol.message)
    n = len(a)
    logX = sol.y - s[None, :]
    X = np.exp(logX[:n])
    Xp = np.exp(logX[n:2 * n])
    Xm = np.exp(logX[2 * n:])
    stretch_r = (Xp - Xm) / (2.0 * rel_step * a[:, None])
    stretch_t = X / a[:, None]
    r, alpha = profile.r, profile.alpha
    S_now = ws(sol.y[:n].ravel())[1].reshape(n, -1)
    S_init = ws(np.log(a))[1]
    dens = (np.exp((r - 1.0) * s)[None, :] * S_now / S_init[:, None]) ** (1.0 / alpha)
    t = 1.0 - np.exp(-r * s)
    return TrajectoryFlow(a, s, t, X, stretch_r, stretch_t, dens)


@dataclass
class TrajectoryBounds:
    C: float
    c1: float
    c1_slope: float
    C_per_decade: dict
    min_ratio: np.ndarray
    max_ratio: np.ndarray
    passed: bool


def trajectory_bounds(profile: Profile, sample_as=None, s_end: float = 120.0,
                      flow: TrajectoryFlow | None = None) -> TrajectoryBounds:
    """Smallest C and c1 with C^-1 a min(1, a^c1) <= |X(a,t)| <= C a over the sample."""
    flow = flow or trace_profile_flow(profile, sample_as, s_end)
    a = flow.a
    ratio = flow.X / a[:, None]
    mn = ratio.min(axis=1)
    mx = ratio.max(axis=1)
    small = a < 1.0
    env = np.log(np.minimum(a, math.exp(-1.0)))
    # lower envelope a min(a, 1/e)^c1 <= |X|, the smallest certifying c1
    c1 = float(max(np.max(np.log(mn[small]) / env[small]), 0.0)) if np.any(small) else 0.0
    deep = a < math.exp(-1.0) * 1e-3
    c1_slope = float(np.polyfit(np.log(a[deep]), np.log(mn[deep]), 1)[0]) if deep.sum() > 1 else math.nan
    lower = np.minimum(1.0, a**c1) / mn
    per_a = np.maximum(mx, lower)
    C = float(max(1.0, per_a.max()))
    decades = np.floor(np.log10(a)).astype(int)
    per_dec = {int(d): float(per_a[decades == d].max()) for d in np.unique(decades)}
    passed = bool(np.isfinite(C) and c1 > 0.0)
    return TrajectoryBounds(C, c1, c1_slope, per_dec, mn, mx, passed)


@dataclass
class TransportedReport:
    k: float
    sup: float
    sup_vs_t: np.ndarray
    growth: float
    monotone: bool
    bounded: bool


@dataclass
class TransportedStudy:
    reports: dict
    c1: float
    c2: float
    k_spec: int
    k_sufficient: float
    k_sufficient_with_c1: float
    k_hat: float | None
    cap: float


def transported_quantity(flow: TrajectoryFlow, k: float, cap: float = 10.0,
                         monotone_rtol: float = 1e-2, f0=None) -> TransportedReport:
    """sup over a of rho(X,t) |grad_a X| |f0(a)| / rho_0(a) as a function of t.

    f0 defaults to min(a^k, 1).  The sup over a finite a-sample jitters as the
    maximizing radius hands over to the next sample, so monotonicity is judged
    up to ``monotone_rtol``.
    """
    grad = np.maximum(np.abs(flow.stretch_radial), flow.stretch_tangential)
    if f0 is None:
        f0 = np.minimum(flow.a**k, 1.0) if k > 0 else np.ones_like(flow.a)
    f0 = np.abs(np.asarray(f0, dtype=float))
    Q = flow.density_ratio * grad * f0[:, None]
    sup_t = Q.max(axis=0)
    run_max = np.maximum.accumulate(sup_t)
    monotone = bool(np.all(np.diff(sup_t) >= -monotone_rtol * sup_t[1:]))
    growth = float(sup_t[-1] / sup_t[0]) if sup_t[0] > 0 else math.nan
    return TransportedReport(float(k), float(run_max[-1]), sup_t, growth, monotone, bool(run_max[-1] <= cap))


def fit_c2(flow: TrajectoryFlow, c1: float) -> float:
    """Smallest c2 >= 0 with |grad_a X| <= max(1, R_l(a)^-c2) along the sample."""
    grad = np.maximum(np.abs(flow.stretch_radial), flow.stretch_tangential).max(axis=1)
    Rl = flow.a * np.minimum(math.exp(-1.0), flow.a) ** c1
    need = (grad > 1.0) & (Rl < 1.0)
    if not np.any(need):
        return 0.0
    return float(np.max(np.log(grad[need]) / -np.log(Rl[need])))


def transported_quantity_check(profile: Profile, ks=(0, 0.05, 0.1, 0.25, 0.5, 1, 2, 3), sample_as=None,
                               s_end: float = 120.0, cap: float = 10.0,
                               flow: TrajectoryFlow | None = None) -> TransportedStudy:
    flow = flow or trace_profile_flow(profile, sample_as, s_end)
    tb = trajectory_bounds(profile, flow=flow)
    c2 = fit_c2(flow, tb.c1)
    base = c2 + (profile.r - 1.0) / profile.alpha
    k_spec = int(math.ceil(base)) + 1
    ks = sorted(set(float(k) for k in ks) | {float(k_spec)})
    reports = {k: transported_quantity(flow, k, cap) for k in ks}
    bounded = [k for k in ks if reports[k].bounded]
    k_hat = min(bounded) if bounded else None
    return TransportedStudy(reports, tb.c1, c2, k_spec, base, base * (tb.c1 + 1.0), k_hat, cap)


def write_trajectories(directory, flow: TrajectoryFlow, stem: str = "trajectory") -> list:
    from pathlib import Path

    from .textio import write_table

    out = []
    for i in range(len(flow.a)):
        rec = flow.record(i)
        p = Path(directory) / f"{stem}_{i:03d}.txt"
        write_table(p, {"t": rec.t, "X": rec.X, "stretch_r": rec.stretch_radial,
                        "stretch_t": rec.stretch_tangential}, {"a": rec.a})
        out.append(p)
    return out


# ---------------------------------------------------------------
# fixed physical points away from the origin


def far_field_bounds(fieldc: CheckpointField, r: float, xs=(1.0, 2.0, 4.0, 8.0)) -> dict:
    """sup_t |u(x,t)| |x|^{r-1}, sup_t |grad u| |x|^r, and the range of sigma at fixed |x| >= 1 (T = 1)."""
    out = {}
    D = fieldc.grid.d1(ODD)
    for x in xs:
        uu, gu, sg = [], [], []
        for i, s in enumerate(fieldc.s):
            tau = math.exp(-r * s)
            xi = x / tau ** (1.0 / r)
            if xi > fieldc.grid.xi_max:
                continue
            amp = tau ** (1.0 / r - 1.0) / r
            U = fieldc.U[i]
            dU = np.interp(xi, fieldc.grid.xi, D @ U)
            v = np.interp(xi, fieldc.grid.xi, U)
            S = np.interp(xi, fieldc.grid.xi, fieldc.Sigma[i])
            uu.append(abs(amp * v) * x ** (r - 1.0))
            gu.append(max(abs(dU), abs(v / xi)) * amp * tau ** (-1.0 / r) * x**r)
            sg.append(amp * S)
        if uu:
            out[x] = {"u": max(uu), "grad_u": max(gu), "sigma_min": min(sg), "sigma_max": max(sg)}
    return out
