"""Weights for the weighted energy estimates, built by explicit parameter cascades.

phi_1 = phi_b^kappa2 * phi_f captures the outgoing property in the bulk and
the decay in the far field; phi_A = xi^-beta1 g^beta2 (1 + beta3 <xi>)^(beta1-2-kappa1)
extracts damping for the swirl component.  Every "large enough" or "small
enough" choice is made by a doubling or halving search and the resulting
margins are measured on a refined profile grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .profile_solver import Profile

KAPPA1 = 0.25
MAX_SEARCH = 64


class CascadeFailure(RuntimeError):
    def __init__(self, parameter: str, detail: str = "") -> None:
        super().__init__(f"no admissible value for {parameter}" + (f": {detail}" if detail else ""))
        self.parameter = parameter


class InequalityViolation(RuntimeError):
    def __init__(self, name: str, location: float, ell: int | None, value: float) -> None:
        super().__init__(f"{name} fails at xi = {location:.6g} (ell = {ell}, value {value:.4g})")
        self.name = name
        self.location = location
        self.ell = ell
        self.value = value


def japanese(xi):
    return np.sqrt(1.0 + np.asarray(xi, dtype=float) ** 2)


def smoothstep_down(xi, a: float, b: float, lo: float = 0.5):
    """C^1 cubic from 1 on (-inf, a] down to lo on [b, inf); returns (value, derivative)."""
    xi = np.asarray(xi, dtype=float)
    t = np.clip((xi - a) / (b - a), 0.0, 1.0)
    drop = 1.0 - lo
    val = 1.0 - drop * t * t * (3.0 - 2.0 * t)
    der = -drop * 6.0 * t * (1.0 - t) / (b - a)
    return val, der


def refine_grid(grid: np.ndarray, xi_s: float, factor: int = 4) -> np.ndarray:
    """Insert factor-1 points per cell near the origin and around the sonic radius."""
    pts = [grid]
    for a, b in zip(grid[:-1], grid[1:]):
        if b <= 0.1 * xi_s or (0.5 * xi_s <= a and b <= 2.0 * xi_s):
            pts.append(a + (b - a) * np.arange(1, factor) / factor)
    return np.unique(np.concatenate(pts))


@dataclass(frozen=True)
class ProfileSamples:
    xi: np.ndarray
    U: np.ndarray
    S: np.ndarray
    dU: np.ndarray
    dS: np.ndarray
    alpha: float
    r: float

    @classmethod
    def from_profile(cls, p: Profile, xi=None) -> "ProfileSamples":
        xi = p.grid if xi is None else np.asarray(xi, dtype=float)
        v = p.evaluate(xi)
        return cls(xi, v[0], v[1], v[2], v[3], p.alpha, p.r)

    @property
    def U_over_xi(self) -> np.ndarray:
        out = np.empty_like(self.xi)
        zero = self.xi == 0
        out[zero] = self.dU[zero]
        out[~zero] = self.U[~zero] / self.xi[~zero]
        return out

    @property
    def rep1(self) -> np.ndarray:
        return 1.0 + self.dU - self.alpha * np.abs(self.dS)

    @property
    def Vbar(self) -> np.ndarray:
        return self.xi + self.U - self.alpha * self.S


# ---------------------------------------------------------------
# phi_1


@dataclass(frozen=True)
class Phi1Cascade:
    xi_s: float
    R1: float
    R2: float
    c1: float
    R3: float
    far_bound: float
    kappa2: float
    nu: float
    c: float
    mu1: float


@dataclass(frozen=True)
class APart:
    beta1: float
    beta2: float
    beta3: float
    p: float
    q: float
    c1: float
    c2: float
    lambda_tilde: float


@dataclass(frozen=True)
class WeightFamily:
    cascade: Phi1Cascade
    A: APart | None = None
    kappa1: float = KAPPA1
    report: dict = field(default_factory=dict, compare=False)

    # bulk and far parts
    def phi_b(self, xi):
        c = self.cascade
        return smoothstep_down(xi, c.xi_s, c.R2 + 1.0)[0]

    def dphi_b(self, xi):
        c = self.cascade
        return smoothstep_down(xi, c.xi_s, c.R2 + 1.0)[1]

    def phi_f(self, xi):
        return 1.0 + self.cascade.nu * japanese(xi)

    def dphi_f(self, xi):
        xi = np.asarray(xi, dtype=float)
        return self.cascade.nu * xi / japanese(xi)

    def phi_1(self, xi):
        return self.phi_b(xi) ** self.cascade.kappa2 * self.phi_f(xi)

    def log_derivative_1(self, xi):
        """d(log phi_1)/d xi."""
        return self.cascade.kappa2 * self.dphi_b(xi) / self.phi_b(xi) + self.dphi_f(xi) / self.phi_f(xi)

    def dphi_1(self, xi):
        return self.phi_1(xi) * self.log_derivative_1(xi)

    def phi_m(self, xi, m: int):
        return self.phi_1(xi) ** m

    def phi_g(self, xi):
        return japanese(xi) ** (-self.kappa1 - 2.0)

    def log_derivative_g(self, xi):
        xi = np.asarray(xi, dtype=float)
        return (-self.kappa1 - 2.0) * xi / (1.0 + xi**2)

    # swirl weight
    def g(self, xi):
        a = self._need_A()
        return smoothstep_down(xi, 0.5 * a.p, 2.0 * a.q)[0]

    def dg(self, xi):
        a = self._need_A()
        return smoothstep_down(xi, 0.5 * a.p, 2.0 * a.q)[1]

    def phi_A(self, xi):
        a = self._need_A()
        xi = np.asarray(xi, dtype=float)
        with np.errstate(divide="ignore"):
            return (xi ** (-a.beta1) * self.g(xi) ** a.beta2
                    * (1.0 + a.beta3 * japanese(xi)) ** (a.beta1 - 2.0 - self.kappa1))

    def log_derivative_A(self, xi):
        a = self._need_A()
        xi = np.asarray(xi, dtype=float)
        jx = japanese(xi)
        with np.errstate(divide="ignore"):
            return (-a.beta1 / xi + a.beta2 * self.dg(xi) / self.g(xi)
                    + (a.beta1 - 2.0 - self.kappa1) * a.beta3 * xi / (jx * (1.0 + a.beta3 * jx)))

    def _need_A(self) -> APart:
        if self.A is None:
            raise ValueError("swirl weight not built; call build_phiA")
        return self.A

    def columns(self, xi) -> dict[str, np.ndarray]:
        out = {"xi": np.asarray(xi, dtype=float), "phi_b": self.phi_b(xi), "phi_1": self.phi_1(xi),
               "phi_g": self.phi_g(xi)}
        if self.A is not None:
            out["phi_A"] = self.phi_A(xi)
            out["g"] = self.g(xi)
        return out


WEIGHT_COLUMNS = ("xi", "phi_b", "phi_1", "phi_g", "phi_A", "g")


def repulsive_expression(wf: WeightFamily, ps: ProfileSamples, ell: int) -> np.ndarray:
    """(xi+U) phi1'/phi1 + ell alpha S |phi1'/phi1| - (1 + U' - ell alpha |S'|)."""
    lg = wf.log_derivative_1(ps.xi)
    a = ps.alpha
    return (ps.xi + ps.U) * lg + ell * a * ps.S * np.abs(lg) - (1.0 + ps.dU - ell * a * np.abs(ps.dS))


def _mu1(wf: WeightFamily, ps: ProfileSamples) -> float:
    jx = japanese(ps.xi)
    return float(min(np.min(-jx * repulsive_expression(wf, ps, ell)) for ell in (0, 1)))


def _halve_until(pred, start: float, name: str) -> float:
    v = start
    for _ in range(MAX_SEARCH):
        if pred(v):
            return v
        v *= 0.5
    raise CascadeFailure(name, f"halving from {start:g} exhausted")


def _double_until(pred, start: float, name: str) -> float:
    v = start
    for _ in range(MAX_SEARCH):
        if pred(v):
            return v
        v *= 2.0
    raise CascadeFailure(name, f"doubling from {start:g} exhausted")


def verification_grid(profile: Profile, refine: int = 4) -> np.ndarray:
    return refine_grid(profile.grid, profile.xi_s, refine)


def build_phi1(profile: Profile, refine: int = 4, repul2_margin: float = 0.5) -> WeightFamily:
    """Run the R1 -> R2 -> c1 -> R3 -> kappa2 -> nu -> mu1 cascade for phi_1."""
    xi_s = profile.xi_s
    if not xi_s > 1.0:
        raise CascadeFailure("R1", f"the cascade needs xi_s > 1, got {xi_s}")
    xi_1 = profile.xi_1 if math.isfinite(profile.xi_1) else float(profile.grid[-1])
    ps = ProfileSamples.from_profile(profile, verification_grid(profile, refine))
    xi = ps.xi
    rep1 = ps.rep1

    inside = xi[(xi > xi_s) & (xi < xi_1)]
    if inside.size == 0:
        raise CascadeFailure("R1", "no grid point strictly between xi_s and xi_1")
    R1 = float(inside[np.argmin(np.abs(inside - min(1.5 * xi_s, 0.5 * (xi_s + xi_1))))])

    fails = np.nonzero(rep1 <= repul2_margin)[0]
    R2 = float(xi[fails[-1] + 1]) if len(fails) else float(xi[1])
    if fails.size and fails[-1] + 1 >= len(xi):
        raise CascadeFailure("R2", "repulsion margin not reached on the grid")
    if R2 <= R1:
        R2 = float(xi[np.searchsorted(xi, R1, side="right")])

    _, dphib = smoothstep_down(xi, xi_s, R2 + 1.0)
    zone = (xi >= R1) & (xi <= R2)
    c1 = float(np.min(-dphib[zone])) if np.any(zone) else 0.0
    if not c1 > 0:
        raise CascadeFailure("c1", "bulk weight is flat on [R1, R2]")

    far_ok = rep1 >= 1.0 - 1.0 / (8.0 * japanese(xi))
    bad = np.nonzero(~far_ok)[0]
    if len(bad) and bad[-1] + 1 >= len(xi):
        raise CascadeFailure("R3", "far-field repulsion bound not reached on the grid")
    iR3 = bad[-1] + 1 if len(bad) else 0
    R3 = float(xi[iR3])
    far_bound = float(max(np.max(ps.U[iR3:] + ps.alpha * ps.S[iR3:]), 0.0))

    in_first = xi <= xi_1
    kappa = float(np.min(rep1[in_first]))
    c = 0.5 * min(kappa, 0.5)

    def base(kappa2, nu):
        return WeightFamily(Phi1Cascade(xi_s, R1, R2, c1, R3, far_bound, kappa2, nu, c, math.nan))

    def d0_ok(kappa2):
        wf = base(kappa2, 0.0)
        phib = wf.phi_b(xi)
        D0 = kappa2 * ps.Vbar * wf.dphi_b(xi) / phib - rep1
        return bool(np.all(D0 <= -c))

    kappa2 = _double_until(d0_ok, 1.0, "kappa2")

    near = xi <= R3
    nu_start = min(1.0, 0.5 / far_bound) if far_bound > 0 else 1.0

    def nu_ok(nu):
        wf = base(kappa2, nu)
        D1 = repulsive_expression(wf, ps, 1)
        return bool(np.all(D1[near] <= -0.5 * c)) and _mu1(wf, ps) > 0

    nu = _halve_until(nu_ok, nu_start, "nu")
    wf = base(kappa2, nu)
    mu1 = _mu1(wf, ps)
    cascade = Phi1Cascade(xi_s, R1, R2, c1, R3, far_bound, kappa2, nu, c, mu1)
    return WeightFamily(cascade)


@dataclass(frozen=True)
class RepulsiveReport:
    margin_ell0: float
    margin_ell1: float
    mu1: float
    passed: bool
    expression_tail_limit: float
    worst_xi: float


def verify_repulsive_weight(wf: WeightFamily, profile: Profile, refine: int = 4,
                            raise_on_fail: bool = True) -> RepulsiveReport:
    ps = ProfileSamples.from_profile(profile, verification_grid(profile, refine))
    jx = japanese(ps.xi)
    m = {}
    worst = math.nan
    for ell in (0, 1):
        val = -jx * repulsive_expression(wf, ps, ell)
        m[ell] = float(val.min())
        if ell == 1:
            worst = float(ps.xi[np.argmin(val)])
        if m[ell] <= 0 and raise_on_fail:
            j = int(np.argmin(val))
            raise InequalityViolation("repulsive weight", float(ps.xi[j]), ell, float(val[j]))
    mu1 = wf.cascade.mu1
    passed = min(m.values()) >= mu1 * (1 - 1e-12) and mu1 > 0
    tail = float(-jx[-1] * repulsive_expression(wf, ps, 1)[-1])
    return RepulsiveReport(m[0], m[1], mu1, passed, tail, worst)


# ---------------------------------------------------------------
# phi_A


def damping_terms(wf: WeightFamily, ps: ProfileSamples) -> np.ndarray:
    """Rows I1..I4 of the swirl damping D_A(phi_A) = I1 + I2 + I3 + I4."""
    a = wf._need_A()
    xi = ps.xi
    ratio = ps.U_over_xi
    carrier = 1.0 + ratio  # (xi + U)/xi
    jx = japanese(xi)
    I1 = 0.5 * a.beta1 * carrier
    I2 = -0.5 * a.beta2 * (xi + ps.U) * wf.dg(xi) / wf.g(xi)
    I3 = -0.5 * (a.beta1 - 2.0 - wf.kappa1) * (xi + ps.U) * a.beta3 * xi / ((1.0 + a.beta3 * jx) * jx)
    I4 = ps.r - 2.0 - 0.5 * ps.dU + 0.5 * ratio
    return np.array([I1, I2, I3, I4])


def damping_direct(wf: WeightFamily, ps: ProfileSamples) -> np.ndarray:
    """D_A from its definition -div((y+U) phi_A)/(2 phi_A) + U/xi + r - 1, for xi > 0."""
    ratio = ps.U_over_xi
    div_flow = 2.0 + ps.dU + ratio
    with np.errstate(invalid="ignore"):
        return -0.5 * (ps.xi + ps.U) * wf.log_derivative_A(ps.xi) - 0.5 * div_flow + ratio + ps.r - 1.0


def build_phiA(profile: Profile, wf: WeightFamily | None = None, refine: int = 4) -> WeightFamily:
    """Choose beta1, g (through p, q), beta2 and beta3; return the family with lambda_tilde."""
    if wf is None:
        wf = build_phi1(profile, refine)
    ps = ProfileSamples.from_profile(profile, verification_grid(profile, refine))
    xi = ps.xi
    dU0 = float(profile.dUbar[0])
    damp0 = 2.0 * dU0 + profile.r
    if not damp0 > 0:
        raise CascadeFailure("beta1", f"2 dU(0) + r = {damp0:.4g} is not positive")
    if not 1.0 + dU0 > 0:
        raise CascadeFailure("beta1", "1 + dU(0) is not positive")
    c1 = min(0.25, 0.25 * damp0)

    gap = _halve_until(lambda d: damp0 - 0.5 * d * (1.0 + dU0) >= 2.0 * c1, 0.5, "beta1")
    beta1 = 4.0 - gap

    def family(beta2, beta3, p, q, lam=math.nan, c2=math.nan):
        return WeightFamily(wf.cascade, APart(beta1, beta2, beta3, p, q, c1, c2, lam), wf.kappa1)

    probe = family(0.0, 0.0, 1.0, 2.0)
    I = damping_terms(probe, ps)
    low = I[0] + I[3] < c1
    if np.any(low):
        idx = np.nonzero(low)[0]
        if idx[0] == 0 or idx[-1] + 1 >= len(xi):
            raise CascadeFailure("p, q", "beta1 condition fails at the ends of the grid")
        p_ = float(xi[idx[0] - 1])
        q_ = float(xi[idx[-1] + 1])
    else:
        p_, q_ = 0.5 * profile.xi_s, profile.xi_s
    if p_ <= 0:
        raise CascadeFailure("p", "non-positive inner radius")

    gprobe = family(1.0, 0.0, p_, q_)
    # -g' is a parabola on its support, so its minimum on [p, q] sits at an end
    c2 = float(min(-gprobe.dg(p_), -gprobe.dg(q_)))
    if not c2 > 0:
        raise CascadeFailure("g", "cutoff derivative vanishes on [p, q]")

    def beta2_ok(b2):
        I = damping_terms(family(b2, 0.0, p_, q_), ps)
        return bool(np.all((I[0] + I[1] + I[3]) > c1))

    beta2 = _double_until(beta2_ok, 1.0, "beta2")
    target = min(1.0 / 16.0, 0.5 * c1)

    def beta3_ok(b3):
        D = damping_terms(family(beta2, b3, p_, q_), ps).sum(axis=0)
        return bool(np.all(D >= target))

    beta3 = _halve_until(beta3_ok, 0.5, "beta3")
    D = damping_terms(family(beta2, beta3, p_, q_), ps).sum(axis=0)
    lam = float(D.min())
    return family(beta2, beta3, p_, q_, lam, c2)


@dataclass(frozen=True)
class SwirlWeightReport:
    lambda_tilde: float
    min_damping: float
    ratio_g_over_A_max: float
    ratio_g_over_A_far_min: float
    ratio_g_over_A_far_max: float
    phi1_over_jx_min: float
    phi1_over_jx_max: float
    dphi1_sup: float
    xi_dlogA_sup: float
    passed: bool


def verify_weights(wf: WeightFamily, profile: Profile, refine: int = 4) -> SwirlWeightReport:
    """Pointwise checks of D_A >= lambda_tilde, phi_g vs phi_A and the phi_1 asymptotics."""
    ps = ProfileSamples.from_profile(profile, verification_grid(profile, refine))
    xi = ps.xi
    D = damping_terms(wf, ps).sum(axis=0)
    pos = xi > 0
    ratio = wf.phi_g(xi[pos]) / wf.phi_A(xi[pos])
    far = xi[pos] >= 1.0
    r1 = wf.phi_1(xi) / japanese(xi)
    lam = wf.A.lambda_tilde
    passed = bool(np.all(D >= lam * (1 - 1e-12)) and lam > 0)
    return SwirlWeightReport(
        lambda_tilde=lam,
        min_damping=float(D.min()),
        ratio_g_over_A_max=float(ratio.max()),
        ratio_g_over_A_far_min=float(ratio[far].min()),
        ratio_g_over_A_far_max=float(ratio[far].max()),
        phi1_over_jx_min=float(r1.min()),
        phi1_over_jx_max=float(r1.max()),
        dphi1_sup=float(np.max(np.abs(wf.dphi_1(xi)))),
        xi_dlogA_sup=float(np.max(np.abs(xi[pos] * wf.log_derivative_A(xi[pos])))),
        passed=passed,
    )
