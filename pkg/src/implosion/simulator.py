"""Method-of-lines evolution of the self-similar axisymmetric Euler system with swirl.

State (U, A, Sigma) on a radial grid; RK4 in s, fifth-order upwind transport,
fourth-order centred acoustic terms, sixth-difference Kreiss-Oliger dissipation
with coefficients frozen at the profile.  By default the discrete residual of
the profile is subtracted (well-balancing), so the profile is an exact discrete
steady state and every drift measured in a run is caused by the perturbation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .linear_analysis import (
    DISSIPATION,
    Background,
    assemble_L_from_background,
    decay_parameters,
    pack_UA,
    real_basis,
    refine_modes,
    unpack_US,
)
from .profile_solver import Profile
from .radial import EVEN, ODD, RadialGrid, profile_grid
from .weights import WeightFamily, japanese


class CFLViolation(RuntimeError):
    pass


class VacuumBreach(RuntimeError):
    pass


class NaNDetected(RuntimeError):
    pass


class NonPositiveSeries(ValueError):
    pass


# ---------------------------------------------------------------
# configuration and state


@dataclass(frozen=True)
class SimConfig:
    n: int = 2048
    xi_max: float | None = None  # default max(2 C_in, 1e3 xi_s)
    cluster_gain: float = 3.0
    cfl: float = 0.4
    s_span: float = 8.0
    n_diag: int = 50
    n_checkpoint: int = 0  # 0 disables in-memory checkpoints
    dissipation: float = DISSIPATION
    well_balanced: bool = True
    frozen_background: bool = False  # evolve A only, with (U, Sigma) held at the profile
    project_unstable: bool = False
    projection_radius: float = 32.0  # inner product of the projection is restricted to xi <= this
    m_diag: int = 0

    def describe(self) -> str:
        return ";".join(f"{k}={v}" for k, v in asdict(self).items())


def smoothstep(x) -> np.ndarray:
    """C-infinity cutoff: 1 for x <= 1/2, 0 for x >= 1."""
    x = np.asarray(x, dtype=float)

    def psi(t):
        out = np.zeros_like(t)
        pos = t > 0
        out[pos] = np.exp(-1.0 / t[pos])
        return out

    a = psi(1.0 - x)
    b = psi(x - 0.5)
    return a / (a + b)


@dataclass(frozen=True)
class InitCondition:
    C_in: float
    T: float = 1.0
    radial: bool = True
    swirl: bool = True
    swirl_amplitude: float = 1.0

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not self.C_in > 0:
            raise ValueError("C_in must be positive")

    @property
    def s_in(self) -> float:
        return -math.log(self.T)  # times 1/r, applied by the caller

    def chi(self, x):
        return smoothstep(x)


@dataclass
class SimState:
    s: float
    U: np.ndarray
    A: np.ndarray
    Sigma: np.ndarray

    def copy(self) -> "SimState":
        return SimState(self.s, self.U.copy(), self.A.copy(), self.Sigma.copy())


def sim_grid(profile: Profile, config: SimConfig, C_in: float) -> RadialGrid:
    xi_max = config.xi_max if config.xi_max is not None else max(2.0 * C_in, 1e3 * profile.xi_s)
    if config.cluster_gain > 0:
        return profile_grid(config.n, xi_max, profile.xi_s, gain=config.cluster_gain)
    return RadialGrid(config.n, xi_max, 1.0)


def make_initial_data(profile: Profile, grid: RadialGrid, ic: InitCondition) -> SimState:
    xi = grid.xi
    if ic.C_in > grid.xi_max:
        raise ValueError("C_in lies outside the grid")
    v = profile.evaluate(xi)
    Ub, Sb = v[0], v[1]
    cut = 1.0 - ic.chi(xi / ic.C_in)
    U = Ub.copy()
    S = Sb.copy()
    if ic.radial:
        U = Ub - Ub * cut
        S = Sb + (1.0 - Sb) * cut
    A = ic.swirl_amplitude * (xi / ic.C_in) * ic.chi(xi) if ic.swirl else np.zeros_like(xi)
    U[0] = 0.0
    A[0] = 0.0
    return SimState(-math.log(ic.T) / profile.r, U, A, S)


# ---------------------------------------------------------------
# diagnostics


DIAG_COLUMNS = ("s", "E_A0", "E_pert_m", "E_inf", "dA0", "Sigma0",
                "dE_A0", "Omega_max", "Div_max", "dU0", "inner_edge")


@dataclass
class DecayDiagnostics:
    columns: dict[str, np.ndarray]
    config: dict = field(default_factory=dict)
    checkpoints: list = field(default_factory=list, repr=False)

    def __getitem__(self, key) -> np.ndarray:
        return self.columns[key]

    @property
    def s(self) -> np.ndarray:
        return self.columns["s"]

    def max_drift(self, keys=("E_A0", "E_pert_m", "E_inf", "dA0", "Sigma0")) -> float:
        return float(max(np.max(np.abs(self.columns[k] - self.columns[k][0])) for k in keys))

    def time_integral(self, key: str, s_end: float | None = None) -> float:
        s = self.s
        v = self.columns[key]
        if s_end is not None:
            keep = s <= s_end + 1e-12
            s, v = s[keep], v[keep]
        return float(np.trapezoid(v, s)) if hasattr(np, "trapezoid") else float(np.trapz(v, s))


def fit_decay(s, series, window: tuple[float, float] | None = None) -> float:
    """Rate k of series ~ exp(-k s) by least squares on log(series) over the window."""
    s = np.asarray(s, dtype=float)
    v = np.asarray(series, dtype=float)
    if window is not None:
        keep = (s >= window[0]) & (s <= window[1])
        s, v = s[keep], v[keep]
    if len(s) < 2:
        raise ValueError("need at least two samples in the window")
    if np.any(v <= 0):
        raise NonPositiveSeries("series must be positive on the fitting window")
    slope = np.polyfit(s, np.log(v), 1)[0]
    return float(-slope)


# ---------------------------------------------------------------
# the solver


class Simulator:
    def __init__(self, profile: Profile, grid: RadialGrid, weights: WeightFamily | None = None,
                 config: SimConfig = SimConfig(), unstable_guesses=None):
        self.profile = profile
        self.grid = grid
        self.weights = weights
        self.config = config
        self.r = profile.r
        self.alpha = profile.alpha
        xi = grid.xi
        self.inv_xi = np.zeros_like(xi)
        self.inv_xi[1:] = 1.0 / xi[1:]
        self.bg = Background.from_profile(profile, grid)
        self.D_up_odd = grid.d1_upwind(ODD)
        self.D_up_even = grid.d1_upwind(EVEN)
        self.D_dn_odd = grid.d1_downwind(ODD)
        self.D_dn_even = grid.d1_downwind(EVEN)
        self.D_c_odd = grid.d1(ODD)
        self.D_c_even = grid.d1(EVEN)
        self.Div = grid.divergence()
        speed = self.bg.signal_speed
        self.K_odd = grid.dissipation(speed, ODD, config.dissipation)
        self.K_even = grid.dissipation(speed, EVEN, config.dissipation)
        self.h = grid.spacing
        self.residual = None
        if config.well_balanced:
            z = np.zeros_like(xi)
            dU, _, dS = self.raw_rhs(SimState(0.0, self.bg.U.copy(), z, self.bg.S.copy()))
            self.residual = (dU, dS)
        self.basis = None
        self.basis_eigenvalues = None
        if config.project_unstable:
            self._build_basis(unstable_guesses)
        self._low = grid.quad * (weights.phi_g(xi) if weights is not None else japanese(xi) ** -2.25)
        self._lowA = None
        if weights is not None and weights.A is not None:
            wA = np.asarray(weights.phi_A(xi), dtype=float).copy()
            wA[~np.isfinite(wA)] = 0.0
            self._lowA = grid.quad * wA

    # -- right-hand side --------------------------------------------------
    def _advect(self, vel, f, up, dn):
        out = vel * (up @ f)
        neg = vel < 0
        if np.any(neg):
            out[neg] = vel[neg] * (dn @ f)[neg]
        return out

    def raw_rhs(self, st: SimState):
        r, a = self.r, self.alpha
        U, A, S = st.U, st.A, st.Sigma
        vel = self.grid.xi + U
        if np.any(S <= 0) or np.any(~np.isfinite(S)):
            if np.any(~np.isfinite(S)):
                raise NaNDetected("non-finite Sigma")
            raise VacuumBreach(f"Sigma <= 0 at xi = {self.grid.xi[np.argmin(S)]:.6g}")
        uox = U * self.inv_xi
        uox[0] = (self.D_c_odd @ U)[0]
        dU = (-(r - 1.0) * U - self._advect(vel, U, self.D_up_odd, self.D_dn_odd)
              - a * S * (self.D_c_even @ S) + A * A * self.inv_xi + self.K_odd @ U)
        dA = -(r - 1.0) * A - self._advect(vel, A, self.D_up_odd, self.D_dn_odd) - uox * A + self.K_odd @ A
        dS = (-(r - 1.0) * S - self._advect(vel, S, self.D_up_even, self.D_dn_even)
              - a * S * (self.Div @ U) + self.K_even @ S)
        dU[0] = 0.0
        dA[0] = 0.0
        return dU, dA, dS

    def rhs(self, st: SimState):
        if self.config.frozen_background:
            bgst = SimState(st.s, self.bg.U, st.A, self.bg.S)
            _, dA, _ = self.raw_rhs(bgst)
            z = np.zeros_like(dA)
            return z, dA, z
        dU, dA, dS = self.raw_rhs(st)
        if self.residual is not None:
            dU = dU - self.residual[0]
            dS = dS - self.residual[1]
        return dU, dA, dS

    # -- stepping ----------------------------------------------------------
    def stable_step(self, st: SimState) -> float:
        speed = np.abs(self.grid.xi + st.U) + self.alpha * np.abs(st.Sigma)
        return float(self.config.cfl * np.min(self.h / speed))

    def step(self, st: SimState, ds: float) -> SimState:
        limit = self.stable_step(st) / self.config.cfl
        if ds > limit * (1 + 1e-12):
            raise CFLViolation(f"ds = {ds:.3e} exceeds the CFL bound {limit:.3e}")

        def f(state):
            return self.rhs(state)

        def add(state, k, c):
            return SimState(state.s, state.U + c * k[0], state.A + c * k[1], state.Sigma + c * k[2])

        k1 = f(st)
        k2 = f(add(st, k1, 0.5 * ds))
        k3 = f(add(st, k2, 0.5 * ds))
        k4 = f(add(st, k3, ds))
        new = SimState(
            st.s + ds,
            st.U + ds / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
            st.A + ds / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
            st.Sigma + ds / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]),
        )
        new.U[0] = 0.0
        new.A[0] = 0.0
        if not (np.all(np.isfinite(new.U)) and np.all(np.isfinite(new.A)) and np.all(np.isfinite(new.Sigma))):
            raise NaNDetected(f"non-finite state at s = {new.s:.6g}")
        if np.any(new.Sigma <= 0):
            raise VacuumBreach(f"Sigma <= 0 at s = {new.s:.6g}")
        if self.basis is not None:
            self.project(new)
        return new

    # -- unstable-mode projection -------------------------------------------
    def _build_basis(self, guesses):
        if guesses is None:
            raise ValueError("projection requires eigenvalue guesses from the spectrum")
        op = assemble_L_from_background(self.bg, self.config.dissipation)
        vals, vecs = refine_modes(op, guesses)
        self.basis_eigenvalues = vals
        self.basis = real_basis(vecs, vals)
        G = self._gram_weights()
        B = self.basis
        self._gram = G
        self._proj_matrix = np.linalg.inv(B.T @ (G[:, None] * B))

    def _gram_weights(self) -> np.ndarray:
        xi = self.grid.xi
        w0 = self.grid.quad * (self.weights.phi_g(xi) if self.weights is not None else japanese(xi) ** -2.25)
        w0 = w0 * (xi <= self.config.projection_radius)
        return np.concatenate([w0[1:], w0])

    def perturbation(self, st: SimState) -> np.ndarray:
        return pack_UA(st.U - self.bg.U, st.Sigma - self.bg.S)

    def project(self, st: SimState) -> None:
        """Remove the X^0-orthogonal projection of (U - Ubar, Sigma - Sigmabar) onto the unstable modes."""
        v = self.perturbation(st)
        B = self.basis
        c = self._proj_matrix @ (B.T @ (self._gram * v))
        dU, dS = unpack_US(B @ c, self.grid.n)
        st.U -= dU
        st.Sigma -= dS
        st.U[0] = 0.0

    # -- diagnostics ---------------------------------------------------------
    def diagnostics(self, st: SimState) -> dict[str, float]:
        g = self.grid
        xi = g.xi
        r = self.r
        Ut = st.U - self.bg.U
        St = st.Sigma - self.bg.S
        E_A0 = float(np.dot(self._lowA, st.A**2)) if self._lowA is not None else math.nan
        _, dA, _ = self.rhs(st)
        dE = 2.0 * float(np.dot(self._lowA, st.A * dA)) if self._lowA is not None else math.nan
        E_pert = math.sqrt(float(np.dot(self._low, Ut**2 + St**2)))
        if self.config.m_diag > 0 and self.weights is not None:
            from .linear_analysis import InnerProduct

            ip = InnerProduct(g, self.weights, self.config.m_diag, 1.0, "X")
            E_pert = math.sqrt(ip.norm2(pack_UA(Ut, St)))
        jx = japanese(xi)
        dUt = self.D_c_odd @ Ut
        dSt = self.D_c_even @ St
        dAx = self.D_c_odd @ st.A
        grad2 = dUt**2 + (Ut * self.inv_xi) ** 2 + dSt**2 + dAx**2 + (st.A * self.inv_xi) ** 2
        grad2[0] = 2 * dUt[0] ** 2 + dSt[0] ** 2 + 2 * dAx[0] ** 2
        F = np.sqrt(jx ** (2 * (r - 1)) * (Ut**2 + st.A**2) + jx ** (2 * r) * grad2)
        Omega = st.A * self.inv_xi + dAx
        Omega[0] = 2.0 * dAx[0]
        dU = self.D_c_odd @ st.U
        Div = st.U * self.inv_xi + dU
        Div[0] = 2.0 * dU[0]
        pert = np.abs(Ut) + np.abs(St)
        pmax = pert.max()
        if pmax > 0:
            idx = np.nonzero(pert > 1e-8 * pmax)[0]
            edge = float(xi[idx[0]])
        else:
            edge = math.inf
        return {
            "s": st.s, "E_A0": E_A0, "E_pert_m": E_pert, "E_inf": float(F.max()),
            "dA0": float(dAx[0]), "Sigma0": float(st.Sigma[0]), "dE_A0": dE,
            "Omega_max": float(np.abs(Omega).max()), "Div_max": float(np.abs(Div).max()),
            "dU0": float(dU[0]), "inner_edge": edge,
        }

    def run(self, st: SimState, s_span: float | None = None, ds: float | None = None) -> tuple[SimState, DecayDiagnostics]:
        cfg = self.config
        span = cfg.s_span if s_span is None else s_span
        s_end = st.s + span
        if self.basis is not None:
            st = st.copy()
            self.project(st)
        ds = self.stable_step(st) if ds is None else ds
        n_steps = max(1, int(math.ceil(span / ds)))
        ds = span / n_steps
        rows = [self.diagnostics(st)]
        ckpts = []
        if cfg.n_checkpoint:
            ckpts.append(st.copy())
        for k in range(1, n_steps + 1):
            st = self.step(st, ds)
            if k % cfg.n_diag == 0 or k == n_steps:
                rows.append(self.diagnostics(st))
            if cfg.n_checkpoint and (k % cfg.n_checkpoint == 0 or k == n_steps):
                ckpts.append(st.copy())
        st.s = s_end if abs(st.s - s_end) < 1e-9 else st.s
        cols = {k: np.array([row[k] for row in rows]) for k in DIAG_COLUMNS}
        meta = {"config": cfg.describe(), "n": self.grid.n, "xi_max": self.grid.xi_max, "ds": ds,
                "r": self.r, "gamma": self.profile.gamma}
        if self.basis_eigenvalues is not None:
            meta["projected_eigenvalues"] = " ".join(f"{z.real:.10g}{z.imag:+.10g}j" for z in self.basis_eigenvalues)
        return st, DecayDiagnostics(cols, meta, ckpts)


def stationarity_residual(profile: Profile, grid: RadialGrid, dissipation: float = DISSIPATION) -> float:
    """max |rhs| of the unbalanced scheme at the exact profile."""
    sim = Simulator(profile, grid, None, SimConfig(n=grid.n, dissipation=dissipation, well_balanced=False))
    z = np.zeros(grid.n)
    dU, dA, dS = sim.raw_rhs(SimState(0.0, sim.bg.U.copy(), z, sim.bg.S.copy()))
    return float(max(np.abs(dU).max(), np.abs(dS).max()))


# ---------------------------------------------------------------
# files


def write_diagnostics(path, diag: DecayDiagnostics, extra: dict | None = None) -> None:
    from .textio import write_table

    header = dict(diag.config)
    header.update(extra or {})
    write_table(path, {k: diag.columns[k] for k in DIAG_COLUMNS}, header)


def read_diagnostics(path) -> DecayDiagnostics:
    from .textio import read_table

    header, cols = read_table(path)
    return DecayDiagnostics(cols, header)


def write_checkpoint(path, grid: RadialGrid, st: SimState, extra: dict | None = None) -> None:
    from .textio import write_table

    header = {"s": st.s, "n": grid.n, "xi_max": grid.xi_max}
    header.update(extra or {})
    write_table(path, {"xi": grid.xi, "U": st.U, "A": st.A, "Sigma": st.Sigma}, header)


def read_checkpoint(path) -> tuple[dict, SimState]:
    from .textio import read_table

    header, cols = read_table(path)
    return header, SimState(float(header["s"]), cols["U"], cols["A"], cols["Sigma"])
