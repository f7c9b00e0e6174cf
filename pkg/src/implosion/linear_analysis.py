"""Discretized linearized operators, weighted inner products, coercivity and spectrum.

Unknown layout: the odd components (U, A) vanish at the origin and that node
is dropped, so a (U, Sigma) vector is [U_1..U_{n-1}, Sigma_0..Sigma_{n-1}] and an
A vector is [A_1..A_{n-1}].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .profile_solver import Profile
from .radial import EVEN, ODD, RadialGrid
from .weights import WeightFamily


class EigSolverFailure(RuntimeError):
    pass


class SearchExhausted(RuntimeError):
    pass


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class RadialField:
    kind: str  # "scalar", "radial_vector" or "angular_vector"
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in ("scalar", "radial_vector", "angular_vector"):
            raise ValueError(f"unknown field kind {self.kind!r}")
        if self.parity == ODD and self.values[0] != 0.0:
            raise ValueError("vector fields must vanish at the origin")

    @property
    def parity(self) -> int:
        return EVEN if self.kind == "scalar" else ODD


# ---------------------------------------------------------------
# profile coefficients on a grid


@dataclass(frozen=True)
class Background:
    """Profile data sampled on a grid, with origin limits filled in."""

    grid: RadialGrid
    r: float
    alpha: float
    U: np.ndarray
    S: np.ndarray
    dU: np.ndarray
    dS: np.ndarray

    @classmethod
    def from_profile(cls, profile: Profile, grid: RadialGrid) -> "Background":
        v = profile.evaluate(grid.xi)
        return cls(grid, profile.r, profile.alpha, v[0], v[1], v[2], v[3])

    @property
    def U_over_xi(self) -> np.ndarray:
        out = np.empty_like(self.U)
        out[0] = self.dU[0]
        out[1:] = self.U[1:] / self.grid.xi[1:]
        return out

    @property
    def velocity(self) -> np.ndarray:
        return self.grid.xi + self.U

    @property
    def divU(self) -> np.ndarray:
        return self.U_over_xi + self.dU

    @property
    def signal_speed(self) -> np.ndarray:
        """Largest local characteristic speed |xi + U| + alpha Sigma."""
        return np.abs(self.velocity) + self.alpha * self.S


def transport_matrix(grid: RadialGrid, speed: np.ndarray, parity: int) -> sp.csr_matrix:
    """speed * d/dxi, biased upstream of the local sign of speed."""
    up = grid.d1_upwind(parity)
    down = grid.d1_downwind(parity)
    pos = (speed >= 0).astype(float)
    return (sp.diags(speed * pos) @ up + sp.diags(speed * (1 - pos)) @ down).tocsr()


def odd_embedding(n: int) -> sp.csr_matrix:
    """Map [f_1..f_{n-1}] to the full grid vector with f_0 = 0."""
    return sp.eye(n, n - 1, k=-1, format="csr")


@dataclass(frozen=True)
class LinearOperator:
    matrix: sp.csr_matrix
    kind: str  # "L" or "LA"
    grid: RadialGrid
    order: str = "upwind-5 transport, centred-4 acoustic, sixth-difference dissipation"

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def pack_UA(U: np.ndarray, S: np.ndarray | None = None) -> np.ndarray:
    if S is None:
        return np.asarray(U[1:], dtype=float)
    return np.concatenate([U[1:], S])


def unpack_US(v: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    U = np.concatenate([[0.0], v[: n - 1]])
    return U, v[n - 1:]


def unpack_A(v: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], v])


DISSIPATION = 0.5


def assemble_L_from_background(bg: Background, dissipation: float = DISSIPATION) -> LinearOperator:
    g = bg.grid
    n = g.n
    I = sp.eye(n, format="csr")
    a = bg.alpha
    decay = -(bg.r - 1.0) * I
    c = bg.signal_speed
    LUU = decay - transport_matrix(g, bg.velocity, ODD) - sp.diags(bg.dU) + g.dissipation(c, ODD, dissipation)
    LUS = -a * sp.diags(bg.dS) - a * sp.diags(bg.S) @ g.d1(EVEN)
    LSU = -sp.diags(bg.dS) - a * sp.diags(bg.S) @ g.divergence()
    LSS = (decay - transport_matrix(g, bg.velocity, EVEN) - a * sp.diags(bg.divU)
           + g.dissipation(c, EVEN, dissipation))
    E = odd_embedding(n)
    M = sp.bmat([[E.T @ LUU @ E, E.T @ LUS], [LSU @ E, LSS]], format="csr")
    return LinearOperator(M, "L", g)


def assemble_LA_from_background(bg: Background, dissipation: float = DISSIPATION) -> LinearOperator:
    g = bg.grid
    n = g.n
    M = (-(bg.r - 1.0) * sp.eye(n) - transport_matrix(g, bg.velocity, ODD) - sp.diags(bg.U_over_xi)
         + g.dissipation(bg.signal_speed, ODD, dissipation))
    E = odd_embedding(n)
    return LinearOperator((E.T @ M @ E).tocsr(), "LA", g)


def assemble_L(profile: Profile, grid: RadialGrid, dissipation: float = DISSIPATION) -> LinearOperator:
    return assemble_L_from_background(Background.from_profile(profile, grid), dissipation)


def assemble_LA(profile: Profile, grid: RadialGrid, dissipation: float = DISSIPATION) -> LinearOperator:
    return assemble_LA_from_background(Background.from_profile(profile, grid), dissipation)


# ---------------------------------------------------------------
# inner products


def _weight_or_zero(values: np.ndarray) -> np.ndarray:
    out = np.asarray(values, dtype=float).copy()
    out[~np.isfinite(out)] = 0.0
    return out


@dataclass(frozen=True)
class InnerProduct:
    """<f,g> = eps int Lap^m f Lap^m g phi_2m^2 phi_g + int f g phi_low over the plane."""

    grid: RadialGrid
    weights: WeightFamily
    m: int
    eps: float
    kind: str = "X"  # "X" for (U, Sigma), "XA" for A

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("m must be non-negative")
        if self.m > 0 and not self.eps > 0:
            raise ValueError("eps must be positive for m >= 1")
        if self.kind not in ("X", "XA"):
            raise ValueError(self.kind)

    @property
    def high_weight(self) -> np.ndarray:
        xi = self.grid.xi
        return self.grid.quad * self.weights.phi_1(xi) ** (4 * self.m) * self.weights.phi_g(xi)

    @property
    def low_weight(self) -> np.ndarray:
        xi = self.grid.xi
        phi = self.weights.phi_g(xi) if self.kind == "X" else _weight_or_zero(self.weights.phi_A(xi))
        return self.grid.quad * phi

    def lap_power(self, f_full: np.ndarray, parity: int) -> np.ndarray:
        L = self.grid.laplacian(parity)
        for _ in range(self.m):
            f_full = L @ f_full
        return f_full

    def _components(self, v: np.ndarray):
        n = self.grid.n
        if self.kind == "X":
            U, S = unpack_US(v, n)
            return [(U, ODD), (S, EVEN)]
        return [(unpack_A(v), ODD)]

    def parts(self, f: np.ndarray, g: np.ndarray) -> tuple[float, float]:
        """(high-order part without eps, low-order part)."""
        hi = lo = 0.0
        wh, wl = self.high_weight, self.low_weight
        for (a, p), (b, _) in zip(self._components(f), self._components(g)):
            if self.m > 0:
                hi += float(np.dot(wh, self.lap_power(a, p) * self.lap_power(b, p)))
            lo += float(np.dot(wl, a * b))
        return hi, lo

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        hi, lo = self.parts(f, g)
        return self.eps * hi + lo if self.m > 0 else lo

    def norm2(self, f: np.ndarray) -> float:
        return self.inner(f, f)

    def gram(self) -> sp.csr_matrix:
        n = self.grid.n
        E = odd_embedding(n)
        blocks = []
        comps = [(ODD, True), (EVEN, False)] if self.kind == "X" else [(ODD, True)]
        for parity, odd in comps:
            G = sp.diags(self.low_weight)
            if self.m > 0:
                P = sp.eye(n, format="csr")
                Lap = self.grid.laplacian(parity)
                for _ in range(self.m):
                    P = (Lap @ P).tocsr()
                G = G + self.eps * (P.T @ sp.diags(self.high_weight) @ P)
            if odd:
                G = E.T @ G @ E
            blocks.append(G)
        return sp.block_diag(blocks, format="csr")


@dataclass(frozen=True)
class WInnerProduct:
    """mu <f,g>_{X^{m+1}} + <f,g>_{X^m}."""

    lower: InnerProduct
    upper: InnerProduct
    mu: float

    def inner(self, f, g) -> float:
        return self.mu * self.upper.inner(f, g) + self.lower.inner(f, g)

    def gram(self) -> sp.csr_matrix:
        return (self.mu * self.upper.gram() + self.lower.gram()).tocsr()


def gram_min_eigenvalue(G: sp.spmatrix) -> float:
    """Smallest eigenvalue of the Jacobi-scaled Gram matrix (same signature as G)."""
    A = G.toarray()
    A = 0.5 * (A + A.T)
    d = np.sqrt(np.abs(np.diag(A)))
    d[d == 0] = 1.0
    B = A / np.outer(d, d)
    return float(sla.eigvalsh(B, subset_by_index=[0, 0])[0])


# ---------------------------------------------------------------
# random smooth test fields


def bump_field(xi: np.ndarray, centres, widths, amps, parity: int) -> np.ndarray:
    out = np.zeros_like(xi)
    for c, w, a in zip(centres, widths, amps):
        out += a * (np.exp(-(((xi - c) / w) ** 2)) + parity * np.exp(-(((xi + c) / w) ** 2)))
    if parity == ODD:
        out[0] = 0.0
    return out


def random_fields(grid: RadialGrid, n_samples: int, seed: int, kind: str = "X",
                  centre_range=(0.0, 8.0), width_range=(0.5, 1.2), max_bumps: int = 3,
                  components: tuple[bool, bool] = (True, True)) -> list[np.ndarray]:
    """Seeded linear combinations of Gaussian bumps, parity-correct, packed."""
    rng = np.random.default_rng(seed)
    xi = grid.xi
    out = []
    lo, hi = centre_range
    for _ in range(n_samples):
        parts = []
        parities = (ODD, EVEN) if kind == "X" else (ODD,)
        for j, p in enumerate(parities):
            k = int(rng.integers(1, max_bumps + 1))
            c = rng.uniform(lo, hi, k)
            w = rng.uniform(*width_range, k) * (1.0 + 0.05 * c)
            a = rng.normal(size=k)
            on = components[j] if kind == "X" else True
            parts.append(bump_field(xi, c, w, a, p) if on else np.zeros_like(xi))
        out.append(pack_UA(*parts) if kind == "X" else pack_UA(parts[0]))
    return out


# ---------------------------------------------------------------
# coercivity


@dataclass
class FormSamples:
    """Quadratic-form pieces per sample: <Lf,f> + lam |f|^2 split into eps part and L^2 part."""

    high: np.ndarray
    low: np.ndarray
    norm_high: np.ndarray
    norm_low: np.ndarray
    fields: list = field(repr=False, default_factory=list)

    def total(self, eps: float) -> np.ndarray:
        return eps * self.high + self.low

    def norms(self, eps: float) -> np.ndarray:
        return eps * self.norm_high + self.norm_low


def form_samples(op: LinearOperator, ip: InnerProduct, fields, lam: float) -> FormSamples:
    hi, lo, nh, nl = [], [], [], []
    for f in fields:
        Lf = op.apply(f)
        a, b = ip.parts(Lf, f)
        c, d = ip.parts(f, f)
        hi.append(a + lam * c)
        lo.append(b + lam * d)
        nh.append(c)
        nl.append(d)
    return FormSamples(np.array(hi), np.array(lo), np.array(nh), np.array(nl), list(fields))


def ball_mass(grid: RadialGrid, weights: WeightFamily, fields, R: float) -> np.ndarray:
    """int_{|y| <= R} (|U|^2 + |Sigma|^2) phi_g for packed (U, Sigma) fields."""
    n = grid.n
    w = grid.quad * weights.phi_g(grid.xi) * (grid.xi <= R)
    out = []
    for f in fields:
        U, S = unpack_US(f, n)
        out.append(float(np.dot(w, U * U + S * S)))
    return np.array(out)


@dataclass(frozen=True)
class CoercivityResult:
    m: int
    lam: float
    eps: float
    C_m: float
    C_bar: float
    R4: float
    max_form_L: float
    max_form_A: float
    n_pass_L: int
    n_pass_A: int
    n_samples: int
    far_max_form: float
    far_pass: int
    near_family_needs_correction: bool
    A_min_certified_C: float

    @property
    def passed(self) -> bool:
        return self.n_pass_L == self.n_samples and self.n_pass_A == self.n_samples and self.far_pass == self.n_samples


EPS_LADDER = 256


def _ladder(start: float, n: int = 64):
    v = start
    for _ in range(n):
        yield v
        v *= 2.0


def coercivity_check(profile: Profile, weights: WeightFamily, grid: RadialGrid, m: int = 6,
                     n_samples: int = 100, seed: int = 0, lam: float | None = None,
                     centre_range=(0.0, 8.0), width_range=(0.5, 1.2), R4_start: float | None = None,
                     far_span: float = 20.0) -> CoercivityResult:
    """Certify <Lf,f>_{X^m} + lam|f|^2 <= C_bar int_{|y|<=R4} |f|^2 phi_g and the A form with no correction.

    eps_m = (r-1)/(4 C_m) with C_m doubled until some (R4, C_bar) certifies every
    sample, samples supported beyond 2 R4 pass with no correction, and the A
    form passes outright.
    """
    r = profile.r
    lam = (r - 1.0) / 4.0 if lam is None else lam
    R4_start = 2.0 * profile.xi_s if R4_start is None else R4_start
    bg = Background.from_profile(profile, grid)
    opL = assemble_L_from_background(bg)
    opA = assemble_LA_from_background(bg)
    ipX = InnerProduct(grid, weights, m, 1.0, "X")
    ipA = InnerProduct(grid, weights, m, 1.0, "XA")
    fL = random_fields(grid, n_samples, seed, "X", centre_range, width_range)
    fA = random_fields(grid, n_samples, seed + 1, "XA", centre_range, width_range)
    FL = form_samples(opL, ipX, fL, lam)
    FA = form_samples(opA, ipA, fA, lam)

    R_cap = 0.5 * (grid.xi_max - far_span) - 2.0
    far_cache: dict[float, FormSamples] = {}
    mass_cache: dict[float, np.ndarray] = {}

    def far(R4):
        if R4 not in far_cache:
            lo = 2.0 * R4 + 3.0 * width_range[1] * (1.0 + 0.05 * (2 * R4 + far_span))
            ff = random_fields(grid, n_samples, seed + 2, "X", (lo, lo + far_span), width_range)
            far_cache[R4] = form_samples(opL, ipX, ff, lam)
        return far_cache[R4]

    def mass(R4):
        if R4 not in mass_cache:
            mass_cache[R4] = ball_mass(grid, weights, fL, R4)
        return mass_cache[R4]

    for C_m in _ladder(1.0, EPS_LADDER):
        eps = (r - 1.0) / (4.0 * C_m)
        totA = FA.total(eps)
        if np.any(totA > 0):
            continue
        totL = FL.total(eps)
        for R4 in _ladder(R4_start):
            if R4 > R_cap:
                break
            ft = far(R4).total(eps)
            if np.any(ft > 0):
                continue
            K = mass(R4)
            need = np.where(totL > 0, totL, 0.0)
            if np.any((need > 0) & (K <= 0)):
                continue
            ratio = np.where(need > 0, need / np.where(K > 0, K, 1.0), 0.0)
            C_needed = float(ratio.max())
            C_bar = 0.0 if C_needed == 0 else 2.0 ** math.ceil(math.log2(C_needed))
            final = totL - C_bar * K
            return CoercivityResult(
                m=m, lam=lam, eps=eps, C_m=C_m, C_bar=C_bar, R4=R4,
                max_form_L=float(final.max()), max_form_A=float(totA.max()),
                n_pass_L=int(np.sum(final <= 0)), n_pass_A=int(np.sum(totA <= 0)),
                n_samples=n_samples, far_max_form=float(ft.max()), far_pass=int(np.sum(ft <= 0)),
                near_family_needs_correction=bool(C_needed > 0), A_min_certified_C=0.0,
            )
    raise SearchExhausted("no (eps_m, C_bar, R4) certifies all samples within the caps")


def coercivity_grid(n: int = 600, xi_max: float = 150.0) -> RadialGrid:
    """Unclustered grid for the high-order forms: repeated Laplacians amplify rounding like h^-2m."""
    return RadialGrid(n, xi_max, 1.0)


def spectrum_grid(n: int = 300, xi_max: float = 50.0, xi_s: float = 2.0) -> RadialGrid:
    from .radial import profile_grid

    return profile_grid(n, xi_max, xi_s)


def smallest_passing_m(profile: Profile, weights: WeightFamily, grid: RadialGrid,
                       ms=range(1, 9), **kw) -> int | None:
    for m in ms:
        try:
            if coercivity_check(profile, weights, grid, m=m, **kw).passed:
                return m
        except SearchExhausted:
            continue
    return None


# ---------------------------------------------------------------
# spectrum


def decay_parameters(r: float) -> dict[str, float]:
    lam = (r - 1.0) / 4.0
    return {"lambda": lam, "eta_s": 0.6 * lam, "eta": 0.8 * lam, "lambda1": 0.9 * lam}


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    unstable: np.ndarray
    vectors: np.ndarray  # columns, packed layout, for the unstable set
    eta: float
    lam: float
    m: int
    grid: RadialGrid

    @property
    def unstable_count(self) -> int:
        return int(len(self.unstable))

    @property
    def bulk(self) -> np.ndarray:
        return self.eigenvalues[self.eigenvalues.real <= -self.eta]

    @property
    def bulk_max_real(self) -> float:
        b = self.bulk
        return float(b.real.max()) if b.size else -math.inf


def spectrum(op: LinearOperator, r: float, m: int = 6) -> Spectrum:
    """All eigenvalues of the discretized L; the set Re z > -eta and its eigenvectors.

    The eigenvalues do not depend on the inner product (a similarity transform by
    the Gram square root leaves them unchanged), so the plain matrix is used.
    """
    if op.size > 1200:
        raise ValueError("dense eigensolve limited to size <= 1200")
    par = decay_parameters(r)
    try:
        w, V = sla.eig(op.dense())
    except (sla.LinAlgError, ValueError) as exc:
        raise EigSolverFailure(str(exc)) from exc
    if not np.all(np.isfinite(w)):
        raise EigSolverFailure("non-finite eigenvalues")
    order = np.argsort(-w.real)
    w, V = w[order], V[:, order]
    sel = w.real > -par["eta"]
    return Spectrum(w, w[sel], V[:, sel], par["eta"], par["lambda"], m, op.grid)


def refine_modes(op: LinearOperator, guesses) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of a (large, sparse) operator near the given eigenvalue guesses."""
    vals, vecs = [], []
    A = op.matrix.tocsc()
    for z in guesses:
        shift = complex(z) + 1e-7
        try:
            w, v = spla.eigs(A, k=1, sigma=shift, which="LM")
        except (spla.ArpackNoConvergence, RuntimeError) as exc:
            raise EigSolverFailure(str(exc)) from exc
        vals.append(w[0])
        vecs.append(v[:, 0])
    return np.array(vals), np.array(vecs).T


def real_basis(vectors: np.ndarray, values: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Real spanning set: real parts for real eigenvalues, (Re, Im) for each conjugate pair."""
    cols = []
    used = np.zeros(len(values), bool)
    for i, z in enumerate(values):
        if used[i]:
            continue
        used[i] = True
        v = vectors[:, i]
        if abs(z.imag) <= tol * max(1.0, abs(z)):
            k = np.argmax(np.abs(v))
            cols.append(np.real(v * np.exp(-1j * np.angle(v[k]))))
        else:
            cols += [v.real, v.imag]
            j = [k for k in range(len(values)) if not used[k] and abs(values[k] - np.conj(z)) < 1e-6 * max(1, abs(z))]
            if j:
                used[j[0]] = True
    return np.array(cols).T if cols else np.zeros((vectors.shape[0], 0))


def interpolate_packed(v: np.ndarray, src: RadialGrid, dst: RadialGrid, kind: str = "X") -> np.ndarray:
    from scipy.interpolate import CubicSpline

    if kind == "X":
        U, S = unpack_US(v, src.n)
        Ui = CubicSpline(src.xi, U)(dst.xi)
        Si = CubicSpline(src.xi, S)(dst.xi)
        return pack_UA(Ui, Si)
    A = unpack_A(v)
    return pack_UA(CubicSpline(src.xi, A)(dst.xi))


def eigenvector_change(sc: Spectrum, sf: Spectrum, ip_coarse: InnerProduct) -> list[float]:
    """Relative X-norm change of each coarse unstable eigenvector against its fine match."""
    out = []
    n_c = sc.grid.n
    stride = (sf.grid.n - 1) // (n_c - 1)
    if (n_c - 1) * stride + 1 != sf.grid.n:
        raise GridMismatch("fine grid must nest the coarse grid")
    for i, z in enumerate(sc.unstable):
        j = int(np.argmin(np.abs(sf.unstable - z)))
        vc = sc.vectors[:, i]
        Uf, Sf = unpack_US(sf.vectors[:, j], sf.grid.n)
        vf = pack_UA(Uf[::stride], Sf[::stride])
        G = ip_coarse.gram()

        def nrm(a):
            return math.sqrt(abs(np.vdot(a, G @ a)))

        vc = vc / nrm(vc)
        vf = vf / nrm(vf)
        phase = np.vdot(vf, G @ vc)
        vf = vf * phase / abs(phase)
        out.append(nrm(vc - vf))
    return out


def write_spectrum(path, sp_: Spectrum, extra: dict | None = None) -> None:
    from .textio import write_table

    header = {"unstable_count": sp_.unstable_count, "eta": sp_.eta, "lambda": sp_.lam, "m": sp_.m,
              "N": sp_.grid.n, "xi_max": sp_.grid.xi_max}
    header.update(extra or {})
    write_table(path, {"re": sp_.eigenvalues.real, "im": sp_.eigenvalues.imag}, header)
