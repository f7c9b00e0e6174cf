"""Radial grid, parity-aware finite-difference stencils and quadrature.

The grid is xi = c sinh(b q) with q uniform on [0, 1]; the map is odd in q, so
ghost values across the origin follow exactly from the parity of the field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
import scipy.sparse as sp

EVEN = 1
ODD = -1


def fd_weights(offsets, order: int) -> np.ndarray:
    """Weights w with sum_k w_k f(x + o_k h) ~ h^order f^(order)(x)."""
    o = np.asarray(offsets, dtype=float)
    n = len(o)
    V = np.vander(o, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(V, rhs)


def _stencil_matrix(n: int, order: int, centre: tuple[int, ...], parity: int) -> sp.csr_matrix:
    """Sparse q-derivative matrix; windows shift left near the outer end, ghosts reflect at 0."""
    width = len(centre)
    rows, cols, vals = [], [], []
    for j in range(n):
        offs = np.array(centre)
        over = j + offs.max() - (n - 1)
        if over > 0:
            offs = offs - over
        w = fd_weights(offs, order)
        for o, wk in zip(offs, w):
            k = j + o
            fac = 1.0
            if k < 0:
                k = -k
                fac = float(parity)
            rows.append(j)
            cols.append(k)
            vals.append(fac * wk)
    del width
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


CENTRED_1 = (-2, -1, 0, 1, 2)
CENTRED_2 = (-2, -1, 0, 1, 2)
UPWIND_1 = (-3, -2, -1, 0, 1, 2)
DOWNWIND_1 = (-2, -1, 0, 1, 2, 3)
ONE_SIDED_2 = (-5, -4, -3, -2, -1, 0)


@dataclass(frozen=True)
class RadialGrid:
    """n nodes (origin included) on [0, xi_max].

    Node density in xi is 1/sqrt(c^2 + xi^2), optionally plus an even Gaussian
    pair of height ``gain / sqrt(c^2 + a^2)`` and width ``width`` centred at
    xi = +-a (``cluster_at = a``).  Without clustering this is xi = c sinh(b q).
    """

    n: int
    xi_max: float
    c: float = 1.0
    cluster_at: float | None = None
    cluster_width: float = 0.5
    cluster_gain: float = 3.0

    @cached_property
    def b(self) -> float:
        return math.asinh(self.xi_max / self.c)

    @property
    def _amp(self) -> float:
        if self.cluster_at is None:
            return 0.0
        return self.cluster_gain / math.hypot(self.c, self.cluster_at)

    def _density(self, x):
        a, w, A = self.cluster_at or 0.0, self.cluster_width, self._amp
        return 1.0 / np.sqrt(self.c**2 + x**2) + A * (np.exp(-(((x - a) / w) ** 2)) + np.exp(-(((x + a) / w) ** 2)))

    def _density_slope(self, x):
        a, w, A = self.cluster_at or 0.0, self.cluster_width, self._amp
        g1 = np.exp(-(((x - a) / w) ** 2))
        g2 = np.exp(-(((x + a) / w) ** 2))
        return -x / (self.c**2 + x**2) ** 1.5 - 2.0 * A / w**2 * ((x - a) * g1 + (x + a) * g2)

    def _antiderivative(self, x):
        from scipy.special import erf

        a, w, A = self.cluster_at or 0.0, self.cluster_width, self._amp
        return np.arcsinh(x / self.c) + A * w * math.sqrt(math.pi) / 2.0 * (erf((x - a) / w) + erf((x + a) / w))

    @cached_property
    def _total(self) -> float:
        return float(self._antiderivative(np.array(self.xi_max)))

    @cached_property
    def q(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n)

    @property
    def dq(self) -> float:
        return 1.0 / (self.n - 1)

    @cached_property
    def xi(self) -> np.ndarray:
        if self.cluster_at is None:
            x = self.c * np.sinh(self.b * self.q)
        else:
            target = self.q * self._total
            lo = np.zeros(self.n)
            hi = np.full(self.n, self.xi_max)
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                below = self._antiderivative(mid) < target
                lo = np.where(below, mid, lo)
                hi = np.where(below, hi, mid)
            x = 0.5 * (lo + hi)
            for _ in range(2):
                x = x - (self._antiderivative(x) - target) / self._density(x)
        x[0] = 0.0
        x[-1] = self.xi_max
        return x

    @cached_property
    def xi_q(self) -> np.ndarray:
        if self.cluster_at is None:
            return self.c * self.b * np.cosh(self.b * self.q)
        return self._total / self._density(self.xi)

    @cached_property
    def xi_qq(self) -> np.ndarray:
        if self.cluster_at is None:
            return self.c * self.b**2 * np.sinh(self.b * self.q)
        return -self.xi_q**2 * self._density_slope(self.xi) / self._density(self.xi)

    @cached_property
    def spacing(self) -> np.ndarray:
        """Local mesh width xi_q dq."""
        return self.xi_q * self.dq

    def spacing_at(self, xi: float) -> float:
        return float(np.interp(xi, self.xi, self.spacing))

    def refined(self, factor: int = 2) -> "RadialGrid":
        return replace(self, n=(self.n - 1) * factor + 1)

    # -- differentiation ------------------------------------------------
    def _q_matrix(self, order: int, centre, parity: int) -> sp.csr_matrix:
        return _stencil_matrix(self.n, order, centre, parity) / self.dq**order

    def _first(self, centre, parity: int) -> sp.csr_matrix:
        return (sp.diags(1.0 / self.xi_q) @ self._q_matrix(1, centre, parity)).tocsr()

    def d1(self, parity: int) -> sp.csr_matrix:
        """Fourth-order centred d/dxi."""
        return self._cache("d1", parity, lambda: self._first(CENTRED_1, parity))

    def d1_upwind(self, parity: int) -> sp.csr_matrix:
        """Fifth-order d/dxi biased toward smaller xi (for positive transport speed)."""
        return self._cache("d1u", parity, lambda: self._first(UPWIND_1, parity))

    def d1_downwind(self, parity: int) -> sp.csr_matrix:
        return self._cache("d1d", parity, lambda: self._first(DOWNWIND_1, parity))

    def d2(self, parity: int) -> sp.csr_matrix:
        """Fourth-order d^2/dxi^2 through the mapping."""

        def build():
            n = self.n
            rows = _stencil_matrix(n, 2, CENTRED_2, parity).tolil()
            tail = _stencil_matrix(n, 2, ONE_SIDED_2, parity).tolil()
            for j in (n - 2, n - 1):
                rows[j] = tail[j]
            Dqq = rows.tocsr() / self.dq**2
            Dq = self._q_matrix(1, CENTRED_1, parity)
            inv = sp.diags(1.0 / self.xi_q**2)
            return (inv @ (Dqq - sp.diags(self.xi_qq / self.xi_q) @ Dq)).tocsr()

        return self._cache("d2", parity, build)

    def sixth_difference(self, parity: int) -> sp.csr_matrix:
        """Undivided delta^6 in q with parity ghosts; zero on the last three rows."""

        def build():
            w = np.array([1.0, -6.0, 15.0, -20.0, 15.0, -6.0, 1.0])
            n = self.n
            rows, cols, vals = [], [], []
            for j in range(n - 3):
                for o, wk in zip(range(-3, 4), w):
                    k, fac = j + o, 1.0
                    if k < 0:
                        k, fac = -k, float(parity)
                    rows.append(j)
                    cols.append(k)
                    vals.append(fac * wk)
            return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

        return self._cache("d6", parity, build)

    def dissipation(self, speed: np.ndarray, parity: int, strength: float) -> sp.csr_matrix:
        """Kreiss-Oliger term (strength/64)(speed/h) delta^6, O(h^5) on smooth data."""
        coef = strength / 64.0 * np.abs(speed) / self.spacing
        return (sp.diags(coef) @ self.sixth_difference(parity)).tocsr()

    def divergence(self) -> sp.csr_matrix:
        """(1/xi + d/dxi) on radial vectors, limit 2 f'(0) at the origin."""

        def build():
            D = self.d1(ODD).tolil()
            inv = np.zeros(self.n)
            inv[1:] = 1.0 / self.xi[1:]
            M = (sp.diags(inv) + D).tolil()
            M[0] = 2.0 * D[0]
            return M.tocsr()

        return self._cache("div", 0, build)

    def laplacian(self, parity: int) -> sp.csr_matrix:
        """Scalar Laplacian for even fields, radial vector Laplacian for odd ones."""

        def build():
            D1 = self.d1(parity)
            D2 = self.d2(parity)
            inv = np.zeros(self.n)
            inv[1:] = 1.0 / self.xi[1:]
            M = D2 + sp.diags(inv) @ D1
            if parity == ODD:
                M = M - sp.diags(inv**2)
            M = M.tolil()
            if parity == EVEN:
                M[0] = 2.0 * D2[0]
            else:
                M[0] = 0.0
            return M.tocsr()

        return self._cache("lap", parity, build)

    def _cache(self, name, parity, builder):
        store = self.__dict__.setdefault("_ops", {})
        key = (name, parity)
        if key not in store:
            store[key] = builder()
        return store[key]

    # -- quadrature -----------------------------------------------------
    @cached_property
    def quad(self) -> np.ndarray:
        """Dual-cell weights of 2 pi xi dxi; the origin cell carries pi xi_{1/2}^2."""
        x = self.xi
        mid = np.concatenate([[0.0], 0.5 * (x[1:] + x[:-1]), [x[-1]]])
        return math.pi * (mid[1:] ** 2 - mid[:-1] ** 2)

    def integrate(self, f) -> float:
        return float(np.dot(self.quad, f))

    def interpolate(self, values: np.ndarray, where) -> np.ndarray:
        from scipy.interpolate import CubicSpline

        return CubicSpline(self.xi, values, axis=-1)(where)


def profile_grid(n: int, xi_max: float, xi_s: float, c: float = 1.0, gain: float = 15.0,
                 width_fraction: float = 0.1) -> RadialGrid:
    """Sinh grid with extra nodes across the sonic radius, where the profile varies fastest."""
    return RadialGrid(n, xi_max, c, xi_s, width_fraction * xi_s, gain)
