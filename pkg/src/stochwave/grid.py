"""Uniform 1-D grids, finite-difference operators, quadrature and shifts.

Profiles are plain arrays of shape ``(n_components, N)``.  Fronts are stored
as full values U; the difference X = U - Phi_ref is what vanishes at the
ends, so operators accept the far-field limits as ghost values.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

DIRICHLET = "dirichlet_on_X"
PERIODIC = "periodic"

# central stencils: offsets and weights (times 1/dx^2 resp. 1/dx)
_D2 = {2: ((-1, 0, 1), (1.0, -2.0, 1.0)),
       4: ((-2, -1, 0, 1, 2), (-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12))}
_D1 = {2: ((-1, 1), (-0.5, 0.5)),
       4: ((-2, -1, 1, 2), (1 / 12, -2 / 3, 2 / 3, -1 / 12))}


class ShiftOutOfDomain(ValueError):
    """Raised when a requested shift would lose the wave (|gamma| >= L/2)."""


@dataclass(frozen=True)
class Grid:
    """Uniform mesh on [-L, L] with N nodes.

    ``order`` selects second- or fourth-order central stencils for every
    operator assembled from this grid.
    """
    L: float
    N: int
    boundary_mode: str = DIRICHLET
    order: int = 2
    x: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.N < 16:
            raise ValueError("grid needs at least 16 points")
        if self.L <= 0:
            raise ValueError("half-length must be positive")
        if self.boundary_mode not in (DIRICHLET, PERIODIC):
            raise ValueError(f"unknown boundary mode {self.boundary_mode!r}")
        if self.order not in _D2:
            raise ValueError("stencil order must be 2 or 4")
        x = np.linspace(-self.L, self.L, self.N)
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "_cache", {})

    @property
    def dx(self) -> float:
        return 2.0 * self.L / (self.N - 1)

    @property
    def periodic(self) -> bool:
        return self.boundary_mode == PERIODIC

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.L, factor * (self.N - 1) + 1, self.boundary_mode, self.order)

    # ---- operators -------------------------------------------------------

    def _stencil_matrix(self, stencil, scale) -> sp.csr_matrix:
        key = ("m", stencil, scale)
        if key not in self._cache:
            self._cache[key] = self._build_stencil_matrix(stencil, scale)
        return self._cache[key]

    def _build_stencil_matrix(self, stencil, scale) -> sp.csr_matrix:
        offsets, weights = stencil
        n = self.N
        if self.periodic:
            rows, cols, vals = [], [], []
            idx = np.arange(n)
            for o, w in zip(offsets, weights):
                rows.append(idx)
                cols.append((idx + o) % n)
                vals.append(np.full(n, w))
            m = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(n, n))
        else:
            m = sp.diags([np.full(n - abs(o), w) for o, w in zip(offsets, weights)],
                         list(offsets), shape=(n, n), format="csr")
        return (m * scale).tocsr()

    def d2_matrix(self) -> sp.csr_matrix:
        """Second-difference matrix with zero ghosts (acts on X)."""
        return self._stencil_matrix(_D2[self.order], 1.0 / self.dx**2)

    def d1_matrix(self) -> sp.csr_matrix:
        """Central first-difference matrix with zero ghosts (acts on X)."""
        return self._stencil_matrix(_D1[self.order], 1.0 / self.dx)

    def _ghost_vector(self, stencil, scale, left, right) -> np.ndarray:
        # contribution of constant ghost values beyond each end
        offsets, weights = stencil
        b = np.zeros(self.N)
        for o, w in zip(offsets, weights):
            for i in range(abs(o)):
                if o < 0:
                    b[i] += w * left
                else:
                    b[self.N - 1 - i] += w * right
        return b * scale

    def _apply(self, stencil, scale, p, left, right):
        p = _as_profile(p)
        m = self._stencil_matrix(stencil, scale)
        flat = p.reshape(-1, self.N)
        out = (m @ flat.T).T.reshape(p.shape)
        if not self.periodic:
            ncomp = p.shape[-2]
            left = np.broadcast_to(np.asarray(left, dtype=float), (ncomp,))
            right = np.broadcast_to(np.asarray(right, dtype=float), (ncomp,))
            for c in range(ncomp):
                if left[c] != 0.0 or right[c] != 0.0:
                    out[..., c, :] += self._ghost_vector(stencil, scale, left[c], right[c])
        return out

    def second_difference(self, p, left=0.0, right=0.0) -> np.ndarray:
        """Componentwise central second difference of (..., n, N) arrays.

        ``left``/``right`` are ghost values beyond the ends (per component);
        they are ignored in periodic mode.
        """
        return self._apply(_D2[self.order], 1.0 / self.dx**2, p, left, right)

    def first_difference(self, p, left=0.0, right=0.0) -> np.ndarray:
        return self._apply(_D1[self.order], 1.0 / self.dx, p, left, right)

    # ---- quadrature ------------------------------------------------------

    def inner_product(self, p, q) -> float:
        """dx * sum over nodes and components (rectangle rule)."""
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        if p.shape != q.shape or p.shape[-1] != self.N:
            raise ValueError(f"profile shapes {p.shape} and {q.shape} do not match the grid")
        return float(self.dx * np.sum(p * q))

    def norm(self, p) -> float:
        return np.sqrt(self.inner_product(p, p))

    def h1_norm_sq(self, p) -> float:
        """||p||^2 + ||p'||^2 for perturbation-type profiles."""
        p = _as_profile(p)
        dp = self.first_difference(p)
        return self.inner_product(p, p) + self.inner_product(dp, dp)

    # ---- shifts ----------------------------------------------------------

    def shift(self, p, gamma: float, left=None, right=None) -> np.ndarray:
        """Values of p(x - gamma) by 4-point Lagrange interpolation.

        Outside the grid the profile is extended by its end values (or by the
        given far-field limits), which matches constant front tails.
        """
        if abs(gamma) >= self.L / 2:
            raise ShiftOutOfDomain(f"shift {gamma:.4g} exceeds half the domain")
        p = _as_profile(p)
        if gamma == 0.0:
            return p.copy()
        s = -gamma / self.dx               # sample at index i + s
        k = int(np.floor(s))
        t = s - k
        # Lagrange weights on nodes k-1, k, k+1, k+2 relative to i
        w = (-t * (t - 1) * (t - 2) / 6, (t + 1) * (t - 1) * (t - 2) / 2,
             -(t + 1) * t * (t - 2) / 2, (t + 1) * t * (t - 1) / 6)
        n = self.N
        pad = abs(k) + 3
        lo = p[:, :1] if left is None else np.reshape(np.asarray(left, float), (-1, 1)) * np.ones((p.shape[0], 1))
        hi = p[:, -1:] if right is None else np.reshape(np.asarray(right, float), (-1, 1)) * np.ones((p.shape[0], 1))
        if self.periodic:
            ext = np.concatenate([p[:, -pad:], p, p[:, :pad]], axis=1)
        else:
            ext = np.concatenate([np.repeat(lo, pad, axis=1), p, np.repeat(hi, pad, axis=1)], axis=1)
        out = np.zeros_like(p)
        for j, wj in zip(range(-1, 3), w):
            start = pad + k + j
            out += wj * ext[:, start:start + n]
        return out


def _as_profile(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        p = p[None, :]
    if not np.all(np.isfinite(p)):
        raise ValueError("profile has non-finite entries")
    return p
