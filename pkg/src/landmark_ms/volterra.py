"""Matrix-valued Lebesgue-Stieltjes calculus for purely atomic measures.

Measures live on a finite grid above ``s``; a 2-D measure puts an ``m x m``
mass on every grid cell ``(g1[a-1], g1[a]] x (g2[b-1], g2[b]]``. Integrands
are evaluated at the lower-left left limit of each cell, so every integral
here is a finite sum and the solvers are exact up to floating point.

Partial order on cells is strict in both coordinates: ``u < v`` iff
``u1 < v1`` and ``u2 < v2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model_core import StepFunction1D, StepSurface2D


def _check_grid(grid, s):
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size and (np.any(np.diff(grid) <= 0) or grid[0] <= s):
        raise ValueError("grid must be strictly increasing and lie above s")
    return grid


@dataclass(frozen=True, eq=False)
class MatrixMeasure1D:
    s: float
    grid: np.ndarray
    masses: np.ndarray  # (K, m, m)

    def __post_init__(self):
        grid = _check_grid(self.grid, self.s)
        masses = np.asarray(self.masses, dtype=float)
        if masses.ndim != 3 or masses.shape[0] != grid.size or masses.shape[1] != masses.shape[2]:
            raise ValueError(f"masses shape {masses.shape} does not fit grid of size {grid.size}")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "masses", masses)

    @property
    def dim(self) -> int:
        return self.masses.shape[1]

    def cumulative(self, t) -> np.ndarray:
        """``Lambda((s, t])``."""
        k = np.searchsorted(self.grid, t, side="right")
        return self.masses[:k].sum(axis=0)

    def as_step_function(self) -> StepFunction1D:
        return StepFunction1D(self.s, self.grid, np.zeros(self.masses.shape[1:]), np.cumsum(self.masses, axis=0))


@dataclass(frozen=True, eq=False)
class MatrixMeasure2D:
    s: float
    grid1: np.ndarray
    grid2: np.ndarray
    masses: np.ndarray  # (K1, K2, m, m)

    def __post_init__(self):
        g1 = _check_grid(self.grid1, self.s)
        g2 = _check_grid(self.grid2, self.s)
        masses = np.asarray(self.masses, dtype=float)
        if masses.ndim != 4 or masses.shape[:2] != (g1.size, g2.size) or masses.shape[2] != masses.shape[3]:
            raise ValueError(f"masses shape {masses.shape} does not fit grids ({g1.size}, {g2.size})")
        object.__setattr__(self, "grid1", g1)
        object.__setattr__(self, "grid2", g2)
        object.__setattr__(self, "masses", masses)

    @property
    def dim(self) -> int:
        return self.masses.shape[2]

    @property
    def full_grid1(self) -> np.ndarray:
        return np.concatenate([[self.s], self.grid1])

    @property
    def full_grid2(self) -> np.ndarray:
        return np.concatenate([[self.s], self.grid2])

    def cumulative(self, t1, t2) -> np.ndarray:
        a = np.searchsorted(self.grid1, t1, side="right")
        b = np.searchsorted(self.grid2, t2, side="right")
        return self.masses[:a, :b].sum(axis=(0, 1))

    def as_step_surface(self) -> StepSurface2D:
        K1, K2, m, _ = self.masses.shape
        vals = np.zeros((K1 + 1, K2 + 1, m, m))
        vals[1:, 1:] = np.cumsum(np.cumsum(self.masses, axis=0), axis=1)
        return StepSurface2D(self.s, self.grid1, self.grid2, vals)

    def same_grid(self, other) -> bool:
        return (
            self.s == other.s
            and np.array_equal(self.grid1, other.grid1)
            and np.array_equal(self.grid2, other.grid2)
        )

    def rect_indices(self, rect=None) -> tuple[int, int, int, int]:
        """Full-grid positions ``(a0, a1, b0, b1)`` of a grid-aligned rectangle
        ``(lo1, hi1] x (lo2, hi2]``; ``None`` means the whole grid."""
        if rect is None:
            return 0, self.grid1.size, 0, self.grid2.size
        lo1, hi1, lo2, hi2 = rect
        out = []
        for t, g in ((lo1, self.full_grid1), (hi1, self.full_grid1), (lo2, self.full_grid2), (hi2, self.full_grid2)):
            k = int(np.searchsorted(g, t))
            if k >= g.size or g[k] != t:
                raise ValueError(f"rectangle corner {t} is not on the grid")
            out.append(k)
        a0, a1, b0, b1 = out
        if a1 < a0 or b1 < b0:
            raise ValueError("rectangle corners are reversed")
        return a0, a1, b0, b1

    @classmethod
    def from_surface(cls, g: StepSurface2D) -> "MatrixMeasure2D":
        """Scalar surface -> 1 x 1 measure of its rectangle increments."""
        inc = g.rectangle_increments()
        return cls(g.s, g.grid1, g.grid2, inc.reshape(inc.shape[:2] + (1, 1)))


def _surface_values(F, measure: MatrixMeasure2D) -> np.ndarray:
    if isinstance(F, StepSurface2D):
        if F.s != measure.s or not (np.array_equal(F.grid1, measure.grid1) and np.array_equal(F.grid2, measure.grid2)):
            raise ValueError("integrand and measure live on different grids")
        return F.values
    F = np.asarray(F, dtype=float)
    if F.shape[:2] != (measure.grid1.size + 1, measure.grid2.size + 1):
        raise ValueError("integrand array does not match the measure grid")
    return F


def ls_integral_2d(F, G: MatrixMeasure2D, rect=None) -> np.ndarray:
    """``sum over cells u in rect of F(u-) G(du)`` (matrix product on the right)."""
    vals = _surface_values(F, G)
    a0, a1, b0, b1 = G.rect_indices(rect)
    left = vals[a0:a1, b0:b1]  # lower-left corners of cells a0+1..a1
    mass = G.masses[a0:a1, b0:b1]
    return np.einsum("ab...i,abij->...j", left, mass)


def product_integral_1d(measure: MatrixMeasure1D, t0: float | None = None, t1: float | None = None) -> np.ndarray:
    """Ordered product of ``Id + Lambda({u})`` over atoms ``u`` in ``(t0, t1]``."""
    t0 = measure.s if t0 is None else t0
    t1 = np.inf if t1 is None else t1
    out = np.eye(measure.dim)
    for u, mass in zip(measure.grid, measure.masses):
        if t0 < u <= t1:
            out = out @ (np.eye(measure.dim) + mass)
    return out


def _strict_prefix(x: np.ndarray) -> np.ndarray:
    """``out[a, b] = sum_{a' < a, b' < b} x[a', b']``."""
    c = np.cumsum(np.cumsum(x, axis=0), axis=1)
    out = np.zeros_like(x)
    out[1:, 1:] = c[:-1, :-1]
    return out


def peano_series_2d(measure: MatrixMeasure2D, rect=None, tolerance: float = 0.0) -> np.ndarray:
    """Peano series ``Id + sum_n sum_{u1 < ... < un} L(u1)...L(un)`` over the
    cells of ``rect``.

    The n-th term vanishes once n exceeds the longest strict chain, so with
    the default ``tolerance=0`` the sum is exact. A positive tolerance stops
    early once every entry of the next term is at most ``tolerance``.
    """
    a0, a1, b0, b1 = measure.rect_indices(rect)
    A = measure.masses[a0:a1, b0:b1]
    m = measure.dim
    total = np.eye(m)
    term = A.copy()
    for _ in range(min(A.shape[0], A.shape[1])):
        total = total + term.sum(axis=(0, 1))
        term = np.einsum("abij,abjk->abik", _strict_prefix(term), A)
        if not np.any(np.abs(term) > tolerance):
            break
    return total


def solve_volterra_2d(phi, measure: MatrixMeasure2D) -> StepSurface2D:
    """Solve ``Y(t) = phi(t) + int_(s,t] Y(u-) Lambda(du)`` by forward recursion
    over grid rows. ``phi`` has shape ``(K1+1, K2+1, m)``."""
    phi = _surface_values(phi, measure)
    K1, K2 = measure.grid1.size, measure.grid2.size
    if phi.shape[2:] != (measure.dim,):
        raise ValueError(f"phi must be vector valued of length {measure.dim}")
    Y = np.empty_like(phi)
    Y[0] = phi[0]
    acc = np.zeros((K2 + 1, measure.dim))
    for a in range(1, K1 + 1):
        contrib = np.einsum("bi,bij->bj", Y[a - 1, :K2], measure.masses[a - 1])
        acc[1:] += np.cumsum(contrib, axis=0)
        Y[a] = phi[a] + acc
    return StepSurface2D(measure.s, measure.grid1, measure.grid2, Y)


def volterra_residual(Y, phi, measure: MatrixMeasure2D) -> float:
    """Sup-norm defect of ``Y`` in the integral equation on every grid point."""
    Yv = _surface_values(Y, measure)
    phi = _surface_values(phi, measure)
    contrib = np.einsum("abi,abij->abj", Yv[:-1, :-1], measure.masses)
    integral = np.zeros_like(Yv)
    integral[1:, 1:] = np.cumsum(np.cumsum(contrib, axis=0), axis=1)
    return float(np.max(np.abs(Yv - phi - integral))) if Yv.size else 0.0


def volterra_closed_form(phi, measure: MatrixMeasure2D) -> StepSurface2D:
    """``phi(t) + sum_{u <= t} phi(u-) Lambda(u) P((u, t], Lambda)`` with the
    Peano series; quadratic in the number of cells, meant for small grids."""
    phi = _surface_values(phi, measure)
    K1, K2 = measure.grid1.size, measure.grid2.size
    g1, g2 = measure.full_grid1, measure.full_grid2
    Y = phi.copy()
    for a in range(1, K1 + 1):
        for b in range(1, K2 + 1):
            total = np.zeros(measure.dim)
            for c in range(1, a + 1):
                for d in range(1, b + 1):
                    mass = measure.masses[c - 1, d - 1]
                    if not np.any(mass):
                        continue
                    prop = peano_series_2d(measure, (g1[c], g1[a], g2[d], g2[b]))
                    total += phi[c - 1, d - 1] @ mass @ prop
            Y[a, b] = phi[a, b] + total
    return StepSurface2D(measure.s, measure.grid1, measure.grid2, Y)


def duhamel_residual(A: MatrixMeasure2D, B: MatrixMeasure2D, rect=None) -> float:
    """Sup-norm defect of
    ``P(R,A) - P(R,B) = sum_u P(R below u, A) (A - B)(u) P(R above u, B)``."""
    if not A.same_grid(B):
        raise ValueError("Duhamel check needs a common grid")
    a0, a1, b0, b1 = A.rect_indices(rect)
    g1, g2 = A.full_grid1, A.full_grid2
    rhs = np.zeros((A.dim, A.dim))
    for a in range(a0 + 1, a1 + 1):
        for b in range(b0 + 1, b1 + 1):
            diff = A.masses[a - 1, b - 1] - B.masses[a - 1, b - 1]
            if not np.any(diff):
                continue
            below = peano_series_2d(A, (g1[a0], g1[max(a - 1, a0)], g2[b0], g2[max(b - 1, b0)]))
            above = peano_series_2d(B, (g1[a], g1[a1], g2[b], g2[b1]))
            rhs += below @ diff @ above
    lhs = peano_series_2d(A, (g1[a0], g1[a1], g2[b0], g2[b1])) - peano_series_2d(B, (g1[a0], g1[a1], g2[b0], g2[b1]))
    return float(np.max(np.abs(lhs - rhs)))


def variation_1d(f: StepFunction1D) -> float:
    """Sup norm plus total variation; partitions refining the jump grid
    attain the supremum for a step function."""
    vals = f.full_values
    return float(np.max(np.abs(vals)) + np.abs(np.diff(vals, axis=0)).sum())


def _variation_1d_values(vals: np.ndarray) -> float:
    return float(np.max(np.abs(vals)) + np.abs(np.diff(vals)).sum())


def variation_2d(f: StepSurface2D) -> float:
    """Two-dimensional variation on ``[s, max grid1] x [s, max grid2]``: the
    Vitali variation plus the variations of the two boundary sections, minus
    the sup norm."""
    vals = f.values
    vitali = np.abs(np.diff(np.diff(vals, axis=0), axis=1)).sum()
    return float(vitali + _variation_1d_values(vals[0, :]) + _variation_1d_values(vals[:, 0]) - np.max(np.abs(vals)))


def integral_bound_check(f: StepSurface2D, g: StepSurface2D) -> tuple[float, float]:
    """``(|int f dg|, ||f||_inf * ||g||_v1^(2))`` with ``f`` taken at the
    lower-left left limit of each cell."""
    measure = MatrixMeasure2D.from_surface(g)
    lhs = abs(float(ls_integral_2d(f.values[..., None], measure)[0]))
    return lhs, f.sup_norm() * variation_2d(g)
