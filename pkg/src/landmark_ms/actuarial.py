"""Canonical cash flows, discounting and plug-in valuation.

Discounting is folded into the payment functions before valuation: a
sojourn atom ``c`` at ``u`` becomes ``c * kappa(s) / kappa(u)`` and a
transition payment becomes ``g_ij(u) = kappa(s) / kappa(u) * a_ij(u-)``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .estimate import CensoredCohort, Diagnostics, LandmarkFit, fit_landmark
from .model_core import SamplePath, StepFunction1D, StepSurface2D

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DiscountFunction:
    """Savings account ``kappa``: a positive cadlag step function given by
    ``(time, value)`` pairs; the first value also applies before the first time."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if t.size == 0 or t.size != v.size:
            raise ValueError("discount curve needs matching, nonempty times and values")
        if np.any(np.diff(t) <= 0):
            raise ValueError("discount curve times must be strictly increasing")
        if np.any(~np.isfinite(v)) or np.any(v <= 0):
            raise ValueError("kappa must be finite and strictly positive")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, value: float = 1.0) -> "DiscountFunction":
        return cls(np.array([0.0]), np.array([value]))

    @classmethod
    def from_rate(cls, rate: float, times: Sequence[float]) -> "DiscountFunction":
        """Step approximation of ``exp(rate * t)`` on the given times."""
        t = np.asarray(times, dtype=float)
        return cls(t, np.exp(rate * t))

    def __call__(self, t):
        k = np.maximum(np.searchsorted(self.times, t, side="right") - 1, 0)
        return self.values[k]

    def factor(self, s: float, u):
        """``kappa(s) / kappa(u)``."""
        return self(s) / self(u)


def payment_function(times=(), values=(), base: float = 0.0) -> StepFunction1D:
    """Right-continuous transition payment ``a(t) = values[k]`` for
    ``t >= times[k]``; valuation always reads its left limit."""
    return StepFunction1D.from_jumps(0.0, times, np.diff(np.concatenate([[base], values])), base)


@dataclass(eq=False)
class CashFlow1D:
    """One-dimensional canonical cash flow on ``(s, horizon]``.

    sojourn:     ``{state: [(time, amount), ...]}`` atoms of ``A_i``
    continuous:  ``[(state, start, end, rate), ...]`` absolutely continuous parts of ``A_i``
    transition:  ``{(i, j): StepFunction1D}`` payment functions ``a_ij``, ``i != j``
    """

    n_states: int
    horizon: float
    sojourn: Mapping[int, Sequence[tuple[float, float]]] = field(default_factory=dict)
    continuous: Sequence[tuple[int, float, float, float]] = ()
    transition: Mapping[tuple[int, int], StepFunction1D] = field(default_factory=dict)

    def __post_init__(self):
        self.horizon = float(self.horizon)
        soj = {}
        for i, atoms in self.sojourn.items():
            self._check_state(i)
            arr = np.asarray(list(atoms), dtype=float).reshape(-1, 2)
            if np.any(~np.isfinite(arr)):
                raise ValueError(f"sojourn payments of state {i} must be finite")
            if np.any(arr[:, 0] > self.horizon):
                raise ValueError(f"sojourn payment of state {i} after the horizon {self.horizon}")
            soj[int(i)] = arr
        self.sojourn = soj
        cont = []
        for i, a, b, r in self.continuous:
            self._check_state(i)
            if not (a < b <= self.horizon) or not math.isfinite(r):
                raise ValueError(f"bad continuous payment ({i}, {a}, {b}, {r})")
            cont.append((int(i), float(a), float(b), float(r)))
        self.continuous = tuple(cont)
        trans = {}
        for (i, j), f in self.transition.items():
            self._check_state(i)
            self._check_state(j)
            if i == j:
                raise ValueError("transition payments need i != j")
            if not np.all(np.isfinite(f.full_values)):
                raise ValueError(f"transition payment {i}->{j} must be bounded")
            trans[(int(i), int(j))] = f
        self.transition = trans

    def _check_state(self, i):
        if not 0 <= int(i) < self.n_states:
            raise ValueError(f"state {i} outside 0..{self.n_states - 1}")

    def scaled(self, lam: float) -> "CashFlow1D":
        return CashFlow1D(
            self.n_states,
            self.horizon,
            {i: a * np.array([1.0, lam]) for i, a in self.sojourn.items()},
            [(i, a, b, lam * r) for i, a, b, r in self.continuous],
            {k: StepFunction1D(f.s, f.grid, lam * f.base, lam * f.values) for k, f in self.transition.items()},
        )

    def sojourn_atoms(self, i: int, s: float, grid=None, kappa: DiscountFunction | None = None) -> np.ndarray:
        """Atoms ``(time, amount)`` of ``A_i`` on ``(s, horizon]``, discounted
        by ``kappa(s)/kappa(u)`` when ``kappa`` is given.

        Continuous pieces are integrated exactly over each grid cell (with the
        discount factor inside the integral) and placed on the cell's right
        end, so ``grid`` is required when they are present.
        """
        atoms = self.sojourn.get(i, np.zeros((0, 2)))
        atoms = atoms[(atoms[:, 0] > s) & (atoms[:, 0] <= self.horizon)]
        if kappa is not None:
            atoms = np.column_stack([atoms[:, 0], atoms[:, 1] * kappa.factor(s, atoms[:, 0])])
        pieces = [(a, b, r) for k, a, b, r in self.continuous if k == i]
        if not pieces:
            return atoms
        if grid is None:
            raise ValueError("continuous sojourn payments need a grid to be discretised on")
        full = np.concatenate([[s], np.asarray(grid, dtype=float)])
        if max(b for _, b, _ in pieces) > full[-1]:
            raise ValueError("grid does not cover the continuous sojourn payments")
        # integrate on a refinement where the discount factor is constant
        cuts = full if kappa is None else np.union1d(full, kappa.times[(kappa.times > s) & (kappa.times < full[-1])])
        factor = np.ones(cuts.size - 1) if kappa is None else kappa.factor(s, 0.5 * (cuts[:-1] + cuts[1:]))
        cell = np.searchsorted(full, cuts[1:], side="left") - 1
        extra = np.zeros(full.size - 1)
        for a, b, r in pieces:
            length = np.clip(cuts[1:], a, b) - np.clip(cuts[:-1], a, b)
            np.add.at(extra, cell, r * length * factor)
        keep = extra != 0
        return np.concatenate([atoms, np.column_stack([full[1:][keep], extra[keep]])])

    def discounted(self, kappa: DiscountFunction | None, s: float, grid=None) -> "DiscountedCashFlow":
        kappa = kappa or DiscountFunction.constant()
        soj = {}
        for i in range(self.n_states):
            atoms = self.sojourn_atoms(i, s, grid, kappa)
            if atoms.size:
                soj[i] = atoms
        trans = {k: DiscountedPayment(f, kappa, s, self.horizon) for k, f in self.transition.items()}
        return DiscountedCashFlow(self.n_states, s, self.horizon, soj, trans)


@dataclass(frozen=True, eq=False)
class DiscountedPayment:
    """``g(u) = 1{s < u <= T} kappa(s) / kappa(u) * a(u-)``; vectorised."""

    a: StepFunction1D
    kappa: DiscountFunction
    s: float
    horizon: float

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        inside = (u > self.s) & (u <= self.horizon)
        return np.where(inside, self.kappa.factor(self.s, u) * self.a.left_limit(u), 0.0)


@dataclass(frozen=True)
class DiscountedCashFlow:
    n_states: int
    s: float
    horizon: float
    sojourn: Mapping[int, np.ndarray]
    transition: Mapping[tuple[int, int], DiscountedPayment]


@dataclass(frozen=True, eq=False)
class SeparablePayment:
    """``scale * left(u1) * right(u2)``; ``None`` stands for the constant 1."""

    left: Callable | None
    right: Callable | None
    scale: float = 1.0

    def __call__(self, u1, u2):
        u1 = np.asarray(u1, dtype=float)
        u2 = np.asarray(u2, dtype=float)
        a = self.left(u1) if self.left is not None else np.ones_like(u1)
        b = self.right(u2) if self.right is not None else np.ones_like(u2)
        return self.scale * a * b


@dataclass(eq=False)
class CashFlow2D:
    """Two-dimensional canonical cash flow, discounting already folded in.

    sojourn2:   ``{(i, j): [(u1, u2, amount), ...]}`` atoms of ``A_ij``
    sojourn1:   ``{i: [(u, amount), ...]}`` atoms of ``A_i`` in the mixed term
    mixed:      ``{(i, k, l): a_ikl}`` callables of ``(u1, u2)``, ``k != l``
    transition: ``{(i, j, k, l): a_ijkl}`` callables, ``i != j``, ``k != l``

    Callables receive grid times and must return the left-limit value.
    """

    n_states: int
    horizon: float
    sojourn2: Mapping[tuple[int, int], np.ndarray] = field(default_factory=dict)
    sojourn1: Mapping[int, np.ndarray] = field(default_factory=dict)
    mixed: Mapping[tuple[int, int, int], Callable] = field(default_factory=dict)
    transition: Mapping[tuple[int, int, int, int], Callable] = field(default_factory=dict)

    def __post_init__(self):
        self.sojourn2 = {k: np.asarray(v, dtype=float).reshape(-1, 3) for k, v in self.sojourn2.items()}
        self.sojourn1 = {int(k): np.asarray(v, dtype=float).reshape(-1, 2) for k, v in self.sojourn1.items()}
        for arr in list(self.sojourn2.values()) + list(self.sojourn1.values()):
            if np.any(~np.isfinite(arr)):
                raise ValueError("payment atoms must be finite")
        for i, k, l in self.mixed:
            if k == l:
                raise ValueError("mixed payments need k != l")
        for i, j, k, l in self.transition:
            if i == j or k == l:
                raise ValueError("transition payments need i != j and k != l")

    def monotone_parts(self):
        """Sign split of the atom measures into nondecreasing parts ``(plus, minus)``."""

        def split(d, width):
            plus = {k: np.column_stack([v[:, :width], np.maximum(v[:, width], 0)]) for k, v in d.items()}
            minus = {k: np.column_stack([v[:, :width], np.maximum(-v[:, width], 0)]) for k, v in d.items()}
            return plus, minus

        return split(self.sojourn2, 2), split(self.sojourn1, 1)

    def swapped(self) -> "CashFlow2D":
        """Exchange the two time coordinates of the sojourn and transition parts."""
        soj2 = {(j, i): v[:, [1, 0, 2]] for (i, j), v in self.sojourn2.items()}
        trans = {(k, l, i, j): _Swap(f) for (i, j, k, l), f in self.transition.items()}
        return CashFlow2D(self.n_states, self.horizon, soj2, self.sojourn1, self.mixed, trans)


@dataclass(frozen=True, eq=False)
class _Swap:
    f: Callable

    def __call__(self, u1, u2):
        return self.f(u2, u1)


def second_moment_representation(cf: CashFlow1D, kappa: DiscountFunction | None = None, s: float = 0.0, grid=None) -> CashFlow2D:
    """Two-dimensional cash flow whose value is ``E[Y^2]`` for the discounted
    total ``Y`` of ``cf``.

    ``Y^2 = int int B(du1) B(du2)`` splits into sojourn x sojourn atoms
    ``A_i x A_j``, the two mixed orientations (folded into one term with
    weight 2) and transition x transition products ``g_ij(u1) g_kl(u2)``.
    """
    d = cf.discounted(kappa, s, grid)
    soj2 = {}
    for i, a in d.sojourn.items():
        for j, b in d.sojourn.items():
            t1, t2 = np.meshgrid(a[:, 0], b[:, 0], indexing="ij")
            c = np.outer(a[:, 1], b[:, 1])
            soj2[(i, j)] = np.column_stack([t1.ravel(), t2.ravel(), c.ravel()])
    mixed = {}
    for i in d.sojourn:
        for (k, l), g in d.transition.items():
            mixed[(i, k, l)] = SeparablePayment(None, g, 2.0)
    trans = {}
    for (i, j), g in d.transition.items():
        for (k, l), h in d.transition.items():
            trans[(i, j, k, l)] = SeparablePayment(g, h, 1.0)
    return CashFlow2D(cf.n_states, cf.horizon, soj2, dict(d.sojourn), mixed, trans)


# -- valuation ----------------------------------------------------------------


def _continuous_pathwise(path: SamplePath, i: int, a: float, b: float, rate: float, kappa: DiscountFunction, s: float) -> float:
    lo = max(a, s)
    if b <= lo:
        return 0.0
    cuts = np.unique(np.concatenate([[lo, b], path.jump_times, kappa.times]))
    cuts = cuts[(cuts >= lo) & (cuts <= b)]
    mids = 0.5 * (cuts[:-1] + cuts[1:])
    inside = np.asarray(path.state_at(mids)) == i
    return float(rate * np.sum(inside * np.diff(cuts) * kappa.factor(s, mids)))


def pathwise_value(path: SamplePath, cf: CashFlow1D, kappa: DiscountFunction | None = None, s: float = 0.0) -> float:
    """Discounted future payments ``int_(s,T] kappa(s)/kappa(u) B(du)`` of one
    fully observed path."""
    if path.censor_time < cf.horizon:
        raise ValueError(f"path {path.id} is censored at {path.censor_time} before the horizon {cf.horizon}")
    kappa = kappa or DiscountFunction.constant()
    total = 0.0
    for i, atoms in cf.sojourn.items():
        for u, c in atoms:
            if s < u <= cf.horizon and path.state_before(u) == i:
                total += c * float(kappa.factor(s, u))
    for i, a, b, r in cf.continuous:
        total += _continuous_pathwise(path, i, a, min(b, cf.horizon), r, kappa, s)
    for t, i, j in path.jumps:
        f = cf.transition.get((i, j))
        if f is not None and s < t <= cf.horizon:
            total += float(f.left_limit(t)) * float(kappa.factor(s, t))
    return total


def _check_cover(times, end: float, what: str) -> None:
    times = np.asarray(times, dtype=float)
    if times.size and times.max() > end:
        raise ValueError(f"{what} at {times.max()} lies beyond the estimation horizon {end}")


def expected_value_1d(cf: CashFlow1D, P: StepFunction1D, rates, kappa: DiscountFunction | None = None) -> float:
    """``V = sum_i int P_i(u-) A_i(du) + sum_{i != j} int a_ij(u-) P_i(u-) Lambda_ij(du)``."""
    s = rates.s
    d = cf.discounted(kappa, s, rates.grid)
    end = rates.grid[-1] if rates.grid.size else s
    total = 0.0
    for i, atoms in d.sojourn.items():
        _check_cover(atoms[:, 0], end, "sojourn payment")
        total += float(np.sum(np.asarray(P.left_limit(atoms[:, 0]))[:, i] * atoms[:, 1]))
    if d.transition:
        if cf.horizon > end:
            raise ValueError(f"rates end at {end}, before the cash-flow horizon {cf.horizon}")
        u = rates.grid
        Pl = np.asarray(P.left_limit(u))
        for (i, j), g in d.transition.items():
            total += float(np.sum(g(u) * Pl[:, i] * rates.masses[:, i, j]))
    return total


def _pair(l: int, i1: int, i2: int) -> int:
    return l * i2 + i1


def expected_value_2d(cf: CashFlow2D, P: StepFunction1D, P2: StepSurface2D, rates, rates2, initial) -> float:
    """Plug-in value of a two-dimensional cash flow; ``initial`` is the class
    distribution at ``s`` (a point mass for bivariate estimation).

    (i)   sum_ij int int P2_ij(u-) A_ij(du)
    (ii)  sum_{i, k != l} I_i(s) int int a_ikl(u1, u2) A_i(du1) P_k(u2-) Lambda_kl(du2)
    (iii) sum_{i, j: i1 != j1} int int_{u3 < u1} a_{j2 i1 j1}(u1, u2) P2_i(u2-, u3-) Lambda2_ij(du2, du3) A_j2(du1)
    (iv)  sum_{i1 != j1, i2 != j2} int int a_ijkl(u) P2_i(u-) Lambda2_ij(du)
    """
    s = rates2.s
    l = cf.n_states
    p = np.asarray(initial, dtype=float)
    g1, g2 = rates2.grid1, rates2.grid2
    if not (np.array_equal(P2.grid1, g1) and np.array_equal(P2.grid2, g2)):
        raise ValueError("bivariate probabilities and rates live on different grids")
    T = cf.horizon
    K1 = int(np.searchsorted(g1, T, side="right"))
    K2 = int(np.searchsorted(g2, T, side="right"))
    end1 = g1[-1] if g1.size else s
    end2 = g2[-1] if g2.size else s
    total = 0.0

    # (i)
    for (i, j), atoms in cf.sojourn2.items():
        if not atoms.size:
            continue
        sel = (atoms[:, 0] > s) & (atoms[:, 1] > s) & (atoms[:, 0] <= T) & (atoms[:, 1] <= T)
        a = atoms[sel]
        _check_cover(a[:, 0], end1, "sojourn payment")
        _check_cover(a[:, 1], end2, "sojourn payment")
        vals = np.asarray(P2.left_limit(a[:, 0], a[:, 1]))[..., _pair(l, i, j)]
        total += float(np.sum(vals * a[:, 2]))

    if (cf.mixed or cf.transition) and T > min(end1, end2, rates.grid[-1] if rates.grid.size else s):
        raise ValueError(f"rates do not cover the cash-flow horizon {T}")
    P2l = P2.values[:K1, :K2]  # lower-left corners of the cells
    M = rates2.masses[:K1, :K2]
    c1, c2 = g1[:K1], g2[:K2]

    # (ii)
    if cf.mixed:
        u2 = rates.grid[rates.grid <= T]
        Pl = np.asarray(P.left_limit(u2))
        for (i, k, lv), f in cf.mixed.items():
            if p[i] == 0 or i not in cf.sojourn1:
                continue
            atoms = cf.sojourn1[i]
            atoms = atoms[(atoms[:, 0] > s) & (atoms[:, 0] <= T)]
            if not atoms.size:
                continue
            w = f(atoms[:, 0][:, None], u2[None, :])
            total += float(p[i] * np.sum(atoms[:, 1][:, None] * w * (Pl[:, k] * rates.masses[: u2.size, k, lv])[None, :]))

    # (iii)
    for (j2, i1, j1), f in cf.mixed.items():
        atoms = cf.sojourn1.get(j2)
        if atoms is None or not atoms.size:
            continue
        atoms = atoms[(atoms[:, 0] > s) & (atoms[:, 0] <= T)]
        for u1, c in atoms:
            below = c2 < u1
            if not np.any(below):
                continue
            w = np.asarray(f(np.full(K1, u1), c1))  # a_{j2 i1 j1}(u1, u2) over u2 cells
            for i2 in range(l):
                I = _pair(l, i1, i2)
                J = _pair(l, j1, j2)
                cell = P2l[:, below, I] * M[:, below, I, J]
                total += float(c * np.sum(w[:, None] * cell))
    # (iv)
    for (i1, j1, i2, j2), f in cf.transition.items():
        I, J = _pair(l, i1, i2), _pair(l, j1, j2)
        u1, u2 = np.meshgrid(c1, c2, indexing="ij")
        total += float(np.sum(f(u1, u2) * P2l[..., I] * M[..., I, J]))
    return total


# -- pipeline -----------------------------------------------------------------


@dataclass
class ClassValuation:
    z: object
    n_members: int
    value: float
    second_moment: float | None
    variance: float | None
    diagnostics: Diagnostics
    fit: LandmarkFit | None = None


def value_landmark(fit: LandmarkFit, cf, kappa: DiscountFunction | None = None) -> tuple[float, float | None]:
    """``(V, E[Y^2])`` for a fitted class; ``cf`` is a CashFlow1D (both
    moments) or a CashFlow2D (second-moment style value only)."""
    if fit.n_members == 0:
        return 0.0, 0.0
    s = fit.rates.s
    if isinstance(cf, CashFlow2D):
        return math.nan, expected_value_2d(cf, fit.probabilities, fit.probabilities2d, fit.rates, fit.rates2d, fit.initial)
    V = expected_value_1d(cf, fit.probabilities, fit.rates, kappa)
    V2 = None
    if fit.rates2d is not None:
        rep = second_moment_representation(cf, kappa, s, fit.rates.grid)
        V2 = expected_value_2d(rep, fit.probabilities, fit.probabilities2d, fit.rates, fit.rates2d, fit.initial)
    return V, V2


def plug_in_pipeline(
    cohort: CensoredCohort,
    cf,
    kappa: DiscountFunction | None = None,
    eps="auto",
    second_moment: bool = True,
    threads: int = 1,
    landmarks: Sequence | None = None,
) -> dict:
    """Estimate rates, solve for probabilities and evaluate the value
    functionals for every landmark class; returns ``{z: ClassValuation}``."""
    classes = list(landmarks) if landmarks is not None else cohort.landmarks()
    bivariate = second_moment or isinstance(cf, CashFlow2D)

    def one(z):
        fit = fit_landmark(cohort, z, eps, bivariate=bivariate)
        V, V2 = value_landmark(fit, cf, kappa)
        var = None if V2 is None or math.isnan(V) else V2 - V * V
        return ClassValuation(z, fit.n_members, V, V2, var, fit.diagnostics, fit)

    if threads > 1 and len(classes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, classes))
    else:
        results = [one(z) for z in classes]
    return {r.z: r for r in results}
