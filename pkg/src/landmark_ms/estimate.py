"""Landmark Nelson-Aalen and Aalen-Johansen estimators, univariate and
bivariate, plus their population counterparts computed from an exact law.

Conventions
-----------
* Occupation ``I^(n)`` is stored cadlag, ``1{t < R}``; its left limit at an
  atom ``u`` is the at-risk count ``1{u <= R} 1{Z(u-) = j}``, which is the
  only way the estimators use it.
* Counting processes are observed up to ``t ^ R`` and count from time 0.
  Diagonal entries are the bilinear expansion ``dN_ii = -sum_{j != i} dN_ij``.
* Bivariate pair index: ``idx(i1, i2) = l * i2 + i1``.
* Unweighted cohorts are accumulated in integer counts and divided by ``n``
  once, so every empirical surface lies exactly in ``(1/n) Z``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model_core import (
    SamplePath,
    StateSpace,
    StepFunction1D,
    StepSurface2D,
    counting_process,
    diagonal_counting,
    indicator_process,
)
from .volterra import MatrixMeasure1D, MatrixMeasure2D, solve_volterra_2d

log = logging.getLogger(__name__)

MAX_2D_ENTRIES = 50_000_000


class AtRiskError(ValueError):
    """No member of a landmark class is still under observation at tau."""


@dataclass
class Diagnostics:
    messages: list[str] = field(default_factory=list)
    epsilon_events: int = 0
    empty_classes: list = field(default_factory=list)

    def warn(self, msg: str) -> None:
        self.messages.append(msg)
        log.warning(msg)

    def merge(self, other: "Diagnostics") -> None:
        self.messages.extend(other.messages)
        self.epsilon_events += other.epsilon_events
        self.empty_classes.extend(other.empty_classes)


def _sort_key(z):
    return (z is not None, str(z))


@dataclass(eq=False)
class CensoredCohort:
    """Observed paths with censoring times and landmarks.

    ``weights`` (summing to 1) replace the uniform ``1/n``; this lets an
    enumerated law run through the estimator code unchanged.
    """

    paths: Sequence[SamplePath]
    states: StateSpace
    s: float
    tau: float
    tau2: tuple[float, float] | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.paths = list(self.paths)
        if not self.paths:
            raise ValueError("no individuals in cohort")
        self.s, self.tau = float(self.s), float(self.tau)
        if not self.tau > self.s:
            raise ValueError(f"tau = {self.tau} must exceed s = {self.s}")
        if self.tau2 is None:
            self.tau2 = (self.tau, self.tau)
        self.tau2 = (float(self.tau2[0]), float(self.tau2[1]))
        if min(self.tau2) <= self.s:
            raise ValueError(f"bivariate tau {self.tau2} must exceed s = {self.s}")
        l = self.states.size
        for p in self.paths:
            if not p.censor_time > self.s:
                raise ValueError(f"path {p.id}: censor time {p.censor_time} <= s = {self.s}")
            if np.any(p.visited_states >= l) or np.any(p.visited_states < 0):
                raise ValueError(f"path {p.id}: state index outside the {l}-state space")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (len(self.paths),) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("weights must be nonnegative, one per path, summing to 1")
            self.weights = w

    @property
    def n(self) -> int:
        return len(self.paths)

    @property
    def weighted(self) -> bool:
        return self.weights is not None

    def landmarks(self) -> list:
        return sorted({p.landmark for p in self.paths}, key=_sort_key)

    def members(self, z) -> np.ndarray:
        return np.array([m for m, p in enumerate(self.paths) if p.landmark == z], dtype=np.int64)

    def default_epsilon(self) -> float:
        """Half the smallest positive weight: ``1/(2n)`` for a plain cohort."""
        if self.weights is None:
            return 0.5 / self.n
        return 0.5 * float(self.weights[self.weights > 0].min())

    def resolve_epsilon(self, eps) -> float:
        if eps is None or eps == "auto":
            return self.default_epsilon()
        eps = float(eps)
        if not eps > 0:
            raise ValueError(f"epsilon must be positive, got {eps}")
        return eps


def _check_eps(eps: float) -> float:
    eps = float(eps)
    if not eps > 0:
        raise ValueError(f"epsilon must be positive, got {eps}")
    return eps


def _pairs_within(owner: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All ordered index pairs ``(a, b)`` with ``owner[a] == owner[b]``;
    ``owner`` must be sorted."""
    if owner.size == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    counts = np.bincount(owner)
    starts = np.cumsum(counts) - counts
    c = counts[owner]
    left = np.repeat(np.arange(owner.size), c)
    offsets = np.arange(c.sum()) - np.repeat(np.cumsum(c) - c, c)
    right = starts[owner[left]] + offsets
    return left, right


class _ClassPanel:
    """Everything the estimators need for one landmark class.

    The grid holds every observed jump time and censoring time in
    ``(s, t_max]`` plus the endpoints, so all empirical quantities are
    constant between consecutive grid points.
    """

    def __init__(self, cohort: CensoredCohort, z, ends: Sequence[float] | None = None):
        s = cohort.s
        ends = sorted({cohort.tau, *cohort.tau2} if ends is None else set(ends))
        t_max = ends[-1]
        self.s, self.z, self.l = s, z, cohort.states.size
        self.members = cohort.members(z)
        paths = [cohort.paths[m] for m in self.members]
        if cohort.weighted:
            self.w = cohort.weights[self.members]
            self.divisor = 1.0
        else:
            self.w = np.ones(len(paths))
            self.divisor = float(cohort.n)
        self.censor = np.array([p.censor_time for p in paths])
        self.initial = np.array([p.state_at(s) for p in paths], dtype=np.int64)

        times = set(ends)
        for p in paths:
            times.update(t for t, _, _ in p.observed_jumps(s, t_max))
            if s < p.censor_time <= t_max:
                times.add(p.censor_time)
        self.grid = np.array(sorted(times))
        self.full_grid = np.concatenate([[s], self.grid])
        K = self.grid.size

        # occupancy segments [start, end) in full-grid positions
        seg_m, seg_state, seg_lo, seg_hi = [], [], [], []
        # observed jumps after s
        jm, jg, ja, jb = [], [], [], []
        # jumps in (0, s]
        pm, pa, pb = [], [], []
        for k, p in enumerate(paths):
            R = p.censor_time
            start, state = s, self.initial[k]
            for t, a, b in p.jumps:
                if t <= s:
                    pm.append(k)
                    pa.append(a)
                    pb.append(b)
                    continue
                end = min(t, R)
                if end > start:
                    seg_m.append(k)
                    seg_state.append(state)
                    seg_lo.append(start)
                    seg_hi.append(end)
                if t > R:
                    break
                if t <= t_max:
                    jm.append(k)
                    jg.append(t)
                    ja.append(a)
                    jb.append(b)
                start, state = t, b
            else:
                seg_m.append(k)
                seg_state.append(state)
                seg_lo.append(start)
                seg_hi.append(R)
        fg = self.full_grid
        self.seg_m = np.array(seg_m, dtype=np.int64)
        self.seg_state = np.array(seg_state, dtype=np.int64)
        self.seg_lo = np.searchsorted(fg, np.array(seg_lo, dtype=float), side="left")
        self.seg_hi = np.searchsorted(fg, np.array(seg_hi, dtype=float), side="left")
        self.jm = np.array(jm, dtype=np.int64)
        self.jg = np.searchsorted(fg, np.array(jg, dtype=float), side="left")
        self.ja = np.array(ja, dtype=np.int64)
        self.jb = np.array(jb, dtype=np.int64)
        self.pm = np.array(pm, dtype=np.int64)
        self.pa = np.array(pa, dtype=np.int64)
        self.pb = np.array(pb, dtype=np.int64)
        self.K = K

    @property
    def empty(self) -> bool:
        return self.members.size == 0

    def positions(self, tau: float) -> int:
        """Number of grid atoms in ``(s, tau]``."""
        return int(np.searchsorted(self.grid, tau, side="right"))

    def check_at_risk(self, tau: float) -> None:
        if self.empty:
            return
        if not np.any((self.censor >= tau) & (self.w > 0)):
            raise AtRiskError(
                f"landmark class {self.z!r}: no individual is under observation at "
                f"tau = {tau} (latest censoring time {self.censor.max()}); "
                f"the at-risk condition P(tau <= R) > 0 fails empirically"
            )

    # -- univariate --------------------------------------------------------
    def occupation(self) -> np.ndarray:
        """``I^(n)`` at every full-grid point, shape ``(K+1, l)``."""
        D = np.zeros((self.K + 2, self.l))
        w = self.w[self.seg_m]
        np.add.at(D, (self.seg_lo, self.seg_state), w)
        np.add.at(D, (self.seg_hi, self.seg_state), -w)
        return np.cumsum(D, axis=0)[: self.K + 1] / self.divisor

    def jump_counts(self) -> np.ndarray:
        """``Delta N^(n)`` at each full-grid point (row 0 holds the counts in
        ``(0, s]``), off-diagonal only; shape ``(K+1, l, l)``."""
        dN = np.zeros((self.K + 1, self.l, self.l))
        np.add.at(dN, (self.jg, self.ja, self.jb), self.w[self.jm])
        np.add.at(dN, (np.zeros_like(self.pm), self.pa, self.pb), self.w[self.pm])
        return dN / self.divisor

    # -- bivariate ---------------------------------------------------------
    def _check_size(self, K1: int, K2: int) -> None:
        m = self.l * self.l
        if (K1 + 1) * (K2 + 1) * m * m > MAX_2D_ENTRIES:
            raise MemoryError(
                f"bivariate arrays would hold {(K1 + 1) * (K2 + 1) * m * m} entries "
                f"(limit {MAX_2D_ENTRIES}); coarsen the time grid"
            )

    def occupation_2d(self) -> np.ndarray:
        """``I^(n)`` surface, shape ``(K+1, K+1, l, l)`` indexed ``[a, b, i1, i2]``."""
        K, l = self.K, self.l
        self._check_size(K, K)
        L, Rr = _pairs_within(self.seg_m)
        w = self.w[self.seg_m[L]]
        s1, s2 = self.seg_state[L], self.seg_state[Rr]
        lo1, hi1 = self.seg_lo[L], self.seg_hi[L]
        lo2, hi2 = self.seg_lo[Rr], self.seg_hi[Rr]
        D = np.zeros((K + 2, K + 2, l, l))
        np.add.at(D, (lo1, lo2, s1, s2), w)
        np.add.at(D, (hi1, lo2, s1, s2), -w)
        np.add.at(D, (lo1, hi2, s1, s2), -w)
        np.add.at(D, (hi1, hi2, s1, s2), w)
        return np.cumsum(np.cumsum(D, axis=0), axis=1)[: K + 1, : K + 1] / self.divisor

    def _jump_entries(self):
        """Each observed jump a->b after s as the entries (a,b,+1) and (a,a,-1)."""
        n = self.jm.size
        m = np.concatenate([self.jm, self.jm])
        g = np.concatenate([self.jg, self.jg])
        fr = np.concatenate([self.ja, self.ja])
        to = np.concatenate([self.jb, self.ja])
        v = np.concatenate([np.ones(n), -np.ones(n)])
        order = np.argsort(m, kind="stable")
        return m[order], g[order], fr[order], to[order], v[order]

    def jump_masses_2d(self) -> np.ndarray:
        """``Delta^2 N^(n)`` cell masses, shape ``(K, K, m, m)`` indexed by
        flat pair indices ``[a, b, idx(i), idx(j)]``."""
        K, l = self.K, self.l
        self._check_size(K, K)
        m, g, fr, to, v = self._jump_entries()
        L, Rr = _pairs_within(m)
        out = np.zeros((K, K, l * l, l * l))
        np.add.at(
            out,
            (g[L] - 1, g[Rr] - 1, l * fr[Rr] + fr[L], l * to[Rr] + to[L]),
            self.w[m[L]] * v[L] * v[Rr],
        )
        return out / self.divisor

    def counting_surface(self, pair1, pair2) -> np.ndarray:
        """``N_{i1j1}(t1 ^ R) N_{i2j2}(t2 ^ R)`` averaged, shape ``(K+1, K+1)``.
        Diagonal pairs count from ``s``; off-diagonal pairs from 0."""
        entries = []
        for i, j in (pair1, pair2):
            if i == j:
                sel = self.ja == i
                mm, gg = self.jm[sel], self.jg[sel]
                vv = -np.ones(mm.size)
            else:
                sel = (self.ja == i) & (self.jb == j)
                pre = (self.pa == i) & (self.pb == j)
                mm = np.concatenate([self.jm[sel], self.pm[pre]])
                gg = np.concatenate([self.jg[sel], np.zeros(pre.sum(), dtype=np.int64)])
                vv = np.ones(mm.size)
            order = np.argsort(mm, kind="stable")
            entries.append((mm[order], gg[order], vv[order]))
        (m1, g1, v1), (m2, g2, v2) = entries
        owner = np.concatenate([m1, m2])
        side = np.concatenate([np.zeros(m1.size, bool), np.ones(m2.size, bool)])
        order = np.argsort(owner, kind="stable")
        owner, side = owner[order], side[order]
        gg = np.concatenate([g1, g2])[order]
        vv = np.concatenate([v1, v2])[order]
        L, Rr = _pairs_within(owner)
        keep = ~side[L] & side[Rr]
        L, Rr = L[keep], Rr[keep]
        D = np.zeros((self.K + 1, self.K + 1))
        np.add.at(D, (gg[L], gg[Rr]), self.w[owner[L]] * vv[L] * vv[Rr])
        return np.cumsum(np.cumsum(D, axis=0), axis=1) / self.divisor


# -- rate measures -----------------------------------------------------------


def _regrid_masses(times: np.ndarray, masses: np.ndarray, new: np.ndarray, axis: int) -> np.ndarray:
    pos = np.searchsorted(new, times, side="left")
    inside = pos < new.size
    exact = inside & (new[np.minimum(pos, new.size - 1)] == times)
    nonzero = np.any(masses.reshape(masses.shape[:axis] + (times.size, -1)) != 0, axis=-1)
    nonzero = np.any(nonzero.reshape(-1, times.size), axis=0) if nonzero.ndim > 1 else nonzero
    if np.any(nonzero & ~exact):
        raise ValueError("new grid misses an atom carrying mass")
    shape = list(masses.shape)
    shape[axis] = new.size
    out = np.zeros(shape)
    idx = [slice(None)] * masses.ndim
    src = [slice(None)] * masses.ndim
    for k in np.nonzero(exact)[0]:
        idx[axis], src[axis] = pos[k], k
        out[tuple(idx)] += masses[tuple(src)]
    return out


@dataclass(frozen=True, eq=False)
class RateMeasure1D(MatrixMeasure1D):
    """Atomic matrix rate ``Delta Lambda`` on ``(s, tau]`` for one landmark class."""

    z: object = None
    tau: float | None = None

    def check(self, tol: float = 1e-12) -> None:
        l = self.dim
        off = ~np.eye(l, dtype=bool)
        if np.any(self.masses[:, off] < -tol):
            raise ValueError("negative off-diagonal rate mass")
        if np.any(np.abs(self.masses.sum(axis=2)) > tol):
            raise ValueError("rate rows do not sum to zero")

    def component(self, j: int, k: int) -> StepFunction1D:
        """Cumulative ``Lambda_jk`` as a step function."""
        return StepFunction1D(self.s, self.grid, 0.0, np.cumsum(self.masses[:, j, k]))

    def regrid(self, grid) -> "RateMeasure1D":
        grid = np.asarray(grid, dtype=float)
        return RateMeasure1D(self.s, grid, _regrid_masses(self.grid, self.masses, grid, 0), self.z, self.tau)

    def max_difference(self, other: "RateMeasure1D") -> float:
        """Sup-norm distance of the cumulative measures over the joint grid."""
        grid = np.union1d(self.grid, other.grid)
        a = np.cumsum(self.regrid(grid).masses, axis=0)
        b = np.cumsum(other.regrid(grid).masses, axis=0)
        return float(np.max(np.abs(a - b))) if grid.size else 0.0


@dataclass(frozen=True, eq=False)
class RateMeasure2D(MatrixMeasure2D):
    """Atomic bivariate rate ``Delta^2 Lambda`` on ``(s, tau1] x (s, tau2]``;
    masses indexed ``[a, b, idx(i), idx(j)]``."""

    z: object = None
    tau: tuple[float, float] | None = None

    @property
    def n_states(self) -> int:
        return int(round(np.sqrt(self.dim)))

    def component(self, i: tuple[int, int], j: tuple[int, int]) -> StepSurface2D:
        l = self.n_states
        I, J = l * i[1] + i[0], l * j[1] + j[0]
        vals = np.zeros((self.grid1.size + 1, self.grid2.size + 1))
        vals[1:, 1:] = np.cumsum(np.cumsum(self.masses[:, :, I, J], axis=0), axis=1)
        return StepSurface2D(self.s, self.grid1, self.grid2, vals)

    def regrid(self, grid1, grid2) -> "RateMeasure2D":
        g1 = np.asarray(grid1, dtype=float)
        g2 = np.asarray(grid2, dtype=float)
        m = _regrid_masses(self.grid1, self.masses, g1, 0)
        m = _regrid_masses(self.grid2, m, g2, 1)
        return RateMeasure2D(self.s, g1, g2, m, self.z, self.tau)

    def max_difference(self, other: "RateMeasure2D") -> float:
        g1 = np.union1d(self.grid1, other.grid1)
        g2 = np.union1d(self.grid2, other.grid2)
        a = np.cumsum(np.cumsum(self.regrid(g1, g2).masses, axis=0), axis=1)
        b = np.cumsum(np.cumsum(other.regrid(g1, g2).masses, axis=0), axis=1)
        return float(np.max(np.abs(a - b))) if a.size else 0.0


def _rates_1d(dN: np.ndarray, I_left: np.ndarray, eps: float | None, diag: Diagnostics | None, where: str):
    """Off-diagonal ``dN / (I_left v eps)`` with a bilinear diagonal."""
    l = dN.shape[-1]
    denom = I_left[..., None] * np.ones(l)
    with np.errstate(divide="ignore", invalid="ignore"):
        if eps is None:
            rates = np.where(denom > 0, dN / np.where(denom > 0, denom, 1.0), 0.0)
        else:
            rates = dN / np.maximum(denom, eps)
    off = ~np.eye(l, dtype=bool)
    rates = rates * off
    if eps is not None and diag is not None:
        hits = int(np.sum((denom < eps) & (dN != 0) & off))
        if hits:
            diag.epsilon_events += hits
            diag.warn(f"{where}: epsilon floor active on {hits} rate atom(s)")
    rates[..., np.arange(l), np.arange(l)] = -rates.sum(axis=-1)
    return rates


def _rates_2d(dN2: np.ndarray, I_left: np.ndarray, eps: float | None, diag: Diagnostics | None, where: str):
    denom = I_left[..., :, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        if eps is None:
            out = np.where(denom > 0, dN2 / np.where(denom > 0, denom, 1.0), 0.0)
        else:
            out = dN2 / np.maximum(denom, eps)
    if eps is not None and diag is not None:
        hits = int(np.sum((denom < eps) & (dN2 != 0)))
        if hits:
            diag.epsilon_events += hits
            diag.warn(f"{where}: epsilon floor active on {hits} bivariate rate entries")
    return out


# -- public estimators --------------------------------------------------------


def _panel(cohort: CensoredCohort, z, diag: Diagnostics | None = None) -> _ClassPanel:
    panel = _ClassPanel(cohort, z)
    if panel.empty and diag is not None:
        diag.empty_classes.append(z)
        diag.warn(f"landmark class {z!r} has no members; estimators are identically zero")
    return panel


def occupation_estimator(cohort: CensoredCohort, z, j: int) -> StepFunction1D:
    """``I^(n)_{z,j}`` on ``[s, tau]`` (cadlag, strictly censored)."""
    p = _panel(cohort, z)
    k = p.positions(cohort.tau)
    I = p.occupation()[:, cohort.states.index(j)]
    return StepFunction1D(cohort.s, p.grid[:k], I[0], I[1 : k + 1])


def counting_estimator(cohort: CensoredCohort, z, j: int, k: int) -> StepFunction1D:
    """``N^(n)_{z,jk}(t) = (1/n) sum 1{xi = z} N_jk(t ^ R)``."""
    j, k = cohort.states.index(j), cohort.states.index(k)
    if j == k:
        raise ValueError("counting_estimator needs j != k")
    p = _panel(cohort, z)
    K = p.positions(cohort.tau)
    N = np.cumsum(p.jump_counts()[:, j, k])
    return StepFunction1D(cohort.s, p.grid[:K], N[0], N[1 : K + 1])


def occupation_estimator_2d(cohort: CensoredCohort, z, i: tuple[int, int]) -> StepSurface2D:
    """``I^(n)_{z,(i1,i2)}(t1, t2)`` with ``1{t1 v t2 < R}``."""
    i1, i2 = (cohort.states.index(x) for x in i)
    p = _panel(cohort, z)
    K1, K2 = p.positions(cohort.tau2[0]), p.positions(cohort.tau2[1])
    vals = p.occupation_2d()[: K1 + 1, : K2 + 1, i1, i2]
    return StepSurface2D(cohort.s, p.grid[:K1], p.grid[:K2], vals)


def counting_estimator_2d(cohort: CensoredCohort, z, ij) -> StepSurface2D:
    """``N^(n)_{z,ij}(t1, t2) = (1/n) sum 1{xi = z} N_{i1j1}(t1 ^ R) N_{i2j2}(t2 ^ R)``.

    ``ij = ((i1, j1), (i2, j2))``; a diagonal pair ``(i, i)`` is the
    departure count since ``s`` with a minus sign.
    """
    (i1, j1), (i2, j2) = ij
    st = cohort.states
    pair1 = (st.index(i1), st.index(j1))
    pair2 = (st.index(i2), st.index(j2))
    p = _panel(cohort, z)
    K1, K2 = p.positions(cohort.tau2[0]), p.positions(cohort.tau2[1])
    vals = p.counting_surface(pair1, pair2)[: K1 + 1, : K2 + 1]
    return StepSurface2D(cohort.s, p.grid[:K1], p.grid[:K2], vals)


def nelson_aalen_1d(I: StepFunction1D, N: StepFunction1D, eps: float, diagnostics: Diagnostics | None = None) -> StepFunction1D:
    """Cumulative ``int dN / (I(u-) v eps)`` over the atoms of ``N``."""
    eps = _check_eps(eps)
    dN = N.increments()
    denom = np.asarray(I.left_limit(N.grid), dtype=float)
    if diagnostics is not None:
        hits = int(np.sum((denom < eps) & (dN != 0)))
        if hits:
            diagnostics.epsilon_events += hits
            diagnostics.warn(f"nelson_aalen_1d: epsilon floor active on {hits} atom(s)")
    return StepFunction1D(N.s, N.grid, 0.0, np.cumsum(dN / np.maximum(denom, eps)))


def nelson_aalen_2d(I: StepSurface2D, N: StepSurface2D, eps: float, diagnostics: Diagnostics | None = None) -> StepSurface2D:
    """Cumulative ``int d^2N / (I(u1-, u2-) v eps)`` over the cells of ``N``."""
    eps = _check_eps(eps)
    d2N = N.rectangle_increments()
    u1, u2 = np.meshgrid(N.grid1, N.grid2, indexing="ij")
    denom = np.asarray(I.left_limit(u1, u2), dtype=float)
    if diagnostics is not None:
        hits = int(np.sum((denom < eps) & (d2N != 0)))
        if hits:
            diagnostics.epsilon_events += hits
            diagnostics.warn(f"nelson_aalen_2d: epsilon floor active on {hits} cell(s)")
    vals = np.zeros((N.grid1.size + 1, N.grid2.size + 1))
    vals[1:, 1:] = np.cumsum(np.cumsum(d2N / np.maximum(denom, eps), axis=0), axis=1)
    return StepSurface2D(N.s, N.grid1, N.grid2, vals)


def initial_distribution(cohort: CensoredCohort, z) -> np.ndarray:
    """Normalised occupation ``P^(n)_z(s)`` of the class at ``s``; zeros for an
    empty class."""
    p = _ClassPanel(cohort, z)
    out = np.zeros(cohort.states.size)
    np.add.at(out, p.initial, p.w)
    total = out.sum()
    return out / total if total > 0 else out


def landmark_rates(cohort: CensoredCohort, z, eps="auto", diagnostics: Diagnostics | None = None) -> RateMeasure1D:
    """Full matrix ``Delta Lambda^(n,eps)_z`` on ``(s, tau]``."""
    eps = cohort.resolve_epsilon(eps)
    p = _panel(cohort, z, diagnostics)
    p.check_at_risk(cohort.tau)
    K = p.positions(cohort.tau)
    I = p.occupation()
    dN = p.jump_counts()
    masses = _rates_1d(dN[1 : K + 1], I[:K], eps, diagnostics, f"class {z!r}")
    return RateMeasure1D(cohort.s, p.grid[:K], masses, z, cohort.tau)


def landmark_rates_2d(cohort: CensoredCohort, z, eps="auto", diagnostics: Diagnostics | None = None) -> RateMeasure2D:
    """Bivariate ``Delta^2 Lambda^(n,eps)_z`` on ``(s, tau1] x (s, tau2]``."""
    eps = cohort.resolve_epsilon(eps)
    p = _panel(cohort, z, diagnostics)
    p.check_at_risk(max(cohort.tau2))
    K1, K2 = p.positions(cohort.tau2[0]), p.positions(cohort.tau2[1])
    l = cohort.states.size
    I2 = p.occupation_2d()
    left = I2[:K1, :K2].transpose(0, 1, 3, 2).reshape(K1, K2, l * l)
    d2N = p.jump_masses_2d()[:K1, :K2]
    masses = _rates_2d(d2N, left, eps, diagnostics, f"class {z!r}")
    return RateMeasure2D(cohort.s, p.grid[:K1], p.grid[:K2], masses, z, cohort.tau2)


def aalen_johansen_1d(rates: MatrixMeasure1D, initial) -> StepFunction1D:
    """``P(t) = P(s) prod_(s,t] (Id + Lambda(du))``; vector valued."""
    initial = np.asarray(initial, dtype=float)
    if np.any(initial < 0) or abs(initial.sum() - 1.0) > 1e-12:
        raise ValueError("initial distribution must be a probability vector")
    vals = np.empty((rates.grid.size, rates.dim))
    cur = initial.copy()
    eye = np.eye(rates.dim)
    for k, mass in enumerate(rates.masses):
        cur = cur @ (eye + mass)
        vals[k] = cur
    return StepFunction1D(rates.s, rates.grid, initial, vals)


def inhomogeneous_term(P1: StepFunction1D, initial, grid1, grid2) -> np.ndarray:
    """Boundary part of the bivariate forward equation on the full grids,
    shape ``(K1+1, K2+1, l*l)``, flat index ``l*i2 + i1``::

        phi_i(t) = d_{i1 i2} p_{i1} + p_{i2} (P_{i1}(t1) - p_{i1}) + p_{i1} (P_{i2}(t2) - p_{i2})
    """
    p = np.asarray(initial, dtype=float)
    l = p.size
    s = P1.s
    A = np.asarray(P1(np.concatenate([[s], grid1])), dtype=float) - p  # (K1+1, l)
    B = np.asarray(P1(np.concatenate([[s], grid2])), dtype=float) - p
    phi = (
        np.diag(p)[None, None]
        + A[:, None, :, None] * p[None, None, None, :]
        + p[None, None, :, None] * B[None, :, None, :]
    )  # [a, b, i1, i2]
    return phi.transpose(0, 1, 3, 2).reshape(A.shape[0], B.shape[0], l * l)


def aalen_johansen_2d(rates2d: MatrixMeasure2D, P1: StepFunction1D, initial) -> StepSurface2D:
    """Solve the bivariate forward equation; values ``(K1+1, K2+1, l*l)``.

    ``initial`` is the class distribution at ``s``; it must be a point mass
    because the bivariate boundary term factorises only when the class fixes
    the state at ``s``.
    """
    p = np.asarray(initial, dtype=float)
    if np.count_nonzero(p) > 1:
        raise ValueError(
            "bivariate estimation needs a landmark class that determines the state at s"
        )
    phi = inhomogeneous_term(P1, p, rates2d.grid1, rates2d.grid2)
    return solve_volterra_2d(phi, rates2d)


@dataclass
class LandmarkFit:
    z: object
    initial: np.ndarray
    rates: RateMeasure1D
    probabilities: StepFunction1D
    rates2d: RateMeasure2D | None = None
    probabilities2d: StepSurface2D | None = None
    diagnostics: Diagnostics = field(default_factory=Diagnostics)
    n_members: int = 0


def fit_landmark(cohort: CensoredCohort, z, eps="auto", bivariate: bool = True) -> LandmarkFit:
    """Rates and probabilities for one landmark class; an empty class gives
    zero rates and a zero distribution."""
    diag = Diagnostics()
    rates = landmark_rates(cohort, z, eps, diag)
    initial = initial_distribution(cohort, z)
    n_members = int(cohort.members(z).size)
    if n_members == 0:
        probs = StepFunction1D(cohort.s, rates.grid, initial, np.zeros((rates.grid.size, initial.size)))
    else:
        probs = aalen_johansen_1d(rates, initial)
    fit = LandmarkFit(z, initial, rates, probs, diagnostics=diag, n_members=n_members)
    if bivariate and np.count_nonzero(initial) > 1:
        diag.warn(f"landmark class {z!r} does not fix the state at s; bivariate estimation skipped")
        bivariate = False
    if bivariate:
        rates2d = landmark_rates_2d(cohort, z, eps, Diagnostics())
        # the univariate solution must cover both bivariate axes
        if max(cohort.tau2) > cohort.tau:
            wide = CensoredCohort(cohort.paths, cohort.states, cohort.s, max(cohort.tau2), cohort.tau2, cohort.weights)
            P1 = aalen_johansen_1d(landmark_rates(wide, z, eps), initial) if n_members else probs
        else:
            P1 = probs
        if n_members == 0:
            l = initial.size
            vals = np.zeros((rates2d.grid1.size + 1, rates2d.grid2.size + 1, l * l))
            probs2d = StepSurface2D(cohort.s, rates2d.grid1, rates2d.grid2, vals)
        else:
            probs2d = aalen_johansen_2d(rates2d, P1, initial)
        fit.rates2d, fit.probabilities2d = rates2d, probs2d
    return fit


# -- population quantities from an exact law -----------------------------------


def _law_grid(law, z, tau_max: float) -> np.ndarray:
    s = law.s
    times = {tau_max}
    for path in law.paths:
        if path.landmark == z:
            times.update(t for t, _, _ in path.jumps if s < t <= tau_max)
    times.update(t for t, _ in law.censoring.support() if s < t <= tau_max)
    return np.array(sorted(times))


def true_rates_from_law(law, z, eps: float | None = None, tau=None, grid=None):
    """Population rates ``(Lambda^c, Lambda^c 2d)`` of class ``z`` under the
    law's censoring, computed by direct summation over (path, censor time).

    ``eps=None`` gives the unperturbed rates with ``0/0 := 0``. ``tau`` is a
    scalar or a pair; the 1-D measure covers ``(s, max tau]``.
    """
    s = law.s
    if tau is None:
        tau = max(max((t for p in law.paths for t, _, _ in p.jumps), default=s + 1.0), s + 1.0)
    tau2 = (float(tau), float(tau)) if np.ndim(tau) == 0 else (float(tau[0]), float(tau[1]))
    tmax = max(tau2)
    if law.censoring.survival(tmax) <= 0:
        raise AtRiskError(f"P(tau <= R) = 0 under the censoring law for tau = {tmax}")
    if eps is not None:
        eps = _check_eps(eps)
    grid = _law_grid(law, z, tmax) if grid is None else np.asarray(grid, dtype=float)
    l = law.states.size
    m = l * l
    K = grid.size
    Y = np.zeros((K, l))
    dQ = np.zeros((K, l, l))
    Y2 = np.zeros((K, K, m))
    dQ2 = np.zeros((K, K, m, m))
    for path, prob in zip(law.paths, law.probs):
        if path.landmark != z:
            continue
        before = np.asarray(path.state_before(grid))
        after = np.asarray(path.state_at(grid))
        for r, q in law.censoring.support():
            w = prob * q
            observed = grid <= r
            y = np.zeros((K, l))
            y[np.arange(K), before] = observed
            d = np.zeros((K, l, l))
            jumped = observed & (before != after)
            d[np.nonzero(jumped)[0], before[jumped], after[jumped]] += 1.0
            d[np.nonzero(jumped)[0], before[jumped], before[jumped]] -= 1.0
            Y += w * y
            dQ += w * d
            Y2 += w * np.einsum("ga,hb->ghba", y, y).reshape(K, K, m)
            dQ2 += w * np.einsum("gac,hbd->ghbadc", d, d).reshape(K, K, m, m)
    off = ~np.eye(l, dtype=bool)
    rates = _rates_1d(dQ * off, Y, eps, None, "law")
    rates2 = _rates_2d(dQ2, Y2, eps, None, "law")
    k1 = int(np.searchsorted(grid, tau2[0], side="right"))
    k2 = int(np.searchsorted(grid, tau2[1], side="right"))
    return (
        RateMeasure1D(s, grid, rates, z, tmax),
        RateMeasure2D(s, grid[:k1], grid[:k2], rates2[:k1, :k2], z, tau2),
    )


def true_probabilities(law, z, tau: float, grid=None):
    """Conditional occupation probabilities ``P_z`` and ``P_z 2d`` given
    ``xi = z``, computed from the uncensored law on ``[s, tau]``."""
    s = law.s
    grid = _law_grid(law, z, tau) if grid is None else np.asarray(grid, dtype=float)
    full = np.concatenate([[s], grid])
    l = law.states.size
    K = grid.size
    P = np.zeros((K + 1, l))
    P2 = np.zeros((K + 1, K + 1, l * l))
    total = 0.0
    for path, prob in zip(law.paths, law.probs):
        if path.landmark != z:
            continue
        st = np.asarray(path.state_at(full))
        y = np.zeros((K + 1, l))
        y[np.arange(K + 1), st] = 1.0
        P += prob * y
        P2 += prob * np.einsum("ga,hb->ghba", y, y).reshape(K + 1, K + 1, l * l)
        total += prob
    if total <= 0:
        raise ValueError(f"landmark class {z!r} has probability zero under the law")
    return (
        StepFunction1D(s, grid, P[0] / total, P[1:] / total),
        StepSurface2D(s, grid, grid, P2 / total),
    )


# -- censored decomposition of the bivariate occupation -----------------------


def decomposition_2d(cohort: CensoredCohort, z, i: tuple[int, int] | None = None):
    """Both sides of the censored pathwise decomposition of
    ``I^(n)_{z,(i1,i2)}`` on the full class grid.

    Returns ``(lhs, rhs, correction)`` arrays of shape ``(K+1, K+1)``, or
    ``(K+1, K+1, l, l)`` over all pairs when ``i`` is None; ``rhs`` already
    subtracts ``correction``. The right-hand side is rebuilt path by path
    from counting processes (increments since ``s``, stopped at ``R``) and
    the indicators at ``s``; the correction is the class average of
    ``1{R <= t1 v t2} 1{Z(t1 ^ R) = i1, Z(t2 ^ R) = i2}``.
    """
    p = _ClassPanel(cohort, z)
    K, l, s = p.K, cohort.states.size, cohort.s
    lhs = p.occupation_2d()
    fg = p.full_grid
    horizon = fg[-1]
    rhs = np.zeros((K + 1, K + 1, l, l))
    corr = np.zeros((K + 1, K + 1, l, l))
    eye = np.eye(l)
    for k, m in enumerate(cohort.members(z)):
        path = cohort.paths[m]
        R = path.censor_time
        w = p.w[k]
        ind_s = np.array([indicator_process(path, j, s)(s) for j in range(l)])
        stop = np.minimum(fg, R)
        # increments since s of N_{k i}(t ^ R), summed over k (diagonal included)
        inc = np.zeros((K + 1, l))
        for src in range(l):
            for dst in range(l):
                if src == dst:
                    f = diagonal_counting(path, dst, s, horizon)
                else:
                    f = counting_process(path, src, dst, horizon)
                inc[:, dst] += np.asarray(f(stop), dtype=float) - float(f(s))
        a = ind_s[None, :] + inc  # (K+1, l)
        rhs += w * np.einsum("ai,bj->abij", a, a)
        stopped = eye[np.asarray(path.state_at(stop))]
        hit = np.maximum.outer(fg, fg) >= R
        corr += w * hit[:, :, None, None] * np.einsum("ai,bj->abij", stopped, stopped)
    rhs = (rhs - corr) / p.divisor
    corr = corr / p.divisor
    if i is None:
        return lhs, rhs, corr
    i1, i2 = (cohort.states.index(x) for x in i)
    return lhs[:, :, i1, i2], rhs[:, :, i1, i2], corr[:, :, i1, i2]


def decomposition_residual_2d(cohort: CensoredCohort, z, i: tuple[int, int] | None = None) -> float:
    """Max absolute residual of the censored bivariate decomposition (over
    all pairs when ``i`` is None); exactly 0 for unweighted cohorts."""
    lhs, rhs, _ = decomposition_2d(cohort, z, i)
    return float(np.max(np.abs(lhs - rhs))) if lhs.size else 0.0
