"""Event-history primitives: sample paths, step functions and surfaces,
counting and indicator processes.

Times are real numbers. A path is a cadlag trajectory on a finite state
space, stored as an initial state plus an ordered jump list. All objects
are immutable after construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

INF = math.inf


@dataclass(frozen=True)
class StateSpace:
    """Ordered, finite set of state labels."""

    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        if not labels:
            raise ValueError("state space must contain at least one state")
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate state labels in {labels}")
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return len(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label) -> int:
        if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
            if 0 <= label < self.size:
                return int(label)
            raise ValueError(f"state index {label} out of range")
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise ValueError(f"unknown state {label!r}") from None

    def label(self, i: int) -> str:
        return self.labels[i]

    def pair_index(self, i1: int, i2: int) -> int:
        """Flat position of the state pair ``(i1, i2)`` in the rearranged
        bivariate system (first coordinate runs fastest)."""
        return self.size * i2 + i1

    def pairs(self) -> list[tuple[int, int]]:
        """All state pairs in flat-index order."""
        l = self.size
        return [(k % l, k // l) for k in range(l * l)]


@dataclass(frozen=True)
class SamplePath:
    """One individual's trajectory.

    ``jumps`` holds ``(time, from_state, to_state)`` triples with strictly
    increasing times. Jumps after ``censor_time`` stay in storage but are not
    observable; estimators only see ``observed_jumps``.
    """

    id: str
    initial_state: int
    jumps: tuple[tuple[float, int, int], ...] = ()
    censor_time: float = INF
    landmark: str | None = None
    _times: np.ndarray = field(init=False, repr=False, compare=False)
    _states: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        jumps = tuple((float(t), int(a), int(b)) for t, a, b in self.jumps)
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "censor_time", float(self.censor_time))
        if self.landmark is not None:
            object.__setattr__(self, "landmark", str(self.landmark))
        current = int(self.initial_state)
        last = 0.0
        for t, a, b in jumps:
            if not t > last:
                raise ValueError(
                    f"path {self.id}: jump times must be strictly increasing "
                    f"and positive (got {t} after {last})"
                )
            if a == b:
                raise ValueError(f"path {self.id}: self-transition {a}->{b} at {t}")
            if a != current:
                raise ValueError(
                    f"path {self.id}: jump at {t} leaves state {a} "
                    f"but the path is in state {current}"
                )
            current, last = b, t
        if math.isnan(self.censor_time) or self.censor_time <= 0:
            raise ValueError(f"path {self.id}: censor time must be positive")
        times = np.array([j[0] for j in jumps], dtype=float)
        states = np.array([int(self.initial_state)] + [j[2] for j in jumps], dtype=np.int64)
        object.__setattr__(self, "_times", times)
        object.__setattr__(self, "_states", states)

    @property
    def jump_times(self) -> np.ndarray:
        return self._times

    @property
    def visited_states(self) -> np.ndarray:
        """State after each jump, preceded by the initial state."""
        return self._states

    def state_at(self, t):
        """Cadlag state value ``Z(t)``; vectorised over ``t``."""
        idx = np.searchsorted(self._times, t, side="right")
        out = self._states[idx]
        return int(out) if np.ndim(out) == 0 else out

    def state_before(self, t):
        """Left limit ``Z(t-)``; ``Z(0-) = Z(0)``."""
        idx = np.searchsorted(self._times, t, side="left")
        out = self._states[idx]
        return int(out) if np.ndim(out) == 0 else out

    def observed_jumps(self, start: float = 0.0, stop: float = INF):
        """Jumps in ``(start, min(stop, R)]``."""
        end = min(stop, self.censor_time)
        return [j for j in self.jumps if start < j[0] <= end]

    def with_censoring(self, censor_time: float) -> "SamplePath":
        return SamplePath(self.id, self.initial_state, self.jumps, censor_time, self.landmark)

    def with_landmark(self, landmark) -> "SamplePath":
        return SamplePath(self.id, self.initial_state, self.jumps, self.censor_time, landmark)


@dataclass(frozen=True, eq=False)
class StepFunction1D:
    """Right-continuous step function on ``[s, inf)``.

    ``values[k]`` holds on ``[grid[k], grid[k+1])`` and ``base`` on
    ``[s, grid[0])``. Values may carry trailing dimensions (vector- or
    matrix-valued step functions).
    """

    s: float
    grid: np.ndarray
    base: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float).reshape(-1)
        base = np.asarray(self.base, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.shape[:1] != grid.shape or values.shape[1:] != base.shape:
            raise ValueError(
                f"values shape {values.shape} does not match grid {grid.shape} "
                f"and base {base.shape}"
            )
        if grid.size and (np.any(np.diff(grid) <= 0) or grid[0] <= self.s):
            raise ValueError("grid must be strictly increasing and lie above s")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, s: float, value) -> "StepFunction1D":
        value = np.asarray(value, dtype=float)
        return cls(s, np.empty(0), value, np.empty((0,) + value.shape))

    @classmethod
    def from_jumps(cls, s: float, times, increments, base=0.0) -> "StepFunction1D":
        """Cumulative step function with the given increments; tied times
        are merged."""
        times = np.asarray(times, dtype=float)
        increments = np.asarray(increments, dtype=float)
        grid, inverse = np.unique(times, return_inverse=True)
        summed = np.zeros((grid.size,) + increments.shape[1:])
        np.add.at(summed, inverse, increments)
        base = np.asarray(base, dtype=float)
        return cls(s, grid, base, base + np.cumsum(summed, axis=0))

    @property
    def full_values(self) -> np.ndarray:
        """Values at ``[s] + grid``."""
        return np.concatenate([self.base[None], self.values], axis=0)

    @property
    def full_grid(self) -> np.ndarray:
        return np.concatenate([[self.s], self.grid])

    def __call__(self, t):
        idx = np.searchsorted(self.grid, t, side="right")
        return self.full_values[idx]

    def left_limit(self, t):
        idx = np.searchsorted(self.grid, t, side="left")
        return self.full_values[idx]

    def increments(self) -> np.ndarray:
        """Jump sizes at the grid points."""
        return np.diff(self.full_values, axis=0)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.full_values))) if self.full_values.size else 0.0

    def component(self, *index) -> "StepFunction1D":
        return StepFunction1D(
            self.s, self.grid, self.base[index], self.values[(slice(None),) + index]
        )

    def on_grid(self, grid) -> "StepFunction1D":
        """Re-express on a finer grid (same function)."""
        grid = np.asarray(grid, dtype=float)
        return StepFunction1D(self.s, grid, self.base, self(grid))


@dataclass(frozen=True, eq=False)
class StepSurface2D:
    """Surface on ``[s, inf)^2`` that is cadlag in each coordinate.

    ``values`` has shape ``(K1 + 1, K2 + 1, ...)``; row/column 0 is the
    boundary ``t1 = s`` / ``t2 = s``. A value at ``(a, b)`` holds on
    ``[g1[a], g1[a+1]) x [g2[b], g2[b+1])`` where ``g = [s] + grid``.
    """

    s: float
    grid1: np.ndarray
    grid2: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        g1 = np.asarray(self.grid1, dtype=float).reshape(-1)
        g2 = np.asarray(self.grid2, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float)
        if values.shape[:2] != (g1.size + 1, g2.size + 1):
            raise ValueError(
                f"values shape {values.shape} does not match grids "
                f"({g1.size}, {g2.size}) plus boundary"
            )
        for g in (g1, g2):
            if g.size and (np.any(np.diff(g) <= 0) or g[0] <= self.s):
                raise ValueError("grid must be strictly increasing and lie above s")
        object.__setattr__(self, "grid1", g1)
        object.__setattr__(self, "grid2", g2)
        object.__setattr__(self, "values", values)

    @property
    def full_grid1(self) -> np.ndarray:
        return np.concatenate([[self.s], self.grid1])

    @property
    def full_grid2(self) -> np.ndarray:
        return np.concatenate([[self.s], self.grid2])

    def __call__(self, t1, t2):
        a = np.searchsorted(self.grid1, t1, side="right")
        b = np.searchsorted(self.grid2, t2, side="right")
        return self.values[a, b]

    def left_limit(self, t1, t2):
        """``f(t1-, t2-)``."""
        a = np.searchsorted(self.grid1, t1, side="left")
        b = np.searchsorted(self.grid2, t2, side="left")
        return self.values[a, b]

    def rectangle_increments(self) -> np.ndarray:
        """Cell masses ``f(t1,t2) - f(t1,u2) - f(u1,t2) + f(u1,u2)``;
        shape ``(K1, K2, ...)``."""
        return np.diff(np.diff(self.values, axis=0), axis=1)

    def increment(self, u1, t1, u2, t2):
        """Rectangle increment over ``(u1, t1] x (u2, t2]``."""
        return self(t1, t2) - self(t1, u2) - self(u1, t2) + self(u1, u2)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def component(self, *index) -> "StepSurface2D":
        return StepSurface2D(
            self.s, self.grid1, self.grid2, self.values[(slice(None), slice(None)) + index]
        )

    def diagonal(self) -> StepFunction1D:
        """Restriction to ``t1 = t2`` (grids must coincide)."""
        if not np.array_equal(self.grid1, self.grid2):
            raise ValueError("diagonal needs a common grid")
        d = np.stack([self.values[k, k] for k in range(self.grid1.size + 1)])
        return StepFunction1D(self.s, self.grid1, d[0], d[1:])


def counting_process(path: SamplePath, i: int, j: int, horizon: float) -> StepFunction1D:
    """``N_ij(t)``: number of ``i -> j`` jumps in ``(0, t]``, ``t <= horizon``."""
    if i == j:
        raise ValueError("counting_process needs i != j; use diagonal_counting")
    times = [t for t, a, b in path.jumps if a == i and b == j and t <= horizon]
    return StepFunction1D.from_jumps(0.0, times, np.ones(len(times)))


def diagonal_counting(path: SamplePath, i: int, s: float, horizon: float) -> StepFunction1D:
    """``N_ii(t) = -sum_{j != i} (N_ij(t) - N_ij(s))`` for ``t > s``."""
    times = [t for t, a, _ in path.jumps if a == i and s < t <= horizon]
    return StepFunction1D.from_jumps(s, times, -np.ones(len(times)))


def indicator_process(path: SamplePath, i: int, horizon: float) -> StepFunction1D:
    """``I_i(t) = 1{Z(t) = i}`` on ``[0, horizon]``."""
    times, incs = [], []
    for t, a, b in path.jumps:
        if t > horizon:
            break
        if a == i or b == i:
            times.append(t)
            incs.append(1.0 if b == i else -1.0)
    base = 1.0 if path.initial_state == i else 0.0
    return StepFunction1D.from_jumps(0.0, times, np.array(incs), base=base)


def _counting_since(path: SamplePath, k: int, i: int, s: float, t: float) -> int:
    # N_ki((s, t]) with the diagonal convention of diagonal_counting
    if k == i:
        return -sum(1 for u, a, _ in path.jumps if a == i and s < u <= t)
    return sum(1 for u, a, b in path.jumps if a == k and b == i and s < u <= t)


def verify_indicator_identity(
    path: SamplePath, s: float, horizon: float, n_states: int | None = None
) -> float:
    """Largest ``|I_i(t) - I_i(s) - sum_j N_ji((s,t])|`` over states and the
    jump grid in ``(s, horizon]``. Exactly zero for a valid path."""
    if n_states is None:
        n_states = int(path.visited_states.max()) + 1
    times = [s] + [t for t, _, _ in path.jumps if s < t <= horizon] + [horizon]
    worst = 0.0
    for i in range(n_states):
        ind = indicator_process(path, i, horizon)
        at_s = ind(s)
        for t in times:
            flow = sum(_counting_since(path, k, i, s, t) for k in range(n_states))
            worst = max(worst, abs(float(ind(t)) - float(at_s) - flow))
    return worst


def _n_at(path: SamplePath, i: int, j: int, t: float, s: float) -> float:
    if i == j:
        if t <= s:
            return 0.0
        return -float(sum(1 for u, a, _ in path.jumps if a == i and s < u <= t))
    return float(sum(1 for u, a, b in path.jumps if a == i and b == j and u <= t))


def bivariate_product(
    path: SamplePath,
    pair: Sequence[Sequence[int]],
    t1: float,
    t2: float,
    s: float = 0.0,
    censor: bool = False,
) -> float:
    """``N_{i1 j1}(t1) N_{i2 j2}(t2)``, evaluated at ``t ^ R`` when ``censor``
    is set. Diagonal index pairs use ``diagonal_counting``."""
    (i1, j1), (i2, j2) = pair
    if censor:
        t1, t2 = min(t1, path.censor_time), min(t2, path.censor_time)
    return _n_at(path, i1, j1, t1, s) * _n_at(path, i2, j2, t2, s)
