"""Synthetic cohorts and the exhaustive-enumeration oracle.

Discrete-time models jump only at integer times ``1..T``. Every individual
draws from its own Philox stream keyed by ``(seed, id, purpose)``, so a
cohort does not depend on generation order or on how the work is split.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .model_core import INF, SamplePath, StateSpace

RNG_ALGORITHM = "numpy.random.Philox (4x64, key from SeedSequence([seed, id, stream]))"

_STREAM_PATH = 0
_STREAM_CENSOR = 1


def individual_rng(seed: int, index: int, stream: int = _STREAM_PATH) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), int(index), int(stream)])
    return np.random.Generator(np.random.Philox(ss))


def _check_distribution(p, what: str) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or np.any(p > 1) or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError(f"{what} must be a probability vector, got {p}")
    return p


@dataclass(frozen=True, eq=False)
class DiscreteMarkovModel:
    """Time-inhomogeneous Markov chain; ``matrices[t-1]`` drives the jump at
    time ``t``."""

    states: StateSpace
    matrices: np.ndarray
    initial: np.ndarray | None = None

    def __post_init__(self):
        m = np.asarray(self.matrices, dtype=float)
        l = self.states.size
        if m.ndim != 3 or m.shape[1:] != (l, l):
            raise ValueError(f"expected transition matrices of shape (T, {l}, {l}), got {m.shape}")
        if np.any(m < 0) or np.any(m > 1):
            raise ValueError("transition probabilities must lie in [0, 1]")
        bad = np.abs(m.sum(axis=2) - 1.0) > 1e-12
        if np.any(bad):
            t, i = np.argwhere(bad)[0]
            raise ValueError(f"row {i} of the step-{t + 1} matrix does not sum to 1")
        init = np.eye(l)[0] if self.initial is None else self.initial
        object.__setattr__(self, "matrices", m)
        object.__setattr__(self, "initial", _check_distribution(init, "initial distribution"))

    @property
    def horizon(self) -> int:
        return self.matrices.shape[0]

    def step_distribution(self, t: int, state: int, duration: int) -> np.ndarray:
        return self.matrices[t - 1, state]


@dataclass(frozen=True, eq=False)
class SemiMarkovModel:
    """Discrete-time semi-Markov chain.

    ``hazards[i, j, d-1]`` is the probability of jumping ``i -> j`` at a step
    where the sojourn in ``i`` would reach ``d`` steps; durations beyond the
    table reuse its last column.
    """

    states: StateSpace
    hazards: np.ndarray
    horizon: int
    initial: np.ndarray | None = None

    def __post_init__(self):
        h = np.asarray(self.hazards, dtype=float)
        l = self.states.size
        if h.ndim != 3 or h.shape[:2] != (l, l):
            raise ValueError(f"expected hazards of shape ({l}, {l}, D), got {h.shape}")
        if np.any(h < 0) or np.any(h[np.arange(l), np.arange(l)] != 0):
            raise ValueError("hazards must be nonnegative with a zero diagonal")
        if np.any(h.sum(axis=1) > 1 + 1e-12):
            raise ValueError("total exit hazard exceeds 1 for some state and duration")
        init = np.eye(l)[0] if self.initial is None else self.initial
        object.__setattr__(self, "hazards", h)
        object.__setattr__(self, "initial", _check_distribution(init, "initial distribution"))

    def step_distribution(self, t: int, state: int, duration: int) -> np.ndarray:
        d = min(duration, self.hazards.shape[2]) - 1
        row = self.hazards[state, :, d].copy()
        row[state] = max(0.0, 1.0 - row.sum())
        return row


@dataclass(frozen=True, eq=False)
class ContinuousMarkovModel:
    """Time-homogeneous Markov jump process with generator ``generator``."""

    states: StateSpace
    generator: np.ndarray
    horizon: float
    initial: np.ndarray | None = None

    def __post_init__(self):
        q = np.asarray(self.generator, dtype=float)
        off = q - np.diag(np.diag(q))
        if np.any(off < 0) or np.any(np.abs(q.sum(axis=1)) > 1e-10):
            raise ValueError("generator needs nonnegative off-diagonals and zero row sums")
        init = np.eye(q.shape[0])[0] if self.initial is None else self.initial
        object.__setattr__(self, "generator", q)
        object.__setattr__(self, "initial", _check_distribution(init, "initial distribution"))


def _draw(u: float, p: np.ndarray) -> int:
    k = int(np.searchsorted(np.cumsum(p), u, side="right"))
    return min(k, p.size - 1)


def _discrete_path(model, index: int, seed: int, horizon: int) -> SamplePath:
    rng = individual_rng(seed, index)
    u = rng.random(horizon + 1)
    state = _draw(u[0], model.initial)
    init, duration, jumps = state, 0, []
    for t in range(1, horizon + 1):
        duration += 1
        nxt = _draw(u[t], model.step_distribution(t, state, duration))
        if nxt != state:
            jumps.append((float(t), state, nxt))
            state, duration = nxt, 0
    return SamplePath(str(index), init, tuple(jumps))


def simulate_markov(model: DiscreteMarkovModel, n: int, seed: int) -> list[SamplePath]:
    """``n`` i.i.d. paths of a discrete-time Markov chain."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return [_discrete_path(model, m, seed, model.horizon) for m in range(n)]


def simulate_semi_markov(model: SemiMarkovModel, n: int, seed: int) -> list[SamplePath]:
    """``n`` i.i.d. paths of a duration-dependent (non-Markov) chain."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return [_discrete_path(model, m, seed, model.horizon) for m in range(n)]


def simulate_continuous_markov(model: ContinuousMarkovModel, n: int, seed: int) -> list[SamplePath]:
    if n < 1:
        raise ValueError("n must be at least 1")
    q = model.generator
    paths = []
    for m in range(n):
        rng = individual_rng(seed, m)
        state = _draw(rng.random(), model.initial)
        init, t, jumps = state, 0.0, []
        while True:
            rate = -q[state, state]
            if rate <= 0:
                break
            t += rng.exponential(1.0 / rate)
            if t > model.horizon:
                break
            p = np.clip(q[state], 0, None)
            p[state] = 0.0
            nxt = _draw(rng.random(), p / p.sum())
            jumps.append((t, state, nxt))
            state = nxt
        paths.append(SamplePath(str(m), init, tuple(jumps)))
    return paths


@dataclass(frozen=True)
class CensoringLaw:
    """Discrete censoring distribution; ``inf`` is allowed as an atom."""

    times: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        probs = _check_distribution(self.probs, "censoring law")
        if len(times) != probs.size or len(set(times)) != len(times):
            raise ValueError("censoring law needs one probability per distinct time")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "probs", tuple(float(p) for p in probs))

    @classmethod
    def none(cls) -> "CensoringLaw":
        return cls((INF,), (1.0,))

    @classmethod
    def uniform(cls, times: Iterable[float]) -> "CensoringLaw":
        times = tuple(times)
        return cls(times, tuple([1.0 / len(times)] * len(times)))

    def check(self, s: float) -> None:
        for t, p in zip(self.times, self.probs):
            if p > 0 and t <= s:
                raise ValueError(f"censoring law puts mass {p} at {t} <= s = {s}")

    def survival(self, t: float) -> float:
        """``P(R >= t)``."""
        return float(sum(p for u, p in zip(self.times, self.probs) if u >= t))

    def support(self):
        return [(t, p) for t, p in zip(self.times, self.probs) if p > 0]


def apply_censoring(
    cohort: Sequence[SamplePath], law: CensoringLaw, seed: int, s: float = 0.0
) -> list[SamplePath]:
    """Attach independent censoring times; landmarks are left untouched."""
    law.check(s)
    cdf = np.cumsum(law.probs)
    out = []
    for m, path in enumerate(cohort):
        u = individual_rng(seed, m, _STREAM_CENSOR).random()
        k = min(int(np.searchsorted(cdf, u, side="right")), len(law.times) - 1)
        out.append(path.with_censoring(law.times[k]))
    return out


def landmark_as_if_markov(cohort: Sequence[SamplePath], s: float, states: StateSpace | None = None):
    """Set each landmark to the state occupied at ``s``."""
    name = (lambda i: states.label(i)) if states is not None else str
    return [p.with_landmark(name(p.state_at(s))) for p in cohort]


def landmark_with(cohort: Sequence[SamplePath], rule: Callable[[SamplePath], object]):
    return [p.with_landmark(rule(p)) for p in cohort]


@dataclass(frozen=True, eq=False)
class ExactLaw:
    """All positive-probability trajectories of a discrete model up to ``T``,
    with an independent censoring law."""

    states: StateSpace
    paths: tuple[SamplePath, ...]
    probs: np.ndarray
    censoring: CensoringLaw = field(default_factory=CensoringLaw.none)
    s: float = 0.0

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"path probabilities sum to {probs.sum()}")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "paths", tuple(self.paths))

    def with_landmarks(self, rule: Callable[[SamplePath], object] | None = None) -> "ExactLaw":
        """Landmark every path (as-if Markov at ``s`` by default)."""
        if rule is None:
            paths = landmark_as_if_markov(self.paths, self.s, self.states)
        else:
            paths = landmark_with(self.paths, rule)
        return ExactLaw(self.states, tuple(paths), self.probs, self.censoring, self.s)

    def with_censoring(self, law: CensoringLaw) -> "ExactLaw":
        law.check(self.s)
        return ExactLaw(self.states, self.paths, self.probs, law, self.s)

    def weighted_cohort(self) -> tuple[list[SamplePath], np.ndarray]:
        """Every (path, censor time) combination with its joint probability."""
        paths, weights = [], []
        for path, p in zip(self.paths, self.probs):
            for r, q in self.censoring.support():
                paths.append(SamplePath(f"{path.id}@{r}", path.initial_state, path.jumps, r, path.landmark))
                weights.append(p * q)
        return paths, np.array(weights)

    def probability(self, event: Callable[[SamplePath], bool]) -> float:
        return float(sum(p for path, p in zip(self.paths, self.probs) if event(path)))


def exact_law(model, censoring: CensoringLaw | None = None, s: float = 0.0, T: int | None = None,
              limit: int = 10**6) -> ExactLaw:
    """Enumerate every trajectory of ``model`` on ``1..T`` with its probability."""
    T = int(T if T is not None else getattr(model, "horizon"))
    l = model.states.size
    size = l ** T
    if size > limit:
        raise ValueError(f"enumeration needs up to {l}^{T} = {size} paths (limit {limit})")
    censoring = censoring or CensoringLaw.none()
    censoring.check(s)
    paths, probs = [], []

    def walk(t, state, duration, jumps, prob, init):
        if t > T:
            paths.append(SamplePath(str(len(paths)), init, tuple(jumps)))
            probs.append(prob)
            return
        dist = model.step_distribution(t, state, duration + 1)
        for nxt in range(l):
            q = dist[nxt]
            if q <= 0:
                continue
            if nxt == state:
                walk(t + 1, state, duration + 1, jumps, prob * q, init)
            else:
                walk(t + 1, nxt, 0, jumps + [(float(t), state, nxt)], prob * q, init)

    for i0 in range(l):
        if model.initial[i0] > 0:
            walk(1, i0, 0, [], float(model.initial[i0]), i0)
    return ExactLaw(model.states, tuple(paths), np.array(probs), censoring, s)


def two_state_absorbing(q: float, T: int) -> DiscreteMarkovModel:
    """Alive/dead model with constant death probability ``q`` per step."""
    states = StateSpace(("alive", "dead"))
    m = np.array([[1 - q, q], [0.0, 1.0]])
    return DiscreteMarkovModel(states, np.repeat(m[None], T, axis=0))


def illness_death(T: int, p_ill: float = 0.2, p_die_healthy: float = 0.05,
                  p_recover: float = 0.1, p_die_ill: Sequence[float] = (0.1,)) -> SemiMarkovModel:
    """Healthy/ill/dead semi-Markov model; ``p_die_ill[d-1]`` is the
    mortality of the ill after ``d`` steps of illness."""
    states = StateSpace(("healthy", "ill", "dead"))
    D = max(1, len(p_die_ill))
    h = np.zeros((3, 3, D))
    h[0, 1, :] = p_ill
    h[0, 2, :] = p_die_healthy
    h[1, 0, :] = p_recover
    h[1, 2, :] = np.asarray(p_die_ill, dtype=float)
    return SemiMarkovModel(states, h, T)


def simulate(model, n: int, seed: int) -> list[SamplePath]:
    """Dispatch on the model type."""
    if isinstance(model, DiscreteMarkovModel):
        return simulate_markov(model, n, seed)
    if isinstance(model, SemiMarkovModel):
        return simulate_semi_markov(model, n, seed)
    if isinstance(model, ContinuousMarkovModel):
        return simulate_continuous_markov(model, n, seed)
    raise TypeError(f"cannot simulate {type(model).__name__}")
