"""File formats, run configuration and artifact serialization.

Event-history file (comma separated, ``#`` starts a comment)::

    S,healthy,ill,dead                      optional: declares state order
    H,id,initial_state,censor_time,landmark one per individual
    J,id,time,from,to                       one per jump

States are labels; without an ``S`` record they are ordered by first
appearance. ``censor_time`` may be ``inf``; an empty landmark means none.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

from .actuarial import CashFlow1D, DiscountFunction, payment_function
from .estimate import CensoredCohort, RateMeasure1D, RateMeasure2D
from .model_core import SamplePath, StateSpace, StepFunction1D, StepSurface2D
from .simulate import (
    CensoringLaw,
    ContinuousMarkovModel,
    DiscreteMarkovModel,
    SemiMarkovModel,
)


class InputError(ValueError):
    """Malformed or inconsistent input file; maps to exit code 2."""


def fmt(x: float) -> str:
    """Lossless float text (``inf`` for infinity)."""
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def atomic_write(path, text: str) -> None:
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- event histories -----------------------------------------------------------


def _parse_float(text: str, what: str, lineno: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise InputError(f"line {lineno}: {what} {text!r} is not a number") from None


def parse_event_history(text: str) -> tuple[list[SamplePath], StateSpace]:
    """Parse the event-history grammar; every error names its line."""
    labels: list[str] = []
    declared = False
    headers: dict[str, tuple[int, str, float, str | None]] = {}
    order: list[str] = []
    jumps: dict[str, list[tuple[int, float, str, str]]] = {}

    def state(label: str, lineno: int) -> str:
        if not label:
            raise InputError(f"line {lineno}: empty state label")
        if label not in labels:
            if declared:
                raise InputError(f"line {lineno}: state {label!r} is not declared in the S record")
            labels.append(label)
        return label

    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        row = [c.strip() for c in row]
        if not row or not any(row) or row[0].startswith("#"):
            continue
        kind = row[0]
        if kind == "S":
            if declared or headers:
                raise InputError(f"line {lineno}: the S record must come first and only once")
            if len(row) < 2 or len(set(row[1:])) != len(row) - 1 or "" in row[1:]:
                raise InputError(f"line {lineno}: S record needs distinct, nonempty state labels")
            labels = list(row[1:])
            declared = True
        elif kind == "H":
            if len(row) not in (4, 5):
                raise InputError(f"line {lineno}: H record needs id,initial_state,censor_time[,landmark]")
            pid = row[1]
            if not pid:
                raise InputError(f"line {lineno}: empty id")
            if pid in headers:
                raise InputError(f"line {lineno}: duplicate individual {pid!r}")
            init = state(row[2], lineno)
            R = _parse_float(row[3], "censor time", lineno)
            if math.isnan(R) or R <= 0:
                raise InputError(f"line {lineno}: individual {pid!r} has censor time {row[3]} (must be > 0)")
            landmark = row[4] if len(row) == 5 and row[4] != "" else None
            headers[pid] = (lineno, init, R, landmark)
            order.append(pid)
            jumps[pid] = []
        elif kind == "J":
            if len(row) != 5:
                raise InputError(f"line {lineno}: J record needs id,time,from,to")
            pid = row[1]
            if pid not in headers:
                raise InputError(f"line {lineno}: jump for individual {pid!r} before its H record")
            t = _parse_float(row[2], "jump time", lineno)
            jumps[pid].append((lineno, t, state(row[3], lineno), state(row[4], lineno)))
        else:
            raise InputError(f"line {lineno}: unknown record kind {kind!r}")
    if not headers:
        raise InputError("no individuals")
    states = StateSpace(tuple(labels))
    paths = []
    for pid in order:
        h_line, init, R, landmark = headers[pid]
        current, last = init, 0.0
        triples = []
        for lineno, t, a, b in jumps[pid]:
            if not (t > last) or math.isinf(t):
                raise InputError(f"line {lineno}: individual {pid!r} jump time {t} is not after {last}")
            if a == b:
                raise InputError(f"line {lineno}: individual {pid!r} self-transition {a}->{b}")
            if a != current:
                raise InputError(
                    f"line {lineno}: individual {pid!r} jumps from {a!r} but is in state {current!r}"
                )
            triples.append((t, states.index(a), states.index(b)))
            current, last = b, t
        paths.append(SamplePath(pid, states.index(init), tuple(triples), R, landmark))
    return paths, states


def read_event_history(path) -> tuple[list[SamplePath], StateSpace]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read cohort file {path}: {exc}") from None
    return parse_event_history(text)


def ingest_cohort(path_or_paths, s: float, tau: float, tau2=None, states: StateSpace | None = None) -> CensoredCohort:
    """Read and validate a cohort; ``R <= s`` is rejected with the line number."""
    if isinstance(path_or_paths, (str, os.PathLike)):
        text = Path(path_or_paths).read_text() if Path(path_or_paths).exists() else None
        if text is None:
            raise InputError(f"cohort file {path_or_paths} does not exist")
        paths, st = parse_event_history(text)
        lines = _header_lines(text)
    else:
        paths, st = path_or_paths, states
        lines = {}
    for p in paths:
        if not p.censor_time > s:
            where = f"line {lines[p.id]}: " if p.id in lines else ""
            raise InputError(f"{where}individual {p.id!r} is censored at {p.censor_time} <= s = {s}")
    try:
        return CensoredCohort(paths, st, s, tau, tau2)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _header_lines(text: str) -> dict[str, int]:
    out = {}
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if len(row) > 1 and row[0].strip() == "H":
            out[row[1].strip()] = lineno
    return out


def serialize_event_history(paths: Sequence[SamplePath], states: StateSpace, comments: Iterable[str] = ()) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["S", *states.labels])
    for p in paths:
        w.writerow(["H", p.id, states.label(p.initial_state), fmt(p.censor_time), "" if p.landmark is None else p.landmark])
        for t, a, b in p.jumps:
            w.writerow(["J", p.id, fmt(t), states.label(a), states.label(b)])
    return buf.getvalue()


def write_event_history(path, paths, states, comments=()) -> None:
    atomic_write(path, serialize_event_history(paths, states, comments))


# -- configuration -------------------------------------------------------------


@dataclass
class RunConfig:
    """Run settings; every key has a default and may appear in the YAML
    config file or as a ``--key`` flag.

    s            evaluation (landmark) time
    tau          endpoint of univariate estimation; defaults to the cash-flow horizon
    tau2         pair of bivariate endpoints; defaults to ``(tau, tau)``
    epsilon      perturbation floor, a positive number or ``auto`` (= 1/(2n))
    landmark     ``as-if-markov`` (state at s) or ``column`` (landmark field of the cohort file)
    bivariate    also estimate bivariate rates and probabilities
    seed, n      simulation seed and cohort size (fall back to the model file, then 0 / 1000)
    model, cohort, cashflow   input file paths
    output_dir   artifact directory
    threads      worker threads across landmark classes
    """

    s: float = 0.0
    tau: float | None = None
    tau2: tuple[float, float] | None = None
    epsilon: float | str = "auto"
    landmark: str = "as-if-markov"
    bivariate: bool = True
    seed: int | None = None
    n: int | None = None
    model: str | None = None
    cohort: str | None = None
    cashflow: str | None = None
    output_dir: str = "landmark_ms_output"
    threads: int = 1

    def __post_init__(self):
        self.s = float(self.s)
        if self.tau is not None:
            self.tau = float(self.tau)
            if not self.tau > self.s:
                raise InputError(f"config: tau = {self.tau} must exceed s = {self.s}")
        if self.tau2 is not None:
            t2 = self.tau2
            if isinstance(t2, str):
                t2 = [x for x in t2.replace(",", " ").split() if x]
            if np.ndim(t2) == 0:
                t2 = (t2, t2)
            if len(t2) != 2:
                raise InputError("config: tau2 needs two values")
            self.tau2 = (float(t2[0]), float(t2[1]))
            if min(self.tau2) <= self.s:
                raise InputError(f"config: tau2 = {self.tau2} must exceed s = {self.s}")
        if self.epsilon != "auto":
            try:
                self.epsilon = float(self.epsilon)
            except (TypeError, ValueError):
                raise InputError(f"config: epsilon {self.epsilon!r} is neither a number nor 'auto'") from None
            if not self.epsilon > 0:
                raise InputError(f"config: epsilon must be positive, got {self.epsilon}")
        if self.landmark not in ("as-if-markov", "column"):
            raise InputError(f"config: landmark rule {self.landmark!r} is not 'as-if-markov' or 'column'")
        self.threads = int(self.threads)
        if self.threads < 1:
            raise InputError("config: threads must be at least 1")
        if isinstance(self.bivariate, str):
            self.bivariate = self.bivariate.lower() in ("1", "true", "yes", "on")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["tau2"] is not None:
            d["tau2"] = list(d["tau2"])
        return d

    def digest(self) -> str:
        """Hash of the settings and the content of every input file."""
        payload = {k: v for k, v in self.as_dict().items() if k not in ("output_dir", "threads")}
        for key in ("model", "cohort", "cashflow"):
            if payload.get(key) and Path(payload[key]).exists():
                payload[key + "_sha256"] = file_digest(payload[key])
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


ENV_OVERRIDES = {"LANDMARK_MS_OUTPUT_DIR": "output_dir", "LANDMARK_MS_THREADS": "threads"}


def load_config(path=None, overrides: dict | None = None, environ=None) -> RunConfig:
    """Defaults < config file < environment < explicit overrides."""
    values: dict = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise InputError(f"cannot read config {path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise InputError(f"config {path} must be a key-value mapping")
        unknown = set(loaded) - set(RunConfig.keys())
        if unknown:
            raise InputError(f"config {path}: unknown keys {sorted(unknown)}")
        values.update(loaded)
    env = os.environ if environ is None else environ
    for var, key in ENV_OVERRIDES.items():
        if env.get(var):
            values[key] = env[var]
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise InputError(f"config: {exc}") from None


# -- model and cash-flow files --------------------------------------------------


def _yaml_file(path, what: str) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise InputError(f"cannot read {what} file {path}: {exc}") from None
    if not isinstance(data, dict):
        raise InputError(f"{what} file {path} must be a mapping")
    return data


def _inf(x) -> float:
    return math.inf if isinstance(x, str) and x.strip().lower() in ("inf", "+inf", ".inf") else float(x)


@dataclass
class ModelSpec:
    model: object
    censoring: CensoringLaw
    s: float = 0.0
    n: int | None = None
    seed: int | None = None


def load_model(path) -> ModelSpec:
    """YAML model description.

    ``kind`` is ``markov`` (``matrices``: one l x l matrix per step, or a single
    matrix reused for ``horizon`` steps), ``semi-markov`` (``hazards``:
    ``{from: {to: [h(1), h(2), ...]}}`` by sojourn duration) or ``continuous``
    (``generator``). Optional keys: ``initial``, ``censoring`` (``times``,
    ``probs``), ``s``, ``n``, ``seed``.
    """
    d = _yaml_file(path, "model")
    try:
        states = StateSpace(tuple(str(x) for x in d["states"]))
        l = states.size
        kind = d.get("kind", "markov")
        initial = d.get("initial")
        if isinstance(initial, str):
            vec = np.zeros(l)
            vec[states.index(initial)] = 1.0
            initial = vec
        if kind == "markov":
            mats = np.asarray(d["matrices"], dtype=float)
            if mats.ndim == 2:
                mats = np.repeat(mats[None], int(d["horizon"]), axis=0)
            model = DiscreteMarkovModel(states, mats, initial)
        elif kind == "semi-markov":
            spec = d["hazards"]
            D = max(len(v) for row in spec.values() for v in row.values())
            h = np.zeros((l, l, D))
            for a, row in spec.items():
                for b, seq in row.items():
                    seq = list(seq) + [seq[-1]] * (D - len(seq))
                    h[states.index(str(a)), states.index(str(b))] = seq
            model = SemiMarkovModel(states, h, int(d["horizon"]), initial)
        elif kind == "continuous":
            model = ContinuousMarkovModel(states, np.asarray(d["generator"], dtype=float), float(d["horizon"]), initial)
        else:
            raise InputError(f"model file {path}: unknown kind {kind!r}")
        cens = d.get("censoring")
        if cens:
            censoring = CensoringLaw(tuple(_inf(t) for t in cens["times"]), tuple(float(p) for p in cens["probs"]))
        else:
            censoring = CensoringLaw.none()
        s = float(d.get("s", 0.0))
        censoring.check(s)
    except InputError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"model file {path}: {exc}") from None
    return ModelSpec(model, censoring, s, d.get("n"), d.get("seed"))


def load_cashflow(path, states: StateSpace) -> tuple[CashFlow1D, DiscountFunction]:
    """YAML cash-flow description::

        horizon: 3
        sojourn: {alive: [[1.5, 1.0], [2.5, 1.0]]}      # (time, amount) atoms
        continuous: [[alive, 0.0, 3.0, 0.1]]            # (state, start, end, rate)
        transition:                                     # a(t) = value for t >= time
          - {from: alive, to: dead, base: 1.0, steps: [[2.0, 2.0]]}
        discount: [[0, 1.0], [1, 1.03]]                 # (time, kappa)
    """
    d = _yaml_file(path, "cash-flow")
    try:
        horizon = float(d["horizon"])
        soj = {states.index(str(k)): [tuple(map(float, a)) for a in v] for k, v in (d.get("sojourn") or {}).items()}
        cont = [(states.index(str(i)), float(a), float(b), float(r)) for i, a, b, r in (d.get("continuous") or [])]
        trans = {}
        for entry in d.get("transition") or []:
            i, j = states.index(str(entry["from"])), states.index(str(entry["to"]))
            steps = entry.get("steps") or []
            trans[(i, j)] = payment_function(
                [float(t) for t, _ in steps], [float(v) for _, v in steps], float(entry.get("base", 0.0))
            )
        disc = d.get("discount")
        kappa = (
            DiscountFunction(np.array([float(t) for t, _ in disc]), np.array([float(v) for _, v in disc]))
            if disc
            else DiscountFunction.constant()
        )
        return CashFlow1D(states.size, horizon, soj, cont, trans), kappa
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"cash-flow file {path}: {exc}") from None


# -- artifacts --------------------------------------------------------------------


def _with_header(meta: dict, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    buf.write("#meta " + json.dumps(meta, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _split_header(text: str) -> tuple[dict, list[list[str]]]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#meta "):
        raise InputError("artifact lacks its metadata header")
    meta = json.loads(lines[0][len("#meta ") :])
    rows = list(csv.reader(lines[2:]))
    return meta, rows


@dataclass
class SurfaceArtifact:
    """A scalar surface on ``[s, ..] x [s, ..]`` with metadata; the table
    lists ``(t1, t2, value)`` on every full-grid point."""

    meta: dict
    surface: StepSurface2D

    def to_text(self) -> str:
        f = self.surface
        meta = dict(self.meta, s=f.s, grid1=[fmt(x) for x in f.grid1], grid2=[fmt(x) for x in f.grid2])
        g1, g2 = f.full_grid1, f.full_grid2
        rows = ((fmt(g1[a]), fmt(g2[b]), fmt(f.values[a, b])) for a in range(g1.size) for b in range(g2.size))
        return _with_header(meta, ("t1", "t2", "value"), rows)

    @classmethod
    def from_text(cls, text: str) -> "SurfaceArtifact":
        meta, rows = _split_header(text)
        g1 = np.array([float(x) for x in meta.pop("grid1")])
        g2 = np.array([float(x) for x in meta.pop("grid2")])
        s = float(meta.pop("s"))
        vals = np.array([float(r[2]) for r in rows]).reshape(g1.size + 1, g2.size + 1)
        return cls(meta, StepSurface2D(s, g1, g2, vals))


@dataclass
class RateArtifact2D:
    """Bivariate rate masses; the table lists every nonzero cell mass as
    ``(cell_t1_lo, cell_t1_hi, cell_t2_lo, cell_t2_hi, i1, j1, i2, j2, mass)``."""

    meta: dict
    rates: RateMeasure2D
    states: StateSpace

    def to_text(self) -> str:
        r, st = self.rates, self.states
        l = st.size
        meta = dict(self.meta, s=r.s, grid1=[fmt(x) for x in r.grid1], grid2=[fmt(x) for x in r.grid2],
                    states=list(st.labels), tau=[fmt(x) for x in (r.tau or (r.grid1[-1], r.grid2[-1]))])
        f1, f2 = r.full_grid1, r.full_grid2
        rows = []
        for a, b, I, J in zip(*np.nonzero(r.masses)):
            rows.append((
                fmt(f1[a]), fmt(f1[a + 1]), fmt(f2[b]), fmt(f2[b + 1]),
                st.label(I % l), st.label(J % l), st.label(I // l), st.label(J // l),
                fmt(r.masses[a, b, I, J]),
            ))
        header = ("cell_t1_lo", "cell_t1_hi", "cell_t2_lo", "cell_t2_hi", "i1", "j1", "i2", "j2", "mass")
        return _with_header(meta, header, rows)

    @classmethod
    def from_text(cls, text: str) -> "RateArtifact2D":
        meta, rows = _split_header(text)
        st = StateSpace(tuple(meta.pop("states")))
        l = st.size
        g1 = np.array([float(x) for x in meta.pop("grid1")])
        g2 = np.array([float(x) for x in meta.pop("grid2")])
        s = float(meta.pop("s"))
        tau = tuple(float(x) for x in meta.pop("tau"))
        masses = np.zeros((g1.size, g2.size, l * l, l * l))
        for row in rows:
            hi1, hi2 = float(row[1]), float(row[3])
            a, b = int(np.searchsorted(g1, hi1)), int(np.searchsorted(g2, hi2))
            i1, j1, i2, j2 = (st.index(x) for x in row[4:8])
            masses[a, b, l * i2 + i1, l * j2 + j1] = float(row[8])
        return cls(meta, RateMeasure2D(s, g1, g2, masses, meta.get("landmark"), tau), st)


def rates1d_text(meta: dict, rates: RateMeasure1D, states: StateSpace) -> str:
    """Univariate rates as ``(t, from, to, mass)`` for every nonzero off-diagonal atom."""
    meta = dict(meta, s=rates.s, grid=[fmt(x) for x in rates.grid], states=list(states.labels))
    rows = []
    for k, i, j in zip(*np.nonzero(rates.masses)):
        if i != j:
            rows.append((fmt(rates.grid[k]), states.label(i), states.label(j), fmt(rates.masses[k, i, j])))
    return _with_header(meta, ("t", "from", "to", "mass"), rows)


def read_rates1d(text: str) -> RateMeasure1D:
    meta, rows = _split_header(text)
    st = StateSpace(tuple(meta["states"]))
    grid = np.array([float(x) for x in meta["grid"]])
    masses = np.zeros((grid.size, st.size, st.size))
    for t, a, b, m in rows:
        k = int(np.searchsorted(grid, float(t)))
        masses[k, st.index(a), st.index(b)] = float(m)
    idx = np.arange(st.size)
    masses[:, idx, idx] = -masses.sum(axis=2)
    return RateMeasure1D(float(meta["s"]), grid, masses, meta.get("landmark"))


def probabilities1d_text(meta: dict, P: StepFunction1D, states: StateSpace) -> str:
    """Occupation probabilities as ``(t, state, value)`` on the full grid."""
    meta = dict(meta, s=P.s, states=list(states.labels))
    rows = []
    for t, v in zip(P.full_grid, P.full_values):
        for i in range(states.size):
            rows.append((fmt(t), states.label(i), fmt(v[i])))
    return _with_header(meta, ("t", "state", "value"), rows)


def write_json(path, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x)}")
