"""Command-line entry point: ``landmark-ms {simulate,estimate,value,validate}``.

Exit codes: 0 success, 1 validation failure, 2 input error. Errors are also
reported on stderr as a one-line JSON object.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .actuarial import plug_in_pipeline
from .cli_io import (
    InputError,
    RateArtifact2D,
    RunConfig,
    SurfaceArtifact,
    atomic_write,
    file_digest,
    load_cashflow,
    load_config,
    load_model,
    probabilities1d_text,
    rates1d_text,
    read_event_history,
    write_event_history,
    write_json,
)
from .estimate import CensoredCohort, fit_landmark
from .simulate import RNG_ALGORITHM, apply_censoring, landmark_as_if_markov, simulate
from .validation import run_checks

log = logging.getLogger("landmark_ms")

EXIT_OK, EXIT_INVALID, EXIT_INPUT = 0, 1, 2


def _slug(z) -> str:
    return "_all" if z is None else re.sub(r"[^A-Za-z0-9_.-]+", "_", str(z))


def _meta(cfg: RunConfig, **extra) -> dict:
    return {"config_sha256": cfg.digest(), "package_version": __version__, **extra}


def _load_cohort(cfg: RunConfig, tau: float) -> CensoredCohort:
    if not cfg.cohort:
        raise InputError("a cohort file is required (--cohort)")
    paths, states = read_event_history(cfg.cohort)
    if cfg.landmark == "as-if-markov":
        paths = landmark_as_if_markov(paths, cfg.s, states)
    return _cohort(paths, states, cfg, tau)


def _cohort(paths, states, cfg: RunConfig, tau: float) -> CensoredCohort:
    for p in paths:
        if not p.censor_time > cfg.s:
            raise InputError(f"individual {p.id!r} is censored at {p.censor_time} <= s = {cfg.s}")
    try:
        return CensoredCohort(paths, states, cfg.s, tau, cfg.tau2)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def cmd_simulate(cfg: RunConfig, args) -> int:
    if not cfg.model:
        raise InputError("a model file is required (--model)")
    spec = load_model(cfg.model)
    n = cfg.n if cfg.n is not None else (spec.n if spec.n is not None else 1000)
    seed = cfg.seed if cfg.seed is not None else (spec.seed if spec.seed is not None else 0)
    paths = simulate(spec.model, int(n), int(seed))
    paths = apply_censoring(paths, spec.censoring, int(seed), spec.s)
    paths = landmark_as_if_markov(paths, spec.s, spec.model.states)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / "cohort.csv"
    comments = [
        f"rng: {RNG_ALGORITHM}",
        f"seed: {seed}",
        f"n: {n}",
        f"model_sha256: {file_digest(cfg.model)}",
        f"landmark: state at s = {spec.s}",
    ]
    write_event_history(out, paths, spec.model.states, comments)
    print(f"wrote {len(paths)} individuals to {out}")
    return EXIT_OK


def cmd_estimate(cfg: RunConfig, args) -> int:
    if cfg.tau is None:
        raise InputError("estimate needs tau (--tau)")
    cohort = _load_cohort(cfg, cfg.tau)
    states = cohort.states
    root = Path(cfg.output_dir) / "estimate"
    summary = {"meta": _meta(cfg, n=cohort.n, epsilon=cohort.resolve_epsilon(cfg.epsilon)), "classes": []}

    classes = cohort.landmarks()
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        fits = list(pool.map(lambda z: fit_landmark(cohort, z, cfg.epsilon, cfg.bivariate), classes))
    for z, fit in zip(classes, fits):
        d = root / _slug(z)
        meta = _meta(cfg, landmark=z)
        atomic_write(d / "rates1d.csv", rates1d_text(meta, fit.rates, states))
        atomic_write(d / "probabilities1d.csv", probabilities1d_text(meta, fit.probabilities, states))
        files = ["rates1d.csv", "probabilities1d.csv"]
        if fit.rates2d is not None:
            atomic_write(d / "rates2d.csv", RateArtifact2D(meta, fit.rates2d, states).to_text())
            files.append("rates2d.csv")
            l = states.size
            for i2 in range(l):
                for i1 in range(l):
                    surf = fit.probabilities2d.component(l * i2 + i1)
                    pair = [states.label(i1), states.label(i2)]
                    name = f"probabilities2d/{_slug(pair[0])}__{_slug(pair[1])}.csv"
                    atomic_write(d / name, SurfaceArtifact(dict(meta, index_pair=pair), surf).to_text())
                    files.append(name)
        summary["classes"].append({
            "landmark": z,
            "n_members": fit.n_members,
            "initial": dict(zip(states.labels, fit.initial.tolist())),
            "epsilon_events": fit.diagnostics.epsilon_events,
            "warnings": fit.diagnostics.messages,
            "directory": str(d),
            "files": files,
        })
    write_json(root / "summary.json", summary)
    print(f"estimated {len(classes)} landmark class(es); artifacts in {root}")
    return EXIT_OK


def cmd_value(cfg: RunConfig, args) -> int:
    if not cfg.cashflow:
        raise InputError("value needs a cash-flow file (--cashflow)")
    paths, states = read_event_history(cfg.cohort) if cfg.cohort else (None, None)
    if paths is None:
        raise InputError("a cohort file is required (--cohort)")
    cf, kappa = load_cashflow(cfg.cashflow, states)
    tau = cfg.tau if cfg.tau is not None else cf.horizon
    if cfg.landmark == "as-if-markov":
        paths = landmark_as_if_markov(paths, cfg.s, states)
    cohort = _cohort(paths, states, cfg, tau)
    report = plug_in_pipeline(cohort, cf, kappa, cfg.epsilon, cfg.bivariate, cfg.threads)
    out = {"meta": _meta(cfg, n=cohort.n, tau=tau, tau2=list(cohort.tau2)), "classes": []}
    for z, r in report.items():
        out["classes"].append({
            "landmark": z,
            "n_members": r.n_members,
            "value": r.value,
            "second_moment": r.second_moment,
            "variance": r.variance,
            "warnings": r.diagnostics.messages,
        })
        v2 = "n/a" if r.second_moment is None else f"{r.second_moment:.10g}"
        print(f"{z!s:>16}  n={r.n_members:<8d} V={r.value:.10g}  E[Y^2]={v2}")
    target = Path(cfg.output_dir) / "valuation.json"
    write_json(target, out)
    return EXIT_OK


def cmd_validate(cfg: RunConfig, args) -> int:
    cohort = read_event_history(cfg.cohort) if cfg.cohort else None
    checks = run_checks(cohort, cfg.s, cfg.tau)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.value:.3g} (tolerance {c.tolerance:g})")
    ok = all(c.passed for c in checks)
    write_json(Path(cfg.output_dir) / "validation.json", {
        "meta": _meta(cfg),
        "passed": ok,
        "checks": [c.as_dict() for c in checks],
    })
    return EXIT_OK if ok else EXIT_INVALID


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "value": cmd_value, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="landmark-ms", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML file of RunConfig keys")
        sp.add_argument("--s", type=float)
        sp.add_argument("--tau", type=float)
        sp.add_argument("--tau2", type=float, nargs=2, metavar=("TAU1", "TAU2"))
        sp.add_argument("--epsilon", help="positive number or 'auto'")
        sp.add_argument("--landmark", choices=["as-if-markov", "column"])
        sp.add_argument("--no-bivariate", dest="bivariate", action="store_const", const=False)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--n", type=int)
        sp.add_argument("--model")
        sp.add_argument("--cohort")
        sp.add_argument("--cashflow")
        sp.add_argument("--output-dir", dest="output_dir")
        sp.add_argument("--threads", type=int)
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "simulate":
            sp.add_argument("--out", help="cohort file to write (default OUTPUT_DIR/cohort.csv)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    keys = RunConfig.keys()
    overrides = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    try:
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg, args)
    except (InputError, ValueError, OSError, MemoryError) as exc:
        kind = type(exc).__name__
        print(json.dumps({"status": "error", "command": args.command, "error": kind, "message": str(exc)}), file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
