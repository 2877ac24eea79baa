"""Invariant suite run by ``landmark-ms validate``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .actuarial import CashFlow1D, payment_function, plug_in_pipeline
from .estimate import (
    CensoredCohort,
    decomposition_residual_2d,
    fit_landmark,
    true_probabilities,
    true_rates_from_law,
)
from .model_core import verify_indicator_identity
from .simulate import (
    CensoringLaw,
    apply_censoring,
    exact_law,
    illness_death,
    landmark_as_if_markov,
    simulate_semi_markov,
    two_state_absorbing,
)
from .volterra import (
    MatrixMeasure2D,
    duhamel_residual,
    solve_volterra_2d,
    volterra_closed_form,
    volterra_residual,
)


@dataclass
class Check:
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tolerance)

    def as_dict(self) -> dict:
        return {"name": self.name, "value": float(self.value), "tolerance": self.tolerance, "passed": self.passed}


def _fixture_law(s: float = 1.0):
    model = illness_death(4, p_die_ill=(0.1, 0.3, 0.5))
    law = exact_law(model, s=s).with_landmarks()
    return model, law, law.with_censoring(CensoringLaw((2.0, 3.0, np.inf), (0.2, 0.2, 0.6)))


def oracle_checks() -> list[Check]:
    model, law, lawc = _fixture_law()
    tau = 4.0
    paths, w = lawc.weighted_cohort()
    cohort = CensoredCohort(paths, model.states, law.s, tau, weights=w)
    rate_err = rate2_err = invariance = invariance2 = prob = prob2 = diag = 0.0
    for z in cohort.landmarks():
        fit = fit_landmark(cohort, z)
        r1, r2 = true_rates_from_law(lawc, z, tau=tau)
        u1, u2 = true_rates_from_law(law, z, tau=tau)
        rate_err = max(rate_err, fit.rates.max_difference(r1))
        rate2_err = max(rate2_err, fit.rates2d.max_difference(r2))
        invariance = max(invariance, r1.max_difference(u1))
        invariance2 = max(invariance2, r2.max_difference(u2))
        P1, P2 = true_probabilities(law, z, tau)
        full = np.union1d([law.s], np.union1d(P1.grid, fit.probabilities.grid))
        prob = max(prob, float(np.max(np.abs(np.asarray(fit.probabilities(full)) - np.asarray(P1(full))))))
        t1, t2 = np.meshgrid(full, full, indexing="ij")
        prob2 = max(prob2, float(np.max(np.abs(fit.probabilities2d(t1, t2) - P2(t1, t2)))))
        l = model.states.size
        on_diag = fit.probabilities2d(full, full)
        expected = np.zeros_like(on_diag)
        one = np.asarray(fit.probabilities(full))
        for i in range(l):
            expected[:, l * i + i] = one[:, i]
        diag = max(diag, float(np.max(np.abs(on_diag - expected))))
    return [
        Check("oracle rates 1d", rate_err, 1e-12),
        Check("oracle rates 2d", rate2_err, 1e-12),
        Check("censored = uncensored rates 1d", invariance, 1e-12),
        Check("censored = uncensored rates 2d", invariance2, 1e-12),
        Check("oracle probabilities 1d", prob, 1e-10),
        Check("oracle probabilities 2d", prob2, 1e-10),
        Check("bivariate diagonal identity", diag, 1e-10),
    ]


def identity_checks(paths=None, s: float = 1.0, tau: float = 4.0, n: int = 500, seed: int = 0) -> list[Check]:
    if paths is None:
        model = illness_death(5, p_die_ill=(0.1, 0.3, 0.5))
        raw = simulate_semi_markov(model, n, seed)
        censored = apply_censoring(raw, CensoringLaw((2.0, 3.0, np.inf), (0.2, 0.2, 0.6)), seed, s)
        paths = landmark_as_if_markov(censored, s, model.states)
        states = model.states
    else:
        paths, states = paths
    ident = max(verify_indicator_identity(p, s, tau, states.size) for p in paths)
    cohort = CensoredCohort([p for p in paths if p.censor_time > s], states, s, tau)
    decomp = max(decomposition_residual_2d(cohort, z) for z in cohort.landmarks())
    return [Check("indicator identity residual", ident, 0.0), Check("bivariate decomposition residual", decomp, 0.0)]


def solver_checks(trials: int = 20, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    plug = closed = duh = 0.0
    for _ in range(trials):
        K1, K2 = rng.integers(1, 5, size=2)
        g1 = np.cumsum(rng.uniform(0.1, 1.0, K1))
        g2 = np.cumsum(rng.uniform(0.1, 1.0, K2))
        A = MatrixMeasure2D(0.0, g1, g2, rng.normal(scale=0.3, size=(K1, K2, 4, 4)))
        B = MatrixMeasure2D(0.0, g1, g2, rng.normal(scale=0.3, size=(K1, K2, 4, 4)))
        phi = rng.normal(size=(K1 + 1, K2 + 1, 4))
        Y = solve_volterra_2d(phi, A)
        plug = max(plug, volterra_residual(Y, phi, A))
        closed = max(closed, float(np.max(np.abs(Y.values - volterra_closed_form(phi, A).values))))
        duh = max(duh, duhamel_residual(A, B))
    return [
        Check("Volterra plug-back residual", plug, 1e-12),
        Check("recursion vs Peano closed form", closed, 1e-10),
        Check("Duhamel residual", duh, 1e-10),
    ]


def valuation_checks() -> list[Check]:
    model = two_state_absorbing(0.5, 2)
    law = exact_law(model).with_landmarks()
    paths, w = law.weighted_cohort()
    cohort = CensoredCohort(paths, model.states, 0.0, 3.0, weights=w)
    death = CashFlow1D(2, 2.0, transition={(0, 1): payment_function(base=1.0)})
    annuity = CashFlow1D(2, 3.0, sojourn={0: [(1.5, 1.0), (2.5, 1.0)]})
    d = plug_in_pipeline(cohort, death)["alive"]
    a = plug_in_pipeline(cohort, annuity)["alive"]
    return [
        Check("death benefit value", abs(d.value - 0.75), 1e-10),
        Check("death benefit second moment", abs(d.second_moment - 0.75), 1e-10),
        Check("annuity value", abs(a.value - 0.75), 1e-10),
        Check("annuity second moment", abs(a.second_moment - 1.25), 1e-10),
    ]


def run_checks(cohort_paths=None, s: float = 0.0, tau: float | None = None) -> list[Check]:
    checks = oracle_checks() + identity_checks() + solver_checks() + valuation_checks()
    if cohort_paths is not None:
        paths, states = cohort_paths
        end = tau if tau is not None else max([s + 1.0] + [t for p in paths for t, _, _ in p.jumps])
        ident = max(verify_indicator_identity(p, s, end, states.size) for p in paths)
        checks.append(Check("input cohort indicator identity", ident, 0.0))
    return checks
