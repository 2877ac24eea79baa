import numpy as np
import pytest

from landmark_ms.actuarial import (
    CashFlow1D,
    CashFlow2D,
    DiscountFunction,
    expected_value_1d,
    expected_value_2d,
    pathwise_value,
    payment_function,
    plug_in_pipeline,
    second_moment_representation,
)
from landmark_ms.estimate import CensoredCohort, fit_landmark
from landmark_ms.model_core import SamplePath
from landmark_ms.simulate import (
    CensoringLaw,
    exact_law,
    illness_death,
    landmark_as_if_markov,
    simulate,
    two_state_absorbing,
)

DEATH = CashFlow1D(2, 2.0, transition={(0, 1): payment_function(base=1.0)})
# paid at 1.5 and 2.5 to whoever survived the jumps at 1 and 2
ANNUITY = CashFlow1D(2, 3.0, sojourn={0: [(1.5, 1.0), (2.5, 1.0)]})


def two_state_cohort(censoring=None):
    law = exact_law(two_state_absorbing(0.5, 2)).with_landmarks()
    if censoring is not None:
        law = law.with_censoring(censoring)
    paths, w = law.weighted_cohort()
    return CensoredCohort(paths, law.states, 0.0, 3.0, weights=w)


def illness_cashflow(horizon=4.0):
    return CashFlow1D(
        3,
        horizon,
        sojourn={0: [(1.5, 1.0), (3.0, 2.0)], 1: [(2.5, 3.0)]},
        continuous=[(1, 1.0, 4.0, 0.5)],
        transition={
            (0, 1): payment_function([2.5], [4.0], base=2.0),
            (1, 2): payment_function(base=5.0),
            (0, 2): payment_function([3.0], [-1.0], base=1.0),
        },
    )


def enumerated_moments(law, z, cf, kappa, s):
    v = v2 = total = 0.0
    for path, p in zip(law.paths, law.probs):
        if path.landmark != z:
            continue
        y = pathwise_value(path, cf, kappa, s)
        v += p * y
        v2 += p * y * y
        total += p
    return v / total, v2 / total


class TestDiscount:
    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            DiscountFunction([0.0, 1.0], [1.0, 0.0])

    def test_factor(self):
        k = DiscountFunction([0.0, 1.0, 2.0], [1.0, 1.1, 1.21])
        assert k.factor(0.0, 2.5) == pytest.approx(1 / 1.21)
        assert k.factor(1.0, 1.5) == 1.0


class TestCashFlow:
    def test_transition_needs_distinct_states(self):
        with pytest.raises(ValueError):
            CashFlow1D(2, 1.0, transition={(0, 0): payment_function(base=1.0)})

    def test_payment_after_horizon(self):
        with pytest.raises(ValueError, match="horizon"):
            CashFlow1D(2, 1.0, sojourn={0: [(2.0, 1.0)]})

    def test_unknown_state(self):
        with pytest.raises(ValueError):
            CashFlow1D(2, 1.0, sojourn={5: [(1.0, 1.0)]})


class TestPathwise:
    def test_zero_cashflow(self):
        assert pathwise_value(SamplePath("x", 0, [(1.0, 0, 1)]), CashFlow1D(2, 3.0)) == 0.0

    def test_death_benefit(self):
        assert pathwise_value(SamplePath("x", 0, [(1.5, 0, 1)]), DEATH) == 1.0
        assert pathwise_value(SamplePath("x", 0, [(2.5, 0, 1)]), DEATH) == 0.0

    def test_unit_annuity(self):
        cf = CashFlow1D(2, 3.0, sojourn={0: [(1.0, 1.0), (2.0, 1.0), (3.0, 1.0)]})
        assert pathwise_value(SamplePath("x", 0), cf) == 3.0

    def test_censored_rejected(self):
        with pytest.raises(ValueError, match="censored"):
            pathwise_value(SamplePath("x", 0, (), 1.0), DEATH)

    def test_continuous_piece(self):
        cf = CashFlow1D(2, 4.0, continuous=[(0, 1.0, 3.0, 2.0)])
        assert pathwise_value(SamplePath("x", 0, [(2.5, 0, 1)]), cf) == pytest.approx(3.0)
        assert pathwise_value(SamplePath("x", 0, [(2.5, 0, 1)]), cf, s=2.0) == pytest.approx(1.0)


class TestExpectedValue:
    def test_zero(self):
        fit = fit_landmark(two_state_cohort(), "alive")
        assert expected_value_1d(CashFlow1D(2, 2.0), fit.probabilities, fit.rates) == 0.0
        rep = CashFlow2D(2, 2.0)
        assert expected_value_2d(rep, fit.probabilities, fit.probabilities2d, fit.rates, fit.rates2d, fit.initial) == 0.0

    def test_death_benefit(self):
        r = plug_in_pipeline(two_state_cohort(), DEATH)["alive"]
        assert abs(r.value - 0.75) <= 1e-10
        assert abs(r.second_moment - 0.75) <= 1e-10

    def test_annuity(self):
        r = plug_in_pipeline(two_state_cohort(), ANNUITY)["alive"]
        assert abs(r.value - 0.75) <= 1e-10
        assert abs(r.second_moment - 1.25) <= 1e-10

    def test_payments_beyond_estimation_horizon(self):
        cohort = CensoredCohort(two_state_cohort().paths, two_state_cohort().states, 0.0, 1.0, weights=two_state_cohort().weights)
        fit = fit_landmark(cohort, "alive")
        with pytest.raises(ValueError, match="horizon"):
            expected_value_1d(ANNUITY, fit.probabilities, fit.rates)

    def test_censoring_does_not_bias_oracle(self):
        r = plug_in_pipeline(two_state_cohort(CensoringLaw.uniform([1.0, 2.0, np.inf])), ANNUITY)["alive"]
        assert abs(r.value - 0.75) <= 1e-10 and abs(r.second_moment - 1.25) <= 1e-10

    @pytest.mark.parametrize("s", [0.0, 1.0])
    def test_discounted_illness_death_oracle(self, s):
        model = illness_death(4, p_die_ill=(0.1, 0.3, 0.5), p_recover=0.2)
        law = exact_law(model, s=s).with_landmarks()
        times = [t for t in (2.0, 3.0) if t > s]
        lawc = law.with_censoring(CensoringLaw((*times, np.inf), (*[0.2] * len(times), 1 - 0.2 * len(times))))
        paths, w = lawc.weighted_cohort()
        cohort = CensoredCohort(paths, model.states, s, 4.0, weights=w)
        kappa = DiscountFunction.from_rate(0.05, np.arange(0.0, 5.0, 0.5))
        cf = illness_cashflow()
        report = plug_in_pipeline(cohort, cf, kappa)
        for z, r in report.items():
            if r.fit.rates2d is None:
                continue
            V, V2 = enumerated_moments(law, z, cf, kappa, s)
            assert abs(r.value - V) <= 1e-10
            assert abs(r.second_moment - V2) <= 1e-10


class TestSecondMoment:
    def setup_method(self):
        self.cohort = two_state_cohort()
        self.fit = fit_landmark(self.cohort, "alive")

    def value2(self, rep):
        f = self.fit
        return expected_value_2d(rep, f.probabilities, f.probabilities2d, f.rates, f.rates2d, f.initial)

    def test_zero_representation(self):
        rep = second_moment_representation(CashFlow1D(2, 2.0))
        assert not rep.sojourn2 and not rep.mixed and not rep.transition
        assert self.value2(rep) == 0.0

    def test_death_benefit_structure(self):
        rep = second_moment_representation(DEATH.scaled(3.0))
        assert not rep.sojourn2 and not rep.sojourn1 and not rep.mixed
        assert list(rep.transition) == [(0, 1, 0, 1)]
        assert rep.transition[(0, 1, 0, 1)](1.0, 2.0) == 9.0

    @pytest.mark.parametrize("c", [1.0, 2.5, -0.5])
    def test_two_point_payoff(self, c):
        cf = DEATH.scaled(c)
        V = plug_in_pipeline(self.cohort, cf)["alive"]
        assert abs(V.second_moment - c * V.value) <= 1e-10

    @pytest.mark.parametrize("lam", [0.5, 2.0, -3.0])
    def test_scaling(self, lam):
        for cf in (DEATH, ANNUITY):
            base = plug_in_pipeline(self.cohort, cf)["alive"]
            scaled = plug_in_pipeline(self.cohort, cf.scaled(lam))["alive"]
            assert abs(scaled.value - lam * base.value) <= 1e-12
            assert abs(scaled.second_moment - lam**2 * base.second_moment) <= 1e-12

    def test_variance_nonnegative(self):
        for cf in (DEATH, ANNUITY, DEATH.scaled(-2.0)):
            assert plug_in_pipeline(self.cohort, cf)["alive"].variance >= -1e-10

    def test_swap_symmetry(self):
        model = illness_death(4, p_die_ill=(0.1, 0.3), p_recover=0.2)
        law = exact_law(model).with_landmarks()
        paths, w = law.weighted_cohort()
        fit = fit_landmark(CensoredCohort(paths, model.states, 0.0, 4.0, weights=w), "healthy")
        kappa = DiscountFunction.from_rate(0.03, [0.0, 1.0, 2.0, 3.0])
        rep = second_moment_representation(illness_cashflow(), kappa, 0.0, fit.rates.grid)
        args = (fit.probabilities, fit.probabilities2d, fit.rates, fit.rates2d, fit.initial)
        assert abs(expected_value_2d(rep, *args) - expected_value_2d(rep.swapped(), *args)) <= 1e-10

    def test_monte_carlo_oracle(self):
        model = illness_death(4, p_die_ill=(0.1, 0.3), p_recover=0.2)
        law = exact_law(model).with_landmarks()
        kappa = DiscountFunction.from_rate(0.03, [0.0, 1.0, 2.0, 3.0])
        cf = illness_cashflow()
        paths, w = law.weighted_cohort()
        r = plug_in_pipeline(CensoredCohort(paths, model.states, 0.0, 4.0, weights=w), cf, kappa)["healthy"]
        y = np.array([pathwise_value(p, cf, kappa) for p in law.paths])
        draws = np.random.default_rng(0).choice(y.size, size=100_000, p=law.probs)
        mc = np.mean(y[draws] ** 2)
        assert abs(r.second_moment - mc) / mc < 5e-3


class TestPipeline:
    def test_empty_class(self):
        r = plug_in_pipeline(two_state_cohort(), DEATH, landmarks=["nobody"])["nobody"]
        assert r.value == 0.0 and r.n_members == 0 and r.diagnostics.messages

    def test_monte_carlo_death_benefit(self):
        model = two_state_absorbing(0.5, 2)
        paths = landmark_as_if_markov(simulate(model, 10_000, 1), 0.0, model.states)
        r = plug_in_pipeline(CensoredCohort(paths, model.states, 0.0, 2.0), DEATH)["alive"]
        assert abs(r.value - 0.75) < 0.02

    def test_error_shrinks_with_n(self):
        model = two_state_absorbing(0.3, 3)
        cf = CashFlow1D(2, 3.0, transition={(0, 1): payment_function(base=1.0)})
        truth = 1 - 0.7**3
        wins = 0
        for seed in range(10):
            errs = []
            for n in (100, 10_000):
                paths = landmark_as_if_markov(simulate(model, n, 1000 * seed + n), 0.0, model.states)
                r = plug_in_pipeline(CensoredCohort(paths, model.states, 0.0, 3.0), cf, second_moment=False)["alive"]
                errs.append(abs(r.value - truth))
            wins += errs[1] < errs[0]
        assert wins >= 8

    def test_threads_do_not_change_results(self):
        model = illness_death(4, p_recover=0.2)
        paths = landmark_as_if_markov(simulate(model, 500, 2), 1.0, model.states)
        cohort = CensoredCohort(paths, model.states, 1.0, 4.0)
        a = plug_in_pipeline(cohort, illness_cashflow(), threads=1)
        b = plug_in_pipeline(cohort, illness_cashflow(), threads=3)
        assert {z: (r.value, r.second_moment) for z, r in a.items()} == {z: (r.value, r.second_moment) for z, r in b.items()}
