import numpy as np
import pytest

from landmark_ms.model_core import StateSpace
from landmark_ms.simulate import (
    CensoringLaw,
    ContinuousMarkovModel,
    DiscreteMarkovModel,
    SemiMarkovModel,
    apply_censoring,
    exact_law,
    illness_death,
    landmark_as_if_markov,
    landmark_with,
    simulate,
    simulate_continuous_markov,
    simulate_markov,
    simulate_semi_markov,
    two_state_absorbing,
)

AD = StateSpace(("alive", "dead"))


def test_identity_matrices_give_constant_paths():
    model = DiscreteMarkovModel(AD, np.repeat(np.eye(2)[None], 4, axis=0))
    assert all(not p.jumps for p in simulate_markov(model, 50, 1))


def test_one_step_death_fraction():
    paths = simulate_markov(two_state_absorbing(0.5, 1), 10_000, 3)
    frac = np.mean([p.state_at(1.0) == 1 for p in paths])
    assert abs(frac - 0.5) < 0.02


def test_same_seed_same_cohort():
    model = illness_death(5, p_die_ill=(0.1, 0.3))
    assert simulate(model, 200, 9) == simulate(model, 200, 9)
    assert simulate(model, 200, 9) != simulate(model, 200, 10)


def test_paths_do_not_depend_on_cohort_size():
    model = illness_death(5)
    assert simulate(model, 30, 4)[:10] == simulate(model, 10, 4)


def test_invalid_models_rejected():
    with pytest.raises(ValueError, match="does not sum to 1"):
        DiscreteMarkovModel(AD, np.array([[[0.5, 0.4], [0, 1]]]))
    with pytest.raises(ValueError):
        SemiMarkovModel(StateSpace(("a", "b", "c")), np.array([[[0], [0.7], [0.6]], [[0], [0], [0]], [[0], [0], [0]]]), 3)
    with pytest.raises(ValueError):
        ContinuousMarkovModel(AD, np.array([[-1.0, 0.5], [0.0, 0.0]]), 2.0)
    with pytest.raises(ValueError):
        simulate_markov(two_state_absorbing(0.5, 2), 0, 0)


def test_duration_independent_semi_markov_matches_markov():
    n = 10_000
    h = np.zeros((3, 3, 1))
    h[0, 1], h[0, 2], h[1, 0], h[1, 2] = 0.2, 0.1, 0.3, 0.2
    S = StateSpace(("h", "i", "d"))
    semi = SemiMarkovModel(S, h, 3)
    m = h[..., 0].copy()
    m[np.arange(3), np.arange(3)] = 1 - m.sum(axis=1)
    markov = DiscreteMarkovModel(S, np.repeat(m[None], 3, axis=0))
    # chi-square on the (state at 1, state at 2) table; 8 dof, 0.999 quantile is 26.1
    def table(paths):
        c = np.zeros((3, 3))
        for p in paths:
            c[p.state_at(1.0), p.state_at(2.0)] += 1
        return c
    a, b = table(simulate_semi_markov(semi, n, 1)), table(simulate_markov(markov, n, 2))
    tot = a + b
    keep = tot > 0
    a, b, exp = a[keep], b[keep], tot[keep] / 2
    chi2 = (((a - exp) ** 2 + (b - exp) ** 2) / exp).sum()
    assert chi2 < 26.1


def test_minimum_sojourn_respected():
    h = np.zeros((2, 2, 3))
    h[0, 1] = [0.0, 0.0, 0.9]
    paths = simulate_semi_markov(SemiMarkovModel(AD, h, 6), 500, 5)
    assert min(p.jumps[0][0] for p in paths if p.jumps) >= 3.0
    assert any(p.jumps for p in paths)


def test_duration_raised_mortality_kills_more():
    flat = illness_death(5, p_die_ill=(0.1,))
    rising = illness_death(5, p_die_ill=(0.1, 0.4, 0.7))
    dead = lambda m: np.mean([p.state_at(5.0) == 2 for p in simulate(m, 5000, 11)])
    assert dead(rising) > dead(flat)


def test_continuous_markov_exponential_sojourn():
    model = ContinuousMarkovModel(AD, np.array([[-2.0, 2.0], [0.0, 0.0]]), np.inf)
    times = [p.jumps[0][0] for p in simulate_continuous_markov(model, 5000, 0)]
    assert abs(np.mean(times) - 0.5) < 0.03


class TestCensoring:
    def test_no_censoring_is_identity(self):
        paths = simulate(illness_death(3), 100, 0)
        out = apply_censoring(paths, CensoringLaw.none(), 1)
        assert [p.censor_time for p in out] == [np.inf] * 100
        assert [p.jumps for p in out] == [p.jumps for p in paths]

    def test_short_censoring_hides_jumps(self):
        paths = apply_censoring(simulate(illness_death(4), 200, 0), CensoringLaw((1.5,), (1.0,)), 1, s=1.0)
        assert all(not p.observed_jumps(1.0) for p in paths)

    def test_mass_before_s_rejected(self):
        with pytest.raises(ValueError):
            apply_censoring([], CensoringLaw((1.0, np.inf), (0.5, 0.5)), 0, s=1.0)

    def test_uniform_frequencies(self):
        law = CensoringLaw.uniform([1, 2, 3, np.inf])
        out = apply_censoring(simulate(two_state_absorbing(0.5, 3), 10_000, 0), law, 7)
        for t in law.times:
            assert abs(np.mean([p.censor_time == t for p in out]) - 0.25) < 0.02

    def test_censoring_independent_of_path(self):
        n = 10_000
        law = CensoringLaw.uniform([1, 2, 3, 4, np.inf])
        out = apply_censoring(simulate(illness_death(5), n, 2), law, 2)
        r = np.array([min(p.censor_time, 9.0) for p in out])
        jumps = np.array([len(p.jumps) for p in out], dtype=float)
        assert abs(np.corrcoef(r, jumps)[0, 1]) < 3 / np.sqrt(n)

    def test_landmark_unaffected(self):
        paths = landmark_as_if_markov(simulate(illness_death(4), 100, 0), 1.0, illness_death(4).states)
        out = apply_censoring(paths, CensoringLaw.uniform([2, np.inf]), 3, s=1.0)
        assert [p.landmark for p in out] == [p.landmark for p in paths]


class TestLandmarks:
    def test_single_class(self):
        paths = landmark_as_if_markov(simulate(illness_death(3), 50, 0), 0.0, illness_death(3).states)
        assert {p.landmark for p in paths} == {"healthy"}

    def test_split_classes(self):
        paths = simulate(illness_death(4), 400, 0)
        marked = landmark_as_if_markov(paths, 2.0, illness_death(4).states)
        for label, i in [("healthy", 0), ("ill", 1), ("dead", 2)]:
            assert sum(p.landmark == label for p in marked) == sum(p.state_at(2.0) == i for p in paths)

    def test_enriched_landmark_refines(self):
        paths = simulate(illness_death(4, p_recover=0.3), 2000, 0)
        coarse = landmark_as_if_markov(paths, 2.0)
        fine = landmark_with(paths, lambda p: (p.state_at(2.0), any(t <= 2.0 and a == 0 and b == 1 for t, a, b in p.jumps)))
        groups = {}
        for c, f in zip(coarse, fine):
            groups.setdefault(f.landmark, set()).add(c.landmark)
        assert all(len(v) == 1 for v in groups.values())
        assert len(groups) > len({p.landmark for p in coarse})


class TestExactLaw:
    def test_two_state_enumeration(self):
        law = exact_law(two_state_absorbing(0.5, 2))
        got = sorted((tuple(p.jumps), q) for p, q in zip(law.paths, law.probs))
        assert got == sorted([((), 0.25), (((2.0, 0, 1),), 0.25), (((1.0, 0, 1),), 0.5)])

    def test_probabilities_sum_to_one(self):
        law = exact_law(illness_death(5, p_die_ill=(0.1, 0.3, 0.5)))
        assert abs(law.probs.sum() - 1.0) < 1e-12

    def test_marginal(self):
        law = exact_law(two_state_absorbing(0.5, 2))
        assert law.probability(lambda p: p.state_at(1.0) == 1) == 0.5

    def test_guard(self):
        with pytest.raises(ValueError, match="limit"):
            exact_law(illness_death(14))

    def test_matches_monte_carlo(self):
        model = illness_death(4, p_die_ill=(0.1, 0.3))
        law = exact_law(model)
        paths = simulate(model, 10_000, 5)
        for j in range(3):
            p = law.probability(lambda q: q.state_at(4.0) == j)
            freq = np.mean([q.state_at(4.0) == j for q in paths])
            assert abs(freq - p) < 4 * np.sqrt(p * (1 - p) / 10_000) + 1e-12

    def test_weighted_cohort_includes_censoring(self):
        law = exact_law(two_state_absorbing(0.5, 2)).with_censoring(CensoringLaw.uniform([1.0, np.inf]))
        paths, w = law.weighted_cohort()
        assert len(paths) == 6 and abs(w.sum() - 1) < 1e-15
        assert sorted({p.censor_time for p in paths}) == [1.0, np.inf]
