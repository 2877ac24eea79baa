import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from landmark_ms.model_core import (
    SamplePath,
    StateSpace,
    StepFunction1D,
    StepSurface2D,
    bivariate_product,
    counting_process,
    diagonal_counting,
    indicator_process,
    verify_indicator_identity,
)


def steps(f):
    """(time, value) pairs at the jumps of a step function."""
    return [(float(t), float(v)) for t, v in zip(f.grid, f.values)]


@st.composite
def paths(draw, n_states=3, max_jumps=6):
    state = draw(st.integers(0, n_states - 1))
    start = state
    gaps = draw(st.lists(st.floats(0.05, 2.0), max_size=max_jumps))
    t, jumps = 0.0, []
    for g in gaps:
        t += g
        nxt = draw(st.integers(0, n_states - 2))
        nxt = nxt if nxt < state else nxt + 1
        jumps.append((t, state, nxt))
        state = nxt
    R = draw(st.one_of(st.just(np.inf), st.floats(0.1, 12.0)))
    return SamplePath("p", start, jumps, R)


def test_state_space_indexing():
    S = StateSpace(["a", "b", "c"])
    assert S.index("b") == 1 and S.label(2) == "c"
    assert S.pair_index(2, 1) == 5
    assert S.pairs()[5] == (2, 1)
    with pytest.raises(ValueError):
        S.index("zzz")


def test_path_rejects_bad_jumps():
    with pytest.raises(ValueError, match="leaves state"):
        SamplePath("x", 0, [(1.0, 0, 1), (2.0, 0, 2)])
    with pytest.raises(ValueError, match="strictly increasing"):
        SamplePath("x", 0, [(1.0, 0, 1), (1.0, 1, 2)])
    with pytest.raises(ValueError, match="self-transition"):
        SamplePath("x", 0, [(1.0, 0, 0)])


def test_state_at_is_cadlag():
    p = SamplePath("x", 0, [(1.0, 0, 1)])
    assert p.state_at(0.99) == 0 and p.state_at(1.0) == 1
    assert p.state_before(1.0) == 0
    assert list(p.state_at(np.array([0.0, 1.0, 5.0]))) == [0, 1, 1]


class TestCountingProcess:
    def test_no_jumps(self):
        f = counting_process(SamplePath("x", 0), 0, 1, 3.0)
        assert f.sup_norm() == 0.0

    def test_single_jump(self):
        f = counting_process(SamplePath("x", 0, [(1.5, 0, 1)]), 0, 1, 3.0)
        assert steps(f) == [(1.5, 1.0)]
        assert f(1.49) == 0.0 and f(1.5) == 1.0

    def test_repeated_jumps(self):
        p = SamplePath("x", 0, [(1, 0, 1), (2, 1, 0), (3, 0, 1)])
        assert steps(counting_process(p, 0, 1, 3.0)) == [(1.0, 1.0), (3.0, 2.0)]

    def test_diagonal_rejected(self):
        with pytest.raises(ValueError):
            counting_process(SamplePath("x", 0), 0, 0, 1.0)


class TestDiagonalCounting:
    def test_no_jumps_after_s(self):
        p = SamplePath("x", 0, [(0.5, 0, 1)])
        assert diagonal_counting(p, 0, 1.0, 3.0).sup_norm() == 0.0

    def test_single_departure(self):
        p = SamplePath("x", 0, [(1.0, 0, 1)])
        assert steps(diagonal_counting(p, 0, 0.0, 3.0)) == [(1.0, -1.0)]

    def test_only_departures_count(self):
        p = SamplePath("x", 0, [(1, 0, 1), (2, 1, 2)])
        assert steps(diagonal_counting(p, 1, 0.0, 3.0)) == [(2.0, -1.0)]


class TestIndicator:
    def test_constant_path(self):
        p = SamplePath("x", 0)
        assert indicator_process(p, 0, 3.0)(np.array([0, 1, 3])).tolist() == [1, 1, 1]
        assert indicator_process(p, 1, 3.0).sup_norm() == 0.0

    def test_jump_convention(self):
        ind = indicator_process(SamplePath("x", 0, [(1.0, 0, 1)]), 1, 3.0)
        assert ind(0.999) == 0.0 and ind(1.0) == 1.0 and ind(3.0) == 1.0


class TestIndicatorIdentity:
    def test_no_jumps(self):
        assert verify_indicator_identity(SamplePath("x", 2), 0.0, 5.0, 3) == 0.0

    def test_single_jump(self):
        assert verify_indicator_identity(SamplePath("x", 0, [(1.0, 0, 1)]), 0.0, 3.0, 2) == 0.0

    @settings(max_examples=200, deadline=None)
    @given(paths(), st.floats(0.0, 5.0))
    def test_random_paths(self, p, s):
        assert verify_indicator_identity(p, s, s + 10.0, 3) == 0.0

    @settings(max_examples=100, deadline=None)
    @given(paths(), st.floats(0.0, 10.0))
    def test_indicators_partition_unity(self, p, t):
        assert sum(indicator_process(p, i, 20.0)(t) for i in range(3)) == 1.0


class TestBivariateProduct:
    def test_no_jumps(self):
        assert bivariate_product(SamplePath("x", 0), ((0, 1), (1, 0)), 2.0, 3.0) == 0.0

    @pytest.mark.parametrize("d", [0.5, 1.0, 2.5, 4.0])
    def test_absorbing_indicator_of_min(self, d):
        p = SamplePath("x", 0, [(d, 0, 1)])
        for t1, t2 in [(1.0, 3.0), (3.0, 1.0), (3.0, 3.0)]:
            assert bivariate_product(p, ((0, 1), (0, 1)), t1, t2) == float(d <= min(t1, t2))

    def test_diagonal_expansion(self):
        p = SamplePath("x", 0, [(1.0, 0, 1)])
        assert bivariate_product(p, ((0, 0), (0, 1)), 2.0, 2.0, s=0.0) == -1.0

    @settings(max_examples=100, deadline=None)
    @given(paths(), st.floats(0.1, 10.0), st.floats(0.1, 10.0))
    def test_censoring_inactive_beyond_horizon(self, p, t1, t2):
        p = p.with_censoring(max(t1, t2) + 1.0)
        pair = ((0, 1), (1, 2))
        assert bivariate_product(p, pair, t1, t2, censor=True) == bivariate_product(p, pair, t1, t2)


class TestStepObjects:
    def test_step_function_evaluation(self):
        f = StepFunction1D.from_jumps(0.0, [1.0, 2.0], [0.5, -0.25], base=1.0)
        assert f(np.array([0.0, 1.0, 1.5, 2.0])).tolist() == [1.0, 1.5, 1.5, 1.25]
        assert f.left_limit(1.0) == 1.0 and f.left_limit(2.0) == 1.5
        assert f.increments().tolist() == [0.5, -0.25]

    def test_surface_rectangle_increment(self):
        rng = np.random.default_rng(1)
        vals = rng.normal(size=(3, 4))
        f = StepSurface2D(0.0, np.array([1.0, 2.0]), np.array([1.0, 2.0, 3.0]), vals)
        inc = f.increment(1.0, 2.0, 0.0, 3.0)
        assert inc == pytest.approx(vals[2, 3] - vals[2, 0] - vals[1, 3] + vals[1, 0], abs=1e-15)
        assert f.left_limit(2.0, 3.0) == vals[1, 2]
        assert f.rectangle_increments().sum() == pytest.approx(vals[2, 3] - vals[2, 0] - vals[0, 3] + vals[0, 0])
