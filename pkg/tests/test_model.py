import math

import pytest
from hypothesis import given, settings, strategies as st

from moma.errors import InvalidModel, NotMarkovian, ZenoModel
from moma.model import (
    MARKOVIAN,
    Distribution,
    RewardFunction,
    build_ma,
    classify,
    detect_zeno,
    exit_rate,
    normalize,
    require_analysable,
    validate,
)

from fixtures import branching_chain, delayed_choice


class TestDistribution:
    def test_of_merges_repeated_targets_and_sorts(self):
        d = Distribution.of([(3, 0.25), (1, 0.5), (3, 0.25)])
        assert d.entries == ((1, 0.5), (3, 0.5))
        assert d.total() == 1.0

    def test_dirac(self):
        d = Distribution.dirac(4)
        assert d.is_dirac()
        assert d.prob(4) == 1.0 and d.prob(0) == 0.0


class TestValidate:
    def test_fixtures_are_clean(self):
        for ma in (delayed_choice(), branching_chain()):
            report = validate(ma)
            assert report.ok and not report.warnings

    def test_every_error_is_collected(self):
        ma = build_ma(
            3, 0,
            actions={0: [("a", {1: 0.5, 2: 0.4})], 1: [("b", {5: 1.0})]},
            rates={2: (-1.0, {0: 1.0})},
        )
        codes = sorted(i.code for i in validate(ma).errors)
        assert codes == ["NonPositiveRate", "NonStochasticRow", "NonStochasticRow"]

    def test_reserved_action_name_is_rejected(self):
        ma = build_ma(1, 0, actions={0: [(MARKOVIAN, {0: 1.0})]})
        assert [i.code for i in validate(ma).errors] == ["DuplicateActionRow"]

    def test_negative_reward(self):
        ma = build_ma(1, 0, rates={0: (1.0, {0: 1.0})}, rewards=[RewardFunction("r", {0: -1.0})])
        assert [i.code for i in validate(ma).errors] == ["NegativeReward"]

    def test_state_reward_on_probabilistic_state_warns(self):
        ma = build_ma(2, 0, actions={0: [("a", {1: 1.0})]}, rates={1: (1.0, {1: 1.0})},
                      rewards=[RewardFunction("r", {0: 1.0})])
        report = validate(ma)
        assert report.ok
        assert [i.code for i in report.warnings] == ["StateRewardOnProbabilisticState"]


class TestNormalize:
    def test_maximal_progress_drops_rate(self):
        ma = build_ma(2, 0, actions={0: [("a", {1: 1.0})]}, rates={0: (3.0, {1: 1.0}), 1: (1.0, {1: 1.0})})
        norm, report = normalize(ma)
        assert norm.markovian[0] is None
        assert [i.code for i in report.normalizations_applied] == ["MarkovianDropped"]

    def test_terminal_state_gets_self_loop(self):
        ma = build_ma(2, 0, rates={0: (1.0, {1: 1.0})})
        norm, report = normalize(ma)
        assert norm.markovian[1].rate == 1.0
        assert norm.markovian[1].distribution.entries == ((1, 1.0),)
        assert [i.code for i in report.warnings] == ["TerminalState"]

    def test_clean_model_is_returned_unchanged(self):
        ma = delayed_choice()
        norm, report = normalize(ma)
        assert norm is ma and report.is_empty()

    def test_invalid_model_raises_with_report(self):
        ma = build_ma(1, 0, actions={0: [("a", {0: 0.3})]})
        with pytest.raises(InvalidModel) as info:
            normalize(ma)
        assert info.value.report.errors[0].code == "NonStochasticRow"


def test_classify_and_exit_rate():
    ma = branching_chain()
    ps, ms = classify(ma)
    assert ps == {3, 4}
    assert ms == {0, 1, 2, 5, 6}
    assert exit_rate(ma, 5) == 5.0
    assert ma.lambda_max() == 5.0
    with pytest.raises(NotMarkovian):
        exit_rate(ma, 3)


class TestZeno:
    def test_probabilistic_cycle_is_zeno(self):
        ma = build_ma(3, 0, actions={0: [("a", {1: 1.0})], 1: [("b", {0: 1.0}), ("c", {2: 1.0})]},
                      rates={2: (1.0, {2: 1.0})})
        assert detect_zeno(ma) == {0, 1}
        with pytest.raises(ZenoModel):
            require_analysable(ma)

    def test_cycle_through_markovian_state_is_fine(self):
        ma = build_ma(2, 0, actions={0: [("a", {1: 1.0})]}, rates={1: (1.0, {0: 1.0})})
        assert detect_zeno(ma) == frozenset()

    def test_fixtures_are_not_zeno(self):
        assert detect_zeno(branching_chain()) == frozenset()
        assert require_analysable(delayed_choice()).num_states == 5


@st.composite
def small_ma(draw):
    n = draw(st.integers(1, 5))
    actions, rates = {}, {}
    for s in range(n):
        kind = draw(st.sampled_from(["ps", "ms", "none"]))
        target = draw(st.integers(0, n - 1))
        if kind == "ps":
            actions[s] = [("a", {target: 1.0})]
        elif kind == "ms":
            rates[s] = (draw(st.floats(0.1, 10.0)), {target: 1.0})
    return build_ma(n, 0, actions=actions, rates=rates)


@settings(max_examples=60, deadline=None)
@given(small_ma())
def test_normalized_states_are_exactly_one_kind(ma):
    norm, _ = normalize(ma)
    ps, ms = classify(norm)
    assert ps | ms == set(range(norm.num_states))
    assert not ps & ms
    for s in ms:
        assert math.isfinite(exit_rate(norm, s))
