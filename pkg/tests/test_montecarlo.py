import math

import pytest
from hypothesis import given, settings, strategies as st

from moma.errors import UnsupportedSchedulerShape
from moma.model import MARKOVIAN, RewardFunction, build_ma
from moma.montecarlo import (
    DIGITAL,
    ELAPSED,
    LAST_SOJOURN,
    DsBoundedReachEvent,
    PathSample,
    RewardEvent,
    Rule,
    ThresholdScheduler,
    TimedReachEvent,
    UntimedReachEvent,
    abstraction_weight,
    conditional_weight,
    digitization_steps,
    digitize_path,
    ds_bounded_probability,
    estimate,
    markov_chain_value,
    path_reward,
    sample_paths,
    simulate,
    threshold_rule,
)
from moma.transform import StepInterval, TimeInterval, underlying_mdp

from fixtures import ALPHA, BETA, ETA, branching_chain, delayed_choice

# alpha at s1 iff the sojourn in s0 was at most ln 2
HALF = threshold_rule(1, "<=", math.log(2), ALPHA, BETA)
# alpha at s3 iff the sojourn in s0 was at most one
AT_MOST_ONE = threshold_rule(3, "<=", 1.0, ALPHA, BETA)
N = 20_000


class TestSchedulers:
    def test_first_matching_rule_wins(self):
        sched = ThresholdScheduler((Rule(1, LAST_SOJOURN, "<", 1, ALPHA), Rule(1, LAST_SOJOURN, "<", 2, BETA)))
        ma = delayed_choice()
        assert sched.choose(ma, 1, 0.5, 0.5) == ALPHA
        assert sched.choose(ma, 1, 1.5, 1.5) == BETA
        assert sched.choose(ma, 1, 3.0, 3.0) == ALPHA  # first enabled action

    def test_elapsed_predicate(self):
        rule = Rule(1, ELAPSED, ">=", 2.0, BETA)
        assert rule.holds(0.1, 2.0) and not rule.holds(5.0, 1.0)

    def test_bad_rules(self):
        with pytest.raises(ValueError):
            Rule(1, "wallclock", "<", 1, ALPHA)
        with pytest.raises(ValueError):
            Rule(1, LAST_SOJOURN, "==", 1, ALPHA)


class TestPaths:
    def test_probabilistic_steps_take_no_time(self):
        for path in sample_paths(branching_chain(), AT_MOST_ONE, {6, 1, 2}, 200, seed=3):
            for s, t, a in path.steps:
                if a is not None and a != MARKOVIAN:
                    assert t == 0.0
                elif a == MARKOVIAN:
                    assert t > 0.0

    def test_initial_goal_stops_at_once(self):
        path = simulate(delayed_choice(), HALF, goal={0}, seed=1)
        assert path.terminated_by == "goal" and path.total_time == 0.0 and path.length == 0

    def test_horizon(self):
        path = simulate(delayed_choice(), threshold_rule(1, "<", 0, ALPHA, BETA), time_horizon=0.5, seed=2)
        assert path.terminated_by in ("horizon", "absorbed")

    def test_reproducible(self):
        a = simulate(branching_chain(), AT_MOST_ONE, goal={6, 1, 2}, seed=9, index=4)
        b = simulate(branching_chain(), AT_MOST_ONE, goal={6, 1, 2}, seed=9, index=4)
        assert a == b

    def test_time_abstract(self):
        path = PathSample(((0, 1.1, MARKOVIAN), (3, 0.0, BETA), (4, 0.0, None)), "goal")
        assert path.time_abstract() == (0, MARKOVIAN, 3, BETA, 4)


class TestDigitizePath:
    def test_sojourns_become_self_loops(self):
        path = PathSample(((0, 1.1, MARKOVIAN), (3, 0.0, BETA), (4, 0.0, ETA), (5, 0.3, MARKOVIAN), (4, 0.0, None)),
                          "goal")
        bot = MARKOVIAN
        expected = (0, bot, 0, bot, 0, bot, 3, BETA, 4, ETA, 5, bot, 4)
        assert digitize_path(path, 0.4) == expected
        assert digitization_steps(expected) == 4

    def test_exact_multiple_counts_the_boundary(self):
        path = PathSample(((0, 0.8, MARKOVIAN), (1, 0.0, None)), "goal")
        assert digitize_path(path, 0.4) == (0, MARKOVIAN, 0, MARKOVIAN, 0, MARKOVIAN, 1)

    def test_elapsed_time_is_covered(self):
        delta = 0.3
        for path in sample_paths(branching_chain(), AT_MOST_ONE, {6, 1, 2}, 2_000, seed=5):
            assert path.total_time <= digitization_steps(digitize_path(path, delta)) * delta + 1e-12

    def test_bad_delta(self):
        with pytest.raises(ValueError):
            digitize_path(PathSample(((0, 0.0, None),), "goal"), 0.0)


class TestEstimate:
    def test_ln2_threshold_splits_evenly(self):
        ma = delayed_choice()
        for goal in ({2}, {4}):
            est = estimate(ma, HALF, UntimedReachEvent(frozenset(goal)), n=N, seed=1)
            assert est.contains(0.5)

    def test_timed_reach_under_beta(self):
        est = estimate(delayed_choice(), threshold_rule(1, "<", 0, ALPHA, BETA),
                       TimedReachEvent(frozenset({4}), TimeInterval(0, 2)), n=N, seed=2)
        assert est.contains(1 - 3 * math.exp(-2))

    def test_quick_sojourn_scheduler(self):
        est = estimate(branching_chain(), AT_MOST_ONE, UntimedReachEvent(frozenset({6})), n=N, seed=3)
        assert est.contains(1 - math.exp(-1))

    def test_partition_sums_to_one(self):
        ma = branching_chain()
        total = sum(estimate(ma, AT_MOST_ONE, UntimedReachEvent(frozenset(g)), n=N, seed=4).mean
                    for g in ({6}, {1}, {2}))
        assert total == pytest.approx(1.0, abs=0.03)

    def test_zero_reward(self):
        ma = build_ma(2, 0, rates={0: (1.0, {1: 1.0}), 1: (1.0, {1: 1.0})},
                      rewards=[RewardFunction("r", {})])
        est = estimate(ma, ThresholdScheduler(), RewardEvent(frozenset({1}), 0), n=1000)
        assert est.mean == 0.0 and est.half_width == 0.0

    def test_seed_and_workers(self):
        ma, ev = branching_chain(), UntimedReachEvent(frozenset({6}))
        one = estimate(ma, AT_MOST_ONE, ev, n=3_000, seed=7)
        assert one == estimate(ma, AT_MOST_ONE, ev, n=3_000, seed=7)
        assert one == estimate(ma, AT_MOST_ONE, ev, n=3_000, seed=7, workers=2)
        assert one != estimate(ma, AT_MOST_ONE, ev, n=3_000, seed=8)

    def test_interval_shape(self):
        est = estimate(delayed_choice(), HALF, UntimedReachEvent(frozenset({2})), n=1000, confidence=0.95)
        assert est.low < est.mean < est.high and est.samples == 1000
        assert est.half_width == pytest.approx(1.959964 * math.sqrt(est.mean * (1 - est.mean) * 1000 / 999 / 1000),
                                               rel=1e-5)

    def test_minimum_samples(self):
        with pytest.raises(ValueError):
            estimate(delayed_choice(), HALF, UntimedReachEvent(frozenset({2})), n=999)

    def test_bad_confidence(self):
        with pytest.raises(ValueError):
            estimate(delayed_choice(), HALF, UntimedReachEvent(frozenset({2})), n=1000, confidence=1.0)


class TestRewards:
    def model(self):
        ma = branching_chain()
        rewards = (RewardFunction("r", {0: 1.0}),)
        return build_ma(7, 0, actions={s: list(row) for s, row in enumerate(ma.actions) if row},
                        rates={s: (m.rate, dict(m.distribution)) for s, m in enumerate(ma.markovian) if m},
                        labels={s: [f"s{s}"] for s in range(7)}, rewards=rewards)

    def test_path_reward_counts_time_in_s0(self):
        path = PathSample(((0, 0.7, MARKOVIAN), (3, 0.0, ALPHA), (6, 0.0, None)), "goal")
        ma = self.model()
        assert path_reward(ma, path, 0, {6, 4}) == pytest.approx(0.7)
        assert path_reward(ma, path, None, {3}) == pytest.approx(0.7)

    def test_branches_add_up_to_one(self):
        ma = self.model()
        est = estimate(ma, AT_MOST_ONE, RewardEvent(frozenset({6, 4}), 0), n=N, seed=6)
        assert est.contains(1.0)
        alpha = sum(path_reward(ma, p, 0, {6, 4}) for p in sample_paths(ma, AT_MOST_ONE, {6}, N, seed=6)
                    if p.states()[-1] == 6) / N
        assert alpha == pytest.approx(1 - 2 * math.exp(-1), abs=0.02)

    def test_markov_chain_value(self):
        mdp = underlying_mdp(self.model())
        weight = 1 - math.exp(-1)
        policy = {3: {ALPHA: weight, BETA: 1 - weight}}
        assert markov_chain_value(mdp, policy, {6, 4}, reward=0) == pytest.approx(1.0, abs=1e-12)
        assert markov_chain_value(mdp, policy, {6}) == pytest.approx(weight, abs=1e-12)

    def test_markov_chain_value_never_reaching_the_goal(self):
        ma = build_ma(3, 0, actions={0: [(ALPHA, {1: 1.0}), (BETA, {2: 1.0})]},
                      rates={1: (1.0, {1: 1.0}), 2: (1.0, {2: 1.0})},
                      rewards=[RewardFunction("r", {1: 1.0})])
        mdp = underlying_mdp(ma)
        assert markov_chain_value(mdp, {0: {BETA: 1.0}}, {1}, reward=0) == 0.0
        assert markov_chain_value(mdp, {0: {BETA: 1.0}}, {2}, reward=0) == 0.0
        assert markov_chain_value(mdp, {0: {ALPHA: 0.5, BETA: 0.5}}, {2}, reward=0) == math.inf


class TestAbstractionWeights:
    def test_time_abstract(self):
        w = abstraction_weight(branching_chain(), AT_MOST_ONE, (0, MARKOVIAN, 3), ALPHA)
        assert w == pytest.approx(1 - math.exp(-1), abs=1e-12)

    def test_digital_two_self_loops(self):
        path = (0, MARKOVIAN, 0, MARKOVIAN, 0, MARKOVIAN, 3)
        w = abstraction_weight(branching_chain(), AT_MOST_ONE, path, ALPHA, DIGITAL, 0.4)
        e = math.exp
        assert w == pytest.approx((e(-0.8) - e(-1)) / (e(-0.8) - e(-1.2)), abs=1e-12)

    def test_digital_one_self_loop(self):
        path = (0, MARKOVIAN, 0, MARKOVIAN, 3)
        assert abstraction_weight(branching_chain(), AT_MOST_ONE, path, ALPHA, DIGITAL, 0.4) == 1.0

    def test_before_any_sojourn(self):
        ma = build_ma(2, 0, actions={0: [(ALPHA, {1: 1.0}), (BETA, {1: 1.0})]}, rates={1: (1.0, {1: 1.0})})
        sched = threshold_rule(0, "<=", 1.0, ALPHA, BETA)
        assert abstraction_weight(ma, sched, (0,), ALPHA) == 1.0

    def test_later_decisions_condition_the_sojourn(self):
        # beta at s3 reveals a sojourn above one; gamma at s4 needs it at most two
        sched = ThresholdScheduler((Rule(3, LAST_SOJOURN, "<=", 1.0, ALPHA), Rule(4, LAST_SOJOURN, "<=", 2.0, "gamma")),
                                   {3: BETA, 4: ETA})
        path = (0, MARKOVIAN, 3, BETA, 4)
        w = abstraction_weight(branching_chain(), sched, path, "gamma")
        e = math.exp
        assert w == pytest.approx((e(-1) - e(-2)) / e(-1), abs=1e-12)
        assert conditional_weight(branching_chain(), sched, path, "gamma", n=40_000, seed=1) == pytest.approx(w, abs=0.01)

    def test_elapsed_rule_after_two_sojourns_is_unsupported(self):
        ma = build_ma(3, 0, actions={2: [(ALPHA, {2: 1.0}), (BETA, {2: 1.0})]},
                      rates={0: (1.0, {1: 1.0}), 1: (2.0, {2: 1.0})})
        sched = ThresholdScheduler((Rule(2, ELAPSED, "<=", 1.0, ALPHA),), {2: BETA})
        path = (0, MARKOVIAN, 1, MARKOVIAN, 2)
        with pytest.raises(UnsupportedSchedulerShape):
            abstraction_weight(ma, sched, path, ALPHA)
        # hypoexponential CDF at one for rates 1 and 2
        exact = 1 - 2 * math.exp(-1) + math.exp(-2)
        assert conditional_weight(ma, sched, path, ALPHA, n=40_000, seed=2) == pytest.approx(exact, abs=0.01)

    def test_impossible_observation(self):
        with pytest.raises(ValueError):
            abstraction_weight(branching_chain(), AT_MOST_ONE, (0, MARKOVIAN), ALPHA)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 6), st.floats(0.1, 3.0))
def test_digital_weights_form_a_distribution(loops, constant):
    sched = threshold_rule(3, "<=", constant, ALPHA, BETA)
    path = (0, MARKOVIAN) * (loops + 1) + (3,)
    total = sum(abstraction_weight(branching_chain(), sched, path, a, DIGITAL, 0.25) for a in (ALPHA, BETA))
    assert total == pytest.approx(1.0, abs=1e-12)


class TestDsBounded:
    def test_always_beta(self):
        # s4 is hit in the step that leaves s0, which happens at step k with probability e^{-(k-1)d}(1-e^{-d})
        sched = ThresholdScheduler((), {3: BETA})
        value = ds_bounded_probability(branching_chain(), sched, {4}, StepInterval(0, 5), 0.4)
        assert value == pytest.approx(1 - math.exp(-2.0), abs=1e-12)
        later = ds_bounded_probability(branching_chain(), sched, {4}, StepInterval(3, 5), 0.4)
        assert later == pytest.approx(math.exp(-0.8) - math.exp(-2.0), abs=1e-12)

    def test_quick_sojourn_matches_simulation(self):
        ma = branching_chain()
        value = ds_bounded_probability(ma, AT_MOST_ONE, {4}, StepInterval(0, 5), 0.4)
        est = estimate(ma, AT_MOST_ONE, DsBoundedReachEvent(frozenset({4}), StepInterval(0, 5), 0.4), n=N, seed=11)
        assert est.contains(value)

    def test_unbounded_steps_rejected(self):
        with pytest.raises(ValueError):
            ds_bounded_probability(branching_chain(), AT_MOST_ONE, {4}, StepInterval(0, None), 0.4)

    def test_elapsed_rules_rejected(self):
        sched = ThresholdScheduler((Rule(3, ELAPSED, "<=", 1.0, ALPHA),), {3: BETA})
        with pytest.raises(UnsupportedSchedulerShape):
            ds_bounded_probability(branching_chain(), sched, {4}, StepInterval(0, 5), 0.4)
