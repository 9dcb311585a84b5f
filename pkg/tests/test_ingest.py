import math
from math import comb

import pytest
from hypothesis import given, settings, strategies as st

from moma.engine.objectives import Direction, ExpReward, ExpTime, QueryKind, TimedReach, UntimedReach
from moma.errors import (
    DuplicateDeclaration,
    InvalidParams,
    MixedQueryShape,
    ModelSyntaxError,
    QuerySyntaxError,
    UnknownLabel,
    UnknownRewardName,
    UnknownState,
)
from moma.ingest import BenchmarkParams, generate_benchmark, parse_model, parse_query, serialize_model
from moma.ingest.benchmarks import job_rates
from moma.model import MARKOVIAN, Distribution, MarkovAutomaton, MarkovianTransition, RewardFunction, validate

from fixtures import branching_chain, delayed_choice

SMALL = """\
@type: ma
@states: 3
@initial: 0
state 0 init "two words"
  action go
    1 : 0.25
    2 : 0.75
state 1 goal
  rate 2.5
    1 : 1
state 2  # a comment
  rate 1
    0 : 1
@rewards cost
  state 1 : 2
  action 0 go : 1
  action 2 !markovian : 0.5
@end
"""


class TestModelFile:
    def test_parse_small(self):
        ma = parse_model(SMALL)
        assert ma.num_states == 3 and ma.initial == 0
        assert ma.labels[0] == {"init", "two words"}
        assert ma.actions[0] == (("go", Distribution(((1, 0.25), (2, 0.75)))),)
        assert ma.markovian[1] == MarkovianTransition(2.5, Distribution(((1, 1.0),)))
        cost = ma.rewards[0]
        assert cost.state_rewards == {1: 2.0}
        assert cost.action_rewards == {(0, "go"): 1.0, (2, MARKOVIAN): 0.5}

    def test_round_trip_fixtures(self):
        for ma in (delayed_choice(), branching_chain(), parse_model(SMALL)):
            assert parse_model(serialize_model(ma)) == ma

    @pytest.mark.parametrize("text, line, col", [
        ("@states: 2\nstate 0\n  action a\n    1 ; 1\n", 4, 7),
        ("@states: 2\nstate 0\n  action a\n    1 : x\n", 4, 9),
        ("@states: 2\nstate 0 :\n", 2, 9),
        ("@states: 2\n@bogus: 1\n", 2, 1),
        ("@type: mdp\n@states: 1\n", 1, 8),
        ('@states: 1\nstate 0 "open\n', 2, 9),
    ])
    def test_syntax_errors_carry_position(self, text, line, col):
        with pytest.raises(ModelSyntaxError) as info:
            parse_model(text)
        assert (info.value.line, info.value.col) == (line, col)

    def test_missing_states_directive(self):
        with pytest.raises(ModelSyntaxError):
            parse_model("state 0\n")

    def test_unknown_state(self):
        with pytest.raises(UnknownState) as info:
            parse_model("@states: 2\nstate 0\n  action a\n    5 : 1\n")
        assert info.value.line == 4

    @pytest.mark.parametrize("text", [
        "@states: 2\nstate 0\nstate 0\n",
        "@states: 1\n@states: 1\n",
        "@states: 2\nstate 0\n  rate 1\n    1 : 1\n  rate 2\n    1 : 1\n",
        "@states: 2\nstate 0\n  action a\n    1 : 0.5\n    1 : 0.5\n",
        "@states: 1\n@rewards r\n@end\n@rewards r\n@end\n",
    ])
    def test_duplicates(self, text):
        with pytest.raises(DuplicateDeclaration):
            parse_model(text)

    def test_state_after_rewards_is_rejected(self):
        with pytest.raises(ModelSyntaxError):
            parse_model("@states: 2\n@rewards r\n@end\nstate 1\n")


label_text = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=6)


@st.composite
def automata(draw):
    n = draw(st.integers(1, 4))
    prob = st.floats(1e-6, 1.0, allow_nan=False)
    actions, markovian, labels = [], [], []
    for s in range(n):
        names = draw(st.lists(st.sampled_from(["a", "b", "go home", "state", "x:y"]), unique=True, max_size=2))
        rows = []
        for a in names:
            targets = draw(st.lists(st.integers(0, n - 1), unique=True, min_size=1, max_size=n))
            rows.append((a, Distribution(tuple(sorted((t, draw(prob)) for t in targets)))))
        actions.append(tuple(rows))
        if draw(st.booleans()):
            t = draw(st.integers(0, n - 1))
            markovian.append(MarkovianTransition(draw(st.floats(1e-3, 1e3)), Distribution(((t, draw(prob)),))))
        else:
            markovian.append(None)
        labels.append(frozenset(draw(st.lists(label_text, max_size=2))))
    rewards = []
    for name in draw(st.lists(st.sampled_from(["time", "cost x"]), unique=True, max_size=2)):
        sr = draw(st.dictionaries(st.integers(0, n - 1), st.floats(0, 100), max_size=2))
        ar = {}
        for s in range(n):
            for a, _ in actions[s]:
                if draw(st.booleans()):
                    ar[(s, a)] = draw(st.floats(0, 10))
            if markovian[s] is not None and draw(st.booleans()):
                ar[(s, MARKOVIAN)] = draw(st.floats(0, 10))
        rewards.append(RewardFunction(name, sr, ar))
    return MarkovAutomaton(n, draw(st.integers(0, n - 1)), tuple(actions), tuple(markovian),
                           tuple(rewards), tuple(labels))


@settings(max_examples=150, deadline=None)
@given(automata())
def test_serialize_parse_round_trip(ma):
    text = serialize_model(ma)
    assert parse_model(text) == ma
    assert serialize_model(parse_model(text)) == text


class TestQuery:
    def test_pareto(self):
        q = parse_query('pareto: Pmax[F "s2"]; Pmax[F[0,2] "s4"]', delayed_choice())
        assert q.kind is QueryKind.PARETO and q.optimize is None
        first, second = q.objectives
        assert first.kind == UntimedReach(frozenset({2}))
        assert second.kind.interval.upper == 2.0 and isinstance(second.kind, TimedReach)
        assert second.text == 'Pmax[F[0,2] "s4"]'

    def test_goal_disjunction(self):
        q = parse_query('pareto: Tmin[F "s2" | "s4"]', delayed_choice())
        assert q.objectives[0].kind == ExpTime(frozenset({2, 4}))
        assert q.objectives[0].direction is Direction.MIN

    def test_trivial_interval_is_untimed(self):
        q = parse_query('pareto: Pmax[F[0,inf] "s2"]', delayed_choice())
        assert isinstance(q.objectives[0].kind, UntimedReach)

    def test_numerical_index(self):
        q = parse_query('numerical: P>=0.5[F "s2"]; Pmax[F "s4"]', delayed_choice())
        assert q.optimize == 1
        assert q.objectives[0].threshold.value == 0.5

    def test_reward_objective(self):
        ma = parse_model(SMALL)
        q = parse_query('achieve: R<=3{"cost"}[F "goal"]', ma)
        assert q.objectives[0].kind == ExpReward(0, frozenset({1}))
        assert q.objectives[0].direction is Direction.MIN

    @pytest.mark.parametrize("text, error", [
        ('pareto Pmax[F "s2"]', QuerySyntaxError),
        ('pareto: Q max[F "s2"]', QuerySyntaxError),
        ('pareto: Pmax[F "s2"] extra', QuerySyntaxError),
        ('pareto: Pmax[F[2,1] "s2"]', QuerySyntaxError),
        ('pareto: Tmax[F[0,1] "s2"]', QuerySyntaxError),
        ('pareto: Pmax[F "nowhere"]', UnknownLabel),
        ('pareto: Rmax{"nothing"}[F "s2"]', UnknownRewardName),
        ('pareto: P>=0.5[F "s2"]', MixedQueryShape),
        ('achieve: Pmax[F "s2"]', MixedQueryShape),
        ('numerical: Pmax[F "s2"]; Pmax[F "s4"]', MixedQueryShape),
    ])
    def test_errors(self, text, error):
        with pytest.raises(error):
            parse_query(text, delayed_choice())

    def test_syntax_error_position(self):
        with pytest.raises(QuerySyntaxError) as info:
            parse_query('pareto: Pmax[F "s2"] ; Pmax(F "s4"]', delayed_choice())
        assert info.value.pos == 27


def jobs_state_count(n: int, k: int) -> int:
    """Pick states for every nonempty remaining set, run states for every
    running subset of it, plus the final state."""
    picks = 2 ** n - 1
    runs = sum(comb(n, r) * comb(r, min(k, r)) for r in range(1, n + 1))
    return picks + runs + 1


class TestBenchmarks:
    @pytest.mark.parametrize("n, k", [(1, 1), (2, 1), (3, 2), (4, 4), (6, 3)])
    def test_jobs_count_formula(self, n, k):
        assert generate_benchmark(BenchmarkParams("jobs", n, k)).ma.num_states == jobs_state_count(n, k)

    def test_jobs_formula_matches_published_size(self):
        assert jobs_state_count(10, 2) == 12554

    def test_job_rates(self):
        assert job_rates(1) == [1.0]
        assert job_rates(3) == [1.0, 2.0, 3.0]

    @pytest.mark.parametrize("family, n, k", [("jobs", 3, 2), ("polling", 2, 1), ("stream", 3, None),
                                              ("mutex", 2, None)])
    def test_generated_models_are_valid_and_serializable(self, family, n, k):
        bench = generate_benchmark(BenchmarkParams(family, n, k))
        assert validate(bench.ma).ok
        assert parse_model(serialize_model(bench.ma)) == bench.ma
        for text in bench.objectives.values():
            parse_query(f"pareto: {text}", bench.ma)
        for label, states in bench.labels.items():
            assert states == bench.ma.states_with_label(label)

    def test_generation_is_deterministic(self):
        a = generate_benchmark(BenchmarkParams("polling", 2, 2)).ma
        b = generate_benchmark(BenchmarkParams("polling", 2, 2)).ma
        assert serialize_model(a) == serialize_model(b)

    @pytest.mark.parametrize("args", [("queue", 2, 1), ("jobs", 0, 1), ("jobs", 2, 3), ("polling", 2, None)])
    def test_invalid_params(self, args):
        with pytest.raises(InvalidParams):
            BenchmarkParams(*args)

    def test_time_reward_is_one_per_markovian_state(self):
        bench = generate_benchmark(BenchmarkParams("jobs", 3, 1))
        time_reward = bench.rewards["time"]
        for s in range(bench.ma.num_states):
            if not bench.ma.actions[s]:
                assert time_reward.state_reward(s) == 1.0
        assert math.isclose(bench.ma.lambda_max(), 3.0)
