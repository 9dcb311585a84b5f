"""Simulation of Markov automata under finitely described schedulers.

Paths are sampled with exponential sojourn times in Markovian states and
scheduler choices in probabilistic states.  Estimates are built from fixed-size
chunks whose random streams depend only on ``(seed, chunk index)``, so results
do not depend on the number of worker processes.

The module also computes, in closed form, how a threshold scheduler looks to an
observer that sees a time-abstract or a digital path, and evaluates
step-bounded reachability exactly on the digitization under that view.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Iterable, Mapping, Sequence

import numpy as np

from .engine.solver import SchedulerDescription
from .errors import HorizonTooSmall, InfiniteValue, UnsupportedSchedulerShape
from .graphs import backward_reachable, forward_reachable
from .model import MARKOVIAN, MarkovAutomaton
from .transform import StepInterval, TimeInterval

MAX_STEPS = 10**6
CHUNK = 1000
MIN_SAMPLES = 1000
_BUFFER = 4096


# ---------------------------------------------------------------------------
# schedulers


OPS = {
    "<": lambda x, c: x < c,
    "<=": lambda x, c: x <= c,
    ">": lambda x, c: x > c,
    ">=": lambda x, c: x >= c,
}
LAST_SOJOURN = "last_sojourn"
ELAPSED = "elapsed"


@dataclass(frozen=True)
class Rule:
    """At ``state``, pick ``action`` if ``<kind> <op> constant`` holds."""

    state: int
    kind: str
    op: str
    constant: float
    action: str

    def __post_init__(self):
        if self.kind not in (LAST_SOJOURN, ELAPSED):
            raise ValueError(f"unknown predicate {self.kind!r}")
        if self.op not in OPS:
            raise ValueError(f"unknown comparison {self.op!r}")

    def holds(self, last_sojourn: float, elapsed: float) -> bool:
        x = last_sojourn if self.kind == LAST_SOJOURN else elapsed
        return OPS[self.op](x, self.constant)


@dataclass(frozen=True)
class ThresholdScheduler:
    """Ordered timing rules; the first rule that holds decides, else the state's default.

    States without a default fall back to their first enabled action.
    """

    rules: tuple[Rule, ...] = ()
    default: Mapping[int, str] = field(default_factory=dict)

    def rules_at(self, state: int) -> list[Rule]:
        return [r for r in self.rules if r.state == state]

    def choose(self, ma: MarkovAutomaton, state: int, last_sojourn: float, elapsed: float) -> str:
        for r in self.rules:
            if r.state == state and r.holds(last_sojourn, elapsed):
                return r.action
        if state in self.default:
            return self.default[state]
        return ma.actions[state][0][0]


def threshold_rule(state: int, op: str, constant: float, then: str, otherwise: str,
                   kind: str = LAST_SOJOURN) -> ThresholdScheduler:
    """Scheduler with one rule at ``state``: ``then`` if the predicate holds, else ``otherwise``."""
    return ThresholdScheduler((Rule(state, kind, op, constant, then),), {state: otherwise})


class _ThresholdSession:
    def __init__(self, ma: MarkovAutomaton, sched: ThresholdScheduler):
        self.ma, self.sched = ma, sched
        self.last = 0.0
        self.elapsed = 0.0

    def start(self, s: int) -> None:
        self.last = self.elapsed = 0.0

    def choose(self, s: int) -> str:
        return self.sched.choose(self.ma, s, self.last, self.elapsed)

    def after_action(self, t: int) -> None:
        pass

    def after_markovian(self, s: int, sojourn: float, t: int) -> None:
        self.last = sojourn
        self.elapsed += sojourn


class _ProductSession:
    """Tracks the step counter and goal bits of a product scheduler."""

    def __init__(self, desc: SchedulerDescription, stream: "_Stream"):
        if desc.mode == "mixture":
            u = stream.uniform()
            acc = 0.0
            pick = desc.components[-1]
            for comp, p in zip(desc.components, desc.weights):
                acc += p
                if u < acc:
                    pick = comp
                    break
            desc = pick
        self.mem = desc.memory
        self.count = 0
        self.bits = 0

    def start(self, s: int) -> None:
        self.count = 0
        self.bits = self.mem.initial_bits(s)

    def choose(self, s: int) -> str:
        return self.mem.action(s, self.count, self.bits)

    def after_action(self, t: int) -> None:
        self.bits = self.mem.visit(self.bits, t, self.count)

    def after_markovian(self, s: int, sojourn: float, t: int) -> None:
        delta = self.mem.delta
        m = int(math.floor(sojourn / delta)) if delta else 0
        self.bits = self.mem.visit_range(self.bits, s, self.count + 1, self.count + m)
        self.count += m + 1
        self.bits = self.mem.visit(self.bits, t, self.count)


def _session(ma, sched, stream):
    if isinstance(sched, ThresholdScheduler):
        return _ThresholdSession(ma, sched)
    if isinstance(sched, SchedulerDescription):
        return _ProductSession(sched, stream)
    raise TypeError(f"unsupported scheduler type {type(sched).__name__}")


# ---------------------------------------------------------------------------
# random streams


class _Stream:
    """Buffered uniform and exponential draws from one generator."""

    def __init__(self, seed: int, chunk: int):
        self.rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(chunk)]))
        self._u = self.rng.random(_BUFFER).tolist()
        self._e = self.rng.standard_exponential(_BUFFER).tolist()

    def uniform(self) -> float:
        if not self._u:
            self._u = self.rng.random(_BUFFER).tolist()
        return self._u.pop()

    def exp(self) -> float:
        if not self._e:
            self._e = self.rng.standard_exponential(_BUFFER).tolist()
        return self._e.pop()


def _pick(targets: Sequence[int], cum: Sequence[float], u: float) -> int:
    i = bisect_right(cum, u * cum[-1])
    return targets[min(i, len(targets) - 1)]


# ---------------------------------------------------------------------------
# paths


@dataclass(frozen=True)
class PathSample:
    """``steps[i] = (state, sojourn, action)``; the final entry has action ``None``."""

    steps: tuple[tuple[int, float, str | None], ...]
    terminated_by: str

    @property
    def total_time(self) -> float:
        return sum(t for _, t, _ in self.steps)

    @property
    def length(self) -> int:
        return len(self.steps) - 1

    def states(self) -> list[int]:
        return [s for s, _, _ in self.steps]

    def time_abstract(self) -> tuple:
        """Alternating states and actions with sojourn times dropped."""
        out: list = []
        for s, _, a in self.steps:
            out.append(s)
            if a is not None:
                out.append(a)
        return tuple(out)


def digitize_path(path: PathSample, delta: float) -> tuple:
    """Digital path: each Markovian sojourn ``t`` becomes ``floor(t / delta)`` self-loops before the move."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    out: list = []
    for s, t, a in path.steps:
        if a == MARKOVIAN:
            m = int(math.floor(t / delta))
            out.extend([s, MARKOVIAN] * m)
        out.append(s)
        if a is not None:
            out.append(a)
    return tuple(out)


def digitization_steps(digital_path: Sequence) -> int:
    """Number of transitions leaving Markovian states."""
    return sum(1 for x in digital_path[1::2] if x == MARKOVIAN)


class _Model:
    """Sampling tables for one automaton."""

    def __init__(self, ma: MarkovAutomaton):
        self.ma = ma
        self.ps = [bool(ma.actions[s]) for s in range(ma.num_states)]
        self.rate = [0.0] * ma.num_states
        self.move: list = [None] * ma.num_states
        self.acts: list[dict] = [dict() for _ in range(ma.num_states)]
        for s in range(ma.num_states):
            if self.ps[s]:
                for a, dist in ma.actions[s]:
                    self.acts[s][a] = self._table(dist)
            elif ma.markovian[s] is not None:
                self.rate[s] = ma.markovian[s].rate
                self.move[s] = self._table(ma.markovian[s].distribution)
        self.edges = [sorted({t for _, d in ma.actions[s] for t in d.targets}
                             | (set(ma.markovian[s].distribution.targets) if not self.ps[s] and ma.markovian[s] else set()))
                      for s in range(ma.num_states)]

    @staticmethod
    def _table(dist):
        targets = [t for t, p in dist if p > 0]
        cum = list(np.cumsum([p for _, p in dist if p > 0]))
        return targets, cum

    def cannot_reach(self, goal: frozenset[int]) -> list[bool]:
        ok = backward_reachable(self.ma.num_states, self.edges, goal)
        return [s not in ok for s in range(self.ma.num_states)]

    def absorbing(self) -> list[bool]:
        return [not self.ps[s] and all(t == s for t in self.edges[s]) for s in range(self.ma.num_states)]


class _Observer:
    """Event evaluated along a path; ``done`` flags end the walk."""

    done = False
    value = 0.0

    def enter(self, s: int, time: float, count: int) -> None:
        pass

    def stay(self, s: int, time: float, sojourn: float, count: int, m: int) -> None:
        pass

    def move(self, s: int, action: str) -> None:
        pass

    def stopped(self, s: int) -> None:
        pass


def _walk(model: _Model, session, stream: _Stream, obs: _Observer, stop: Sequence[bool],
          delta: float | None = None, record: list | None = None) -> str:
    s = model.ma.initial
    time, count = 0.0, 0
    session.start(s)
    obs.enter(s, time, count)
    for _ in range(MAX_STEPS):
        if obs.done:
            if record is not None:
                record.append((s, 0.0, None))
            return "goal"
        if stop[s]:
            obs.stopped(s)
            if record is not None:
                record.append((s, 0.0, None))
            return "absorbed"
        if model.ps[s]:
            a = session.choose(s)
            targets, cum = model.acts[s][a]
            t = _pick(targets, cum, stream.uniform())
            obs.move(s, a)
            if record is not None:
                record.append((s, 0.0, a))
            session.after_action(t)
        else:
            d = stream.exp() / model.rate[s]
            m = int(math.floor(d / delta)) if delta else 0
            obs.stay(s, time, d, count, m)
            targets, cum = model.move[s]
            t = _pick(targets, cum, stream.uniform())
            obs.move(s, MARKOVIAN)
            if record is not None:
                record.append((s, d, MARKOVIAN))
            time += d
            count += m + 1
            session.after_markovian(s, d, t)
            if obs.done:
                if record is not None:
                    record.append((t, 0.0, None))
                return "goal"
        s = t
        obs.enter(s, time, count)
    raise HorizonTooSmall(f"no stop condition within {MAX_STEPS} steps")


def simulate(ma: MarkovAutomaton, scheduler, goal: Iterable[int] | None = None, time_horizon: float = math.inf,
             seed: int = 0, index: int = 0) -> PathSample:
    """Sample one path until ``goal``, the time horizon, or a state from which ``goal`` is unreachable."""
    model = _Model(ma)
    goal = frozenset(goal) if goal is not None else None
    stream = _Stream(seed, index)
    session = _session(ma, scheduler, stream)

    class _Stop(_Observer):
        reason = None

        def enter(self, s, time, count):
            if goal is not None and s in goal:
                self.done, self.reason = True, "goal"
            elif time > time_horizon:
                self.done, self.reason = True, "horizon"

    stop = model.cannot_reach(goal) if goal is not None else model.absorbing()
    obs = _Stop()
    steps: list = []
    how = _walk(model, session, stream, obs, stop, record=steps)
    if how == "goal":
        how = obs.reason or "goal"
    return PathSample(tuple(steps), how)


# ---------------------------------------------------------------------------
# events


@dataclass(frozen=True)
class UntimedReachEvent:
    goal: frozenset[int]


@dataclass(frozen=True)
class TimedReachEvent:
    goal: frozenset[int]
    interval: TimeInterval


@dataclass(frozen=True)
class DsBoundedReachEvent:
    """Reach ``goal`` after a number of digitization steps in ``steps``."""

    goal: frozenset[int]
    steps: StepInterval
    delta: float


@dataclass(frozen=True)
class RewardEvent:
    """Reward collected until the first visit to ``goal``; ``reward`` is ``None`` for elapsed time."""

    goal: frozenset[int]
    reward: int | None = None


class _Reach(_Observer):
    def __init__(self, goal):
        self.goal = goal

    def enter(self, s, time, count):
        if s in self.goal:
            self.done, self.value = True, 1.0


class _Timed(_Observer):
    def __init__(self, goal, interval: TimeInterval):
        self.goal, self.lo, self.hi = goal, interval.lower, interval.upper

    def enter(self, s, time, count):
        if time > self.hi:
            self.done = True
        elif s in self.goal and time >= self.lo:
            self.done, self.value = True, 1.0

    def stay(self, s, time, sojourn, count, m):
        if s in self.goal and time + sojourn >= self.lo and time <= self.hi:
            self.done, self.value = True, 1.0


class _DsBounded(_Observer):
    def __init__(self, goal, steps: StepInterval):
        self.goal, self.lo = goal, steps.lo
        self.hi = math.inf if steps.hi is None else steps.hi

    def enter(self, s, time, count):
        if count > self.hi:
            self.done = True
        elif s in self.goal and count >= self.lo:
            self.done, self.value = True, 1.0

    def stay(self, s, time, sojourn, count, m):
        if s in self.goal and count + m >= self.lo and count <= self.hi:
            self.done, self.value = True, 1.0


class _Reward(_Observer):
    def __init__(self, ma: MarkovAutomaton, goal, reward: int | None, earns: Sequence[bool]):
        self.goal = goal
        self.rf = None if reward is None else ma.rewards[reward]
        self.earns = earns

    def enter(self, s, time, count):
        if s in self.goal:
            self.done = True

    def stay(self, s, time, sojourn, count, m):
        self.value += sojourn if self.rf is None else self.rf.state_reward(s) * sojourn

    def move(self, s, action):
        if self.rf is not None:
            self.value += self.rf.action_reward(s, action)

    def stopped(self, s):
        if self.earns[s]:
            self.value = math.inf


def _earning_states(ma: MarkovAutomaton, model: _Model, goal, reward: int | None) -> list[bool]:
    """States that can still collect positive reward before reaching ``goal``."""
    pos = set()
    for s in range(ma.num_states):
        if s in goal:
            continue
        if reward is None:
            if not model.ps[s]:
                pos.add(s)
            continue
        rf = ma.rewards[reward]
        if rf.state_reward(s) > 0 and not model.ps[s]:
            pos.add(s)
        names = [a for a, _ in ma.actions[s]] if model.ps[s] else [MARKOVIAN]
        if any(rf.action_reward(s, a) > 0 for a in names):
            pos.add(s)
    edges = [[] if s in goal else model.edges[s] for s in range(ma.num_states)]
    reach = backward_reachable(ma.num_states, edges, pos)
    return [s in reach for s in range(ma.num_states)]


def _observer_factory(ma: MarkovAutomaton, model: _Model, event):
    if isinstance(event, UntimedReachEvent):
        return (lambda: _Reach(event.goal)), model.cannot_reach(event.goal), None
    if isinstance(event, TimedReachEvent):
        return (lambda: _Timed(event.goal, event.interval)), model.cannot_reach(event.goal), None
    if isinstance(event, DsBoundedReachEvent):
        return (lambda: _DsBounded(event.goal, event.steps)), model.cannot_reach(event.goal), event.delta
    if isinstance(event, RewardEvent):
        earns = _earning_states(ma, model, event.goal, event.reward)
        stop = model.cannot_reach(event.goal)
        return (lambda: _Reward(ma, event.goal, event.reward, earns)), stop, None
    raise TypeError(f"unsupported event {event!r}")


# ---------------------------------------------------------------------------
# estimation


@dataclass(frozen=True)
class Estimate:
    mean: float
    half_width: float
    samples: int
    seed: int
    confidence: float = 0.99

    @property
    def low(self) -> float:
        return self.mean - self.half_width

    @property
    def high(self) -> float:
        return self.mean + self.half_width

    def contains(self, value: float) -> bool:
        return self.low <= value <= self.high


def _chunk(args) -> tuple[float, float, int]:
    ma, scheduler, event, seed, index, size = args
    model = _Model(ma)
    make, stop, delta = _observer_factory(ma, model, event)
    stream = _Stream(seed, index)
    total = 0.0
    squares = 0.0
    for _ in range(size):
        obs = make()
        _walk(model, _session(ma, scheduler, stream), stream, obs, stop, delta)
        total += obs.value
        squares += obs.value * obs.value
    return total, squares, size


def estimate(ma: MarkovAutomaton, scheduler, event, n: int = 100_000, confidence: float = 0.99,
             seed: int = 0, workers: int = 1) -> Estimate:
    """Monte Carlo estimate of the event's probability or the reward's expectation.

    The confidence interval uses the normal approximation.
    """
    if n < MIN_SAMPLES:
        raise ValueError(f"at least {MIN_SAMPLES} samples are required")
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    sizes = [CHUNK] * (n // CHUNK) + ([n % CHUNK] if n % CHUNK else [])
    jobs = [(ma, scheduler, event, seed, i, k) for i, k in enumerate(sizes)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_chunk, jobs))
    else:
        parts = [_chunk(j) for j in jobs]
    total = math.fsum(p[0] for p in parts)
    squares = math.fsum(p[1] for p in parts)
    if math.isinf(total):
        raise InfiniteValue([0], "some sampled path collects reward forever")
    mean = total / n
    var = max(0.0, (squares - n * mean * mean) / (n - 1))
    z = NormalDist().inv_cdf(0.5 + confidence / 2.0)
    return Estimate(mean, z * math.sqrt(var / n), n, seed, confidence)


def sample_paths(ma: MarkovAutomaton, scheduler, goal: Iterable[int], n: int, seed: int = 0) -> Iterable[PathSample]:
    """``n`` independent paths, each run until ``goal`` or until it becomes unreachable."""
    goal = frozenset(goal)
    model = _Model(ma)
    stop = model.cannot_reach(goal)
    for index in range(0, n, CHUNK):
        stream = _Stream(seed, index // CHUNK)
        for _ in range(min(CHUNK, n - index)):
            obs = _Reach(goal)
            steps: list = []
            how = _walk(model, _session(ma, scheduler, stream), stream, obs, stop, record=steps)
            yield PathSample(tuple(steps), how)


def path_reward(ma: MarkovAutomaton, path: PathSample, reward: int | None, goal: Iterable[int]) -> float:
    """Reward of ``path`` up to its first goal visit (elapsed time if ``reward`` is ``None``)."""
    goal = frozenset(goal)
    rf = None if reward is None else ma.rewards[reward]
    total = 0.0
    for s, t, a in path.steps:
        if s in goal:
            break
        if rf is None:
            total += t
        else:
            total += rf.state_reward(s) * t + (rf.action_reward(s, a) if a is not None else 0.0)
    return total


# ---------------------------------------------------------------------------
# abstraction weights


TIME_ABSTRACT = "time-abstract"
DIGITAL = "digital"


def _exp_mass(rate: float, lo: float, hi: float) -> float:
    """``P(lo <= X < hi)`` for ``X ~ Exp(rate)``."""
    if hi <= lo:
        return 0.0
    return math.exp(-rate * lo) - (0.0 if math.isinf(hi) else math.exp(-rate * hi))


def _pieces(rules: Sequence[Rule], lo: float, hi: float) -> list[tuple[float, float]]:
    cuts = sorted({lo, hi} | {r.constant for r in rules if lo < r.constant < hi})
    return list(zip(cuts[:-1], cuts[1:]))


def _rule_action(ma, sched: ThresholdScheduler, state: int, x: float) -> str:
    return sched.choose(ma, state, x, x)


def _split(path: Sequence) -> tuple[list[int], list[str]]:
    states = list(path[0::2])
    actions = list(path[1::2])
    if len(states) != len(actions) + 1:
        raise ValueError("a path alternates states and actions and ends in a state")
    return states, actions


def abstraction_weight(ma: MarkovAutomaton, scheduler: ThresholdScheduler, path: Sequence, action: str,
                       mode: str = TIME_ABSTRACT, delta: float | None = None) -> float:
    """Probability that ``scheduler`` picks ``action`` after the observed path.

    ``path`` alternates states and actions and ends in a probabilistic state.  In
    ``time-abstract`` mode sojourn times are unobserved; in ``digital`` mode each
    Markovian sojourn is known up to its ``delta``-cell, given by the number of
    repeated self-loops.  Decisions taken after the last Markovian step depend
    on the same sojourn and condition it.
    """
    states, actions = _split(path)
    if mode not in (TIME_ABSTRACT, DIGITAL):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == DIGITAL and not (delta and delta > 0):
        raise ValueError("digital mode needs a positive delta")
    here = states[-1]
    if not ma.actions[here]:
        raise ValueError("the path must end in a probabilistic state")
    ms_idx = [i for i, a in enumerate(actions) if a == MARKOVIAN]
    relevant = [r for s in set(states) for r in scheduler.rules_at(s)]
    if not ms_idx:
        # no sojourn yet: every predicate sees 0
        return 1.0 if _rule_action(ma, scheduler, here, 0.0) == action else 0.0

    last = ms_idx[-1]
    src = states[last]
    lo, hi = 0.0, math.inf
    if mode == DIGITAL:
        start = last
        while start > 0 and actions[start - 1] == MARKOVIAN and states[start - 1] == src:
            start -= 1
        if src in ma.markovian[src].distribution.targets:
            raise UnsupportedSchedulerShape(f"state {src} has a self-loop; its digital sojourn is ambiguous")
        m = last - start
        lo, hi = m * delta, (m + 1) * delta
        distinct_sojourns = len({i for i in ms_idx if i < start}) + 1
    else:
        distinct_sojourns = len(ms_idx)
    if distinct_sojourns > 1 and any(r.kind == ELAPSED for r in relevant):
        raise UnsupportedSchedulerShape("elapsed-time rules after several sojourns have no closed form")

    rate = ma.markovian[src].rate
    later = [(states[i], actions[i]) for i in range(last + 1, len(actions))]
    num = den = 0.0
    for a, b in _pieces(relevant, lo, hi):
        x = a + 1.0 if math.isinf(b) else (a + b) / 2.0
        if all(_rule_action(ma, scheduler, s, x) == act for s, act in later if ma.actions[s]):
            mass = _exp_mass(rate, a, b)
            den += mass
            if _rule_action(ma, scheduler, here, x) == action:
                num += mass
    if den <= 0.0:
        raise ValueError("the observed path has probability zero under the scheduler")
    return num / den


def conditional_weight(ma: MarkovAutomaton, scheduler: ThresholdScheduler, path: Sequence, action: str,
                       mode: str = TIME_ABSTRACT, delta: float | None = None, n: int = 100_000,
                       seed: int = 0) -> float:
    """Sampling fallback for :func:`abstraction_weight`.

    Sojourns are drawn from their observed cells; samples whose replayed
    decisions disagree with the path are rejected.
    """
    states, actions = _split(path)
    stream = _Stream(seed, 0)
    # group repeated digital self-loops into one sojourn
    sojourns = []
    i = 0
    while i < len(actions):
        if actions[i] == MARKOVIAN:
            j = i
            if mode == DIGITAL:
                while j + 1 < len(actions) and actions[j + 1] == MARKOVIAN and states[j + 1] == states[i]:
                    j += 1
            sojourns.append((i, j, states[i], j - i))
            i = j + 1
        else:
            i += 1
    hits = kept = 0
    for _ in range(n):
        last = elapsed = 0.0
        ok = True
        k = 0
        for idx, a in enumerate(actions):
            s = states[idx]
            if k < len(sojourns) and sojourns[k][0] == idx:
                _, j, src, m = sojourns[k]
                rate = ma.markovian[src].rate
                if mode == DIGITAL:
                    base = m * delta
                    u = stream.uniform()
                    x = base - math.log1p(-u * (1 - math.exp(-rate * delta))) / rate
                else:
                    x = stream.exp() / rate
                last, elapsed = x, elapsed + x
                k += 1
            elif a != MARKOVIAN and ma.actions[s]:
                if scheduler.choose(ma, s, last, elapsed) != a:
                    ok = False
                    break
        if not ok:
            continue
        kept += 1
        hits += scheduler.choose(ma, states[-1], last, elapsed) == action
    if kept == 0:
        raise ValueError("no sample agrees with the observed path")
    return hits / kept


# ---------------------------------------------------------------------------
# analytic evaluation under the observer's view


def ds_bounded_probability(ma: MarkovAutomaton, scheduler: ThresholdScheduler, goal: Iterable[int],
                           steps: StepInterval, delta: float) -> float:
    """Probability of reaching ``goal`` within ``steps`` digitization steps on the digitization.

    Choices follow the digital view of ``scheduler``: at a probabilistic state
    each action is taken with its :func:`abstraction_weight` in digital mode,
    which only depends on the cell of the last Markovian sojourn.
    """
    if steps.hi is None:
        raise ValueError("the step interval must be bounded")
    goal = frozenset(goal)
    for r in scheduler.rules:
        if r.kind == ELAPSED:
            raise UnsupportedSchedulerShape("elapsed-time rules are not supported here")
    stay = {s: math.exp(-ma.markovian[s].rate * delta) for s in range(ma.num_states)
            if not ma.actions[s] and ma.markovian[s] is not None}
    success = 0.0
    # mass keyed by (state, last Markovian state, its number of self-loops)
    layer: dict[tuple, float] = {(ma.initial, -1, 0): 1.0}
    waiting: dict[tuple, float] = {}
    for count in range(steps.hi + 1):
        frontier = dict(layer)
        layer = {}
        while frontier:
            nxt: dict[tuple, float] = {}
            for (s, src, m), p in frontier.items():
                if s in goal and count >= steps.lo:
                    success += p
                    continue
                if not ma.actions[s]:
                    waiting[(s, src, m)] = waiting.get((s, src, m), 0.0) + p
                    continue
                for a, dist in ma.actions[s]:
                    w = _digital_choice(ma, scheduler, s, src, m, a, delta)
                    if w == 0.0:
                        continue
                    for t, q in dist:
                        key = (t, src, m)
                        nxt[key] = nxt.get(key, 0.0) + p * w * q
            frontier = nxt
        # one digitization step out of every Markovian state
        for (s, src, m), p in waiting.items():
            if ma.markovian[s] is None:
                continue
            e = stay[s]
            own = (s, s, m + 1) if src == s else (s, s, 1)
            layer[own] = layer.get(own, 0.0) + p * e
            leave_m = m if src == s else 0
            for t, q in ma.markovian[s].distribution:
                key = (t, s, leave_m)
                layer[key] = layer.get(key, 0.0) + p * (1 - e) * q
        waiting = {}
    return success


def _digital_choice(ma, scheduler, s, src, m, action, delta) -> float:
    rules = scheduler.rules_at(s)
    if not rules:
        return 1.0 if scheduler.choose(ma, s, 0.0, 0.0) == action else 0.0
    if src < 0:
        return 1.0 if scheduler.choose(ma, s, 0.0, 0.0) == action else 0.0
    path = [src, MARKOVIAN] * (m + 1) + [s]
    return abstraction_weight(ma, scheduler, path, action, DIGITAL, delta)


def markov_chain_value(ma_or_mdp, policy: Mapping[int, Mapping[str, float]], goal: Iterable[int],
                       reward: int | None = None) -> float:
    """Reach probability (``reward is None``) or expected reward to ``goal`` under a randomized memoryless policy.

    Works on an MDP; ``policy[s]`` maps action names to probabilities and is
    only needed at states with several choices.
    """
    mdp = ma_or_mdp
    goal = frozenset(goal)
    n = mdp.num_states
    a = np.eye(n)
    b = np.zeros(n)
    edges: list[list[int]] = [[] for _ in range(n)]
    for s in range(n):
        row = mdp.choices[s]
        probs = policy.get(s, {row[0][0]: 1.0}) if len(row) > 1 else {row[0][0]: 1.0}
        edges[s] = [t for name, dist in row if probs.get(name, 0.0) for t in dist.targets]
    live = backward_reachable(n, edges, goal)
    if reward is not None:
        # states that miss the goal collect forever: zero if no reward is ever earned there
        def earns(s):
            row = mdp.choices[s]
            probs = policy.get(s, {row[0][0]: 1.0}) if len(row) > 1 else {row[0][0]: 1.0}
            return any(w and mdp.reward(reward, s, name) for name, w in probs.items())

        endless = {s for s in range(n) if s not in live}
        if any(earns(t) for t in forward_reachable(n, edges, endless)):
            bad = {s for s in endless if any(earns(t) for t in forward_reachable(n, edges, [s]))}
            if mdp.initial in backward_reachable(n, edges, bad):
                return math.inf
            live -= backward_reachable(n, edges, bad)
    for s in range(n):
        if s not in live:
            continue
        if s in goal:
            b[s] = 1.0 if reward is None else 0.0
            continue
        row = mdp.choices[s]
        probs = policy.get(s, {row[0][0]: 1.0}) if len(row) > 1 else {row[0][0]: 1.0}
        for name, dist in row:
            w = probs.get(name, 0.0)
            if not w:
                continue
            for t, p in dist:
                if t in live:
                    a[s, t] -= w * p
            if reward is not None:
                b[s] += w * mdp.reward(reward, s, name)
    return float(np.linalg.solve(a, b)[mdp.initial])
