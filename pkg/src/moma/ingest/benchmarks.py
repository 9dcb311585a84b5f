"""Generators for the four benchmark families.

Each generator explores a small symbolic transition system breadth-first and
returns an explicit :class:`MarkovAutomaton` together with the label sets and
reward functions its standard objectives refer to.

Rate constants that the family descriptions leave open are fixed here:

* jobs: job ``i`` (1-based) has rate ``1 + 2 (i-1)/(N-1)`` (rate 1 when ``N = 1``).
* polling: arrivals at both stations have rate :data:`POLLING_ARRIVAL_RATE`;
  a job of type ``j`` is served with rate ``2 j``.
* stream: packages arrive with rate :data:`STREAM_RECEIVE_RATE` and are played
  with rate :data:`STREAM_PLAY_RATE`.
* mutex: a critical section for a job of type ``j`` is left with rate ``j``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Hashable

from ..errors import InvalidParams
from ..model import Distribution, MarkovAutomaton, MarkovianTransition, RewardFunction, MARKOVIAN

POLLING_ARRIVAL_RATE = 4.0
POLLING_ERASE_PROB = 0.9
STREAM_RECEIVE_RATE = 3.0
STREAM_PLAY_RATE = 5.0
STREAM_FORCED_START = 0.01

FAMILIES = ("jobs", "polling", "stream", "mutex")


@dataclass(frozen=True)
class BenchmarkParams:
    family: str
    n: int
    k: int | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidParams(f"unknown family {self.family!r}")
        if self.n < 1:
            raise InvalidParams("N must be at least 1")
        if self.family in ("jobs", "polling"):
            if self.k is None or self.k < 1:
                raise InvalidParams(f"{self.family} needs K >= 1")
            if self.family == "jobs" and self.k > self.n:
                raise InvalidParams("jobs requires K <= N")


@dataclass(frozen=True)
class Benchmark:
    ma: MarkovAutomaton
    labels: dict[str, frozenset[int]]
    rewards: dict[str, RewardFunction]
    objectives: dict[str, str]

    def __iter__(self):
        # allows ``ma, labels, rewards = generate_benchmark(...)``
        return iter((self.ma, self.labels, self.rewards))


# a symbolic step: either ("P", [(action, [(prob, target), ...]), ...]) or
# ("M", [(rate, target), ...])
Step = tuple[str, list]


def explore(
    initial: Hashable,
    step: Callable[[Hashable], Step],
    labels: Callable[[Hashable], set[str]],
    state_rewards: dict[str, Callable[[Hashable], float]] | None = None,
    action_rewards: dict[str, Callable[[Hashable, str], float]] | None = None,
) -> MarkovAutomaton:
    """Breadth-first construction of an explicit automaton."""
    state_rewards = state_rewards or {}
    action_rewards = action_rewards or {}
    index = {initial: 0}
    order = [initial]
    steps = []
    queue = deque([initial])
    while queue:
        s = queue.popleft()
        kind, rows = step(s)
        steps.append((kind, rows))
        targets = [t for _, row in rows for _, t in row] if kind == "P" else [t for _, t in rows]
        for t in targets:
            if t not in index:
                index[t] = len(order)
                order.append(t)
                queue.append(t)
    actions = []
    markovian = []
    for s, (kind, rows) in zip(order, steps):
        if kind == "P":
            actions.append(tuple((a, Distribution.of((index[t], p) for p, t in row)) for a, row in rows))
            markovian.append(None)
        else:
            total = math.fsum(r for r, _ in rows)
            dist = Distribution.of((index[t], r / total) for r, t in rows)
            actions.append(())
            markovian.append(MarkovianTransition(total, dist))
    rewards = []
    names = list(dict.fromkeys(list(state_rewards) + list(action_rewards)))
    for name in names:
        sr, ar = {}, {}
        if name in state_rewards:
            f = state_rewards[name]
            for i, s in enumerate(order):
                if markovian[i] is not None and (v := f(s)):
                    sr[i] = float(v)
        if name in action_rewards:
            g = action_rewards[name]
            for i, s in enumerate(order):
                names_here = [a for a, _ in actions[i]] or [MARKOVIAN]
                for a in names_here:
                    if v := g(s, a):
                        ar[(i, a)] = float(v)
        rewards.append(RewardFunction(name, sr, ar))
    return MarkovAutomaton(
        num_states=len(order),
        initial=0,
        actions=tuple(actions),
        markovian=tuple(markovian),
        rewards=tuple(rewards),
        labels=tuple(frozenset(labels(s)) for s in order),
    )


def _package(ma: MarkovAutomaton, objectives: dict[str, str]) -> Benchmark:
    labels = {lab: ma.states_with_label(lab) for lab in sorted(ma.all_labels())}
    rewards = {r.name: r for r in ma.rewards}
    return Benchmark(ma, labels, rewards, objectives)


# ---------------------------------------------------------------------------
# jobs


def job_rates(n: int) -> list[float]:
    if n == 1:
        return [1.0]
    return [1.0 + 2.0 * i / (n - 1) for i in range(n)]


def jobs(n: int, k: int) -> Benchmark:
    """``n`` exponential jobs on ``k`` identical processors, preemptive.

    Whenever a job finishes, the scheduler picks which ``min(k, remaining)``
    jobs run next.  State ``("pick", R)`` holds the remaining jobs ``R``;
    ``("run", R, A)`` runs the subset ``A``.
    """
    BenchmarkParams("jobs", n, k)
    rates = job_rates(n)
    everything = frozenset(range(n))
    half = math.ceil(n / 2)

    def step(s):
        if s == ("done",):
            return "M", [(1.0, s)]
        if s[0] == "pick":
            remaining = s[1]
            size = min(k, len(remaining))
            rows = []
            for chosen in combinations(sorted(remaining), size):
                name = "run_" + "_".join(str(j + 1) for j in chosen)
                rows.append((name, [(1.0, ("run", remaining, frozenset(chosen)))]))
            return "P", rows
        _, remaining, running = s
        rows = []
        for j in sorted(running):
            rest = remaining - {j}
            rows.append((rates[j], ("pick", rest) if rest else ("done",)))
        return "M", rows

    def remaining_of(s):
        return frozenset() if s == ("done",) else s[1]

    def labels(s):
        rem = remaining_of(s)
        out = set()
        if not rem:
            out.add("done")
        if n - len(rem) >= half:
            out.add("half")
        if n >= 2 and 0 not in rem and (n - 1) in rem:
            out.add("low_first")
        return out

    ma = explore(
        ("pick", everything),
        step,
        labels,
        state_rewards={
            "time": lambda s: 1.0,
            "waiting": lambda s: (len(s[1]) - len(s[2])) if s[0] == "run" else 0.0,
        },
    )
    t_all = n / (2 * k)
    t_half = n / (4 * k)
    objectives = {
        "E1": 'Tmin[F "done"]',
        "E2": 'Tmin[F "half"]',
        "E3": 'Rmin{"waiting"}[F "done"]',
        "P": 'Pmin[F "low_first"]',
        "P1": f'Pmax[F[0,{t_all:g}] "done"]',
        "P2": f'Pmax[F[0,{t_half:g}] "half"]',
    }
    return _package(ma, objectives)


# ---------------------------------------------------------------------------
# polling


def polling(n: int, k: int) -> Benchmark:
    """Server polling two stations whose queues hold up to ``k`` jobs of ``n`` types.

    A station whose queue is not full receives jobs with rate
    :data:`POLLING_ARRIVAL_RATE`; the arriving job's type is then chosen
    nondeterministically.  An idle server picks a nonempty queue and starts
    serving its head; removing the job from the queue fails with probability
    ``1 - POLLING_ERASE_PROB``, in which case the job stays queued.
    A state is ``(queue1, pending1, queue2, pending2, server)`` with ``server``
    either ``0`` (idle) or the type being served.

    Reachable states: 990 for ``(3, 2)``, 9522 for ``(3, 3)``; the Markovian
    state counts are 508 and 4801.
    """
    BenchmarkParams("polling", n, k)

    def step(s):
        q1, p1, q2, p2, server = s
        queues, pending = [q1, q2], [p1, p2]

        def make(i, q, p, srv):
            qs, ps = list(queues), list(pending)
            qs[i], ps[i] = q, p
            return (qs[0], ps[0], qs[1], ps[1], srv)

        rows = []
        for i in range(2):
            if pending[i]:
                for j in range(1, n + 1):
                    rows.append((f"arrive{i + 1}_{j}", [(1.0, make(i, queues[i] + (j,), False, server))]))
        if server == 0:
            for i in range(2):
                q = queues[i]
                if not pending[i] and q:
                    head = q[0]
                    rows.append((f"poll{i + 1}", [
                        (POLLING_ERASE_PROB, make(i, q[1:], False, head)),
                        (1.0 - POLLING_ERASE_PROB, make(i, q, False, head)),
                    ]))
        if rows:
            return "P", rows
        for i in range(2):
            if len(queues[i]) < k:
                rows.append((POLLING_ARRIVAL_RATE, make(i, queues[i], True, server)))
        if server:
            rows.append((2.0 * server, (q1, p1, q2, p2, 0)))
        return "M", rows

    def labels(s):
        out = set()
        if len(s[0]) == k:
            out.add("full1")
        if len(s[2]) == k:
            out.add("full2")
        return out

    ma = explore(
        ((), False, (), False, 0),
        step,
        labels,
        state_rewards={
            "waiting1": lambda s: float(len(s[0])),
            "waiting2": lambda s: float(len(s[2])),
        },
        action_rewards={
            "served1": lambda s, a: 1.0 if a == "poll1" else 0.0,
            "served2": lambda s, a: 1.0 if a == "poll2" else 0.0,
        },
    )
    objectives = {
        "E1": 'Rmax{"served1"}[F "full1"]',
        "E2": 'Rmax{"served2"}[F "full2"]',
        "E3": 'Rmin{"waiting1"}[F "full1"]',
        "E4": 'Rmin{"waiting2"}[F "full2"]',
        "P1": 'Pmin[F[0,2] "full1"]',
        "P2": 'Pmin[F[0,2] "full2"]',
    }
    return _package(ma, objectives)


# ---------------------------------------------------------------------------
# stream


def stream(n: int) -> Benchmark:
    """Video client receiving ``n`` packages into a buffer.

    States: ``("wait", r, p)`` buffering with ``r`` received and ``p`` played,
    ``("play", r, p)`` playing, ``("choose", r, p)`` deciding after a receipt,
    ``("start", p)`` forced start once all packages are in, ``("check", r)``
    after the buffer ran empty (an underrun unless everything was played),
    and ``("done",)``.
    """
    BenchmarkParams("stream", n)

    def step(s):
        tag = s[0]
        if tag == "done":
            return "M", [(1.0, s)]
        if tag == "wait":
            _, r, p = s
            nxt = ("choose", r + 1, p) if r + 1 < n else ("start", p)
            return "M", [(STREAM_RECEIVE_RATE, nxt)]
        if tag == "play":
            _, r, p = s
            rows = []
            if r < n:
                rows.append((STREAM_RECEIVE_RATE, ("play", r + 1, p)))
            rows.append((STREAM_PLAY_RATE, ("check", r) if p + 1 == r else ("play", r, p + 1)))
            return "M", rows
        if tag == "choose":
            _, r, p = s
            return "P", [
                ("start", [(1.0, ("play", r, p))]),
                ("buffer", [(1.0 - STREAM_FORCED_START, ("wait", r, p)), (STREAM_FORCED_START, ("play", r, p))]),
            ]
        if tag == "start":
            return "P", [("start", [(1.0, ("play", n, s[1]))])]
        r = s[1]
        if r == n:
            return "P", [("finish", [(1.0, ("done",))])]
        return "P", [("pause", [(1.0, ("wait", r, r))])]

    def labels(s):
        out = set()
        if s[0] == "done":
            out.add("done")
        if s[0] == "play":
            out.add("playing")
        if s[0] == "check" and s[1] < n:
            out.add("underrun")
        return out

    ma = explore(
        ("wait", 0, 0),
        step,
        labels,
        state_rewards={"buffering": lambda s: 1.0 if s[0] == "wait" else 0.0},
        action_rewards={"underruns": lambda s, a: 1.0 if a == "pause" else 0.0},
    )
    objectives = {
        "E1": 'Rmin{"buffering"}[F "done"]',
        "E2": 'Rmin{"underruns"}[F "done"]',
        "E3": 'Tmin[F "playing"]',
        "P1": 'Pmin[F[0,2] "underrun"]',
        "P2": 'Pmax[F[0,0.5] "playing"]',
    }
    return _package(ma, objectives)


# ---------------------------------------------------------------------------
# mutex

PROCESSES = 3


def mutex(n: int) -> Benchmark:
    """Three processes competing for one critical section.

    An idle process nondeterministically picks a job type ``j`` and starts
    waiting.  When the section is free, one waiting process is admitted
    uniformly at random.  The section is left with rate ``j``.  A process is
    encoded as ``0`` (idle), ``("wait", j)`` or ``("crit", j)``.
    """
    BenchmarkParams("mutex", n)

    def step(s):
        rows = []
        for i, ph in enumerate(s):
            if ph == 0:
                for j in range(1, n + 1):
                    nxt = list(s)
                    nxt[i] = ("wait", j)
                    rows.append((f"pick{i + 1}_{j}", [(1.0, tuple(nxt))]))
        if rows:
            return "P", rows
        busy = [i for i, ph in enumerate(s) if ph[0] == "crit"]
        if not busy:
            waiting = [i for i, ph in enumerate(s) if ph[0] == "wait"]
            branches = []
            for i in waiting:
                nxt = list(s)
                nxt[i] = ("crit", s[i][1])
                branches.append((1.0 / len(waiting), tuple(nxt)))
            return "P", [("grant", branches)]
        i = busy[0]
        nxt = list(s)
        nxt[i] = 0
        return "M", [(float(s[i][1]), tuple(nxt))]

    def labels(s):
        return {f"crit{i + 1}" for i, ph in enumerate(s) if ph != 0 and ph[0] == "crit"}

    ma = explore((0,) * PROCESSES, step, labels)
    objectives = {}
    for i in range(PROCESSES):
        objectives[f"P{i + 1}"] = f'Pmax[F[0,0.5] "crit{i + 1}"]'
        objectives[f"P{i + 4}"] = f'Pmax[F[0,1] "crit{i + 1}"]'
    return _package(ma, objectives)


def generate_benchmark(params: BenchmarkParams) -> Benchmark:
    if params.family == "jobs":
        return jobs(params.n, params.k)
    if params.family == "polling":
        return polling(params.n, params.k)
    if params.family == "stream":
        return stream(params.n)
    return mutex(params.n)
