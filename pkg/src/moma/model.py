"""Core data model: Markov automata, MDPs, rewards and model validation.

States are dense integer indices ``0 .. num_states-1``.  A state of a Markov
automaton owns an ordered tuple of named probabilistic actions and at most one
Markovian transition (an exit rate plus a branching distribution).  After
:func:`normalize`, every state has exactly one of the two kinds: states with
actions are *probabilistic* (PS), the others are *Markovian* (MS).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .errors import InvalidModel, NotMarkovian

#: Reserved action name for the Markovian transition of a state.
MARKOVIAN = "⊥"

#: Absolute tolerance on distribution sums.
PROB_TOL = 1e-9


@dataclass(frozen=True)
class Distribution:
    """Sparse probability distribution over state indices, sorted by target."""

    entries: tuple[tuple[int, float], ...]

    @classmethod
    def of(cls, pairs: Mapping[int, float] | Iterable[tuple[int, float]]) -> "Distribution":
        if isinstance(pairs, Mapping):
            pairs = pairs.items()
        merged: dict[int, float] = {}
        for target, p in pairs:
            merged[int(target)] = merged.get(int(target), 0.0) + float(p)
        return cls(tuple(sorted(merged.items())))

    @classmethod
    def dirac(cls, target: int) -> "Distribution":
        return cls(((int(target), 1.0),))

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def targets(self) -> tuple[int, ...]:
        return tuple(t for t, _ in self.entries)

    def total(self) -> float:
        return math.fsum(p for _, p in self.entries)

    def prob(self, target: int) -> float:
        for t, p in self.entries:
            if t == target:
                return p
        return 0.0

    def is_dirac(self) -> bool:
        return len(self.entries) == 1 and abs(self.entries[0][1] - 1.0) <= PROB_TOL


@dataclass(frozen=True)
class MarkovianTransition:
    rate: float
    distribution: Distribution


@dataclass(frozen=True)
class RewardFunction:
    """Named reward structure.

    ``state_rewards`` are rates earned per time unit of sojourn; ``action_rewards``
    are earned once per transition and keyed by ``(state, action name)`` where the
    name may be :data:`MARKOVIAN`.
    """

    name: str
    state_rewards: Mapping[int, float] = field(default_factory=dict)
    action_rewards: Mapping[tuple[int, str], float] = field(default_factory=dict)

    def state_reward(self, s: int) -> float:
        return self.state_rewards.get(s, 0.0)

    def action_reward(self, s: int, action: str) -> float:
        return self.action_rewards.get((s, action), 0.0)


@dataclass(frozen=True)
class MarkovAutomaton:
    num_states: int
    initial: int
    actions: tuple[tuple[tuple[str, Distribution], ...], ...]
    markovian: tuple[MarkovianTransition | None, ...]
    rewards: tuple[RewardFunction, ...] = ()
    labels: tuple[frozenset[str], ...] = ()

    def __post_init__(self):
        if not self.labels:
            object.__setattr__(self, "labels", tuple(frozenset() for _ in range(self.num_states)))

    @property
    def action_names(self) -> tuple[str, ...]:
        names = {MARKOVIAN}
        for row in self.actions:
            names.update(a for a, _ in row)
        return tuple(sorted(names))

    def enabled(self, s: int) -> tuple[str, ...]:
        if self.actions[s]:
            return tuple(a for a, _ in self.actions[s])
        if self.markovian[s] is not None:
            return (MARKOVIAN,)
        return ()

    def distribution(self, s: int, action: str) -> Distribution:
        if action == MARKOVIAN and self.markovian[s] is not None:
            return self.markovian[s].distribution
        for name, dist in self.actions[s]:
            if name == action:
                return dist
        raise KeyError((s, action))

    def is_probabilistic(self, s: int) -> bool:
        return bool(self.actions[s])

    def states_with_label(self, label: str) -> frozenset[int]:
        return frozenset(s for s in range(self.num_states) if label in self.labels[s])

    def all_labels(self) -> frozenset[str]:
        out: set[str] = set()
        for ls in self.labels:
            out |= ls
        return frozenset(out)

    def reward_index(self, name: str) -> int:
        for i, r in enumerate(self.rewards):
            if r.name == name:
                return i
        raise KeyError(name)

    def lambda_max(self) -> float:
        """Largest exit rate over Markovian states (0 if there are none)."""
        rates = [m.rate for s, m in enumerate(self.markovian) if m is not None and not self.actions[s]]
        return max(rates, default=0.0)


@dataclass(frozen=True)
class Mdp:
    """Discrete-time MDP.

    ``choices[s]`` is the ordered tuple of ``(action, distribution)`` pairs enabled
    at ``s``.  ``action_rewards`` pairs each reward name with a map from
    ``(state, action)`` to the reward collected when taking that action.
    ``step_states`` marks the states whose outgoing step advances the step
    counter of digitization (``None`` means every state counts).
    """

    num_states: int
    initial: int
    choices: tuple[tuple[tuple[str, Distribution], ...], ...]
    action_rewards: tuple[tuple[str, Mapping[tuple[int, str], float]], ...] = ()
    labels: tuple[frozenset[str], ...] = ()
    step_states: frozenset[int] | None = None

    def __post_init__(self):
        if not self.labels:
            object.__setattr__(self, "labels", tuple(frozenset() for _ in range(self.num_states)))

    @property
    def action_names(self) -> tuple[str, ...]:
        return tuple(sorted({a for row in self.choices for a, _ in row}))

    def prob(self, s: int, action: str, target: int) -> float:
        for name, dist in self.choices[s]:
            if name == action:
                return dist.prob(target)
        return 0.0

    def reward(self, index: int, s: int, action: str) -> float:
        return self.action_rewards[index][1].get((s, action), 0.0)

    def states_with_label(self, label: str) -> frozenset[int]:
        return frozenset(s for s in range(self.num_states) if label in self.labels[s])


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Issue:
    code: str
    location: str
    message: str


@dataclass
class ValidationReport:
    errors: list[Issue] = field(default_factory=list)
    warnings: list[Issue] = field(default_factory=list)
    normalizations_applied: list[Issue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def is_empty(self) -> bool:
        return not (self.errors or self.warnings or self.normalizations_applied)


def _check_distribution(dist: Distribution, n: int, where: str, report: ValidationReport) -> None:
    seen = set()
    for t, p in dist.entries:
        if not 0 <= t < n:
            report.errors.append(Issue("NonStochasticRow", where, f"target {t} out of range"))
        if t in seen:
            report.errors.append(Issue("NonStochasticRow", where, f"target {t} repeated"))
        seen.add(t)
        if not (0.0 < p <= 1.0 + PROB_TOL) or math.isnan(p):
            report.errors.append(Issue("NonStochasticRow", where, f"probability {p} outside (0,1]"))
    total = dist.total()
    if abs(total - 1.0) > PROB_TOL:
        report.errors.append(Issue("NonStochasticRow", where, f"row sums to {total!r}"))


def validate(ma: MarkovAutomaton) -> ValidationReport:
    """Collect every structural error and warning without changing the model."""
    report = ValidationReport()
    n = ma.num_states
    if len(ma.actions) != n or len(ma.markovian) != n or len(ma.labels) != n:
        report.errors.append(Issue("NonStochasticRow", "model", "per-state tables have wrong length"))
        return report
    if not 0 <= ma.initial < n:
        report.errors.append(Issue("NonStochasticRow", "model", f"initial state {ma.initial} out of range"))
    for s in range(n):
        names = [a for a, _ in ma.actions[s]]
        for a in sorted(set(names)):
            if names.count(a) > 1:
                report.errors.append(Issue("DuplicateActionRow", f"state {s}", f"action {a!r} has {names.count(a)} rows"))
        for a, dist in ma.actions[s]:
            if a == MARKOVIAN:
                report.errors.append(Issue("DuplicateActionRow", f"state {s}", "reserved Markovian name used as action"))
            _check_distribution(dist, n, f"state {s} action {a}", report)
        m = ma.markovian[s]
        if m is not None:
            if not (m.rate > 0.0) or math.isinf(m.rate):
                report.errors.append(Issue("NonPositiveRate", f"state {s}", f"rate {m.rate} is not positive and finite"))
            _check_distribution(m.distribution, n, f"state {s} rate", report)
    for r in ma.rewards:
        for s, v in r.state_rewards.items():
            if not v >= 0.0:
                report.errors.append(Issue("NegativeReward", f"reward {r.name} state {s}", f"value {v}"))
            elif v > 0.0 and 0 <= s < n and ma.actions[s]:
                report.warnings.append(Issue("StateRewardOnProbabilisticState", f"reward {r.name} state {s}",
                                             "state reward at a probabilistic state contributes zero"))
        for (s, a), v in r.action_rewards.items():
            if not v >= 0.0:
                report.errors.append(Issue("NegativeReward", f"reward {r.name} state {s} action {a}", f"value {v}"))
    return report


def normalize(ma: MarkovAutomaton) -> tuple[MarkovAutomaton, ValidationReport]:
    """Validate ``ma`` and apply maximal progress and terminal-state completion.

    Raises :class:`InvalidModel` if validation finds errors.
    """
    report = validate(ma)
    if report.errors:
        raise InvalidModel(report)
    markovian = list(ma.markovian)
    for s in range(ma.num_states):
        if ma.actions[s] and markovian[s] is not None:
            markovian[s] = None
            report.normalizations_applied.append(
                Issue("MarkovianDropped", f"state {s}", "Markovian transition removed at probabilistic state"))
        elif not ma.actions[s] and markovian[s] is None:
            markovian[s] = MarkovianTransition(1.0, Distribution.dirac(s))
            report.normalizations_applied.append(
                Issue("SelfLoopAdded", f"state {s}", "terminal state completed with a rate-1 self-loop"))
            report.warnings.append(Issue("TerminalState", f"state {s}", "state had no outgoing transitions"))
    if not report.normalizations_applied:
        return ma, report
    return replace(ma, markovian=tuple(markovian)), report


def classify(ma: MarkovAutomaton) -> tuple[frozenset[int], frozenset[int]]:
    """Return ``(PS, MS)`` for a normalized automaton."""
    ps = frozenset(s for s in range(ma.num_states) if ma.actions[s])
    ms = frozenset(s for s in range(ma.num_states) if not ma.actions[s] and ma.markovian[s] is not None)
    return ps, ms


def exit_rate(ma: MarkovAutomaton, s: int) -> float:
    if ma.actions[s] or ma.markovian[s] is None:
        raise NotMarkovian(f"state {s} is not Markovian")
    return ma.markovian[s].rate


def detect_zeno(ma: MarkovAutomaton) -> frozenset[int]:
    """States from which a run can stay among probabilistic states forever.

    A state is flagged if it can reach, under some scheduler, an end component
    consisting of probabilistic states only.
    """
    from .graphs import maximal_end_components, backward_reachable

    n = ma.num_states
    ps = [bool(ma.actions[s]) for s in range(n)]
    succ = []
    for s in range(n):
        rows = []
        if ps[s]:
            for _, dist in ma.actions[s]:
                targets = dist.targets
                rows.append(targets if all(ps[t] for t in targets) else None)
        succ.append([r for r in rows if r is not None])
    mecs = maximal_end_components(n, succ, allowed=ps)
    trapped = set()
    for states, _ in mecs:
        trapped.update(states)
    if not trapped:
        return frozenset()
    # positive-probability reachability under some scheduler is plain graph reachability
    edges = [[] for _ in range(n)]
    for s in range(n):
        for _, dist in ma.actions[s]:
            edges[s].extend(dist.targets)
        if not ma.actions[s] and ma.markovian[s] is not None:
            edges[s].extend(ma.markovian[s].distribution.targets)
    return frozenset(backward_reachable(n, edges, trapped))


def require_analysable(ma: MarkovAutomaton) -> MarkovAutomaton:
    """Normalize and reject Zeno models; used by analysis entry points."""
    from .errors import ZenoModel

    norm, _ = normalize(ma)
    zeno = detect_zeno(norm)
    if zeno:
        raise ZenoModel(zeno)
    return norm


def build_ma(
    num_states: int,
    initial: int,
    actions: Mapping[int, Sequence[tuple[str, Mapping[int, float]]]] | None = None,
    rates: Mapping[int, tuple[float, Mapping[int, float]]] | None = None,
    labels: Mapping[int, Iterable[str]] | None = None,
    rewards: Sequence[RewardFunction] = (),
) -> MarkovAutomaton:
    """Convenience constructor from plain dictionaries."""
    actions = actions or {}
    rates = rates or {}
    labels = labels or {}
    return MarkovAutomaton(
        num_states=num_states,
        initial=initial,
        actions=tuple(
            tuple((a, Distribution.of(d)) for a, d in actions.get(s, ())) for s in range(num_states)
        ),
        markovian=tuple(
            MarkovianTransition(float(rates[s][0]), Distribution.of(rates[s][1])) if s in rates else None
            for s in range(num_states)
        ),
        rewards=tuple(rewards),
        labels=tuple(frozenset(labels.get(s, ())) for s in range(num_states)),
    )
