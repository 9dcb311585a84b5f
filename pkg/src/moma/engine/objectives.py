"""Objective and query types.

An :class:`Objective` pairs one of four kinds with an optimization direction and
an optional threshold.  Internally every objective is maximized; minimizing
objectives are handled by negating their values (see :class:`NormalizedObjective`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence, Union

from ..transform import StepInterval, TimeInterval


class Direction(str, Enum):
    MAX = "max"
    MIN = "min"


RELATIONS = ("<", "<=", ">", ">=")


@dataclass(frozen=True)
class Threshold:
    relation: str
    value: float

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise ValueError(f"unknown relation {self.relation!r}")

    @property
    def strict(self) -> bool:
        return self.relation in ("<", ">")

    @property
    def direction(self) -> Direction:
        return Direction.MAX if self.relation in (">", ">=") else Direction.MIN

    def holds(self, value: float) -> bool:
        return {
            "<": value < self.value,
            "<=": value <= self.value,
            ">": value > self.value,
            ">=": value >= self.value,
        }[self.relation]


@dataclass(frozen=True)
class UntimedReach:
    goal: frozenset[int]


@dataclass(frozen=True)
class TimedReach:
    goal: frozenset[int]
    interval: TimeInterval


@dataclass(frozen=True)
class ExpReward:
    reward: int
    goal: frozenset[int]


@dataclass(frozen=True)
class ExpTime:
    goal: frozenset[int]


Kind = Union[UntimedReach, TimedReach, ExpReward, ExpTime]


@dataclass(frozen=True)
class Objective:
    kind: Kind
    direction: Direction = Direction.MAX
    threshold: Threshold | None = None
    text: str = field(default="", compare=False)

    def __post_init__(self):
        if not self.kind.goal:
            raise ValueError("goal set must be nonempty")
        if self.threshold is not None and self.threshold.direction != self.direction:
            object.__setattr__(self, "direction", self.threshold.direction)

    @property
    def goal(self) -> frozenset[int]:
        return self.kind.goal

    @property
    def is_timed(self) -> bool:
        return isinstance(self.kind, TimedReach) and not self.kind.interval.is_trivial()

    @property
    def is_probability(self) -> bool:
        return isinstance(self.kind, (UntimedReach, TimedReach))

    def describe(self) -> str:
        if self.text:
            return self.text
        k = self.kind
        goal = sorted(k.goal)
        if isinstance(k, UntimedReach):
            return f"P{self.direction.value}[F {goal}]"
        if isinstance(k, TimedReach):
            return f"P{self.direction.value}[F{k.interval} {goal}]"
        if isinstance(k, ExpReward):
            return f"R{self.direction.value}{{{k.reward}}}[F {goal}]"
        return f"T{self.direction.value}[F {goal}]"


def reach(goal, direction=Direction.MAX, threshold=None, interval: TimeInterval | None = None) -> Objective:
    goal = frozenset(goal)
    kind = UntimedReach(goal) if interval is None else TimedReach(goal, interval)
    return Objective(kind, Direction(direction), threshold)


class QueryKind(str, Enum):
    ACHIEVABILITY = "achieve"
    NUMERICAL = "numerical"
    PARETO = "pareto"


@dataclass(frozen=True)
class QuerySpec:
    kind: QueryKind
    objectives: tuple[Objective, ...]
    optimize: int | None = None
    text: str = field(default="", compare=False)

    @property
    def has_timed(self) -> bool:
        return any(o.is_timed for o in self.objectives)


def check_shape(kind: QueryKind, objectives: Sequence[Objective]) -> int | None:
    """Validate the threshold pattern of a query; return the optimized index."""
    from ..errors import MixedQueryShape

    if not objectives:
        raise MixedQueryShape("a query needs at least one objective")
    free = [i for i, o in enumerate(objectives) if o.threshold is None]
    if kind is QueryKind.ACHIEVABILITY and free:
        raise MixedQueryShape(f"achievability objectives {free} lack thresholds")
    if kind is QueryKind.PARETO and len(free) != len(objectives):
        raise MixedQueryShape("pareto objectives must be direction-only")
    if kind is QueryKind.NUMERICAL:
        if len(free) != 1:
            raise MixedQueryShape("numerical queries need exactly one direction-only objective")
        return free[0]
    return None


@dataclass(frozen=True)
class NormalizedObjective:
    """Objective in maximize form.

    ``sign`` is ``+1`` for maximizing objectives and ``-1`` for minimizing ones;
    values handled internally are ``sign * true value``.  ``reward`` indexes the
    model's reward tables (``None`` for reachability), ``time_reward`` marks the
    derived sojourn-time reward, and ``steps`` holds the step-count interval of a
    digitized timed objective (``None`` for untimed ones).
    """

    goal: frozenset[int]
    sign: int
    reward: int | None = None
    time_reward: bool = False
    steps: StepInterval | None = None
    threshold: float | None = None
    strict: bool = False

    @property
    def is_reward(self) -> bool:
        return self.reward is not None or self.time_reward

    @property
    def minimizing(self) -> bool:
        return self.sign < 0

    def to_internal(self, value: float) -> float:
        return self.sign * value

    def to_external(self, value: float) -> float:
        v = self.sign * value
        return 0.0 if v == 0 else v


def normalize_objective(obj: Objective, steps: StepInterval | None = None) -> NormalizedObjective:
    sign = 1 if obj.direction is Direction.MAX else -1
    thr = None if obj.threshold is None else sign * obj.threshold.value
    strict = obj.threshold is not None and obj.threshold.strict
    k = obj.kind
    if isinstance(k, (UntimedReach, TimedReach)):
        return NormalizedObjective(k.goal, sign, steps=steps, threshold=thr, strict=strict)
    if isinstance(k, ExpReward):
        return NormalizedObjective(k.goal, sign, reward=k.reward, threshold=thr, strict=strict)
    return NormalizedObjective(k.goal, sign, time_reward=True, threshold=thr, strict=strict)


def is_finite(x: float) -> bool:
    return not (math.isinf(x) or math.isnan(x))
