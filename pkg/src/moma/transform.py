"""Reductions from Markov automata to MDPs.

``underlying_mdp`` forgets timing; ``digitize`` discretizes time into steps of
length ``delta``.  Time intervals of timed reachability objectives are mapped to
step-count intervals, and ``error_bounds`` gives the two-sided error the
discretization introduces for such an interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import reduce
from typing import Sequence

from .errors import Diverges, NotWellFormed
from .model import MARKOVIAN, Distribution, MarkovAutomaton, Mdp

#: Relative tolerance used when checking that an endpoint is a multiple of delta.
MULTIPLE_TOL = 1e-9

#: Smallest digitization constant choose_delta will return.
MIN_DELTA = 1e-12


@dataclass(frozen=True)
class TimeInterval:
    lower: float = 0.0
    upper: float = math.inf

    def __post_init__(self):
        if not (self.lower >= 0.0) or not (self.upper > self.lower):
            raise ValueError(f"invalid time interval [{self.lower}, {self.upper}]")

    @property
    def bounded(self) -> bool:
        return not math.isinf(self.upper)

    def is_trivial(self) -> bool:
        return self.lower == 0.0 and not self.bounded

    def contains(self, t: float) -> bool:
        return self.lower <= t <= self.upper

    def __str__(self) -> str:
        hi = "inf" if not self.bounded else f"{self.upper:g}"
        return f"[{self.lower:g},{hi}]"


@dataclass(frozen=True)
class StepInterval:
    """Consecutive step counts ``lo .. hi`` (``hi`` is ``None`` for no upper bound)."""

    lo: int
    hi: int | None

    def __contains__(self, k: int) -> bool:
        return k >= self.lo and (self.hi is None or k <= self.hi)

    @property
    def is_all(self) -> bool:
        return self.lo == 0 and self.hi is None


@dataclass(frozen=True)
class DigitizedObjective:
    interval: TimeInterval
    steps: StepInterval
    eps_down: float
    eps_up: float


@dataclass(frozen=True)
class DigitizedModel:
    mdp: Mdp
    delta: float
    lambda_max: float
    objectives: tuple[DigitizedObjective, ...]


def _ratio(t: float, delta: float) -> int:
    """``t / delta`` as a natural number, or ``-1`` if it is not one."""
    q = t / delta
    k = round(q)
    if abs(q - k) <= MULTIPLE_TOL * max(1.0, abs(q)) and k >= 0:
        return int(k)
    return -1


def is_well_formed(interval: TimeInterval, delta: float) -> bool:
    if _ratio(interval.lower, delta) < 0:
        return False
    return not interval.bounded or _ratio(interval.upper, delta) >= 0


def digitize_interval(interval: TimeInterval, delta: float) -> StepInterval:
    if not is_well_formed(interval, delta):
        raise NotWellFormed(interval, delta)
    da = _ratio(interval.lower, delta)
    db = _ratio(interval.upper, delta) if interval.bounded else None
    lo = da + 1 if da > 0 else 0
    return StepInterval(lo, db)


def error_bounds(interval: TimeInterval, delta: float, lambda_max: float) -> tuple[float, float]:
    """Return ``(eps_down, eps_up)`` for ``interval`` under digitization ``delta``."""
    if not is_well_formed(interval, delta):
        raise NotWellFormed(interval, delta)
    lam = lambda_max
    a, b = interval.lower, interval.upper
    down = 0.0
    up = 0.0
    if a > 0:
        da = _ratio(a, delta)
        down = -math.expm1(da * math.log1p(lam * delta) - lam * a)
        up += 1.0 - math.exp(-lam * delta)
    if interval.bounded:
        db = _ratio(b, delta)
        up += -math.expm1(db * math.log1p(lam * delta) - lam * b)
    clip = lambda x: min(1.0, max(0.0, x))  # noqa: E731
    return clip(down), clip(up)


def _reward_tables(ma: MarkovAutomaton, scale) -> tuple[tuple[str, dict], ...]:
    tables = []
    for rf in ma.rewards:
        table: dict[tuple[int, str], float] = {}
        for s in range(ma.num_states):
            if ma.actions[s]:
                for a, _ in ma.actions[s]:
                    v = rf.action_reward(s, a)
                    if v:
                        table[(s, a)] = v
            else:
                m = ma.markovian[s]
                v = rf.action_reward(s, MARKOVIAN) + rf.state_reward(s) / m.rate
                v *= scale(m.rate)
                if v:
                    table[(s, MARKOVIAN)] = v
        tables.append((rf.name, table))
    return tuple(tables)


def underlying_mdp(ma: MarkovAutomaton) -> Mdp:
    """Drop timing: Markovian transitions become the reserved action."""
    choices = []
    for s in range(ma.num_states):
        if ma.actions[s]:
            choices.append(ma.actions[s])
        else:
            choices.append(((MARKOVIAN, ma.markovian[s].distribution),))
    return Mdp(ma.num_states, ma.initial, tuple(choices), _reward_tables(ma, lambda rate: 1.0), ma.labels)


def digitize(ma: MarkovAutomaton, delta: float) -> Mdp:
    """Digitization with constant ``delta``; Markovian states become step states."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    choices = []
    step_states = []
    for s in range(ma.num_states):
        if ma.actions[s]:
            choices.append(ma.actions[s])
            continue
        step_states.append(s)
        m = ma.markovian[s]
        stay = math.exp(-m.rate * delta)
        move = -math.expm1(-m.rate * delta)
        probs = {t: p * move for t, p in m.distribution}
        probs[s] = probs.get(s, 0.0) + stay
        choices.append(((MARKOVIAN, Distribution.of(probs)),))
    rewards = _reward_tables(ma, lambda rate: -math.expm1(-rate * delta))
    return Mdp(ma.num_states, ma.initial, tuple(choices), rewards, ma.labels, frozenset(step_states))


def _as_fraction(x: float) -> Fraction:
    return Fraction(x).limit_denominator(10**9)


def endpoint_gcd(intervals: Sequence[TimeInterval]) -> Fraction:
    """Greatest common divisor of all positive finite endpoints (1 if there are none)."""
    ends = []
    for iv in intervals:
        for t in (iv.lower, iv.upper):
            if t > 0 and not math.isinf(t):
                ends.append(_as_fraction(t))
    if not ends:
        return Fraction(1)

    def fgcd(x: Fraction, y: Fraction) -> Fraction:
        return Fraction(math.gcd(x.numerator * y.denominator, y.numerator * x.denominator),
                        x.denominator * y.denominator)

    return reduce(fgcd, ends)


def choose_delta(ma_or_lambda, intervals: Sequence[TimeInterval], eta_digi: float) -> float:
    """Largest ``g / 2**k`` keeping every interval's error sum within ``eta_digi``.

    ``g`` is the gcd of all finite endpoints, so every interval is well-formed.
    The first argument is a Markov automaton or directly its maximal exit rate.
    """
    if not eta_digi > 0:
        raise ValueError("error budget must be positive")
    lam = ma_or_lambda.lambda_max() if isinstance(ma_or_lambda, MarkovAutomaton) else float(ma_or_lambda)
    delta = float(endpoint_gcd(intervals))
    while True:
        worst = max((sum(error_bounds(iv, delta, lam)) for iv in intervals), default=0.0)
        if worst <= eta_digi:
            return delta
        delta /= 2.0
        if delta < MIN_DELTA:
            raise Diverges(delta)


def digitized_model(ma: MarkovAutomaton, intervals: Sequence[TimeInterval], delta: float) -> DigitizedModel:
    lam = ma.lambda_max()
    objs = []
    for iv in intervals:
        steps = digitize_interval(iv, delta)
        down, up = error_bounds(iv, delta, lam)
        objs.append(DigitizedObjective(iv, steps, down, up))
    return DigitizedModel(digitize(ma, delta), delta, lam, tuple(objs))
