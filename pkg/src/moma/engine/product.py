"""Array form of an MDP and its product with objective memory.

Objectives are turned into transition rewards on a product of the MDP with a
few memory bits.  A bit records that a goal set has been visited (inside the
step interval of a step-bounded objective); it is only needed when the goal set
is not closed, otherwise the MDP state itself carries that information.

Step-bounded objectives make the product depend on the step counter ``c``.  Only
the *membership pattern* of ``c`` in the objectives' step intervals matters, and
beyond a cutoff the pattern no longer changes, so transition matrices are
cached per pattern.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix

from ..model import Mdp
from ..transform import StepInterval
from .objectives import NormalizedObjective

MAX_TRACKERS = 30


@dataclass(frozen=True)
class CompiledMdp:
    """CSR view of an :class:`~moma.model.Mdp`.

    Choice ``k`` belongs to state ``owner[k]``; the choices of ``s`` are
    ``state_start[s]:state_start[s+1]`` in the order of ``mdp.choices[s]``.
    """

    mdp: Mdp
    state_start: np.ndarray
    owner: np.ndarray
    trans: csr_matrix
    rewards: np.ndarray
    step: np.ndarray

    @property
    def num_states(self) -> int:
        return self.mdp.num_states

    @property
    def num_choices(self) -> int:
        return len(self.owner)

    @classmethod
    def of(cls, mdp: Mdp) -> "CompiledMdp":
        n = mdp.num_states
        state_start = np.zeros(n + 1, dtype=np.int64)
        indptr = [0]
        indices: list[int] = []
        data: list[float] = []
        rewards = []
        for s in range(n):
            row = mdp.choices[s]
            if not row:
                raise ValueError(f"state {s} has no enabled choice")
            state_start[s + 1] = state_start[s] + len(row)
            for name, dist in row:
                for t, p in dist:
                    if p > 0.0:
                        indices.append(t)
                        data.append(p)
                indptr.append(len(indices))
                rewards.append([table.get((s, name), 0.0) for _, table in mdp.action_rewards])
        m = int(state_start[-1])
        trans = csr_matrix((np.asarray(data, float), np.asarray(indices, np.int64), np.asarray(indptr, np.int64)),
                           shape=(m, n))
        owner = np.repeat(np.arange(n), np.diff(state_start))
        step = np.ones(n, dtype=bool)
        if mdp.step_states is not None:
            step[:] = False
            step[list(mdp.step_states)] = True
        rew = np.asarray(rewards, dtype=float).reshape(m, len(mdp.action_rewards))
        return cls(mdp, state_start, owner, trans, rew, step)

    def choice_name(self, k: int) -> str:
        s = int(self.owner[k])
        return self.mdp.choices[s][k - int(self.state_start[s])][0]

    def is_closed(self, goal: np.ndarray) -> bool:
        """No choice of a goal state can leave the goal set."""
        rows = np.flatnonzero(goal[self.owner])
        if len(rows) == 0:
            return True
        sub = self.trans[rows]
        return bool(np.all(goal[sub.indices]))


@dataclass(frozen=True)
class Tracker:
    goal: frozenset[int]
    steps: StepInterval | None

    def in_steps(self, c: int) -> bool:
        return self.steps is None or c in self.steps


def _in(steps: StepInterval | None, c: int) -> bool:
    return steps is None or c in steps


def _steps_of(obj: NormalizedObjective) -> StepInterval | None:
    if obj.steps is None or obj.steps.is_all:
        return None
    return obj.steps


@dataclass
class Product:
    """Product of a compiled MDP with goal-visit bits for the given objectives."""

    base: CompiledMdp
    objectives: tuple[NormalizedObjective, ...]
    trackers: tuple[Tracker, ...]
    tracker_of: tuple[int | None, ...]
    cutoff: int
    base_state: np.ndarray
    bits: np.ndarray
    keys: np.ndarray
    initial: int
    state_start: np.ndarray
    owner: np.ndarray
    base_choice: np.ndarray
    step_choice: np.ndarray
    offsets: np.ndarray
    goalbits: np.ndarray
    _static: list = field(default_factory=list, repr=False)
    _matrices: dict = field(default_factory=dict, repr=False)
    _rewards: dict = field(default_factory=dict, repr=False)

    @property
    def num_states(self) -> int:
        return len(self.base_state)

    @property
    def num_choices(self) -> int:
        return len(self.owner)

    @property
    def dim(self) -> int:
        return len(self.objectives)

    # patterns --------------------------------------------------------------
    def pattern(self, c: int) -> tuple[bool, ...]:
        return tuple(t.in_steps(min(c, self.cutoff)) for t in self.trackers)

    def _active_mask(self, pattern: tuple[bool, ...]) -> int:
        return sum(1 << k for k, on in enumerate(pattern) if on)

    def matrix(self, pattern: tuple[bool, ...]) -> csr_matrix:
        """Product transition matrix (choices x states) for a successor pattern."""
        if pattern in self._matrices:
            return self._matrices[pattern]
        base = self.base
        rows = base.trans[self.base_choice]
        targets = rows.indices
        counts = np.diff(rows.indptr)
        own_bits = np.repeat(self.bits[self.owner], counts)
        new_bits = own_bits | (self.goalbits[targets] & self._active_mask(pattern))
        shift = np.int64(len(self.trackers))
        keys = (targets.astype(np.int64) << shift) | new_bits
        pos = np.searchsorted(self.keys, keys)
        if np.any(pos >= len(self.keys)) or np.any(self.keys[np.minimum(pos, len(self.keys) - 1)] != keys):
            raise AssertionError("product successor missing from the explored state space")
        mat = csr_matrix((rows.data, pos, rows.indptr), shape=(self.num_choices, self.num_states))
        mat.sum_duplicates()
        self._matrices[pattern] = mat
        return mat

    def rewards(self, c: int) -> np.ndarray:
        """Reward matrix (choices x objectives) for choices taken at counter ``c``.

        The result is cached and must not be modified.
        """
        c = min(c, self.cutoff)
        key = tuple((_in(steps, c), _in(steps, c + 1)) for _, _, steps, _ in self._static)
        if key not in self._rewards:
            self._rewards[key] = self._build_rewards(c)
        return self._rewards[key]

    def _build_rewards(self, c: int) -> np.ndarray:
        out = np.empty((self.num_choices, self.dim))
        for i, (static, kind, steps, closed_goal) in enumerate(self._static):
            if kind == "reward" or steps is None:
                out[:, i] = static
                continue
            here, nxt = _in(steps, c), _in(steps, c + 1)
            factor = np.where(self.step_choice, float(nxt), float(here))
            if closed_goal is not None and here:
                factor = factor * (1.0 - closed_goal)
            out[:, i] = static * factor
        out.setflags(write=False)
        return out


def build_product(base: CompiledMdp, objectives: Sequence[NormalizedObjective]) -> Product:
    n = base.num_states
    objectives = tuple(objectives)
    trackers: list[Tracker] = []
    tracker_of: list[int | None] = []
    closed_cache: dict[frozenset[int], bool] = {}
    goal_masks = []
    for obj in objectives:
        gm = np.zeros(n, dtype=bool)
        gm[list(obj.goal)] = True
        goal_masks.append(gm)
        if obj.goal not in closed_cache:
            closed_cache[obj.goal] = base.is_closed(gm)
        steps = None if obj.is_reward else _steps_of(obj)
        if closed_cache[obj.goal]:
            tracker_of.append(None)
            continue
        tr = Tracker(obj.goal, steps)
        if tr not in trackers:
            trackers.append(tr)
        tracker_of.append(trackers.index(tr))
    if len(trackers) > MAX_TRACKERS:
        raise ValueError("too many distinct goal trackers")

    cutoff = 0
    for obj in objectives:
        steps = None if obj.is_reward else _steps_of(obj)
        if steps is not None:
            cutoff = max(cutoff, steps.hi + 1 if steps.hi is not None else steps.lo)

    goalbits = np.zeros(n, dtype=np.int64)
    for k, tr in enumerate(trackers):
        goalbits[list(tr.goal)] |= np.int64(1 << k)

    def active(c: int) -> int:
        return sum(1 << k for k, tr in enumerate(trackers) if tr.in_steps(min(c, cutoff)))

    masks = sorted({active(c) for c in range(cutoff + 1)})
    shift = len(trackers)
    s0 = base.mdp.initial
    b0 = int(goalbits[s0]) & active(0)

    # explore reachable (state, bits) pairs under every pattern
    state_succ = _state_successors(base)
    seen = {(s0 << shift) | b0}
    frontier = np.asarray([(s0 << shift) | b0], dtype=np.int64)
    lowmask = (1 << shift) - 1
    while len(frontier):
        fs = frontier >> shift
        fb = frontier & lowmask
        sub = state_succ[fs]
        counts = np.diff(sub.indptr)
        t = sub.indices.astype(np.int64)
        b = np.repeat(fb, counts)
        cand = []
        for m in masks:
            cand.append((t << shift) | (b | (goalbits[t] & m)))
        cand = np.unique(np.concatenate(cand)) if cand else np.zeros(0, np.int64)
        new = [int(k) for k in cand if int(k) not in seen]
        seen.update(new)
        frontier = np.asarray(new, dtype=np.int64)
    keys = np.asarray(sorted(seen), dtype=np.int64)
    base_state = keys >> shift
    bits = keys & lowmask
    initial = int(np.searchsorted(keys, (s0 << shift) | b0))

    counts = np.diff(base.state_start)[base_state]
    state_start = np.zeros(len(keys) + 1, dtype=np.int64)
    np.cumsum(counts, out=state_start[1:])
    owner = np.repeat(np.arange(len(keys)), counts)
    first = base.state_start[base_state]
    base_choice = np.repeat(first, counts) + (np.arange(int(state_start[-1])) - np.repeat(state_start[:-1], counts))
    step_choice = base.step[base_state][owner]

    offsets = np.zeros(len(objectives))
    prod = Product(base, objectives, tuple(trackers), tuple(tracker_of), cutoff, base_state, bits, keys,
                   initial, state_start, owner, base_choice, step_choice, offsets, goalbits)

    goal_prob = {}
    for i, obj in enumerate(objectives):
        gm = goal_masks[i]
        steps = None if obj.is_reward else _steps_of(obj)
        k = tracker_of[i]
        unset = np.ones(prod.num_choices) if k is None else ((bits[owner] >> k) & 1 == 0).astype(float)
        closed_goal = None
        if obj.is_reward:
            static = base.rewards[base_choice, obj.reward].astype(float)
            if k is None:
                static = static * (~gm[base_state[owner]])
        else:
            if obj.goal not in goal_prob:
                goal_prob[obj.goal] = np.asarray(base.trans @ gm.astype(float)).ravel()
            static = goal_prob[obj.goal][base_choice]
            if k is None:
                in_goal = gm[base_state[owner]].astype(float)
                if steps is None:
                    static = static * (1.0 - in_goal)
                else:
                    closed_goal = in_goal
            if gm[s0] and _in(steps, 0):
                offsets[i] = obj.sign * 1.0
        prod._static.append((obj.sign * static * unset, "reward" if obj.is_reward else "reach", steps, closed_goal))
    return prod


def _state_successors(base: CompiledMdp) -> csr_matrix:
    """State-to-state support graph (union over choices)."""
    n = base.num_states
    rows = base.owner[np.repeat(np.arange(base.num_choices), np.diff(base.trans.indptr))]
    mat = csr_matrix((np.ones(len(rows)), (rows, base.trans.indices)), shape=(n, n))
    mat.sum_duplicates()
    mat.sort_indices()
    return mat
