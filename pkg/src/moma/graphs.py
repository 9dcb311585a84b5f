"""Graph algorithms on MDP-shaped structures.

An MDP skeleton is stored as a :class:`ChoiceGraph`: choices are numbered
``0 .. m-1``, the choices of state ``s`` occupy ``state_start[s]:state_start[s+1]``
and the successors of choice ``c`` are ``succ_idx[succ_ptr[c]:succ_ptr[c+1]]``.
Only the support of each distribution matters here.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components


@dataclass(frozen=True)
class ChoiceGraph:
    num_states: int
    state_start: np.ndarray
    succ_ptr: np.ndarray
    succ_idx: np.ndarray

    @property
    def num_choices(self) -> int:
        return len(self.succ_ptr) - 1

    @property
    def choice_state(self) -> np.ndarray:
        counts = np.diff(self.state_start)
        return np.repeat(np.arange(self.num_states), counts)

    @classmethod
    def from_rows(cls, num_states: int, rows: Sequence[Sequence[Sequence[int]]]) -> "ChoiceGraph":
        """``rows[s]`` lists, for every choice of ``s``, its successor states."""
        state_start = [0]
        succ_ptr = [0]
        succ_idx: list[int] = []
        for s in range(num_states):
            for targets in rows[s]:
                succ_idx.extend(targets)
                succ_ptr.append(len(succ_idx))
            state_start.append(len(succ_ptr) - 1)
        return cls(num_states, np.asarray(state_start, dtype=np.int64),
                   np.asarray(succ_ptr, dtype=np.int64), np.asarray(succ_idx, dtype=np.int64))

    def reverse(self) -> tuple[np.ndarray, np.ndarray]:
        """For each state ``t``, the choices having ``t`` as a successor (CSR)."""
        choice_of_edge = np.repeat(np.arange(self.num_choices), np.diff(self.succ_ptr))
        order = np.argsort(self.succ_idx, kind="stable")
        rev_choice = choice_of_edge[order]
        rev_ptr = np.zeros(self.num_states + 1, dtype=np.int64)
        np.add.at(rev_ptr, self.succ_idx + 1, 1)
        return np.cumsum(rev_ptr), rev_choice

    def all_successors_in(self, mask: np.ndarray) -> np.ndarray:
        """Boolean per choice: every successor lies in ``mask``."""
        if self.num_choices == 0:
            return np.zeros(0, dtype=bool)
        bad = (~mask[self.succ_idx]).astype(np.int64)
        per_choice = np.add.reduceat(bad, self.succ_ptr[:-1]) if len(bad) else np.zeros(self.num_choices, np.int64)
        empty = np.diff(self.succ_ptr) == 0
        per_choice[empty] = 0
        return per_choice == 0


def _mask(n: int, states: Iterable[int] | np.ndarray | None, default: bool) -> np.ndarray:
    if states is None:
        return np.full(n, default, dtype=bool)
    if not isinstance(states, np.ndarray):
        states = np.asarray(sorted(states) if isinstance(states, (set, frozenset)) else list(states))
    if states.dtype == bool:
        return states.copy()
    m = np.zeros(n, dtype=bool)
    if states.size:
        m[states.astype(np.int64)] = True
    return m


def exists_reach(graph: ChoiceGraph, target, within=None, choices=None) -> np.ndarray:
    """States that reach ``target`` with positive probability under some scheduler.

    Only states in ``within`` (besides targets) and choices in ``choices`` are used.
    """
    n = graph.num_states
    tgt = _mask(n, target, False)
    win = _mask(n, within, True)
    allowed = np.ones(graph.num_choices, dtype=bool) if choices is None else choices
    owner = graph.choice_state
    rev_ptr, rev_choice = graph.reverse()
    result = tgt.copy()
    queue = deque(np.flatnonzero(tgt).tolist())
    while queue:
        t = queue.popleft()
        for c in rev_choice[rev_ptr[t]:rev_ptr[t + 1]]:
            if allowed[c]:
                s = owner[c]
                if not result[s] and win[s]:
                    result[s] = True
                    queue.append(s)
    return result


def forall_reach(graph: ChoiceGraph, target, choices=None) -> np.ndarray:
    """States that reach ``target`` with positive probability under every scheduler."""
    n = graph.num_states
    tgt = _mask(n, target, False)
    allowed = np.ones(graph.num_choices, dtype=bool) if choices is None else choices
    owner = graph.choice_state
    remaining = np.zeros(n, dtype=np.int64)
    np.add.at(remaining, owner[allowed], 1)
    hit = np.zeros(graph.num_choices, dtype=bool)
    rev_ptr, rev_choice = graph.reverse()
    result = tgt.copy()
    queue = deque(np.flatnonzero(tgt).tolist())
    while queue:
        t = queue.popleft()
        for c in rev_choice[rev_ptr[t]:rev_ptr[t + 1]]:
            if allowed[c] and not hit[c]:
                hit[c] = True
                s = owner[c]
                remaining[s] -= 1
                if remaining[s] == 0 and not result[s]:
                    result[s] = True
                    queue.append(s)
    return result


def prob1_exists(graph: ChoiceGraph, target, choices=None) -> np.ndarray:
    """States from which some scheduler reaches ``target`` almost surely."""
    n = graph.num_states
    tgt = _mask(n, target, False)
    allowed = np.ones(graph.num_choices, dtype=bool) if choices is None else choices
    u = np.ones(n, dtype=bool)
    while True:
        inside = allowed & graph.all_successors_in(u)
        r = exists_reach(graph, tgt, within=u, choices=inside)
        if np.array_equal(r, u):
            return u
        u = r


def prob0_exists(graph: ChoiceGraph, target, choices=None) -> np.ndarray:
    """States from which some scheduler avoids ``target`` surely."""
    return ~forall_reach(graph, target, choices)


def prob1_forall(graph: ChoiceGraph, target, choices=None) -> np.ndarray:
    """States from which every scheduler reaches ``target`` almost surely."""
    tgt = _mask(graph.num_states, target, False)
    avoid = prob0_exists(graph, tgt, choices)
    escape = exists_reach(graph, avoid, within=~tgt, choices=choices)
    return ~escape


def strongly_connected_components(graph: ChoiceGraph, choices: np.ndarray) -> np.ndarray:
    """SCC label per state of the graph induced by the allowed choices."""
    n = graph.num_states
    counts = np.diff(graph.succ_ptr)
    owner = np.repeat(graph.choice_state, counts)
    keep = np.repeat(choices, counts)
    rows, cols = owner[keep], graph.succ_idx[keep]
    adj = csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))
    _, labels = connected_components(adj, directed=True, connection="strong")
    return labels


def maximal_end_components(graph_or_n, rows=None, allowed=None, choices=None):
    """Maximal end components restricted to ``allowed`` states and ``choices``.

    Accepts either a :class:`ChoiceGraph` or ``(num_states, rows)`` as for
    :meth:`ChoiceGraph.from_rows`.  Returns a list of ``(states, choices)`` pairs
    of integer arrays; choices are those that stay inside the component.
    """
    graph = graph_or_n if isinstance(graph_or_n, ChoiceGraph) else ChoiceGraph.from_rows(graph_or_n, rows)
    n = graph.num_states
    alive_s = _mask(n, allowed, True)
    owner = graph.choice_state
    alive_c = np.ones(graph.num_choices, dtype=bool) if choices is None else choices.copy()
    alive_c &= alive_s[owner]
    counts = np.diff(graph.succ_ptr)
    edge_owner_choice = np.repeat(np.arange(graph.num_choices), counts)
    while True:
        # drop choices leaving the alive set, then states without choices
        while True:
            alive_c &= graph.all_successors_in(alive_s) & alive_s[owner]
            has = np.zeros(n, dtype=bool)
            has[owner[alive_c]] = True
            new_s = alive_s & has
            if np.array_equal(new_s, alive_s):
                break
            alive_s = new_s
        if not alive_s.any():
            return []
        labels = strongly_connected_components(graph, alive_c)
        same = labels[graph.succ_idx] == labels[owner[edge_owner_choice]]
        bad = np.zeros(graph.num_choices, dtype=bool)
        np.logical_or.at(bad, edge_owner_choice[~same], True)
        leaving = alive_c & bad
        if not leaving.any():
            break
        alive_c &= ~leaving
    result = []
    comp_states: dict[int, list[int]] = {}
    for s in np.flatnonzero(alive_s):
        comp_states.setdefault(int(labels[s]), []).append(int(s))
    comp_choices: dict[int, list[int]] = {}
    for c in np.flatnonzero(alive_c):
        comp_choices.setdefault(int(labels[owner[c]]), []).append(int(c))
    for lab, states in sorted(comp_states.items(), key=lambda kv: kv[1][0]):
        result.append((np.asarray(states, dtype=np.int64), np.asarray(comp_choices.get(lab, []), dtype=np.int64)))
    return result


def backward_reachable(n: int, edges: Sequence[Sequence[int]], targets: Iterable[int]) -> set[int]:
    """All states with a directed path (possibly empty) into ``targets``."""
    rev: list[list[int]] = [[] for _ in range(n)]
    for s in range(n):
        for t in edges[s]:
            rev[t].append(s)
    seen = set(targets)
    queue = deque(seen)
    while queue:
        t = queue.popleft()
        for s in rev[t]:
            if s not in seen:
                seen.add(s)
                queue.append(s)
    return seen


def forward_reachable(n: int, edges: Sequence[Sequence[int]], sources: Iterable[int]) -> set[int]:
    seen = set(sources)
    queue = deque(seen)
    while queue:
        s = queue.popleft()
        for t in edges[s]:
            if t not in seen:
                seen.add(t)
                queue.append(t)
    return seen
