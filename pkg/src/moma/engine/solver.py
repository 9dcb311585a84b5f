"""Weighted optimization over the objective product.

A weighted solve maximizes ``w . (objective values)`` and reports the value of
every objective under the optimal scheduler it found.  The work splits in two:

* the *tail*: from step counter ``cutoff`` on, the product is stationary.  Zero
  weighted-reward end components are collapsed, value iteration gives a warm
  start, and policy iteration with exact sparse solves finishes the job;
* the *epochs* ``cutoff-1 .. 0`` are swept backwards, one epoch in memory at a
  time.  Inside an epoch, choices of non-step states read values of the same
  epoch and are processed in topological order of their SCCs.

Infinite expected rewards are handled before any weight is considered: states
from which a minimized reward cannot be kept finite are removed (their value is
``-inf`` in the internal maximize form), and maximized rewards that can grow
without bound are reported.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix, identity
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from ..errors import InfiniteValue, NonConvergence, ZenoModel
from ..graphs import (
    ChoiceGraph,
    exists_reach,
    maximal_end_components,
    prob0_exists,
    prob1_exists,
    prob1_forall,
)
from ..model import Distribution, Mdp
from .objectives import NormalizedObjective
from .product import CompiledMdp, Product, Tracker, build_product

DEFAULT_VI_EPS = 1e-6
MAX_SWEEPS = 10**7
WARM_SWEEPS = 2000
MAX_POLICY_ROUNDS = 10_000
TIE_TOL = 1e-12
WEIGHT_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# small vector helpers


def _graph(prod: Product, mat: csr_matrix) -> ChoiceGraph:
    return ChoiceGraph(prod.num_states, prod.state_start, mat.indptr.astype(np.int64), mat.indices.astype(np.int64))


def weighted(q: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Row-wise ``q . w``; rows with any ``-inf`` entry are ``-inf``."""
    bad = np.isneginf(q)
    if not bad.any():
        return q @ w
    bad = bad.any(axis=1)
    out = np.where(bad[:, None], 0.0, q) @ w
    out[bad] = -np.inf
    return out


def segment_best(values: np.ndarray, start: np.ndarray, valid: np.ndarray | None = None,
                 counts: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per segment, the maximum and the lowest index attaining it up to a relative tie tolerance.

    Segments are ``start[i]:start[i+1]`` and must be nonempty.  ``valid`` masks
    out entries (treated as ``-inf``).
    """
    vals = values if valid is None else np.where(valid, values, -np.inf)
    best = np.maximum.reduceat(vals, start[:-1])
    if counts is None:
        counts = np.diff(start)
    rep = np.repeat(best, counts)
    tol = TIE_TOL * np.maximum(1.0, np.abs(np.where(np.isfinite(rep), rep, 0.0)))
    cand = vals >= rep - tol
    idx = np.where(cand, np.arange(len(vals)), len(vals))
    first = np.minimum.reduceat(idx, start[:-1])
    return best, first


# ---------------------------------------------------------------------------
# infinite rewards


@dataclass(frozen=True)
class InfinityReport:
    """Outcome of the end-component analysis of reward objectives.

    ``finite_states`` are the product states from which every minimized reward
    can be kept finite simultaneously; ``finite_choices`` the choices that stay
    among them.  ``sup_infinite`` lists maximized rewards whose supremum is
    infinite; ``always_infinite`` lists objectives that are infinite under every
    scheduler; ``jointly_infinite`` is set when the minimized rewards are each
    finite on their own but not together.
    """

    finite_states: np.ndarray
    finite_choices: np.ndarray
    sup_infinite: frozenset[int] = frozenset()
    always_infinite: frozenset[int] = frozenset()
    jointly_infinite: bool = False

    @property
    def has_infinity(self) -> bool:
        return bool(self.sup_infinite or self.always_infinite or self.jointly_infinite)

    def infinite_objectives(self) -> frozenset[int]:
        return self.sup_infinite | self.always_infinite


def _mec_states(graph: ChoiceGraph, choices: np.ndarray, allowed=None) -> np.ndarray:
    mask = np.zeros(graph.num_states, dtype=bool)
    for states, _ in maximal_end_components(graph, allowed=allowed, choices=choices):
        mask[states] = True
    return mask


def analyse_infinity(prod: Product) -> InfinityReport:
    mat = prod.matrix(prod.pattern(prod.cutoff))
    rew = prod.rewards(prod.cutoff)
    graph = _graph(prod, mat)
    n = prod.num_states
    minimized = [i for i, o in enumerate(prod.objectives) if o.is_reward and o.sign < 0]
    maximized = [i for i, o in enumerate(prod.objectives) if o.is_reward and o.sign > 0]
    init = prod.initial

    finite = np.ones(n, dtype=bool)
    always: set[int] = set()
    joint = False
    if minimized:
        for i in minimized:
            zero = _mec_states(graph, rew[:, i] == 0)
            if not prob1_exists(graph, zero)[init]:
                always.add(i)
        zero_all = _mec_states(graph, np.all(rew[:, minimized] == 0, axis=1))
        finite = prob1_exists(graph, zero_all)
        joint = not finite[init] and not always
    ok_choices = graph.all_successors_in(finite) & finite[prod.owner]

    sup: set[int] = set()
    if maximized and finite[init]:
        union = None
        for pat in {prod.pattern(c) for c in range(prod.cutoff + 1)}:
            m = prod.matrix(pat)
            union = m if union is None else union + m
        reach = exists_reach(_reverse_graph(prod, union, ok_choices), np.eye(1, n, init, dtype=bool)[0])
        mecs = maximal_end_components(graph, allowed=finite, choices=ok_choices)
        for i in maximized:
            for states, choices in mecs:
                if reach[states].any() and np.any(rew[choices, i] > 0):
                    sup.add(i)
                    break
            zero = _mec_states(graph, ok_choices & (rew[:, i] == 0), allowed=finite)
            if not prob1_exists(graph, zero, choices=ok_choices)[init]:
                always.add(i)
    return InfinityReport(finite, ok_choices, frozenset(sup), frozenset(always), joint)


def _reverse_graph(prod: Product, mat: csr_matrix, allowed: np.ndarray) -> ChoiceGraph:
    """Graph whose 'reach target' relation is forward reachability in ``mat``.

    Each edge ``s -> t`` of an allowed choice becomes a one-successor choice of
    ``t`` pointing at ``s``.
    """
    n = prod.num_states
    counts = np.diff(mat.indptr)
    src = np.repeat(prod.owner, counts)
    keep = np.repeat(allowed, counts)
    src, dst = src[keep], mat.indices[keep]
    order = np.argsort(dst, kind="stable")
    src, dst = src[order], dst[order]
    state_start = np.zeros(n + 1, dtype=np.int64)
    np.add.at(state_start, dst + 1, 1)
    state_start = np.cumsum(state_start)
    return ChoiceGraph(n, state_start, np.arange(len(src) + 1, dtype=np.int64), src.astype(np.int64))


def check_infinity(report: InfinityReport, objectives: Sequence[NormalizedObjective]) -> None:
    """Raise :class:`InfiniteValue` if the report leaves no finite analysis."""
    if report.sup_infinite or report.always_infinite:
        bad = report.sup_infinite | report.always_infinite
        raise InfiniteValue(bad, "end-component analysis")
    if report.jointly_infinite:
        bad = [i for i, o in enumerate(objectives) if o.is_reward and o.sign < 0]
        raise InfiniteValue(bad, "minimized rewards cannot be kept finite together")


# ---------------------------------------------------------------------------
# schedulers


@dataclass(frozen=True)
class ProductMemory:
    """Finite memory of a product scheduler: goal bits and the step counter."""

    compiled: CompiledMdp
    trackers: tuple[Tracker, ...]
    goalbits: np.ndarray
    keys: np.ndarray
    cutoff: int
    multi_states: np.ndarray
    epoch_choices: np.ndarray
    tail_choices: np.ndarray
    delta: float | None = None

    @property
    def uses_memory(self) -> bool:
        return bool(self.trackers) or self.cutoff > 0

    def active(self, c: int) -> int:
        c = min(c, self.cutoff)
        return sum(1 << k for k, tr in enumerate(self.trackers) if tr.in_steps(c))

    def initial_bits(self, state: int) -> int:
        return int(self.goalbits[state]) & self.active(0)

    def visit(self, bits: int, state: int, count: int) -> int:
        return bits | (int(self.goalbits[state]) & self.active(count))

    def visit_range(self, bits: int, state: int, first: int, last: int) -> int:
        """Bits after visiting ``state`` at every counter value in ``first..last``."""
        g = int(self.goalbits[state])
        if not g or last < first:
            return bits
        for k, tr in enumerate(self.trackers):
            if g >> k & 1:
                st = tr.steps
                if st is None or (last >= st.lo and (st.hi is None or first <= st.hi)):
                    bits |= 1 << k
        return bits

    def local_choice(self, state: int, count: int, bits: int) -> int:
        key = (state << len(self.trackers)) | bits
        x = int(np.searchsorted(self.keys, key))
        if x >= len(self.keys) or self.keys[x] != key:
            raise KeyError(f"memory state ({state}, {bits}) was never reached during synthesis")
        j = int(np.searchsorted(self.multi_states, x))
        if j >= len(self.multi_states) or self.multi_states[j] != x:
            return 0
        if count < self.cutoff:
            return int(self.epoch_choices[count, j])
        return int(self.tail_choices[j])

    def action(self, state: int, count: int = 0, bits: int = 0) -> str:
        k = self.local_choice(state, count, bits)
        return self.compiled.mdp.choices[state][k][0]


MEMORYLESS = "memoryless-deterministic"
EPOCH = "epoch-dependent-deterministic"
MIXTURE = "mixture"


@dataclass(frozen=True)
class SchedulerDescription:
    """Finite description of a scheduler.

    Deterministic schedulers carry a :class:`ProductMemory`; a mixture picks one
    component at the start of a run with the given probabilities.
    """

    mode: str
    memory: ProductMemory | None = None
    components: tuple["SchedulerDescription", ...] = ()
    weights: tuple[float, ...] = ()

    def __post_init__(self):
        if self.mode == MIXTURE:
            if len(self.components) != len(self.weights) or not self.components:
                raise ValueError("mixture needs one weight per component")
            if abs(sum(self.weights) - 1.0) > 1e-9 or min(self.weights) < 0:
                raise ValueError("mixture weights must form a distribution")

    @classmethod
    def mixture(cls, components: Sequence["SchedulerDescription"], weights: Sequence[float]) -> "SchedulerDescription":
        pairs = [(c, float(p)) for c, p in zip(components, weights) if p > 1e-12]
        total = sum(p for _, p in pairs)
        if len(pairs) == 1:
            return pairs[0][0]
        return cls(MIXTURE, components=tuple(c for c, _ in pairs), weights=tuple(p / total for _, p in pairs))

    @property
    def is_deterministic(self) -> bool:
        return self.mode != MIXTURE

    def action(self, state: int, count: int = 0, bits: int = 0) -> str:
        if self.memory is None:
            raise ValueError("a mixture has no single decision; pick a component first")
        return self.memory.action(state, count, bits)

    def decision_table(self) -> dict:
        """``(state, epoch, bits) -> action`` for states with a real choice.

        ``epoch`` is ``None`` for the stationary part.
        """
        if self.memory is None:
            raise ValueError("a mixture has no single decision table")
        mem = self.memory
        shift = len(mem.trackers)
        table = {}
        for j, x in enumerate(mem.multi_states):
            key = int(mem.keys[x])
            s, b = key >> shift, key & ((1 << shift) - 1)
            row = mem.compiled.mdp.choices[s]
            for c in range(mem.cutoff):
                table[(s, c, b)] = row[int(mem.epoch_choices[c, j])][0]
            table[(s, None, b)] = row[int(mem.tail_choices[j])][0]
        return table

    def to_dict(self) -> dict:
        if self.mode == MIXTURE:
            return {"mode": self.mode, "weights": list(self.weights),
                    "components": [c.to_dict() for c in self.components]}
        table = self.decision_table()
        rows = [{"state": s, "epoch": c, "memory": b, "action": a} for (s, c, b), a in sorted(
            table.items(), key=lambda kv: (kv[0][0], -1 if kv[0][1] is None else kv[0][1], kv[0][2]))]
        return {"mode": self.mode, "decisions": rows}


@dataclass(frozen=True)
class WeightedSolve:
    weight: tuple[float, ...]
    point: tuple[float, ...]
    scheduler: SchedulerDescription
    values: np.ndarray | None = field(default=None, compare=False, repr=False)

    @property
    def weighted_value(self) -> float:
        return float(np.dot(self.weight, self.point))


# ---------------------------------------------------------------------------
# tail


def _attract(mat: csr_matrix, owner: np.ndarray, state_start: np.ndarray, allowed: np.ndarray,
             target: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Choice per state of ``active`` that moves towards ``target`` with positive probability.

    Only ``allowed`` choices are used.  Returns an array with ``-1`` for states
    that are targets, inactive, or cannot reach the target.
    """
    n = len(state_start) - 1
    pick = np.full(n, -1, dtype=np.int64)
    done = target.copy()
    while True:
        hits = np.asarray(mat @ done.astype(float)).ravel() > 0
        cand = allowed & hits & ~done[owner] & active[owner]
        if not cand.any():
            return pick
        idx = np.where(cand, np.arange(len(cand)), len(cand))
        first = np.minimum.reduceat(idx, state_start[:-1])
        new = first < len(cand)
        pick[new] = first[new]
        done |= new


@dataclass
class TailSolution:
    values: np.ndarray
    policy: np.ndarray


def _bottom_states(mat: csr_matrix, active: np.ndarray) -> np.ndarray:
    """States of bottom SCCs of the Markov chain ``mat`` (rows = states) restricted to ``active``."""
    n = mat.shape[0]
    _, lab = connected_components(mat, directed=True, connection="strong")
    coo = mat.tocoo()
    leaving = np.zeros(n, dtype=bool)
    cross = lab[coo.row] != lab[coo.col]
    leaving_lab = np.zeros(lab.max() + 1, dtype=bool)
    leaving_lab[lab[coo.row[cross]]] = True
    bottom = ~leaving_lab[lab] & active
    del leaving
    return bottom


def evaluate_policy(mat: csr_matrix, rew: np.ndarray, policy: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Exact objective values of a proper deterministic policy.

    Rewards are zero on the bottom SCCs the policy ends in; values there are 0.
    Inactive states get ``-inf``.
    """
    n = len(policy)
    d = rew.shape[1]
    values = np.full((n, d), -np.inf)
    act = np.flatnonzero(active)
    if len(act) == 0:
        return values
    chain = mat[policy[act]][:, act]
    bottom = _bottom_states(chain, np.ones(len(act), dtype=bool))
    values[act[bottom]] = 0.0
    rest = np.flatnonzero(~bottom)
    if len(rest):
        sub = chain[rest][:, rest]
        a = (identity(len(rest), format="csc") - sub.tocsc()).tocsc()
        rhs = rew[policy[act[rest]]]
        values[act[rest]] = splu(a).solve(np.ascontiguousarray(rhs))
    return values


def solve_tail(prod: Product, mat: csr_matrix, rew: np.ndarray, w: np.ndarray, report: InfinityReport,
               vi_eps: float = DEFAULT_VI_EPS, warm_sweeps: int = WARM_SWEEPS) -> TailSolution:
    n, m = prod.num_states, prod.num_choices
    ok_s, ok_c = report.finite_states, report.finite_choices
    owner = prod.owner
    graph = _graph(prod, mat)
    rw = weighted(rew, w)
    rw[~ok_c] = -np.inf

    # collapse end components of zero weighted reward
    zero_w = ok_c & (rw == 0)
    mecs = maximal_end_components(graph, allowed=ok_s, choices=zero_w)
    all_zero = ok_c & np.all(rew == 0, axis=1)
    az_mecs = maximal_end_components(graph, allowed=ok_s, choices=all_zero)
    az_state = np.zeros(n, dtype=bool)
    az_pick = np.full(n, -1, dtype=np.int64)
    for states, choices in az_mecs:
        az_state[states] = True
        for c in choices[::-1]:
            az_pick[owner[c]] = c

    cid = np.full(n, -1, dtype=np.int64)
    internal = np.zeros(m, dtype=bool)
    mec_of = np.full(n, -1, dtype=np.int64)
    stay_ok = []
    for j, (states, choices) in enumerate(mecs):
        mec_of[states] = j
        internal[choices] = True
        stay_ok.append(bool(az_state[states].any()))
    # collapsed ids: MECs get the id of their smallest member position
    nxt = 0
    mec_id = {}
    for x in np.flatnonzero(ok_s):
        j = mec_of[x]
        if j < 0:
            cid[x] = nxt
            nxt += 1
        elif j not in mec_id:
            mec_id[j] = nxt
            cid[x] = nxt
            nxt += 1
        else:
            cid[x] = mec_id[j]
    nc = nxt
    real = np.flatnonzero(ok_c & ~internal)
    rows_owner = cid[owner[real]]
    stay_rows = np.asarray([mec_id[j] for j in range(len(mecs)) if stay_ok[j]], dtype=np.int64)
    all_owner = np.concatenate([rows_owner, stay_rows])
    all_choice = np.concatenate([real, np.full(len(stay_rows), -1, dtype=np.int64)])
    order = np.lexsort((np.arange(len(all_owner)), all_owner))
    all_owner, all_choice = all_owner[order], all_choice[order]
    c_start = np.zeros(nc + 1, dtype=np.int64)
    np.add.at(c_start, all_owner + 1, 1)
    c_start = np.cumsum(c_start)
    if np.any(np.diff(c_start) == 0):
        raise AssertionError("collapsed state without choices")

    is_real = all_choice >= 0
    sel = mat[np.where(is_real, all_choice, 0)]
    sel = csr_matrix((sel.data, cid[sel.indices], sel.indptr), shape=(len(all_choice), nc))
    empty = np.repeat(~is_real, np.diff(sel.indptr))
    sel.data[empty] = 0.0
    sel.eliminate_zeros()
    sel.sum_duplicates()
    rc = np.where(is_real, rw[np.where(is_real, all_choice, 0)], 0.0)

    # value iteration warm start
    v = np.zeros(nc)
    for _ in range(max(1, warm_sweeps)):
        best, _ = segment_best(rc + sel @ v, c_start)
        diff = np.max(np.abs(best - v)) if nc else 0.0
        v = best
        if diff <= vi_eps * 1e-3:
            break
    _, pol = segment_best(rc + sel @ v, c_start)
    stay_choice = ~is_real
    if not _is_proper(sel, pol, stay_choice, nc):
        pol = _proper_policy(sel, all_owner, c_start, stay_choice)

    # policy iteration with exact evaluation
    for _ in range(MAX_POLICY_ROUNDS):
        v = _evaluate_collapsed(sel, rc, pol)
        q = rc + sel @ v
        best, cand = segment_best(q, c_start)
        cur = q[pol]
        tol = 1e-10 * np.maximum(1.0, np.abs(cur))
        switch = best > cur + tol
        if not switch.any():
            break
        pol = np.where(switch, cand, pol)
    else:
        raise NonConvergence("policy iteration did not stabilize")

    # expand to the product
    policy = np.full(n, -1, dtype=np.int64)
    chosen = all_choice[pol]
    single = (mec_of < 0) & ok_s
    policy[single] = chosen[cid[single]]
    if mecs:
        target = np.zeros(n, dtype=bool)
        for j, (states, _) in enumerate(mecs):
            c = chosen[mec_id[j]]
            if c >= 0:
                target[owner[c]] = True
                policy[owner[c]] = c
            else:
                hit = states[az_state[states]]
                target[hit] = True
                policy[hit] = az_pick[hit]
        in_mec = mec_of >= 0
        pick = _attract(mat, owner, prod.state_start, internal, target, in_mec)
        fill = in_mec & ~target
        if np.any(pick[fill] < 0):
            raise AssertionError("end component member cannot reach its exit")
        policy[fill] = pick[fill]
    values = evaluate_policy(mat, rew, policy, ok_s)
    return TailSolution(values, policy)


def _is_proper(sel: csr_matrix, pol: np.ndarray, stay_choice: np.ndarray, nc: int) -> bool:
    chain = sel[pol]
    sinks = stay_choice[pol]
    reached = sinks.copy()
    rev = chain.T.tocsr()
    frontier = np.flatnonzero(reached)
    while len(frontier):
        prev = np.unique(rev[frontier].indices)
        prev = prev[~reached[prev]]
        reached[prev] = True
        frontier = prev
    return bool(reached.all())


def _proper_policy(sel: csr_matrix, c_owner: np.ndarray, c_start: np.ndarray, stay_choice: np.ndarray) -> np.ndarray:
    nc = len(c_start) - 1
    pol = np.full(nc, -1, dtype=np.int64)
    has_stay = np.zeros(nc, dtype=bool)
    first_stay = np.where(stay_choice, np.arange(len(stay_choice)), len(stay_choice))
    fs = np.minimum.reduceat(first_stay, c_start[:-1])
    has_stay = fs < len(stay_choice)
    pol[has_stay] = fs[has_stay]
    pick = _attract(sel, c_owner, c_start, ~stay_choice, has_stay, np.ones(nc, dtype=bool))
    rest = ~has_stay
    if np.any(pick[rest] < 0):
        raise AssertionError("no proper policy exists on the finite part")
    pol[rest] = pick[rest]
    return pol


def _evaluate_collapsed(sel: csr_matrix, rc: np.ndarray, pol: np.ndarray) -> np.ndarray:
    nc = len(pol)
    chain = sel[pol]
    a = (identity(nc, format="csc") - chain.tocsc()).tocsc()
    try:
        return splu(a).solve(rc[pol].astype(float))
    except RuntimeError as exc:  # singular: the policy is not proper
        raise NonConvergence(f"policy evaluation failed: {exc}") from None


# ---------------------------------------------------------------------------
# epochs


@dataclass
class _Levels:
    step_rows: np.ndarray
    step_states: np.ndarray
    levels: list


def _epoch_structure(prod: Product, mat: csr_matrix) -> _Levels:
    """Topological processing order for the non-step states of one pattern."""
    step_state = prod.base.step[prod.base_state]
    step_rows = np.flatnonzero(step_state[prod.owner])
    ps = np.flatnonzero(~step_state)
    levels = []
    if len(ps) == 0:
        return _Levels(step_rows, np.flatnonzero(step_state), levels)
    n = prod.num_states
    pos = np.full(n, -1, dtype=np.int64)
    pos[ps] = np.arange(len(ps))
    rows = np.concatenate([np.arange(prod.state_start[x], prod.state_start[x + 1]) for x in ps])
    sub = mat[rows]
    src = np.repeat(pos[prod.owner[rows]], np.diff(sub.indptr))
    dst = pos[sub.indices]
    keep = dst >= 0
    adj = csr_matrix((np.ones(int(keep.sum())), (src[keep], dst[keep])), shape=(len(ps), len(ps)))
    ncomp, lab = connected_components(adj, directed=True, connection="strong")
    coo = adj.tocoo()
    cross = lab[coo.row] != lab[coo.col]
    selfloop = np.zeros(ncomp, dtype=bool)
    selfloop[lab[coo.row[~cross]]] = True
    sizes = np.bincount(lab, minlength=ncomp)
    cyclic = selfloop | (sizes > 1)
    # depth: successors first
    succ: list[set[int]] = [set() for _ in range(ncomp)]
    for a, b in zip(lab[coo.row[cross]], lab[coo.col[cross]]):
        succ[a].add(int(b))
    depth = np.full(ncomp, -1, dtype=np.int64)
    order = []
    state = np.zeros(ncomp, dtype=np.int8)
    for root in range(ncomp):
        if state[root]:
            continue
        stack = [(root, iter(succ[root]))]
        state[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                depth[node] = 1 + max((depth[s] for s in succ[node]), default=-1)
                order.append(node)
            elif not state[nxt]:
                state[nxt] = 1
                stack.append((nxt, iter(succ[nxt])))
    for lev in range(int(depth.max()) + 1 if ncomp else 0):
        comps = np.flatnonzero(depth == lev)
        flat = ps[np.isin(lab, comps[~cyclic[comps]])]
        groups = [ps[lab == c] for c in comps[cyclic[comps]]]
        levels.append((flat, groups))
    return _Levels(step_rows, np.flatnonzero(step_state), levels)


def _rows_of(prod: Product, states: np.ndarray) -> np.ndarray:
    if len(states) == 0:
        return np.zeros(0, dtype=np.int64)
    counts = np.diff(prod.state_start)[states]
    starts = np.repeat(prod.state_start[states], counts)
    return starts + (np.arange(int(counts.sum())) - np.repeat(np.cumsum(counts) - counts, counts))


@dataclass
class _Block:
    """Choices of a set of states, sliced once and reused for every epoch with the same pattern."""

    states: np.ndarray
    start: np.ndarray
    mat: csr_matrix
    rew: np.ndarray
    reads_next: bool
    counts: np.ndarray | None = None
    single: bool = False
    inner: csr_matrix | None = None
    own: np.ndarray | None = None


def _block(prod: Product, states: np.ndarray, mat: csr_matrix, rew: np.ndarray, reads_next: bool,
           cyclic: bool = False) -> _Block:
    rows = _rows_of(prod, states)
    counts = np.diff(prod.state_start)[states]
    start = np.zeros(len(states) + 1, dtype=np.int64)
    np.cumsum(counts, out=start[1:])
    sub = mat[rows]
    blk = _Block(states, start, sub, np.ascontiguousarray(rew[rows]), reads_next, counts, bool(np.all(counts == 1)))
    if cyclic:
        k = len(states)
        local = np.full(prod.num_states, -1, dtype=np.int64)
        local[states] = np.arange(k)
        inside = local[sub.indices] >= 0
        outside = csr_matrix((np.where(inside, 0.0, sub.data), sub.indices, sub.indptr), shape=sub.shape)
        outside.eliminate_zeros()
        inner = csr_matrix((np.where(inside, sub.data, 0.0), np.maximum(local[sub.indices], 0), sub.indptr),
                           shape=(len(rows), k))
        inner.eliminate_zeros()
        blk.mat, blk.inner, blk.own = outside, inner, np.repeat(np.arange(k), counts)
    return blk


def _decide(blk: _Block, q_rows: np.ndarray, w: np.ndarray, vals: np.ndarray, dec: np.ndarray) -> None:
    """Store the best choice and its objective vector for each state of the block."""
    if blk.single:
        vals[blk.states] = q_rows
        dec[blk.states] = 0
        return
    _, first = segment_best(weighted(q_rows, w), blk.start, counts=blk.counts)
    vals[blk.states] = q_rows[first]
    dec[blk.states] = first - blk.start[:-1]


def _solve_cyclic(blk: _Block, w: np.ndarray, vals: np.ndarray, dec: np.ndarray) -> None:
    """Policy iteration on one cyclic SCC of non-step states (every policy leaves it)."""
    k = len(blk.states)
    start, inner, own = blk.start, blk.inner, blk.own
    ext = blk.rew + _spmv(blk.mat, vals)
    valid = ~np.isneginf(ext).any(axis=1)
    while True:
        alive = np.zeros(k, dtype=bool)
        alive[own[valid]] = True
        leads_dead = np.asarray(inner @ (~alive).astype(float)).ravel() > 0
        nv = valid & ~leads_dead
        if np.array_equal(nv, valid):
            break
        valid = nv
    ext_w = np.where(valid, weighted(ext, w), 0.0)
    _, pol = segment_best(np.zeros(len(ext)), start, valid)
    pol = np.where(alive, pol, start[:-1])
    for _ in range(MAX_POLICY_ROUNDS):
        if not alive.any():
            break
        a = (identity(k, format="csc") - inner[pol].tocsc()).tocsc()
        v = splu(a).solve(np.where(alive, ext_w[pol], 0.0))
        q = np.where(valid, ext_w + inner @ v, -np.inf)
        best, cand = segment_best(q, start)
        cur = q[pol]
        switch = alive & (best > cur + 1e-10 * np.maximum(1.0, np.abs(cur)))
        if not switch.any():
            break
        pol = np.where(switch, cand, pol)
    a = (identity(k, format="csc") - inner[pol].tocsc()).tocsc()
    per = splu(a).solve(np.ascontiguousarray(np.where(alive[:, None], np.nan_to_num(ext[pol], neginf=0.0), 0.0)))
    per[~alive] = -np.inf
    vals[blk.states] = per
    dec[blk.states] = pol - start[:-1]


# ---------------------------------------------------------------------------
# the weighted solver


class WeightedSolver:
    """Caches the product and its analysis across weight vectors."""

    def __init__(self, mdp: Mdp | CompiledMdp, objectives: Sequence[NormalizedObjective],
                 vi_eps: float = DEFAULT_VI_EPS, delta: float | None = None, check: bool = True):
        self.compiled = mdp if isinstance(mdp, CompiledMdp) else CompiledMdp.of(mdp)
        self.objectives = tuple(objectives)
        self.vi_eps = vi_eps
        self.delta = delta
        self.product = build_product(self.compiled, self.objectives)
        self.report = analyse_infinity(self.product)
        self._check_nonstep_cycles()
        if check:
            check_infinity(self.report, self.objectives)
        self._structure: dict = {}
        self._block_cache: dict = {}

    def _check_nonstep_cycles(self) -> None:
        base = self.compiled
        if base.step.all():
            return
        g = ChoiceGraph(base.num_states, base.state_start, base.trans.indptr.astype(np.int64),
                        base.trans.indices.astype(np.int64))
        mecs = maximal_end_components(g, allowed=~base.step)
        if mecs:
            raise ZenoModel(np.concatenate([s for s, _ in mecs]).tolist())

    def _levels(self, pattern) -> _Levels:
        if pattern not in self._structure:
            self._structure[pattern] = _epoch_structure(self.product, self.product.matrix(pattern))
        return self._structure[pattern]

    def _blocks(self, c: int) -> list[_Block]:
        """Processing order of epoch ``c``: step states first, then non-step states by level."""
        prod = self.product
        pc, pn = prod.pattern(c), prod.pattern(c + 1)
        rew = prod.rewards(c)
        key = (pc, pn, id(rew))
        if key not in self._block_cache:
            lv = self._levels(pc)
            blocks = []
            if len(lv.step_states):
                blocks.append(_block(prod, lv.step_states, prod.matrix(pn), rew, True))
            mat_c = prod.matrix(pc)
            for flat, groups in lv.levels:
                if len(flat):
                    blocks.append(_block(prod, flat, mat_c, rew, False))
                blocks.extend(_block(prod, g, mat_c, rew, False, cyclic=True) for g in groups)
            self._block_cache[key] = blocks
        return self._block_cache[key]

    def solve(self, weight: Sequence[float], keep_values: bool = False) -> WeightedSolve:
        prod = self.product
        w = np.asarray(weight, dtype=float)
        if w.shape != (prod.dim,) or np.any(w < 0) or not np.any(w > 0):
            raise ValueError("weights must be nonnegative, nonzero and one per objective")
        w = np.where(w < WEIGHT_FLOOR * w.max(), 0.0, w)
        cut = prod.cutoff
        tail_pat = prod.pattern(cut)
        tail_mat = prod.matrix(tail_pat)
        tail = solve_tail(prod, tail_mat, prod.rewards(cut), w, self.report, self.vi_eps)
        n = prod.num_states
        multi = np.flatnonzero(np.diff(prod.state_start) > 1)
        dtype = np.uint8 if np.diff(prod.state_start).max() < 256 else np.int32
        tail_local = np.where(tail.policy[multi] >= 0, tail.policy[multi] - prod.state_start[multi], 0).astype(dtype)
        epoch_local = np.zeros((cut, len(multi)), dtype=dtype)
        nxt = tail.values
        for c in range(cut - 1, -1, -1):
            cur = np.full((n, prod.dim), -np.inf)
            dec = np.zeros(n, dtype=np.int64)
            for blk in self._blocks(c):
                if blk.inner is not None:
                    _solve_cyclic(blk, w, cur, dec)
                else:
                    q = blk.rew + _spmv(blk.mat, nxt if blk.reads_next else cur)
                    _decide(blk, q, w, cur, dec)
            epoch_local[c] = dec[multi]
            nxt = cur
        values = nxt
        point = values[prod.initial] + prod.offsets
        if np.isneginf(point).any():
            raise InfiniteValue([i for i in range(prod.dim) if np.isneginf(point[i])], "no finite scheduler")
        mem = ProductMemory(self.compiled, prod.trackers, prod.goalbits, prod.keys, cut, multi, epoch_local,
                            tail_local, self.delta)
        mode = EPOCH if mem.uses_memory else MEMORYLESS
        sched = SchedulerDescription(mode, mem)
        return WeightedSolve(tuple(float(x) for x in w), tuple(float(x) for x in point), sched,
                             values + prod.offsets if keep_values else None)


def _spmv(mat: csr_matrix, vals: np.ndarray) -> np.ndarray:
    """``mat @ vals`` where ``-inf`` entries stay ``-inf`` instead of becoming NaN."""
    bad = np.isneginf(vals)
    if not bad.any():
        return mat @ vals
    out = mat @ np.where(bad, 0.0, vals)
    out[(mat @ bad.astype(float)) > 0] = -np.inf
    return out


def weighted_value_iteration(mdp: Mdp, objectives: Sequence[NormalizedObjective], weight: Sequence[float],
                             vi_eps: float = DEFAULT_VI_EPS) -> WeightedSolve:
    """Maximize ``weight . values`` on ``mdp`` and report every objective's value."""
    return WeightedSolver(mdp, objectives, vi_eps).solve(weight)


# ---------------------------------------------------------------------------
# qualitative analysis and end-component preprocessing


def _choice_graph(mdp: Mdp) -> ChoiceGraph:
    return ChoiceGraph.from_rows(mdp.num_states, [[d.targets for _, d in row] for row in mdp.choices])


def qualitative_reach(mdp: Mdp, goal, mode: str = "max") -> tuple[frozenset[int], frozenset[int]]:
    """``(prob0, prob1)``: states whose optimal reach probability is 0 and 1."""
    g = _choice_graph(mdp)
    goal = frozenset(goal)
    if mode == "max":
        zero = ~exists_reach(g, goal)
        one = prob1_exists(g, goal)
    elif mode == "min":
        zero = prob0_exists(g, goal)
        one = prob1_forall(g, goal)
    else:
        raise ValueError("mode must be 'max' or 'min'")
    return frozenset(np.flatnonzero(zero).tolist()), frozenset(np.flatnonzero(one).tolist())


@dataclass(frozen=True)
class ReducedMdp:
    """Result of :func:`preprocess_end_components`.

    ``state_map[x]`` is the reduced state of product state ``x`` (``-1`` if the
    state was removed because a minimized reward is infinite there);
    ``product_states`` lists ``(mdp state, memory bits)`` per product state.
    """

    mdp: Mdp
    state_map: tuple[int, ...]
    product_states: tuple[tuple[int, int], ...]
    report: InfinityReport


STAY = "stay"


def preprocess_end_components(mdp: Mdp, objectives: Sequence[NormalizedObjective]) -> ReducedMdp:
    """Collapse end components that earn nothing for any objective.

    Each such maximal end component becomes one state whose choices are the
    choices leaving it plus a ``stay`` self-loop.  Rewards are reported per
    objective (tables named ``objective<i>``) in the objective's own sign.
    """
    comp = CompiledMdp.of(mdp)
    prod = build_product(comp, objectives)
    report = analyse_infinity(prod)
    mat = prod.matrix(prod.pattern(prod.cutoff))
    rew = prod.rewards(prod.cutoff)
    graph = _graph(prod, mat)
    ok_s, ok_c = report.finite_states, report.finite_choices
    zero = ok_c & np.all(rew == 0, axis=1)
    mecs = maximal_end_components(graph, allowed=ok_s, choices=zero)
    n = prod.num_states
    rep = np.arange(n)
    internal = np.zeros(prod.num_choices, dtype=bool)
    for states, choices in mecs:
        rep[states] = states.min()
        internal[choices] = True
    kept = np.flatnonzero(ok_s & (rep == np.arange(n)))
    new_id = np.full(n, -1, dtype=np.int64)
    new_id[kept] = np.arange(len(kept))
    state_map = np.where(ok_s, new_id[rep], -1)
    in_mec = np.zeros(n, dtype=bool)
    for states, _ in mecs:
        in_mec[states] = True
    rows: list[list[tuple[str, Distribution]]] = [[] for _ in kept]
    tables = [dict() for _ in objectives]
    labels: list[set[str]] = [set() for _ in kept]
    for x in np.flatnonzero(ok_s):
        y = int(state_map[x])
        s = int(prod.base_state[x])
        labels[y] |= mdp.labels[s]
        for c in range(prod.state_start[x], prod.state_start[x + 1]):
            if not ok_c[c] or internal[c]:
                continue
            lo, hi = mat.indptr[c], mat.indptr[c + 1]
            dist = Distribution.of((int(state_map[t]), p) for t, p in zip(mat.indices[lo:hi], mat.data[lo:hi]))
            name = comp.choice_name(int(prod.base_choice[c]))
            if in_mec[x]:
                name = f"{name}@{s}"
            for i, o in enumerate(objectives):
                if rew[c, i]:
                    tables[i][(y, name)] = float(o.sign * rew[c, i])
            rows[y].append((name, dist))
    for states, _ in mecs:
        y = int(state_map[states[0]])
        rows[y].append((STAY, Distribution.dirac(y)))
    init = int(state_map[prod.initial])
    reduced = Mdp(len(kept), max(init, 0), tuple(tuple(r) for r in rows),
                  tuple((f"objective{i}", t) for i, t in enumerate(tables)),
                  tuple(frozenset(lab) for lab in labels))
    pstates = tuple((int(s), int(b)) for s, b in zip(prod.base_state, prod.bits))
    return ReducedMdp(reduced, tuple(int(v) for v in state_map), pstates, report)
