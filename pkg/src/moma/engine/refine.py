"""Query evaluation on Markov automata.

Queries are first routed to an MDP: the underlying MDP when no objective is
timed, a digitization otherwise.  All further work happens on that MDP with
objectives in maximize form.  The achievable set of the MDP is approximated by
weighted solves; for digitized plans the approximation is widened by the
per-objective error box to obtain sound bounds for the automaton.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .. import geometry
from ..errors import Infeasible, InfiniteValue, NonConvergence
from ..geometry import ErrorBox, Polytope
from ..model import MarkovAutomaton, Mdp, RewardFunction, classify
from ..transform import (
    choose_delta,
    digitize,
    digitize_interval,
    error_bounds,
    underlying_mdp,
)
from .objectives import (
    ExpReward,
    ExpTime,
    NormalizedObjective,
    QueryKind,
    QuerySpec,
    TimedReach,
    normalize_objective,
)
from .solver import DEFAULT_VI_EPS, SchedulerDescription, WeightedSolve, WeightedSolver

DEFAULT_ETA = 1e-3
MAX_ITERATIONS = 200
TIME_REWARD = "__time__"
STRICT_NUDGE = 1e-7
CONTAIN_TOL = 1e-9

CONVERGED = "Converged"
ITERATION_CAP = "IterationCap"
BOX_TOO_WIDE = "ErrorBoxTooWide"

ACHIEVABLE = "Achievable"
NOT_ACHIEVABLE = "NotAchievable"
UNKNOWN = "Unknown"


# ---------------------------------------------------------------------------
# routing


@dataclass(frozen=True)
class AnalysisPlan:
    """MDP and maximize-form objectives a query is evaluated on.

    ``error_box`` is in maximize form: the automaton's value of objective ``i``
    lies in ``[v - down[i], v + up[i]]`` where ``v`` is the MDP value.
    """

    kind: str
    query: QuerySpec
    mdp: Mdp
    objectives: tuple[NormalizedObjective, ...]
    error_box: ErrorBox
    delta: float | None
    lambda_max: float

    @property
    def dim(self) -> int:
        return len(self.objectives)

    @property
    def signs(self) -> np.ndarray:
        return np.asarray([o.sign for o in self.objectives], dtype=float)

    def to_external(self, point: Sequence[float]) -> tuple[float, ...]:
        return tuple(o.to_external(float(x)) for o, x in zip(self.objectives, point))


def with_time_reward(ma: MarkovAutomaton) -> tuple[MarkovAutomaton, int]:
    """Copy of ``ma`` with a reward earning 1 per time unit in Markovian states."""
    _, markovian = classify(ma)
    rf = RewardFunction(TIME_REWARD, {s: 1.0 for s in markovian})
    return dataclasses.replace(ma, rewards=tuple(ma.rewards) + (rf,)), len(ma.rewards)


def route(ma: MarkovAutomaton, query: QuerySpec, eta: float = DEFAULT_ETA, delta: float | None = None,
          eta_digi: float | None = None) -> AnalysisPlan:
    """Pick the MDP a query is evaluated on.

    Timed objectives share the digitization budget: each gets
    ``eta / (2 sqrt(k))`` for ``k`` timed objectives unless ``eta_digi`` is given,
    so the error box adds at most ``eta / 2`` in Euclidean norm.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    time_index = None
    if any(isinstance(o.kind, ExpTime) for o in query.objectives):
        ma, time_index = with_time_reward(ma)
    lam = ma.lambda_max()
    timed = [o for o in query.objectives if o.is_timed]
    if not timed:
        mdp = underlying_mdp(ma)
        objs = tuple(_normalize(o, None, time_index) for o in query.objectives)
        return AnalysisPlan("underlying", query, mdp, objs, ErrorBox.zero(len(objs)), None, lam)

    intervals = [o.kind.interval for o in timed]
    if delta is None:
        budget = eta_digi if eta_digi is not None else eta / (2.0 * math.sqrt(len(timed)))
        delta = choose_delta(lam, intervals, budget)
    mdp = digitize(ma, delta)
    objs, down, up = [], [], []
    for o in query.objectives:
        if o.is_timed:
            iv = o.kind.interval
            steps = digitize_interval(iv, delta)
            lo, hi = error_bounds(iv, delta, lam)
        else:
            steps, lo, hi = None, 0.0, 0.0
        n = _normalize(o, steps, time_index)
        objs.append(n)
        # a minimized value flips sign, so its error sides swap
        if n.minimizing:
            lo, hi = hi, lo
        down.append(lo)
        up.append(hi)
    return AnalysisPlan("digitized", query, mdp, tuple(objs), ErrorBox(tuple(down), tuple(up)), delta, lam)


def _normalize(obj, steps, time_index) -> NormalizedObjective:
    if isinstance(obj.kind, ExpTime):
        obj = dataclasses.replace(obj, kind=ExpReward(time_index, obj.kind.goal))
    elif isinstance(obj.kind, TimedReach) and not obj.is_timed:
        steps = None
    return normalize_objective(obj, steps)


# ---------------------------------------------------------------------------
# results


def external_polytope(poly: Polytope, signs: Sequence[float]) -> Polytope:
    """Reflect the minimized coordinates of a maximize-form polytope."""
    s = np.asarray(signs, dtype=float)
    verts = poly.vertices * s if len(poly.vertices) else poly.vertices
    normals = poly.normals * s if len(poly.normals) else poly.normals
    rays = [r * s for r in poly.rays] if len(poly.rays) else []
    rays += [np.eye(poly.dim)[i] for i in range(poly.dim) if s[i] < 0 and poly.downward_closed[i]]
    flags = tuple(bool(f and s[i] > 0) for i, f in enumerate(poly.downward_closed))
    return Polytope(poly.dim, np.asarray(verts, float).reshape(-1, poly.dim), np.asarray(normals, float).reshape(-1, poly.dim),
                    poly.offsets.copy(), flags, np.asarray(rays, dtype=float).reshape(-1, poly.dim))


@dataclass
class ApproxResult:
    """Sound approximation of the achievable set, in maximize form.

    ``under``/``over`` are the automaton-level bounds (the MDP approximations
    shifted by the error box); ``mdp_under``/``mdp_over`` are the unshifted ones.
    """

    under: Polytope
    over: Polytope
    error_box: ErrorBox
    solves: list[WeightedSolve]
    eta_achieved: float
    status: str
    mdp_under: Polytope
    mdp_over: Polytope
    objectives: tuple[NormalizedObjective, ...] = ()
    iterations: int = 0

    @property
    def signs(self) -> np.ndarray:
        return np.asarray([o.sign for o in self.objectives], dtype=float)

    def external_under(self) -> Polytope:
        return external_polytope(self.under, self.signs)

    def external_over(self) -> Polytope:
        return external_polytope(self.over, self.signs)

    def witness(self, target: Sequence[float]) -> SchedulerDescription | None:
        """Mixture of solve schedulers whose MDP values dominate ``target + error_box.down``."""
        goal = np.asarray(target, float) + np.asarray(self.error_box.down)
        lam = mixture_weights([s.point for s in self.solves], goal)
        if lam is None:
            return None
        return SchedulerDescription.mixture([s.scheduler for s in self.solves], lam)


def mixture_weights(points: Sequence[Sequence[float]], goal: Sequence[float], tol: float = 1e-9) -> np.ndarray | None:
    """Convex weights ``lam`` with ``sum lam_k points_k >= goal`` (componentwise), if any."""
    pts = np.asarray(points, dtype=float)
    k, d = pts.shape
    res = linprog(np.zeros(k), A_ub=-pts.T, b_ub=-(np.asarray(goal, float) - tol),
                  A_eq=np.ones((1, k)), b_eq=[1.0], bounds=[(0, None)] * k, method="highs")
    if res.status != 0:
        return None
    lam = np.clip(res.x, 0.0, None)
    return lam / lam.sum()


class _Approximation:
    """Shared state of the refinement loops."""

    def __init__(self, solver: WeightedSolver, box: ErrorBox):
        self.solver = solver
        self.box = box
        self.d = solver.product.dim
        self.solves: list[WeightedSolve] = []
        self.weights: list[np.ndarray] = []

    def add(self, w: np.ndarray) -> WeightedSolve:
        w = np.asarray(w, dtype=float)
        w = w / np.linalg.norm(w)
        sol = self.solver.solve(w)
        self.solves.append(sol)
        self.weights.append(w)
        return sol

    def seen(self, w: np.ndarray) -> bool:
        w = w / np.linalg.norm(w)
        return any(np.linalg.norm(w - u) < 1e-9 for u in self.weights)

    def start(self) -> None:
        for i in range(self.d):
            self.add(np.eye(self.d)[i])

    def points(self) -> np.ndarray:
        return np.asarray([s.point for s in self.solves], dtype=float)

    def under(self) -> Polytope:
        return geometry.hull(self.points(), downward_closed=True)

    def over(self) -> Polytope:
        pts = self.points()
        w = np.asarray(self.weights)
        b = [max(float(wk @ s.point), float(np.max(pts @ wk))) for wk, s in zip(w, self.solves)]
        return geometry.from_halfspaces(w, b, downward_closed=True)

    def result(self, status: str, iterations: int) -> ApproxResult:
        under, over = self.under(), self.over()
        a_minus = geometry.translate(under, self.box, "down")
        a_plus = geometry.translate(over, self.box, "up")
        _, gap = geometry.max_gap(a_minus, a_plus)
        return ApproxResult(a_minus, a_plus, self.box, list(self.solves), gap, status, under, over,
                            self.solver.objectives, iterations)


def _solver_for(model, objectives, vi_eps, delta, check=True) -> tuple[WeightedSolver, ErrorBox]:
    if isinstance(model, AnalysisPlan):
        return WeightedSolver(model.mdp, model.objectives, vi_eps, model.delta, check=check), model.error_box
    objs = tuple(objectives)
    return WeightedSolver(model, objs, vi_eps, delta, check=check), ErrorBox.zero(len(objs))


def pareto_refine(model: Mdp | AnalysisPlan, objectives: Sequence[NormalizedObjective] | None = None,
                  eta: float = DEFAULT_ETA, vi_eps: float = DEFAULT_VI_EPS, max_iterations: int = MAX_ITERATIONS,
                  error_box: ErrorBox | None = None, delta: float | None = None, log=None) -> ApproxResult:
    """Approximate the achievable set until every over point is within ``eta`` of the under set.

    The distance is measured between the shifted approximations.  The error box
    accounts for part of it; the refinement itself runs until the unshifted gap
    is below what is left.  ``log`` receives one line per refinement.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    solver, box = _solver_for(model, objectives, vi_eps, delta)
    if error_box is not None:
        box = error_box
    approx = _Approximation(solver, box)
    box_norm = float(np.linalg.norm(box.width()))
    target = eta - box_norm if eta - box_norm > 0 else eta / 2.0
    approx.start()
    it = 0
    status = ITERATION_CAP
    while True:
        under, over = approx.under(), approx.over()
        w, gap = geometry.max_gap(under, over)
        if log is not None:
            log(f"refinement {it}: {len(approx.solves)} solves, gap {gap:.3e}")
        if gap <= target:
            status = CONVERGED
            break
        w = np.clip(w, 0.0, None)
        if not np.any(w > 0) or approx.seen(w) or it >= max_iterations:
            break
        approx.add(w)
        it += 1
    res = approx.result(status, it)
    if res.status == CONVERGED and res.eta_achieved > eta * (1 + 1e-9):
        res.status = BOX_TOO_WIDE
    return res


# ---------------------------------------------------------------------------
# achievability


@dataclass
class AchievabilityResult:
    verdict: str
    witness: SchedulerDescription | None = None
    gap: float = 0.0
    approx: ApproxResult | None = None
    dropped: tuple[int, ...] = ()
    detail: str = ""


def _thresholds(objectives: Sequence[NormalizedObjective]) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray([o.threshold for o in objectives], dtype=float)
    strict = np.asarray([o.strict for o in objectives], dtype=bool)
    return t, strict


def achievability(ma_or_plan, query: QuerySpec | None = None, eta: float = DEFAULT_ETA,
                  vi_eps: float = DEFAULT_VI_EPS, delta: float | None = None,
                  max_iterations: int = MAX_ITERATIONS) -> AchievabilityResult:
    """Decide whether all thresholds can be met by one scheduler."""
    plan = ma_or_plan if isinstance(ma_or_plan, AnalysisPlan) else route(ma_or_plan, query, eta, delta)
    objs = plan.objectives
    if any(o.threshold is None for o in objs):
        raise ValueError("achievability needs a threshold on every objective")
    solver = WeightedSolver(plan.mdp, objs, vi_eps, plan.delta, check=False)
    report = solver.report
    dropped: list[int] = []
    if report.has_infinity:
        for i in sorted(report.always_infinite):
            if objs[i].sign > 0:
                dropped.append(i)  # infinite under every scheduler: a lower bound always holds
            else:
                return AchievabilityResult(NOT_ACHIEVABLE, detail=f"objective {i} is infinite under every scheduler")
        if report.jointly_infinite:
            return AchievabilityResult(NOT_ACHIEVABLE, detail="minimized rewards cannot be kept finite together")
        rest = report.sup_infinite - set(dropped)
        if rest:
            raise InfiniteValue(rest, "maximized reward can grow without bound")
        keep = [i for i in range(len(objs)) if i not in dropped]
        if not keep:
            return AchievabilityResult(ACHIEVABLE, SchedulerDescription.mixture([solver_any(plan, vi_eps)], [1.0]),
                                       dropped=tuple(dropped))
        box = ErrorBox(tuple(plan.error_box.down[i] for i in keep), tuple(plan.error_box.up[i] for i in keep))
        plan = dataclasses.replace(plan, objectives=tuple(objs[i] for i in keep), error_box=box)
        objs = plan.objectives
        solver = WeightedSolver(plan.mdp, objs, vi_eps, plan.delta)
    res = _targeted(solver, plan.error_box, objs, max_iterations)
    res.dropped = tuple(dropped)
    return res


def solver_any(plan: AnalysisPlan, vi_eps: float) -> SchedulerDescription:
    """Some scheduler of the plan's MDP (used when no objective constrains it)."""
    reach = NormalizedObjective(frozenset(range(plan.mdp.num_states)), 1)
    return WeightedSolver(plan.mdp, [reach], vi_eps, plan.delta).solve([1.0]).scheduler


def _targeted(solver: WeightedSolver, box: ErrorBox, objs, max_iterations: int) -> AchievabilityResult:
    t, strict = _thresholds(objs)
    nudged = t + STRICT_NUDGE * strict * np.maximum(1.0, np.abs(t))
    approx = _Approximation(solver, box)
    approx.start()
    for it in range(max_iterations + 1):
        under = approx.under()
        a_minus = geometry.translate(under, box, "down")
        if geometry.contains(a_minus, t, CONTAIN_TOL):
            res = approx.result(CONVERGED, it)
            if strict.any() and not geometry.contains(a_minus, nudged, CONTAIN_TOL):
                return AchievabilityResult(UNKNOWN, gap=0.0, approx=res,
                                           detail="strict threshold lies on the boundary of the achievable set")
            witness = res.witness(t)
            if witness is None:
                raise NonConvergence("no witness mixture found for a contained point")
            return AchievabilityResult(ACHIEVABLE, witness, 0.0, res)
        a_plus = geometry.translate(approx.over(), box, "up")
        if not geometry.contains(a_plus, t, CONTAIN_TOL):
            return AchievabilityResult(NOT_ACHIEVABLE, approx=approx.result(CONVERGED, it))
        near, dist = geometry.nearest_point(a_minus, t)
        w = np.clip(t - near, 0.0, None)
        if not np.any(w > 1e-12) or approx.seen(w) or it == max_iterations:
            return AchievabilityResult(UNKNOWN, gap=dist, approx=approx.result(ITERATION_CAP, it),
                                       detail="threshold lies between the under and over approximations")
        approx.add(w)
    raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# numerical queries


@dataclass
class NumericalResult:
    """Bracket ``[lo, hi]`` of the optimum in external values.

    ``witness`` attains ``witness_value`` (the inner end of the bracket); an end
    is ``None`` when the thresholds could not be certified on the under side.
    """

    lo: float | None
    hi: float | None
    witness: SchedulerDescription | None
    witness_value: float | None
    approx: ApproxResult
    index: int = 0

    @property
    def verdict(self) -> str:
        return ACHIEVABLE if self.witness is not None else UNKNOWN


def numerical_query(ma_or_plan, query: QuerySpec | None = None, eta: float = DEFAULT_ETA,
                    vi_eps: float = DEFAULT_VI_EPS, delta: float | None = None,
                    max_iterations: int = MAX_ITERATIONS) -> NumericalResult:
    """Optimize one objective subject to thresholds on the others."""
    plan = ma_or_plan if isinstance(ma_or_plan, AnalysisPlan) else route(ma_or_plan, query, eta, delta)
    k = plan.query.optimize
    if k is None:
        raise ValueError("numerical query without an optimized objective")
    approx = pareto_refine(plan, eta=eta, vi_eps=vi_eps, max_iterations=max_iterations)
    objs = plan.objectives
    d = len(objs)
    others = [i for i in range(d) if i != k]
    t = np.asarray([objs[i].threshold for i in others], dtype=float)

    # upper end: maximize coordinate k over the over-approximation
    over = approx.over
    c = -np.eye(d)[k]
    a_ub = np.vstack([over.normals, -np.eye(d)[others]]) if others else over.normals
    b_ub = np.concatenate([over.offsets, -t]) if others else over.offsets
    res = linprog(c, A_ub=a_ub, b_ub=b_ub + 1e-12, bounds=[(None, None)] * d, method="highs")
    if res.status == 2:
        raise Infeasible("thresholds lie outside the over-approximation")
    if res.status != 0:
        raise NonConvergence(f"linear program failed: {res.message}")
    hi = float(res.x[k])

    # lower end: best mixture of solve points meeting the shifted thresholds
    pts = np.asarray([s.point for s in approx.solves], dtype=float)
    down = np.asarray(approx.error_box.down)
    m = len(pts)
    lo, witness = None, None
    if others:
        lres = linprog(-pts[:, k], A_ub=-pts[:, others].T, b_ub=-(t + down[others]) + 1e-12,
                       A_eq=np.ones((1, m)), b_eq=[1.0], bounds=[(0, None)] * m, method="highs")
        if lres.status == 0:
            lam = np.clip(lres.x, 0, None)
            lam /= lam.sum()
            lo = float(lam @ pts[:, k]) - down[k]
            witness = SchedulerDescription.mixture([s.scheduler for s in approx.solves], lam)
    else:
        j = int(np.argmax(pts[:, k]))
        lo = float(pts[j, k]) - down[k]
        witness = approx.solves[j].scheduler
    if lo is not None:
        lo = min(lo, hi)
    sign = objs[k].sign
    inner = None if lo is None else objs[k].to_external(lo)
    outer = objs[k].to_external(hi)
    if sign > 0:
        return NumericalResult(inner, outer, witness, inner, approx, k)
    return NumericalResult(outer, inner, witness, inner, approx, k)
