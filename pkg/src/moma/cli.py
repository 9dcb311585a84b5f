"""Command line front end.

Exit codes: 0 on success, 2 when an achievability verdict is Unknown, 1 on
any error (with ``{"code": ..., "message": ...}`` on standard error).
"""

from __future__ import annotations

import csv
import io
import json
import math
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import montecarlo
from .engine import refine
from .engine.objectives import ExpReward, ExpTime, QueryKind, TimedReach, UntimedReach
from .engine.solver import DEFAULT_VI_EPS
from .errors import MomaError
from .ingest import BenchmarkParams, generate_benchmark, parse_model, parse_query, serialize_model
from .ingest.benchmarks import FAMILIES
from .model import require_analysable

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_UNKNOWN = 2

SCHEMA_FILE = Path(__file__).with_name("result_schema.json")


class CliError(MomaError):
    code = "UsageError"


def load_schema() -> dict:
    return json.loads(SCHEMA_FILE.read_text())


# ---------------------------------------------------------------------------
# inputs


def _read_model(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read model file {path}: {exc.strerror}") from None
    return require_analysable(parse_model(text))


def _query_text(query: str | None) -> str:
    if not query:
        raise CliError("a query is required (-q)")
    p = Path(query)
    if ":" not in query and p.is_file():
        return p.read_text().strip()
    return query


def _positive(name: str, value: float) -> None:
    if not value > 0:
        raise CliError(f"{name} must be positive")


# ---------------------------------------------------------------------------
# output


def _num(x) -> float | None:
    x = float(x)
    return x if math.isfinite(x) else None


def _vec(xs) -> list:
    return [_num(x) for x in xs]


def _external_box(plan) -> dict:
    down, up = [], []
    for o, lo, hi in zip(plan.objectives, plan.error_box.down, plan.error_box.up):
        if o.minimizing:
            lo, hi = hi, lo
        down.append(lo)
        up.append(hi)
    return {"down": _vec(down), "up": _vec(up)}


def _sorted_vertices(poly) -> list[list]:
    rows = [tuple(float(x) for x in v) for v in poly.vertices]
    return [_vec(v) for v in sorted(rows)]


def _approx_fields(plan, approx) -> dict:
    signs = approx.signs
    under = approx.external_under()
    over = approx.external_over()
    return {
        "under": {"vertices": _sorted_vertices(under)},
        "over": {"halfspaces": [{"w": _vec(w), "b": _num(b)} for w, b in zip(over.normals, over.offsets)]},
        "solves": [{"w": _vec(np.asarray(s.weight) * signs), "point": _vec(plan.to_external(s.point))}
                   for s in approx.solves],
        "status": approx.status,
        "eta_achieved": _num(approx.eta_achieved),
    }


def _witness_summary(desc) -> dict | None:
    if desc is None:
        return None
    if desc.mode == "mixture":
        return {"mode": desc.mode, "weights": _vec(desc.weights), "components": [c.mode for c in desc.components]}
    return {"mode": desc.mode, "weights": [1.0], "components": [desc.mode]}


def _base_result(command: str, spec, plan, eta: float) -> dict:
    return {
        "command": command,
        "query": spec.text,
        "kind": spec.kind.value,
        "objectives": [o.describe() for o in spec.objectives],
        "eta": eta,
        "delta": plan.delta,
        "error_box": _external_box(plan),
    }


def _cell(x) -> str:
    if x is None:
        return ""
    return repr(x) if isinstance(x, float) else str(x)


def _emit(result: dict, fmt: str, output: str | None, rows: list[list] | None, header: list[str]) -> None:
    if fmt == "json":
        text = json.dumps(result, indent=2, sort_keys=True, allow_nan=False) + "\n"
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for r in rows or []:
            writer.writerow([_cell(x) for x in r])
        text = buf.getvalue()
    if output:
        Path(output).write_text(text)
    else:
        click.echo(text, nl=False)


def _write_witness(path: str | None, desc) -> None:
    if path and desc is not None:
        Path(path).write_text(json.dumps(desc.to_dict(), indent=1, sort_keys=True) + "\n")


def _log(quiet: bool):
    return None if quiet else (lambda line: click.echo(line, err=True))


# ---------------------------------------------------------------------------
# commands

_analysis_options = [
    click.argument("model", type=click.Path(dir_okay=False)),
    click.option("-q", "--query", help="Query text or a file holding it."),
    click.option("--eta", type=float, default=refine.DEFAULT_ETA, show_default=True, help="Approximation precision."),
    click.option("--delta", type=float, default=None, help="Digitization constant (chosen automatically if absent)."),
    click.option("--vi-epsilon", "vi_eps", type=float, default=DEFAULT_VI_EPS, show_default=True,
                 help="Value-iteration precision."),
    click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json", show_default=True),
    click.option("--output", "-o", type=click.Path(dir_okay=False), default=None, help="Result file (default stdout)."),
    click.option("--workers", type=int, default=1, show_default=True, help="Worker processes for simulation."),
    click.option("--deterministic", is_flag=True, help="Report wall_time_ms as 0 for reproducible output."),
    click.option("--witness", "witness_path", type=click.Path(dir_okay=False), default=None,
                 help="Write the full witness scheduler to this JSON file."),
    click.option("--verbose", "-v", is_flag=True, help="Log one line per refinement to standard error."),
]


def _with_options(options):
    def deco(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn

    return deco


@click.group()
@click.version_option(package_name="artifact")
def cli() -> None:
    """Multi-objective analysis of Markov automata."""


def _prepare(model, query, eta, delta, vi_eps):
    _positive("--eta", eta)
    _positive("--vi-epsilon", vi_eps)
    if delta is not None:
        _positive("--delta", delta)
    ma = _read_model(model)
    spec = parse_query(_query_text(query), ma)
    plan = refine.route(ma, spec, eta, delta)
    return ma, spec, plan


@cli.command()
@_with_options(_analysis_options)
def pareto(model, query, eta, delta, vi_eps, fmt, output, workers, deterministic, witness_path, verbose):
    """Approximate the set of achievable points."""
    started = time.perf_counter()
    _, spec, plan = _prepare(model, query, eta, delta, vi_eps)
    approx = refine.pareto_refine(plan, eta=eta, vi_eps=vi_eps, log=_log(not verbose))
    result = _base_result("pareto", spec, plan, eta)
    result.update(_approx_fields(plan, approx))
    result["verdict"] = None
    result["wall_time_ms"] = 0 if deterministic else round((time.perf_counter() - started) * 1000)
    rows = result["under"]["vertices"]
    _emit(result, fmt, output, rows, [f"p{i + 1}" for i in range(plan.dim)])
    return EXIT_OK


@cli.command()
@_with_options(_analysis_options)
def check(model, query, eta, delta, vi_eps, fmt, output, workers, deterministic, witness_path, verbose):
    """Decide an achievability query or bracket a numerical one."""
    started = time.perf_counter()
    _, spec, plan = _prepare(model, query, eta, delta, vi_eps)
    result = _base_result("check", spec, plan, eta)
    if spec.kind == QueryKind.ACHIEVABILITY:
        res = refine.achievability(plan, eta=eta, vi_eps=vi_eps)
        verdict, witness, approx = res.verdict, res.witness, res.approx
        result["gap"] = _num(res.gap)
        result["dropped"] = list(res.dropped)
        if res.detail:
            result["detail"] = res.detail
    elif spec.kind == QueryKind.NUMERICAL:
        res = refine.numerical_query(plan, eta=eta, vi_eps=vi_eps)
        verdict, witness, approx = res.verdict, res.witness, res.approx
        result["value"] = {"objective": res.index,
                           "lo": None if res.lo is None else _num(res.lo),
                           "hi": None if res.hi is None else _num(res.hi)}
    else:
        raise CliError("check expects an achieve or numerical query; use the pareto command")
    if approx is not None:
        result.update(_approx_fields(plan, approx))
    else:
        result.update({"under": {"vertices": []}, "over": {"halfspaces": []}, "solves": [],
                       "status": None, "eta_achieved": None})
    result["verdict"] = verdict
    result["witness"] = _witness_summary(witness)
    _write_witness(witness_path, witness)
    result["wall_time_ms"] = 0 if deterministic else round((time.perf_counter() - started) * 1000)
    _emit(result, fmt, output, result["under"]["vertices"], [f"p{i + 1}" for i in range(plan.dim)])
    return EXIT_UNKNOWN if verdict == refine.UNKNOWN else EXIT_OK


def event_for(objective):
    """Simulation event whose expectation is the objective's value."""
    k = objective.kind
    if isinstance(k, TimedReach):
        if objective.is_timed:
            return montecarlo.TimedReachEvent(k.goal, k.interval)
        return montecarlo.UntimedReachEvent(k.goal)
    if isinstance(k, UntimedReach):
        return montecarlo.UntimedReachEvent(k.goal)
    if isinstance(k, ExpReward):
        return montecarlo.RewardEvent(k.goal, k.reward)
    if isinstance(k, ExpTime):
        return montecarlo.RewardEvent(k.goal, None)
    raise TypeError(f"unknown objective kind {k!r}")


def threshold_scheduler_from(data: dict, ma) -> montecarlo.ThresholdScheduler:
    """Build a timing-rule scheduler from its JSON form.

    ``{"rules": [{"state", "kind", "op", "constant", "action"}], "default": {"state": action}}``
    """
    try:
        rules = tuple(montecarlo.Rule(int(r["state"]), r.get("kind", montecarlo.LAST_SOJOURN), r["op"],
                                      float(r["constant"]), r["action"]) for r in data.get("rules", []))
        default = {int(s): a for s, a in data.get("default", {}).items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"malformed scheduler file: {exc}") from None
    for r in rules:
        if r.action not in ma.enabled(r.state):
            raise CliError(f"action {r.action!r} is not enabled in state {r.state}")
    for s, a in default.items():
        if a not in ma.enabled(s):
            raise CliError(f"action {a!r} is not enabled in state {s}")
    return montecarlo.ThresholdScheduler(rules, default)


@cli.command()
@_with_options(_analysis_options)
@click.option("--samples", type=int, default=100_000, show_default=True)
@click.option("--confidence", type=float, default=0.99, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--scheduler", "scheduler_path", type=click.Path(dir_okay=False), default=None,
              help="Timing-rule scheduler as JSON; without it the query's witness is simulated.")
def simulate(model, query, eta, delta, vi_eps, fmt, output, workers, deterministic, witness_path, verbose,
             samples, confidence, seed, scheduler_path):
    """Estimate every objective of the query by Monte Carlo simulation."""
    started = time.perf_counter()
    if workers < 1:
        raise CliError("--workers must be at least 1")
    ma = _read_model(model)
    spec = parse_query(_query_text(query), ma)
    if scheduler_path:
        try:
            data = json.loads(Path(scheduler_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read scheduler file: {exc}") from None
        sched = threshold_scheduler_from(data, ma)
        described = {"mode": "threshold", "rules": len(sched.rules)}
    else:
        plan = refine.route(ma, spec, eta, delta)
        if spec.kind == QueryKind.ACHIEVABILITY:
            sched = refine.achievability(plan, eta=eta, vi_eps=vi_eps).witness
        elif spec.kind == QueryKind.NUMERICAL:
            sched = refine.numerical_query(plan, eta=eta, vi_eps=vi_eps).witness
        else:
            raise CliError("a pareto query has no single witness; pass --scheduler")
        if sched is None:
            raise CliError("the query has no witness scheduler to simulate")
        _write_witness(witness_path, sched)
        described = _witness_summary(sched)
    estimates = []
    for obj in spec.objectives:
        est = montecarlo.estimate(ma, sched, event_for(obj), n=samples, confidence=confidence, seed=seed,
                                  workers=workers)
        estimates.append({"objective": obj.describe(), "mean": est.mean, "half_width": est.half_width,
                          "low": est.low, "high": est.high})
    result = {
        "command": "simulate",
        "query": spec.text,
        "samples": samples,
        "confidence": confidence,
        "seed": seed,
        "scheduler": described,
        "estimates": estimates,
        "wall_time_ms": 0 if deterministic else round((time.perf_counter() - started) * 1000),
    }
    rows = [[e["objective"], e["mean"], e["half_width"], e["low"], e["high"]] for e in estimates]
    _emit(result, fmt, output, rows, ["objective", "mean", "half_width", "low", "high"])
    return EXIT_OK


@cli.command()
@click.argument("family", type=click.Choice(FAMILIES))
@click.option("--n", "n", type=int, required=True, help="Size parameter.")
@click.option("--k", "k", type=int, default=None, help="Second parameter (jobs and polling).")
@click.option("--output", "-o", type=click.Path(dir_okay=False), required=True, help="Model file to write.")
def generate(family, n, k, output):
    """Write a benchmark model and print its standard queries."""
    bench = generate_benchmark(BenchmarkParams(family, n, k))
    Path(output).write_text(serialize_model(bench.ma))
    summary = {"family": family, "n": n, "k": k, "states": bench.ma.num_states, "objectives": bench.objectives}
    click.echo(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def _fail(code: str, message: str) -> int:
    click.echo(json.dumps({"code": code, "message": message}), err=True)
    return EXIT_ERROR


def run(args: list[str] | None = None) -> int:
    """Run the command line and return the exit code."""
    try:
        rv = cli.main(args=args, prog_name="moma", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        return _fail("UsageError", exc.format_message())
    except click.exceptions.Abort:
        return _fail("Aborted", "aborted")
    except MomaError as exc:
        d = exc.to_dict()
        return _fail(d["code"], d["message"])
    except (ValueError, OSError) as exc:
        return _fail(type(exc).__name__, str(exc))
    return rv if isinstance(rv, int) else EXIT_OK


def main() -> None:
    sys.exit(run())
