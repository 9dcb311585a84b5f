"""Exception types shared by every layer of the checker.

Each exception carries a short machine-readable ``code`` so that the command
line front end can report failures in a stable format.
"""

from __future__ import annotations


class MomaError(Exception):
    """Base class of all errors raised by this package."""

    code = "Error"

    def to_dict(self) -> dict:
        return {"code": self.code, "message": str(self)}


# model core ---------------------------------------------------------------

class InvalidModel(MomaError):
    """Raised when validation finds errors; ``report`` lists all of them."""

    code = "InvalidModel"

    def __init__(self, report):
        self.report = report
        first = report.errors[0] if report.errors else None
        msg = f"{len(report.errors)} validation error(s)"
        if first is not None:
            msg += f"; first: {first.code} at {first.location}: {first.message}"
        super().__init__(msg)


class NotMarkovian(MomaError):
    code = "NotMarkovian"


class ZenoModel(MomaError):
    code = "ZenoModel"

    def __init__(self, states):
        self.states = sorted(states)
        super().__init__(f"Zeno behaviour possible from states {self.states[:10]}")


# ingest --------------------------------------------------------------------

class ModelSyntaxError(MomaError):
    code = "SyntaxError"

    def __init__(self, message: str, line: int, col: int):
        self.line = line
        self.col = col
        super().__init__(f"line {line}, column {col}: {message}")


class UnknownState(MomaError):
    code = "UnknownState"

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        where = f"line {line}, column {col}: " if line is not None else ""
        super().__init__(where + message)


class DuplicateDeclaration(UnknownState):
    code = "DuplicateDeclaration"


class QuerySyntaxError(MomaError):
    code = "SyntaxError"

    def __init__(self, message: str, pos: int):
        self.pos = pos
        super().__init__(f"position {pos}: {message}")


class UnknownLabel(MomaError):
    code = "UnknownLabel"


class UnknownRewardName(MomaError):
    code = "UnknownRewardName"


class MixedQueryShape(MomaError):
    code = "MixedQueryShape"


class InvalidParams(MomaError):
    code = "InvalidParams"


# transform -----------------------------------------------------------------

class NotWellFormed(MomaError):
    code = "NotWellFormed"

    def __init__(self, interval, delta):
        self.interval = interval
        self.delta = delta
        super().__init__(f"interval {interval} is not well-formed for delta={delta}")


class Diverges(MomaError):
    code = "Diverges"

    def __init__(self, needed_delta: float):
        self.needed_delta = needed_delta
        super().__init__(f"required digitization constant {needed_delta:.3e} is below 1e-12")


# engine --------------------------------------------------------------------

class NonConvergence(MomaError):
    code = "NonConvergence"


class InfiniteValue(MomaError):
    code = "InfiniteValue"

    def __init__(self, objectives, detail: str = ""):
        self.objectives = sorted(objectives)
        msg = f"objective(s) {self.objectives} have infinite optimal value"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class Infeasible(MomaError):
    code = "Infeasible"


# geometry ------------------------------------------------------------------

class DimensionTooHigh(MomaError):
    code = "DimensionTooHigh"


# montecarlo ----------------------------------------------------------------

class HorizonTooSmall(MomaError):
    code = "HorizonTooSmall"


class UnsupportedSchedulerShape(MomaError):
    code = "UnsupportedSchedulerShape"
