"""Parser for the textual query language.

::

    query      := kind ":" objective (";" objective)*
    kind       := "pareto" | "achieve" | "numerical"
    objective  := "P" dir "[" "F" bound? goal "]"
                | "R" dir "{" string "}" "[" "F" goal "]"
                | "T" dir "[" "F" goal "]"
    dir        := "max" | "min" | (">=" | "<=" | ">" | "<") number
    bound      := "[" number "," (number | "inf") "]"
    goal       := string ("|" string)*

A goal is the set of states carrying any of the listed labels.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from ..engine.objectives import (
    Direction,
    ExpReward,
    ExpTime,
    Objective,
    QueryKind,
    QuerySpec,
    Threshold,
    TimedReach,
    UntimedReach,
    check_shape,
)
from ..errors import QuerySyntaxError, UnknownLabel, UnknownRewardName
from ..model import MarkovAutomaton
from ..transform import TimeInterval

_LEX = re.compile(
    r'\s*(?:(?P<str>"[^"]*")|(?P<num>[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)'
    r"|(?P<rel>>=|<=|>|<)|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<punct>[:;\[\]{},|]))"
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    pos: int


def _lex(text: str) -> list[_Tok]:
    out = []
    pos = 0
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _LEX.match(text, pos)
        if m is None or m.end() == pos:
            raise QuerySyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        val = m.group(kind)
        if kind == "str":
            val = val[1:-1]
        # split "Pmax" style identifiers into operator and direction
        if kind == "ident" and len(val) > 1 and val[0] in "PRT" and val[1:] in ("max", "min"):
            out.append(_Tok("ident", val[0], start))
            out.append(_Tok("ident", val[1:], start + 1))
        else:
            out.append(_Tok(kind, val, start))
        pos = m.end()
    out.append(_Tok("eof", "", len(text)))
    return out


class _QueryParser:
    def __init__(self, text: str, ma: MarkovAutomaton):
        self.text = text
        self.toks = _lex(text)
        self.i = 0
        self.ma = ma
        self.labels = ma.all_labels()

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> _Tok:
        tok = self.take()
        if tok.text != text or tok.kind == "str":
            raise QuerySyntaxError(f"expected {text!r}, found {tok.text or 'end of input'!r}", tok.pos)
        return tok

    def number(self) -> float:
        tok = self.take()
        if tok.kind == "num":
            return float(tok.text)
        if tok.kind == "ident" and tok.text == "inf":
            return math.inf
        raise QuerySyntaxError(f"expected a number, found {tok.text or 'end of input'!r}", tok.pos)

    def parse(self) -> QuerySpec:
        tok = self.take()
        try:
            kind = QueryKind(tok.text)
        except ValueError:
            raise QuerySyntaxError("query must start with pareto, achieve or numerical", tok.pos) from None
        self.expect(":")
        objectives = [self.objective()]
        while self.peek().text == ";" and self.peek().kind == "punct":
            self.take()
            if self.peek().kind == "eof":
                break
            objectives.append(self.objective())
        end = self.peek()
        if end.kind != "eof":
            raise QuerySyntaxError(f"unexpected {end.text!r}", end.pos)
        optimize = check_shape(kind, objectives)
        return QuerySpec(kind, tuple(objectives), optimize, self.text.strip())

    def direction(self) -> tuple[Direction, Threshold | None]:
        tok = self.take()
        if tok.kind == "ident" and tok.text in ("max", "min"):
            return Direction(tok.text), None
        if tok.kind == "rel":
            thr = Threshold(tok.text, self.number())
            return thr.direction, thr
        raise QuerySyntaxError("expected max, min or a comparison", tok.pos)

    def goal(self) -> frozenset[int]:
        states: set[int] = set()
        while True:
            tok = self.take()
            if tok.kind != "str":
                raise QuerySyntaxError("expected a quoted label", tok.pos)
            if tok.text not in self.labels:
                raise UnknownLabel(f"label {tok.text!r} does not occur in the model")
            states |= self.ma.states_with_label(tok.text)
            if self.peek().text == "|" and self.peek().kind == "punct":
                self.take()
                continue
            return frozenset(states)

    def objective(self) -> Objective:
        start = self.peek().pos
        op = self.take()
        if op.kind != "ident" or op.text not in ("P", "R", "T"):
            raise QuerySyntaxError("objective must start with P, R or T", op.pos)
        direction, thr = self.direction()
        reward = None
        if op.text == "R":
            self.expect("{")
            tok = self.take()
            if tok.kind != "str":
                raise QuerySyntaxError("expected a quoted reward name", tok.pos)
            try:
                reward = self.ma.reward_index(tok.text)
            except KeyError:
                raise UnknownRewardName(f"reward {tok.text!r} is not defined in the model") from None
            self.expect("}")
        self.expect("[")
        self.expect("F")
        interval = None
        if self.peek().text == "[" and self.peek().kind == "punct":
            if op.text != "P":
                raise QuerySyntaxError("time bounds are only allowed on probability objectives", self.peek().pos)
            bpos = self.take().pos
            lo = self.number()
            self.expect(",")
            hi = self.number()
            self.expect("]")
            try:
                interval = TimeInterval(lo, hi)
            except ValueError as exc:
                raise QuerySyntaxError(str(exc), bpos) from None
        goal = self.goal()
        end = self.expect("]")
        text = self.text[start:end.pos + 1]
        if op.text == "P":
            kind = UntimedReach(goal) if interval is None or interval.is_trivial() else TimedReach(goal, interval)
        elif op.text == "R":
            kind = ExpReward(reward, goal)
        else:
            kind = ExpTime(goal)
        if not goal:
            raise UnknownLabel(f"goal of {text!r} is empty")
        return Objective(kind, direction, thr, text)


def parse_query(text: str, ma: MarkovAutomaton) -> QuerySpec:
    """Parse ``text`` and resolve labels and reward names against ``ma``."""
    return _QueryParser(text, ma).parse()
