"""Reader and writer for the line-oriented explicit model format.

Example::

    @type: ma
    @states: 2
    @initial: 0
    state 0 init
      rate 1.5
        1 : 1
    state 1 goal
      action a
        0 : 0.5
        1 : 0.5
    @rewards cost
      state 0 : 2
      action 1 a : 1
    @end
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import Iterator

from ..errors import DuplicateDeclaration, ModelSyntaxError, UnknownState
from ..model import MARKOVIAN, Distribution, MarkovAutomaton, MarkovianTransition, RewardFunction

MARKOVIAN_KEYWORD = "!markovian"

_TOKEN = re.compile(r'\s*(?:(?P<str>"(?:[^"\\]|\\.)*")|(?P<colon>:)|(?P<comment>#.*)|(?P<word>[^\s:"#]+))')
_BARE = re.compile(r"[A-Za-z_][A-Za-z0-9_.\-]*\Z")


@dataclass(frozen=True)
class Token:
    text: str
    line: int
    col: int
    quoted: bool = False


def _tokenize(line: str, lineno: int) -> list[Token]:
    tokens = []
    pos = 0
    while pos < len(line):
        if line[pos:].strip() == "":
            break
        m = _TOKEN.match(line, pos)
        if m is None or m.end() == pos:
            col = pos + 1 + (len(line[pos:]) - len(line[pos:].lstrip()))
            raise ModelSyntaxError("unterminated string or unexpected character", lineno, col)
        kind = m.lastgroup
        col = m.start(kind) + 1
        if kind == "comment":
            break
        if kind == "str":
            try:
                text = json.loads(m.group(kind))
            except json.JSONDecodeError:
                raise ModelSyntaxError("invalid string literal", lineno, col) from None
            tokens.append(Token(text, lineno, col, True))
        else:
            tokens.append(Token(m.group(kind), lineno, col))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.lines: list[list[Token]] = []
        for i, raw in enumerate(text.splitlines(), start=1):
            toks = _tokenize(raw, i)
            if toks:
                self.lines.append(toks)
        self.i = 0
        self.last_line = len(text.splitlines())

    # helpers ---------------------------------------------------------------
    def peek(self) -> list[Token] | None:
        return self.lines[self.i] if self.i < len(self.lines) else None

    def take(self) -> list[Token]:
        toks = self.lines[self.i]
        self.i += 1
        return toks

    @staticmethod
    def expect_len(toks: list[Token], n: int, what: str) -> None:
        if len(toks) != n:
            bad = toks[n] if len(toks) > n else toks[-1]
            col = bad.col if len(toks) > n else bad.col + len(bad.text)
            raise ModelSyntaxError(f"malformed {what}", bad.line, col)

    @staticmethod
    def expect_colon(tok: Token) -> None:
        if tok.text != ":" or tok.quoted:
            raise ModelSyntaxError("expected ':'", tok.line, tok.col)

    @staticmethod
    def integer(tok: Token) -> int:
        if tok.quoted or not re.fullmatch(r"\d+", tok.text):
            raise ModelSyntaxError(f"expected a state index, found {tok.text!r}", tok.line, tok.col)
        return int(tok.text)

    @staticmethod
    def number(tok: Token) -> float:
        try:
            if tok.quoted:
                raise ValueError
            return float(tok.text)
        except ValueError:
            raise ModelSyntaxError(f"expected a number, found {tok.text!r}", tok.line, tok.col) from None

    def state_index(self, tok: Token, n: int) -> int:
        s = self.integer(tok)
        if s >= n:
            raise UnknownState(f"state {s} is outside 0..{n - 1}", tok.line, tok.col)
        return s

    # grammar ---------------------------------------------------------------
    def parse(self) -> MarkovAutomaton:
        header: dict[str, tuple[str, Token]] = {}
        while (toks := self.peek()) is not None and toks[0].text.startswith("@") and toks[0].text not in ("@rewards", "@end"):
            toks = self.take()
            key = toks[0].text
            if key not in ("@type", "@states", "@initial"):
                raise ModelSyntaxError(f"unknown directive {key}", toks[0].line, toks[0].col)
            self.expect_len(toks, 3, key)
            self.expect_colon(toks[1])
            if key in header:
                raise DuplicateDeclaration(f"{key} given twice", toks[0].line, toks[0].col)
            header[key] = (toks[2].text, toks[2])
        if "@type" in header and header["@type"][0] != "ma":
            tok = header["@type"][1]
            raise ModelSyntaxError("only '@type: ma' is supported", tok.line, tok.col)
        if "@states" not in header:
            raise ModelSyntaxError("missing '@states' directive", self.last_line, 1)
        n = self.integer(header["@states"][1])
        initial = 0
        if "@initial" in header:
            initial = self.state_index(header["@initial"][1], n)

        actions: list[list[tuple[str, Distribution]]] = [[] for _ in range(n)]
        markovian: list[MarkovianTransition | None] = [None] * n
        labels: list[frozenset[str]] = [frozenset() for _ in range(n)]
        declared: set[int] = set()
        while (toks := self.peek()) is not None and toks[0].text == "state" and not toks[0].quoted:
            toks = self.take()
            if len(toks) < 2:
                raise ModelSyntaxError("state block needs an index", toks[0].line, toks[0].col + 5)
            s = self.state_index(toks[1], n)
            if s in declared:
                raise DuplicateDeclaration(f"state {s} declared twice", toks[1].line, toks[1].col)
            declared.add(s)
            labels[s] = frozenset(t.text for t in toks[2:])
            for t in toks[2:]:
                if t.text == ":" and not t.quoted:
                    raise ModelSyntaxError("unexpected ':'", t.line, t.col)
            while (sub := self.peek()) is not None and sub[0].text in ("action", "rate") and not sub[0].quoted:
                sub = self.take()
                self.expect_len(sub, 2, sub[0].text + " line")
                dist = self.distribution(n)
                if sub[0].text == "action":
                    actions[s].append((sub[1].text, dist))
                else:
                    if markovian[s] is not None:
                        raise DuplicateDeclaration(f"state {s} has two Markovian transitions", sub[0].line, sub[0].col)
                    markovian[s] = MarkovianTransition(self.number(sub[1]), dist)

        rewards: list[RewardFunction] = []
        while (toks := self.peek()) is not None and toks[0].text == "@rewards":
            toks = self.take()
            self.expect_len(toks, 2, "@rewards line")
            name = toks[1].text
            if any(r.name == name for r in rewards):
                raise DuplicateDeclaration(f"reward {name!r} declared twice", toks[1].line, toks[1].col)
            state_r: dict[int, float] = {}
            action_r: dict[tuple[int, str], float] = {}
            while (sub := self.peek()) is not None and sub[0].text in ("state", "action") and not sub[0].quoted:
                sub = self.take()
                if sub[0].text == "state":
                    self.expect_len(sub, 4, "state reward")
                    self.expect_colon(sub[2])
                    s = self.state_index(sub[1], n)
                    if s in state_r:
                        raise DuplicateDeclaration(f"state reward for {s} given twice", sub[1].line, sub[1].col)
                    state_r[s] = self.number(sub[3])
                else:
                    self.expect_len(sub, 5, "action reward")
                    self.expect_colon(sub[3])
                    s = self.state_index(sub[1], n)
                    a = MARKOVIAN if (sub[2].text == MARKOVIAN_KEYWORD and not sub[2].quoted) else sub[2].text
                    if (s, a) in action_r:
                        raise DuplicateDeclaration(f"action reward for {s}/{a} given twice", sub[1].line, sub[1].col)
                    action_r[(s, a)] = self.number(sub[4])
            rewards.append(RewardFunction(name, state_r, action_r))
            if (end := self.peek()) is not None and end[0].text == "@end":
                self.expect_len(self.take(), 1, "@end line")

        if (toks := self.peek()) is not None:
            tok = toks[0]
            if tok.text == "state" and not tok.quoted:
                raise ModelSyntaxError("state blocks must precede reward sections", tok.line, tok.col)
            raise ModelSyntaxError(f"unexpected {tok.text!r}", tok.line, tok.col)

        return MarkovAutomaton(
            num_states=n,
            initial=initial,
            actions=tuple(tuple(a) for a in actions),
            markovian=tuple(markovian),
            rewards=tuple(rewards),
            labels=tuple(labels),
        )

    def distribution(self, n: int) -> Distribution:
        entries: dict[int, float] = {}
        while (toks := self.peek()) is not None and re.fullmatch(r"\d+", toks[0].text) and not toks[0].quoted:
            toks = self.take()
            self.expect_len(toks, 3, "distribution entry")
            self.expect_colon(toks[1])
            t = self.state_index(toks[0], n)
            if t in entries:
                raise DuplicateDeclaration(f"target {t} listed twice", toks[0].line, toks[0].col)
            entries[t] = self.number(toks[2])
        return Distribution(tuple(sorted(entries.items())))


def parse_model(text: str) -> MarkovAutomaton:
    """Parse the explicit model format into an (unnormalized) Markov automaton."""
    return _Parser(text).parse()


def _name(text: str) -> str:
    return text if _BARE.match(text) and text not in ("state", "action", "rate") else json.dumps(text)


def _num(x: float) -> str:
    if math.isfinite(x) and x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def iter_serialized(ma: MarkovAutomaton) -> Iterator[str]:
    yield "@type: ma"
    yield f"@states: {ma.num_states}"
    yield f"@initial: {ma.initial}"
    for s in range(ma.num_states):
        yield " ".join(["state", str(s)] + [_name(lab) for lab in sorted(ma.labels[s])])
        for a, dist in ma.actions[s]:
            yield f"  action {_name(a)}"
            for t, p in dist:
                yield f"    {t} : {_num(p)}"
        m = ma.markovian[s]
        if m is not None:
            yield f"  rate {_num(m.rate)}"
            for t, p in m.distribution:
                yield f"    {t} : {_num(p)}"
    for rf in ma.rewards:
        yield f"@rewards {_name(rf.name)}"
        for s, v in sorted(rf.state_rewards.items()):
            yield f"  state {s} : {_num(v)}"
        for (s, a), v in sorted(rf.action_rewards.items()):
            name = MARKOVIAN_KEYWORD if a == MARKOVIAN else _name(a)
            yield f"  action {s} {name} : {_num(v)}"
        yield "@end"


def serialize_model(ma: MarkovAutomaton) -> str:
    return "\n".join(iter_serialized(ma)) + "\n"
