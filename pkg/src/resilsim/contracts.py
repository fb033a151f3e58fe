"""Assume/guarantee contracts: data model, text syntax, validation.

Grammar (one or more blocks per file, ``#`` starts a comment)::

    contract <id> {
      inputs: <port> : <domain> [, <port> : <domain>]*
      outputs: <port> : <domain> [, ...]
      assumptions: none | <pred> [; <pred>]*
      guarantee: <guarantee>
    }

    <domain>    := real | integer | boolean
    <pred>      := <num> <= <var> <= <num> | <var> >= <num> | <var> <= <num>
    <guarantee> := timing every <num> ms within <num> ms
                 | bound <port> in [<num>, <num>]
                 | member <port> in [<num>, <num>] ([<num>, <num>])*
                 | envelope <port> rate <num> initial <num> tol <num>

``rate`` is per second. ``t`` is the reserved time variable and may be used
in assumptions without being declared.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Union


class Domain(str, Enum):
    REAL = "real"
    INTEGER = "integer"
    BOOLEAN = "boolean"


@dataclass(frozen=True)
class PortDecl:
    name: str
    domain: Domain
    direction: str  # "in" | "out"


@dataclass(frozen=True)
class Timing:
    period_ms: float
    deadline_ms: float


@dataclass(frozen=True)
class Bound:
    port: str
    lo: float
    hi: float


@dataclass(frozen=True)
class SetMembership:
    port: str
    intervals: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class Envelope:
    port: str
    k1: float  # decay/growth rate, 1/s
    k2: float  # expected value at arming time
    rel_tol: float


Guarantee = Union[Timing, Bound, SetMembership, Envelope]


@dataclass(frozen=True)
class Predicate:
    var: str
    lo: float | None = None
    hi: float | None = None

    def holds(self, value: float) -> bool:
        return (self.lo is None or self.lo <= value) and (self.hi is None or value <= self.hi)


@dataclass(frozen=True)
class Contract:
    id: str
    inputs: tuple[PortDecl, ...]
    outputs: tuple[PortDecl, ...]
    assumptions: tuple[Predicate, ...]
    guarantee: Guarantee

    @property
    def ports(self) -> dict[str, PortDecl]:
        return {p.name: p for p in self.inputs + self.outputs}


TIME_VAR = "t"


class ContractSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.message = message
        self.line = line
        self.column = column


# -- tokenizer -------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<num>[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?(?:/\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=)
  | (?P<sym>[{}:,\[\];|])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ContractSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            toks.append(_Tok("nl", "\n", line, pos - line_start + 1))
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            toks.append(_Tok(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, msg: str, tok: _Tok | None = None) -> ContractSyntaxError:
        tok = tok or self.tok
        return ContractSyntaxError(msg, tok.line, tok.col)

    def skip_nl(self) -> None:
        while self.tok.kind == "nl":
            self.i += 1

    def take(self, kind: str, text: str | None = None) -> _Tok:
        tok = self.tok
        if tok.kind != kind or (text is not None and tok.text != text):
            want = repr(text) if text else kind
            got = repr(tok.text) if tok.text and tok.kind != "nl" else tok.kind
            raise self.error(f"expected {want}, found {got}")
        self.i += 1
        return tok

    def at(self, kind: str, text: str | None = None) -> bool:
        return self.tok.kind == kind and (text is None or self.tok.text == text)

    def number(self) -> float:
        tok = self.take("num")
        if "/" in tok.text:
            num, den = tok.text.split("/")
            return float(num) / float(den)
        return float(tok.text)

    def end_of_line(self) -> None:
        if not (self.at("nl") or self.at("sym", "}") or self.at("eof")):
            raise self.error(f"unexpected {self.tok.text!r}")

    # grammar

    def contracts(self) -> list[Contract]:
        out = []
        self.skip_nl()
        while not self.at("eof"):
            out.append(self.contract())
            self.skip_nl()
        return out

    def contract(self) -> Contract:
        self.take("ident", "contract")
        cid = self.take("ident").text
        self.take("sym", "{")
        fields: dict[str, object] = {}
        opened = self.toks[self.i - 1]
        while True:
            self.skip_nl()
            if self.at("sym", "}"):
                self.i += 1
                break
            if self.at("eof"):
                raise self.error("unterminated contract block", opened)
            key_tok = self.take("ident")
            key = key_tok.text
            if key in fields:
                raise self.error(f"duplicate field {key!r}", key_tok)
            self.take("sym", ":")
            if key in ("inputs", "outputs"):
                fields[key] = self.ports("in" if key == "inputs" else "out")
            elif key == "assumptions":
                fields[key] = self.assumptions()
            elif key == "guarantee":
                fields[key] = self.guarantee(key_tok)
            else:
                raise self.error(f"unknown field {key!r}", key_tok)
            self.end_of_line()
        if "guarantee" not in fields:
            raise self.error(f"contract {cid!r} has no guarantee", opened)
        return Contract(
            cid,
            tuple(fields.get("inputs", ())),
            tuple(fields.get("outputs", ())),
            tuple(fields.get("assumptions", ())),
            fields["guarantee"],
        )

    def ports(self, direction: str) -> list[PortDecl]:
        ports: list[PortDecl] = []
        if self.at("ident", "none"):
            self.i += 1
            return ports
        while True:
            name = self.take("ident").text
            self.take("sym", ":")
            dom_tok = self.take("ident")
            try:
                dom = Domain(dom_tok.text)
            except ValueError:
                raise self.error(f"unknown domain {dom_tok.text!r}", dom_tok) from None
            ports.append(PortDecl(name, dom, direction))
            if not self.at("sym", ","):
                return ports
            self.i += 1

    def assumptions(self) -> list[Predicate]:
        if self.at("ident", "none"):
            self.i += 1
            return []
        preds = [self.predicate()]
        while self.at("sym", ";"):
            self.i += 1
            preds.append(self.predicate())
        return preds

    def predicate(self) -> Predicate:
        if self.at("num"):
            lo = self.number()
            self.take("op", "<=")
            var = self.take("ident").text
            self.take("op", "<=")
            return Predicate(var, lo, self.number())
        var = self.take("ident").text
        op = self.take("op").text
        value = self.number()
        return Predicate(var, lo=value) if op == ">=" else Predicate(var, hi=value)

    def interval(self) -> tuple[float, float]:
        self.take("sym", "[")
        lo = self.number()
        self.take("sym", ",")
        hi = self.number()
        self.take("sym", "]")
        return lo, hi

    def guarantee(self, key_tok: _Tok) -> Guarantee:
        if self.at("nl") or self.at("sym", "}") or self.at("eof"):
            raise self.error("empty guarantee", key_tok)
        kw = self.take("ident")
        if kw.text == "timing":
            self.take("ident", "every")
            period = self.number()
            self.take("ident", "ms")
            self.take("ident", "within")
            deadline = self.number()
            self.take("ident", "ms")
            return Timing(period, deadline)
        if kw.text == "bound":
            port = self.take("ident").text
            self.take("ident", "in")
            lo, hi = self.interval()
            return Bound(port, lo, hi)
        if kw.text == "member":
            port = self.take("ident").text
            self.take("ident", "in")
            intervals = [self.interval()]
            while self.at("sym", "[") or self.at("sym", "|"):
                if self.at("sym", "|"):
                    self.i += 1
                intervals.append(self.interval())
            return SetMembership(port, tuple(intervals))
        if kw.text == "envelope":
            port = self.take("ident").text
            self.take("ident", "rate")
            k1 = self.number()
            self.take("ident", "initial")
            k2 = self.number()
            self.take("ident", "tol")
            return Envelope(port, k1, k2, self.number())
        raise self.error(f"unknown guarantee keyword {kw.text!r}", kw)


def parse_contracts(text: str) -> list[Contract]:
    return _Parser(text).contracts()


def parse_contract(text: str) -> Contract:
    found = parse_contracts(text)
    if len(found) != 1:
        raise ContractSyntaxError(f"expected exactly one contract, found {len(found)}", 1, 1)
    return found[0]


# -- printing --------------------------------------------------------------------


def _n(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def _pred(p: Predicate) -> str:
    if p.lo is not None and p.hi is not None:
        return f"{_n(p.lo)} <= {p.var} <= {_n(p.hi)}"
    if p.lo is not None:
        return f"{p.var} >= {_n(p.lo)}"
    return f"{p.var} <= {_n(p.hi)}"


def format_guarantee(g: Guarantee) -> str:
    if isinstance(g, Timing):
        return f"timing every {_n(g.period_ms)} ms within {_n(g.deadline_ms)} ms"
    if isinstance(g, Bound):
        return f"bound {g.port} in [{_n(g.lo)}, {_n(g.hi)}]"
    if isinstance(g, SetMembership):
        return f"member {g.port} in " + " ".join(f"[{_n(a)}, {_n(b)}]" for a, b in g.intervals)
    return f"envelope {g.port} rate {_n(g.k1)} initial {_n(g.k2)} tol {_n(g.rel_tol)}"


def format_contract(c: Contract) -> str:
    def ports(ps):
        return ", ".join(f"{p.name} : {p.domain.value}" for p in ps) or "none"

    assumptions = "; ".join(_pred(p) for p in c.assumptions) or "none"
    return (
        f"contract {c.id} {{\n"
        f"  inputs: {ports(c.inputs)}\n"
        f"  outputs: {ports(c.outputs)}\n"
        f"  assumptions: {assumptions}\n"
        f"  guarantee: {format_guarantee(c.guarantee)}\n"
        f"}}\n"
    )


# -- validation ------------------------------------------------------------------


def validate_contract(c: Contract) -> list[str]:
    """Return the violated rules; an empty list means the contract is valid."""
    errors: list[str] = []
    names = [p.name for p in c.inputs + c.outputs]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        errors.append(f"port names must be unique: {', '.join(dupes)}")
    for p in c.inputs:
        if p.direction != "in":
            errors.append(f"port {p.name} listed under inputs must have direction 'in'")
    for p in c.outputs:
        if p.direction != "out":
            errors.append(f"port {p.name} listed under outputs must have direction 'out'")
    ports = c.ports
    for a in c.assumptions:
        if a.var != TIME_VAR and (a.var not in ports or ports[a.var].direction != "in"):
            errors.append(f"assumption references undeclared input {a.var!r}")
        if a.lo is not None and a.hi is not None and a.lo > a.hi:
            errors.append(f"assumption bounds on {a.var!r} must satisfy lo <= hi")
    g = c.guarantee
    if isinstance(g, Timing):
        if g.period_ms <= 0:
            errors.append("period must be positive")
        if g.deadline_ms <= 0:
            errors.append("deadline must be positive")
        return errors
    if g.port not in ports:
        errors.append(f"guarantee references undeclared port {g.port!r}")
    if isinstance(g, Bound) and g.lo > g.hi:
        errors.append("bound must satisfy lo <= hi")
    if isinstance(g, SetMembership):
        if not g.intervals:
            errors.append("set membership needs at least one interval")
        for lo, hi in g.intervals:
            if lo > hi:
                errors.append(f"interval [{_n(lo)}, {_n(hi)}] must satisfy lo <= hi")
    if isinstance(g, Envelope):
        if not 0 < g.rel_tol < 1:
            errors.append("rel_tol must lie in (0, 1)")
        if g.k2 <= 0:
            errors.append("initial value must be positive")
    return errors


# -- point evaluation ------------------------------------------------------------


def _check_domain(port: PortDecl, value) -> float:
    if port.domain is Domain.BOOLEAN:
        if isinstance(value, bool) or value in (0, 1):
            return float(value)
    elif isinstance(value, bool):
        pass
    elif port.domain is Domain.INTEGER:
        if isinstance(value, int) or (isinstance(value, float) and value.is_integer()):
            return float(value)
    elif isinstance(value, (int, float)):
        return float(value)
    raise TypeError(f"value {value!r} does not fit domain {port.domain.value} of port {port.name}")


def broken_assumptions(c: Contract, sample: Mapping[str, object]) -> list[Predicate]:
    """Return the assumptions violated by ``sample`` (empty when all hold)."""
    ports = c.ports
    broken = []
    for a in c.assumptions:
        if a.var == TIME_VAR:
            value = sample.get(TIME_VAR)
            if value is None:
                continue
        else:
            if a.var not in sample:
                raise KeyError(f"sample has no value for {a.var!r}")
            value = _check_domain(ports[a.var], sample[a.var])
        if not a.holds(value):
            broken.append(a)
    return broken


def guarantee_holds(g: Guarantee, value: float) -> bool:
    if isinstance(g, Bound):
        return g.lo <= value <= g.hi
    if isinstance(g, SetMembership):
        return any(lo <= value <= hi for lo, hi in g.intervals)
    raise ValueError(f"{type(g).__name__} guarantees cannot be checked on a single sample")


def check_point(c: Contract, sample: Mapping[str, object]) -> bool:
    """Evaluate a Bound or SetMembership contract on one sample.

    A violated assumption discharges the guarantee, so the result is True.
    """
    g = c.guarantee
    if not isinstance(g, (Bound, SetMembership)):
        raise ValueError(f"contract {c.id} has a {type(g).__name__} guarantee; use an observer")
    if broken_assumptions(c, sample):
        return True
    if g.port not in sample:
        raise KeyError(f"sample has no value for {g.port!r}")
    return guarantee_holds(g, _check_domain(c.ports[g.port], sample[g.port]))
