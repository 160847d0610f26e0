"""Expression trees shared by models, property atoms and score functions.

One lexer and one recursive-descent parser serve all three languages.
Expressions can be evaluated directly (exact, over ``Fraction``/``int``)
or rendered to Python source for the compiled simulation paths.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Optional, Sequence, Union

Value = Union[int, bool, Fraction]


class ExprError(ValueError):
    """Raised for lexical, syntactic and type errors, with source location."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line = line
        self.col = col
        loc = f"{line}:{col}: " if line else ""
        super().__init__(loc + message)


# ---------------------------------------------------------------------------
# AST

@dataclass(frozen=True)
class Node:
    pass


@dataclass(frozen=True)
class Lit(Node):
    value: Value
    pos: tuple = field(default=(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class Name(Node):
    name: str
    pos: tuple = field(default=(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class Label(Node):
    name: str
    pos: tuple = field(default=(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class Unary(Node):
    op: str  # '!' or '-'
    arg: Node
    pos: tuple = field(default=(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class Binary(Node):
    op: str
    left: Node
    right: Node
    pos: tuple = field(default=(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class Ite(Node):
    cond: Node
    then: Node
    other: Node
    pos: tuple = field(default=(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class Call(Node):
    func: str  # 'min' | 'max'
    args: tuple
    pos: tuple = field(default=(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class Step(Node):
    """Simulation step index (score expressions only)."""
    pos: tuple = field(default=(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class ObsRef(Node):
    """Read-only view of an observer node field (score expressions only)."""
    path: tuple
    fld: str
    pos: tuple = field(default=(0, 0), compare=False, repr=False)


TRUE = Lit(True)
FALSE = Lit(False)

ARITH = {"+", "-", "*", "/"}
RELOPS = {"=", "!=", "<", "<=", ">", ">="}
BOOLOPS = {"&", "|", "=>"}
FUNCS = {"min", "max"}


# ---------------------------------------------------------------------------
# Lexer

@dataclass(frozen=True)
class Token:
    kind: str  # INT DEC ID STR OP TEMP EOF
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>//[^\n]*)
  | (?P<temp>[XFGU][ \t]*<=)
  | (?P<dec>\d+\.\d+)
  | (?P<int>\d+)
  | (?P<id>[A-Za-z_][A-Za-z0-9_]*'?)
  | (?P<str>"[^"\n]*")
  | (?P<op>\.\.|<=|>=|!=|=>|->|[=<>+\-*/!&|?:;,()\[\]{}.])
    """,
    re.VERBOSE,
)


def tokenize(text: str, temporal: bool = False) -> list[Token]:
    """Split ``text`` into tokens.  ``temporal`` enables ``X<=``-style tokens."""
    out: list[Token] = []
    pos, line, line_start = 0, 1, 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        col = pos - line_start + 1
        tok = m.group()
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind in ("ws", "comment"):
            pass
        elif kind == "temp":
            if temporal:
                out.append(Token("TEMP", tok[0], line, col))
            else:
                # not a property context: plain identifier followed by '<='
                out.append(Token("ID", tok[0], line, col))
                out.append(Token("OP", "<=", line, col + len(tok) - 2))
        else:
            out.append(Token(kind.upper(), tok, line, col))
        pos = m.end()
    out.append(Token("EOF", "", line, pos - line_start + 1))
    return out


# ---------------------------------------------------------------------------
# Parser

class TokenStream:
    def __init__(self, tokens: Sequence[Token]):
        self.toks = list(tokens)
        self.i = 0

    @property
    def cur(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, text: str, kind: str = "OP") -> bool:
        t = self.cur
        return t.kind == kind and t.text == text

    def accept(self, text: str, kind: str = "OP") -> Optional[Token]:
        if self.at(text, kind):
            t = self.cur
            self.i += 1
            return t
        return None

    def expect(self, text: str, kind: str = "OP") -> Token:
        t = self.accept(text, kind)
        if t is None:
            self.error(f"expected {text!r}")
        return t

    def expect_kind(self, kind: str) -> Token:
        t = self.cur
        if t.kind != kind:
            self.error(f"expected {kind.lower()}")
        self.i += 1
        return t

    def error(self, message: str):
        t = self.cur
        found = t.text or "end of input"
        raise ExprError(f"{message}, found {found!r}", t.line, t.col)


class ExprParser:
    """Recursive-descent expression parser over a shared :class:`TokenStream`.

    ``allow_score`` enables ``step`` and ``obs.<path>.<field>`` references.
    """

    def __init__(self, ts: TokenStream, allow_score: bool = False):
        self.ts = ts
        self.allow_score = allow_score

    def parse(self) -> Node:
        ts = self.ts
        cond = self.implies()
        if ts.at("?"):
            t = ts.expect("?")
            a = self.parse()
            ts.expect(":")
            b = self.parse()
            return Ite(cond, a, b, pos=(t.line, t.col))
        return cond

    def implies(self) -> Node:
        left = self.disj()
        t = self.ts.accept("=>")
        if t:
            return Binary("=>", left, self.implies(), pos=(t.line, t.col))
        return left

    def disj(self) -> Node:
        left = self.conj()
        while True:
            t = self.ts.accept("|")
            if not t:
                return left
            left = Binary("|", left, self.conj(), pos=(t.line, t.col))

    def conj(self) -> Node:
        left = self.negation()
        while True:
            t = self.ts.accept("&")
            if not t:
                return left
            left = Binary("&", left, self.negation(), pos=(t.line, t.col))

    def negation(self) -> Node:
        t = self.ts.accept("!")
        if t:
            return Unary("!", self.negation(), pos=(t.line, t.col))
        return self.relation()

    def relation(self) -> Node:
        left = self.additive()
        t = self.ts.cur
        if t.kind == "OP" and t.text in RELOPS:
            self.ts.i += 1
            return Binary(t.text, left, self.additive(), pos=(t.line, t.col))
        return left

    def additive(self) -> Node:
        left = self.multiplicative()
        while True:
            t = self.ts.cur
            if t.kind == "OP" and t.text in ("+", "-"):
                self.ts.i += 1
                left = Binary(t.text, left, self.multiplicative(), pos=(t.line, t.col))
            else:
                return left

    def multiplicative(self) -> Node:
        left = self.unary()
        while True:
            t = self.ts.cur
            if t.kind == "OP" and t.text in ("*", "/"):
                self.ts.i += 1
                left = Binary(t.text, left, self.unary(), pos=(t.line, t.col))
            else:
                return left

    def unary(self) -> Node:
        t = self.ts.accept("-")
        if t:
            return Unary("-", self.unary(), pos=(t.line, t.col))
        return self.primary()

    def primary(self) -> Node:
        ts = self.ts
        t = ts.cur
        pos = (t.line, t.col)
        if t.kind == "INT":
            ts.i += 1
            return Lit(int(t.text), pos=pos)
        if t.kind == "DEC":
            ts.i += 1
            return Lit(Fraction(t.text), pos=pos)
        if t.kind == "STR":
            ts.i += 1
            return Label(t.text[1:-1], pos=pos)
        if t.kind == "ID":
            if t.text.endswith("'"):
                ts.error("primed variable outside an update")
            ts.i += 1
            if t.text == "true":
                return Lit(True, pos=pos)
            if t.text == "false":
                return Lit(False, pos=pos)
            if t.text in FUNCS and ts.at("("):
                ts.expect("(")
                args = [self.parse()]
                while ts.accept(","):
                    args.append(self.parse())
                ts.expect(")")
                return Call(t.text, tuple(args), pos=pos)
            if self.allow_score and t.text == "step":
                return Step(pos=pos)
            if self.allow_score and t.text == "obs" and ts.at("."):
                return self._obs_ref(pos)
            return Name(t.text, pos=pos)
        if ts.accept("("):
            e = self.parse()
            ts.expect(")")
            return e
        ts.error("expected expression")

    def _obs_ref(self, pos) -> ObsRef:
        ts = self.ts
        path = []
        while ts.accept("."):
            t = ts.cur
            if t.kind == "INT":
                ts.i += 1
                path.append(int(t.text))
            elif t.kind == "ID":
                ts.i += 1
                return ObsRef(tuple(path), t.text, pos=pos)
            else:
                ts.error("expected observer path element")
        ts.error("incomplete observer reference")


def parse_expr(text: str, allow_score: bool = False) -> Node:
    ts = TokenStream(tokenize(text))
    e = ExprParser(ts, allow_score).parse()
    if ts.cur.kind != "EOF":
        ts.error("unexpected trailing input")
    return e


# ---------------------------------------------------------------------------
# Printing

_PREC = {"=>": 1, "|": 2, "&": 3, "=": 5, "!=": 5, "<": 5, "<=": 5, ">": 5,
         ">=": 5, "+": 6, "-": 6, "*": 7, "/": 7}


def _lit_str(v: Value) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, Fraction):
        if v.denominator == 1:
            return str(v.numerator)
        return f"({v.numerator}/{v.denominator})"
    return str(v)


def to_source(e: Node) -> str:
    """Fully parenthesised concrete syntax; re-parses to an equal tree."""
    if isinstance(e, Lit):
        s = _lit_str(e.value)
        return f"({s})" if isinstance(e.value, int) and not isinstance(e.value, bool) and e.value < 0 else s
    if isinstance(e, Name):
        return e.name
    if isinstance(e, Label):
        return f'"{e.name}"'
    if isinstance(e, Step):
        return "step"
    if isinstance(e, ObsRef):
        return "obs" + "".join(f".{p}" for p in e.path) + f".{e.fld}"
    if isinstance(e, Unary):
        return f"{e.op}({to_source(e.arg)})"
    if isinstance(e, Binary):
        return f"({to_source(e.left)} {e.op} {to_source(e.right)})"
    if isinstance(e, Ite):
        return f"({to_source(e.cond)} ? {to_source(e.then)} : {to_source(e.other)})"
    if isinstance(e, Call):
        return f"{e.func}({', '.join(to_source(a) for a in e.args)})"
    raise TypeError(e)


# ---------------------------------------------------------------------------
# Static checks

def free_names(e: Node) -> set[str]:
    out: set[str] = set()

    def walk(x):
        if isinstance(x, Name):
            out.add(x.name)
        for c in children(x):
            walk(c)
    walk(e)
    return out


def children(e: Node) -> tuple:
    if isinstance(e, Unary):
        return (e.arg,)
    if isinstance(e, Binary):
        return (e.left, e.right)
    if isinstance(e, Ite):
        return (e.cond, e.then, e.other)
    if isinstance(e, Call):
        return e.args
    return ()


def typecheck(e: Node, types: Mapping[str, str], labels: Mapping[str, Node] = None,
              obs_type: Callable[[tuple, str], str] = None) -> str:
    """Return 'int', 'bool' or 'rat'; raise :class:`ExprError` on mismatch.

    ``types`` maps variable/constant names to their type.
    """
    labels = labels or {}

    def err(msg, node):
        line, col = node.pos
        raise ExprError(msg, line, col)

    def num(t):
        return t in ("int", "rat")

    def go(x) -> str:
        if isinstance(x, Lit):
            if isinstance(x.value, bool):
                return "bool"
            return "rat" if isinstance(x.value, Fraction) and x.value.denominator != 1 else "int"
        if isinstance(x, Name):
            if x.name not in types:
                err(f"undeclared identifier {x.name!r}", x)
            return types[x.name]
        if isinstance(x, Label):
            if x.name not in labels:
                err(f"unknown label {x.name!r}", x)
            return go(labels[x.name])
        if isinstance(x, Step):
            return "int"
        if isinstance(x, ObsRef):
            if obs_type is None:
                err("observer reference outside a score expression", x)
            return obs_type(x.path, x.fld)
        if isinstance(x, Unary):
            t = go(x.arg)
            if x.op == "!":
                if t != "bool":
                    err("'!' expects a boolean", x)
                return "bool"
            if not num(t):
                err("unary '-' expects a number", x)
            return t
        if isinstance(x, Binary):
            a, b = go(x.left), go(x.right)
            if x.op in BOOLOPS:
                if a != "bool" or b != "bool":
                    err(f"'{x.op}' expects booleans", x)
                return "bool"
            if x.op in ("=", "!="):
                if (a == "bool") != (b == "bool"):
                    err(f"'{x.op}' compares incompatible types", x)
                return "bool"
            if not (num(a) and num(b)):
                err(f"'{x.op}' expects numbers", x)
            if x.op in RELOPS:
                return "bool"
            return "rat" if "rat" in (a, b) else "int"
        if isinstance(x, Ite):
            if go(x.cond) != "bool":
                err("condition must be boolean", x)
            a, b = go(x.then), go(x.other)
            if (a == "bool") != (b == "bool"):
                err("branches of '?:' differ in type", x)
            return a if a == b else "rat"
        if isinstance(x, Call):
            ts = [go(a) for a in x.args]
            if not all(num(t) for t in ts):
                err(f"{x.func} expects numbers", x)
            return "rat" if "rat" in ts else "int"
        raise TypeError(x)

    return go(e)


# ---------------------------------------------------------------------------
# Evaluation

def _div(a, b):
    if isinstance(a, int) and isinstance(b, int):
        return a // b
    return Fraction(a) / Fraction(b)


def evaluate(e: Node, env: Mapping[str, Value], labels: Mapping[str, Node] = None,
             step: int = 0, obs: Callable[[tuple, str], int] = None,
             exact_div: bool = False) -> Value:
    """Direct (slow, exact) evaluation.

    ``exact_div`` makes ``/`` rational even for integers (constant folding);
    otherwise integer operands floor-divide, as in compiled code.
    """
    labels = labels or {}

    def go(x):
        if isinstance(x, Lit):
            return x.value
        if isinstance(x, Name):
            try:
                return env[x.name]
            except KeyError:
                raise ExprError(f"undeclared identifier {x.name!r}", *x.pos) from None
        if isinstance(x, Label):
            return go(labels[x.name])
        if isinstance(x, Step):
            return step
        if isinstance(x, ObsRef):
            return obs(x.path, x.fld)
        if isinstance(x, Unary):
            v = go(x.arg)
            return (not v) if x.op == "!" else -v
        if isinstance(x, Binary):
            op = x.op
            if op == "&":
                return bool(go(x.left)) and bool(go(x.right))
            if op == "|":
                return bool(go(x.left)) or bool(go(x.right))
            if op == "=>":
                return (not go(x.left)) or bool(go(x.right))
            a, b = go(x.left), go(x.right)
            if op == "+":
                return a + b
            if op == "-":
                return a - b
            if op == "*":
                return a * b
            if op == "/":
                if b == 0:
                    raise ExprError("division by zero", *x.pos)
                if exact_div:
                    q = Fraction(a) / Fraction(b)
                    return int(q) if q.denominator == 1 else q
                return _div(a, b)
            if op == "=":
                return a == b
            if op == "!=":
                return a != b
            if op == "<":
                return a < b
            if op == "<=":
                return a <= b
            if op == ">":
                return a > b
            if op == ">=":
                return a >= b
        if isinstance(x, Ite):
            return go(x.then) if go(x.cond) else go(x.other)
        if isinstance(x, Call):
            vals = [go(a) for a in x.args]
            return min(vals) if x.func == "min" else max(vals)
        raise TypeError(x)

    return go(e)


# ---------------------------------------------------------------------------
# Python code generation

def to_python(e: Node, names: Mapping[str, str], labels: Mapping[str, Node] = None,
              obs: Callable[[tuple, str], str] = None, int_names: frozenset = frozenset()) -> str:
    """Render ``e`` as a Python expression.

    ``names`` maps identifiers to Python source (e.g. ``"x[3]"`` or a literal).
    Division of two integer-typed operands floors; ``int_names`` lists the
    identifiers known to be integer typed (everything else is treated by value).
    """
    labels = labels or {}

    def go(x) -> str:
        if isinstance(x, Lit):
            v = x.value
            if isinstance(v, bool):
                return "True" if v else "False"
            if isinstance(v, Fraction) and v.denominator != 1:
                return f"_F({v.numerator}, {v.denominator})"
            return f"({int(v)})"
        if isinstance(x, Name):
            return names[x.name]
        if isinstance(x, Label):
            return go(labels[x.name])
        if isinstance(x, Step):
            return "step"
        if isinstance(x, ObsRef):
            return obs(x.path, x.fld)
        if isinstance(x, Unary):
            return f"(not {go(x.arg)})" if x.op == "!" else f"(-{go(x.arg)})"
        if isinstance(x, Binary):
            a, b = go(x.left), go(x.right)
            op = x.op
            if op == "&":
                return f"({a} and {b})"
            if op == "|":
                return f"({a} or {b})"
            if op == "=>":
                return f"((not {a}) or {b})"
            if op == "=":
                return f"({a} == {b})"
            if op == "/":
                return f"_div({a}, {b})"
            return f"({a} {op} {b})"
        if isinstance(x, Ite):
            return f"({go(x.then)} if {go(x.cond)} else {go(x.other)})"
        if isinstance(x, Call):
            return f"{x.func}({', '.join(go(a) for a in x.args)})"
        raise TypeError(x)

    return go(e)


CODEGEN_GLOBALS = {"_F": Fraction, "_div": _div, "min": min, "max": max}


def substitute(e: Node, mapping: Mapping[str, Node]) -> Node:
    """Replace names by expressions (used to inline constants)."""
    if isinstance(e, Name) and e.name in mapping:
        return mapping[e.name]
    if isinstance(e, Unary):
        return Unary(e.op, substitute(e.arg, mapping), pos=e.pos)
    if isinstance(e, Binary):
        return Binary(e.op, substitute(e.left, mapping), substitute(e.right, mapping), pos=e.pos)
    if isinstance(e, Ite):
        return Ite(substitute(e.cond, mapping), substitute(e.then, mapping),
                   substitute(e.other, mapping), pos=e.pos)
    if isinstance(e, Call):
        return Call(e.func, tuple(substitute(a, mapping) for a in e.args), pos=e.pos)
    return e
