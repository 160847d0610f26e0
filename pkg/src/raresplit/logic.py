"""Bounded LTL formulas: parsing, printing, restriction check, memory class.

Concrete syntax::

    G<=420 !"elected"
    X<=1 (!"init" U<=1000 "complete")
    F<=5 (x > 3) & G<=7 b

Precedence, tightest first: ``!`` and the unary temporal operators,
``U<=k`` (right associative), ``&``, ``|``, ``=>`` (right associative).
Atoms are relational expressions over model variables, quoted labels,
``true`` and ``false``.  ``X``, ``F``, ``G`` and ``U`` immediately
followed by ``<=`` are reserved.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator, Optional, Union

from . import expr as E
from .expr import ExprError, ExprParser, TokenStream, tokenize

__all__ = [
    "Formula", "Atom", "Not", "And", "Or", "Implies", "Next", "Finally", "Globally", "Until",
    "distribute_next",
    "FormulaError", "parse_formula", "format_formula", "fold_atoms", "check_restriction",
    "RestrictionReport", "classify_memory", "BoundedCounters", "WindowBuffer", "horizon",
    "subformulas", "is_temporal", "typecheck_formula", "Tri",
]


class Tri(enum.Enum):
    """Three-valued verdict."""
    UNDECIDED = "?"
    TRUE = "T"
    FALSE = "F"

    @classmethod
    def of(cls, v: Optional[bool]) -> "Tri":
        if v is None:
            return cls.UNDECIDED
        return cls.TRUE if v else cls.FALSE

    @property
    def decided(self) -> bool:
        return self is not Tri.UNDECIDED

    def value_bool(self) -> Optional[bool]:
        return None if self is Tri.UNDECIDED else self is Tri.TRUE


class FormulaError(ExprError):
    pass


@dataclass(frozen=True)
class Atom:
    expr: E.Node


@dataclass(frozen=True)
class Not:
    arg: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Implies:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Next:
    k: int
    arg: "Formula"


@dataclass(frozen=True)
class Finally:
    k: int
    arg: "Formula"


@dataclass(frozen=True)
class Globally:
    k: int
    arg: "Formula"


@dataclass(frozen=True)
class Until:
    k: int
    left: "Formula"
    right: "Formula"


Formula = Union[Atom, Not, And, Or, Implies, Next, Finally, Globally, Until]
UNARY_TEMPORAL = (Next, Finally, Globally)
CONNECTIVES = (Not, And, Or, Implies)
_TEMP_CLS = {"X": Next, "F": Finally, "G": Globally}


def is_temporal(f) -> bool:
    return isinstance(f, UNARY_TEMPORAL + (Until,))


def subformulas(f) -> tuple:
    if isinstance(f, Atom):
        return ()
    if isinstance(f, (Not,) + UNARY_TEMPORAL):
        return (f.arg,)
    return (f.left, f.right)


# ---------------------------------------------------------------------------
# Parsing

class _FormulaParser:
    def __init__(self, text: str):
        self.ts = TokenStream(tokenize(text, temporal=True))
        self.ep = ExprParser(self.ts)

    def parse(self):
        f = self.implies()
        if self.ts.cur.kind != "EOF":
            self.ts.error("unexpected trailing input")
        return f

    def implies(self):
        left = self.disj()
        if self.ts.accept("=>"):
            return Implies(left, self.implies())
        return left

    def disj(self):
        left = self.conj()
        while self.ts.accept("|"):
            left = Or(left, self.conj())
        return left

    def conj(self):
        left = self.until()
        while self.ts.accept("&"):
            left = And(left, self.until())
        return left

    def until(self):
        left = self.unary()
        if self.ts.cur.kind == "TEMP" and self.ts.cur.text == "U":
            self.ts.i += 1
            k = self.bound()
            return Until(k, left, self.until())
        return left

    def bound(self) -> int:
        ts = self.ts
        t = ts.cur
        if t.kind != "INT":
            if t.kind == "OP" and t.text == "-":
                raise FormulaError("negative time bound", t.line, t.col)
            raise FormulaError("missing time bound", t.line, t.col)
        ts.i += 1
        return int(t.text)

    def unary(self):
        ts = self.ts
        if ts.accept("!"):
            return Not(self.unary())
        t = ts.cur
        if t.kind == "TEMP":
            if t.text == "U":
                ts.error("'U' needs a left operand")
            ts.i += 1
            k = self.bound()
            return _TEMP_CLS[t.text](k, self.unary())
        if ts.at("("):
            save = ts.i
            try:
                e = self.ep.relation()
                nxt = ts.cur
                connective = (isinstance(e, E.Binary) and e.op in E.BOOLOPS) or \
                    (isinstance(e, E.Unary) and e.op == "!")
                follows = nxt.kind in ("EOF", "TEMP") or (
                    nxt.kind == "OP" and nxt.text in ("&", "|", "=>", ")"))
                if follows and not connective:
                    return Atom(e)
            except ExprError:
                pass
            ts.i = save
            ts.expect("(")
            f = self.implies()
            ts.expect(")")
            return f
        return Atom(self.ep.relation())


def parse_formula(source: str, model=None):
    """Parse a property.  With ``model`` given, atoms are type-checked."""
    try:
        f = _FormulaParser(source).parse()
    except FormulaError:
        raise
    except ExprError as exc:
        raise FormulaError(str(exc).split(": ", 1)[-1], exc.line, exc.col) from None
    if model is not None:
        typecheck_formula(f, model)
    return f


def typecheck_formula(f, model) -> None:
    """Every atom must be a boolean expression over ``model``'s names."""
    ast = getattr(model, "ast", model)
    types = ast.types()
    for a in _atoms(f):
        try:
            t = E.typecheck(a.expr, types, ast.labels)
        except ExprError as exc:
            raise FormulaError(f"unknown atom: {exc}", exc.line, exc.col) from None
        if t != "bool":
            raise FormulaError(f"atom {E.to_source(a.expr)} is not boolean", *a.expr.pos)


def _atoms(f) -> Iterator[Atom]:
    if isinstance(f, Atom):
        yield f
    for c in subformulas(f):
        yield from _atoms(c)


def format_formula(f) -> str:
    """Fully parenthesised text; ``parse_formula(format_formula(f)) == f``."""
    if isinstance(f, Atom):
        return f"({E.to_source(f.expr)})"
    if isinstance(f, Not):
        return f"!{format_formula(f.arg)}"
    if isinstance(f, And):
        return f"({format_formula(f.left)} & {format_formula(f.right)})"
    if isinstance(f, Or):
        return f"({format_formula(f.left)} | {format_formula(f.right)})"
    if isinstance(f, Implies):
        return f"({format_formula(f.left)} => {format_formula(f.right)})"
    if isinstance(f, Until):
        return f"({format_formula(f.left)} U<={f.k} {format_formula(f.right)})"
    name = {Next: "X", Finally: "F", Globally: "G"}[type(f)]
    return f"{name}<={f.k} {format_formula(f.arg)}"


# ---------------------------------------------------------------------------
# Structure

def fold_atoms(f):
    """Collapse connectives whose operands are all atoms into one atom."""
    if isinstance(f, Atom):
        return f
    if isinstance(f, Not):
        a = fold_atoms(f.arg)
        if isinstance(a, Atom):
            return Atom(E.Unary("!", a.expr))
        return Not(a)
    if isinstance(f, (And, Or, Implies)):
        l, r = fold_atoms(f.left), fold_atoms(f.right)
        if isinstance(l, Atom) and isinstance(r, Atom):
            op = {And: "&", Or: "|", Implies: "=>"}[type(f)]
            return Atom(E.Binary(op, l.expr, r.expr))
        return type(f)(l, r)
    if isinstance(f, Until):
        return Until(f.k, fold_atoms(f.left), fold_atoms(f.right))
    return type(f)(f.k, fold_atoms(f.arg))


def distribute_next(f):
    """Push outer ``X`` through connectives: ``X(a & b)`` becomes ``Xa & Xb``,
    ``X !a`` becomes ``!X a``.  Arguments of ``F``, ``G`` and ``U`` are left
    alone."""
    if isinstance(f, Not):
        return Not(distribute_next(f.arg))
    if isinstance(f, (And, Or, Implies)):
        return type(f)(distribute_next(f.left), distribute_next(f.right))
    if not isinstance(f, Next):
        return f
    body = distribute_next(f.arg)
    if isinstance(body, Not):
        return Not(distribute_next(Next(f.k, body.arg)))
    if isinstance(body, (And, Or, Implies)):
        return type(body)(distribute_next(Next(f.k, body.left)),
                          distribute_next(Next(f.k, body.right)))
    return Next(f.k, body)


def horizon(f) -> int:
    """Maximum sum of nested time bounds."""
    if isinstance(f, Atom):
        return 0
    if isinstance(f, CONNECTIVES):
        return max(horizon(c) for c in subformulas(f))
    return f.k + max(horizon(c) for c in subformulas(f))


@dataclass(frozen=True)
class RestrictionReport:
    accepted: bool
    violations: tuple  # ((path, rule), ...)


def check_restriction(f) -> RestrictionReport:
    """Decide membership in the bound-independent fragment.

    Outer level: connectives, ``U`` between state-window formulas, and
    ``X`` over any outer formula.  Below any temporal operator
    only ``X``/``F``/``G`` and atoms (with connectives folded into atoms).
    """
    f = fold_atoms(f)
    violations: list = []

    def outer(g, path):
        if isinstance(g, Atom):
            return
        if isinstance(g, CONNECTIVES):
            for i, c in enumerate(subformulas(g)):
                outer(c, path + (i,))
        elif isinstance(g, Next):
            h, p = g, path
            while isinstance(h, Next):
                h, p = h.arg, p + (0,)
            if isinstance(h, Until):
                outer(h, p)
            elif isinstance(h, CONNECTIVES):
                # X distributes over connectives
                for i, c in enumerate(subformulas(h)):
                    outer(c, p + (i,))
            else:
                inner(g.arg, path + (0,))
        elif isinstance(g, Until):
            inner(g.left, path + (0,))
            inner(g.right, path + (1,))
        else:
            inner(g.arg, path + (0,))

    def inner(g, path):
        if isinstance(g, Atom):
            return
        if isinstance(g, Until):
            violations.append((path, "until below a temporal operator other than X"))
        elif isinstance(g, CONNECTIVES):
            violations.append((path, "connective under temporal operator"))
        else:
            inner(g.arg, path + (0,))

    outer(f, ())
    return RestrictionReport(not violations, tuple(violations))


@dataclass(frozen=True)
class BoundedCounters:
    counters: int


@dataclass(frozen=True)
class WindowBuffer:
    size: int


def classify_memory(f) -> Union[BoundedCounters, WindowBuffer]:
    """Counters of the compiled observer network, or the window size needed."""
    if check_restriction(f).accepted:
        from .observers import counter_count
        return BoundedCounters(counter_count(f))
    return WindowBuffer(horizon(f))
