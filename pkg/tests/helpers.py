"""Shared generators and oracles for the test suite."""
from __future__ import annotations

import random
from fractions import Fraction

from raresplit import logic as L
from raresplit.expr import Name
from raresplit.reference import check_trace

MINIMAL = "x:[0..1] init 0; [] x=0 -> 0.5:(x'=1) + 0.5:(x'=0);"

TWO_BOOL = """
a : bool init false;
b : bool init false;
[] true -> 0.25:(a'=false)&(b'=false) + 0.25:(a'=false)&(b'=true)
         + 0.25:(a'=true)&(b'=false) + 0.25:(a'=true)&(b'=true);
"""

# exact value for chain3 (p = 1/10, goal = three forward moves in a row
# within five steps): FFF, RFFF, FRFFF, RRFFF, i.e. p^3 (1 + (1-p) + (1-p))
CHAIN3_GAMMA = Fraction(1, 1000) * (1 + Fraction(9, 10) + Fraction(9, 10))

STATES_2 = [(False, False), (False, True), (True, False), (True, True)]


def atom(r: random.Random):
    return L.Atom(Name(r.choice("ab")))


def inner_formula(r: random.Random, depth: int, kmax: int = 6):
    if depth == 0 or r.random() < 0.3:
        return atom(r)
    op = r.choice([L.Next, L.Finally, L.Globally])
    return op(r.randint(0, kmax), inner_formula(r, depth - 1, kmax))


def restricted_formula(r: random.Random, depth: int = 3, kmax: int = 6):
    """Random member of the bound-independent fragment over atoms a, b."""
    c = r.random()
    if depth == 0 or c < 0.1:
        return atom(r)
    if c < 0.3:
        op = r.choice([L.And, L.Or, L.Implies])
        return op(restricted_formula(r, depth - 1, kmax), restricted_formula(r, depth - 1, kmax))
    if c < 0.35:
        return L.Not(restricted_formula(r, depth - 1, kmax))
    if c < 0.42:
        return L.Next(r.randint(0, kmax), restricted_formula(r, depth - 1, kmax))
    if c < 0.6:
        u = L.Until(r.randint(0, kmax), inner_formula(r, depth - 1, kmax),
                    inner_formula(r, depth - 1, kmax))
        if r.random() < 0.4:
            u = L.Next(r.randint(1, kmax), u)
        return u
    op = r.choice([L.Next, L.Finally, L.Globally])
    return op(r.randint(0, kmax), inner_formula(r, depth - 1, kmax))


def any_formula(r: random.Random, depth: int = 4, kmax: int = 4):
    """Random formula of the full bounded grammar over atoms a, b."""
    if depth == 0 or r.random() < 0.2:
        return atom(r)
    c = r.randrange(8)
    sub = lambda: any_formula(r, depth - 1, kmax)  # noqa: E731
    if c == 0:
        return L.Not(sub())
    if c in (1, 2, 3):
        return [L.And, L.Or, L.Implies][c - 1](sub(), sub())
    if c == 4:
        return L.Until(r.randint(0, kmax), sub(), sub())
    return [L.Next, L.Finally, L.Globally][c - 5](r.randint(0, kmax), sub())


def random_trace(r: random.Random, length: int) -> list:
    return [{"a": r.random() < 0.5, "b": r.random() < 0.5} for _ in range(length)]


def first_verdict(net, trace) -> tuple:
    """``(index, Tri)`` of the first decided root output, or ``(None, UNDECIDED)``.

    Also checks that the root never changes its mind afterwards."""
    net.reset()
    first = None
    for i, s in enumerate(trace):
        v = net.observe(s)
        if first is None and v.decided:
            first = (i, v)
        elif first is not None:
            assert v == first[1], "root verdict changed after decision"
    return first if first is not None else (None, L.Tri.UNDECIDED)


def exhaustive_agreement(f, max_len: int = 12) -> dict:
    """Compare observers with the reference on every trace over two booleans
    of length <= ``max_len``.

    Prefixes are explored depth-first, sharing the observer state of common
    prefixes.  A branch stops once the root decides: every extension then
    has the same first verdict, and the reference verdict of a decided
    prefix is stable under extension.  A trace on which the root is still
    undecided has no verdict to compare; it is an error only when the trace
    already reaches the formula's decision bound (``horizon + 1`` states).
    """
    from raresplit.observers import compile_formula
    net = compile_formula(f, checked=True)
    bound = L.horizon(f) + 1
    stats = {"traces": 0, "decided": 0, "mismatch": 0, "late": 0, "examples": []}
    stack = [((), net.initial_state())]
    while stack:
        prefix, st = stack.pop()
        for a, b in STATES_2:
            s = {"a": a, "b": b}
            st2 = list(st)
            out = net.step_fn(st2, s)
            tr = prefix + (s,)
            n = len(tr)
            if out is not None:
                weight = sum(4 ** (m - n) for m in range(n, max_len + 1))
                stats["traces"] += weight
                stats["decided"] += weight
                ref = check_trace(f, list(tr))
                if ref is not L.Tri.of(out):
                    stats["mismatch"] += weight
                    stats["examples"].append((tr, out, ref))
                continue
            stats["traces"] += 1
            if n >= bound:
                stats["late"] += 1
                stats["examples"].append((tr, None, check_trace(f, list(tr))))
            elif n < max_len:
                stack.append((tr, st2))
    return stats


# Thirty restricted formulas covering every observer kind.
BATTERY = [
    "a",
    "!a",
    "X<=2 (F<=2 a & !G<=2 b)",
    "X<=6 a",
    "F<=8 a",
    "G<=8 a",
    "!F<=6 b",
    "!G<=6 (a | b)",
    "F<=6 a & G<=4 b",
    "F<=6 a | G<=4 b",
    "G<=6 a => F<=4 b",
    "!(X<=4 a | F<=4 b)",
    "X<=4 F<=4 a",
    "X<=2 G<=6 b",
    "F<=4 X<=4 a",
    "G<=4 X<=2 b",
    "F<=4 G<=4 a",
    "G<=4 F<=4 b",
    "F<=6 F<=2 (a & b)",
    "G<=4 G<=4 !a",
    "G<=2 F<=2 X<=2 a",
    "a U<=6 b",
    "a U<=0 b",
    "!a U<=8 (a & b)",
    "F<=4 a U<=6 G<=2 b",
    "X<=4 a U<=4 F<=2 b",
    "X<=2 (a U<=6 b)",
    "X<=6 (!b U<=4 a)",
    "X<=2 X<=2 (G<=2 a U<=4 X<=2 b)",
    "(a U<=4 b) & !(X<=4 (b U<=2 a)) | G<=6 F<=2 a",
]


# criterion number -> printed PASS/FAIL line, filled by test_acceptance
ACCEPTANCE: dict = {}


def verdict_line(n: int, ok: bool, detail: str) -> str:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    return line


def scale_bounds(f, factor: int):
    """Copy of ``f`` with every time bound multiplied by ``factor``."""
    from dataclasses import replace
    if isinstance(f, L.Atom):
        return f
    kids = {}
    if isinstance(f, (L.Not, L.Next, L.Finally, L.Globally)):
        kids["arg"] = scale_bounds(f.arg, factor)
    else:
        kids["left"] = scale_bounds(f.left, factor)
        kids["right"] = scale_bounds(f.right, factor)
    if hasattr(f, "k"):
        kids["k"] = f.k * factor
    return replace(f, **kids)
