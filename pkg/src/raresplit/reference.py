"""Independent oracles: a direct trace checker and exact path enumeration.

Neither uses the observer machinery.  The trace checker evaluates the
inductive semantics at position 0 of a finite trace with strong Kleene
three-valued logic: a position beyond the end of the trace is undecided,
so a True/False verdict on a prefix holds for every extension.  ``F`` and
``G`` are evaluated through ``true U`` and ``!(true U !)``; ``&`` and
``=>`` through ``!`` and ``|``.
"""
from __future__ import annotations

import random
from fractions import Fraction
from typing import Optional, Sequence

from . import logic as L
from .expr import TRUE, evaluate
from .model import ModelState, compile_model

__all__ = ["check_trace", "exact_probability", "sample_trace", "ReferenceCapError"]


class ReferenceCapError(RuntimeError):
    """Exact enumeration exceeded its node cap."""


def _or(a: Optional[bool], b: Optional[bool]) -> Optional[bool]:
    if a is True or b is True:
        return True
    if a is None or b is None:
        return None
    return False


def _and(a: Optional[bool], b: Optional[bool]) -> Optional[bool]:
    if a is False or b is False:
        return False
    if a is None or b is None:
        return None
    return True


def _not(a: Optional[bool]) -> Optional[bool]:
    return None if a is None else not a


def _env_maker(model):
    if model is None:
        return lambda st: st
    ast = getattr(model, "ast", model)
    names = ast.var_names
    consts = ast.constants

    def env(st):
        vals = st.values if isinstance(st, ModelState) else st
        if isinstance(vals, dict):
            d = dict(vals)
        else:
            d = dict(zip(names, vals))
        d.update(consts)
        return d
    return env


def check_trace(f, trace: Sequence, model=None) -> L.Tri:
    """Verdict of ``f`` on a finite trace (states as dicts, tuples or ModelStates)."""
    labels = getattr(getattr(model, "ast", model), "labels", {}) if model is not None else {}
    make_env = _env_maker(model)
    envs = [make_env(s) for s in trace]
    n = len(envs)
    memo: dict = {}

    def until(k, left, right, i):
        # exists j in i..i+k: right@j and left@l for all i <= l < j
        acc: Optional[bool] = False
        prefix: Optional[bool] = True
        for j in range(i, i + k + 1):
            acc = _or(acc, _and(prefix, val(right, j)))
            if acc is True:
                return True
            prefix = _and(prefix, val(left, j))
            if prefix is False:
                break
        return acc

    def val(g, i) -> Optional[bool]:
        key = (id(g), i)
        if key in memo:
            return memo[key]
        if isinstance(g, L.Atom):
            r = None if i >= n else bool(evaluate(g.expr, envs[i], labels))
        elif isinstance(g, L.Not):
            r = _not(val(g.arg, i))
        elif isinstance(g, L.Or):
            r = _or(val(g.left, i), val(g.right, i))
        elif isinstance(g, L.And):
            r = _not(_or(_not(val(g.left, i)), _not(val(g.right, i))))
        elif isinstance(g, L.Implies):
            r = _or(_not(val(g.left, i)), val(g.right, i))
        elif isinstance(g, L.Next):
            r = val(g.arg, i + g.k)
        elif isinstance(g, L.Until):
            r = until(g.k, g.left, g.right, i)
        elif isinstance(g, L.Finally):
            r = until(g.k, _TRUE, g.arg, i)
        elif isinstance(g, L.Globally):
            r = _not(until(g.k, _TRUE, _negated(g.arg), i))
        else:
            raise TypeError(g)
        memo[key] = r
        return r

    negations: dict = {}

    def _negated(g):
        if id(g) not in negations:
            negations[id(g)] = L.Not(g)
        return negations[id(g)]

    return L.Tri.of(val(f, 0))


_TRUE = L.Atom(TRUE)


def sample_trace(model, length: int, rng: random.Random) -> list:
    """Simulate ``length`` states starting from the initial state."""
    cm = compile_model(model)
    st = cm.initial_state()
    out = [st]
    for _ in range(length - 1):
        st = cm.step(st, rng)
        out.append(st)
    return out


def exact_probability(model, f, cap: int = 1_000_000) -> Fraction:
    """Exact probability of ``f`` by enumerating trace prefixes.

    A prefix is extended only while the trace checker leaves it undecided,
    so the enumeration stops at the formula horizon at the latest.
    """
    cm = compile_model(model)
    H = L.horizon(f)
    total = Fraction(0)
    visited = 0
    stack = [([cm.initial_state()], Fraction(1))]
    while stack:
        prefix, p = stack.pop()
        visited += 1
        if visited > cap:
            raise ReferenceCapError(f"more than {cap} trace prefixes")
        v = check_trace(f, prefix, cm)
        if v is L.Tri.TRUE:
            total += p
            continue
        if v is L.Tri.FALSE:
            continue
        if len(prefix) > H + 1:
            raise AssertionError("verdict undecided beyond the formula horizon")
        for nxt, q in cm.exact_distribution(prefix[-1]):
            stack.append((prefix + [nxt], p * q))
    return total
