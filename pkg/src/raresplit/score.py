"""Score functions and level schedules.

A score is an expression in the model language extended with ``step``,
``min``/``max`` and read-only observer references ``obs.<path>.<field>``:
``path`` is a dot-separated list of child indices from the root observer
(empty for the root itself) and ``field`` one of ``o``, ``d`` or a counter
name (``w``, ``t``, ``w1``, ``w2``, ``t1``, ``t2``).  For example::

    obs.d & !obs.o ? 0 : min(step, 420)

Level crossing is judged on the running maximum of the score along a trace.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from . import expr as E
from .expr import CODEGEN_GLOBALS, ExprError, parse_expr, to_python

__all__ = [
    "ScoreFn", "ScoreError", "LevelSchedule", "ScoredTrace", "Stagnation", "evaluate_score",
    "validate_minimum_requirement", "ValidationReport", "levels_from_quantiles", "default_score",
    "parse_levels",
]


class ScoreError(ValueError):
    pass


class Stagnation(RuntimeError):
    """No level above the current one can be chosen from the scores."""


def _frac(v) -> Fraction:
    if isinstance(v, float):
        return Fraction(repr(v))
    return Fraction(v)


@dataclass(frozen=True)
class ScoreFn:
    source: str
    threshold: Fraction
    expr: E.Node = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "threshold", _frac(self.threshold))
        if self.expr is None:
            try:
                object.__setattr__(self, "expr", parse_expr(self.source, allow_score=True))
            except ExprError as exc:
                raise ScoreError(f"score: {exc}") from None

    def compile(self, model, net):
        """Python callable ``f(values, obs_state, step)`` for this score."""
        def obs_src(path, fld):
            off, idx = _field(net, path, fld)
            return f"st[{off + idx}]"

        def obs_type(path, fld):
            _field(net, path, fld)
            return "bool" if fld in ("o", "d") else "int"

        ast = model.ast
        try:
            t = E.typecheck(self.expr, ast.types(), ast.labels, obs_type=obs_type)
        except ExprError as exc:
            raise ScoreError(f"score: {exc}") from None
        if t == "bool":
            raise ScoreError("score must be numeric, not boolean")
        body = model.expr_source(self.expr, "x", obs=obs_src)
        src = f"def score(x, st, step):\n    return {body}\n"
        ns = dict(CODEGEN_GLOBALS)
        exec(compile(src, "<score>", "exec"), ns)
        return ns["score"]


def _field(net, path, fld):
    if net is None:
        raise ScoreError("observer references need a restricted property")
    try:
        node = net.node_at(tuple(path))
    except ValueError as exc:
        raise ScoreError(str(exc)) from None
    names = ("o", "d") + node.counters
    if fld not in names:
        where = ".".join(map(str, path)) or "root"
        raise ScoreError(f"observer {where} ({node.kind}) has no field {fld!r}; "
                         f"fields: {', '.join(names)}")
    return node.offset, names.index(fld)


def default_score() -> ScoreFn:
    """1 once the property holds, 0 otherwise."""
    return ScoreFn("obs.d & obs.o ? 1 : 0", 1)


def evaluate_score(sf: ScoreFn, product, problem) -> Fraction:
    """Score of a :class:`~raresplit.product.ProductState` under ``problem``."""
    fn = sf.compile(problem.model, problem.net)
    return Fraction(fn(product.values, list(product.obs), product.step))


class ScoredTrace:
    """Current product state with the running maximum of its score."""

    def __init__(self, product, score):
        self.product = product
        self.max = score

    def update(self, product, score) -> None:
        self.product = product
        if score > self.max:
            self.max = score


@dataclass(frozen=True)
class LevelSchedule:
    levels: tuple

    def __post_init__(self):
        lv = tuple(_frac(v) for v in self.levels)
        if not lv:
            raise ScoreError("a level schedule needs at least one level")
        for a, b in zip(lv, lv[1:]):
            if not a < b:
                raise ScoreError(f"levels must increase strictly ({a} then {b})")
        object.__setattr__(self, "levels", lv)

    @property
    def m(self) -> int:
        return len(self.levels)

    @property
    def threshold(self) -> Fraction:
        return self.levels[-1]

    def __iter__(self):
        return iter(self.levels)

    def __len__(self):
        return len(self.levels)

    def __str__(self):
        return ",".join(str(v) for v in self.levels)


def parse_levels(text: str) -> LevelSchedule:
    try:
        return LevelSchedule(tuple(Fraction(t.strip()) for t in text.split(",") if t.strip()))
    except ValueError as exc:
        raise ScoreError(f"bad level list {text!r}: {exc}") from None


def levels_from_quantiles(scores: Sequence, p: float, above=None, target=None):
    """Largest ``L`` with at least ``ceil(p * len(scores))`` scores ``>= L``.

    If that ``L`` does not exceed ``above`` (the current level) the
    smallest score above it is used instead.  Raises :class:`Stagnation`
    when all scores are equal and below ``target``, or when nothing lies
    above ``above``.
    """
    if not scores:
        raise ValueError("no scores")
    pf = _frac(p)
    if not 0 < pf < 1:
        raise ValueError(f"proportion must lie in (0, 1), got {p}")
    need = math.ceil(pf * len(scores))
    ordered = sorted(scores, reverse=True)
    lo, hi = ordered[-1], ordered[0]
    if lo == hi and (target is None or hi < target):
        raise Stagnation(f"all {len(scores)} scores equal {hi}")
    level = ordered[need - 1]
    if above is not None and level <= above:
        higher = [s for s in scores if s > above]
        if not higher:
            raise Stagnation(f"no score above the current level {above}")
        level = min(higher)
    return level


@dataclass
class ValidationReport:
    trials: int
    violations: list  # (trial, seed, max score, verdict)
    threshold: Fraction

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_minimum_requirement(sf: ScoreFn, model, formula, trials: int, seed: int = 0,
                                 stop_after: Optional[int] = None) -> ValidationReport:
    """Simulate ``trials`` traces to decision and list every trace whose
    (running max >= threshold) disagrees with (verdict = True).

    Trace ``i`` replays with ``raresplit.rng.stream(seed, 0, i, 0)``.
    """
    from .product import make_problem
    from .rng import stream
    problem = make_problem(model, formula, sf, sf.threshold)
    bad = []
    for i in range(trials):
        sim = problem.new_sim(stream(seed, 0, i, 0))
        problem.advance(sim)
        if (sim.smax >= problem.threshold) != (sim.verdict is True):
            bad.append((i, seed, sim.smax, sim.verdict))
            if stop_after is not None and len(bad) >= stop_after:
                break
    return ValidationReport(trials, bad, sf.threshold)
