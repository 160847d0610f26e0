"""Model x observer x score product, the unit every estimator simulates.

A :class:`Problem` bundles a compiled model, the observer network of the
property and a compiled score.  A :class:`Sim` is one live simulation; a
:class:`ProductState` is its immutable, transferable image.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from . import logic as L
from .logic import Tri
from .model.engine import CompiledModel, compile_model
from .observers import ObserverNetwork, compile_formula

__all__ = ["ProductState", "Problem", "Sim", "ProductError", "make_problem"]


class ProductError(ValueError):
    pass


@dataclass(frozen=True)
class ProductState:
    """Model valuation, observer state vector, running maximum score, step."""
    values: tuple
    obs: tuple
    smax: object
    step: int


class Sim:
    """A live simulation.  ``st`` is mutated in place by the observer network."""
    __slots__ = ("x", "st", "step", "smax", "verdict", "rng")

    def __init__(self, x, st, step, smax, verdict, rng):
        self.x, self.st, self.step, self.smax, self.verdict, self.rng = x, st, step, smax, verdict, rng

    def product(self) -> ProductState:
        return ProductState(self.x, tuple(self.st), self.smax, self.step)

    def __repr__(self):
        return f"Sim(step={self.step}, smax={self.smax}, verdict={self.verdict})"


def _as_level(v):
    v = Fraction(v)
    return int(v) if v.denominator == 1 else v


class Problem:
    """Everything a simulation needs, compiled once and shared read-only."""

    def __init__(self, model, formula, score=None, threshold=None, checked: bool = False):
        from .score import ScoreFn, default_score
        self.model: CompiledModel = compile_model(model)
        if isinstance(formula, str):
            self.formula_source = formula
            formula = L.parse_formula(formula, self.model)
        else:
            L.typecheck_formula(formula, self.model)
            self.formula_source = L.format_formula(formula)
        self.formula = formula
        self.horizon = L.horizon(formula)
        self.restricted = L.check_restriction(formula).accepted
        self.net: Optional[ObserverNetwork] = (
            compile_formula(formula, self.model, checked) if self.restricted else None)
        if score is None:
            score = default_score()
        elif isinstance(score, str):
            if threshold is None:
                raise ProductError("a score expression needs a satisfaction threshold")
            score = ScoreFn(score, threshold)
        elif threshold is not None:
            score = ScoreFn(score.source, threshold)
        self.score = score
        self.threshold = _as_level(score.threshold)
        self._score_fn = score.compile(self.model, self.net) if self.net is not None else None
        # decisions happen after at most horizon + 1 observed states
        self.step_cap = self.horizon + 1

    # -- simulation ---------------------------------------------------------
    def _need_net(self):
        if self.net is None:
            raise ProductError("property is outside the restricted fragment; "
                               "only Monte Carlo with the trace checker applies")

    def new_sim(self, rng) -> Sim:
        self._need_net()
        x = self.model.initial
        st = self.net.initial_state()
        v = self.net.step_fn(st, x)
        return Sim(x, st, 0, self._score_fn(x, st, 0), v, rng)

    def sim_from(self, ps: ProductState, rng) -> Sim:
        self._need_net()
        st = list(ps.obs)
        return Sim(ps.values, st, ps.step, ps.smax, self.net.verdict(st).value_bool(), rng)

    def advance(self, sim: Sim, level=None) -> None:
        """Run ``sim`` until its running maximum reaches ``level`` or the
        property is decided (``level=None`` runs to decision)."""
        mstep, ostep, score = self.model.step_values, self.net.step_fn, self._score_fn
        x, st, step, smax, v = sim.x, sim.st, sim.step, sim.smax, sim.verdict
        rand = sim.rng.random
        cap = self.step_cap
        if level is None:
            while v is None:
                x = mstep(x, rand)
                step += 1
                v = ostep(st, x)
                s = score(x, st, step)
                if s > smax:
                    smax = s
                if step > cap:
                    raise ProductError(f"property undecided after {step} steps")
        else:
            while v is None and smax < level:
                x = mstep(x, rand)
                step += 1
                v = ostep(st, x)
                s = score(x, st, step)
                if s > smax:
                    smax = s
                if step > cap:
                    raise ProductError(f"property undecided after {step} steps")
        sim.x, sim.step, sim.smax, sim.verdict = x, step, smax, v

    def advance_recording(self, sim: Sim, out: list) -> None:
        """Run to decision, appending a :class:`ProductState` to ``out``
        every time the running maximum increases."""
        mstep, ostep, score = self.model.step_values, self.net.step_fn, self._score_fn
        x, st, step, smax, v = sim.x, sim.st, sim.step, sim.smax, sim.verdict
        rand = sim.rng.random
        while v is None:
            x = mstep(x, rand)
            step += 1
            v = ostep(st, x)
            s = score(x, st, step)
            if s > smax:
                smax = s
                out.append(ProductState(x, tuple(st), smax, step))
            if step > self.step_cap:
                raise ProductError(f"property undecided after {step} steps")
        sim.x, sim.step, sim.smax, sim.verdict = x, step, smax, v

    def score_of(self, ps: ProductState):
        return self._score_fn(ps.values, list(ps.obs), ps.step)

    def verdict_of(self, ps: ProductState) -> Tri:
        return self.net.verdict(ps.obs)

    # -- wire form ----------------------------------------------------------
    def encode_product(self, ps: ProductState) -> bytes:
        """``values`` as i64, observer snapshot bytes, running max as
        (i64 numerator, u64 denominator), step as u64; little-endian."""
        from .observers import ObserverSnapshot
        vals = struct.pack(f"<{len(ps.values)}q", *(int(v) for v in ps.values))
        obs = ObserverSnapshot(ps.obs, self.net.widths).to_bytes()
        m = Fraction(ps.smax)
        return vals + obs + struct.pack("<qQQ", m.numerator, m.denominator, ps.step)

    def decode_product(self, data: bytes) -> ProductState:
        nv = len(self.model.var_names)
        nb = self.net.byte_size
        if len(data) != 8 * nv + nb + 24:
            raise ProductError(f"product state needs {8 * nv + nb + 24} bytes, got {len(data)}")
        raw = struct.unpack_from(f"<{nv}q", data, 0)
        vals = tuple(bool(v) if k == "bool" else v for v, k in zip(raw, self.model.kinds))
        snap = self.net.from_bytes(data[8 * nv:8 * nv + nb])
        num, den, step = struct.unpack_from("<qQQ", data, 8 * nv + nb)
        if den == 0:
            raise ProductError("zero denominator in running maximum")
        return ProductState(vals, snap.values, _as_level(Fraction(num, den)), step)

    @property
    def product_size(self) -> int:
        return 8 * len(self.model.var_names) + self.net.byte_size + 24


def make_problem(model, formula, score=None, threshold=None, **kw) -> Problem:
    if isinstance(model, Problem):
        return model
    return Problem(model, formula, score, threshold, **kw)
