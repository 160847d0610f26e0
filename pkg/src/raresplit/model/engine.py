"""Simulation of parsed models.

:class:`CompiledModel` turns a :class:`ModelAst` into generated Python
functions operating on plain tuples (variables in declaration order).
Scheduling: among enabled commands one is picked uniformly at random;
a state with no enabled command self-loops.
"""
from __future__ import annotations

import itertools
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

from ..expr import CODEGEN_GLOBALS, Lit, evaluate, substitute, to_python
from .lang import ModelAst, ModelError, parse_model

__all__ = ["ModelState", "CompiledModel", "StateSpaceError", "compile_model",
           "initial_state", "step", "exact_distribution"]


class StateSpaceError(RuntimeError):
    """Exact enumeration refused because it exceeds the configured cap."""


@dataclass(frozen=True)
class ModelState:
    values: tuple
    step: int = 0

    def valuation(self, model: "CompiledModel | ModelAst") -> dict:
        names = model.var_names
        return dict(zip(names, self.values))


class CompiledModel:
    """Executable form of a model.  Immutable and shareable between threads."""

    def __init__(self, ast: ModelAst, source: str | None = None):
        self.ast = ast
        self.source = source
        self.var_names = ast.var_names
        self.index = {n: i for i, n in enumerate(self.var_names)}
        self.kinds = tuple(v.kind for v in ast.variables)
        self.initial = tuple(v.init for v in ast.variables)
        consts = {k: Lit(v) for k, v in ast.constants.items()}
        self._labels = {k: substitute(e, consts) for k, e in ast.labels.items()}
        self._consts = consts
        self._build()

    # -- code generation ---------------------------------------------------
    def expr_source(self, e, state_var: str = "x", obs=None) -> str:
        """Python source for a model-level expression over ``state_var``."""
        names = {n: f"{state_var}[{i}]" for n, i in self.index.items()}
        e = substitute(e, self._consts)
        return to_python(e, names, self._labels, obs=obs)

    def _build(self):
        ast = self.ast
        lines = ["def _enabled(x):", "    e = []"]
        for ci, cmd in enumerate(ast.commands):
            lines.append(f"    if {self.expr_source(cmd.guard)}: e.append({ci})")
        lines.append("    return e")
        for ci, cmd in enumerate(ast.commands):
            lines += self._command_source(ci, cmd)
        lines.append("_cmds = (" + "".join(f"_cmd{i}, " for i in range(len(ast.commands))) + ")")
        src = "\n".join(lines)
        ns = dict(CODEGEN_GLOBALS)
        ns["_range_error"] = self._range_error
        exec(compile(src, f"<model:{id(self)}>", "exec"), ns)
        self._src = src
        self.enabled = ns["_enabled"]
        self._cmds = ns["_cmds"]

    def _command_source(self, ci, cmd) -> list[str]:
        out = [f"def _cmd{ci}(x, rand):", "    x = list(x)"]
        for block in cmd.blocks:
            if len(block) == 1:
                out += self._branch_source(block[0], "    ")
                continue
            out.append("    r = rand()")
            acc = Fraction(0)
            for bi, br in enumerate(block):
                acc += br.weight
                if bi == 0:
                    out.append(f"    if r < {float(acc)!r}:")
                elif bi < len(block) - 1:
                    out.append(f"    elif r < {float(acc)!r}:")
                else:
                    out.append("    else:")
                body = self._branch_source(br, "        ")
                out += body if body else ["        pass"]
        out.append("    return tuple(x)")
        return out

    def _branch_source(self, br, ind) -> list[str]:
        out = []
        for j, (name, e) in enumerate(br.updates):
            out.append(f"{ind}_v{j} = {self.expr_source(e)}")
        for j, (name, e) in enumerate(br.updates):
            i = self.index[name]
            v = self.ast.variables[i]
            out.append(f"{ind}x[{i}] = _v{j}")
            if v.kind == "int":
                out.append(f"{ind}if not {v.lo} <= _v{j} <= {v.hi}: _range_error({i}, _v{j})")
        return out

    def _range_error(self, i, value):
        v = self.ast.variables[i]
        raise ModelError(f"update sets {v.name!r} to {value}, outside [{v.lo}..{v.hi}]", *v.pos)

    # -- simulation --------------------------------------------------------
    def step_values(self, x: tuple, rand) -> tuple:
        """One transition on raw values; ``rand`` is a ``random()``-like callable."""
        e = self.enabled(x)
        if not e:
            return x
        if len(e) == 1:
            return self._cmds[e[0]](x, rand)
        return self._cmds[e[int(rand() * len(e))]](x, rand)

    def initial_state(self) -> ModelState:
        return ModelState(self.initial, 0)

    def step(self, state: ModelState, rng: random.Random) -> ModelState:
        return ModelState(self.step_values(state.values, rng.random), state.step + 1)

    def state_space_bound(self) -> int:
        return self.ast.state_space_bound()

    # -- exact successor distribution ---------------------------------------
    def exact_distribution(self, state: ModelState, cap: int = 100_000) -> list:
        """All successors with exact probabilities (merged, summing to 1)."""
        env = dict(zip(self.var_names, state.values))
        env.update(self.ast.constants)
        labels = self.ast.labels
        enabled = [c for c in self.ast.commands if evaluate(c.guard, env, labels)]
        nxt = ModelState(state.values, state.step + 1)
        if not enabled:
            return [(nxt, Fraction(1))]
        total = 0
        for c in enabled:
            n = 1
            for b in c.blocks:
                n *= len(b)
            total += n
        if total > cap:
            raise StateSpaceError(f"{total} branch combinations exceed cap {cap}")
        dist: dict = {}
        pc = Fraction(1, len(enabled))
        for c in enabled:
            for combo in itertools.product(*c.blocks):
                vals = dict(zip(self.var_names, state.values))
                p = pc
                for br in combo:
                    cur = dict(vals)
                    cur.update(self.ast.constants)
                    new = {n: evaluate(e, cur, labels) for n, e in br.updates}
                    for n, v in new.items():
                        d = self.ast.var(n)
                        if d.kind == "int" and not d.lo <= v <= d.hi:
                            self._range_error(self.index[n], v)
                    vals.update(new)
                    p *= br.weight
                key = tuple(vals[n] for n in self.var_names)
                key = tuple(bool(v) if k == "bool" else v for v, k in zip(key, self.kinds))
                dist[key] = dist.get(key, Fraction(0)) + p
        return [(ModelState(k, state.step + 1), p) for k, p in dist.items()]

    def evaluate(self, e, values: Iterable) -> object:
        """Exact evaluation of a model expression in a state."""
        env = dict(zip(self.var_names, values))
        env.update(self.ast.constants)
        return evaluate(e, env, self.ast.labels)


def compile_model(model: "ModelAst | str | CompiledModel") -> CompiledModel:
    if isinstance(model, CompiledModel):
        return model
    if isinstance(model, str):
        return CompiledModel(parse_model(model), model)
    return CompiledModel(model)


def initial_state(model) -> ModelState:
    return compile_model(model).initial_state()


def step(model, state: ModelState, rng: random.Random) -> ModelState:
    return compile_model(model).step(state, rng)


def exact_distribution(model, state: ModelState, cap: int = 100_000) -> list:
    return compile_model(model).exact_distribution(state, cap)
