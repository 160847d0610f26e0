"""Guarded-command model language: AST, parser and pretty-printer.

A model file is a sequence of items::

    const int N = 3;              // constants (int | double | rat | bool)
    x : [0..N] init 0;            // bounded integer variable
    b : bool init false;          // boolean variable
    [] x<N -> 0.1:(x'=x+1) + 0.9:(x'=0);
    [] x=N -> true;               // no-op update
    label "goal" = x=N;

Items may be grouped in ``module name ... endmodule`` blocks.  A command's
right-hand side is either one probabilistic choice or a sequence of
choices in braces, ``{...} {...}``, applied one after another (each
choice reads the state produced by the previous one; assignments inside
one branch are simultaneous).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import prod
from typing import Optional

from ..expr import (ExprError, ExprParser, Lit, Node, TokenStream, evaluate,
                    to_source, tokenize, typecheck, _lit_str)

__all__ = ["ModelError", "VarDecl", "Branch", "Command", "ModuleDef", "ModelAst",
           "parse_model", "format_model"]


class ModelError(ExprError):
    """Model parse or validation error carrying a source location."""


@dataclass(frozen=True)
class VarDecl:
    name: str
    kind: str  # 'int' | 'bool'
    lo: int
    hi: int
    init: int | bool
    pos: tuple = field(default=(0, 0), compare=False, repr=False)

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1


@dataclass(frozen=True)
class Branch:
    weight: Fraction
    updates: tuple  # ((name, Node), ...)


@dataclass(frozen=True)
class Command:
    guard: Node
    blocks: tuple  # (tuple[Branch, ...], ...) applied in sequence
    action: str = ""
    pos: tuple = field(default=(0, 0), compare=False, repr=False)

    @property
    def branches(self) -> tuple:
        """Branches of the first (usually only) probabilistic choice."""
        return self.blocks[0]


@dataclass(frozen=True)
class ModuleDef:
    name: str
    variables: tuple
    commands: tuple


@dataclass(frozen=True)
class ModelAst:
    constants: dict
    variables: tuple  # VarDecl in declaration order
    modules: tuple
    labels: dict

    @property
    def commands(self) -> tuple:
        return tuple(c for m in self.modules for c in m.commands)

    @property
    def var_names(self) -> tuple:
        return tuple(v.name for v in self.variables)

    def var(self, name: str) -> VarDecl:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def types(self) -> dict:
        t = {v.name: v.kind for v in self.variables}
        for k, val in self.constants.items():
            t[k] = _type_of(val)
        return t

    def state_space_bound(self) -> int:
        """Product of the declared variable ranges."""
        return prod(v.size for v in self.variables)

    def __eq__(self, other):
        if not isinstance(other, ModelAst):
            return NotImplemented
        return (self.constants == other.constants and self.variables == other.variables
                and self.modules == other.modules and self.labels == other.labels)

    __hash__ = None


def _type_of(v) -> str:
    if isinstance(v, bool):
        return "bool"
    if isinstance(v, Fraction) and v.denominator != 1:
        return "rat"
    return "int"


# ---------------------------------------------------------------------------

class _ModelParser:
    def __init__(self, text: str):
        self.ts = TokenStream(tokenize(text))
        self.ep = ExprParser(self.ts)
        self.constants: dict = {}
        self.const_pos: dict = {}
        self.variables: list[VarDecl] = []
        self.modules: list[ModuleDef] = []
        self.labels: dict = {}
        self._top_vars: list[str] = []
        self._top_cmds: list[Command] = []

    def err(self, msg, pos):
        raise ModelError(msg, *pos)

    def parse(self) -> ModelAst:
        ts = self.ts
        while ts.cur.kind != "EOF":
            if ts.at("module", "ID"):
                self.module()
            else:
                self.item(self._top_vars, self._top_cmds)
        mods = list(self.modules)
        if self._top_vars or self._top_cmds:
            mods.insert(0, ModuleDef("main", tuple(self._top_vars), tuple(self._top_cmds)))
        ast = ModelAst(dict(self.constants), tuple(self.variables), tuple(mods), dict(self.labels))
        validate(ast)
        return ast

    def module(self):
        ts = self.ts
        ts.expect("module", "ID")
        name = ts.expect_kind("ID").text
        vars_, cmds = [], []
        while not ts.at("endmodule", "ID"):
            if ts.cur.kind == "EOF":
                ts.error("missing 'endmodule'")
            self.item(vars_, cmds)
        ts.expect("endmodule", "ID")
        self.modules.append(ModuleDef(name, tuple(vars_), tuple(cmds)))

    def item(self, vars_, cmds):
        ts = self.ts
        t = ts.cur
        if ts.at("const", "ID"):
            self.constant()
        elif ts.at("label", "ID"):
            ts.i += 1
            name_tok = ts.expect_kind("STR")
            ts.expect("=")
            e = self.ep.parse()
            ts.expect(";")
            name = name_tok.text[1:-1]
            if name in self.labels:
                self.err(f"label {name!r} defined twice", (name_tok.line, name_tok.col))
            self.labels[name] = e
        elif ts.at("["):
            cmds.append(self.command())
        elif t.kind == "ID" and ts.peek().kind == "OP" and ts.peek().text == ":":
            vars_.append(self.variable())
        else:
            ts.error("expected declaration or command")

    def _const_value(self, e: Node):
        try:
            return evaluate(e, self.constants, exact_div=True)
        except ExprError as exc:
            raise ModelError(f"non-constant expression: {exc}", *e.pos) from None

    def constant(self):
        ts = self.ts
        ts.expect("const", "ID")
        declared = None
        if ts.cur.kind == "ID" and ts.cur.text in ("int", "double", "rat", "bool") \
                and ts.peek().kind == "ID":
            declared = ts.cur.text
            ts.i += 1
        name_tok = ts.expect_kind("ID")
        ts.expect("=")
        e = self.ep.parse()
        ts.expect(";")
        v = self._const_value(e)
        if declared == "int" and not (isinstance(v, int) and not isinstance(v, bool)):
            if isinstance(v, Fraction) and v.denominator == 1:
                v = int(v)
            else:
                self.err(f"constant {name_tok.text!r} is not an integer", (name_tok.line, name_tok.col))
        if declared in ("double", "rat") and not isinstance(v, bool):
            v = Fraction(v)
            if v.denominator == 1:
                v = int(v)
        if declared == "bool" and not isinstance(v, bool):
            self.err(f"constant {name_tok.text!r} is not boolean", (name_tok.line, name_tok.col))
        if isinstance(v, Fraction) and v.denominator == 1:
            v = int(v)
        if name_tok.text in self.constants:
            self.err(f"constant {name_tok.text!r} defined twice", (name_tok.line, name_tok.col))
        self.constants[name_tok.text] = v

    def variable(self) -> str:
        ts = self.ts
        name_tok = ts.expect_kind("ID")
        pos = (name_tok.line, name_tok.col)
        name = name_tok.text
        if name.endswith("'"):
            self.err("variable names may not be primed", pos)
        ts.expect(":")
        if ts.accept("bool", "ID"):
            kind, lo, hi = "bool", 0, 1
            init = False
            if ts.accept("init", "ID"):
                e = self.ep.parse()
                init = self._const_value(e)
                if not isinstance(init, bool):
                    self.err(f"initial value of {name!r} must be boolean", pos)
        else:
            ts.expect("[")
            lo_e = self.ep.additive()
            ts.expect("..")
            hi_e = self.ep.additive()
            ts.expect("]")
            lo, hi = self._const_value(lo_e), self._const_value(hi_e)
            if not all(isinstance(v, int) and not isinstance(v, bool) for v in (lo, hi)):
                self.err(f"range of {name!r} must be integer", pos)
            if lo > hi:
                self.err(f"empty range for {name!r}", pos)
            kind, init = "int", lo
            if ts.accept("init", "ID"):
                e = self.ep.parse()
                init = self._const_value(e)
                if isinstance(init, Fraction) and init.denominator == 1:
                    init = int(init)
                if isinstance(init, bool) or not isinstance(init, int):
                    self.err(f"initial value of {name!r} must be an integer", pos)
                if not lo <= init <= hi:
                    self.err(f"initial value {init} of {name!r} outside [{lo}..{hi}]", e.pos)
        ts.expect(";")
        if any(v.name == name for v in self.variables) or name in self.constants:
            self.err(f"{name!r} declared twice", pos)
        self.variables.append(VarDecl(name, kind, lo, hi, init, pos=pos))
        return name

    def command(self) -> Command:
        ts = self.ts
        t = ts.expect("[")
        action = ""
        if ts.cur.kind == "ID":
            action = ts.cur.text
            ts.i += 1
        ts.expect("]")
        guard = self.ep.parse()
        ts.expect("->")
        blocks = []
        if ts.at("{"):
            while ts.accept("{"):
                blocks.append(self.choice())
                ts.expect("}")
        else:
            blocks.append(self.choice())
        ts.expect(";")
        return Command(guard, tuple(blocks), action, pos=(t.line, t.col))

    def choice(self) -> tuple:
        ts = self.ts
        start = ts.cur
        branches = [self.branch()]
        while ts.accept("+"):
            branches.append(self.branch())
        total = sum(b.weight for b in branches)
        if total != 1:
            self.err(f"branch weights sum to {total}, not 1", (start.line, start.col))
        return tuple(branches)

    def _at_update(self) -> bool:
        ts = self.ts
        if ts.at("true", "ID") and not (ts.peek().kind == "OP" and ts.peek().text == ":"):
            return True
        return ts.at("(") and ts.peek().kind == "ID" and ts.peek().text.endswith("'")

    def branch(self) -> Branch:
        ts = self.ts
        tok = ts.cur
        weight = Fraction(1)
        if not self._at_update():
            we = self.ep.additive()
            ts.expect(":")
            w = self._const_value(we)
            if isinstance(w, bool):
                self.err("weight must be a number", (tok.line, tok.col))
            weight = Fraction(w)
            if weight <= 0:
                self.err(f"weight {weight} is not positive", (tok.line, tok.col))
        updates = []
        if ts.accept("true", "ID"):
            return Branch(weight, ())
        while True:
            ts.expect("(")
            target = ts.expect_kind("ID")
            if not target.text.endswith("'"):
                self.err("update target must be primed", (target.line, target.col))
            ts.expect("=")
            e = self.ep.parse()
            ts.expect(")")
            name = target.text[:-1]
            if any(u[0] == name for u in updates):
                self.err(f"{name!r} assigned twice in one branch", (target.line, target.col))
            updates.append((name, e, (target.line, target.col)))
            if not ts.accept("&"):
                break
        return Branch(weight, tuple((n, e) for n, e, _ in updates))


def validate(ast: ModelAst) -> None:
    """Check identifiers, types, ranges; raise :class:`ModelError`."""
    try:
        _validate(ast)
    except ModelError:
        raise
    except ExprError as exc:
        raise ModelError(str(exc).split(": ", 1)[-1], exc.line, exc.col) from None


def _validate(ast: ModelAst) -> None:
    types = ast.types()
    for name, e in ast.labels.items():
        if typecheck(e, types, ast.labels) != "bool":
            raise ModelError(f"label {name!r} is not boolean", *e.pos)
    for cmd in ast.commands:
        if typecheck(cmd.guard, types, ast.labels) != "bool":
            raise ModelError("guard is not boolean", *cmd.guard.pos)
        for block in cmd.blocks:
            for br in block:
                for name, e in br.updates:
                    if name not in types or name in ast.constants:
                        raise ModelError(f"update of undeclared variable {name!r}", *e.pos)
                    t = typecheck(e, types, ast.labels)
                    want = ast.var(name).kind
                    if (t == "bool") != (want == "bool") or t == "rat":
                        raise ModelError(f"update of {name!r} has type {t}", *e.pos)


def parse_model(source: str) -> ModelAst:
    """Parse model text; raise :class:`ModelError` with line/column on failure."""
    try:
        return _ModelParser(source).parse()
    except ModelError:
        raise
    except ExprError as exc:
        msg = str(exc).split(": ", 1)[-1] if exc.line else str(exc)
        raise ModelError(msg, exc.line, exc.col) from None


# ---------------------------------------------------------------------------

def _weight_src(w: Fraction) -> str:
    return str(w.numerator) if w.denominator == 1 else f"{w.numerator}/{w.denominator}"


def _choice_src(block) -> str:
    parts = []
    for br in block:
        if br.updates:
            ups = " & ".join(f"({n}'={to_source(e)})" for n, e in br.updates)
        else:
            ups = "true"
        parts.append(f"{_weight_src(br.weight)}:{ups}")
    return " + ".join(parts)


def format_model(ast: ModelAst) -> str:
    """Pretty-print; ``parse_model(format_model(a)) == a``."""
    lines = []
    for name, v in ast.constants.items():
        kind = {"bool": "bool", "int": "int", "rat": "double"}[_type_of(v)]
        lines.append(f"const {kind} {name} = {_lit_str(v)};")
    by_name = {v.name: v for v in ast.variables}
    for m in ast.modules:
        lines.append(f"module {m.name}")
        for vn in m.variables:
            v = by_name[vn]
            if v.kind == "bool":
                lines.append(f"  {v.name} : bool init {_lit_str(v.init)};")
            else:
                lines.append(f"  {v.name} : [{_lit_str(v.lo)}..{_lit_str(v.hi)}] init {_lit_str(v.init)};")
        for c in m.commands:
            if len(c.blocks) == 1:
                rhs = _choice_src(c.blocks[0])
            else:
                rhs = " ".join("{" + _choice_src(b) + "}" for b in c.blocks)
            lines.append(f"  [{c.action}] {to_source(c.guard)} -> {rhs};")
        lines.append("endmodule")
    for name, e in ast.labels.items():
        lines.append(f'label "{name}" = {to_source(e)};')
    return "\n".join(lines) + "\n"
