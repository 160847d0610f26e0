"""Three-valued observer networks for restricted bounded LTL.

Every operator of a formula becomes one observer node.  A node is a small
guarded-command automaton over its own variables (``o``, ``d`` and integer
counters) and the outputs of its children (``o1``/``d1`` for the first
input, ``o2``/``d2`` for the second).  Nodes run leaves first; inside a
node all guards are evaluated, then the enabled updates are applied in
listed order.

The base command tables are kept as originally designed.  Variants such
as disjunction, ``G`` and the outer forms come from :func:`derive`
through textual substitutions, and the repairs the base tables need are
applied by named functions so they stay visible.

State of a node in the flat state vector: ``o``, ``d``, then its counters.
The byte form is little-endian: ``o`` and ``d`` one byte each, then every
counter as a signed 64-bit word.
"""
from __future__ import annotations

import builtins
import struct
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from . import expr as E
from . import logic as L
from .expr import CODEGEN_GLOBALS, parse_expr, to_python
from .logic import Tri
from .model.engine import ModelState

__all__ = [
    "ObserverError", "Command", "Table", "TABLES", "derive", "ObserverNode",
    "ObserverNetwork", "ObserverSnapshot", "compile_formula", "compile", "observe_step",
    "snapshot", "restore", "counter_count", "SNAPSHOT_LAYOUT_VERSION", "MAX_BOUND",
]

SNAPSHOT_LAYOUT_VERSION = 1
MAX_BOUND = 2 ** 62


class ObserverError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Command tables

@dataclass(frozen=True)
class Command:
    guard: E.Node
    updates: tuple  # ((var, expr), ...)

    def __str__(self):
        ups = ", ".join(f"{v} <- {E.to_source(e)}" for v, e in self.updates)
        return f"{E.to_source(self.guard)}: {ups}" if ups else E.to_source(self.guard)


@dataclass(frozen=True)
class Table:
    """Commands plus an optional barrier: commands from index ``barrier`` on
    see the variables as updated by the commands before it."""
    commands: tuple
    barrier: Optional[int] = None

    def __len__(self):
        return len(self.commands)

    def __getitem__(self, i):
        return self.commands[i]

    def variables(self) -> set:
        out = set()
        for c in self.commands:
            out |= E.free_names(c.guard)
            for v, e in c.updates:
                out.add(v)
                out |= E.free_names(e)
        return out


def _table(rows, barrier=None) -> Table:
    cmds = []
    for guard, ups in rows:
        cmds.append(Command(parse_expr(guard), tuple((v, parse_expr(e)) for v, e in ups)))
    return Table(tuple(cmds), barrier)


_T, _F = ("d", "true"), ("d", "false")

FIG_CONJ = _table([
    ("!d & (!d1 | !d2) & !(!o1 & d1 | !o2 & d2)", []),
    ("!d & d1 & o1 & d2 & o2", [_T, ("o", "true")]),
    ("!d & (!o1 & d1 | !o2 & d2)", [_T, ("o", "false")]),
])

FIG_IMPL = _table([
    ("!d & (!d1 & !(d2 & o2) | d1 & o1 & !d2)", []),
    ("!d & (!o1 & d1 | o2 & d2)", [_T, ("o", "true")]),
    ("!d & d1 & o1 & d2 & !o2", [_T, ("o", "false")]),
])

FIG_X_INNER = _table([
    ("!d & d1 & w < k", [("w", "w + 1")]),
    ("d1 & w = k", [_T, ("o", "o1")]),
    ("d & !d1", [_F]),
])

FIG_F_INNER = _table([
    ("!d & d1 & !o1 & w < k", [("w", "w + 1")]),
    ("d1 & o1", [("o", "true"), _T, ("t", "w")]),
    ("d1 & !o1 & t = 0 & w = k", [_T, ("o", "false")]),
    ("d & d1 & !o1 & t = 0 & w < k", [_F]),
    ("d & d1 & !o1 & t > 0", [("t", "t - 1")]),
    ("d & !d1", [_F]),
])

# o1 is the right operand (phi), o2 the left one (psi).
FIG_UNTIL = _table([
    ("d1 & w1 < 0", [("w1", "w1 + 1")]),
    ("d2 & w2 < 0", [("w2", "w2 + 1")]),
    ("!d & d1 & !o1 & w1 >= 0 & w1 <= k", [("w1", "w1 + 1")]),
    ("!d & d1 & o1 & w1 >= 0 & w1 <= k", [("t1", "w1"), ("w1", "k + 1")]),
    ("!d & d2 & o2 & w2 >= 0 & w2 < k", [("w2", "w2 + 1"), ("t2", "w2")]),
    ("!d & d2 & !o2 & w2 >= 0 & w2 < k", [("w2", "k")]),
    ("!d & t1 >= 0 & t2 >= t1 - 1", [_T, ("o", "true")]),
    ("!d & (t1 < 0 & w1 = k + 1 | w2 = k & (t2 < t1 - 1 | t1 < 0 & t2 <= w1 - 1))",
     [_T, ("o", "false")]),
])


# -- substitutions ----------------------------------------------------------

def _simplify(e):
    if isinstance(e, E.Unary) and e.op == "!":
        a = _simplify(e.arg)
        if isinstance(a, E.Unary) and a.op == "!":
            return a.arg
        if isinstance(a, E.Lit) and isinstance(a.value, bool):
            return E.Lit(not a.value)
        return E.Unary("!", a)
    if isinstance(e, E.Binary):
        return E.Binary(e.op, _simplify(e.left), _simplify(e.right))
    return e


def _conjuncts(e) -> list:
    if isinstance(e, E.Binary) and e.op == "&":
        return _conjuncts(e.left) + _conjuncts(e.right)
    return [e]


def _conj(parts):
    if not parts:
        return E.TRUE
    out = parts[0]
    for p in parts[1:]:
        out = E.Binary("&", out, p)
    return out


def negate_inputs(table: Table, inputs=("o1", "o2")) -> Table:
    """Replace every input ``o'`` by ``!o'``."""
    m = {n: E.Unary("!", E.Name(n)) for n in inputs}
    cmds = tuple(Command(_simplify(E.substitute(c.guard, m)),
                         tuple((v, _simplify(E.substitute(e, m))) for v, e in c.updates))
                 for c in table.commands)
    return replace(table, commands=cmds)


def swap_outputs(table: Table) -> Table:
    """Exchange ``o <- true`` and ``o <- false`` (``o <- e`` becomes ``o <- !e``)."""
    cmds = tuple(Command(c.guard, tuple((v, _simplify(E.Unary("!", e)) if v == "o" else e)
                                        for v, e in c.updates))
                 for c in table.commands)
    return replace(table, commands=cmds)


def strengthen(table: Table, idx, cond: str = "!d") -> Table:
    """Conjoin ``cond`` to the guards of the (1-based) commands ``idx``."""
    g = parse_expr(cond)
    cmds = list(table.commands)
    for i in idx:
        c = cmds[i - 1]
        if g not in _conjuncts(c.guard):
            cmds[i - 1] = Command(_conj([g] + _conjuncts(c.guard)), c.updates)
    return replace(table, commands=tuple(cmds))


def drop(table: Table, idx) -> Table:
    keep = tuple(c for i, c in enumerate(table.commands, 1) if i not in set(idx))
    return replace(table, commands=keep)


def drop_variable(table: Table, name: str) -> Table:
    """Remove every conjunct and update that mentions ``name``."""
    cmds = []
    for c in table.commands:
        g = _conj([p for p in _conjuncts(c.guard) if name not in E.free_names(p)])
        ups = tuple((v, e) for v, e in c.updates if v != name and name not in E.free_names(e))
        cmds.append(Command(g, ups))
    return replace(table, commands=tuple(cmds))


def edit(table: Table, i: int, guard: str = None, extra=(), replace_updates=None) -> Table:
    cmds = list(table.commands)
    c = cmds[i - 1]
    g = parse_expr(guard) if guard is not None else c.guard
    ups = c.updates if replace_updates is None else tuple(
        (v, parse_expr(e)) for v, e in replace_updates)
    ups = ups + tuple((v, parse_expr(e)) for v, e in extra)
    cmds[i - 1] = Command(g, ups)
    return replace(table, commands=tuple(cmds))


# -- repairs ------------------------------------------------------------------

def repair_inner_f(t: Table) -> Table:
    """Make the inner ``F`` table emit exactly one verdict per decided input.

    * command 1 must not count while true verdicts are still owed (``t = 0``);
    * command 4 re-opens a position and so must count it (``w <- w + 1``);
    * command 5 also runs after an undecided input cleared ``d``, and then
      has to re-assert the true verdict.
    """
    t = edit(t, 1, guard="!d & d1 & !o1 & t = 0 & w < k")
    t = edit(t, 4, extra=[("w", "w + 1")])
    t = edit(t, 5, guard="d1 & !o1 & t > 0", extra=[("o", "true"), ("d", "true")])
    return t


def repair_until(t: Table) -> Table:
    """``t2`` counts leading true ``psi`` verdicts, so the comparisons against
    the first ``phi`` position lose their ``- 1``; commands 7 and 8 read the
    counters as updated in the same step."""
    t = edit(t, 7, guard="!d & t1 >= 0 & t2 >= t1")
    t = edit(t, 8, guard="!d & (t1 < 0 & w1 = k + 1 | w2 = k & (t2 < t1 | t1 < 0 & t2 <= w1 - 1))")
    return replace(t, barrier=6)


# -- derivation -----------------------------------------------------------------

def derive(kind: str) -> Table:
    """Command table for an observer kind (before negation)."""
    if kind == "conjunction":
        return FIG_CONJ
    if kind == "implication":
        return FIG_IMPL
    if kind == "disjunction":
        return swap_outputs(negate_inputs(FIG_CONJ))
    if kind == "inner-X":
        return FIG_X_INNER
    if kind == "outer-X":
        return strengthen(drop(FIG_X_INNER, [3]), [2])
    if kind == "inner-F":
        return repair_inner_f(FIG_F_INNER)
    if kind == "outer-F":
        return strengthen(drop_variable(drop(derive("inner-F"), [4, 5, 6]), "t"), [2, 3])
    if kind in ("inner-G", "outer-G"):
        return swap_outputs(negate_inputs(derive(kind.replace("G", "F")), ("o1",)))
    if kind == "until-outer":
        return repair_until(FIG_UNTIL)
    raise KeyError(kind)


TEMPORAL_KINDS = ("inner-X", "inner-F", "inner-G", "outer-X", "outer-F", "outer-G")
TABLES = {k: derive(k) for k in
          ("conjunction", "disjunction", "implication") + TEMPORAL_KINDS + ("until-outer",)}

COUNTERS = {
    "atomic": (), "conjunction": (), "disjunction": (), "implication": (),
    "inner-X": ("w",), "inner-F": ("w", "t"), "inner-G": ("w", "t"),
    "outer-X": ("w",), "outer-F": ("w",), "outer-G": ("w",),
    "until-outer": ("w1", "w2", "t1", "t2"),
}


# ---------------------------------------------------------------------------
# Network structure

@dataclass
class ObserverNode:
    kind: str
    k: int = 0
    kx: int = 0
    negated: bool = False
    latched: bool = False  # atoms read once (outer position)
    children: tuple = ()
    expr: Optional[E.Node] = None
    offset: int = 0
    counters: tuple = ()

    def initial(self) -> list:
        init = {"w": 0, "t": 0, "w1": -self.kx, "w2": -self.kx, "t1": -1, "t2": 0}
        return [False, False] + [init[c] for c in self.counters]

    @property
    def width(self) -> int:
        return 2 + len(self.counters)


def _build(f) -> tuple[list, int]:
    """Nodes in execution order (children first) and the root index."""
    rep = L.check_restriction(f)
    if not rep.accepted:
        path, rule = rep.violations[0]
        raise ObserverError(f"formula outside the restricted fragment at {list(path)}: {rule}")
    f = L.distribute_next(L.fold_atoms(f))
    nodes: list = []

    def add(node) -> int:
        node.counters = COUNTERS[node.kind]
        for b in (node.k, node.kx):
            if b > MAX_BOUND:
                raise ObserverError(f"time bound {b} exceeds 2^62")
        nodes.append(node)
        return len(nodes) - 1

    def inner(g) -> int:
        if isinstance(g, L.Atom):
            return add(ObserverNode("atomic", expr=g.expr))
        c = inner(g.arg)
        name = {L.Next: "X", L.Finally: "F", L.Globally: "G"}[type(g)]
        return add(ObserverNode(f"inner-{name}", k=g.k, children=(c,)))

    def outer(g, neg=False) -> int:
        if isinstance(g, L.Atom):
            return add(ObserverNode("atomic", expr=g.expr, latched=True, negated=neg))
        if isinstance(g, L.Not):
            return outer(g.arg, not neg)
        if isinstance(g, (L.And, L.Or, L.Implies)):
            a, b = outer(g.left), outer(g.right)
            kind = {L.And: "conjunction", L.Or: "disjunction", L.Implies: "implication"}[type(g)]
            return add(ObserverNode(kind, children=(a, b), negated=neg))
        kx, h = 0, g
        while isinstance(h, L.Next) and isinstance(_strip_next(h), L.Until):
            kx, h = kx + h.k, h.arg
        if isinstance(h, L.Until):
            phi, psi = inner(h.right), inner(h.left)
            return add(ObserverNode("until-outer", k=h.k, kx=kx, children=(phi, psi), negated=neg))
        c = inner(g.arg)
        name = {L.Next: "X", L.Finally: "F", L.Globally: "G"}[type(g)]
        return add(ObserverNode(f"outer-{name}", k=g.k, children=(c,), negated=neg))

    root = outer(f)
    off = 0
    for n in nodes:
        n.offset = off
        off += n.width
    return nodes, root


def _strip_next(g):
    while isinstance(g, L.Next):
        g = g.arg
    return g


def counter_count(f) -> int:
    """Number of integer counters in the compiled network of ``f``."""
    nodes, _ = _build(f)
    return sum(len(n.counters) for n in nodes)


# ---------------------------------------------------------------------------
# Code generation

def _node_lines(n: ObserverNode, nodes, atom_src, checked: bool) -> list:
    b = n.offset
    if n.kind == "atomic":
        val = f"bool({atom_src(n.expr)})"
        if n.negated:
            val = f"not {val}"
        if n.latched:
            return [f"if not st[{b + 1}]:", f"    st[{b}] = {val}; st[{b + 1}] = True"]
        return [f"st[{b}] = {val}; st[{b + 1}] = True"]
    table = TABLES[n.kind]
    if n.negated:
        table = swap_outputs(table)
    local = {"o": "o", "d": "d", "k": str(n.k)}
    lines = [f"o = st[{b}]; d = st[{b + 1}]"]
    for j, c in enumerate(n.counters):
        local[c] = c
        lines.append(f"{c} = st[{b + 2 + j}]")
    for j, ch in enumerate(n.children, 1):
        cb = nodes[ch].offset
        local[f"o{j}"], local[f"d{j}"] = f"o{j}", f"d{j}"
        lines.append(f"o{j} = st[{cb}]; d{j} = st[{cb + 1}]")
    names = {v: local[v] for v in table.variables()}
    barrier = table.barrier if table.barrier is not None else len(table)
    for lo, hi in ((0, barrier), (barrier, len(table))):
        cmds = table.commands[lo:hi]
        for i, c in enumerate(cmds, lo + 1):
            lines.append(f"g{i} = {to_python(c.guard, names)}")
        if checked:
            lines += _check_lines(n, table, lo, hi)
        for i, c in enumerate(cmds, lo + 1):
            if c.updates:
                lines.append(f"if g{i}:")
                lines += [f"    {v} = {to_python(e, names)}" for v, e in c.updates]
    lines.append(f"st[{b}] = o; st[{b + 1}] = d")
    for j, c in enumerate(n.counters):
        lines.append(f"st[{b + 2 + j}] = {c}")
    return lines


def _check_lines(n, table, lo, hi) -> list:
    out = []
    for i in range(lo, hi):
        for j in range(i + 1, hi):
            vi = {v for v, _ in table[i].updates}
            vj = {v for v, _ in table[j].updates}
            if vi & vj:
                out.append(f"assert not (g{i + 1} and g{j + 1}), "
                           f"'{n.kind}: commands {i + 1} and {j + 1} both enabled'")
    if n.kind == "until-outer" and lo <= 6 < hi:
        out.append("assert not (g7 and g8), 'until: commands 7 and 8 both enabled'")
    return out


@dataclass(frozen=True)
class ObserverSnapshot:
    """Immutable copy of a network's state vector."""
    values: tuple
    widths: tuple = field(default=(), compare=False)

    def to_bytes(self) -> bytes:
        out = bytearray()
        i = 0
        for w in self.widths:
            out += struct.pack("<??", bool(self.values[i]), bool(self.values[i + 1]))
            if w > 2:
                out += struct.pack(f"<{w - 2}q", *self.values[i + 2:i + w])
            i += w
        return bytes(out)

    def __len__(self):
        return len(self.values)


class ObserverNetwork:
    """A compiled formula.

    ``step_fn(st, x)`` advances the state list ``st`` on model values ``x``
    and returns the root verdict (``None`` while undecided).  The network
    also carries one state of its own for the single-owner API
    (:meth:`observe`, :meth:`snapshot`, :meth:`restore`).
    """

    def __init__(self, formula, model=None, checked: bool = False):
        self.formula = formula
        self.nodes, self.root = _build(formula)
        self.model = model
        self.checked = checked
        self.widths = tuple(n.width for n in self.nodes)
        self.size = sum(self.widths)
        self._initial = tuple(v for n in self.nodes for v in n.initial())
        self.root_offset = self.nodes[self.root].offset
        self._compile()
        self.state = list(self._initial)

    def _atom_source(self, e) -> str:
        if self.model is not None:
            return self.model.expr_source(e, "x")
        try:
            return to_python(e, {n: f"x[{n!r}]" for n in E.free_names(e)})
        except KeyError as exc:
            raise ObserverError(f"label {exc.args[0]!r} needs a model") from None

    def _compile(self):
        lines = ["def step_fn(st, x):"]
        for n in self.nodes:
            lines += ["    " + s for s in _node_lines(n, self.nodes, self._atom_source, self.checked)]
        r = self.root_offset
        lines.append(f"    return st[{r}] if st[{r + 1}] else None")
        self.source = "\n".join(lines)
        ns = dict(CODEGEN_GLOBALS)
        exec(builtins.compile(self.source, "<observer>", "exec"), ns)
        self.step_fn = ns["step_fn"]

    # -- state -------------------------------------------------------------
    def initial_state(self) -> list:
        return list(self._initial)

    def reset(self) -> None:
        self.state = list(self._initial)

    def observe(self, values) -> Tri:
        if isinstance(values, ModelState):
            values = values.values
        return Tri.of(self.step_fn(self.state, values))

    def verdict(self, st: Sequence = None) -> Tri:
        st = self.state if st is None else st
        r = self.root_offset
        return Tri.of(st[r] if st[r + 1] else None)

    def snapshot(self) -> ObserverSnapshot:
        return ObserverSnapshot(tuple(self.state), self.widths)

    def restore(self, snap) -> None:
        vals = snap.values if isinstance(snap, ObserverSnapshot) else tuple(snap)
        if len(vals) != self.size:
            raise ObserverError(f"snapshot holds {len(vals)} values, network needs {self.size}")
        self.state = list(vals)

    def from_bytes(self, data: bytes) -> ObserverSnapshot:
        vals = []
        pos = 0
        for w in self.widths:
            if pos + 2 + 8 * (w - 2) > len(data):
                raise ObserverError("snapshot bytes too short for this network")
            vals += struct.unpack_from("<??", data, pos)
            pos += 2
            if w > 2:
                vals += struct.unpack_from(f"<{w - 2}q", data, pos)
                pos += 8 * (w - 2)
        if pos != len(data):
            raise ObserverError("snapshot bytes too long for this network")
        return ObserverSnapshot(tuple(vals), self.widths)

    @property
    def byte_size(self) -> int:
        return sum(2 + 8 * (w - 2) for w in self.widths)

    def node_state(self, st: Sequence, path: tuple) -> dict:
        """Variables of the node reached from the root by child indices ``path``."""
        n = self.node_at(path)
        vals = st[n.offset:n.offset + n.width]
        return dict(zip(("o", "d") + n.counters, vals))

    def node_at(self, path: tuple) -> ObserverNode:
        n = self.nodes[self.root]
        for i in path:
            if i >= len(n.children):
                raise ObserverError(f"observer path {'.'.join(map(str, path))} does not exist")
            n = self.nodes[n.children[i]]
        return n

    def describe(self) -> str:
        out = []
        for i, n in enumerate(self.nodes):
            extra = f" k={n.k}" if n.kind in TEMPORAL_KINDS + ("until-outer",) else ""
            if n.kx:
                extra += f" kx={n.kx}"
            if n.negated:
                extra += " negated"
            if n.expr is not None:
                extra += f" [{E.to_source(n.expr)}]"
            kids = f" <- {list(n.children)}" if n.children else ""
            out.append(f"{i}: {n.kind}{extra}{kids}{' (root)' if i == self.root else ''}")
        return "\n".join(out)


def compile_formula(f, model=None, checked: bool = False) -> ObserverNetwork:
    """Compile a restricted formula; ``model`` (a compiled model) lets atoms
    read tuple states, otherwise atoms read a name -> value mapping."""
    if isinstance(f, str):
        f = L.parse_formula(f, model)
    return ObserverNetwork(f, model, checked)


compile = compile_formula  # noqa: A001


def observe_step(net: ObserverNetwork, state) -> Tri:
    return net.observe(state)


def snapshot(net: ObserverNetwork) -> ObserverSnapshot:
    return net.snapshot()


def restore(net: ObserverNetwork, snap) -> None:
    net.restore(snap)
