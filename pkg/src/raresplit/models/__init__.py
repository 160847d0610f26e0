"""Bundled models and the case-study settings that go with them."""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

__all__ = ["Case", "CASES", "bundled", "load_model", "model_text"]


def bundled() -> list:
    """Names of the bundled ``.model`` files (without suffix)."""
    return sorted(p.name[:-6] for p in resources.files(__name__).iterdir()
                  if p.name.endswith(".model"))


def model_text(name: str) -> str:
    """Source of a bundled model, or of a file if ``name`` is a path."""
    if name in bundled():
        return resources.files(__name__).joinpath(f"{name}.model").read_text("utf-8")
    path = Path(name)
    if path.is_file():
        return path.read_text("utf-8")
    raise FileNotFoundError(f"no bundled model or file named {name!r} "
                            f"(bundled: {', '.join(bundled())})")


def load_model(name: str):
    from ..model import compile_model, parse_model
    return compile_model(parse_model(model_text(name)))


def _sum(prefix, n, start=1):
    return "+".join(f"{prefix}{i}" for i in range(start, start + n))


@dataclass(frozen=True)
class Case:
    model: str
    prop: str
    score: str
    threshold: int
    levels: tuple
    proportion: float = 0.8
    n: int = 1000
    notes: str = field(default="", compare=False)


CASES = {
    "leader": Case(
        "leader", 'G<=420 !"elected"',
        # time elapsed without a leader; an election sends the score to 0
        "obs.d & !obs.o ? 0 : min(step, 420)", 420,
        (70, 140, 210, 280, 350, 420)),
    "counters": Case(
        "counters", 'X<=1 (!"init" U<=1000 "complete")',
        f"obs.d & obs.o ? 99 : min(98, 50 + ({_sum('c', 10)})/2)", 99,
        (80, 90, 95, 99), n=500),
    "philosophers": Case(
        "philosophers", 'F<=30 "eats"',
        # progress of philosopher 0, ties broken in favour of short paths
        "obs.d & obs.o ? 500 : s0*100 + (30 - step)", 500,
        (100, 200, 300, 400, 500)),
    "chain3": Case(
        "chain3", 'F<=5 "goal"',
        "obs.d & obs.o ? 3 : min(s, 2)", 3, (2, 3), n=1000),
}
