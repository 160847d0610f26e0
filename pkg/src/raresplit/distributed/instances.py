"""Whole-instance distribution: independent estimates, averaged."""
from __future__ import annotations

import math
import statistics
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

from ..rng import repeat_seed
from ..splitting import Estimate, adaptive, fixed_level

__all__ = ["InstanceConfig", "InstancesResult", "distribute_instances", "AllExtinct"]


class AllExtinct(RuntimeError):
    pass


@dataclass(frozen=True)
class InstanceConfig:
    model: str
    formula: str
    score: str
    threshold: object
    estimator: str = "fixed"      # or "adaptive"
    levels: Optional[tuple] = None
    proportion: Optional[float] = None
    n: int = 1000
    seed: int = 0

    def run(self, seed: int) -> Estimate:
        if self.estimator == "fixed":
            return fixed_level(self.model, self.formula, self.score, self.levels, self.n, seed,
                               threshold=self.threshold)
        if self.estimator == "adaptive":
            return adaptive(self.model, self.formula, self.score, self.proportion, self.n, seed,
                            threshold=self.threshold)
        raise ValueError(f"unknown instance estimator {self.estimator!r}")


@dataclass
class InstancesResult:
    mean: float
    estimates: list
    std_error: Optional[float]
    extinct: list

    @property
    def valid(self) -> list:
        return [e for e in self.estimates if not e.extinct]


def _run(args):
    cfg, seed = args
    return cfg.run(seed)


def distribute_instances(config: InstanceConfig, workers: int, processes: int = 1,
                         runner: Callable = None) -> InstancesResult:
    """Run ``workers`` independent instances with disjoint seeds and average them.

    Extinct instances are reported and left out of the mean.
    """
    if workers < 1:
        raise ValueError("need at least one instance")
    seeds = [config.seed] if workers == 1 else [repeat_seed(config.seed, i) for i in range(workers)]
    jobs = [(config, s) for s in seeds]
    if runner is not None:
        ests = [runner(s) for s in seeds]
    elif processes > 1:
        with ProcessPoolExecutor(processes) as ex:
            ests = list(ex.map(_run, jobs))
    else:
        ests = [_run(j) for j in jobs]
    extinct = [i for i, e in enumerate(ests) if e.extinct]
    good = [e.gamma_hat for e in ests if not e.extinct]
    if not good:
        raise AllExtinct(f"all {workers} instances went extinct")
    if extinct:
        warnings.warn(f"{len(extinct)} of {workers} instances went extinct and are excluded")
    se = statistics.stdev(good) / math.sqrt(len(good)) if len(good) > 1 else None
    return InstancesResult(statistics.fmean(good), ests, se, extinct)
