"""Estimators: plain Monte Carlo, fixed-level and adaptive importance splitting.

The fixed-level algorithm is written once, against a small pool interface
(:class:`SimulationPool` locally, remote proxies in
:mod:`raresplit.distributed`), so the single-process estimator is the
one-client case of the distributed one.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from scipy.stats import norm
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import logic as L
from .product import Problem, ProductState, make_problem
from .reference import check_trace
from .rng import resample_stream, server_stream, stream
from .score import LevelSchedule, Stagnation, levels_from_quantiles

__all__ = [
    "Estimate", "confidence_interval", "monte_carlo", "fixed_level", "adaptive",
    "SimulationPool", "run_levels", "choose_donor", "PoolError", "MemoryCapExceeded",
    "MonteCarlo", "FixedLevelSplitting", "AdaptiveSplitting", "check_budget",
    "check_proportion", "check_levels", "check_problem", "z_quantile",
]


class PoolError(RuntimeError):
    pass


class MemoryCapExceeded(RuntimeError):
    pass


def z_quantile(alpha: float) -> float:
    """Two-sided standard normal quantile for confidence ``1 - alpha``."""
    return float(norm.ppf(1 - alpha / 2))


@dataclass
class Estimate:
    estimator: str
    gamma_hat: float
    gamma_i: list          # exact level fractions
    levels: list
    n: int                 # simulations per level, over all clients
    k: int = 1
    sigma2: Optional[float] = None
    ci: Optional[tuple] = None
    ci_upper_infinite: bool = False
    alpha: float = 0.05
    z: float = field(default_factory=lambda: z_quantile(0.05))
    extinct_at: Optional[int] = None
    seed: Optional[int] = None
    wall_time: float = 0.0
    steps: int = 0
    note: str = ""

    @property
    def m(self) -> int:
        return len(self.gamma_i)

    @property
    def extinct(self) -> bool:
        return self.extinct_at is not None

    @property
    def gamma_exact(self) -> Fraction:
        out = Fraction(1)
        for g in self.gamma_i:
            out *= g
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gamma_i"] = [str(g) for g in self.gamma_i]
        d["levels"] = [str(v) for v in self.levels]
        d["ci"] = None if self.ci is None else [self.ci[0], None if math.isinf(self.ci[1]) else self.ci[1]]
        d["m"] = self.m
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Estimate":
        d = dict(d)
        d.pop("m", None)
        d["gamma_i"] = [Fraction(g) for g in d["gamma_i"]]
        d["levels"] = [Fraction(v) for v in d["levels"]]
        if d.get("ci") is not None:
            lo, hi = d["ci"]
            d["ci"] = (lo, math.inf if hi is None else hi)
        return cls(**d)


def confidence_interval(gammas: Sequence, n: int, alpha: float = 0.05):
    """Interval around the product of the level estimates.

    ``sigma^2 = sum((1 - g_i) / g_i)`` with plug-in ``g_i``; the interval is
    ``[g / (1 + z sigma / sqrt(n)), g / (1 - z sigma / sqrt(n))]``.  Returns
    ``(lo, hi, sigma2, upper_infinite)``; ``hi`` is ``inf`` when
    ``z sigma / sqrt(n) >= 1``.
    """
    if any(g <= 0 for g in gammas):
        raise ValueError("a level estimate is zero (extinction): interval undefined")
    g = 1.0
    for gi in gammas:
        g *= float(gi)
    sigma2 = sum((1 - float(gi)) / float(gi) for gi in gammas)
    r = z_quantile(alpha) * math.sqrt(sigma2) / math.sqrt(n)
    lo = g / (1 + r)
    if r >= 1:
        return lo, math.inf, sigma2, True
    return lo, g / (1 - r), sigma2, False


def _finish(est: Estimate, n_total: int) -> Estimate:
    est.gamma_hat = float(est.gamma_exact)
    if est.extinct:
        est.gamma_hat = 0.0
        return est
    lo, hi, s2, inf = confidence_interval(est.gamma_i, n_total, est.alpha)
    est.ci, est.sigma2, est.ci_upper_infinite = (lo, hi), s2, inf
    return est


# ---------------------------------------------------------------------------
# Monte Carlo

def monte_carlo(model, formula, N: int, seed: int = 0, alpha: float = 0.05,
                score=None, threshold=None) -> Estimate:
    """Fraction of ``N`` independent traces that satisfy the property.

    Restricted properties run on observers; others are checked on sampled
    traces of length ``horizon + 1`` with the reference checker.
    """
    check_budget(N, minimum=1)
    t0 = time.perf_counter()
    problem = make_problem(model, formula, score, threshold)
    hits = 0
    steps = 0
    if problem.restricted:
        for i in range(N):
            sim = problem.new_sim(stream(seed, 0, i, 0))
            problem.advance(sim)
            hits += sim.verdict is True
            steps += sim.step
    else:
        m = problem.model
        names = m.var_names
        for i in range(N):
            rand = stream(seed, 0, i, 0).random
            x = m.initial
            tr = [dict(zip(names, x))]
            for _ in range(problem.horizon):
                x = m.step_values(x, rand)
                tr.append(dict(zip(names, x)))
            hits += check_trace(problem.formula, tr, m) is L.Tri.TRUE
            steps += problem.horizon
    p = Fraction(hits, N)
    z = z_quantile(alpha)
    half = z * math.sqrt(float(p) * (1 - float(p)) / N)
    return Estimate("mc", float(p), [p], [problem.threshold], N, sigma2=float(p) * (1 - float(p)),
                    ci=(max(0.0, float(p) - half), min(1.0, float(p) + half)), alpha=alpha, z=z,
                    seed=seed, wall_time=time.perf_counter() - t0, steps=steps)


# ---------------------------------------------------------------------------
# Fixed levels

class SimulationPool:
    """The ``n`` simulations owned by one client."""

    def __init__(self, problem: Problem, n: int, seed: int, client: int = 0):
        self.problem = problem
        self.n = n
        self.seed = seed
        self.client = client
        self.sims = [problem.new_sim(stream(seed, client, j, 0)) for j in range(n)]
        self.pick_rng = resample_stream(seed, client)
        self.generation = 0
        self.succeeded: list = []
        self.failed: list = []
        self.steps = 0
        self._count = None

    # local pools do their work in start(); remote proxies overlap it
    def start(self, level) -> None:
        self._count = self.run_to_level(level)

    def collect(self) -> int:
        return self._count

    def run_to_level(self, level) -> int:
        self.generation += 1
        adv = self.problem.advance
        for s in self.sims:
            before = s.step
            adv(s, level)
            self.steps += s.step - before
        self.succeeded = [j for j, s in enumerate(self.sims) if s.smax >= level]
        self.failed = [j for j, s in enumerate(self.sims) if not s.smax >= level]
        return len(self.succeeded)

    def pick_state(self) -> ProductState:
        if not self.succeeded:
            raise PoolError(f"client {self.client} has no successful simulation to donate")
        j = self.succeeded[self.pick_rng.randrange(len(self.succeeded))]
        return self.sims[j].product()

    def pick_states(self, count: int) -> list:
        return [self.pick_state() for _ in range(count)]

    def replace(self, ordinal: int, ps: ProductState) -> None:
        if not 0 <= ordinal < len(self.failed):
            raise PoolError(f"client {self.client} has no failed simulation #{ordinal}")
        j = self.failed[ordinal]
        self.sims[j] = self.problem.sim_from(ps, stream(self.seed, self.client, j, self.generation))


def choose_donor(counts: Sequence[int], rng) -> int:
    """Client ``i`` with probability ``counts[i] / sum(counts)``."""
    total = sum(counts)
    r = rng.randrange(total)
    for i, c in enumerate(counts):
        if r < c:
            return i
        r -= c
    raise AssertionError("unreachable")


def run_levels(pools: Sequence, levels: Sequence, n: int, rng):
    """Coordinate the pools through all levels; returns ``(gamma_i, extinct_at)``.

    Per level every pool runs to the level and reports its count ``n_i``.
    Each failed simulation then gets a donor pool drawn with probability
    ``n_i / n'``; every donor is asked once for as many states as it was
    drawn, and the states are routed to the failed simulations in order.
    """
    k = len(pools)
    gammas = []
    for i, level in enumerate(levels):
        for p in pools:
            p.start(level)
        counts = [p.collect() for p in pools]
        nprime = sum(counts)
        gammas.append(Fraction(nprime, k * n))
        if nprime == 0:
            return gammas, i
        if i == len(levels) - 1:
            break
        slots = [(c, o) for c in range(k) for o in range(n - counts[c])]
        donors = [choose_donor(counts, rng) for _ in slots]
        supply = {}
        for d in sorted(set(donors)):
            supply[d] = iter(pools[d].pick_states(donors.count(d)))
        for (c, o), d in zip(slots, donors):
            pools[c].replace(o, next(supply[d]))
    return gammas, None


def fixed_level(model, formula, sf, levels, n: int, seed: int = 0, alpha: float = 0.05,
                threshold=None) -> Estimate:
    """Importance splitting with the given levels, one client of ``n`` simulations."""
    t0 = time.perf_counter()
    schedule = check_levels(levels)
    check_budget(n)
    problem = make_problem(model, formula, sf, threshold if threshold is not None
                           else schedule.threshold)
    _check_last_level(schedule, problem)
    pool = SimulationPool(problem, n, seed, 0)
    gammas, extinct = run_levels([pool], schedule.levels, n, server_stream(seed))
    est = Estimate("fixed", 0.0, gammas, list(schedule.levels), n, 1, alpha=alpha,
                   z=z_quantile(alpha), extinct_at=extinct, seed=seed, steps=pool.steps)
    if extinct is not None:
        est.note = f"extinct at level {extinct + 1} ({schedule.levels[extinct]})"
    _finish(est, n)
    est.wall_time = time.perf_counter() - t0
    return est


def _check_last_level(schedule: LevelSchedule, problem: Problem) -> None:
    if schedule.threshold != problem.threshold:
        raise ValueError(f"last level {schedule.threshold} must equal the satisfaction "
                         f"threshold {problem.threshold}")


# ---------------------------------------------------------------------------
# Adaptive levels

def adaptive(model, formula, sf, p: float, n: int, seed: int = 0, alpha: float = 0.05,
             max_iterations: int = 1000, memory_cap: int = 5_000_000,
             threshold=None) -> Estimate:
    """Splitting with levels chosen as quantiles of the traces' maximum scores.

    Each round every trace runs to decision.  The next level keeps a
    proportion ``p`` of the traces; each discarded trace restarts from the
    first stored state of a uniformly chosen survivor whose running maximum
    reached the level.  Once the level reaches the threshold the last factor
    is the fraction of traces that satisfy the property.  A round in which
    no trace exceeds the current level ends the run as extinct (estimate 0);
    a first round without any spread in the scores raises :class:`Stagnation`.
    """
    t0 = time.perf_counter()
    check_proportion(p)
    check_budget(n)
    problem = make_problem(model, formula, sf, threshold)
    thr = problem.threshold
    pick = resample_stream(seed, 0)
    sims, traces = [], []
    stored = 0
    steps = 0

    def run(j, sim, first):
        nonlocal stored, steps
        tr = [first]
        before = sim.step
        problem.advance_recording(sim, tr)
        steps += sim.step - before
        stored += len(tr)
        if stored > memory_cap:
            raise MemoryCapExceeded(f"{stored} stored states exceed the cap of {memory_cap}")
        return tr

    for j in range(n):
        sim = problem.new_sim(stream(seed, 0, j, 0))
        sims.append(sim)
        traces.append(run(j, sim, sim.product()))

    gammas, levels = [], []
    prev = None
    extinct = None
    for it in range(1, max_iterations + 1):
        scores = [s.smax for s in sims]
        if prev is not None and not any(sc > prev for sc in scores):
            # every trace is stuck at the current level: none can reach a higher one
            gammas.append(Fraction(0))
            levels.append(thr)
            extinct = len(levels) - 1
            break
        try:
            level = levels_from_quantiles(scores, p, above=prev, target=thr)
        except Stagnation as exc:
            raise Stagnation(f"adaptive splitting stalled after {len(levels)} levels: {exc}") from None
        if level >= thr:
            gammas.append(Fraction(sum(s.verdict is True for s in sims), n))
            levels.append(thr)
            break
        survivors = [j for j, s in enumerate(sims) if s.smax >= level]
        gammas.append(Fraction(len(survivors), n))
        levels.append(level)
        for j in range(n):
            if sims[j].smax >= level:
                continue
            donor = survivors[pick.randrange(len(survivors))]
            start = next(ps for ps in traces[donor] if ps.smax >= level)
            stored -= len(traces[j])
            sim = problem.sim_from(start, stream(seed, 0, j, it))
            sims[j] = sim
            traces[j] = run(j, sim, start)
        prev = level
    else:
        raise Stagnation(f"no convergence within {max_iterations} iterations")

    est = Estimate("adaptive", 0.0, gammas, levels, n, 1, alpha=alpha, z=z_quantile(alpha),
                   extinct_at=extinct, seed=seed, steps=steps)
    if extinct is not None:
        est.note = f"extinct after level {extinct} ({levels[extinct - 1]})"
    _finish(est, n)
    est.wall_time = time.perf_counter() - t0
    return est


# ---------------------------------------------------------------------------
# Validation helpers and estimator objects

def check_budget(n, minimum: int = 2) -> int:
    if isinstance(n, bool) or not isinstance(n, int) or n < minimum:
        raise ValueError(f"budget must be an integer >= {minimum}, got {n!r}")
    return n


def check_proportion(p) -> float:
    if isinstance(p, bool) or not isinstance(p, (int, float, Fraction)) or not 0 < p < 1:
        raise ValueError(f"proportion must lie strictly between 0 and 1, got {p!r}")
    return p


def check_levels(levels) -> LevelSchedule:
    if isinstance(levels, LevelSchedule):
        return levels
    if isinstance(levels, str):
        from .score import parse_levels
        return parse_levels(levels)
    if levels is None:
        raise ValueError("fixed-level splitting needs levels")
    return LevelSchedule(tuple(levels))


def check_problem(problem) -> Problem:
    if isinstance(problem, Problem):
        return problem
    if isinstance(problem, (tuple, list)) and 2 <= len(problem) <= 4:
        return Problem(*problem)
    raise TypeError("expected a Problem or a (model, property[, score, threshold]) tuple")


class _SplittingEstimator(BaseEstimator):
    """``fit(problem)`` stores the result in ``estimate_``."""

    def _store(self, est: Estimate):
        self.estimate_ = est
        self.gamma_ = est.gamma_hat
        self.levels_ = list(est.levels)
        self.confidence_interval_ = est.ci
        return self

    def summary(self) -> dict:
        check_is_fitted(self, "estimate_")
        return self.estimate_.to_dict()


class MonteCarlo(_SplittingEstimator):
    def __init__(self, n: int = 1000, seed: int = 0, alpha: float = 0.05):
        self.n = n
        self.seed = seed
        self.alpha = alpha

    def fit(self, problem, y=None):
        problem = check_problem(problem)
        return self._store(monte_carlo(problem, None, self.n, self.seed, self.alpha))


class FixedLevelSplitting(_SplittingEstimator):
    def __init__(self, levels=None, n: int = 1000, seed: int = 0, alpha: float = 0.05):
        self.levels = levels
        self.n = n
        self.seed = seed
        self.alpha = alpha

    def fit(self, problem, y=None):
        problem = check_problem(problem)
        return self._store(fixed_level(problem, None, None, self.levels, self.n,
                                       self.seed, self.alpha))


class AdaptiveSplitting(_SplittingEstimator):
    def __init__(self, proportion: float = 0.8, n: int = 1000, seed: int = 0,
                 alpha: float = 0.05, max_iterations: int = 1000, memory_cap: int = 5_000_000):
        self.proportion = proportion
        self.n = n
        self.seed = seed
        self.alpha = alpha
        self.max_iterations = max_iterations
        self.memory_cap = memory_cap

    def fit(self, problem, y=None):
        problem = check_problem(problem)
        return self._store(adaptive(problem, None, None, self.proportion, self.n, self.seed,
                                    self.alpha, self.max_iterations, self.memory_cap))
