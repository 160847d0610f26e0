"""Acceptance suite: one PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py -s`` to see the lines as
they are produced; a normal run prints them in the terminal summary.
"""
import math
import random
import statistics
import time
from collections import Counter
from fractions import Fraction

import pytest
from scipy.stats import chisquare, ks_2samp

from helpers import (BATTERY, CHAIN3_GAMMA, exhaustive_agreement, first_verdict, random_trace,
                     restricted_formula, scale_bounds, verdict_line)
from raresplit import logic as L
from raresplit.distributed import distribute_instances, distributed_fixed_level
from raresplit.distributed.instances import InstanceConfig
from raresplit.distributed.protocol import (Error, Final, Init, LevelReport, ReplaceSimulation,
                                            RunToLevel, StateRequest, StateTransfer, decode,
                                            encode)
from raresplit.model import compile_model
from raresplit.models import CASES, model_text
from raresplit.observers import compile_formula
from raresplit.product import Problem, make_problem
from raresplit.reference import check_trace, exact_probability
from raresplit.rng import repeat_seed, server_stream, stream
from raresplit.splitting import (SimulationPool, adaptive, choose_donor, fixed_level, run_levels)

CHAIN = CASES["chain3"]
CHAIN_SRC = model_text("chain3")
GAMMA = float(CHAIN3_GAMMA)


@pytest.fixture(scope="module")
def chain():
    return make_problem(CHAIN_SRC, CHAIN.prop, CHAIN.score, CHAIN.threshold)


def test_oracle_value_of_test_chain():
    # the hand-derived value and the exact enumeration agree
    m = compile_model(CHAIN_SRC)
    assert exact_probability(m, L.parse_formula(CHAIN.prop, m)) == CHAIN3_GAMMA


# -- observers ------------------------------------------------------------------

def test_1_battery_exhaustive():
    t0 = time.perf_counter()
    assert len(BATTERY) == 30
    seen = set()
    traces = mismatch = late = 0
    for text in BATTERY:
        f = L.parse_formula(text)
        for n in compile_formula(f).nodes:
            seen.add(n.kind)
            if n.negated:
                seen.add("negation")
            if n.kind == "until-outer":
                seen.add("until-kx" if n.kx else "until-plain")
        s = exhaustive_agreement(f, max_len=12)
        traces += s["traces"]
        mismatch += s["mismatch"]
        late += s["late"]
    needed = {"conjunction", "disjunction", "implication", "negation", "inner-X", "inner-F",
              "inner-G", "outer-X", "outer-F", "outer-G", "until-plain", "until-kx"}
    elapsed = time.perf_counter() - t0
    ok = mismatch == 0 and late == 0 and needed <= seen and elapsed < 300
    verdict_line(1, ok, f"{len(BATTERY)} formulas, {traces} traces, {mismatch} mismatches, "
                        f"{late} undecided past the bound, missing kinds "
                        f"{sorted(needed - seen) or 'none'}, {elapsed:.0f}s")
    assert ok


def test_2_random_pairs():
    r = random.Random(2024)
    bad = []
    for _ in range(10_000):
        f = restricted_formula(r, depth=3, kmax=6)
        tr = random_trace(r, r.randint(1, 25))
        net = compile_formula(f)
        i, v = first_verdict(net, tr)
        ref = check_trace(f, tr)
        if v.decided:
            if v is not check_trace(f, tr[:i + 1]) or v is not ref:
                bad.append((L.format_formula(f), tr))
        elif len(tr) > L.horizon(f):
            bad.append((L.format_formula(f), tr))
    ok = not bad
    verdict_line(2, ok, f"10000 pairs, {len(bad)} disagreements")
    assert ok, bad[:3]


def test_3_snapshot_size_invariance():
    changed = []
    for text in BATTERY:
        f = L.parse_formula(text)
        a = compile_formula(f)
        b = compile_formula(scale_bounds(f, 100))
        if len(a.snapshot().to_bytes()) != len(b.snapshot().to_bytes()):
            changed.append(text)
    ok = not changed
    verdict_line(3, ok, f"{len(BATTERY)} formulas, {len(changed)} sizes changed with bounds x100")
    assert ok, changed


# -- estimators -----------------------------------------------------------------

def _mean_check(name, values):
    m = statistics.fmean(values)
    se = statistics.stdev(values) / math.sqrt(len(values))
    return abs(m - GAMMA) <= 3 * se, f"{name} mean {m:.4g} ({(m - GAMMA) / se:+.2f} SE)"


def test_4_unbiased_on_test_chain(chain):
    R = 1000
    fixed = [fixed_level(chain, None, None, [2, 3], 100, repeat_seed(1, r)) for r in range(R)]
    adapt = [adaptive(chain, None, None, 0.8, 100, repeat_seed(1, r)) for r in range(R)]
    dist = [distributed_fixed_level(CHAIN_SRC, CHAIN.prop, CHAIN.score, [2, 3], 25, 4,
                                    repeat_seed(1, r)) for r in range(R)]
    parts = []
    ok = True
    for name, runs in (("fixed", fixed), ("adaptive", adapt), ("distributed", dist)):
        # extinct runs are estimates of 0 and stay in the mean
        good, text = _mean_check(name, [e.gamma_hat for e in runs])
        ok &= good
        parts.append(f"{text}, {sum(e.extinct for e in runs)} extinct")
    verdict_line(4, ok, f"gamma {GAMMA:.4g}; " + "; ".join(parts))
    assert ok


def test_5_interval_coverage(chain):
    R = 1000
    runs = [fixed_level(chain, None, None, [2, 3], 1000, repeat_seed(2, r)) for r in range(R)]
    hits = sum(e.ci is not None and e.ci[0] <= GAMMA <= e.ci[1] for e in runs)
    ok = hits / R >= 0.9
    verdict_line(5, ok, f"{hits}/{R} intervals contain gamma (n=1000, "
                        f"{sum(e.extinct for e in runs)} extinct)")
    assert ok


class _Pool:
    def __init__(self, count):
        self.count, self.requested, self.replaced = count, 0, 0

    def start(self, level):
        pass

    def collect(self):
        return self.count

    def pick_states(self, count):
        self.requested += count
        return [None] * count

    def replace(self, ordinal, state):
        self.replaced += 1


def test_6_level_update_and_donors():
    pools = [_Pool(3), _Pool(2)]
    gammas, extinct = run_levels(pools, [1, 2, 3], 5, random.Random(0))
    update_ok = (gammas == [Fraction(1, 2)] * 3 and extinct is None
                 and sum(p.requested for p in pools) == 10 and sum(p.replaced for p in pools) == 10)
    counts = [5, 3, 2, 0, 10]
    rng = server_stream(6)
    draws = Counter(choose_donor(counts, rng) for _ in range(10_000))
    nprime = sum(counts)
    used = [i for i, c in enumerate(counts) if c]
    p = chisquare([draws[i] for i in used], [10_000 * counts[i] / nprime for i in used]).pvalue
    ok = update_ok and draws[3] == 0 and p > 0.01
    verdict_line(6, ok, f"gamma factors {[str(g) for g in gammas]}, donor chi-squared p={p:.3f}")
    assert ok


# -- case-study runs ---------------------------------------------------------------

def _case_runs(name, repeats, seed=0):
    c = CASES[name]
    src = model_text(c.model)
    prob = Problem(src, c.prop, c.score, c.threshold)
    return [fixed_level(prob, None, None, c.levels, c.n, repeat_seed(seed, r))
            for r in range(repeats)]


def test_7_case_studies():
    leader = _case_runs("leader", 25)
    vals = [e.gamma_hat for e in leader]
    mean, sd = statistics.fmean(vals), statistics.stdev(vals)
    per_run = max(e.wall_time for e in leader)
    fixed_ok = 2e-7 <= mean <= 5e-6 and 1.3e-7 / 3 <= sd <= 1.3e-7 * 3 and per_run < 250
    c = CASES["leader"]
    cfg = InstanceConfig(model_text(c.model), c.prop, c.score, c.threshold, "fixed", c.levels,
                         n=1000)
    par = [distribute_instances(InstanceConfig(**{**cfg.__dict__, "seed": repeat_seed(7, r)}), 5)
           for r in range(25)]
    par_vals = [p.mean for p in par]
    par_sd = statistics.stdev(par_vals)
    par_ok = 5.2e-8 / 3 <= par_sd <= 5.2e-8 * 3
    smoke = []
    smoke_ok = True
    for name in ("counters", "philosophers"):
        runs = _case_runs(name, 3, seed=5)
        v = [e.gamma_hat for e in runs]
        good = all(not e.extinct and 1e-7 <= e.gamma_hat <= 1e-5 for e in runs)
        smoke_ok &= good
        smoke.append(f"{name} mean {statistics.fmean(v):.3g} std {statistics.stdev(v):.2g}")
    ok = fixed_ok and par_ok and smoke_ok
    verdict_line(7, ok, f"leader mean {mean:.3g} std {sd:.3g} (1.3e-07) max {per_run:.1f}s/run; "
                        f"5x1000 std {par_sd:.3g} (5.2e-08); " + "; ".join(smoke))
    assert ok


def test_8_topology_equivalence(chain):
    R = 200
    dist = [distributed_fixed_level(CHAIN_SRC, CHAIN.prop, CHAIN.score, [2, 3], 200, 5,
                                    repeat_seed(8, r)).gamma_hat for r in range(R)]
    local = [fixed_level(chain, None, None, [2, 3], 1000, repeat_seed(9, r)).gamma_hat
             for r in range(R)]
    p = ks_2samp(dist, local).pvalue
    ok = p > 0.01
    verdict_line(8, ok, f"KS p={p:.3f} (k=5 n=200 vs k=1 n=1000, {R} runs each)")
    assert ok


# -- protocol ---------------------------------------------------------------------

def _random_message(r):
    def u(bits):
        return r.getrandbits(bits)

    def txt():
        return "".join(chr(r.choice([r.randrange(32, 127), r.randrange(0x80, 0xD7FF)]))
                       for _ in range(r.randrange(12)))

    def rat():
        return Fraction(r.randrange(-2 ** 63, 2 ** 63), r.randrange(1, 2 ** 63))

    def blob():
        return r.randbytes(r.randrange(40))

    kind = r.randrange(8)
    if kind == 0:
        return Init(txt(), txt(), txt(), rat(), tuple(rat() for _ in range(r.randrange(6))),
                    u(32), u(32), u(64))
    if kind == 1:
        return RunToLevel(u(32), rat())
    if kind == 2:
        return LevelReport(u(32), u(32))
    if kind == 3:
        return StateRequest(u(32))
    if kind == 4:
        return StateTransfer(tuple(blob() for _ in range(r.randrange(5))))
    if kind == 5:
        return ReplaceSimulation(u(32), blob())
    if kind == 6:
        return Final(u(64), txt())
    return Error(u(16), txt())


def _replay_ok(name, seed=0, n=200) -> int:
    """Continue every successful state on the donor and on a freshly
    compiled receiver under the same stream; returns how many agreed."""
    c = CASES[name]
    src = model_text(c.model)
    donor_side = Problem(src, c.prop, c.score, c.threshold)
    receiver = Problem(src, c.prop, c.score, c.threshold)
    pool = SimulationPool(donor_side, n, seed, client=1)
    pool.run_to_level(c.levels[0])
    agreed = 0
    for j in pool.succeeded:
        ps = pool.sims[j].product()
        wire = donor_side.encode_product(ps)
        a = donor_side.sim_from(ps, stream(seed, 2, j, 1))
        b = receiver.sim_from(receiver.decode_product(wire), stream(seed, 2, j, 1))
        donor_side.advance(a)
        receiver.advance(b)
        same = (a.verdict, a.step, a.smax, a.x, tuple(a.st)) == (
            b.verdict, b.step, b.smax, b.x, tuple(b.st))
        agreed += same
        assert same, (name, j)
    return agreed


def test_9_protocol():
    r = random.Random(99)
    failures = 0
    for _ in range(100_000):
        msg = _random_message(r)
        if decode(encode(msg)) != msg:
            failures += 1
    replayed = sum(_replay_ok(name) for name in ("chain3", "leader", "philosophers", "counters"))
    runs = [distributed_fixed_level(CHAIN_SRC, CHAIN.prop, CHAIN.score, [2, 3], 60, 3, seed=11)
            for _ in range(2)]
    deterministic = runs[0].gamma_i == runs[1].gamma_i and runs[0].steps == runs[1].steps
    ok = failures == 0 and replayed > 0 and deterministic
    verdict_line(9, ok, f"100000 messages, {failures} round-trip failures; {replayed} transferred "
                        f"states replayed identically; repeated run identical: {deterministic}")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
