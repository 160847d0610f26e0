"""Experiment runner: repeated estimates, ECDF tables and summary rows.

``raresplit run`` repeats one estimator ``R`` times with disjoint seeds and
writes the empirical distribution of the estimates; ``raresplit serve`` and
``raresplit client`` run distributed fixed-level splitting over TCP.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import statistics
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from .models import CASES, model_text
from .product import Problem
from .rng import repeat_seed, stream
from .score import parse_levels
from .splitting import Estimate, adaptive, check_budget, check_proportion, fixed_level, monte_carlo

__all__ = ["ExperimentConfig", "EcdfTable", "run_experiment", "summarize", "format_summary",
           "main", "ESTIMATORS", "ConfigError"]

log = logging.getLogger("raresplit")

ESTIMATORS = ("mc", "fixed", "adaptive", "distributed-fixed", "instances")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """One row of an experiment: what to estimate, how, and how often."""
    model: str
    prop: Optional[str] = None
    score: Optional[str] = None
    threshold: Optional[str] = None
    estimator: str = "fixed"
    levels: Optional[str] = None
    proportion: Optional[float] = None
    budget: int = 1000
    clients: int = 1
    repeats: int = 1
    seed: int = 0
    alpha: float = 0.05
    processes: int = 1
    pilot: int = 100
    out: Optional[str] = None
    name: Optional[str] = None

    def __post_init__(self):
        self.budget = int(self.budget)
        self.clients = int(self.clients)
        self.repeats = int(self.repeats)
        self.seed = int(self.seed)
        if self.levels is not None and not isinstance(self.levels, str):
            self.levels = ",".join(str(v) for v in self.levels)
        if self.threshold is not None:
            self.threshold = str(self.threshold)

    def resolved(self) -> "ExperimentConfig":
        """Copy with unset property, score, levels and threshold filled in
        from the bundled case of the same name."""
        d = asdict(self)
        case = CASES.get(self.model)
        if case is not None:
            if d["prop"] is None:
                d["prop"] = case.prop
                if d["score"] is None:
                    d["score"] = case.score
                    if d["threshold"] is None:
                        d["threshold"] = str(case.threshold)
            if self.estimator == "adaptive":
                if d["proportion"] is None and d["levels"] is None:
                    d["proportion"] = case.proportion
            elif d["levels"] is None and d["proportion"] is None and self.estimator != "mc":
                d["levels"] = ",".join(str(v) for v in case.levels)
        if d["threshold"] is None and d["levels"] is not None and d["score"] is not None:
            d["threshold"] = str(parse_levels(d["levels"]).threshold)
        if d["name"] is None:
            d["name"] = f"{Path(self.model).stem}/{self.estimator}"
        return ExperimentConfig(**d)

    def validate(self) -> "ExperimentConfig":
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {self.estimator!r}; one of {', '.join(ESTIMATORS)}")
        if not self.prop:
            raise ConfigError("no property given (--prop)")
        if self.estimator in ("fixed", "distributed-fixed") and self.levels is None:
            raise ConfigError(f"{self.estimator} needs --levels")
        if self.estimator == "adaptive":
            if self.proportion is None:
                raise ConfigError("adaptive needs --proportion")
            if self.levels is not None:
                raise ConfigError("adaptive takes --proportion, not --levels")
        if self.estimator in ("fixed", "distributed-fixed") and self.proportion is not None:
            raise ConfigError(f"{self.estimator} takes --levels, not --proportion")
        if self.estimator == "instances" and (self.levels is None) == (self.proportion is None):
            raise ConfigError("instances needs exactly one of --levels or --proportion")
        if self.estimator != "mc" and self.score is not None and self.threshold is None:
            raise ConfigError("a score expression needs --threshold (or --levels ending at it)")
        try:
            check_budget(self.budget, minimum=1 if self.estimator == "mc" else 2)
            if self.proportion is not None:
                check_proportion(self.proportion)
            if self.levels is not None:
                parse_levels(self.levels)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.repeats < 1 or self.clients < 1:
            raise ConfigError("--repeats and --clients must be positive")
        if self.clients > 1 and self.estimator not in ("distributed-fixed", "instances"):
            raise ConfigError(f"--clients has no meaning for {self.estimator}")
        return self

    # serialization: a flat JSON object whose keys are the flag names
    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(extra))}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    @property
    def budget_label(self) -> str:
        return f"{self.clients}x{self.budget}" if self.clients > 1 else str(self.budget)


@dataclass
class EcdfTable:
    """Sorted valid estimates with cumulative probabilities ``i/R``."""
    name: str
    estimates: list = field(default_factory=list)   # Estimate objects, run order
    extinct: list = field(default_factory=list)     # repeat indices
    wall_times: list = field(default_factory=list)
    levels: Optional[float] = None
    budget: str = ""
    t_step: Optional[float] = None                   # seconds per simulated step
    trace_length: Optional[float] = None             # mean steps of a plain MC trace

    @property
    def values(self) -> list:
        return sorted(e.gamma_hat for i, e in enumerate(self.estimates) if i not in self.extinct)

    @property
    def points(self) -> list:
        v = self.values
        return [(x, Fraction(i + 1, len(v))) for i, x in enumerate(v)]

    @property
    def mean(self) -> Optional[float]:
        v = self.values
        return statistics.fmean(v) if v else None

    @property
    def std(self) -> Optional[float]:
        v = self.values
        return statistics.stdev(v) if len(v) > 1 else None

    @property
    def total_time(self) -> float:
        return sum(self.wall_times)

    @property
    def mean_time(self) -> float:
        return self.total_time / len(self.wall_times) if self.wall_times else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["estimate", "cumprob"])
        for x, c in self.points:
            w.writerow([repr(x), f"{c.numerator}/{c.denominator}"])
        return buf.getvalue()

    @staticmethod
    def parse_csv(text: str) -> list:
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["estimate", "cumprob"]:
            raise ValueError("not an ECDF table (header must be estimate,cumprob)")
        return [(float(a), Fraction(b)) for a, b in rows[1:]]


def _problem(cfg: ExperimentConfig) -> Problem:
    # compile everything once so errors surface before any simulation
    return Problem(model_text(cfg.model), cfg.prop, cfg.score, cfg.threshold)


def _one(cfg: ExperimentConfig, src: str, seed: int) -> Estimate:
    thr = Fraction(cfg.threshold) if cfg.threshold is not None else None
    if cfg.estimator == "mc":
        return monte_carlo(src, cfg.prop, cfg.budget, seed, cfg.alpha)
    if cfg.estimator == "fixed":
        return fixed_level(src, cfg.prop, cfg.score, cfg.levels, cfg.budget, seed, cfg.alpha, thr)
    if cfg.estimator == "adaptive":
        return adaptive(src, cfg.prop, cfg.score, cfg.proportion, cfg.budget, seed, cfg.alpha,
                        threshold=thr)
    if cfg.estimator == "distributed-fixed":
        from .distributed import distributed_fixed_level
        return distributed_fixed_level(src, cfg.prop, cfg.score, cfg.levels, cfg.budget,
                                       cfg.clients, seed, cfg.alpha, thr)
    if cfg.estimator == "instances":
        from .distributed.instances import AllExtinct, InstanceConfig, distribute_instances
        ic = InstanceConfig(src, cfg.prop, cfg.score, thr,
                            "fixed" if cfg.levels is not None else "adaptive",
                            cfg.levels, cfg.proportion, cfg.budget, seed)
        t0 = time.perf_counter()
        try:
            res = distribute_instances(ic, cfg.clients, cfg.processes)
        except AllExtinct as exc:
            return Estimate("instances", 0.0, [Fraction(0)], [], cfg.budget * cfg.clients,
                            cfg.clients, extinct_at=0, seed=seed, note=str(exc),
                            wall_time=time.perf_counter() - t0)
        first = res.valid[0]
        est = Estimate("instances", res.mean, [Fraction(res.mean)], list(first.levels),
                       cfg.budget * cfg.clients, cfg.clients, alpha=cfg.alpha, seed=seed,
                       steps=sum(e.steps for e in res.estimates),
                       note=f"{len(res.extinct)} of {cfg.clients} instances extinct")
        est.sigma2 = None if res.std_error is None else (res.std_error / res.mean) ** 2 * est.n
        est.wall_time = time.perf_counter() - t0
        return est
    raise ConfigError(f"unknown estimator {cfg.estimator!r}")


def _pilot_length(problem: Problem, traces: int, seed: int) -> Optional[float]:
    """Mean length in steps of plain Monte Carlo traces (restricted properties)."""
    if traces <= 0 or not problem.restricted:
        return float(problem.horizon) if traces > 0 else None
    total = 0
    for i in range(traces):
        sim = problem.new_sim(stream(seed, 1, i, 0))
        problem.advance(sim)
        total += sim.step
    return total / traces


def run_experiment(cfg: ExperimentConfig, progress=None) -> EcdfTable:
    """Run ``cfg.repeats`` independent estimates and tabulate them."""
    cfg = cfg.resolved().validate()
    src = model_text(cfg.model)
    problem = _problem(cfg)
    table = EcdfTable(cfg.name, budget=cfg.budget_label)
    for r in range(cfg.repeats):
        seed = cfg.seed if cfg.repeats == 1 else repeat_seed(cfg.seed, r)
        est = _one(cfg, src, seed)
        table.estimates.append(est)
        table.wall_times.append(est.wall_time)
        if est.extinct:
            table.extinct.append(r)
        if progress is not None:
            progress(r, est)
    _timing(table, problem, cfg)
    return table


def _timing(table: EcdfTable, problem: Problem, cfg: ExperimentConfig) -> None:
    valid = [e for e in table.estimates if not e.extinct]
    if valid and cfg.estimator != "mc":
        table.levels = statistics.fmean(
            len(e.levels) if e.estimator == "instances" else e.m for e in valid)
    steps = sum(e.steps for e in table.estimates)
    if steps:
        table.t_step = table.total_time / steps
    table.trace_length = _pilot_length(problem, cfg.pilot, cfg.seed)


def _mc_time(t: EcdfTable) -> Optional[float]:
    """Projected time for plain Monte Carlo to reach the same standard deviation.

    Uses the sample std dev over repeats, or for a single run the estimator's
    own variance estimate.
    """
    g = t.mean
    if not g or t.t_step is None or t.trace_length is None:
        return None
    sd = t.std
    if sd is None:
        e = next(e for i, e in enumerate(t.estimates) if i not in t.extinct)
        if e.sigma2 is None:
            return None
        sd = g * math.sqrt(e.sigma2 / e.n) if e.estimator != "mc" else math.sqrt(e.sigma2 / e.n)
    if sd <= 0:
        return None
    n_mc = g * (1 - g) / sd ** 2
    return t.t_step * t.trace_length * n_mc


def summarize(tables: Sequence[EcdfTable]) -> list:
    """One summary row (a dict) per experiment."""
    if not tables:
        raise ValueError("nothing to summarize")
    rows = []
    for t in tables:
        rows.append({
            "experiment": t.name,
            "runs": len(t.estimates),
            "extinct": len(t.extinct),
            "mean": t.mean,
            "std_dev": t.std,
            "levels": t.levels,
            "budget": t.budget,
            "time_total": t.total_time,
            "time_mean": t.mean_time,
            "time_mc": _mc_time(t),
        })
    return rows


def _fmt_time(s: Optional[float]) -> str:
    if s is None:
        return "n/a"
    if s < 60:
        return f"{s:.1f}s"
    if s < 3600:
        return f"{s / 60:.0f}m"
    if s < 86400 * 2:
        return f"{s / 3600:.1f}h"
    return f"{s / 86400:.0f}d"


def _fmt(v, spec=".3g") -> str:
    return "n/a" if v is None else format(v, spec)


def format_summary(rows: Sequence[dict]) -> str:
    head = ["Experiment", "Runs", "Extinct", "Mean", "Std. dev", "Levels", "Budget",
            "Time (MC)"]
    body = []
    for r in rows:
        lv = r["levels"]
        body.append([
            r["experiment"], str(r["runs"]), str(r["extinct"]), _fmt(r["mean"]),
            _fmt(r["std_dev"]), "n/a" if lv is None else (f"{lv:g}" if lv == int(lv) else f"{lv:.1f}"),
            r["budget"], f"{_fmt_time(r['time_mean'])} ({_fmt_time(r['time_mc'])})",
        ])
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in [head] + body]
    return "\n".join(lines) + "\n"


def write_outputs(table: EcdfTable, cfg: ExperimentConfig, out: Path) -> None:
    """ECDF CSV, per-run estimates, config and summary into directory ``out``.

    Everything except ``timing.json`` is a function of the config alone.
    """
    out.mkdir(parents=True, exist_ok=True)
    (out / "ecdf.csv").write_text(table.to_csv())
    (out / "config.json").write_text(cfg.to_json())
    with open(out / "estimates.jsonl", "w") as fh:
        for e in table.estimates:
            d = e.to_dict()
            d.pop("wall_time")
            fh.write(json.dumps(d, sort_keys=True) + "\n")
    row = summarize([table])[0]
    timing = {k: row.pop(k) for k in ("time_total", "time_mean", "time_mc")}
    timing["t_step"] = table.t_step
    timing["wall_times"] = table.wall_times
    (out / "summary.json").write_text(json.dumps(row, indent=2, sort_keys=True) + "\n")
    (out / "timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# command line

def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file with the same keys as the flags")
    p.add_argument("--model", help="bundled model name (leader, counters, philosophers, ...) "
                                   "or path to a .model file")
    p.add_argument("--prop", help="bounded LTL property")
    p.add_argument("--score", help="score expression")
    p.add_argument("--threshold", help="satisfaction threshold of the score")
    p.add_argument("--estimator", choices=ESTIMATORS)
    p.add_argument("--levels", help="comma-separated fixed levels, last = threshold")
    p.add_argument("--proportion", type=float, help="adaptive: proportion of traces kept")
    p.add_argument("--budget", type=int, help="simulations per level (per client)")
    p.add_argument("--clients", "--workers", dest="clients", type=int,
                   help="clients (distributed-fixed) or instances (instances)")
    p.add_argument("--repeats", type=int, help="independent estimates")
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float, help="confidence level is 1 - alpha")
    p.add_argument("--processes", type=int, help="instances: worker processes")
    p.add_argument("--pilot", type=int, help="MC traces timed for the projection (0 disables)")
    p.add_argument("--name", help="experiment label in the summary")
    p.add_argument("--out", help="output directory for ecdf.csv, summary.json, ...")


_FLAG_KEYS = ("model", "prop", "score", "threshold", "estimator", "levels", "proportion",
              "budget", "clients", "repeats", "seed", "alpha", "processes", "pilot", "name", "out")


def config_from_args(args) -> ExperimentConfig:
    d = {}
    if args.config is not None:
        d.update(json.loads(args.config.read_text()))
    for k in _FLAG_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            d[k] = v
    if "model" not in d:
        raise ConfigError("no model given (--model)")
    return ExperimentConfig.from_dict(d)


def _cmd_run(args) -> int:
    cfg = config_from_args(args).resolved().validate()

    def progress(r, e):
        log.info("run %d: %s%s", r + 1, f"{e.gamma_hat:.4g}", f" [{e.note}]" if e.note else "")

    table = run_experiment(cfg, progress)
    return _report(table, cfg)


def _report(table: EcdfTable, cfg: ExperimentConfig) -> int:
    if cfg.out:
        write_outputs(table, cfg, Path(cfg.out))
    else:
        sys.stdout.write(table.to_csv())
    sys.stdout.write(format_summary(summarize([table])))
    if len(table.extinct) == len(table.estimates):
        log.error("all %d runs went extinct", len(table.estimates))
        return 3
    return 0


def _cmd_serve(args) -> int:
    from .distributed.server import RunSpec, serve_socket
    if args.estimator is None:
        args.estimator = "distributed-fixed"
    cfg = config_from_args(args).resolved()
    if cfg.estimator != "distributed-fixed":
        raise ConfigError("serve runs the distributed-fixed estimator only")
    cfg = cfg.validate()
    problem = _problem(cfg)
    spec = RunSpec(model_text(cfg.model), cfg.prop, cfg.score or problem.score.source,
                   cfg.threshold or problem.threshold, cfg.levels, cfg.budget, cfg.seed)
    seeds = [cfg.seed if cfg.repeats == 1 else repeat_seed(cfg.seed, r) for r in range(cfg.repeats)]

    def ready(port):
        log.info("listening on port %d for %d client(s)", port, cfg.clients)

    ests = serve_socket(spec, args.port, cfg.clients, cfg.repeats, cfg.alpha, args.host,
                        ready=ready, seeds=seeds)
    table = EcdfTable(cfg.name, budget=cfg.budget_label)
    for r, e in enumerate(ests):
        table.estimates.append(e)
        table.wall_times.append(e.wall_time)
        if e.extinct:
            table.extinct.append(r)
    _timing(table, problem, cfg)
    return _report(table, cfg)


def _cmd_client(args) -> int:
    from .distributed import client_loop, connect
    deadline = time.monotonic() + args.wait
    while True:
        try:
            conn = connect(args.connect)
            break
        except OSError as exc:
            if time.monotonic() >= deadline:
                log.error("cannot connect to %s: %s", args.connect, exc)
                return 2
            time.sleep(0.2)
    runs = client_loop(conn)
    log.info("served %d run(s)", runs)
    return 0


def _cmd_summarize(args) -> int:
    rows = []
    for d in args.dirs:
        d = Path(d)
        row = json.loads((d / "summary.json").read_text())
        tp = d / "timing.json"
        row.update({k: None for k in ("time_total", "time_mean", "time_mc")})
        if tp.exists():
            t = json.loads(tp.read_text())
            row.update({k: t.get(k) for k in ("time_total", "time_mean", "time_mc")})
        rows.append(row)
    sys.stdout.write(format_summary(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="raresplit", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress (any position)")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="repeat one estimator and tabulate the estimates")
    _add_run_flags(run)
    run.set_defaults(func=_cmd_run)
    srv = sub.add_parser("serve", help="coordinate distributed fixed-level runs over TCP")
    _add_run_flags(srv)
    srv.add_argument("--port", type=int, required=True, help="TCP port (0 picks a free one)")
    srv.add_argument("--host", default="0.0.0.0")
    srv.set_defaults(func=_cmd_serve)
    cl = sub.add_parser("client", help="serve simulations to a coordinator")
    cl.add_argument("--connect", required=True, metavar="HOST:PORT")
    cl.add_argument("--wait", type=float, default=30.0,
                    help="seconds to keep retrying the connection")
    cl.set_defaults(func=_cmd_client)
    sm = sub.add_parser("summarize", help="summary table of output directories")
    sm.add_argument("dirs", nargs="+")
    sm.set_defaults(func=_cmd_summarize)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    verbose = [a for a in argv if a in ("-v", "--verbose")]
    argv = [a for a in argv if a not in verbose]
    if argv and argv[0].startswith("--") and argv[0] != "--help":
        argv.insert(0, "run")   # bare flags mean "run"
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:   # config and compile errors
        ap.exit(2, f"raresplit: error: {exc}\n")


if __name__ == "__main__":
    sys.exit(main())
