"""Coordinator side of distributed fixed-level splitting."""
from __future__ import annotations

import socket
import threading
import time
from fractions import Fraction
from typing import Sequence

from ..product import Problem
from ..rng import server_stream
from ..score import LevelSchedule
from ..splitting import Estimate, _finish, check_budget, check_levels, run_levels, z_quantile
from .client import client_loop
from .protocol import (Error, Final, Init, LevelReport, ProtocolError, ReplaceSimulation,
                       RunToLevel, StateRequest, StateTransfer)
from .transport import ConnectionClosed, SocketConnection, loopback_pair

__all__ = ["RemotePool", "DistributedError", "serve", "serve_socket", "accept_clients",
           "distributed_fixed_level", "RunSpec"]


class DistributedError(RuntimeError):
    pass


class RemotePool:
    """Proxy for the simulations of one connected client."""

    def __init__(self, conn, client_id: int):
        self.conn = conn
        self.client_id = client_id
        self.index = -1
        self.states_received = 0

    def _recv(self, kind):
        try:
            msg = self.conn.recv()
        except (ConnectionClosed, ProtocolError) as exc:
            raise DistributedError(f"client {self.client_id}: {exc} (at level {self.index + 1})") from None
        if isinstance(msg, Error):
            raise DistributedError(f"client {self.client_id} error {msg.code}: {msg.message}")
        if not isinstance(msg, kind):
            raise DistributedError(f"client {self.client_id} sent {type(msg).__name__}, "
                                   f"expected {kind.__name__}")
        return msg

    def start(self, level) -> None:
        self.index += 1
        self.conn.send(RunToLevel(self.index, Fraction(level)))

    def collect(self) -> int:
        msg = self._recv(LevelReport)
        if msg.index != self.index:
            raise DistributedError(f"client {self.client_id} reported level {msg.index}, "
                                   f"expected {self.index}")
        return msg.count

    def pick_states(self, count: int) -> tuple:
        self.conn.send(StateRequest(count))
        msg = self._recv(StateTransfer)
        if len(msg.states) != count:
            raise DistributedError(f"client {self.client_id} sent {len(msg.states)} states, "
                                   f"{count} requested")
        self.states_received += count
        return msg.states

    def replace(self, ordinal: int, state: bytes) -> None:
        self.conn.send(ReplaceSimulation(ordinal, state))

    def finish(self) -> int:
        self.conn.send(Final(0, "run complete"))
        return self._recv(Final).steps


class RunSpec:
    """Source texts of one run, as sent to clients."""

    def __init__(self, model: str, formula: str, score: str, threshold, levels, n: int, seed: int):
        self.model, self.formula, self.score = model, formula, score
        self.threshold = Fraction(threshold)
        self.levels = check_levels(levels)
        self.n = check_budget(n)
        self.seed = int(seed)

    def problem(self) -> Problem:
        return Problem(self.model, self.formula, self.score, self.threshold)


def serve(spec: RunSpec, conns: Sequence, alpha: float = 0.05) -> Estimate:
    """Run one distributed fixed-level estimate over connected clients."""
    t0 = time.perf_counter()
    problem = spec.problem()  # surface compile errors before any client works
    if spec.levels.threshold != problem.threshold:
        raise ValueError(f"last level {spec.levels.threshold} must equal the threshold "
                         f"{problem.threshold}")
    k = len(conns)
    if k < 1:
        raise ValueError("need at least one client")
    pools = []
    for i, c in enumerate(conns):
        c.send(Init(spec.model, spec.formula, spec.score, spec.threshold,
                    spec.levels.levels, spec.n, i, spec.seed))
        pools.append(RemotePool(c, i))
    gammas, extinct = run_levels(pools, spec.levels.levels, spec.n, server_stream(spec.seed))
    steps = sum(p.finish() for p in pools)
    est = Estimate("distributed-fixed", 0.0, gammas, list(spec.levels.levels), k * spec.n, k,
                   alpha=alpha, z=z_quantile(alpha), extinct_at=extinct, seed=spec.seed,
                   steps=steps)
    if extinct is not None:
        est.note = f"extinct at level {extinct + 1} ({spec.levels.levels[extinct]})"
    _finish(est, k * spec.n)
    est.wall_time = time.perf_counter() - t0
    return est


def distributed_fixed_level(model: str, formula: str, score: str, levels, n: int, clients: int,
                            seed: int = 0, alpha: float = 0.05, threshold=None) -> Estimate:
    """Distributed fixed levels with ``clients`` in-process client threads."""
    levels = check_levels(levels)
    spec = RunSpec(model, formula, score, threshold if threshold is not None else levels.threshold,
                   levels, n, seed)
    server_side, threads = [], []
    for _ in range(clients):
        a, b = loopback_pair()
        t = threading.Thread(target=client_loop, args=(b,), daemon=True)
        t.start()
        server_side.append(a)
        threads.append(t)
    try:
        return serve(spec, server_side, alpha)
    finally:
        for c in server_side:
            c.close()
        for t in threads:
            t.join(timeout=10)


def accept_clients(port: int, count: int, host: str = "0.0.0.0", timeout=None,
                   ready=None) -> list:
    """Listen on ``port`` and return ``count`` connections."""
    srv = socket.create_server((host, port))
    if ready is not None:
        ready(srv.getsockname()[1])
    srv.settimeout(timeout)
    conns = []
    try:
        while len(conns) < count:
            sock, _ = srv.accept()
            sock.settimeout(None)
            conns.append(SocketConnection(sock))
    finally:
        srv.close()
    return conns


def serve_socket(spec: RunSpec, port: int, clients: int, repeats: int = 1, alpha: float = 0.05,
                 host: str = "0.0.0.0", ready=None, seeds=None) -> list:
    """Accept ``clients`` TCP clients and run ``repeats`` estimates over them."""
    conns = accept_clients(port, clients, host, ready=ready)
    out = []
    try:
        for r in range(repeats):
            if seeds is not None:
                spec.seed = seeds[r]
            out.append(serve(spec, conns, alpha))
    finally:
        for c in conns:
            c.close()
    return out
