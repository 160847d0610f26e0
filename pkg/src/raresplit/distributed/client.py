"""Client side: owns ``n`` simulations and answers the coordinator."""
from __future__ import annotations

import logging

from ..product import Problem
from ..splitting import PoolError, SimulationPool
from .protocol import (Error, Final, Init, LevelReport, ProtocolError, ReplaceSimulation,
                       RunToLevel, StateRequest, StateTransfer)
from .transport import ConnectionClosed

__all__ = ["client_loop", "ClientSession", "ERR_PROTOCOL", "ERR_NO_STATE", "ERR_COMPILE",
           "ERR_STATE"]

log = logging.getLogger(__name__)

ERR_PROTOCOL = 1
ERR_NO_STATE = 2
ERR_COMPILE = 3
ERR_STATE = 4


class ClientSession:
    """State of one run, created from an :class:`Init` message."""

    def __init__(self, init: Init):
        self.problem = Problem(init.model, init.formula, init.score, init.threshold)
        self.pool = SimulationPool(self.problem, init.n, init.seed, init.client_id)
        self.init = init

    def handle(self, msg):
        """Reply to ``msg`` (``None`` when no reply is due)."""
        pool = self.pool
        if isinstance(msg, RunToLevel):
            return LevelReport(msg.index, pool.run_to_level(msg.level))
        if isinstance(msg, StateRequest):
            if not pool.succeeded:
                raise PoolError("state requested from a client without successful simulations")
            enc = self.problem.encode_product
            return StateTransfer(tuple(enc(ps) for ps in pool.pick_states(msg.count)))
        if isinstance(msg, ReplaceSimulation):
            pool.replace(msg.ordinal, self.problem.decode_product(msg.state))
            return None
        raise ProtocolError(f"unexpected {type(msg).__name__} during a run")


def client_loop(conn) -> int:
    """Serve runs on ``conn`` until the peer closes it.  Returns the number
    of completed runs."""
    runs = 0
    session = None
    try:
        while True:
            try:
                msg = conn.recv()
            except ConnectionClosed:
                return runs
            except ProtocolError as exc:
                conn.send(Error(ERR_PROTOCOL, f"malformed message: {exc}"))
                return runs
            if isinstance(msg, Init):
                try:
                    session = ClientSession(msg)
                except Exception as exc:  # compile errors travel back as data
                    conn.send(Error(ERR_COMPILE, f"cannot compile run: {exc}"))
                    return runs
                continue
            if isinstance(msg, Final):
                steps = session.pool.steps if session else 0
                conn.send(Final(steps, "done"))
                session = None
                runs += 1
                continue
            if isinstance(msg, Error):
                log.warning("coordinator error %d: %s", msg.code, msg.message)
                return runs
            if session is None:
                conn.send(Error(ERR_PROTOCOL, f"{type(msg).__name__} before Init"))
                return runs
            try:
                reply = session.handle(msg)
            except PoolError as exc:
                conn.send(Error(ERR_NO_STATE, str(exc)))
                return runs
            except ProtocolError as exc:
                conn.send(Error(ERR_PROTOCOL, str(exc)))
                return runs
            except ValueError as exc:
                conn.send(Error(ERR_STATE, f"bad product state: {exc}"))
                return runs
            if reply is not None:
                conn.send(reply)
    finally:
        conn.close()
