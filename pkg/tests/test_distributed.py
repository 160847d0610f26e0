import random
import threading
from collections import Counter
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from helpers import TWO_BOOL
from raresplit.distributed import (DistributedError, InstanceConfig, ProtocolError, RunSpec,
                                   client_loop, connect, decode, distribute_instances,
                                   distributed_fixed_level, encode, loopback_pair, serve,
                                   serve_socket)
from raresplit.distributed.client import ERR_COMPILE, ERR_NO_STATE, ERR_PROTOCOL, ERR_STATE
from raresplit.distributed.instances import AllExtinct
from raresplit.distributed.protocol import (HEADER, MAGIC, Error, Final, Init, LevelReport,
                                            ReplaceSimulation, RunToLevel, StateRequest,
                                            StateTransfer)
from raresplit.models import CASES, model_text
from raresplit.product import make_problem
from raresplit.splitting import fixed_level, run_levels

CHAIN = CASES["chain3"]
CHAIN_SRC = model_text("chain3")
DEFAULT_SCORE = "obs.d & obs.o ? 1 : 0"


# -- codec --------------------------------------------------------------------

u32 = st.integers(0, 2 ** 32 - 1)
u64 = st.integers(0, 2 ** 64 - 1)
rat = st.builds(Fraction, st.integers(-2 ** 63, 2 ** 63 - 1), st.integers(1, 2 ** 63))
text = st.text(max_size=40)
blob = st.binary(max_size=60)

messages = st.one_of(
    st.builds(Init, text, text, text, rat, st.lists(rat, max_size=5).map(tuple), u32, u32, u64),
    st.builds(RunToLevel, u32, rat),
    st.builds(LevelReport, u32, u32),
    st.builds(StateRequest, u32),
    st.builds(StateTransfer, st.lists(blob, max_size=5).map(tuple)),
    st.builds(ReplaceSimulation, u32, blob),
    st.builds(Final, u64, text),
    st.builds(Error, st.integers(0, 2 ** 16 - 1), text),
)


@settings(max_examples=500, deadline=None)
@given(messages)
def test_codec_round_trip(msg):
    frame = encode(msg)
    assert decode(frame) == msg
    assert frame[:4] == MAGIC


def test_frame_errors():
    good = encode(LevelReport(1, 2))
    bad = [
        b"XXXX" + good[4:],                                   # magic
        good[:4] + (2).to_bytes(2, "little") + good[6:],      # version
        good[:6] + bytes([99]) + good[7:],                    # tag
        good[:-1],                                            # truncated
        good[:7] + (9).to_bytes(4, "little") + good[11:] + b"\0",  # trailing byte
        HEADER.pack(MAGIC, 1, 3, 2 ** 31),                    # oversized
        good[:5],
    ]
    for frame in bad:
        with pytest.raises(ProtocolError):
            decode(frame)


def test_encode_rejects_out_of_range():
    with pytest.raises(ProtocolError):
        encode(LevelReport(-1, 0))
    with pytest.raises(ProtocolError):
        encode(StateRequest(2 ** 32))


# -- client loop ----------------------------------------------------------------

def start_client():
    a, b = loopback_pair(timeout=30)
    t = threading.Thread(target=client_loop, args=(b,), daemon=True)
    t.start()
    return a, t


def init(formula="true", n=5, model=TWO_BOOL, score=DEFAULT_SCORE):
    return Init(model, formula, score, Fraction(1), (Fraction(1),), n, 0, 7)


def test_client_counts_successes():
    conn, t = start_client()
    conn.send(init())
    conn.send(RunToLevel(0, Fraction(1)))
    assert conn.recv() == LevelReport(0, 5)
    conn.send(Final(0, ""))
    assert isinstance(conn.recv(), Final)
    conn.close()
    t.join(5)


def test_client_without_successes_refuses_state_request():
    conn, t = start_client()
    conn.send(init("false"))
    conn.send(RunToLevel(0, Fraction(1)))
    assert conn.recv() == LevelReport(0, 0)
    conn.send(StateRequest(1))
    err = conn.recv()
    assert isinstance(err, Error) and err.code == ERR_NO_STATE
    t.join(5)


def test_client_reports_compile_errors():
    conn, t = start_client()
    conn.send(init("F<=3 nosuchvar"))
    err = conn.recv()
    assert isinstance(err, Error) and err.code == ERR_COMPILE
    t.join(5)


def test_client_rejects_messages_before_init_and_bad_states():
    conn, t = start_client()
    conn.send(RunToLevel(0, Fraction(1)))
    assert conn.recv().code == ERR_PROTOCOL
    t.join(5)
    conn, t = start_client()
    conn.send(init("F<=3 a", n=5))
    conn.send(RunToLevel(0, Fraction(1)))
    assert isinstance(conn.recv(), LevelReport)
    conn.send(ReplaceSimulation(0, b"\x01\x02"))
    reply = conn.recv()
    assert isinstance(reply, Error) and reply.code in (ERR_STATE, ERR_NO_STATE)
    t.join(5)


def test_client_rejects_garbage_frame():
    a, b = loopback_pair(timeout=30)
    t = threading.Thread(target=client_loop, args=(b,), daemon=True)
    t.start()
    a._send_frame(b"RSPL\x01\x00\x63\x00\x00\x00\x00")
    assert a.recv().code == ERR_PROTOCOL
    t.join(5)


# -- coordinator arithmetic with fake pools ---------------------------------------

class FakePool:
    def __init__(self, name, count, n):
        self.name, self.count, self.n = name, count, n
        self.requested = 0
        self.replaced = []

    def start(self, level):
        pass

    def collect(self):
        return self.count

    def pick_states(self, count):
        self.requested += count
        return [f"{self.name}{i}" for i in range(count)]

    def replace(self, ordinal, state):
        self.replaced.append((ordinal, state))


def test_two_clients_five_each():
    donors = Counter()
    for seed in range(2000):
        pools = [FakePool("A", 3, 5), FakePool("B", 2, 5)]
        gammas, extinct = run_levels(pools, [1, 2], 5, random.Random(seed))
        assert gammas == [Fraction(1, 2), Fraction(1, 2)] and extinct is None
        # only the first level triggers replacement: 2 slots on A, 3 on B
        assert [o for o, _ in pools[0].replaced] == [0, 1]
        assert [o for o, _ in pools[1].replaced] == [0, 1, 2]
        assert pools[0].requested + pools[1].requested == 5
        donors["A"] += pools[0].requested
        donors["B"] += pools[1].requested
    share = donors["A"] / (donors["A"] + donors["B"])
    assert abs(share - 0.6) < 0.02


def test_no_state_requested_from_empty_client():
    for seed in range(200):
        pools = [FakePool("A", 0, 4), FakePool("B", 1, 4)]
        run_levels(pools, [1, 2], 4, random.Random(seed))
        assert pools[0].requested == 0 and pools[1].requested == 7


def test_extinction_stops_coordination():
    pools = [FakePool("A", 0, 3), FakePool("B", 0, 3)]
    gammas, extinct = run_levels(pools, [1, 2, 3], 3, random.Random(0))
    assert gammas == [0] and extinct == 0
    assert pools[0].requested == pools[1].requested == 0


# -- end to end -----------------------------------------------------------------

def test_one_client_equals_local_run():
    for seed in (0, 1, 2):
        local = fixed_level(CHAIN_SRC, CHAIN.prop, CHAIN.score, [2, 3], 200, seed)
        remote = distributed_fixed_level(CHAIN_SRC, CHAIN.prop, CHAIN.score, [2, 3], 200, 1, seed)
        assert remote.gamma_i == local.gamma_i
        assert remote.steps == local.steps


def test_distributed_replay_is_deterministic():
    runs = [distributed_fixed_level(CHAIN_SRC, CHAIN.prop, CHAIN.score, [2, 3], 50, 4, seed=9)
            for _ in range(2)]
    assert runs[0].gamma_i == runs[1].gamma_i and runs[0].steps == runs[1].steps
    assert runs[0].n == 200 and runs[0].k == 4


class Recording:
    """Server-side connection that logs every message in both directions."""

    def __init__(self, conn):
        self.conn = conn
        self.log = []

    def send(self, msg):
        self.log.append(("out", msg))
        self.conn.send(msg)

    def recv(self):
        msg = self.conn.recv()
        self.log.append(("in", msg))
        return msg

    def close(self):
        self.conn.close()


def test_states_conserved_per_level():
    k, n = 3, 40
    spec = RunSpec(CHAIN_SRC, CHAIN.prop, CHAIN.score, 3, [1, 2, 3], n, 3)
    conns = []
    for _ in range(k):
        a, b = loopback_pair(timeout=30)
        threading.Thread(target=client_loop, args=(b,), daemon=True).start()
        conns.append(Recording(a))
    est = serve(spec, conns)
    size = make_problem(CHAIN_SRC, CHAIN.prop, CHAIN.score, 3).product_size
    for level in range(2):
        reports = replaced = sent = 0
        for c in conns:
            idx = -1
            for way, msg in c.log:
                if isinstance(msg, RunToLevel):
                    idx = msg.index
                if idx != level:
                    continue
                if isinstance(msg, LevelReport):
                    reports += msg.count
                elif isinstance(msg, StateTransfer):
                    sent += len(msg.states)
                    assert all(len(s) == size for s in msg.states)
                elif isinstance(msg, ReplaceSimulation):
                    replaced += 1
        assert reports == est.gamma_i[level] * k * n
        assert sent == replaced == k * n - reports
    for c in conns:
        c.close()


def test_serve_rejects_wrong_last_level():
    spec = RunSpec(CHAIN_SRC, CHAIN.prop, CHAIN.score, 3, [1, 2], 10, 0)
    with pytest.raises(ValueError):
        serve(spec, [])


def test_bad_score_fails_before_clients_work():
    with pytest.raises(ValueError, match="no field"):
        distributed_fixed_level(TWO_BOOL, "F<=3 a", "obs.nosuch", [1], 10, 2)


def test_client_failure_surfaces_as_error():
    a, b = loopback_pair(timeout=30)

    def refuse():
        b.recv()
        b.send(Error(ERR_COMPILE, "cannot compile"))

    threading.Thread(target=refuse, daemon=True).start()
    spec = RunSpec(CHAIN_SRC, CHAIN.prop, CHAIN.score, 3, [2, 3], 10, 0)
    with pytest.raises(DistributedError, match="error 3"):
        serve(spec, [a])


def test_socket_transport():
    spec = RunSpec(CHAIN_SRC, CHAIN.prop, CHAIN.score, 3, [2, 3], 50, 0)
    port = []
    ready = threading.Event()

    def on_ready(p):
        port.append(p)
        ready.set()

    out = []
    srv = threading.Thread(target=lambda: out.extend(
        serve_socket(spec, 0, 2, repeats=2, host="127.0.0.1", ready=on_ready, seeds=[4, 5])))
    srv.start()
    assert ready.wait(10)
    clients = [threading.Thread(target=client_loop, args=(connect(f"127.0.0.1:{port[0]}"),))
               for _ in range(2)]
    for c in clients:
        c.start()
    srv.join(60)
    for c in clients:
        c.join(10)
    assert len(out) == 2
    local = distributed_fixed_level(CHAIN_SRC, CHAIN.prop, CHAIN.score, [2, 3], 50, 2, seed=4)
    assert out[0].gamma_i == local.gamma_i


def test_instances():
    cfg = InstanceConfig(CHAIN_SRC, CHAIN.prop, CHAIN.score, 3, "fixed", (2, 3), n=200, seed=1)
    res = distribute_instances(cfg, 4)
    assert len(res.estimates) == 4 and res.std_error is not None
    assert res.mean == pytest.approx(sum(e.gamma_hat for e in res.estimates) / 4)
    assert len({e.seed for e in res.estimates}) == 4
    single = distribute_instances(cfg, 1)
    assert single.estimates[0].seed == 1 and single.std_error is None


def test_instances_all_extinct():
    cfg = InstanceConfig(TWO_BOOL, "F<=3 (a & b & false)", DEFAULT_SCORE, 1, "fixed", (1,), n=5)
    with pytest.raises(AllExtinct):
        distribute_instances(cfg, 2)
