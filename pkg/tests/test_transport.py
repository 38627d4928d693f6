import json
import socket
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsim.algorithms import ProtocolError
from fedsim.model import ClientUpdate
from fedsim.transport import (DecodeError, InProcessTransport, MsgType, RoundCollector, TcpTransport,
                              TransportError, WireMessage, decode, encode, make_transport, update_message)

DIM = 10

messages = st.builds(
    WireMessage,
    st.sampled_from(list(MsgType)),
    st.integers(0, 10**6),
    st.integers(-5, 10**4),
    st.one_of(st.just(()), st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=DIM + 1,
                                    max_size=DIM + 1).map(tuple)),
    st.one_of(st.none(), st.integers(1, 10**6)),
)


def updates(n, rng):
    return [ClientUpdate(i, rng.normal(size=DIM + 1), 10 + i) for i in range(n)]


class TestCodec:
    def test_hello_bytes(self):
        assert encode(WireMessage(MsgType.HELLO, 0, 2)) == b'{"type":"HELLO","round":0,"client_id":2,"payload":[]}\n'

    def test_half_round_trips(self):
        msg = WireMessage(MsgType.UPDATE, 1, 0, (0.5,))
        assert decode(encode(msg)).payload == (0.5,)

    @settings(max_examples=1000)
    @given(messages)
    def test_round_trip(self, msg):
        line = encode(msg)
        assert line.endswith(b"\n") and line.count(b"\n") == 1
        back = decode(line, DIM)
        assert back == msg
        assert all(a.hex() == b.hex() for a, b in zip(back.payload, msg.payload))

    def test_garbage(self):
        with pytest.raises(DecodeError) as err:
            decode(b"\x00\xffnot json\n")
        assert err.value.field == "line"

    def test_unknown_type(self):
        with pytest.raises(DecodeError) as err:
            decode(b'{"type":"PING","round":0,"client_id":0,"payload":[]}\n')
        assert err.value.field == "type"

    def test_payload_length(self):
        line = json.dumps({"type": "UPDATE", "round": 0, "client_id": 0, "payload": [1.0, 2.0, 3.0]}).encode()
        assert decode(line).payload == (1.0, 2.0, 3.0)
        with pytest.raises(DecodeError) as err:
            decode(line, DIM)
        assert err.value.field == "payload"
        assert "3" in str(err.value)

    @pytest.mark.parametrize("field,value", [("round", -1), ("round", 1.5), ("client_id", "0"), ("payload", "x"),
                                             ("payload", [1, "a"]), ("train_size", None)])
    def test_bad_fields(self, field, value):
        obj = {"type": "HELLO", "round": 0, "client_id": 0, "payload": []}
        obj[field] = value
        with pytest.raises(DecodeError) as err:
            decode(json.dumps(obj).encode())
        assert err.value.field == field

    def test_missing_field(self):
        with pytest.raises(DecodeError) as err:
            decode(b'{"type":"HELLO","client_id":0,"payload":[]}')
        assert err.value.field == "round"

    def test_not_an_object(self):
        with pytest.raises(DecodeError):
            decode(b"[1,2]\n")

    def test_nonfinite_rejected_on_encode(self):
        with pytest.raises(ValueError):
            encode(WireMessage(MsgType.UPDATE, 0, 0, (float("nan"),)))


class TestCollector:
    def test_reverse_arrival(self, rng):
        ups = updates(4, rng)
        col = RoundCollector(4, 3, [u.train_size for u in ups])
        for u in reversed(ups):
            col.add(update_message(u, 3))
        assert col.updates() == ups

    def test_duplicate(self, rng):
        col = RoundCollector(2, 0, [1, 1])
        u = updates(1, rng)[0]
        col.add(update_message(u, 0))
        with pytest.raises(ProtocolError, match="duplicate"):
            col.add(update_message(u, 0))

    def test_wrong_round_unknown_client_missing(self, rng):
        u = updates(1, rng)[0]
        col = RoundCollector(2, 5, [1, 1])
        with pytest.raises(ProtocolError):
            col.add(update_message(u, 4))
        with pytest.raises(ProtocolError):
            col.add(WireMessage(MsgType.UPDATE, 5, 7, tuple(u.delta)))
        with pytest.raises(ProtocolError):
            col.add(WireMessage(MsgType.HELLO, 5, 0))
        with pytest.raises(ProtocolError, match="missing"):
            col.updates()


class TestInProcess:
    def test_single_client(self, rng):
        t = InProcessTransport(1, DIM)
        assert np.array_equal(t.start(np.zeros(DIM + 1), [5])[0], np.zeros(DIM + 1))
        ups = updates(1, rng)
        assert t.exchange_round(0, ups) == [ClientUpdate(0, ups[0].delta, 5)]

    def test_permuted_input(self, rng):
        t = InProcessTransport(3, DIM)
        t.start(np.zeros(DIM + 1), [10, 11, 12])
        ups = updates(3, rng)
        assert t.exchange_round(0, [ups[2], ups[0], ups[1]]) == ups

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_transport("udp", 2, DIM)


@pytest.fixture
def tcp():
    t = TcpTransport(3, DIM)
    yield t
    t.close()


class TestTcp:
    def test_handshake(self, tcp, rng):
        init = rng.normal(size=DIM + 1)
        got = tcp.start(init, [10, 11, 12])
        assert all(np.array_equal(g, init) for g in got)
        assert tcp.server.train_sizes == [10, 11, 12]

    def test_reverse_arrival_is_normalised(self, tcp, rng):
        tcp.start(np.zeros(DIM + 1), [10, 11, 12])
        ups = updates(3, rng)
        for k, cid in enumerate([2, 1, 0]):
            tcp.clients[cid].send_update(0, ups[cid].delta)
            deadline = time.monotonic() + 10
            while tcp.server._inbox.qsize() < k + 1 and time.monotonic() < deadline:
                time.sleep(0.001)
        assert tcp.server.collect(0) == ups
        assert [e[2] for e in tcp.trace.events if e[0] == "recv"] == [2, 1, 0]

    def test_send_order_does_not_change_result(self, tcp, rng):
        tcp.start(np.zeros(DIM + 1), [10, 11, 12])
        tcp.send_order = [2, 0, 1]
        ups = updates(3, rng)
        assert tcp.exchange_round(0, ups) == ups

    def test_bitwise_relay_and_broadcast(self, tcp, rng):
        tcp.start(np.zeros(DIM + 1), [10, 11, 12])
        ups = updates(3, rng)
        local = InProcessTransport(3, DIM)
        local.start(np.zeros(DIM + 1), [10, 11, 12])
        assert tcp.exchange_round(0, ups) == local.exchange_round(0, ups)
        params = rng.normal(size=DIM + 1) * 1e-7
        assert np.array_equal(tcp.broadcast(1, params), params)

    def test_barrier(self, tcp, rng):
        tcp.start(np.zeros(DIM + 1), [10, 11, 12])
        for t in range(3):
            tcp.exchange_round(t, updates(3, rng))
        events = tcp.trace.events
        for t in range(3):
            recv = [i for i, e in enumerate(events) if e[0] == "recv" and e[1] == t]
            deliver = [i for i, e in enumerate(events) if e[0] == "deliver" and e[1] == t]
            assert len(recv) == 3 and len(deliver) == 3
            assert max(recv) < min(deliver)

    def test_duplicate_update(self, tcp, rng):
        tcp.start(np.zeros(DIM + 1), [10, 11, 12])
        u = updates(1, rng)[0]
        tcp.clients[0].send_update(0, u.delta)
        tcp.clients[0].send_update(0, u.delta)
        with pytest.raises(ProtocolError, match="duplicate"):
            tcp.server.collect(0)

    def test_connection_loss_names_client(self, tcp, rng):
        tcp.start(np.zeros(DIM + 1), [10, 11, 12])
        ups = updates(3, rng)
        tcp.clients[0].send_update(0, ups[0].delta)
        tcp.clients[1].chan.sock.shutdown(socket.SHUT_RDWR)
        with pytest.raises(TransportError) as err:
            tcp.server.collect(0)
        assert err.value.client_id == 1

    def test_bad_hello(self):
        t = TcpTransport(1, DIM)
        host, port = t.server.address
        sock = socket.create_connection((host, port))
        sock.sendall(encode(WireMessage(MsgType.UPDATE, 0, 0)))
        with pytest.raises(ProtocolError):
            t.server.accept_clients(np.zeros(DIM + 1))
        sock.close()
        t.server.shutdown()
