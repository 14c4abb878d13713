import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mdiqds.errors import AuthenticationError, NoKeyError, ProtocolError, RemoteAbort, ThresholdChainError
from mdiqds.harness import adversary_hooks, run_protocol, simulate_forging, simulate_repudiation
from mdiqds.harness.adversary import best_repudiation_total, repudiation_success_exact
from mdiqds.harness.auth import P127, authenticate, check_mac, poly_mac
from mdiqds.harness.endpoint import Send
from mdiqds.harness.frame import HEADER, MAC_LEN, Frame, decode_frame, frame_size
from mdiqds.harness.messages import MsgType, Party, decode_payload, encode_payload
from mdiqds.harness.protocol import KeyMaterial, build_endpoints, simulate_links
from mdiqds.harness.transport import dump_transcript, load_transcript
from mdiqds.keys import KeyVault, random_key
from mdiqds.qds import repudiation_bound

SID = bytes(range(16))


# frames and payloads


def test_frame_layout():
    f = Frame(SID, 1, 2, int(MsgType.PE_TALLY), b"abc", b"\x07" * MAC_LEN)
    data = f.encode()
    assert HEADER.size == 28
    assert data[:4] == b"MDQS" and data[4] == 1 and data[5:21] == SID
    assert data[21:24] == bytes([1, 2, int(MsgType.PE_TALLY)])
    assert int.from_bytes(data[24:28], "big") == 3
    assert frame_size(data[:28]) == len(data)
    assert decode_frame(data) == f


@pytest.mark.parametrize("mutate", [lambda d: b"XXXX" + d[4:], lambda d: d[:4] + b"\x02" + d[5:], lambda d: d[:-1], lambda d: d[:10]])
def test_malformed_frames_rejected(mutate):
    data = Frame(SID, 1, 2, 3, b"abc").encode()
    with pytest.raises(ProtocolError):
        decode_frame(mutate(data))


@given(
    meta=st.dictionaries(st.text(min_size=1, max_size=5).filter(lambda s: s != "_arrays"), st.integers(-10**6, 10**6), max_size=4),
    bits=st.lists(st.integers(0, 1), max_size=70),
    ints=st.lists(st.integers(-2**62, 2**62), max_size=10),
)
def test_payload_round_trip(meta, bits, ints):
    data = encode_payload(meta, {"b": ("bits", np.array(bits, np.uint8)), "i": ("i64", np.array(ints, np.int64))})
    got_meta, arrays = decode_payload(data)
    assert got_meta == meta
    assert arrays["b"].tolist() == bits and arrays["i"].tolist() == ints


def test_truncated_payload_rejected():
    data = encode_payload({"x": 1}, {"i": ("i64", np.arange(5))})
    with pytest.raises(ProtocolError):
        decode_payload(data[:-3])
    with pytest.raises(ProtocolError):
        decode_payload(data + b"\x00")
    with pytest.raises(ProtocolError):
        decode_payload(b"\x00\x00\x00\x09{")


# MAC


def test_mac_detects_any_single_bit_flip():
    key = bytes(range(32))
    msg = b"some frame bytes" * 5
    tag = poly_mac(msg, key)
    for i in range(0, len(msg) * 8, 7):
        flipped = bytearray(msg)
        flipped[i // 8] ^= 1 << (i % 8)
        assert poly_mac(bytes(flipped), key) != tag


def test_mac_is_polynomial_plus_mask():
    r, s = 12345, 678
    key = r.to_bytes(16, "big") + s.to_bytes(16, "big")
    msg = b"\x01" * 20  # coefficients: len, 15 bytes, 5 bytes
    c1, c2 = int.from_bytes(msg[:15], "big"), int.from_bytes(msg[15:], "big")
    acc = ((20 * r + c1) * r + c2) % P127
    assert poly_mac(msg, key) == ((acc + s) % 2**128).to_bytes(16, "big")


def test_mac_keys_single_use():
    bits = random_key(256 * 3, 1)
    tx, rx = KeyVault(bits), KeyVault(bits.copy())
    f = Frame(SID, 0, 1, 1, b"payload")
    f = dataclasses.replace(f, mac=authenticate(f.signed_part(), tx))
    assert check_mac(f, rx)
    assert tx.consumed == rx.consumed == 256
    bad = dataclasses.replace(f, payload=b"paYload")
    assert not check_mac(bad, rx)


# transcript


def test_transcript_dump_round_trip():
    frames = [b"abc", b"", b"x" * 300]
    assert load_transcript(dump_transcript(frames)) == frames


# protocol runs


@pytest.fixture(scope="module")
def honest(smoke_cfg):
    return run_protocol(smoke_cfg)


def test_honest_run_accepts(honest, smoke_cfg):
    assert honest.accepted == (True, True)
    for p in (Party.BOB, Party.CHARLIE):
        out = honest.outcomes[p]
        assert out["message"] == smoke_cfg.message
        assert out["state"].otp_consumed == 6 * out["L"]
        assert out["L"] == 2 * (out["ell"] // 12)
    for st_ in honest.states.values():
        assert st_.phase == "done"


def test_recipients_agree_on_key_and_thresholds(honest):
    b, c = honest.outcomes[Party.BOB], honest.outcomes[Party.CHARLIE]
    assert b["ell"] == c["ell"] and b["thresholds"] == c["thresholds"]
    assert b["report"].to_text() == c["report"].to_text()


def test_rerun_is_byte_identical(honest, smoke_cfg):
    again = run_protocol(smoke_cfg)
    assert again.transcript_bytes() == honest.transcript_bytes()
    assert again.report.to_text() == honest.report.to_text()


def test_socket_transport_carries_the_same_frames(honest, smoke_cfg):
    sock = run_protocol(smoke_cfg, transport="socket", runs=honest.runs)
    assert sock.accepted == (True, True)
    for p in Party:
        mine = [f for f in honest.transcript if decode_frame(f).sender == p]
        ours = [f for f in sock.transcript if decode_frame(f).sender == p]
        assert mine == ours


def test_transcript_index(honest):
    idx = honest.index().splitlines()
    assert len(idx) == len(honest.transcript) + 1
    first = decode_frame(honest.transcript[0])
    assert idx[1].split() == ["0", Party(first.sender).name, Party(first.receiver).name,
                              MsgType(first.msg_type).name, str(len(honest.transcript[0]))]


def test_forging_recipient_is_rejected(honest, smoke_cfg):
    res = run_protocol(smoke_cfg, hooks=adversary_hooks("bob", "forging-recipient"), runs=honest.runs)
    charlie = res.outcomes[Party.CHARLIE]
    assert charlie["message"] != smoke_cfg.message
    assert not charlie["verify"].accept


def test_repudiating_signer_is_caught(honest, smoke_cfg):
    res = run_protocol(smoke_cfg, hooks=adversary_hooks("alice", "repudiating-signer"), runs=honest.runs)
    bob_ok, charlie_ok = res.accepted
    assert not (bob_ok and not charlie_ok)


def test_strategy_roles_checked():
    with pytest.raises(ValueError):
        adversary_hooks("charlie", "forging-recipient")
    with pytest.raises(ValueError):
        adversary_hooks("bob", "bribery")


def test_zero_pulses_abort_at_key_length(smoke_cfg):
    cfg = dataclasses.replace(smoke_cfg, pulses={"ab": 10**6, "ac": 10**6, "bc": 10**6})
    with pytest.raises(NoKeyError):
        run_protocol(cfg)


def test_threshold_chain_violation_is_a_clean_error(smoke_cfg, honest):
    ov = dataclasses.replace(smoke_cfg.overrides, E_bar=0.3)
    cfg = dataclasses.replace(smoke_cfg, overrides=ov)
    with pytest.raises(ThresholdChainError):
        run_protocol(cfg, runs=honest.runs)


def test_tampered_frame_aborts_everyone(smoke_cfg, honest):
    endpoints, _ = build_endpoints(smoke_cfg, honest.runs, KeyMaterial.generate(smoke_cfg))
    order = sorted(endpoints)
    for p in order:
        endpoints[p].start()
    sent = 0
    for _ in range(10_000):
        progressed = False
        for p in order:
            ep = endpoints[p]
            while not ep.done:
                if isinstance(ep.pending, Send):
                    to, data = ep.emit()
                    sent += 1
                    if sent == 20:
                        data = data[:30] + bytes([data[30] ^ 1]) + data[31:]
                    endpoints[to].push(p, data)
                    progressed = True
                elif ep.try_deliver():
                    progressed = True
                else:
                    break
        if not progressed:
            break
    errors = [ep.error for ep in endpoints.values()]
    assert sum(isinstance(e, AuthenticationError) for e in errors) == 1
    # every other party that was still running heard the abort
    assert all(isinstance(e, RemoteAbort) for e in errors if e is not None and not isinstance(e, AuthenticationError))
    assert any(isinstance(e, RemoteAbort) for e in errors)
    assert sum(entry[0] == "bad-mac" for ep in endpoints.values() for entry in ep.state.audit) == 1


# Monte Carlo helpers


def test_repudiation_mc_matches_exact():
    L, ca, cv = 10_000, 1000, 1100
    total = best_repudiation_total(L, ca, cv)
    exact = repudiation_success_exact(L, ca, cv, total)
    mc = simulate_repudiation(L, ca, cv, 200_000, seed=1, total=total)
    assert abs(mc - exact) < 5 * np.sqrt(exact * (1 - exact) / 200_000)
    assert exact <= repudiation_bound(2 * ca / L, 2 * cv / L, L, 0.0)


def test_forging_models():
    # the guess differs in exactly w = 151 positions; one extra flip reaches
    # distance 150 < 151 exactly when it lands on a true error: w.p. 151/5000
    cw = simulate_forging(10_000, 151, 0.0302, 200_000, seed=2, flips=[1])
    assert abs(cw - 151 / 5000) < 0.003
    iid = simulate_forging(10_000, 151, 0.0302, 50_000, seed=2, model="iid")
    assert iid > cw
    with pytest.raises(ValueError):
        simulate_forging(100, 5, 0.1, 10, 0, model="gaussian")
