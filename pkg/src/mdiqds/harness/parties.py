"""Party programs for Alice, Bob, Charlie and the relay.

Link roles: in A-E-B and A-E-C Alice is the first sender; in B-E-C Bob is.
The second sender of every link flips its bits after sifting, and Bob is
the reference side of the B-C reconciliation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..decoy_fk import KEY_SETTINGS, FiniteKeyBounds, SettingBounds, estimate_bounds, key_length
from ..errors import NoKeyError, ProtocolError, ReconciliationError
from ..keys import KeyVault
from ..kgp import selection_indices, serfling_bound
from ..qds import (
    RECIPIENTS,
    SymmetrizedHalf,
    SymmetrizedState,
    choose_half,
    choose_thresholds,
    decode_half,
    encode_half,
    estimate_p_E,
    otp_decrypt,
    otp_encrypt,
    otp_range,
    security_report,
    select_L,
    sign,
    verify,
    Signature,
)
from ..quantum_sim import BASES, INTENSITIES, MISMATCH, X, Z, TallyMatrix, pair_basis
from ..reconcile import ParityQuery, ParityResponder, cascade_corrector, pass_permutations, poly_hash_tag, tag_length, toeplitz_extract
from .endpoint import PartyState, Recv, Send
from .messages import MsgType, Party

_MU = INTENSITIES.index("mu")


@dataclass
class LinkView:
    """One sender's private record of a link plus its public statistics."""

    link: str
    first: bool
    peer: Party
    int_: np.ndarray
    basis: np.ndarray
    bits: np.ndarray
    sent: np.ndarray
    mismatch_sent: np.ndarray
    n_pulses: int


@dataclass
class Sifted:
    basis: np.ndarray
    int_a: np.ndarray
    int_b: np.ndarray
    bits: np.ndarray
    tally: TallyMatrix | None = None


@dataclass
class PartyContext:
    cfg: object
    state: PartyState
    views: dict
    seed: int
    preshared: KeyVault | None = None
    hooks: object = None
    public: dict = field(default_factory=dict)


def _rng(ctx: PartyContext, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(ctx.seed, spawn_key=(int(ctx.state.role), tag)))


# ---------------------------------------------------------------------------
# shared sub-programs


def recv_announce(view: LinkView):
    msg = yield Recv(Party.RELAY, (MsgType.ANNOUNCE,))
    if msg.meta["link"] != view.link or msg.meta["n_success"] != len(view.int_):
        raise ProtocolError(f"relay announcement does not match link {view.link}")


def sift(view: LinkView):
    labels = (view.int_.astype(np.uint8) * 2 + view.basis).astype(np.uint8)
    yield Send(view.peer, MsgType.SIFT_LABELS, {"link": view.link}, {"labels": ("u8", labels)})
    msg = yield Recv(view.peer, (MsgType.SIFT_LABELS,))
    other = msg.arrays["labels"]
    if len(other) != len(labels):
        raise ProtocolError("sifting label streams differ in length")
    mine = (view.int_, view.basis)
    theirs = (other // 2, other % 2)
    (ia, ba), (ib, bb) = (mine, theirs) if view.first else (theirs, mine)
    pb = pair_basis(ia, ba, ib, bb)
    keep = pb != MISMATCH
    bits = view.bits[keep]
    if not view.first:
        bits = (1 - bits).astype(np.uint8)
    sifted = Sifted(pb[keep].astype(np.uint8), ia[keep].astype(np.uint8), ib[keep].astype(np.uint8), bits)
    sifted.tally = _success_tally(view, sifted, ia[~keep], ib[~keep])
    return sifted


def _success_tally(view, sifted, mis_a, mis_b) -> TallyMatrix:
    tm = TallyMatrix(n_pulses=view.n_pulses)
    tm.sent = view.sent.copy()
    tm.mismatch_sent = view.mismatch_sent.copy()
    np.add.at(tm.success, (sifted.int_a, sifted.int_b, sifted.basis), 1)
    np.add.at(tm.mismatch_success, (mis_a, mis_b), 1)
    return tm


def estimate_link(view: LinkView, sifted: Sifted):
    """Exchange public tallies and X-basis data; fills the X error counts.

    Z-basis error counts are never disclosed here and stay zero in the
    returned tally; the estimators only read X errors.
    """
    xmask = sifted.basis == X
    if view.first:
        yield Send(view.peer, MsgType.PE_TALLY, {"link": view.link},
                   {"sent": ("i64", view.sent.ravel()), "mismatch": ("i64", view.mismatch_sent.ravel())})
        yield Send(view.peer, MsgType.PE_XDATA, {"link": view.link}, {"bits": ("bits", sifted.bits[xmask])})
        msg = yield Recv(view.peer, (MsgType.PE_XRESULT,))
        xerr = msg.arrays["errors"].reshape(3, 3)
    else:
        msg = yield Recv(view.peer, (MsgType.PE_TALLY,))
        if not (np.array_equal(msg.arrays["sent"], view.sent.ravel())
                and np.array_equal(msg.arrays["mismatch"], view.mismatch_sent.ravel())):
            raise ProtocolError(f"public tallies disagree on link {view.link}")
        msg = yield Recv(view.peer, (MsgType.PE_XDATA,))
        other = msg.arrays["bits"]
        if len(other) != int(xmask.sum()):
            raise ProtocolError("X-basis data has the wrong length")
        wrong = other != sifted.bits[xmask]
        xerr = np.zeros((3, 3), np.int64)
        np.add.at(xerr, (sifted.int_a[xmask][wrong], sifted.int_b[xmask][wrong]), 1)
        yield Send(view.peer, MsgType.PE_XRESULT, {"link": view.link}, {"errors": ("i64", xerr.ravel())})
    sifted.tally.errors[:, :, X] = xerr
    sifted.tally.check()
    return sifted.tally


def _signal_mask(s: Sifted) -> np.ndarray:
    return (s.basis == Z) & (s.int_a == _MU) & (s.int_b == _MU)


def kgp_p_E(ctx: PartyContext, s: Sifted) -> float:
    cfg = ctx.cfg
    if cfg.overrides.p_E is not None:
        return estimate_p_E(0, 0, 0, override=cfg.overrides.p_E)
    b = estimate_bounds(s.tally, cfg.budget, _link_src(ctx, s), settings=[("mu", "mu")], method=cfg.method, leak={("mu", "mu"): 0})
    sb = b[("mu", "mu")]
    return estimate_p_E(sb.n_1, sb.e_1, s.tally.get("mu", "mu", "Z")[1])


def _link_src(ctx, s):
    return ctx.cfg.sources["alice"]


def _setting_masks(s: Sifted):
    for b, c in KEY_SETTINGS:
        yield (b, c), (s.basis == Z) & (s.int_a == INTENSITIES.index(b)) & (s.int_b == INTENSITIES.index(c))


def _key_length_or_abort(ctx, tally, src, leak: dict):
    cfg = ctx.cfg
    bounds = estimate_bounds(tally, cfg.budget, src, method=cfg.method, leak=leak)
    kl = key_length(bounds, cfg.budget)
    if not kl.has_key:
        raise NoKeyError(f"no secret key: ell = {kl.ell}")
    return bounds, kl


# ---------------------------------------------------------------------------
# B-C key distillation


def qkd_reference(ctx: PartyContext, s: Sifted):
    """Bob's side: answer parity queries, send verification tags, distil the key."""
    cfg = ctx.cfg
    src = cfg.sources["bob"]
    _key_length_or_abort(ctx, s.tally, src, {k: 0 for k in KEY_SETTINGS})
    keys, leak = {}, {}
    for key, mask in _setting_masks(s):
        bits = s.bits[mask]
        keys[key], leak[key] = bits, 0
        seed = ctx.preshared.take_int(64, f"cascade {key}")
        if len(bits) == 0:
            continue
        responder = ParityResponder(bits, pass_permutations(len(bits), seed, cfg.ec_passes))
        while True:
            msg = yield Recv(Party.CHARLIE, (MsgType.EC_QUERY,))
            if msg.meta.get("done"):
                break
            q = ParityQuery(msg.meta["pass"], msg.arrays["starts"], msg.arrays["ends"])
            reply = responder(q)
            leak[key] += len(reply)
            yield Send(Party.CHARLIE, MsgType.EC_REPLY, {"setting": list(key)}, {"parities": ("bits", reply)})
    hseed = ctx.preshared.take_int(64, "verification hash")
    t = tag_length(cfg.budget.eps_cor)
    tags = [poly_hash_tag(keys[k], t, hseed) for k in KEY_SETTINGS]
    yield Send(Party.CHARLIE, MsgType.EC_VERIFY, {"tags": tags, "bits": t})
    msg = yield Recv(Party.CHARLIE, (MsgType.EC_CONFIRM,))
    if not all(msg.meta["ok"]):
        raise ReconciliationError("error verification failed")
    return _distil(ctx, s, src, keys, leak)


def qkd_corrector(ctx: PartyContext, s: Sifted):
    """Charlie's side: run Cascade against Bob's parities, check tags, distil the key."""
    cfg = ctx.cfg
    src = cfg.sources["charlie"]
    _key_length_or_abort(ctx, s.tally, src, {k: 0 for k in KEY_SETTINGS})
    keys, leak = {}, {}
    for key, mask in _setting_masks(s):
        bits = s.bits[mask]
        keys[key], leak[key] = bits, 0
        seed = ctx.preshared.take_int(64, f"cascade {key}")
        if len(bits) == 0:
            continue
        gen = cascade_corrector(bits, cfg.ec_qber, seed, cfg.ec_passes)
        try:
            q = next(gen)
            while True:
                yield Send(Party.BOB, MsgType.EC_QUERY, {"setting": list(key), "pass": q.pass_index},
                           {"starts": ("i64", q.starts), "ends": ("i64", q.ends)})
                msg = yield Recv(Party.BOB, (MsgType.EC_REPLY,))
                q = gen.send(msg.arrays["parities"])
        except StopIteration as stop:
            keys[key], leak[key] = stop.value[0], stop.value[1]
        yield Send(Party.BOB, MsgType.EC_QUERY, {"setting": list(key), "done": True})
    msg = yield Recv(Party.BOB, (MsgType.EC_VERIFY,))
    hseed = ctx.preshared.take_int(64, "verification hash")
    t = tag_length(cfg.budget.eps_cor)
    ok = [poly_hash_tag(keys[k], t, hseed) == tag for k, tag in zip(KEY_SETTINGS, msg.meta["tags"])]
    yield Send(Party.BOB, MsgType.EC_CONFIRM, {"ok": ok})
    if not all(ok):
        raise ReconciliationError("error verification failed")
    return _distil(ctx, s, src, keys, leak)


def _distil(ctx, s, src, keys, leak):
    bounds, kl = _key_length_or_abort(ctx, s.tally, src, {k: float(v) for k, v in leak.items()})
    joined = np.concatenate([keys[k] for k in KEY_SETTINGS])
    seed = ctx.preshared.take(len(joined) + kl.ell - 1, "toeplitz seed")
    final = toeplitz_extract(joined, kl.ell, seed)
    return {"bounds": bounds, "key_length": kl, "leak": leak, "otp": KeyVault(final, "otp"), "sifted_bits": len(joined)}


# ---------------------------------------------------------------------------
# programs


def alice_program(ctx: PartyContext):
    cfg = ctx.cfg
    out = {}
    for link in ("ab", "ac"):
        yield from recv_announce(ctx.views[link])
    sifted = {}
    for link in ("ab", "ac"):
        view = ctx.views[link]
        sifted[link] = yield from sift(view)
        yield from estimate_link(view, sifted[link])
    strings = {}
    for link, peer in (("ab", Party.BOB), ("ac", Party.CHARLIE)):
        msg = yield Recv(peer, (MsgType.KGP_PARAMS,))
        L, seed, min_test = msg.meta["L"], msg.meta["seed"], msg.meta["min_test"]
        raw = sifted[link].bits[_signal_mask(sifted[link])]
        sel = selection_indices(len(raw), L, seed, min_test)
        strings[peer] = [raw[keep] for keep, _ in sel]
        test = np.concatenate([raw[t] for _, t in sel])
        yield Send(peer, MsgType.KGP_ANNOUNCE, {"L": L}, {"test": ("bits", test)})
    msg = yield Recv(Party.BOB, (MsgType.PE_SUMMARY,))
    ctx.public.update(msg.meta)
    ctx.state.enter("symmetrization")
    ctx.state.enter("messaging")
    m = cfg.message
    sig = sign(m, strings[Party.BOB][m], strings[Party.CHARLIE][m])
    if ctx.hooks is not None:
        sig = ctx.hooks.signer(sig, ctx.public, _rng(ctx, 7))
    yield Send(Party.BOB, MsgType.SIGNED, {"m": sig.m},
               {"sig_bob": ("bits", sig.sig_bob), "sig_charlie": ("bits", sig.sig_charlie)})
    ctx.state.enter("done")
    out["signature"] = sig
    return out


def recipient_program(ctx: PartyContext):
    cfg = ctx.cfg
    me = ctx.state.role
    name = "bob" if me == Party.BOB else "charlie"
    peer = Party.CHARLIE if me == Party.BOB else Party.BOB
    kgp_link = "ab" if me == Party.BOB else "ac"
    for link in (kgp_link, "bc"):
        yield from recv_announce(ctx.views[link])
    kgp_s = yield from sift(ctx.views[kgp_link])
    yield from estimate_link(ctx.views[kgp_link], kgp_s)
    p_E = kgp_p_E(ctx, kgp_s)
    qkd_s = yield from sift(ctx.views["bc"])
    yield from estimate_link(ctx.views["bc"], qkd_s)
    if me == Party.BOB:
        qkd = yield from qkd_reference(ctx, qkd_s)
    else:
        qkd = yield from qkd_corrector(ctx, qkd_s)
    ell = qkd["key_length"].ell
    L = select_L(ell)

    # KGP with Alice
    raw = kgp_s.bits[_signal_mask(kgp_s)]
    sel_seed = int(_rng(ctx, 1).integers(0, 2**62))
    sel = selection_indices(len(raw), L, sel_seed, cfg.min_test)
    yield Send(Party.ALICE, MsgType.KGP_PARAMS, {"L": L, "seed": sel_seed, "min_test": cfg.min_test})
    msg = yield Recv(Party.ALICE, (MsgType.KGP_ANNOUNCE,))
    test = msg.arrays["test"]
    n0 = len(sel[0][1])
    K, bounds = [], []
    for m, (keep, tidx) in enumerate(sel):
        got = test[:n0] if m == 0 else test[n0:]
        if len(got) != len(tidx):
            raise ProtocolError("announced test bits have the wrong length")
        errs = int((got != raw[tidx]).sum())
        bounds.append(serfling_bound(errs, len(tidx), L // 2, cfg.eps_pe))
        K.append(raw[keep])

    # agree on thresholds with the other recipient
    yield Send(peer, MsgType.PE_SUMMARY, {"E_bound": bounds, "p_E": p_E, "L": L})
    msg = yield Recv(peer, (MsgType.PE_SUMMARY,))
    if msg.meta["L"] != L:
        raise ProtocolError("recipients disagree on L")
    E_bar = max(bounds + list(msg.meta["E_bound"]))
    if cfg.overrides.E_bar is not None:
        E_bar = cfg.overrides.E_bar
    p_E_all = min(p_E, msg.meta["p_E"])
    th = choose_thresholds(E_bar, p_E_all, L, cfg.threshold_policy, cfg.delta)
    report = security_report(th, ell, cfg.eps_qkd, cfg.forging, cfg.eps_pe, cfg.rob_scope)
    if me == Party.BOB:
        yield Send(Party.ALICE, MsgType.PE_SUMMARY, {"L": L, "count_a": th.count_a, "count_v": th.count_v})

    # symmetrization
    ctx.state.enter("symmetrization")
    otp = qkd["otp"]
    sent_idx = {}
    for m in range(2):
        idx = choose_half(L, int(_rng(ctx, 2).integers(0, 2**62)) + m, name, m)
        sent_idx[m] = idx
        start, end = otp_range(name, m, L)
        cipher = otp_encrypt(encode_half(K[m], idx), otp, start, end, f"sym {name} m={m}")
        yield Send(peer, MsgType.SYM_DATA, {"m": m}, {"cipher": ("bits", cipher)})
    halves = {}
    peer_name = RECIPIENTS[1 - RECIPIENTS.index(name)]
    for _ in range(2):
        msg = yield Recv(peer, (MsgType.SYM_DATA,))
        m = msg.meta["m"]
        start, end = otp_range(peer_name, m, L)
        f_idx, f_bits = decode_half(otp_decrypt(msg.arrays["cipher"], otp, start, end, f"sym {peer_name} m={m}"), L)
        keep = np.setdiff1d(np.arange(L), sent_idx[m])
        halves[m] = SymmetrizedHalf(keep, K[m][keep], sent_idx[m], f_idx, f_bits)
        halves[m].check(L)
    state = SymmetrizedState(L, halves, otp.consumed)

    # messaging
    ctx.state.enter("messaging")
    if me == Party.BOB:
        msg = yield Recv(Party.ALICE, (MsgType.SIGNED,))
        sig = Signature(msg.meta["m"], msg.arrays["sig_bob"], msg.arrays["sig_charlie"])
        result = verify(sig, state, "bob", th.count_a)
        fwd = sig
        if ctx.hooks is not None:
            fwd = ctx.hooks.forwarder(sig, state, K, _rng(ctx, 8))
        yield Send(Party.CHARLIE, MsgType.FORWARD, {"m": fwd.m, "accepted": result.accept},
                   {"sig_bob": ("bits", fwd.sig_bob), "sig_charlie": ("bits", fwd.sig_charlie)})
    else:
        msg = yield Recv(Party.BOB, (MsgType.FORWARD,))
        sig = Signature(msg.meta["m"], msg.arrays["sig_bob"], msg.arrays["sig_charlie"])
        result = verify(sig, state, "charlie", th.count_v)
        ctx.public["bob_accepted"] = bool(msg.meta["accepted"])
    ctx.state.enter("done")
    return {
        "verify": result, "message": sig.m, "report": report, "thresholds": th, "L": L, "ell": ell,
        "qkd": qkd, "E_bounds": bounds, "p_E": p_E, "state": state, "K": K,
    }


def relay_program(ctx: PartyContext):
    for link, (a, b) in (("ab", (Party.ALICE, Party.BOB)), ("ac", (Party.ALICE, Party.CHARLIE)),
                         ("bc", (Party.BOB, Party.CHARLIE))):
        n_success, n_pulses = ctx.views[link]
        for to in (a, b):
            yield Send(to, MsgType.ANNOUNCE, {"link": link, "n_success": n_success, "n_pulses": n_pulses})
    ctx.state.enter("done")
    return {}
