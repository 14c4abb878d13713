"""Signature stage: symmetrization, sign/verify and the security parameters.

Mismatch budgets are integers; the rates ``s_a`` and ``s_v`` are derived
from them as ``2 count / L``.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .decoy_fk import binary_entropy, inverse_binary_entropy
from .errors import NoKeyError, NoSecurityError, ThresholdChainError
from .keys import KeyVault

RECIPIENTS = ("bob", "charlie")


def select_L(ell: int) -> int:
    """Largest even ``L`` with ``6 L <= ell``."""
    if ell < 12:
        raise NoKeyError(f"key length {ell} cannot pay for a signature (need >= 12)")
    return 2 * (int(ell) // 12)


# ---------------------------------------------------------------------------
# thresholds


@dataclass(frozen=True)
class Thresholds:
    count_a: int
    count_v: int
    L: int
    p_E: float
    E_bar: float

    @property
    def s_a(self) -> float:
        return 2 * self.count_a / self.L

    @property
    def s_v(self) -> float:
        return 2 * self.count_v / self.L

    def check(self) -> None:
        half = self.L // 2
        if not self.E_bar < self.s_a < self.s_v < self.p_E:
            raise ThresholdChainError(
                f"need E_bar < s_a < s_v < p_E, got {self.E_bar:.6g}, {self.s_a:.6g}, {self.s_v:.6g}, {self.p_E:.6g}"
            )
        if not 0 < self.count_a < self.count_v < half:
            raise ThresholdChainError("mismatch budgets must satisfy 0 < count_a < count_v < L/2")
        if not self.s_v < 0.5:
            raise ThresholdChainError("s_v must be below 1/2")


def choose_thresholds(
    E_bar: float, p_E: float, L: int, policy: str = "offset", delta: float = 0.0002
) -> Thresholds:
    """Pick integer budgets between ``E_bar`` and ``p_E``.

    ``offset``: ``s_a = E_bar + delta``, ``s_v = p_E - delta``.
    ``thirds``: split ``[E_bar, p_E]`` into three equal gaps.
    """
    if not E_bar < p_E:
        raise ThresholdChainError(f"E_bar = {E_bar:.6g} is not below p_E = {p_E:.6g}")
    if policy == "offset":
        s_a, s_v = E_bar + delta, p_E - delta
    elif policy == "thirds":
        gap = (p_E - E_bar) / 3
        s_a, s_v = E_bar + gap, p_E - gap
    else:
        raise ValueError(f"unknown threshold policy {policy!r}")
    half = L // 2
    th = Thresholds(round(s_a * half), round(s_v * half), L, p_E, E_bar)
    th.check()
    return th


# ---------------------------------------------------------------------------
# security parameters


def repudiation_bound(s_a: float, s_v: float, L: int, eps_qkd: float) -> float:
    return 2 * math.exp(-((s_v - s_a) ** 2) * L / 4) + eps_qkd


def forging_exponent_bits(p_E: float, s_v: float, L: int) -> float:
    gap = binary_entropy(p_E) - binary_entropy(s_v)
    if gap <= 0:
        raise NoSecurityError("h(p_E) <= h(s_v): no entropy gap for forging security")
    return L / 2 * gap


def forging_bound(p_E: float, s_v: float, L: int, f: float, eps: float, eps_pe: float, eps_est: float) -> float:
    """``(1/f)(2^-x + eps) + f + eps_PE + eps_est`` with ``x = (L/2)(h(p_E) - h(s_v))``."""
    if not 0.0 < f <= 1.0:
        raise ValueError("f must lie in (0, 1]")
    x = forging_exponent_bits(p_E, s_v, L)
    return (2.0**-x + eps) / f + f + eps_pe + eps_est


def robustness_bound(
    E_bar: float, s_a: float, L: int, eps_pe: float, n_parts: int = 2, scope: str = "part"
) -> float:
    """Probability that an honest signature is rejected by the first recipient.

    ``part``: ``E_bar`` already bounds each ``L/2`` part (it was computed
    with ``kept_size = L/2``), so an honest part exceeds ``s_a`` only if
    its estimate failed: ``n_parts * eps_PE``.
    ``tail``: additionally charges a Hoeffding tail at gap ``s_a - E_bar``
    over ``L/2`` samples per part, for callers whose ``E_bar`` bounds a
    whole string rather than each part.
    Returns 1 when ``E_bar >= s_a``.
    """
    if E_bar >= s_a:
        return 1.0
    if scope == "part":
        return min(n_parts * eps_pe, 1.0)
    if scope == "tail":
        tail = math.exp(-2 * (L / 2) * (s_a - E_bar) ** 2)
        return min(n_parts * (tail + eps_pe), 1.0)
    raise ValueError(f"unknown robustness scope {scope!r}")


def estimate_p_E(n_1: float, e_1: float, n_success: float, override: float | None = None) -> float:
    """Eve's error rate on a kept part from the single-photon min-entropy.

    The min-entropy of ``L/2`` kept positions is ``(L/2) (n_1/n) (1 - h(e_1))``
    (the single-photon share restricted proportionally), so ``h(p_E) =
    (n_1/n) (1 - h(e_1))``.
    """
    if override is not None:
        if not 0.0 < override <= 0.5:
            raise ValueError("p_E override must lie in (0, 1/2]")
        return float(override)
    if n_success <= 0:
        raise NoSecurityError("no signal-intensity Z events")
    rate = min(n_1 / n_success, 1.0) * (1 - binary_entropy(min(e_1, 0.5)))
    if rate <= 0:
        raise NoSecurityError("single-photon min-entropy bound is zero")
    return inverse_binary_entropy(min(rate, 1.0))


@dataclass(frozen=True)
class ForgingParams:
    """Split of the non-exponential forging terms; defaults are calibrated, not derived."""

    f: float = 3e-8
    eps: float = 9e-16
    eps_pe: float = 1e-8
    eps_est: float = 2.76e-8
    calibrated: bool = True

    @classmethod
    def shipped(cls) -> "ForgingParams":
        cp = configparser.ConfigParser()
        cp.read_string(resources.files("mdiqds.data").joinpath("security_defaults.ini").read_text())
        s = cp["forging"]
        return cls(s.getfloat("f"), s.getfloat("eps"), s.getfloat("eps_pe"), s.getfloat("eps_est"),
                   s.getboolean("calibrated"))


@dataclass
class SecurityReport:
    thresholds: Thresholds
    eps_rob: float
    eps_rep: float
    eps_for: float
    ell: int
    eps_qkd: float
    forging: ForgingParams
    forging_exponent: float
    terms: dict = field(default_factory=dict)

    @property
    def secure(self) -> bool:
        return max(self.eps_rob, self.eps_rep, self.eps_for) < 1.0

    def to_text(self) -> str:
        th = self.thresholds
        head = ["E_bar", "s_a", "s_aL/2", "s_v", "s_vL/2", "p_E", "eps_rob", "eps_rep", "eps_for"]
        vals = [
            f"{100 * th.E_bar:.2f}%", f"{100 * th.s_a:.2f}%", str(th.count_a),
            f"{100 * th.s_v:.2f}%", str(th.count_v), f"{100 * th.p_E:.2f}%",
            _sci(self.eps_rob), _sci(self.eps_rep), _sci(self.eps_for),
        ]
        widths = [max(len(h), len(v)) + 2 for h, v in zip(head, vals)]
        lines = [
            "".join(h.rjust(w) for h, w in zip(head, widths)),
            "".join(v.rjust(w) for v, w in zip(vals, widths)),
            f"ell = {self.ell}  L = {th.L}  eps_QKD = {_sci(self.eps_qkd)}",
            f"forging exponent term 2^-{self.forging_exponent:.1f}",
        ]
        fp = self.forging
        tag = "calibrated" if fp.calibrated else "configured"
        lines.append(
            f"eps_for split ({tag}): f = {_sci(fp.f)}  eps = {_sci(fp.eps)}  "
            f"eps_PE = {_sci(fp.eps_pe)}  eps_est = {_sci(fp.eps_est)}"
        )
        if not self.secure:
            lines.append("WARNING: at least one security parameter is vacuous (>= 1)")
        return "\n".join(lines) + "\n"


def _sci(x: float) -> str:
    return f"{x:.2e}"


def security_report(
    th: Thresholds, ell: int, eps_qkd: float, forging: ForgingParams | None = None,
    eps_pe_rob: float | None = None, rob_scope: str = "part",
) -> SecurityReport:
    forging = forging or ForgingParams.shipped()
    eps_pe_rob = forging.eps_pe if eps_pe_rob is None else eps_pe_rob
    x = forging_exponent_bits(th.p_E, th.s_v, th.L)
    eps_for = forging_bound(th.p_E, th.s_v, th.L, forging.f, forging.eps, forging.eps_pe, forging.eps_est)
    return SecurityReport(
        thresholds=th,
        eps_rob=robustness_bound(th.E_bar, th.s_a, th.L, eps_pe_rob, scope=rob_scope),
        eps_rep=repudiation_bound(th.s_a, th.s_v, th.L, eps_qkd),
        eps_for=eps_for,
        ell=ell,
        eps_qkd=eps_qkd,
        forging=forging,
        forging_exponent=x,
        terms={"rep_tail": 2 * math.exp(-((th.s_v - th.s_a) ** 2) * th.L / 4), "forge_exp": 2.0**-x},
    )


# ---------------------------------------------------------------------------
# symmetrization


@dataclass
class SymmetrizedHalf:
    """One recipient's view of string ``m`` after the exchange."""

    kept_idx: np.ndarray
    kept_bits: np.ndarray
    sent_idx: np.ndarray
    forwarded_idx: np.ndarray
    forwarded_bits: np.ndarray

    def check(self, L: int) -> None:
        both = np.concatenate([self.kept_idx, self.sent_idx])
        if len(both) != L or not np.array_equal(np.sort(both), np.arange(L)):
            raise ValueError("kept and sent positions must partition 0..L-1")
        if len(self.forwarded_idx) != L // 2 or len(self.forwarded_bits) != L // 2:
            raise ValueError("forwarded half must hold L/2 bits")


@dataclass
class SymmetrizedState:
    L: int
    halves: dict
    otp_consumed: int = 0


def otp_range(sender: str, m: int, L: int) -> tuple[int, int]:
    """Fixed OTP slot per (sender, m): Bob K0, Bob K1, Charlie K0, Charlie K1."""
    slot = RECIPIENTS.index(sender) * 2 + m
    width = 3 * L // 2
    return slot * width, (slot + 1) * width


def choose_half(L: int, seed: int, owner: str, m: int) -> np.ndarray:
    """Sorted positions an owner sends to its peer for string ``m``."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(RECIPIENTS.index(owner), m, 0x5A)))
    return np.sort(rng.choice(L, L // 2, replace=False))


def encode_half(K: np.ndarray, send_idx: np.ndarray) -> np.ndarray:
    """Plaintext of one forwarding message: ``L/2`` bits then the ``L``-bit indicator."""
    L = len(K)
    indicator = np.zeros(L, np.uint8)
    indicator[send_idx] = 1
    return np.concatenate([K[send_idx], indicator])


def decode_half(plain: np.ndarray, L: int) -> tuple[np.ndarray, np.ndarray]:
    if len(plain) != 3 * L // 2:
        raise ValueError(f"forwarding message must carry {3 * L // 2} bits, got {len(plain)}")
    bits, indicator = plain[: L // 2], plain[L // 2 :]
    idx = np.flatnonzero(indicator)
    if len(idx) != L // 2:
        raise ValueError("position indicator must have weight L/2")
    return idx, bits


def otp_encrypt(plain: np.ndarray, vault: KeyVault, start: int, end: int, purpose: str) -> np.ndarray:
    pad = vault.consume(start, end, purpose)
    if len(pad) != len(plain):
        raise ValueError("one-time pad and plaintext lengths differ")
    return plain ^ pad


otp_decrypt = otp_encrypt


def symmetrize(K_bob: tuple, K_charlie: tuple, otp_bob: KeyVault, otp_charlie: KeyVault, seed: int) -> dict:
    """Run the whole exchange locally; returns a :class:`SymmetrizedState` per recipient.

    Each vault is one side's copy of the shared key; both copies end up
    with ``6 L`` bits consumed.
    """
    L = len(K_bob[0])
    strings = {"bob": K_bob, "charlie": K_charlie}
    vaults = {"bob": otp_bob, "charlie": otp_charlie}
    wire = {}
    sent = {}
    for owner in RECIPIENTS:
        for m in range(2):
            idx = choose_half(L, seed, owner, m)
            sent[owner, m] = idx
            start, end = otp_range(owner, m, L)
            wire[owner, m] = otp_encrypt(encode_half(strings[owner][m], idx), vaults[owner], start, end, f"sym {owner} m={m}")
    states = {}
    for owner in RECIPIENTS:
        peer = RECIPIENTS[1 - RECIPIENTS.index(owner)]
        halves = {}
        for m in range(2):
            start, end = otp_range(peer, m, L)
            plain = otp_decrypt(wire[peer, m], vaults[owner], start, end, f"sym {peer} m={m}")
            f_idx, f_bits = decode_half(plain, L)
            keep = np.setdiff1d(np.arange(L), sent[owner, m])
            halves[m] = SymmetrizedHalf(keep, strings[owner][m][keep], sent[owner, m], f_idx, f_bits)
            halves[m].check(L)
        states[owner] = SymmetrizedState(L, halves, otp_consumed=vaults[owner].consumed)
    return states


# ---------------------------------------------------------------------------
# sign / verify


@dataclass
class Signature:
    m: int
    sig_bob: np.ndarray
    sig_charlie: np.ndarray


@dataclass
class VerifyResult:
    accept: bool
    mismatch_direct: int
    mismatch_forwarded: int


def sign(m: int, A_bob, A_charlie) -> Signature:
    if m not in (0, 1):
        raise ValueError("message must be 0 or 1")
    a_b = np.array(A_bob, np.uint8, copy=True)
    a_c = np.array(A_charlie, np.uint8, copy=True)
    if len(a_b) != len(a_c):
        raise ValueError("signature strings must have equal length")
    return Signature(m, a_b, a_c)


def decide(mismatch_direct: int, mismatch_forwarded: int, budget: int) -> bool:
    """Strict-less rule: accept only if both parts are below the budget."""
    return mismatch_direct < budget and mismatch_forwarded < budget


def verify(sig: Signature, state: SymmetrizedState, verifier: str, budget: int) -> VerifyResult:
    """Count mismatches of the signature against the verifier's two halves.

    The verifier's own string is checked on its kept positions, the
    peer's on the positions the peer forwarded.
    """
    if len(sig.sig_bob) != state.L or len(sig.sig_charlie) != state.L:
        raise ValueError("signature length does not match L")
    own, peer = (sig.sig_bob, sig.sig_charlie) if verifier == "bob" else (sig.sig_charlie, sig.sig_bob)
    half = state.halves[sig.m]
    direct = int((own[half.kept_idx] != half.kept_bits).sum())
    forwarded = int((peer[half.forwarded_idx] != half.forwarded_bits).sum())
    return VerifyResult(decide(direct, forwarded, budget), direct, forwarded)
