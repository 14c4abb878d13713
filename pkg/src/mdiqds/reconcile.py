"""Key distillation: Cascade error correction, hash verification, Toeplitz extraction.

The reference key (``key_a``) never changes.  The correcting side runs
:func:`cascade_corrector`, a generator that yields :class:`ParityQuery`
objects and is sent back the reference parities, so the same code runs
in-process (:func:`cascade`) and across the harness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .errors import ReconciliationError

MERSENNE_61 = (1 << 61) - 1


def _as_bits(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.uint8)
    if arr.ndim != 1:
        raise ValueError("bit strings must be one-dimensional")
    if arr.size and arr.max() > 1:
        raise ValueError("bit strings may only contain 0 and 1")
    return arr


@dataclass
class RawKeyPair:
    key_a: np.ndarray
    key_b: np.ndarray
    qber_estimate: float

    def __post_init__(self):
        self.key_a = _as_bits(self.key_a)
        self.key_b = _as_bits(self.key_b)
        if len(self.key_a) != len(self.key_b):
            raise ValueError("raw keys must have equal length")
        if not 0.0 <= self.qber_estimate < 0.5:
            raise ValueError("qber_estimate must lie in [0, 1/2)")


@dataclass
class ParityQuery:
    """Request for the reference parities of ``[starts, ends)`` in pass ``pass_index``."""

    pass_index: int
    starts: np.ndarray
    ends: np.ndarray


@dataclass
class ReconciliationResult:
    corrected_key: np.ndarray
    leak_bits: int
    verified: bool
    rounds: int
    corrections: int = 0
    transcript: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Cascade


def block_sizes(qber: float, n: int, passes: int) -> list[int]:
    """Original schedule ``k_1 = ceil(0.73 / QBER)``, doubled each pass.

    Sizes are capped at ``n / 4`` so every pass splits the key; a
    whole-key block repeats a known parity and can never expose an even
    number of residual errors.  At ``qber = 0`` the first pass is a single
    whole-key block.
    """
    cap = max(1, math.ceil(n / 4))
    if qber <= 0:
        return [n] + [cap] * (passes - 1)
    k1 = max(1, math.ceil(0.73 / qber))
    return [min(cap, k1 * 2**i) for i in range(passes)]


def pass_permutations(n: int, seed: int, passes: int) -> list[np.ndarray]:
    """Pass 0 is the identity; later passes are seeded shuffles shared by both sides."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xCA5C,)))
    perms = [np.arange(n)]
    for _ in range(1, passes):
        perms.append(rng.permutation(n))
    return perms


def _range_parity(bits_perm: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    csum = np.concatenate([[0], np.cumsum(bits_perm, dtype=np.int64)])
    return ((csum[ends] - csum[starts]) & 1).astype(np.uint8)


class ParityResponder:
    """Reference side: answers parity queries from its fixed key."""

    def __init__(self, key: np.ndarray, perms: list[np.ndarray]):
        key = _as_bits(key)
        self._csum = [np.concatenate([[0], np.cumsum(key[p], dtype=np.int64)]) for p in perms]

    def __call__(self, q: ParityQuery) -> np.ndarray:
        c = self._csum[q.pass_index]
        return ((c[q.ends] - c[q.starts]) & 1).astype(np.uint8)


def cascade_corrector(key_b, qber: float, seed: int, passes: int = 6):
    """Generator that corrects ``key_b`` towards the reference key.

    Yields :class:`ParityQuery` and expects the parity array back via
    ``send``.  Returns ``(corrected, leak_bits, rounds, corrections)``.
    Parities already disclosed or derivable from disclosed ones are cached
    and never requested twice.
    """
    b = _as_bits(key_b).copy()
    n = len(b)
    if n == 0:
        raise ValueError("cannot reconcile an empty key")
    sizes = block_sizes(qber, n, passes)
    perms = pass_permutations(n, seed, passes)
    known: list[dict] = [dict() for _ in range(passes)]
    leak = rounds = fixes = 0
    whole_key_parity = None

    def ask(p, starts, ends):
        nonlocal leak, rounds
        starts = np.asarray(starts, np.int64)
        ends = np.asarray(ends, np.int64)
        out = np.empty(len(starts), np.uint8)
        need = []
        for i, (s, e) in enumerate(zip(starts.tolist(), ends.tolist())):
            v = known[p].get((s, e))
            if v is None:
                need.append(i)
            else:
                out[i] = v
        if need:
            idx = np.array(need)
            reply = yield ParityQuery(p, starts[idx], ends[idx])
            reply = np.asarray(reply, np.uint8)
            if reply.shape != (len(idx),):
                raise ReconciliationError("parity reply has the wrong length")
            out[idx] = reply
            leak += len(idx)
            rounds += 1
            for i, v in zip(idx.tolist(), reply.tolist()):
                known[p][(int(starts[i]), int(ends[i]))] = v
        return out

    def blocks(p):
        starts = np.arange(0, n, sizes[p])
        return starts, np.minimum(starts + sizes[p], n)

    def search(p, starts, ends):
        """Batched binary search inside disjoint odd blocks of pass ``p``."""
        nonlocal fixes
        lo, hi = starts.copy(), ends.copy()
        while True:
            open_ = hi - lo > 1
            if not open_.any():
                break
            lo_o, hi_o = lo[open_], hi[open_]
            mid = (lo_o + hi_o) // 2
            ref = yield from ask(p, lo_o, mid)
            own = _range_parity(b[perms[p]], lo_o, mid)
            # right half parity follows from the block parity
            for s, m, e, r in zip(lo_o.tolist(), mid.tolist(), hi_o.tolist(), ref.tolist()):
                whole = known[p].get((s, e))
                if whole is not None:
                    known[p].setdefault((m, e), whole ^ r)
            left = ref != own
            lo[open_] = np.where(left, lo_o, mid)
            hi[open_] = np.where(left, mid, hi_o)
        pos = perms[p][lo]
        b[pos] ^= 1
        fixes += len(pos)

    for p in range(passes):
        starts, ends = blocks(p)
        if p > 0 and len(starts) == 1 and whole_key_parity is not None:
            known[p][(0, n)] = whole_key_parity
        yield from ask(p, starts, ends)
        if p == 0 and len(starts) == 1:
            whole_key_parity = known[0][(0, n)]
        while True:
            progressed = False
            for q in range(p + 1):
                qs, qe = blocks(q)
                ref = np.array([known[q][(s, e)] for s, e in zip(qs.tolist(), qe.tolist())], np.uint8)
                odd = ref != _range_parity(b[perms[q]], qs, qe)
                if odd.any():
                    yield from search(q, qs[odd], qe[odd])
                    progressed = True
                    break
            if not progressed:
                break
    return b, leak, rounds, fixes


def cascade(pair: RawKeyPair, seed: int, passes: int = 6, eps_cor: float | None = None) -> ReconciliationResult:
    """Run Cascade locally between ``pair.key_a`` (reference) and ``pair.key_b``.

    With ``eps_cor`` the result is checked by :func:`verify_correctness`;
    otherwise ``verified`` reports exact equality (useful in tests only).
    """
    if passes < 4:
        raise ValueError("Cascade needs at least 4 passes")
    perms = pass_permutations(len(pair.key_a), seed, passes)
    responder = ParityResponder(pair.key_a, perms)
    gen = cascade_corrector(pair.key_b, pair.qber_estimate, seed, passes)
    transcript = []
    try:
        query = next(gen)
        while True:
            reply = responder(query)
            transcript.append((query.pass_index, query.starts, query.ends, reply))
            query = gen.send(reply)
    except StopIteration as stop:
        corrected, leak, rounds, fixes = stop.value
    if eps_cor is None:
        verified = bool(np.array_equal(corrected, pair.key_a))
    else:
        verified = verify_correctness(pair.key_a, corrected, eps_cor, seed)[0]
    return ReconciliationResult(corrected, leak, verified, rounds, fixes, transcript)


# ---------------------------------------------------------------------------
# verification hash


def tag_length(eps_cor: float) -> int:
    if not 0.0 < eps_cor < 1.0:
        raise ValueError("eps_cor must lie in (0, 1)")
    return math.ceil(math.log2(1 / eps_cor) - 1e-12)


def _hash_params(seed: int) -> tuple[int, int, int]:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x7A6,)))
    x, a, b = (int(v) for v in rng.integers(1, MERSENNE_61, size=3, dtype=np.uint64))
    return x, a, b


def _words(bits: np.ndarray) -> list[int]:
    pad = (-len(bits)) % 32
    packed = np.packbits(np.concatenate([bits, np.zeros(pad, np.uint8)]))
    return packed.view(">u4").astype(np.uint64).tolist()


def poly_hash_tag(bits, t: int, seed: int) -> int:
    """``t``-bit tag: polynomial evaluation over GF(2^61 - 1), then ``(a y + b mod p) mod 2^t``.

    The bit length is hashed as the leading coefficient so keys of
    different lengths never share a polynomial.
    """
    bits = _as_bits(bits)
    x, a, b = _hash_params(seed)
    y = len(bits) % MERSENNE_61
    for w in _words(bits):
        y = (y * x + w) % MERSENNE_61
    return ((a * y + b) % MERSENNE_61) % (1 << t)


def verify_correctness(key_a, key_b, eps_cor: float, seed: int) -> tuple[bool, int]:
    """Compare hash tags of length ``ceil(log2(1/eps_cor))``; returns ``(verified, tag_a)``."""
    key_a, key_b = _as_bits(key_a), _as_bits(key_b)
    if len(key_a) != len(key_b):
        raise ValueError("keys must have equal length")
    t = tag_length(eps_cor)
    tag_a = poly_hash_tag(key_a, t, seed)
    return tag_a == poly_hash_tag(key_b, t, seed), tag_a


# ---------------------------------------------------------------------------
# privacy amplification


def toeplitz_extract(key, out_len: int, matrix_seed) -> np.ndarray:
    """``T x`` over GF(2) with ``T[i, j] = matrix_seed[i - j + n - 1]``.

    Computed as one real FFT convolution; every entry of the integer
    convolution is below ``n``, far inside float64's exact range.
    """
    key = _as_bits(key)
    seed = _as_bits(matrix_seed)
    n = len(key)
    if out_len < 0 or out_len > n:
        raise ValueError("out_len must lie in [0, len(key)]")
    if out_len == 0:
        return np.zeros(0, np.uint8)
    if len(seed) < n + out_len - 1:
        raise ValueError(f"Toeplitz seed needs {n + out_len - 1} bits, got {len(seed)}")
    seed = seed[: n + out_len - 1]
    conv = fftconvolve(seed.astype(np.float64), key.astype(np.float64))
    window = conv[n - 1 : n - 1 + out_len]
    return (np.rint(window).astype(np.int64) & 1).astype(np.uint8)


def toeplitz_naive(key, out_len: int, matrix_seed) -> np.ndarray:
    """Explicit-matrix reference for :func:`toeplitz_extract`."""
    key = _as_bits(key)
    seed = _as_bits(matrix_seed)
    n = len(key)
    i = np.arange(out_len)[:, None]
    j = np.arange(n)[None, :]
    mat = seed[i - j + n - 1]
    return ((mat.astype(np.int64) @ key.astype(np.int64)) & 1).astype(np.uint8)
