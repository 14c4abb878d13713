"""Key-generation post-processing: signature strings and their mismatch bounds.

Signature bits come only from Z-basis events where both senders used the
signal intensity.  The run is split into two halves, one per future
message; in each half a shared seeded permutation keeps ``L`` bits and
every other bit is announced to estimate the mismatch rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError
from .quantum_sim import INTENSITIES, Z, SiftedData

_MU = INTENSITIES.index("mu")


def serfling_bound(test_errors: int, test_size: int, kept_size: int, eps_pe: float) -> float:
    """Upper bound on the error rate of ``kept_size`` unseen bits.

    For a uniformly random split of ``n + k`` bits into a test set of size
    ``n`` and a kept set of size ``k``,

        P[rate_kept >= rate_test + d] <= exp(-2 n k^2 d^2 / ((n + k)(k + 1)))

    so ``d = sqrt((n + k)(k + 1) ln(1/eps) / (2 n k^2))``.
    """
    if test_size < 1 or kept_size < 1:
        raise ValueError("test_size and kept_size must be >= 1")
    if not 0 <= test_errors <= test_size:
        raise ValueError("test_errors must lie in [0, test_size]")
    if not 0.0 < eps_pe < 1.0:
        raise ValueError("eps_pe must lie in (0, 1)")
    n, k = float(test_size), float(kept_size)
    dev = math.sqrt((n + k) * (k + 1) * math.log(1 / eps_pe) / (2 * n * k * k))
    return min(test_errors / n + dev, 1.0)


def select_signature_data(sifted: SiftedData) -> tuple[np.ndarray, np.ndarray]:
    """Order-preserving (Z, mu, mu) subsequence of a sifted link."""
    keep = (sifted.basis == Z) & (sifted.int_a == _MU) & (sifted.int_b == _MU)
    return sifted.bits_a[keep], sifted.bits_b[keep]


@dataclass
class KgpOutput:
    """Strings for messages 0 and 1 plus the per-half test statistics.

    ``E_bound[m]`` bounds the mismatch rate of any uniformly random
    ``L/2``-bit part of string ``m``, which is what each verifier checks.
    """

    A: tuple
    K: tuple
    kept_idx: tuple
    test_errors: tuple
    test_size: tuple
    E_bound: tuple
    L: int
    seed: int

    @property
    def test_error_rate(self) -> float:
        return sum(self.test_errors) / sum(self.test_size)

    @property
    def E_max(self) -> float:
        return max(self.E_bound)


def selection_indices(n: int, L: int, seed: int, min_test: int = 1) -> list[tuple[np.ndarray, np.ndarray]]:
    """Kept and announced positions for each half, as absolute indices.

    Both parties call this with the same public seed and get the same sets.
    """
    half = n // 2
    if L < 2 or L % 2:
        raise ValueError("L must be a positive even number")
    if half - L < min_test:
        raise InsufficientDataError(
            f"{n} raw bits cannot hold two strings of {L} bits plus {min_test} test bits each"
        )
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x5E1,)))
    out = []
    for m in range(2):
        perm = rng.permutation(half) + m * half
        out.append((np.sort(perm[:L]), np.sort(perm[L:])))
    return out


def form_strings(
    raw_a, raw_b, L: int, seed: int, eps_pe: float, min_test: int = 1
) -> KgpOutput:
    """Cut ``L``-bit strings for m = 0, 1 and bound their mismatch rates."""
    raw_a = np.asarray(raw_a, np.uint8)
    raw_b = np.asarray(raw_b, np.uint8)
    if len(raw_a) != len(raw_b):
        raise ValueError("raw strings must have equal length")
    sel = selection_indices(len(raw_a), L, seed, min_test)
    A, K, kept, errs, sizes, bounds = [], [], [], [], [], []
    for keep, test in sel:
        A.append(raw_a[keep])
        K.append(raw_b[keep])
        kept.append(keep)
        e = int((raw_a[test] != raw_b[test]).sum())
        errs.append(e)
        sizes.append(len(test))
        bounds.append(serfling_bound(e, len(test), L // 2, eps_pe))
    return KgpOutput(tuple(A), tuple(K), tuple(kept), tuple(errs), tuple(sizes), tuple(bounds), L, seed)
