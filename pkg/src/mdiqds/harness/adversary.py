"""Dishonest strategies for protocol runs, plus Monte Carlo estimates of their success.

In a protocol run the hooks change what Alice signs or what Bob forwards.
The Monte Carlo functions model the same attacks statistically, so the
empirical success rate can be compared with the repudiation and forging
bounds at sizes where millions of trials are affordable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import hypergeom

from ..qds import Signature

STRATEGIES = ("honest", "repudiating-signer", "forging-recipient")


@dataclass
class Hooks:
    strategy: str = "honest"

    @property
    def forging(self) -> bool:
        return self.strategy == "forging-recipient"

    def signer(self, sig: Signature, public: dict, rng: np.random.Generator) -> Signature:
        """Repudiation: push Charlie's string to ``count_a + count_v`` expected mismatches.

        The extra errors split at random between the half Charlie keeps and
        the half forwarded to Bob; the attack wins when Bob's share stays
        below ``count_a`` while Charlie's reaches ``count_v``.
        """
        if self.strategy != "repudiating-signer":
            return sig
        target = public["count_a"] + public["count_v"]
        flip = rng.choice(len(sig.sig_charlie), min(target, len(sig.sig_charlie)), replace=False)
        forged = sig.sig_charlie.copy()
        forged[flip] ^= 1
        return Signature(sig.m, sig.sig_bob.copy(), forged)

    def forwarder(self, sig: Signature, state, K, rng: np.random.Generator) -> Signature:
        """Forgery: Bob signs the other message with everything he knows.

        His own string is exact; for Charlie's string he knows the half
        Charlie forwarded and guesses the rest uniformly.
        """
        if self.strategy != "forging-recipient":
            return sig
        m = 1 - sig.m
        half = state.halves[m]
        guess = rng.integers(0, 2, state.L, dtype=np.uint8)
        guess[half.forwarded_idx] = half.forwarded_bits
        return Signature(m, K[m].copy(), guess)


def adversary_hooks(role: str, strategy: str) -> Hooks:
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    expected = {"repudiating-signer": "alice", "forging-recipient": "bob", "honest": role}[strategy]
    if role != expected:
        raise ValueError(f"strategy {strategy!r} belongs to {expected}, not {role}")
    return Hooks(strategy)


# ---------------------------------------------------------------------------
# Monte Carlo


def repudiation_success_exact(L: int, count_a: int, count_v: int, total: int) -> float:
    """P[X < count_a and total - X >= count_v] for ``X ~ Hypergeom(L, total, L/2)``."""
    rv = hypergeom(L, total, L // 2)
    lo, hi = max(0, total - L // 2), min(count_a - 1, total - count_v)
    if hi < lo:
        return 0.0
    return float(rv.cdf(hi) - rv.cdf(lo - 1))


def best_repudiation_total(L: int, count_a: int, count_v: int) -> int:
    """Number of mismatches in Charlie's string that maximises the exact success."""
    centre = count_a + count_v
    span = max(10, int(4 * np.sqrt(L)))
    totals = range(max(count_v, centre - span), min(L, centre + span) + 1)
    return max(totals, key=lambda t: repudiation_success_exact(L, count_a, count_v, t))


def simulate_repudiation(L: int, count_a: int, count_v: int, trials: int, seed: int, total: int | None = None) -> float:
    """Empirical success of a signer who plants ``total`` mismatches in Charlie's string.

    Which positions Charlie forwards is uniform and unknown to the signer,
    so Bob's share of the mismatches is hypergeometric.
    """
    total = best_repudiation_total(L, count_a, count_v) if total is None else total
    rng = np.random.default_rng(seed)
    to_bob = rng.hypergeometric(total, L - total, L // 2, size=trials)
    wins = (to_bob < count_a) & (total - to_bob >= count_v)
    return float(wins.mean())


def simulate_forging(
    L: int, count_v: int, p_E: float, trials: int, seed: int, model: str = "constant_weight", flips=None
) -> float:
    """Empirical success of a recipient guessing the ``L/2`` bits the other recipient kept.

    ``constant_weight``: the forger's best estimate differs from the truth
    in exactly ``round(p_E L/2)`` uniformly placed positions, which has
    min-entropy ``log2 C(L/2, w)``.  The forger may also flip ``r`` random
    positions of the estimate; ``flips`` lists the ``r`` values tried and
    the best is reported.
    ``iid``: each guessed bit is wrong independently with probability
    ``p_E``.  This model does not satisfy the min-entropy assumption behind
    the forging bound and is offered for comparison only.
    """
    n = L // 2
    rng = np.random.default_rng(seed)
    if model == "iid":
        return float((rng.binomial(n, p_E, size=trials) < count_v).mean())
    if model != "constant_weight":
        raise ValueError(f"unknown error model {model!r}")
    w = round(p_E * n)
    best = 0.0
    for r in flips if flips is not None else (0, 1, 2, 4, 8, 16):
        # overlap between the forger's flips and the true errors
        overlap = rng.hypergeometric(w, n - w, r, size=trials) if r else np.zeros(trials, np.int64)
        dist = w + r - 2 * overlap
        best = max(best, float((dist < count_v).mean()))
    return best
