"""Simulated MDI quantum link: two weak-coherent senders and an untrusted relay.

Physical model
--------------
Each sender emits a phase-randomised weak coherent pulse, so the photon
number is Poissonian with the chosen intensity.  Every emitted photon
independently survives its fibre arm, the relay insertion loss and the
time-window cut, is routed to one of the two detectors of the relay beam
splitter with probability 1/2, and is registered with that detector's
efficiency.  The relay resolves two time bins, so there are four detection
cells ``(detector, bin)``; cell index is ``2 * detector + bin``.

* Z basis: the photon sits in the time bin given by the bit, flipped with
  probability ``z_misalignment``.
* X basis: the photon lands in either time bin with probability 1/2.
* Dark counts fire independently in every cell.

By Poisson thinning, the number of registered items in each cell from each
source (sender A, sender B, darks) is an independent Poisson variable, which
is what both the sampler and :func:`analytic_link_model` rely on.

Threshold detectors only see whether a cell has fired.  A Bell-state
measurement succeeds when exactly two cells fire, on different detectors
and in opposite time bins; this heralds the singlet, so the honest bits of
the two senders are anti-correlated.  In the Z basis an error is simply
``bit_a == bit_b``.  In the X basis, a "clean" success (one photon from each
sender, nothing else) is in error with probability ``(1 - visibility) / 2``;
any other success is in error with probability 1/2.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

INTENSITIES = ("w", "nu", "mu")
BASES = ("Z", "X")
Z, X = 0, 1
MISMATCH = -1

# cells (0, 3) = det0/early + det1/late, (1, 2) = det0/late + det1/early
_PATTERNS = (
    np.array([True, False, False, True]),
    np.array([False, True, True, False]),
)
_PATTERN_CELLS = ((0, 3), (1, 2))
_MAX_COUNT = 2**62


@dataclass(frozen=True)
class SourceConfig:
    """Intensities and emission statistics of one sender.

    Signal pulses are always prepared in Z; decoy pulses pick Z or X with
    ``p_z_decoy`` / ``p_x_decoy``; vacuum pulses carry a bookkeeping basis
    label drawn with the decoy split.
    """

    mu: float = 0.33
    nu: float = 0.1
    w: float = 0.0
    p_mu: float = 0.256
    p_nu: float = 0.584
    p_w: float = 0.16
    p_z_decoy: float = 0.369
    p_x_decoy: float = 0.631
    rep_rate_hz: float = 7.5e7

    def __post_init__(self):
        if abs(self.p_mu + self.p_nu + self.p_w - 1.0) > 1e-12:
            raise ConfigError("p_mu + p_nu + p_w must equal 1")
        if abs(self.p_z_decoy + self.p_x_decoy - 1.0) > 1e-12:
            raise ConfigError("p_z_decoy + p_x_decoy must equal 1")
        if self.w != 0.0:
            raise ConfigError("the weakest intensity must be vacuum (w = 0)")
        if not self.mu > self.nu >= self.w:
            raise ConfigError("intensities must satisfy mu > nu >= w = 0")
        for p in (self.p_mu, self.p_nu, self.p_w, self.p_z_decoy, self.p_x_decoy):
            if not 0.0 <= p <= 1.0:
                raise ConfigError("probabilities must lie in [0, 1]")
        if self.rep_rate_hz <= 0:
            raise ConfigError("rep_rate_hz must be positive")

    @property
    def signal_basis(self) -> str:
        return "Z"

    @property
    def intensities(self) -> tuple[float, float, float]:
        return (self.w, self.nu, self.mu)

    def category_probs(self) -> np.ndarray:
        """Probabilities of the five (intensity, basis-label) categories."""
        return np.array(
            [
                self.p_w * self.p_z_decoy,
                self.p_w * self.p_x_decoy,
                self.p_nu * self.p_z_decoy,
                self.p_nu * self.p_x_decoy,
                self.p_mu,
            ]
        )


# (intensity index, basis) for each sender category
_CATEGORIES = ((0, Z), (0, X), (1, Z), (1, X), (2, Z))


@dataclass(frozen=True)
class LinkConfig:
    """Losses, detectors and noise of one sender-relay-sender link."""

    loss_a_db: float = 9.2
    loss_b_db: float = 5.1
    insertion_loss_db: float = 6.2
    det_eff_0: float = 0.66
    det_eff_1: float = 0.64
    dark_rate_hz: float = 30.0
    spurious_rate_hz: float = 40.0
    gate_ns: float = 1.0
    window_eff: float = 0.90
    visibility: float = 0.80
    z_misalignment: float = 0.002

    def __post_init__(self):
        for name in ("loss_a_db", "loss_b_db", "insertion_loss_db"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("det_eff_0", "det_eff_1", "window_eff", "visibility"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 0.0 <= self.z_misalignment <= 0.5:
            raise ConfigError("z_misalignment must lie in [0, 1/2]")
        if min(self.dark_rate_hz, self.spurious_rate_hz, self.gate_ns) < 0:
            raise ConfigError("dark rates and gate width must be >= 0")

    def arm_transmittance(self, arm: str) -> float:
        loss = self.loss_a_db if arm == "a" else self.loss_b_db
        return 10 ** (-(loss + self.insertion_loss_db) / 10) * self.window_eff

    @property
    def dark_prob(self) -> float:
        """Probability of a dark click in one cell per pulse."""
        p = (self.dark_rate_hz + self.spurious_rate_hz) * self.gate_ns * 1e-9
        return min(p, 1.0)

    @property
    def x_error_clean(self) -> float:
        return (1.0 - self.visibility) / 2.0


def _cell_probs(link: LinkConfig, arm: str, basis: int, bit: int) -> np.ndarray:
    """Probability that one emitted photon is registered in each cell."""
    eta = link.arm_transmittance(arm)
    effs = (link.det_eff_0, link.det_eff_1)
    out = np.empty(4)
    m = link.z_misalignment
    for d in (0, 1):
        for t in (0, 1):
            if basis == Z:
                p_bin = 1.0 - m if t == bit else m
            else:
                p_bin = 0.5
            out[2 * d + t] = eta * 0.5 * effs[d] * p_bin
    return out


def _dark_rate(link: LinkConfig) -> float:
    p = link.dark_prob
    return math.inf if p >= 1.0 else -math.log1p(-p)


def pair_basis(int_a, basis_a, int_b, basis_b) -> np.ndarray:
    """Basis of a pulse pair, or ``MISMATCH``.

    A vacuum pulse has no basis of its own and takes its partner's; two
    vacuum pulses take the first sender's label.
    """
    int_a, basis_a = np.asarray(int_a), np.asarray(basis_a)
    int_b, basis_b = np.asarray(int_b), np.asarray(basis_b)
    out = np.where(basis_a == basis_b, basis_a, MISMATCH)
    out = np.where((int_a == 0) & (int_b != 0), basis_b, out)
    out = np.where(int_b == 0, basis_a, out)
    return out.astype(np.int8)


# ---------------------------------------------------------------------------
# tallies


@dataclass
class TallyMatrix:
    """Per-setting counts of one simulated session.

    ``sent``, ``success`` and ``errors`` are indexed ``[b, c, basis]`` with
    intensity indices into :data:`INTENSITIES` and basis indices into
    :data:`BASES`.  Pairs whose (non-vacuum) bases disagree are counted in
    ``mismatch_sent`` / ``mismatch_success`` and never enter a basis tally.

    In oracle mode ``tags[(b, c, basis)]`` holds one row per success:
    ``(photons_a, photons_b, error)``.
    """

    n_pulses: int = 0
    sent: np.ndarray = field(default_factory=lambda: np.zeros((3, 3, 2), np.int64))
    success: np.ndarray = field(default_factory=lambda: np.zeros((3, 3, 2), np.int64))
    errors: np.ndarray = field(default_factory=lambda: np.zeros((3, 3, 2), np.int64))
    mismatch_sent: np.ndarray = field(default_factory=lambda: np.zeros((3, 3), np.int64))
    mismatch_success: np.ndarray = field(
        default_factory=lambda: np.zeros((3, 3), np.int64)
    )
    tags: dict | None = None

    def get(self, b: str, c: str, basis: str) -> tuple[int, int, int]:
        i, j, k = INTENSITIES.index(b), INTENSITIES.index(c), BASES.index(basis)
        return int(self.sent[i, j, k]), int(self.success[i, j, k]), int(self.errors[i, j, k])

    def check(self) -> None:
        if not ((self.errors <= self.success).all() and (self.success <= self.sent).all()):
            raise ValueError("tally invariant violated: errors <= success <= sent")
        if (self.sent < 0).any() or (self.mismatch_sent < 0).any():
            raise ValueError("negative counts")
        if int(self.sent.sum() + self.mismatch_sent.sum()) != self.n_pulses:
            raise ValueError("pair counts do not add up to n_pulses")

    def __add__(self, other: "TallyMatrix") -> "TallyMatrix":
        tags = None
        if self.tags is not None or other.tags is not None:
            tags = {}
            for src in (self.tags or {}, other.tags or {}):
                for key, rows in src.items():
                    tags[key] = np.concatenate([tags[key], rows]) if key in tags else rows
        return TallyMatrix(
            n_pulses=self.n_pulses + other.n_pulses,
            sent=self.sent + other.sent,
            success=self.success + other.success,
            errors=self.errors + other.errors,
            mismatch_sent=self.mismatch_sent + other.mismatch_sent,
            mismatch_success=self.mismatch_success + other.mismatch_success,
            tags=tags,
        )

    def tag_counts(self, b: str, c: str, basis: str) -> dict[str, int]:
        """Ground-truth counts from oracle tags for one setting."""
        if self.tags is None:
            raise ValueError("tally was not sampled in oracle mode")
        key = (INTENSITIES.index(b), INTENSITIES.index(c), BASES.index(basis))
        rows = self.tags.get(key, np.zeros((0, 3), np.uint8))
        single = (rows[:, 0] == 1) & (rows[:, 1] == 1)
        return {
            "vacuum_a": int((rows[:, 0] == 0).sum()),
            "single": int(single.sum()),
            "single_errors": int((single & (rows[:, 2] == 1)).sum()),
        }

    def to_text(self) -> str:
        """Line-oriented serialisation.

        Header lines start with ``#``.  Each record is
        ``b c basis sent success errors``; basis ``-`` marks the
        basis-mismatch bucket of a setting (its errors field is always 0).
        """
        lines = ["# mdiqds tally v1", f"# pulses {self.n_pulses}", "# b c basis sent success errors"]
        for i, b in enumerate(INTENSITIES):
            for j, c in enumerate(INTENSITIES):
                for k, basis in enumerate(BASES):
                    lines.append(
                        f"{b} {c} {basis} {self.sent[i, j, k]} {self.success[i, j, k]} {self.errors[i, j, k]}"
                    )
                lines.append(f"{b} {c} - {self.mismatch_sent[i, j]} {self.mismatch_success[i, j]} 0")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TallyMatrix":
        tm = cls()
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] == "pulses":
                    tm.n_pulses = int(parts[1])
                continue
            b, c, basis, sent, succ, err = line.split()
            i, j = INTENSITIES.index(b), INTENSITIES.index(c)
            if basis == "-":
                tm.mismatch_sent[i, j] = int(sent)
                tm.mismatch_success[i, j] = int(succ)
            else:
                k = BASES.index(basis)
                tm.sent[i, j, k], tm.success[i, j, k], tm.errors[i, j, k] = int(sent), int(succ), int(err)
        tm.check()
        return tm


@dataclass
class EventStream:
    """Relay-announced events with both senders' private labels.

    Every array has one entry per event.  ``photons_a`` / ``photons_b`` are
    only present in oracle mode.
    """

    int_a: np.ndarray
    basis_a: np.ndarray
    bit_a: np.ndarray
    int_b: np.ndarray
    basis_b: np.ndarray
    bit_b: np.ndarray
    success: np.ndarray
    photons_a: np.ndarray | None = None
    photons_b: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.int_a)

    @classmethod
    def empty(cls, oracle: bool = False) -> "EventStream":
        z = np.zeros(0, np.uint8)
        return cls(z, z, z, z, z, z, np.zeros(0, bool), z if oracle else None, z if oracle else None)

    @classmethod
    def concat(cls, parts: list["EventStream"]) -> "EventStream":
        if not parts:
            return cls.empty()
        names = ("int_a", "basis_a", "bit_a", "int_b", "basis_b", "bit_b", "success")
        kw = {n: np.concatenate([getattr(p, n) for p in parts]) for n in names}
        if parts[0].photons_a is not None:
            kw["photons_a"] = np.concatenate([p.photons_a for p in parts])
            kw["photons_b"] = np.concatenate([p.photons_b for p in parts])
        return cls(**kw)


@dataclass
class LinkRun:
    tallies: TallyMatrix
    events: EventStream


# ---------------------------------------------------------------------------
# sampling


def _ztp(rng: np.random.Generator, lam: float, size: int) -> np.ndarray:
    """Zero-truncated Poisson samples."""
    kmax = max(40, int(lam + 12 * math.sqrt(lam) + 40))
    k = np.arange(1, kmax + 1)
    logp = k * math.log(lam) - lam - np.array([math.lgamma(v + 1) for v in k])
    p = np.exp(logp)
    cdf = np.cumsum(p / p.sum())
    cdf[-1] = 1.0
    return 1 + np.searchsorted(cdf, rng.random(size), side="right")


def _chunk_seed(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def _simulate_chunk(src_a, src_b, link, n, rng, oracle):
    tm = TallyMatrix(n_pulses=n)
    if oracle:
        tm.tags = {}
    parts = []
    joint = np.outer(src_a.category_probs(), src_b.category_probs()).ravel()
    counts = rng.multinomial(n, joint / joint.sum())
    lam_d = _dark_rate(link)
    e_clean = link.x_error_clean
    for idx, n_pair in enumerate(counts):
        if n_pair == 0:
            continue
        (ia, ba), (ib, bb) = _CATEGORIES[idx // 5], _CATEGORIES[idx % 5]
        a_int, b_int = src_a.intensities[ia], src_b.intensities[ib]
        pb = int(pair_basis(ia, ba, ib, bb))
        if pb == MISMATCH:
            tm.mismatch_sent[ia, ib] += n_pair
        else:
            tm.sent[ia, ib, pb] += n_pair
        for combo, n_grp in enumerate(rng.multinomial(n_pair, [0.25] * 4)):
            if n_grp == 0:
                continue
            xa, xb = combo >> 1, combo & 1
            pa = _cell_probs(link, "a", ba, xa)
            pbv = _cell_probs(link, "b", bb, xb)
            lam = np.concatenate([a_int * pa, b_int * pbv, np.full(4, lam_d)])
            total = float(lam.sum())
            if total == 0.0:
                continue
            if math.isinf(total):
                raise ConfigError("dark probability of 1 makes every cell fire")
            n_active = rng.binomial(n_grp, -math.expm1(-total))
            if n_active == 0:
                continue
            occ = rng.multinomial(_ztp(rng, total, n_active), lam / total)
            from_a, from_b = occ[:, 0:4], occ[:, 4:8]
            tot = occ[:, 0:4] + occ[:, 4:8] + occ[:, 8:12]
            click = tot > 0
            succ = (click == _PATTERNS[0]).all(1) | (click == _PATTERNS[1]).all(1)
            k = int(succ.sum())
            if k == 0:
                continue
            bit_a = np.full(k, xa, np.uint8)
            bit_b = np.full(k, xb, np.uint8)
            if pb == X:
                sa, sb = from_a[succ].sum(1), from_b[succ].sum(1)
                clean = (tot[succ].sum(1) == 2) & (sa == 1) & (sb == 1)
                err = rng.random(k) < np.where(clean, e_clean, 0.5)
                bit_b = np.where(err, bit_a, 1 - bit_a).astype(np.uint8)
            else:
                err = bit_a == bit_b
            if pb == MISMATCH:
                tm.mismatch_success[ia, ib] += k
            else:
                tm.success[ia, ib, pb] += k
                tm.errors[ia, ib, pb] += int(err.sum())
            ev = EventStream(
                int_a=np.full(k, ia, np.uint8),
                basis_a=np.full(k, ba, np.uint8),
                bit_a=bit_a,
                int_b=np.full(k, ib, np.uint8),
                basis_b=np.full(k, bb, np.uint8),
                bit_b=bit_b,
                success=np.ones(k, bool),
            )
            if oracle:
                lost_a = a_int * (1.0 - pa.sum())
                lost_b = b_int * (1.0 - pbv.sum())
                ka = from_a[succ].sum(1) + rng.poisson(lost_a, k)
                kb = from_b[succ].sum(1) + rng.poisson(lost_b, k)
                ev.photons_a = np.minimum(ka, 255).astype(np.uint8)
                ev.photons_b = np.minimum(kb, 255).astype(np.uint8)
                if pb != MISMATCH:
                    rows = np.stack([ev.photons_a, ev.photons_b, err.astype(np.uint8)], 1)
                    key = (ia, ib, pb)
                    tm.tags[key] = np.concatenate([tm.tags[key], rows]) if key in tm.tags else rows
            parts.append(ev)
    events = EventStream.concat(parts) if parts else EventStream.empty(oracle)
    order = rng.permutation(len(events))
    for name in ("int_a", "basis_a", "bit_a", "int_b", "basis_b", "bit_b", "success", "photons_a", "photons_b"):
        arr = getattr(events, name)
        if arr is not None:
            setattr(events, name, arr[order])
    return tm, events


def run_link(
    src: SourceConfig,
    link: LinkConfig,
    n_pulses: int,
    seed: int,
    oracle_mode: bool = False,
    src_b: SourceConfig | None = None,
    chunk_size: int = 1 << 24,
) -> LinkRun:
    """Sample a session and keep the announced events as well as the tallies.

    Pulses are processed in chunks seeded by ``SeedSequence(seed,
    spawn_key=(chunk,))``, so disjoint chunk ranges can be sampled
    independently and merged by addition.
    """
    if n_pulses < 0:
        raise ValueError("n_pulses must be >= 0")
    if n_pulses >= _MAX_COUNT:
        raise OverflowError("n_pulses exceeds the representable count range")
    src_b = src_b or src
    tallies = TallyMatrix(tags={} if oracle_mode else None)
    streams = []
    start, index = 0, 0
    while start < n_pulses:
        n = min(chunk_size, n_pulses - start)
        tm, ev = _simulate_chunk(src, src_b, link, n, _chunk_seed(seed, index), oracle_mode)
        tallies = tallies + tm
        streams.append(ev)
        start += n
        index += 1
    if oracle_mode and tallies.tags is None:
        tallies.tags = {}
    tallies.check()
    events = EventStream.concat(streams) if streams else EventStream.empty(oracle_mode)
    return LinkRun(tallies, events)


def sample_session(
    src: SourceConfig,
    link: LinkConfig,
    n_pulses: int,
    seed: int,
    oracle_mode: bool = False,
    src_b: SourceConfig | None = None,
) -> TallyMatrix:
    """Simulate ``n_pulses`` pulse pairs and return the tallies.

    Identical ``(seed, configs, n_pulses)`` give bit-identical output.  In
    oracle mode the tallies keep per-success photon-number tags.
    """
    return run_link(src, link, n_pulses, seed, oracle_mode, src_b).tallies


# ---------------------------------------------------------------------------
# sifting


@dataclass
class SiftedData:
    """Matched-basis successes, second sender's bits already flipped."""

    bits_a: np.ndarray
    bits_b: np.ndarray
    basis: np.ndarray
    int_a: np.ndarray
    int_b: np.ndarray

    def __len__(self) -> int:
        return len(self.bits_a)

    def qber(self, basis: int | None = None) -> float:
        mask = np.ones(len(self), bool) if basis is None else self.basis == basis
        n = int(mask.sum())
        return float((self.bits_a[mask] != self.bits_b[mask]).sum()) / n if n else 0.0


def sift_anticorrelated(events: EventStream) -> SiftedData:
    """Keep matched-basis successes and undo the singlet anti-correlation.

    A singlet projection anti-correlates the senders in both bases, so the
    second sender flips every kept bit.
    """
    n = len(events.int_a)
    for name in ("basis_a", "bit_a", "int_b", "basis_b", "bit_b", "success"):
        if len(getattr(events, name)) != n:
            raise ValueError(f"event field {name} has mismatched length")
    pb = pair_basis(events.int_a, events.basis_a, events.int_b, events.basis_b)
    keep = np.asarray(events.success, bool) & (pb != MISMATCH)
    return SiftedData(
        bits_a=np.asarray(events.bit_a)[keep].astype(np.uint8),
        bits_b=(1 - np.asarray(events.bit_b)[keep]).astype(np.uint8),
        basis=pb[keep].astype(np.uint8),
        int_a=np.asarray(events.int_a)[keep].astype(np.uint8),
        int_b=np.asarray(events.int_b)[keep].astype(np.uint8),
    )


# ---------------------------------------------------------------------------
# analytic model


def _success_terms(lam_a: np.ndarray, lam_b: np.ndarray, lam_d: float) -> tuple[float, float]:
    """P(success) and P(clean success) for Poisson cell rates."""
    lam = lam_a + lam_b + lam_d
    p0 = np.exp(-lam)
    q = clean = 0.0
    for c1, c2 in _PATTERN_CELLS:
        others = [c for c in range(4) if c not in (c1, c2)]
        idle = float(np.prod(p0[others]))
        q += idle * (1 - p0[c1]) * (1 - p0[c2])
        clean += idle * p0[c1] * p0[c2] * (lam_a[c1] * lam_b[c2] + lam_b[c1] * lam_a[c2])
    return q, clean


@dataclass
class LinkModel:
    """Expected per-pulse-pair gains and error rates of every setting."""

    gain: dict
    error_rate: dict
    y11: dict
    e11: dict

    def q(self, b: str, c: str, basis: str) -> float:
        return self.gain[(b, c, basis)]

    def e(self, b: str, c: str, basis: str) -> float:
        return self.error_rate[(b, c, basis)]


def analytic_link_model(
    src: SourceConfig, link: LinkConfig, src_b: SourceConfig | None = None
) -> LinkModel:
    src_b = src_b or src
    lam_d = _dark_rate(link)
    gain, err = {}, {}
    for ia, b in enumerate(INTENSITIES):
        for ib, c in enumerate(INTENSITIES):
            a_int, b_int = src.intensities[ia], src_b.intensities[ib]
            for basis in (Z, X):
                q_tot = eq_tot = 0.0
                for xa in (0, 1):
                    for xb in (0, 1):
                        la = a_int * _cell_probs(link, "a", basis, xa)
                        lb = b_int * _cell_probs(link, "b", basis, xb)
                        q, clean = _success_terms(la, lb, lam_d)
                        q_tot += q / 4
                        if basis == Z:
                            eq_tot += q / 4 if xa == xb else 0.0
                        else:
                            eq_tot += (0.5 * (q - clean) + link.x_error_clean * clean) / 4
                key = (b, c, BASES[basis])
                gain[key] = q_tot
                err[key] = eq_tot / q_tot if q_tot > 0 else 0.0
    y11, e11 = {}, {}
    for basis in BASES:
        y, ye = tagged_yield(link, basis, 1, 1)
        y11[basis] = y
        e11[basis] = ye / y if y > 0 else 0.5
    return LinkModel(gain, err, y11, e11)


def tagged_yield(link: LinkConfig, basis: str, k_a: int, k_b: int) -> tuple[float, float]:
    """Exact P(success) and P(success and error) given emitted photon numbers.

    Enumerates every placement of the photons over the four cells (or
    loss) and every dark-count pattern; intended for small ``k_a + k_b``.
    """
    if k_a + k_b > 5:
        raise ValueError("enumeration limited to k_a + k_b <= 5")
    bi = BASES.index(basis)
    pd = link.dark_prob
    succ = succ_err = 0.0
    for xa in (0, 1):
        for xb in (0, 1):
            pa = _cell_probs(link, "a", bi, xa)
            pb = _cell_probs(link, "b", bi, xb)
            pa5 = np.append(pa, 1 - pa.sum())
            pb5 = np.append(pb, 1 - pb.sum())
            for place_a in itertools.product(range(5), repeat=k_a):
                wa = float(np.prod([pa5[c] for c in place_a]))
                for place_b in itertools.product(range(5), repeat=k_b):
                    wgt = wa * float(np.prod([pb5[c] for c in place_b])) / 4
                    if wgt == 0.0:
                        continue
                    occ_a = np.bincount(place_a, minlength=5)[:4]
                    occ_b = np.bincount(place_b, minlength=5)[:4]
                    s, clean = _placement_success(occ_a, occ_b, pd)
                    succ += wgt * s
                    if bi == Z:
                        succ_err += wgt * s if xa == xb else 0.0
                    else:
                        succ_err += wgt * (0.5 * (s - clean) + link.x_error_clean * clean)
    return succ, succ_err


def _placement_success(occ_a, occ_b, pd):
    occ = occ_a + occ_b
    s = clean = 0.0
    for pattern in _PATTERNS:
        prob = 1.0
        for c in range(4):
            lit = occ[c] > 0
            if pattern[c]:
                prob *= 1.0 if lit else pd
            else:
                prob *= 0.0 if lit else 1 - pd
        s += prob
        cells = np.flatnonzero(pattern)
        if occ.sum() == 2 and occ_a.sum() == 1 and occ_b.sum() == 1 and (occ[cells] == 1).all():
            clean += (1 - pd) ** 4
    return s, clean


def expected_tallies(
    src: SourceConfig, link: LinkConfig, n_pulses: int, src_b: SourceConfig | None = None
) -> TallyMatrix:
    """Tallies at their (rounded) expected values; a noiseless reference."""
    model = analytic_link_model(src, link, src_b)
    fractions = expected_pair_fractions(src, src_b)
    tm = TallyMatrix(n_pulses=n_pulses)
    for (b, c, basis), frac in fractions.items():
        i, j = INTENSITIES.index(b), INTENSITIES.index(c)
        sent = int(round(frac * n_pulses))
        if basis == "-":
            tm.mismatch_sent[i, j] = sent
            continue
        k = BASES.index(basis)
        succ = int(round(sent * model.gain[(b, c, basis)]))
        tm.sent[i, j, k] = sent
        tm.success[i, j, k] = succ
        tm.errors[i, j, k] = int(round(succ * model.error_rate[(b, c, basis)]))
    tm.n_pulses = int(tm.sent.sum() + tm.mismatch_sent.sum())
    return tm


def expected_pair_fractions(src: SourceConfig, src_b: SourceConfig | None = None) -> dict:
    """Expected fraction of pulse pairs per ``(b, c, basis)`` and per mismatch bucket."""
    src_b = src_b or src
    out: dict = {}
    pa, pb = src.category_probs(), src_b.category_probs()
    for i, (ia, ba) in enumerate(_CATEGORIES):
        for j, (ib, bb) in enumerate(_CATEGORIES):
            basis = int(pair_basis(ia, ba, ib, bb))
            key = (INTENSITIES[ia], INTENSITIES[ib], BASES[basis] if basis != MISMATCH else "-")
            out[key] = out.get(key, 0.0) + pa[i] * pb[j]
    return out
