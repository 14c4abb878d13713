"""Decoy-state finite-key estimation for the MDI-QKD link.

Three intensities ``{0, nu, mu}`` per sender.  Writing ``G(b, c) =
exp(b + c) Q_bc`` for the gain of setting ``(b, c)``,

    H(b, c) = G(b, c) - G(b, 0) - G(0, c) + G(0, 0)
            = sum_{n, m >= 1} b^n c^m / (n! m!) Y_nm

so ``mu^3 H(nu, nu) - nu^3 H(mu, mu) <= mu^2 nu^2 (mu - nu) Y_11``, which
gives the closed-form single-photon yield bound used here.  The X-basis
error gains give ``nu^2 e_11 Y_11 <= H_T(nu, nu)``.  Observed counts are
turned into bounds on expected gains with a one-sided deviation
(:func:`concentration_bound`) and expected counts back into bounds on the
realised counts with :func:`realized_bound`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.optimize import brentq, linprog
from scipy.special import rel_entr

from .errors import EstimationInfeasibleError
from .quantum_sim import INTENSITIES, SourceConfig, TallyMatrix

KEY_SETTINGS = (("mu", "mu"), ("mu", "nu"), ("nu", "mu"), ("nu", "nu"))


def binary_entropy(x: float) -> float:
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"binary entropy undefined for {x!r}")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1 - x) * math.log2(1 - x)


def inverse_binary_entropy(y: float) -> float:
    """The ``p`` in ``[0, 1/2]`` with ``h(p) = y``."""
    if not 0.0 <= y <= 1.0:
        raise ValueError(f"entropy value {y!r} outside [0, 1]")
    if y == 0.0:
        return 0.0
    if y == 1.0:
        return 0.5
    return brentq(lambda p: binary_entropy(p) - y, 0.0, 0.5, xtol=1e-300, rtol=4 * np.finfo(float).eps)


def _kl(a: float, b: float) -> float:
    return float(rel_entr(a, b) + rel_entr(1 - a, 1 - b))


def _kl_invert(rate: float, n: float, eps: float, direction: str) -> float:
    """Solve ``n D(rate || p) = ln(1/eps)`` for ``p`` on the requested side."""
    target = math.log(1 / eps) / n
    if direction == "upper":
        if rate >= 1.0:
            return 1.0
        # search on log(1 - p) so tiny gaps near 1 stay resolvable
        lo, hi = math.log1p(-rate), -745.0
        f = lambda t: _kl(rate, -math.expm1(t)) - target
        if f(hi) <= 0:
            return 1.0
        t = brentq(f, hi, lo, xtol=1e-14, rtol=1e-14, maxiter=500)
        return -math.expm1(t)
    if rate <= 0.0:
        return 0.0
    lo, hi = -745.0, math.log(rate)
    f = lambda t: _kl(rate, math.exp(t)) - target
    if f(lo) <= 0:
        return 0.0
    return math.exp(brentq(f, lo, hi, xtol=1e-14, rtol=1e-14, maxiter=500))


def concentration_bound(
    observed: float, n: float, eps: float, direction: str, method: str = "hoeffding"
) -> float:
    """One-sided bound on the expected count ``n * p`` from an observed count.

    ``hoeffding`` shifts by ``sqrt(n / 2 * ln(1 / eps))``; ``chernoff``
    inverts the relative-entropy tail ``exp(-n D(k/n || p))``, which is much
    tighter for rare events.  The result is clamped to ``[0, n]``.
    """
    if direction not in ("upper", "lower"):
        raise ValueError("direction must be 'upper' or 'lower'")
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    if n <= 0:
        return 0.0
    if not 0 <= observed <= n:
        raise ValueError("observed must lie in [0, n]")
    if method == "hoeffding":
        delta = math.sqrt(n / 2 * math.log(1 / eps))
        value = observed + delta if direction == "upper" else observed - delta
    elif method == "chernoff":
        value = n * _kl_invert(observed / n, n, eps, direction)
    else:
        raise ValueError(f"unknown deviation method {method!r}")
    return min(max(value, 0.0), float(n))


def realized_bound(
    rate: float, n: float, eps: float, direction: str, method: str = "hoeffding"
) -> float:
    """Bound on a realised ``Binomial(n, rate)`` count, failing w.p. <= ``eps``."""
    if n <= 0:
        return 0.0
    rate = min(max(rate, 0.0), 1.0)
    if method == "hoeffding":
        delta = math.sqrt(n / 2 * math.log(1 / eps))
        value = n * rate + delta if direction == "upper" else n * rate - delta
    elif method == "chernoff":
        value = n * _kl_invert_realized(rate, n, eps, direction)
    else:
        raise ValueError(f"unknown deviation method {method!r}")
    return min(max(value, 0.0), float(n))


def _kl_invert_realized(rate: float, n: float, eps: float, direction: str) -> float:
    """Solve ``n D(q || rate) = ln(1/eps)`` for the realised fraction ``q``.

    The mean is known here, so it is the second argument of the divergence
    (the reverse of :func:`_kl_invert`).
    """
    target = math.log(1 / eps) / n
    if direction == "upper":
        if rate >= 1.0 or _kl(1.0, rate) <= target:
            return 1.0
        f = lambda t: _kl(-math.expm1(t), rate) - target
        t = brentq(f, -745.0, math.log1p(-rate), xtol=1e-14, rtol=1e-14, maxiter=500)
        return -math.expm1(t)
    if rate <= 0.0 or _kl(0.0, rate) <= target:
        return 0.0
    f = lambda t: _kl(math.exp(t), rate) - target
    return math.exp(brentq(f, -745.0, math.log(rate), xtol=1e-14, rtol=1e-14, maxiter=500))


@dataclass(frozen=True)
class EpsilonBudget:
    """Per-setting failure probabilities of the finite-key analysis.

    ``eps_sec`` per setting is ``2 (eps' + 2 eps_e + eps_hat) + eps_beta +
    eps_0 + eps_1 + eps_PA``; ``eps_beta`` only enters this composition.
    """

    eps_cor: float
    eps_pa: float
    eps_prime: float
    eps_hat: float
    eps_beta: float
    eps_0: float
    eps_1: float
    eps_e: float
    eps_qkd: float = 8e-8
    n_settings: int = 4

    def __post_init__(self):
        for f in fields(self):
            if f.name in ("eps_qkd", "n_settings"):
                continue
            if not 0.0 < getattr(self, f.name) < 1.0:
                raise ValueError(f"{f.name} must lie in (0, 1)")
        if self.total > self.eps_qkd * (1 + 1e-9):
            raise ValueError("eps_cor + eps_sec exceeds eps_qkd")

    @classmethod
    def uniform(cls, eps_qkd: float = 8e-8, n_settings: int = 4) -> "EpsilonBudget":
        # 13 weighted slots per setting: cor, PA, 2 eps', 4 eps_e, 2 eps_hat, beta, 0, 1
        unit = eps_qkd / n_settings / 13
        return cls(unit, unit, unit, unit, unit, unit, unit, unit, eps_qkd, n_settings)

    @property
    def eps_sec_setting(self) -> float:
        return (
            2 * (self.eps_prime + 2 * self.eps_e + self.eps_hat)
            + self.eps_beta + self.eps_0 + self.eps_1 + self.eps_pa
        )

    @property
    def total(self) -> float:
        return self.n_settings * (self.eps_cor + self.eps_sec_setting)

    @property
    def penalty_bits(self) -> float:
        return (
            math.log2(8 / self.eps_cor)
            + 2 * math.log2(2 / (self.eps_prime * self.eps_hat))
            + 2 * math.log2(1 / (2 * self.eps_pa))
        )


@dataclass
class SettingBounds:
    n_0: float
    n_1: float
    e_1: float
    leak_ec: float

    def __post_init__(self):
        if min(self.n_0, self.n_1, self.leak_ec) < 0:
            raise ValueError("bounds must be non-negative")
        if not 0.0 <= self.e_1 <= 0.5:
            raise ValueError("e_1 must lie in [0, 1/2]")


@dataclass
class FiniteKeyBounds:
    settings: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.settings[key]

    def to_text(self) -> str:
        lines = ["# mdiqds finite-key bounds v1", "# setting n_0 n_1 e_1 leak_EC"]
        for (b, c), sb in self.settings.items():
            lines.append(f"{b}-{c} {_fmt_count(sb.n_0)} {_fmt_count(sb.n_1)} {sb.e_1:.4f} {_fmt_count(sb.leak_ec)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "FiniteKeyBounds":
        out = cls()
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            setting, n0, n1, e1, leak = line.split()
            b, c = setting.split("-")
            if b not in INTENSITIES or c not in INTENSITIES:
                raise ValueError(f"unknown setting {setting!r}")
            e1v = float(e1.rstrip("%")) / 100 if e1.endswith("%") else float(e1)
            out.settings[(b, c)] = SettingBounds(float(n0), float(n1), e1v, float(leak))
        return out


def _fmt_count(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else f"{x:.1f}"


# ---------------------------------------------------------------------------
# gain bounds


def _intensity(src: SourceConfig, label: str) -> float:
    return src.intensities[INTENSITIES.index(label)]


def _check_decoys(src: SourceConfig) -> tuple[float, float]:
    mu, nu = src.mu, src.nu
    if not (mu > nu > 0):
        raise EstimationInfeasibleError(f"decoy system needs mu > nu > 0, got mu={mu}, nu={nu}")
    return mu, nu


def _rate_bound(tallies, b, c, basis, eps, direction, method, errors=False):
    sent, succ, err = tallies.get(b, c, basis)
    if sent == 0:
        return 0.0 if direction == "lower" else 1.0
    obs = err if errors else succ
    return concentration_bound(obs, sent, eps, direction, method) / sent


@dataclass
class DecoyEstimate:
    """Intermediate quantities shared by the per-setting bounds."""

    y11_lower: float
    e11_upper: float
    y11_eps: float
    e11_eps: float


def single_photon_yield_lower(
    tallies: TallyMatrix, src: SourceConfig, eps_each: float, method: str = "hoeffding"
) -> float:
    """Lower bound on the Z-basis yield of single-photon pairs.

    Uses seven gain bounds, each failing with probability ``eps_each``.
    """
    mu, nu = _check_decoys(src)

    def g(b, c, direction):
        scale = math.exp(_intensity(src, b) + _intensity(src, c))
        return scale * _rate_bound(tallies, b, c, "Z", eps_each, direction, method)

    h_nu_low = g("nu", "nu", "lower") - g("nu", "w", "upper") - g("w", "nu", "upper")
    h_mu_up = g("mu", "mu", "upper") - g("mu", "w", "lower") - g("w", "mu", "lower")
    q00_low = g("w", "w", "lower")
    num = mu**3 * h_nu_low - nu**3 * h_mu_up + (mu**3 - nu**3) * q00_low
    return min(max(num / (mu**2 * nu**2 * (mu - nu)), 0.0), 1.0)


def single_photon_yield_lp(
    tallies: TallyMatrix, src: SourceConfig, eps_each: float, method: str = "hoeffding", cutoff: int = 8
) -> float:
    """Linear-program lower bound on ``Y_11`` from the same seven gain bounds.

    Yields ``Y_nm`` with ``n, m <= cutoff`` are free in ``[0, 1]``; the
    truncated photon-number mass is added as slack to every upper
    constraint.
    """
    _check_decoys(src)
    used = [("nu", "nu"), ("nu", "w"), ("w", "nu"), ("mu", "mu"), ("mu", "w"), ("w", "mu"), ("w", "w")]
    k = cutoff + 1
    a_ub, b_ub = [], []
    for b, c in used:
        pb = _poisson(_intensity(src, b), k)
        pc = _poisson(_intensity(src, c), k)
        row = np.outer(pb, pc).ravel()
        tail = max(0.0, 1.0 - row.sum())
        lo = _rate_bound(tallies, b, c, "Z", eps_each, "lower", method)
        hi = _rate_bound(tallies, b, c, "Z", eps_each, "upper", method)
        a_ub.append(row)
        b_ub.append(hi)
        a_ub.append(-row)
        b_ub.append(-lo + tail)
    cost = np.zeros(k * k)
    cost[1 * k + 1] = 1.0
    res = linprog(cost, A_ub=np.array(a_ub), b_ub=np.array(b_ub), bounds=[(0.0, 1.0)] * (k * k), method="highs")
    if res.status == 2:
        return 0.0
    if not res.success:
        raise EstimationInfeasibleError(f"LP estimator failed: {res.message}")
    return max(float(res.fun), 0.0)


def _poisson(lam: float, k: int) -> np.ndarray:
    return np.array([math.exp(-lam) * lam**n / math.factorial(n) for n in range(k)])


def phase_error_rate_upper(
    tallies: TallyMatrix, src: SourceConfig, y11_lower: float, eps_each: float, method: str = "hoeffding"
) -> float:
    """Upper bound on the expected single-photon X-basis error rate.

    Four error-gain bounds, each failing with probability ``eps_each``.
    Returns 1/2 when the yield bound carries no information.
    """
    _, nu = _check_decoys(src)
    if y11_lower <= 0:
        return 0.5

    def gt(b, c, direction):
        scale = math.exp(_intensity(src, b) + _intensity(src, c))
        return scale * _rate_bound(tallies, b, c, "X", eps_each, direction, method, errors=True)

    ht_up = gt("nu", "nu", "upper") - gt("nu", "w", "lower") - gt("w", "nu", "lower") + gt("w", "w", "upper")
    return min(max(ht_up / (nu**2 * y11_lower), 0.0), 0.5)


def decoy_estimate(tallies: TallyMatrix, src: SourceConfig, budget: EpsilonBudget, method: str = "hoeffding") -> DecoyEstimate:
    y11 = single_photon_yield_lower(tallies, src, budget.eps_1 / 8, method)
    e11 = phase_error_rate_upper(tallies, src, y11, budget.eps_e / 5, method)
    return DecoyEstimate(y11, e11, budget.eps_1 / 8, budget.eps_e / 5)


# ---------------------------------------------------------------------------
# per-setting bounds


def _z_successes(tallies, b, c):
    return tallies.get(b, c, "Z")[1]


def estimate_vacuum(
    tallies: TallyMatrix,
    budget: EpsilonBudget,
    src: SourceConfig | None = None,
    settings=KEY_SETTINGS,
    method: str = "hoeffding",
) -> dict:
    """Lower bounds on Z-basis successes where the first sender emitted vacuum."""
    src = src or SourceConfig()
    _check_decoys(src)
    eps = budget.eps_0 / 2
    out = {}
    for b, c in settings:
        sent = tallies.get(b, c, "Z")[0]
        q0c = _rate_bound(tallies, "w", c, "Z", eps, "lower", method)
        rate = math.exp(-_intensity(src, b)) * q0c
        n0 = realized_bound(rate, sent, eps, "lower", method)
        out[(b, c)] = min(n0, float(_z_successes(tallies, b, c)))
    return out


def estimate_single_photon(
    tallies: TallyMatrix,
    budget: EpsilonBudget,
    src: SourceConfig | None = None,
    settings=KEY_SETTINGS,
    method: str = "hoeffding",
    y11_lower: float | None = None,
) -> dict:
    """Lower bounds on Z-basis successes from single-photon pairs."""
    src = src or SourceConfig()
    if y11_lower is None:
        y11_lower = single_photon_yield_lower(tallies, src, budget.eps_1 / 8, method)
    out = {}
    for b, c in settings:
        ib, ic = _intensity(src, b), _intensity(src, c)
        p11 = ib * math.exp(-ib) * ic * math.exp(-ic)
        sent = tallies.get(b, c, "Z")[0]
        n1 = realized_bound(p11 * y11_lower, sent, budget.eps_1 / 8, "lower", method)
        out[(b, c)] = min(n1, float(_z_successes(tallies, b, c)))
    return out


def estimate_phase_error(
    tallies: TallyMatrix,
    n1_bounds: dict,
    budget: EpsilonBudget,
    src: SourceConfig | None = None,
    method: str = "hoeffding",
    y11_lower: float | None = None,
) -> dict:
    """Upper bounds on the phase-error rate of the single-photon Z events."""
    src = src or SourceConfig()
    if y11_lower is None:
        y11_lower = single_photon_yield_lower(tallies, src, budget.eps_1 / 8, method)
    e11 = phase_error_rate_upper(tallies, src, y11_lower, budget.eps_e / 5, method)
    out = {}
    for key, n1 in n1_bounds.items():
        if n1 < 1 or e11 >= 0.5:
            out[key] = 0.5
            continue
        e1 = realized_bound(e11, n1, budget.eps_e / 5, "upper", method) / n1
        out[key] = min(e1, 0.5)
    return out


def estimate_bounds(
    tallies: TallyMatrix,
    budget: EpsilonBudget,
    src: SourceConfig | None = None,
    settings=KEY_SETTINGS,
    method: str = "hoeffding",
    leak: dict | None = None,
    f_ec: float = 1.16,
) -> FiniteKeyBounds:
    """All four per-setting quantities of the key-length formula.

    When ``leak`` is not supplied it is estimated as ``f_ec * M * h(E)`` from
    the Z-basis tallies.
    """
    src = src or SourceConfig()
    y11 = single_photon_yield_lower(tallies, src, budget.eps_1 / 8, method)
    n0 = estimate_vacuum(tallies, budget, src, settings, method)
    n1 = estimate_single_photon(tallies, budget, src, settings, method, y11)
    e1 = estimate_phase_error(tallies, n1, budget, src, method, y11)
    out = FiniteKeyBounds()
    for b, c in settings:
        if leak is not None:
            lk = float(leak[(b, c)])
        else:
            _, succ, err = tallies.get(b, c, "Z")
            lk = float(math.ceil(f_ec * succ * binary_entropy(err / succ))) if succ else 0.0
        out.settings[(b, c)] = SettingBounds(n0[(b, c)], n1[(b, c)], e1[(b, c)], lk)
    return out


# ---------------------------------------------------------------------------
# key length


@dataclass
class KeyLength:
    ell: int
    contributions: dict
    eps_cor: float
    eps_sec: float

    @property
    def has_key(self) -> bool:
        return self.ell > 0


def key_length(
    bounds: FiniteKeyBounds,
    budget: EpsilonBudget,
    settings=None,
    floor_per_setting: bool = False,
) -> KeyLength:
    """Secret key length summed over ``settings`` (default: all in ``bounds``)."""
    settings = list(settings or bounds.settings.keys())
    contrib = {}
    for key in settings:
        sb = bounds[key]
        val = sb.n_0 + sb.n_1 * (1 - binary_entropy(sb.e_1)) - sb.leak_ec - budget.penalty_bits
        contrib[key] = max(val, 0.0) if floor_per_setting else val
    total = sum(contrib.values())
    n = len(settings)
    return KeyLength(
        ell=math.floor(total),
        contributions=contrib,
        eps_cor=n * budget.eps_cor,
        eps_sec=n * budget.eps_sec_setting,
    )


def key_length_report(bounds: FiniteKeyBounds, result: KeyLength | None = None) -> str:
    """Fixed-column text report: setting, n_0, n_1, e_1, leak_EC (and the key length)."""
    lines = [f"{'setting':<8}{'n_0':>14}{'n_1':>14}{'e_1':>10}{'leak_EC':>14}"]
    for (b, c), sb in bounds.settings.items():
        lines.append(
            f"{b + '-' + c:<8}{sb.n_0:>14.0f}{sb.n_1:>14.0f}{100 * sb.e_1:>9.2f}%{sb.leak_ec:>14.0f}"
        )
    if result is not None:
        lines.append(f"ell = {result.ell}" if result.has_key else f"ell = {result.ell} (no key)")
        lines.append(f"eps_cor = {result.eps_cor:.3e}  eps_sec = {result.eps_sec:.3e}")
    return "\n".join(lines) + "\n"
