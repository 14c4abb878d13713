"""Batch experiments shared by ``scripts/`` and the acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from .decoy_fk import KEY_SETTINGS, EpsilonBudget, estimate_bounds
from .harness.adversary import (
    best_repudiation_total,
    repudiation_success_exact,
    simulate_forging,
    simulate_repudiation,
)
from .quantum_sim import LinkConfig, SourceConfig, sample_session, tagged_yield
from .qds import forging_bound, forging_exponent_bits, repudiation_bound

DESK_SOURCE = SourceConfig(mu=0.33, nu=0.1, p_mu=0.3, p_nu=0.54, p_w=0.16)
DESK_LINK = LinkConfig(loss_a_db=0.0, loss_b_db=0.0, insertion_loss_db=0.0, z_misalignment=0.0005, visibility=0.98)


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    ci = binomtest(k, n).proportion_ci(confidence_level=level, method="exact")
    return float(ci.low), float(ci.high)


@dataclass
class SoundnessResult:
    """Violation counts of each bound against the oracle, per key setting."""

    n_sims: int
    n_pulses: int
    budget: EpsilonBudget
    violations: dict = field(default_factory=dict)  # (quantity, setting) -> count

    def target(self, quantity: str) -> float:
        b = self.budget
        return {"n_1": b.eps_1, "n_0": b.eps_0, "e_1": b.eps_e + b.eps_1}[quantity]

    def rows(self):
        for (q, setting), k in sorted(self.violations.items()):
            lo, hi = clopper_pearson(k, self.n_sims)
            yield q, setting, k, lo, hi, self.target(q)

    def consistent(self) -> bool:
        """Each violation rate is statistically compatible with its failure budget."""
        return all(lo <= eps for _, _, _, lo, _, eps in self.rows())

    def to_text(self) -> str:
        lines = [f"# {self.n_sims} oracle simulations at {self.n_pulses} pulses",
                 "# quantity setting violations cp_low cp_high eps"]
        for q, (b, c), k, lo, hi, eps in self.rows():
            lines.append(f"{q} {b}-{c} {k} {lo:.5f} {hi:.5f} {eps:.5f}")
        return "\n".join(lines) + "\n"


def soundness_sweep(
    n_sims: int,
    n_pulses: int,
    seed: int,
    eps_qkd: float = 0.5,
    src: SourceConfig = DESK_SOURCE,
    link: LinkConfig = DESK_LINK,
    method: str = "chernoff",
) -> SoundnessResult:
    """Compare the decoy bounds with photon-number ground truth.

    ``n_1`` and ``n_0`` are checked against the tagged single-photon and
    first-sender-vacuum success counts.  Single-photon Z events carry no
    phase in the simulator, so their phase errors are drawn as
    ``Binomial(n_1 true, e_11)`` with the exact single-photon X error rate
    of the link model.
    """
    budget = EpsilonBudget.uniform(eps_qkd)
    ys, yerr = tagged_yield(link, "X", 1, 1)
    e11 = yerr / ys
    res = SoundnessResult(n_sims, n_pulses, budget)
    for q in ("n_1", "n_0", "e_1"):
        for key in KEY_SETTINGS:
            res.violations[q, key] = 0
    ss = np.random.SeedSequence(seed)
    for child in ss.spawn(n_sims):
        sim_seed = int(child.generate_state(1, np.uint64)[0])
        tm = sample_session(src, link, n_pulses, sim_seed, oracle_mode=True)
        bounds = estimate_bounds(tm, budget, src, method=method)
        rng = np.random.default_rng(child.spawn(1)[0])
        for key in KEY_SETTINGS:
            truth = tm.tag_counts(*key, "Z")
            sb = bounds[key]
            res.violations["n_1", key] += sb.n_1 > truth["single"]
            res.violations["n_0", key] += sb.n_0 > truth["vacuum_a"]
            if truth["single"]:
                phase = rng.binomial(truth["single"], e11)
                res.violations["e_1", key] += sb.e_1 < phase / truth["single"]
    return res


@dataclass
class AdversaryPoint:
    L: int
    count_a: int
    count_v: int
    p_E: float
    trials: int
    rep_success: float
    rep_exact: float
    rep_bound: float
    forge_success: float
    forge_bound: float

    @property
    def ok(self) -> bool:
        return self.rep_success <= self.rep_bound and self.forge_success <= self.forge_bound


def adversary_point(
    L: int, count_a: int, count_v: int, p_E: float, trials: int, seed: int,
    eps_qkd: float = 8e-8, forging=None,
) -> AdversaryPoint:
    """Monte Carlo repudiation and forging success at one parameter point.

    ``forging`` is ``(f, eps, eps_pe, eps_est)``; by default ``f`` is set to
    ``sqrt(2^-x)`` and the other terms to zero, which gives the smallest
    bound the entropy gap alone supports.
    """
    s_a, s_v = 2 * count_a / L, 2 * count_v / L
    rep = simulate_repudiation(L, count_a, count_v, trials, seed)
    exact = repudiation_success_exact(L, count_a, count_v, best_repudiation_total(L, count_a, count_v))
    if forging is None:
        x = forging_exponent_bits(p_E, s_v, L)
        forging = (min(1.0, 2.0 ** (-x / 2)), 0.0, 0.0, 0.0)
    fb = forging_bound(p_E, s_v, L, *forging)
    forge = simulate_forging(L, count_v, p_E, trials, seed + 1)
    return AdversaryPoint(L, count_a, count_v, p_E, trials, rep, exact,
                          repudiation_bound(s_a, s_v, L, eps_qkd), forge, fb)
