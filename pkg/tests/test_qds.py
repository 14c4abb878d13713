import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mdiqds.decoy_fk import binary_entropy
from mdiqds.errors import KeyReuseError, NoKeyError, NoSecurityError, ThresholdChainError
from mdiqds.keys import KeyVault, random_key
from mdiqds.qds import (
    ForgingParams,
    Thresholds,
    choose_half,
    choose_thresholds,
    decide,
    decode_half,
    encode_half,
    estimate_p_E,
    forging_bound,
    forging_exponent_bits,
    otp_range,
    repudiation_bound,
    robustness_bound,
    security_report,
    select_L,
    sign,
    symmetrize,
    verify,
)

L_PUB = 787_468


@given(st.integers(12, 10**9))
def test_select_L_is_largest_even_sixth(ell):
    L = select_L(ell)
    assert L % 2 == 0 and 6 * L <= ell < 6 * (L + 2)


def test_select_L_too_short():
    with pytest.raises(NoKeyError):
        select_L(11)


def test_offset_thresholds():
    th = choose_thresholds(0.002525, 0.01226, L_PUB, "offset", 0.0002)
    assert (th.count_a, th.count_v) == (1073, 4748)
    assert th.s_a == pytest.approx(2 * 1073 / L_PUB)


def test_thirds_thresholds_split_the_gap():
    th = choose_thresholds(0.01, 0.04, 10_000, "thirds")
    assert (th.count_a, th.count_v) == (100, 150)


def test_threshold_chain_violations():
    with pytest.raises(ThresholdChainError):
        choose_thresholds(0.02, 0.01, 1000)
    with pytest.raises(ThresholdChainError):
        choose_thresholds(0.0100, 0.0101, 1000, "offset", 0.0002)
    with pytest.raises(ThresholdChainError):
        Thresholds(5, 5, 1000, 0.5, 0.001).check()
    with pytest.raises(ValueError):
        choose_thresholds(0.01, 0.04, 1000, "median")


def test_repudiation_formula():
    assert repudiation_bound(0.01, 0.03, 10_000, 0.0) == pytest.approx(2 * math.exp(-1.0))
    assert repudiation_bound(0.01, 0.01, 10, 1e-3) == pytest.approx(2 + 1e-3)


@given(st.integers(1000, 10**7))
def test_repudiation_decreases_with_L(L):
    assert repudiation_bound(0.01, 0.02, L + 1000, 0) < repudiation_bound(0.01, 0.02, L, 0)


def test_forging_bound_structure():
    x = forging_exponent_bits(0.05, 0.03, 10_000)
    assert x == pytest.approx(5000 * (binary_entropy(0.05) - binary_entropy(0.03)))
    fb = forging_bound(0.05, 0.03, 10_000, f=0.1, eps=0.01, eps_pe=0.001, eps_est=0.002)
    assert fb == pytest.approx((2**-x + 0.01) / 0.1 + 0.1 + 0.003)
    with pytest.raises(NoSecurityError):
        forging_exponent_bits(0.03, 0.05, 10_000)
    with pytest.raises(ValueError):
        forging_bound(0.05, 0.03, 10_000, 0.0, 0, 0, 0)


def test_robustness_scopes():
    assert robustness_bound(0.01, 0.02, 10_000, 1e-8) == pytest.approx(2e-8)
    tail = math.exp(-2 * 5000 * 0.01**2)
    assert robustness_bound(0.01, 0.02, 10_000, 1e-8, scope="tail") == pytest.approx(2 * (tail + 1e-8))
    assert robustness_bound(0.03, 0.02, 10_000, 1e-8) == 1.0


def test_p_E_from_single_photon_entropy():
    p = estimate_p_E(n_1=5e5, e_1=0.1, n_success=1e6)
    assert binary_entropy(p) == pytest.approx(0.5 * (1 - binary_entropy(0.1)), rel=1e-9)
    assert estimate_p_E(0, 0, 0, override=0.2) == 0.2
    with pytest.raises(NoSecurityError):
        estimate_p_E(0, 0.1, 1e6)


def test_shipped_forging_split_is_labelled():
    fp = ForgingParams.shipped()
    assert fp == ForgingParams()
    assert fp.calibrated


def test_security_report_text():
    th = choose_thresholds(0.002525, 0.01226, L_PUB)
    rep = security_report(th, 4_724_819, 8e-8, eps_pe_rob=1e-8)
    text = rep.to_text()
    for token in ("0.25%", "1073", "4748", "1.23%", "1.51e-07", "9.76e-08", "2.00e-08", "calibrated"):
        assert token in text
    assert rep.secure and "WARNING" not in text


def test_vacuous_report_warns():
    th = choose_thresholds(0.02, 0.05, 2000, "thirds")
    rep = security_report(th, 12_000, 1e-3)
    assert not rep.secure
    assert "WARNING" in rep.to_text()


# symmetrization


def test_otp_slots_tile_six_L():
    L = 100
    ranges = sorted(otp_range(s, m, L) for s in ("bob", "charlie") for m in (0, 1))
    assert ranges[0][0] == 0 and ranges[-1][1] == 6 * L
    assert all(a[1] == b[0] for a, b in zip(ranges, ranges[1:]))


@given(st.integers(1, 200).map(lambda h: 2 * h), st.integers(0, 2**32))
def test_half_encoding_round_trip(L, seed):
    K = random_key(L, seed)
    idx = choose_half(L, seed, "bob", 1)
    plain = encode_half(K, idx)
    assert len(plain) == 3 * L // 2
    got_idx, got_bits = decode_half(plain, L)
    assert np.array_equal(got_idx, idx) and np.array_equal(got_bits, K[idx])


def make_strings(L, err, seed):
    rng = np.random.default_rng(seed)
    A = [rng.integers(0, 2, L, dtype=np.uint8) for _ in range(2)]
    noisy = lambda a: a ^ (rng.random(L) < err).astype(np.uint8)
    return A, tuple(noisy(a) for a in A), tuple(noisy(a) for a in A)


def test_symmetrize_consumes_six_L_and_forbids_reuse():
    L = 1000
    A, Kb, Kc = make_strings(L, 0.01, 0)
    shared = random_key(6 * L, 9)
    vb, vc = KeyVault(shared), KeyVault(shared.copy())
    states = symmetrize(Kb, Kc, vb, vc, seed=3)
    assert vb.consumed == vc.consumed == 6 * L
    assert states["bob"].otp_consumed == 6 * L
    with pytest.raises(KeyReuseError):
        vb.consume(*otp_range("bob", 0, L))
    for m in range(2):
        hb, hc = states["bob"].halves[m], states["charlie"].halves[m]
        assert np.array_equal(hb.forwarded_idx, hc.sent_idx)
        assert np.array_equal(hb.forwarded_bits, Kc[m][hc.sent_idx])


def test_honest_signature_accepted_by_both():
    L = 2000
    A, Kb, Kc = make_strings(L, 0.01, 1)
    shared = random_key(6 * L, 2)
    states = symmetrize(Kb, Kc, KeyVault(shared), KeyVault(shared.copy()), seed=4)
    sig = sign(1, A[1], A[1])
    rb = verify(sig, states["bob"], "bob", budget=25)
    rc = verify(sig, states["charlie"], "charlie", budget=30)
    assert rb.accept and rc.accept
    # the other message's string does not verify
    wrong = sign(0, A[1], A[1])
    assert not verify(wrong, states["bob"], "bob", budget=25).accept


def test_strict_less_rule():
    assert decide(9, 9, 10)
    assert not decide(10, 0, 10)
    assert not decide(0, 10, 10)


def test_sign_validation():
    with pytest.raises(ValueError):
        sign(2, [0], [0])
    with pytest.raises(ValueError):
        sign(0, [0, 1], [0])
