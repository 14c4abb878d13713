import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdiqds.decoy_fk import binary_entropy
from mdiqds.errors import ReconciliationError
from mdiqds.reconcile import (
    ParityQuery,
    ParityResponder,
    RawKeyPair,
    block_sizes,
    cascade,
    cascade_corrector,
    pass_permutations,
    poly_hash_tag,
    tag_length,
    toeplitz_extract,
    toeplitz_naive,
    verify_correctness,
)


def noisy_pair(n, q, seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 2, n, dtype=np.uint8)
    b = a ^ (rng.random(n) < q).astype(np.uint8)
    return a, b


def toeplitz_loops(key, out_len, s):
    """Row-by-row GF(2) product with T[i, j] = s[i - j + n - 1]."""
    n = len(key)
    out = []
    for i in range(out_len):
        acc = 0
        for j in range(n):
            acc ^= int(s[i - j + n - 1]) & int(key[j])
        out.append(acc)
    return np.array(out, np.uint8)


def test_block_schedule():
    assert block_sizes(0.01, 10**6, 4) == [73, 146, 292, 584]
    # capped so every pass splits the key
    assert max(block_sizes(0.001, 1000, 6)) == 250
    assert block_sizes(0.0, 1000, 3)[0] == 1000


def test_permutations_are_shared_and_seeded():
    p1 = pass_permutations(100, 5, 4)
    p2 = pass_permutations(100, 5, 4)
    assert all(np.array_equal(a, b) for a, b in zip(p1, p2))
    assert np.array_equal(p1[0], np.arange(100))
    assert sorted(p1[2].tolist()) == list(range(100))


@pytest.mark.parametrize("n,q", [(2000, 0.01), (20_000, 0.03), (50_000, 0.0025), (500, 0.05)])
def test_cascade_corrects(n, q):
    for seed in range(5):
        a, b = noisy_pair(n, q, seed)
        r = cascade(RawKeyPair(a, b, q), seed=seed)
        assert np.array_equal(r.corrected_key, a)
        assert r.verified
        assert r.corrections == int((a != b).sum())


def test_cascade_leak_is_near_shannon_limit():
    n, q = 100_000, 0.02
    a, b = noisy_pair(n, q, 1)
    r = cascade(RawKeyPair(a, b, q), seed=1)
    assert np.array_equal(r.corrected_key, a)
    f = r.leak_bits / (n * binary_entropy(q))
    assert 1.0 < f < 1.3


def test_leak_counts_disclosed_parities():
    a, b = noisy_pair(5000, 0.01, 3)
    r = cascade(RawKeyPair(a, b, 0.01), seed=3)
    assert r.leak_bits == sum(len(t[1]) for t in r.transcript)
    assert r.rounds == len(r.transcript)


def test_identical_keys_cost_only_block_parities():
    a, _ = noisy_pair(1000, 0.0, 0)
    r = cascade(RawKeyPair(a, a.copy(), 0.0), seed=0)
    assert r.corrections == 0
    assert r.leak_bits == 1 + 4 * 5


def test_corrector_rejects_bad_reply():
    a, b = noisy_pair(1000, 0.02, 0)
    gen = cascade_corrector(b, 0.02, seed=0)
    q = next(gen)
    assert isinstance(q, ParityQuery)
    with pytest.raises(ReconciliationError):
        gen.send(np.zeros(len(q.starts) + 1, np.uint8))


def test_responder_answers_range_parities():
    key = np.array([1, 0, 1, 1, 0, 1], np.uint8)
    resp = ParityResponder(key, [np.arange(6)])
    got = resp(ParityQuery(0, np.array([0, 2, 1]), np.array([3, 6, 2])))
    assert got.tolist() == [0, 1, 0]


def test_cascade_needs_four_passes():
    a, b = noisy_pair(100, 0.01, 0)
    with pytest.raises(ValueError):
        cascade(RawKeyPair(a, b, 0.01), seed=0, passes=3)


def test_raw_pair_validation():
    with pytest.raises(ValueError):
        RawKeyPair(np.zeros(3), np.zeros(4), 0.01)
    with pytest.raises(ValueError):
        RawKeyPair(np.zeros(3), np.zeros(3), 0.6)


# verification hash


def test_tag_length():
    assert tag_length(0.5) == 1
    assert tag_length(2**-20) == 20
    assert tag_length(1e-9) == 30


def test_hash_distinguishes_keys():
    a, b = noisy_pair(10_000, 0.001, 2)
    assert verify_correctness(a, a.copy(), 1e-9, seed=4)[0]
    assert not verify_correctness(a, b, 1e-9, seed=4)[0]


def test_hash_length_prefix():
    # a trailing zero bit changes the length coefficient
    x = np.array([1, 0, 1], np.uint8)
    y = np.array([1, 0, 1, 0], np.uint8)
    assert poly_hash_tag(x, 40, 1) != poly_hash_tag(y, 40, 1)


def test_hash_collision_rate_near_two_to_minus_t():
    t, trials, hits = 6, 4000, 0
    rng = np.random.default_rng(0)
    for s in range(trials):
        a = rng.integers(0, 2, 256, dtype=np.uint8)
        b = a.copy()
        b[rng.integers(256)] ^= 1
        hits += poly_hash_tag(a, t, s) == poly_hash_tag(b, t, s)
    # 2^-6 = 0.0156; allow a generous binomial band
    assert hits / trials < 0.03


# privacy amplification


@settings(max_examples=60, deadline=None)
@given(data=st.data())
def test_toeplitz_matches_loop_oracle(data):
    n = data.draw(st.integers(1, 80))
    m = data.draw(st.integers(0, n))
    key = np.array(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)), np.uint8)
    seed = np.array(data.draw(st.lists(st.integers(0, 1), min_size=n + max(m, 1) - 1, max_size=n + max(m, 1) - 1)), np.uint8)
    expect = toeplitz_loops(key, m, seed)
    assert np.array_equal(toeplitz_extract(key, m, seed), expect)
    assert np.array_equal(toeplitz_naive(key, m, seed), expect)


def test_toeplitz_large_matches_naive():
    rng = np.random.default_rng(1)
    key = rng.integers(0, 2, 4000, dtype=np.uint8)
    seed = rng.integers(0, 2, 4000 + 1500 - 1, dtype=np.uint8)
    assert np.array_equal(toeplitz_extract(key, 1500, seed), toeplitz_naive(key, 1500, seed))


def test_toeplitz_is_linear():
    rng = np.random.default_rng(2)
    x, y = rng.integers(0, 2, (2, 300), dtype=np.uint8)
    s = rng.integers(0, 2, 300 + 100 - 1, dtype=np.uint8)
    assert np.array_equal(toeplitz_extract(x ^ y, 100, s), toeplitz_extract(x, 100, s) ^ toeplitz_extract(y, 100, s))


def test_toeplitz_argument_checks():
    with pytest.raises(ValueError):
        toeplitz_extract(np.ones(10, np.uint8), 11, np.ones(30, np.uint8))
    with pytest.raises(ValueError):
        toeplitz_extract(np.ones(10, np.uint8), 5, np.ones(10, np.uint8))
