import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdiqds.errors import ConfigError
from mdiqds.quantum_sim import (
    BASES,
    INTENSITIES,
    EventStream,
    LinkConfig,
    SourceConfig,
    TallyMatrix,
    analytic_link_model,
    expected_pair_fractions,
    run_link,
    sample_session,
    sift_anticorrelated,
    tagged_yield,
)

DESK = LinkConfig(loss_a_db=0, loss_b_db=0, insertion_loss_db=0, z_misalignment=0.0005, visibility=0.98)


def test_zero_pulses_gives_empty_tallies():
    tm = sample_session(SourceConfig(), LinkConfig(), 0, seed=1)
    assert tm.n_pulses == 0
    assert tm.sent.sum() == tm.success.sum() == tm.mismatch_sent.sum() == 0


def test_same_seed_same_tallies():
    a = sample_session(SourceConfig(), DESK, 200_000, seed=7)
    b = sample_session(SourceConfig(), DESK, 200_000, seed=7)
    assert a.to_text() == b.to_text()
    c = sample_session(SourceConfig(), DESK, 200_000, seed=8)
    assert a.to_text() != c.to_text()


def test_chunked_sampling_is_additive():
    src = SourceConfig()
    whole = run_link(src, DESK, 300_000, seed=3, chunk_size=100_000).tallies
    assert whole.n_pulses == 300_000
    whole.check()


@settings(max_examples=25, deadline=None)
@given(n=st.integers(0, 50_000), seed=st.integers(0, 2**32))
def test_tally_invariants(n, seed):
    tm = sample_session(SourceConfig(), DESK, n, seed)
    tm.check()
    assert (tm.errors <= tm.success).all()
    assert (tm.mismatch_success <= tm.mismatch_sent).all()
    assert int(tm.sent.sum() + tm.mismatch_sent.sum()) == n


def test_tally_text_round_trip():
    tm = sample_session(SourceConfig(), DESK, 100_000, seed=11)
    back = TallyMatrix.from_text(tm.to_text())
    for name in ("sent", "success", "errors", "mismatch_sent", "mismatch_success"):
        assert np.array_equal(getattr(tm, name), getattr(back, name))
    assert back.to_text() == tm.to_text()


def test_pair_fractions_sum_to_one():
    fr = expected_pair_fractions(SourceConfig())
    assert sum(fr.values()) == pytest.approx(1.0)
    # signal pulses are always Z, so (mu, mu) never lands in X
    assert fr.get(("mu", "mu", "X"), 0.0) == 0.0


def test_simulated_gains_match_analytic_model():
    """Per-setting success and error counts within 5 sigma of the closed-form model."""
    src = SourceConfig()
    n = 20_000_000
    tm = sample_session(src, DESK, n, seed=5)
    model = analytic_link_model(src, DESK)
    for b in INTENSITIES:
        for c in INTENSITIES:
            for basis in BASES:
                sent, succ, err = tm.get(b, c, basis)
                if sent == 0:
                    continue
                q = model.q(b, c, basis)
                sd = np.sqrt(sent * q * (1 - q)) + 1
                assert abs(succ - sent * q) < 5 * sd, (b, c, basis)
                pe = q * model.e(b, c, basis)
                sd_e = np.sqrt(sent * pe * (1 - pe)) + 1
                assert abs(err - sent * pe) < 5 * sd_e, (b, c, basis)


def test_z_qber_of_published_link_matches_noise_model():
    src = SourceConfig()
    link = LinkConfig()
    tm = sample_session(src, link, 200_000_000, seed=2)
    _, succ, err = tm.get("mu", "mu", "Z")
    e = analytic_link_model(src, link).e("mu", "mu", "Z")
    assert abs(err - succ * e) < 5 * np.sqrt(succ * e * (1 - e)) + 1


def test_single_photon_pairs_in_x_follow_visibility():
    link = LinkConfig(dark_rate_hz=0, spurious_rate_hz=0, visibility=0.9)
    succ, err = tagged_yield(link, "X", 1, 1)
    assert err / succ == pytest.approx(0.05)
    # one photon from each sender in Z: errors only through misalignment
    link_z = LinkConfig(dark_rate_hz=0, spurious_rate_hz=0, z_misalignment=0.0)
    succ, err = tagged_yield(link_z, "Z", 1, 1)
    assert succ > 0 and err == 0.0


def test_vacuum_only_succeeds_through_darks():
    link = LinkConfig(dark_rate_hz=0, spurious_rate_hz=0)
    assert tagged_yield(link, "Z", 0, 0) == (0.0, 0.0)
    assert tagged_yield(link, "Z", 0, 1) == (0.0, 0.0)


def test_oracle_tags_cover_every_success():
    tm = sample_session(SourceConfig(), DESK, 2_000_000, seed=4, oracle_mode=True)
    for i, b in enumerate(INTENSITIES):
        for j, c in enumerate(INTENSITIES):
            for k, basis in enumerate(BASES):
                rows = tm.tags.get((i, j, k), np.zeros((0, 3)))
                assert len(rows) == tm.success[i, j, k]
                t = tm.tag_counts(b, c, basis)
                assert t["single_errors"] <= t["single"] <= tm.success[i, j, k]
    # vacuum senders emit no photons
    assert tm.tag_counts("w", "mu", "Z")["vacuum_a"] == tm.get("w", "mu", "Z")[1]


def test_sifting_undoes_anticorrelation():
    run = run_link(SourceConfig(), DESK, 2_000_000, seed=9)
    s = sift_anticorrelated(run.events)
    tm = run.tallies
    assert len(s) == tm.success.sum()
    for k in range(2):
        mask = s.basis == k
        assert mask.sum() == tm.success[:, :, k].sum()
        assert (s.bits_a[mask] != s.bits_b[mask]).sum() == tm.errors[:, :, k].sum()
    assert s.qber(0) < 0.01


def test_sifting_rejects_ragged_events():
    ev = EventStream.empty()
    ev.bit_a = np.zeros(3, np.uint8)
    with pytest.raises(ValueError):
        sift_anticorrelated(ev)


@pytest.mark.parametrize(
    "kwargs",
    [dict(p_mu=0.5, p_nu=0.5, p_w=0.5), dict(mu=0.1, nu=0.33), dict(w=0.01)],
)
def test_bad_source_rejected(kwargs):
    with pytest.raises(ConfigError):
        SourceConfig(**kwargs)


def test_bad_link_rejected():
    with pytest.raises(ConfigError):
        LinkConfig(visibility=1.5)
    with pytest.raises(ConfigError):
        LinkConfig(loss_a_db=-1)
