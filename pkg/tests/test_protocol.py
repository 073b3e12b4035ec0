"""
Tests for the three-party session, sifting and post-processing
"""
import numpy as np
import pytest

from mdiqkd.config import (
    Basis, ChannelParams, DetectorLayout, DetectorParams, IntensityLabel, Party, ProtocolConfig,
    XPsiPlusPolicy,
)
from mdiqkd.exceptions import DomainError, SessionMismatchError
from mdiqkd.optics import PSI_MINUS_CODE, PSI_PLUS_CODE, run_monte_carlo
from mdiqkd.protocol import (
    AuthenticatedChannel, Message, Round, SessionConfig, SiftedKey, apply_bit_flip, measure_sifted_qber,
    qber_by_cell, run_session, session_transcript, sift,
)


def session(protocol, channel, detector, seed=3, n_slots=100_000, **kwargs) -> SessionConfig:
    return SessionConfig(protocol=protocol, channel=channel, detector=detector, seed=seed, n_slots=n_slots,
                         **kwargs)


def sifted_key(party, bits, basis, outcomes) -> SiftedKey:
    n = len(bits)
    return SiftedKey(
        party=party, session_id="test", slots=np.arange(n), bits=np.asarray(bits, dtype=np.int8),
        basis=np.asarray(basis, dtype=np.int8), intensity_a=np.zeros(n, dtype=np.int64),
        intensity_b=np.zeros(n, dtype=np.int64), outcomes=np.asarray(outcomes, dtype=np.int8),
    )


@pytest.fixture
def bright_session(protocol, ideal_detector):
    return session(protocol, ChannelParams(fiber_length_km=0.0), ideal_detector)


class TestRunSession:
    def test_deterministic(self, bright_session):
        first = run_session(bright_session)
        second = run_session(bright_session)
        assert first[2].equals(second[2])
        assert np.array_equal(first[0].announced_slots, second[0].announced_slots)
        assert np.array_equal(first[1].bit, second[1].bit)

    def test_tallies_match_monte_carlo(self, bright_session):
        _, _, tallies = run_session(bright_session)
        cfg = bright_session
        expected = run_monte_carlo(cfg.protocol, cfg.channel, cfg.detector, cfg.n_slots, cfg.seed)
        assert tallies.equals(expected)

    def test_party_order_does_not_matter(self, bright_session):
        alice_first = run_session(bright_session, party_order=(Party.ALICE, Party.BOB))
        bob_first = run_session(bright_session, party_order=(Party.BOB, Party.ALICE))
        assert alice_first[2].equals(bob_first[2])
        for a, b in zip(sift(*alice_first[:2]), sift(*bob_first[:2])):
            assert np.array_equal(a.slots, b.slots)
            assert np.array_equal(a.bits, b.bits)

    def test_both_parties_see_the_same_announcements(self, bright_session):
        alice, bob, _ = run_session(bright_session)
        assert len(alice.announced_slots) > 0
        assert np.array_equal(alice.announced_slots, bob.announced_slots)
        assert np.array_equal(alice.announced_outcomes, bob.announced_outcomes)
        assert all(a.outcome.code in (PSI_PLUS_CODE, PSI_MINUS_CODE) for a in alice.announcements[:10])

    def test_blind_detectors_announce_nothing(self, protocol, channel):
        cfg = session(protocol, channel, DetectorParams(efficiency=0.0, dark_count_probability=0.0), n_slots=5_000)
        alice, bob, tallies = run_session(cfg)
        assert len(alice.announced_slots) == 0
        key_a, key_b = sift(alice, bob)
        assert len(key_a) == len(key_b) == 0
        assert len(apply_bit_flip(key_b)) == 0
        assert np.isnan(measure_sifted_qber(key_a, key_b)).all()
        assert tallies.coincidences.sum() == 0

    def test_session_id_tracks_settings(self, protocol, channel, detector):
        assert session(protocol, channel, detector, seed=1).session_id != session(
            protocol, channel, detector, seed=2).session_id
        assert session(protocol, channel, detector).session_id == session(protocol, channel, detector).session_id

    def test_needs_slots(self, protocol, channel, detector):
        with pytest.raises(DomainError):
            session(protocol, channel, detector, n_slots=0)

    def test_transcript(self, bright_session):
        cfg = session(bright_session.protocol, bright_session.channel, bright_session.detector, n_slots=2_000)
        alice, bob, _ = run_session(cfg)
        records = list(session_transcript(alice, bob))
        assert len(records) == 2_000
        announced = {int(s) for s in alice.announced_slots}
        for record in records:
            assert (record["announcement"] is not None) == (record["slot"] in announced)
            assert record["alice"]["basis"] in ("Z", "X")


class TestSifting:
    def test_noiseless_z_keys_agree(self, protocol):
        cfg = session(protocol, ChannelParams(fiber_length_km=0.0, misalignment=0.0),
                      DetectorParams(efficiency=1.0, dark_count_probability=0.0), n_slots=1_000_000)
        alice, bob, _ = run_session(cfg)
        key_a, key_b = sift(alice, bob)
        key_b = apply_bit_flip(key_b)
        z = key_a.basis == Basis.Z.index
        assert z.sum() > 1000
        assert np.array_equal(key_a.bits[z], key_b.bits[z])

    @pytest.mark.parametrize("layout", ["one_pbs", "full"])
    def test_sifted_qber_equals_tallies(self, protocol, layout):
        det = DetectorParams(efficiency=1.0, layout=DetectorLayout(layout))
        cfg = session(protocol, ChannelParams(fiber_length_km=2.0), det, n_slots=200_000)
        alice, bob, tallies = run_session(cfg)
        key_a, key_b = sift(alice, bob)
        measured = measure_sifted_qber(key_a, apply_bit_flip(key_b))
        assert np.array_equal(np.isnan(measured), np.isnan(tallies.qbers))
        assert np.array_equal(np.nan_to_num(measured), np.nan_to_num(tallies.qbers))

    def test_retained_fraction_follows_basis_agreement(self):
        cfg = ProtocolConfig.from_values(0.3, 0.1, 0.01, basis_probability_z=0.5)
        noise_only = DetectorParams(efficiency=0.0, dark_count_probability=0.5)
        alice, bob, _ = run_session(session(cfg, ChannelParams(), noise_only, n_slots=200_000))
        key_a, _ = sift(alice, bob)
        assert len(key_a) / len(alice.announced_slots) == pytest.approx(0.5, abs=0.02)

    def test_keys_cover_identical_slots(self, bright_session):
        key_a, key_b = sift(*run_session(bright_session)[:2])
        assert np.array_equal(key_a.slots, key_b.slots)
        assert np.array_equal(key_a.basis, key_b.basis)
        assert np.array_equal(key_a.intensity_b, key_b.intensity_b)

    def test_discard_policy_drops_x_psi_plus(self, protocol, ideal_detector):
        cfg = session(protocol, ChannelParams(fiber_length_km=0.0), ideal_detector,
                      x_psi_plus_policy=XPsiPlusPolicy.DISCARD)
        key_a, key_b = sift(*run_session(cfg)[:2])
        x_psi_plus = (key_a.basis == Basis.X.index) & (key_a.outcomes == PSI_PLUS_CODE)
        assert not x_psi_plus.any()
        assert (key_a.basis == Basis.Z.index).any()

    def test_views_from_different_sessions(self, protocol, ideal_detector):
        channel = ChannelParams(fiber_length_km=0.0)
        first = run_session(session(protocol, channel, ideal_detector, seed=1, n_slots=5_000))
        second = run_session(session(protocol, channel, ideal_detector, seed=2, n_slots=5_000))
        with pytest.raises(SessionMismatchError):
            sift(first[0], second[1])

    def test_key_material_is_signal_z(self, bright_session):
        key_a, _ = sift(*run_session(bright_session)[:2])
        material = key_a.key_material()
        assert (material.basis == Basis.Z.index).all()
        assert (material.intensity_a == 0).all() and (material.intensity_b == 0).all()
        assert len(material) + int(key_a.estimation_mask.sum()) == len(key_a)


class TestPostProcessing:
    def test_bit_flip_rules(self):
        key = sifted_key(Party.BOB, bits=[0, 1, 0, 1], basis=[0, 0, 1, 1],
                         outcomes=[PSI_PLUS_CODE, PSI_MINUS_CODE, PSI_PLUS_CODE, PSI_MINUS_CODE])
        assert apply_bit_flip(key).bits.tolist() == [1, 0, 0, 0]

    def test_outcomes_must_match_key(self):
        key = sifted_key(Party.BOB, bits=[0, 1], basis=[0, 0], outcomes=[PSI_PLUS_CODE, PSI_PLUS_CODE])
        with pytest.raises(SessionMismatchError):
            apply_bit_flip(key, outcomes=[PSI_PLUS_CODE])
        with pytest.raises(DomainError):
            apply_bit_flip(key, outcomes=[PSI_PLUS_CODE, 0])

    def test_identical_keys_have_no_errors(self):
        a = sifted_key(Party.ALICE, bits=[0, 1, 1, 0], basis=[0, 0, 1, 1], outcomes=[1, 1, 1, 1])
        b = sifted_key(Party.BOB, bits=[0, 1, 1, 0], basis=[0, 0, 1, 1], outcomes=[1, 1, 1, 1])
        rates = measure_sifted_qber(a, b)
        assert rates[0, 0, 0] == 0.0 and rates[1, 0, 0] == 0.0
        assert np.isnan(rates[0, 1, 1])

    def test_complementary_keys_always_disagree(self):
        a = sifted_key(Party.ALICE, bits=[0, 1, 1, 0], basis=[0, 0, 1, 1], outcomes=[1, 1, 1, 1])
        b = sifted_key(Party.BOB, bits=[1, 0, 0, 1], basis=[0, 0, 1, 1], outcomes=[1, 1, 1, 1])
        rates = qber_by_cell(measure_sifted_qber(a, b))
        assert rates[(Basis.Z, IntensityLabel.SIGNAL, IntensityLabel.SIGNAL)] == 1.0
        assert rates[(Basis.X, IntensityLabel.SIGNAL, IntensityLabel.SIGNAL)] == 1.0

    def test_misaligned_keys(self):
        a = sifted_key(Party.ALICE, bits=[0, 1], basis=[0, 0], outcomes=[1, 1])
        b = sifted_key(Party.BOB, bits=[0], basis=[0], outcomes=[1])
        with pytest.raises(SessionMismatchError):
            measure_sifted_qber(a, b)


class TestAuthenticatedChannel:
    def test_delivers_to_recipient_only(self):
        channel = AuthenticatedChannel()
        channel.send(Message(Round.ANNOUNCE, "charlie", "alice", {"n": 1}))
        channel.send(Message(Round.ANNOUNCE, "charlie", "bob", {"n": 2}))
        assert [m.payload["n"] for m in channel.deliver(Round.ANNOUNCE, "bob")] == [2]
        assert [m.payload["n"] for m in channel.deliver(Round.ANNOUNCE, "alice")] == [1]
        assert len(channel.log) == 2

    def test_closed_rounds_reject_messages(self):
        channel = AuthenticatedChannel()
        channel.deliver(Round.RECONCILE, "alice")
        with pytest.raises(DomainError):
            channel.send(Message(Round.ANNOUNCE, "charlie", "alice", {}))
