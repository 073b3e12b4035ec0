"""
Coherent-state model of the MDI-QKD optical train.

Pulses are encoded as polarization amplitudes, Alice's channel is rotated
about the H-V axis of the Poincare sphere, both channels are attenuated and
the two inputs interfere on a 50:50 beam splitter followed by polarizing beam
splitters and threshold detectors. Coherent states factorize across modes, so
the four detectors click independently with p = 1 - (1 - p_d) exp(-eta |alpha|^2);
no approximation is involved beyond the per-slot coincidence window.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np

from .config import (
    DETECTOR_LABELS, TRIALS_PER_BATCH, Basis, Bb84State, ChannelParams,
    CoincidenceClass, DetectorLayout, DetectorParams, IntensityClass, Party,
    ProtocolConfig,
)
from .core import pair_pulse_count_array, validate_all
from .exceptions import DomainError
from .models import TALLY_SHAPE, TallyMatrix
from .tally import merge

logger = logging.getLogger(__name__)

SQRT_HALF = 1.0 / math.sqrt(2.0)
N_CELLS = int(np.prod(TALLY_SHAPE))

# Jones vectors indexed [basis, bit, polarization]: H, V, +, -
JONES = np.array(
    [
        [[1.0, 0.0], [0.0, 1.0]],
        [[SQRT_HALF, SQRT_HALF], [SQRT_HALF, -SQRT_HALF]],
    ],
    dtype=complex,
)

PSI_PLUS_CODE = CoincidenceClass.PSI_PLUS.code
PSI_MINUS_CODE = CoincidenceClass.PSI_MINUS.code


@dataclass(frozen=True)
class PulseDescriptor:
    """One emitted pulse"""
    party: Party
    intensity: IntensityClass
    state: Bb84State
    global_phase: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.global_phase < 2.0 * math.pi):
            raise DomainError(f"Global phase must lie in [0, 2pi), got {self.global_phase}")
        if self.intensity.mean_photon_number < 0:
            raise DomainError("Mean photon number must be nonnegative")


@dataclass(frozen=True)
class ModeAmplitudes:
    """
    Complex amplitudes of the four optical modes, shape (..., 2, 2).

    Axis -2 is the spatial channel (0: Alice / output port 1, 1: Bob / output
    port 2), axis -1 the polarization (0: H, 1: V). Leading axes batch trials.
    """
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        if values.shape[-2:] != (2, 2):
            raise DomainError(f"Mode amplitudes need trailing shape (2, 2), got {values.shape}")
        object.__setattr__(self, "values", values)

    @classmethod
    def vacuum(cls) -> "ModeAmplitudes":
        return cls(np.zeros((2, 2), dtype=complex))

    @property
    def energy(self) -> np.ndarray:
        """Total mean photon number sum |alpha|^2"""
        return np.sum(np.abs(self.values) ** 2, axis=(-2, -1))

    @property
    def detector_intensities(self) -> np.ndarray:
        """|alpha|^2 per detector in D1H, D1V, D2H, D2V order, shape (..., 4)"""
        intensities = np.abs(self.values) ** 2
        return intensities.reshape(intensities.shape[:-2] + (4,))


@dataclass(frozen=True)
class ClickPattern:
    """Click flags for D1H, D1V, D2H, D2V"""
    clicks: Tuple[bool, bool, bool, bool]

    @classmethod
    def from_labels(cls, labels: Iterable[str]) -> "ClickPattern":
        labels = set(labels)
        unknown = labels - set(DETECTOR_LABELS)
        if unknown:
            raise DomainError(f"Unknown detector label(s): {sorted(unknown)}")
        return cls(tuple(name in labels for name in DETECTOR_LABELS))

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(name for name, hit in zip(DETECTOR_LABELS, self.clicks) if hit)


def _spatial_index(party: Party) -> int:
    return 0 if party is Party.ALICE else 1


def encode_pulse(p: PulseDescriptor) -> ModeAmplitudes:
    """sqrt(mean) * exp(i phase) * jones(state) in the party's spatial channel"""
    values = np.zeros((2, 2), dtype=complex)
    amplitude = math.sqrt(p.intensity.mean_photon_number) * np.exp(1j * p.global_phase)
    values[_spatial_index(p.party)] = amplitude * JONES[p.state.basis.index, p.state.bit]
    return ModeAmplitudes(values)


def misalignment_angle(e_d: float) -> float:
    """theta such that the induced single-photon X-basis error equals e_d"""
    if not (0.0 <= e_d <= 0.5):
        raise DomainError(f"Misalignment e_d must lie in [0, 0.5], got {e_d}")
    return 2.0 * math.asin(math.sqrt(e_d))


def apply_misalignment(m: ModeAmplitudes, e_d: float, party: Party = Party.ALICE) -> ModeAmplitudes:
    """Rotate one party's polarization about the H-V axis: diag(1, exp(i theta))"""
    theta = misalignment_angle(e_d)
    values = m.values.copy()
    values[..., _spatial_index(party), 1] *= np.exp(1j * theta)
    return ModeAmplitudes(values)


def apply_loss(m: ModeAmplitudes, eta_ch: float) -> ModeAmplitudes:
    if not (0.0 < eta_ch <= 1.0):
        raise DomainError(f"Channel transmittance must lie in (0, 1], got {eta_ch}")
    return ModeAmplitudes(m.values * math.sqrt(eta_ch))


def _beam_splitter(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Symmetric 50:50 BS per polarization; returns (..., 2 ports, 2 pols)"""
    out1 = (a + 1j * b) * SQRT_HALF
    out2 = (1j * a + b) * SQRT_HALF
    return np.stack([out1, out2], axis=-2)


def bsm_output_amplitudes(alice: ModeAmplitudes, bob: ModeAmplitudes) -> ModeAmplitudes:
    """
    Interfere Alice's and Bob's channels on the beam splitter and split the
    two output ports by polarization onto D1H, D1V, D2H, D2V.
    """
    if np.any(alice.values[..., 1, :] != 0) or np.any(bob.values[..., 0, :] != 0):
        raise DomainError("Alice and Bob amplitudes must occupy their own spatial channels")
    return ModeAmplitudes(_beam_splitter(alice.values[..., 0, :], bob.values[..., 1, :]))


def _click_probabilities(intensities: np.ndarray, det: DetectorParams) -> np.ndarray:
    """intensities (..., 4) -> click probabilities (..., 4); inactive detectors never click"""
    log_no_dark = math.log1p(-det.dark_count_probability)
    probs = -np.expm1(log_no_dark - det.efficiency * intensities)
    return probs * np.asarray(det.active_mask, dtype=float)


def click_probabilities(out: ModeAmplitudes, det: DetectorParams) -> np.ndarray:
    """Per-detector click probability in D1H, D1V, D2H, D2V order"""
    return _click_probabilities(out.detector_intensities, det)


def _classify_codes(clicks: np.ndarray) -> np.ndarray:
    """Boolean clicks (..., 4) -> outcome codes; exactly two clicks are required"""
    d1h, d1v, d2h, d2v = (clicks[..., k] for k in range(4))
    two_clicks = clicks.sum(axis=-1) == 2
    psi_plus = two_clicks & ((d1h & d1v) | (d2h & d2v))
    psi_minus = two_clicks & ((d1h & d2v) | (d1v & d2h))
    return np.where(psi_plus, PSI_PLUS_CODE, np.where(psi_minus, PSI_MINUS_CODE, 0)).astype(np.int8)


def classify_coincidence(c: ClickPattern, det: DetectorParams) -> CoincidenceClass:
    clicks = np.asarray(c.clicks, dtype=bool)
    if np.any(clicks & ~np.asarray(det.active_mask)):
        raise DomainError(f"Click on an inactive detector for layout {det.layout.value}: {c.labels}")
    return CoincidenceClass.from_code(_classify_codes(clicks))


def _error_flags(codes: np.ndarray, basis: np.ndarray, bit_a: np.ndarray, bit_b: np.ndarray) -> np.ndarray:
    """
    psi+ in Z and psi- in either basis are errors when the bits agree;
    psi+ in X is an error when they differ.
    """
    same = bit_a == bit_b
    psi_plus = codes == PSI_PLUS_CODE
    psi_minus = codes == PSI_MINUS_CODE
    x_basis = basis == Basis.X.index
    return (psi_plus & np.where(x_basis, ~same, same)) | (psi_minus & same)


def _encode_arrays(means: np.ndarray, basis: np.ndarray, bit: np.ndarray,
                   phase: np.ndarray) -> np.ndarray:
    """Vectorized encode_pulse; returns (n, 2) polarization amplitudes"""
    amplitude = np.sqrt(means) * np.exp(1j * phase)
    return amplitude[..., None] * JONES[basis, bit]


def _detector_intensities(amp_a: np.ndarray, amp_b: np.ndarray, ch: ChannelParams) -> np.ndarray:
    """Misalign Alice, attenuate both, interfere; returns (..., 4) intensities"""
    theta = misalignment_angle(ch.misalignment)
    amp_a = amp_a.copy()
    amp_a[..., 1] *= np.exp(1j * theta)
    scale = math.sqrt(ch.transmittance)
    out = _beam_splitter(amp_a * scale, amp_b * scale)
    intensities = np.abs(out) ** 2
    return intensities.reshape(intensities.shape[:-2] + (4,))


def simulate_trial(a: PulseDescriptor, b: PulseDescriptor, ch: ChannelParams, det: DetectorParams,
                   rng_stream: np.random.Generator) -> Tuple[CoincidenceClass, bool]:
    """
    One pulse pair through the full optical train.

    Draws four uniforms from rng_stream for the detectors. The error flag is
    only meaningful for basis-matched pairs and is False otherwise.
    """
    if a.party is not Party.ALICE or b.party is not Party.BOB:
        raise DomainError("simulate_trial expects Alice's pulse first and Bob's second")
    alice = apply_loss(apply_misalignment(encode_pulse(a), ch.misalignment), ch.transmittance)
    bob = apply_loss(encode_pulse(b), ch.transmittance)
    probs = click_probabilities(bsm_output_amplitudes(alice, bob), det)
    clicks = rng_stream.random(4) < probs
    code = _classify_codes(clicks)
    outcome = CoincidenceClass.from_code(code)
    if a.state.basis is not b.state.basis:
        return outcome, False
    flag = _error_flags(np.asarray(code), np.asarray(a.state.basis.index),
                        np.asarray(a.state.bit), np.asarray(b.state.bit))
    return outcome, bool(flag)


# ---------------------------------------------------------------------------
# Monte Carlo engine
# ---------------------------------------------------------------------------

@dataclass
class PartyChoices:
    """Per-slot random choices of one party"""
    intensity: np.ndarray  # index into INTENSITY_ORDER
    basis: np.ndarray      # index into BASES
    bit: np.ndarray
    phase: np.ndarray

    def __len__(self) -> int:
        return len(self.intensity)


def batch_streams(seed: int, batch_index: int) -> Tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Counter-based streams for (Alice, Bob, Charlie) in one batch"""
    return tuple(
        np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(batch_index, k))))
        for k in range(3)
    )


def batch_sizes(n_trials: int) -> list:
    full, rest = divmod(n_trials, TRIALS_PER_BATCH)
    return [TRIALS_PER_BATCH] * full + ([rest] if rest else [])


def draw_party_choices(rng: np.random.Generator, cfg: ProtocolConfig, party: Party, n: int) -> PartyChoices:
    """Draw order is fixed: intensity, basis, bit, phase"""
    probs = np.asarray(cfg.intensity_probabilities, dtype=float)
    intensity = rng.choice(3, size=n, p=probs / probs.sum())
    p_z = cfg.basis_probability(party, Basis.Z)
    basis = (rng.random(n) >= p_z).astype(np.int8)
    bit = rng.integers(0, 2, size=n, dtype=np.int8)
    phase = rng.random(n) * (2.0 * math.pi)
    return PartyChoices(intensity=intensity, basis=basis, bit=bit, phase=phase)


def charlie_outcomes(alice: PartyChoices, bob: PartyChoices, cfg: ProtocolConfig, ch: ChannelParams,
                     det: DetectorParams, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Outcome codes and error flags for a batch of slots"""
    means = np.asarray(cfg.means, dtype=float)
    amp_a = _encode_arrays(means[alice.intensity], alice.basis, alice.bit, alice.phase)
    amp_b = _encode_arrays(means[bob.intensity], bob.basis, bob.bit, bob.phase)
    probs = _click_probabilities(_detector_intensities(amp_a, amp_b, ch), det)
    clicks = rng.random((len(alice), 4)) < probs
    codes = _classify_codes(clicks)
    matched = alice.basis == bob.basis
    errors = matched & _error_flags(codes, alice.basis, alice.bit, bob.bit)
    return codes, errors


def tally_batch(alice: PartyChoices, bob: PartyChoices, codes: np.ndarray, errors: np.ndarray) -> TallyMatrix:
    """Count basis-matched slots per (basis, I_A, I_B) cell"""
    matched = alice.basis == bob.basis
    cells = alice.basis.astype(np.int64) * 9 + alice.intensity * 3 + bob.intensity
    cells = cells[matched]
    success = codes[matched] != 0
    err = errors[matched]
    return TallyMatrix(
        sent=np.bincount(cells, minlength=N_CELLS).reshape(TALLY_SHAPE),
        coincidences=np.bincount(cells[success], minlength=N_CELLS).reshape(TALLY_SHAPE),
        errors=np.bincount(cells[err], minlength=N_CELLS).reshape(TALLY_SHAPE),
    )


def _run_batch(args) -> TallyMatrix:
    cfg, ch, det, seed, batch_index, n = args
    rng_a, rng_b, rng_c = batch_streams(seed, batch_index)
    alice = draw_party_choices(rng_a, cfg, Party.ALICE, n)
    bob = draw_party_choices(rng_b, cfg, Party.BOB, n)
    codes, errors = charlie_outcomes(alice, bob, cfg, ch, det, rng_c)
    return tally_batch(alice, bob, codes, errors)


def run_monte_carlo(cfg: ProtocolConfig, ch: ChannelParams, det: DetectorParams, n_trials: int,
                    seed: int, workers: Optional[int] = None) -> TallyMatrix:
    """
    Sample n_trials pulse-pair slots and tally basis-matched outcomes.

    Trials are split into fixed-size batches with streams derived from
    (seed, batch_index), so the result does not depend on ``workers``.
    """
    if n_trials < 1:
        raise DomainError(f"n_trials must be at least 1, got {n_trials}")
    validate_all(cfg, ch, det).raise_if_invalid()

    jobs = [(cfg, ch, det, seed, b, n) for b, n in enumerate(batch_sizes(n_trials))]
    logger.info(f"Monte Carlo: {n_trials} trials in {len(jobs)} batch(es), seed={seed}, workers={workers or 1}")

    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_batch, jobs))
    else:
        results = [_run_batch(job) for job in jobs]

    total = TallyMatrix.empty()
    for result in results:
        total = merge(total, result)
    logger.debug(f"Monte Carlo coincidences: {int(total.coincidences.sum())}")
    return total


# ---------------------------------------------------------------------------
# Deterministic expectation engine
# ---------------------------------------------------------------------------

def expected_outcome_probabilities(cfg: ProtocolConfig, ch: ChannelParams, det: DetectorParams,
                                   quadrature_points: int = 64) -> Tuple[np.ndarray, np.ndarray]:
    """
    Phase-averaged success and error probabilities per (basis, I_A, I_B).

    Only the relative phase of the two pulses matters, so Alice is held at
    phase 0 and Bob's phase runs over a uniform grid of K points; the
    trapezoidal rule on a periodic analytic integrand converges spectrally.
    """
    if quadrature_points < 8:
        raise DomainError(f"Need at least 8 quadrature points, got {quadrature_points}")
    k = quadrature_points
    means = np.asarray(cfg.means, dtype=float)
    phases = 2.0 * math.pi * np.arange(k) / k

    # axes: basis, ia, ib, bit_a, bit_b, phase
    basis = np.arange(2)[:, None, None, None, None, None]
    ia = np.arange(3)[None, :, None, None, None, None]
    ib = np.arange(3)[None, None, :, None, None, None]
    bit_a = np.arange(2)[None, None, None, :, None, None]
    bit_b = np.arange(2)[None, None, None, None, :, None]
    phi = phases[None, None, None, None, None, :]

    shape = (2, 3, 3, 2, 2, k)
    amp_a = _encode_arrays(np.broadcast_to(means[ia], shape), np.broadcast_to(basis, shape),
                           np.broadcast_to(bit_a, shape), np.zeros(shape))
    amp_b = _encode_arrays(np.broadcast_to(means[ib], shape), np.broadcast_to(basis, shape),
                           np.broadcast_to(bit_b, shape), np.broadcast_to(phi, shape))
    p = _click_probabilities(_detector_intensities(amp_a, amp_b, ch), det)
    q = 1.0 - p
    p1h, p1v, p2h, p2v = (p[..., i] for i in range(4))
    q1h, q1v, q2h, q2v = (q[..., i] for i in range(4))

    if det.layout is DetectorLayout.ONE_PBS:
        prob_plus = p1h * p1v
        prob_minus = np.zeros_like(prob_plus)
    else:
        prob_plus = p1h * p1v * q2h * q2v + p2h * p2v * q1h * q1v
        prob_minus = p1h * p2v * q1v * q2h + p1v * p2h * q1h * q2v

    same = np.broadcast_to(bit_a == bit_b, shape)
    x_basis = np.broadcast_to(basis == Basis.X.index, shape)
    plus_error = np.where(x_basis, ~same, same)
    prob_error = prob_plus * plus_error + prob_minus * same

    success = (prob_plus + prob_minus).mean(axis=(3, 4, 5))
    error = prob_error.mean(axis=(3, 4, 5))
    return success, error


def expected_tallies(cfg: ProtocolConfig, ch: ChannelParams, det: DetectorParams,
                     quadrature_points: int = 64) -> TallyMatrix:
    """Real-valued tallies: sent = N^W_{IA IB}, coincidences = sent * Q, errors = sent * E * Q"""
    validate_all(cfg, ch, det).raise_if_invalid()
    success, error = expected_outcome_probabilities(cfg, ch, det, quadrature_points)
    sent = pair_pulse_count_array(cfg)
    return TallyMatrix(sent=sent, coincidences=sent * success, errors=sent * error)


def detector_layout_from_value(value: str) -> DetectorLayout:
    try:
        return DetectorLayout(value)
    except ValueError as e:
        raise DomainError(f"Unknown detector layout: {value!r}") from e


__all__ = [
    "PulseDescriptor", "ModeAmplitudes", "ClickPattern", "PartyChoices",
    "encode_pulse", "apply_misalignment", "apply_loss", "bsm_output_amplitudes",
    "click_probabilities", "classify_coincidence", "simulate_trial", "run_monte_carlo",
    "expected_tallies", "expected_outcome_probabilities", "batch_streams", "draw_party_choices",
    "charlie_outcomes", "tally_batch",
]
