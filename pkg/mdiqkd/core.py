"""
Core model operations: config validation, pulse allocation and channel bookkeeping
"""
import logging
import math
from typing import Dict, List

import numpy as np

from .config import (
    BASES, INTENSITY_ORDER, OMEGA_FLOOR, PROBABILITY_TOLERANCE, Basis, Bb84State,
    ChannelParams, DetectorParams, IntensityLabel, Party, ProtocolConfig,
)
from .exceptions import DomainError
from .models import TALLY_SHAPE, CellKey, ValidationResult

logger = logging.getLogger(__name__)


def validate_config(cfg: ProtocolConfig) -> ValidationResult:
    """
    Check every ProtocolConfig invariant and collect the violations.

    Never raises; callers who want an exception use
    ``validate_config(cfg).raise_if_invalid()``.
    """
    violations: List[str] = []

    labels = tuple(i.label for i in cfg.intensities)
    if labels != INTENSITY_ORDER:
        violations.append(f"intensities must be ordered signal, decoy1, decoy2; got {[l.value for l in labels]}")

    means = cfg.means
    if not all(math.isfinite(m) for m in means):
        violations.append("mean photon numbers must be finite")
    else:
        mu, nu, omega = means
        if omega < 0:
            violations.append("decoy2 mean photon number must be nonnegative")
        if not mu > nu:
            violations.append("signal must exceed decoy1")
        if not nu > omega:
            violations.append("decoy1 must exceed decoy2")

    probs = cfg.intensity_probabilities
    if len(probs) != 3:
        violations.append(f"need three intensity probabilities, got {len(probs)}")
    else:
        if any(p < 0 or not math.isfinite(p) for p in probs):
            violations.append("intensity probabilities must be nonnegative")
        if abs(sum(probs) - 1.0) > PROBABILITY_TOLERANCE:
            violations.append(f"probabilities must sum to 1 (sum is {sum(probs):.12g})")

    for party, p_z in ((Party.ALICE, cfg.p_z_alice), (Party.BOB, cfg.p_z_bob)):
        if not (0.0 <= p_z <= 1.0):
            violations.append(f"{party.value} basis probability p(Z) must lie in [0, 1], got {p_z}")

    if cfg.total_pulses < 1:
        violations.append(f"total_pulses must be at least 1, got {cfg.total_pulses}")
    if cfg.repetition_rate <= 0:
        violations.append("repetition_rate must be positive")

    if violations:
        logger.debug(f"Config validation found {len(violations)} violation(s)")
    return ValidationResult(violations)


def validate_channel(ch: ChannelParams) -> ValidationResult:
    violations: List[str] = []
    if ch.fiber_length_km < 0:
        violations.append("fiber length must be nonnegative")
    if ch.attenuation_db_per_km < 0:
        violations.append("attenuation must be nonnegative")
    if not (0.0 <= ch.misalignment <= 0.5):
        violations.append(f"misalignment e_d must lie in [0, 0.5], got {ch.misalignment}")
    eta = ch.transmittance
    if not (0.0 < eta <= 1.0):
        violations.append(f"transmittance must lie in (0, 1], got {eta}")
    return ValidationResult(violations)


def validate_detector(det: DetectorParams) -> ValidationResult:
    violations: List[str] = []
    if not (0.0 <= det.efficiency <= 1.0):
        violations.append(f"detector efficiency must lie in [0, 1], got {det.efficiency}")
    if not (0.0 <= det.dark_count_probability < 1.0):
        violations.append(f"dark count probability must lie in [0, 1), got {det.dark_count_probability}")
    return ValidationResult(violations)


def validate_all(cfg: ProtocolConfig, ch: ChannelParams, det: DetectorParams) -> ValidationResult:
    """Combined validation of source, channel and detector settings"""
    violations = []
    for result in (validate_config(cfg), validate_channel(ch), validate_detector(det)):
        violations.extend(result.violations)
    return ValidationResult(violations)


def transmittance(length_km: float, attenuation_db_per_km: float = 0.2) -> float:
    """eta_ch = 10^(-attenuation * length / 10)"""
    if length_km < 0 or attenuation_db_per_km < 0:
        raise DomainError(f"Length and attenuation must be nonnegative: {length_km} km, {attenuation_db_per_km} dB/km")
    return 10.0 ** (-attenuation_db_per_km * length_km / 10.0)


def polarization_label(state: Bb84State) -> str:
    return state.label


def state_from_label(label: str) -> Bb84State:
    try:
        return Bb84State.from_label(label)
    except ValueError as e:
        raise DomainError(str(e)) from e


def pair_pulse_count_array(cfg: ProtocolConfig) -> np.ndarray:
    """
    Expected pulse-pair counts N^W_{IA IB} as a (basis, I_A, I_B) array.

    Only basis-matched slots are counted; mismatched-basis slots are sifted
    away and carry no cell.
    """
    probs = np.asarray(cfg.intensity_probabilities, dtype=float)
    intensity_pairs = np.outer(probs, probs)
    basis_weights = np.array([
        cfg.basis_probability(Party.ALICE, basis) * cfg.basis_probability(Party.BOB, basis)
        for basis in BASES
    ])
    counts = float(cfg.total_pulses) * basis_weights[:, None, None] * intensity_pairs[None, :, :]
    assert counts.shape == TALLY_SHAPE
    return counts


def pair_pulse_counts(cfg: ProtocolConfig) -> Dict[CellKey, float]:
    """Map (basis, I_A, I_B) -> expected count N^W_{IA IB}"""
    counts = pair_pulse_count_array(cfg)
    return {
        (basis, ia, ib): float(counts[basis.index, ia.index, ib.index])
        for basis in BASES
        for ia in INTENSITY_ORDER
        for ib in INTENSITY_ORDER
    }


def counts_from_mapping(counts: Dict[CellKey, float]) -> np.ndarray:
    """Inverse of pair_pulse_counts; every cell must be present"""
    array = np.zeros(TALLY_SHAPE, dtype=float)
    for basis in BASES:
        for ia in INTENSITY_ORDER:
            for ib in INTENSITY_ORDER:
                key = (basis, ia, ib)
                if key not in counts:
                    raise DomainError(f"Pulse count missing for cell {basis.value}/{ia.value}/{ib.value}")
                array[basis.index, ia.index, ib.index] = counts[key]
    return array


def signal_fraction(cfg: ProtocolConfig) -> float:
    """q = N^Z_{mu mu} / N"""
    return cfg.signal_pair_fraction


def require_valid_point(mu: float, nu: float, omega: float) -> None:
    """Raise DomainError unless mu > nu > omega >= OMEGA_FLOOR"""
    if not (mu > nu > omega >= OMEGA_FLOOR):
        raise DomainError(f"Intensities must satisfy mu > nu > omega >= {OMEGA_FLOOR}; got {mu}, {nu}, {omega}")


def intensity_label_from_value(value: str) -> IntensityLabel:
    """Accept either the enum value ('signal') or the symbol ('mu')"""
    for label in INTENSITY_ORDER:
        if value in (label.value, label.symbol):
            return label
    raise DomainError(f"Unknown intensity label: {value!r}")


def basis_from_value(value: str) -> Basis:
    try:
        return Basis(value.strip().upper())
    except ValueError as e:
        raise DomainError(f"Unknown basis: {value!r}") from e
