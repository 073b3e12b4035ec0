"""
Configuration, enumerations and constants for MDI-QKD simulation and analysis
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Sequence, Tuple


class Basis(Enum):
    """Preparation basis: rectilinear (Z) or diagonal (X)"""
    Z = "Z"
    X = "X"

    @property
    def index(self) -> int:
        return BASES.index(self)


class IntensityLabel(Enum):
    """Intensity classes of the two-decoy protocol (mu > nu > omega)"""
    SIGNAL = "signal"
    DECOY1 = "decoy1"
    DECOY2 = "decoy2"

    @property
    def index(self) -> int:
        return INTENSITY_ORDER.index(self)

    @property
    def symbol(self) -> str:
        return INTENSITY_SYMBOLS[self]


class Party(Enum):
    ALICE = "alice"
    BOB = "bob"


class DetectorLayout(Enum):
    """Which of Charlie's four detectors are installed"""
    ONE_PBS = "one_pbs"  # D1H, D1V
    FULL = "full"        # D1H, D1V, D2H, D2V


class CoincidenceClass(Enum):
    """Bell-state measurement outcome announced by Charlie"""
    NONE = "none"
    PSI_PLUS = "psi_plus"
    PSI_MINUS = "psi_minus"

    @property
    def code(self) -> int:
        return OUTCOME_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "CoincidenceClass":
        return OUTCOMES_BY_CODE[int(code)]


class BoundMode(Enum):
    INFINITE_KEY = "infinite_key"
    FINITE_N_ALPHA = "finite_n_alpha"


class Y11Formula(Enum):
    """
    Denominator convention for the analytic two-decoy Y11 lower bound.

    AS_PRINTED keeps (mu-nu)^2 (nu-omega)^2 (mu-nu); DERIVED uses
    (mu-omega)^2 (nu-omega)^2 (mu-nu), the exact coefficient of Y11 in the
    bracketed Poisson differences.
    """
    AS_PRINTED = "as_printed"
    DERIVED = "derived"


class XPsiPlusPolicy(Enum):
    """How X-basis psi+ slots enter the sifted key"""
    KEEP = "keep"        # kept without a bit flip (psi+ is correlated in X)
    DISCARD = "discard"  # dropped from the sifted key


BASES: Tuple[Basis, Basis] = (Basis.Z, Basis.X)
INTENSITY_ORDER: Tuple[IntensityLabel, IntensityLabel, IntensityLabel] = (
    IntensityLabel.SIGNAL, IntensityLabel.DECOY1, IntensityLabel.DECOY2
)
INTENSITY_SYMBOLS: Dict[IntensityLabel, str] = {
    IntensityLabel.SIGNAL: "mu",
    IntensityLabel.DECOY1: "nu",
    IntensityLabel.DECOY2: "omega",
}
OUTCOME_CODES: Dict[CoincidenceClass, int] = {
    CoincidenceClass.NONE: 0,
    CoincidenceClass.PSI_PLUS: 1,
    CoincidenceClass.PSI_MINUS: 2,
}
OUTCOMES_BY_CODE: Dict[int, CoincidenceClass] = {v: k for k, v in OUTCOME_CODES.items()}

DETECTOR_LABELS: Tuple[str, str, str, str] = ("D1H", "D1V", "D2H", "D2V")

# H <-> (Z,0), V <-> (Z,1), + <-> (X,0), - <-> (X,1)
POLARIZATION_LABELS: Dict[str, Tuple[Basis, int]] = {
    "H": (Basis.Z, 0),
    "V": (Basis.Z, 1),
    "+": (Basis.X, 0),
    "-": (Basis.X, 1),
}

# Random-stream layout of the Monte Carlo engine. Changing it changes results.
TRIALS_PER_BATCH = 65536

# q = p(mu)^2 p(Z)^2 = 0.011 with p(mu) = 0.2  ->  p(Z) = sqrt(0.011) / 0.2
DEFAULT_BASIS_PROBABILITY_Z = 0.5244
OMEGA_FLOOR = 0.001
PROBABILITY_TOLERANCE = 1e-12


@dataclass(frozen=True)
class IntensityClass:
    """One intensity setting: label and mean photon number per pulse"""
    label: IntensityLabel
    mean_photon_number: float


@dataclass(frozen=True)
class Bb84State:
    """One of the four BB84 polarization states"""
    basis: Basis
    bit: int

    @property
    def label(self) -> str:
        for name, (basis, bit) in POLARIZATION_LABELS.items():
            if basis is self.basis and bit == self.bit:
                return name
        raise ValueError(f"Bit must be 0 or 1, got {self.bit}")

    @classmethod
    def from_label(cls, label: str) -> "Bb84State":
        if label not in POLARIZATION_LABELS:
            raise ValueError(f"Unknown polarization label: {label!r}")
        basis, bit = POLARIZATION_LABELS[label]
        return cls(basis=basis, bit=bit)


def normalize_ratio(ratio: Sequence[float]) -> Tuple[float, float, float]:
    """Turn a pulse-count ratio such as 4:9:7 into probabilities 0.2/0.45/0.35"""
    if len(ratio) != 3:
        raise ValueError(f"Intensity ratio needs three entries, got {len(ratio)}")
    total = float(sum(ratio))
    if total <= 0 or any(r < 0 for r in ratio):
        raise ValueError(f"Intensity ratio must be nonnegative with a positive sum: {list(ratio)}")
    return tuple(float(r) / total for r in ratio)


@dataclass(frozen=True)
class ProtocolConfig:
    """Source settings shared by Alice and Bob"""
    intensities: Tuple[IntensityClass, IntensityClass, IntensityClass]
    intensity_probabilities: Tuple[float, float, float]
    basis_probability_z: float
    total_pulses: int
    repetition_rate: float = 500e3  # pulses/s, informational
    basis_probability_z_bob: Optional[float] = None

    @classmethod
    def from_values(
        cls,
        mu: float,
        nu: float,
        omega: float,
        intensity_probabilities: Sequence[float] = (0.2, 0.45, 0.35),
        basis_probability_z: float = DEFAULT_BASIS_PROBABILITY_Z,
        total_pulses: int = 169_000_000_000,
        repetition_rate: float = 500e3,
        basis_probability_z_bob: Optional[float] = None,
    ) -> "ProtocolConfig":
        means = (mu, nu, omega)
        return cls(
            intensities=tuple(
                IntensityClass(label, float(m)) for label, m in zip(INTENSITY_ORDER, means)
            ),
            intensity_probabilities=tuple(float(p) for p in intensity_probabilities),
            basis_probability_z=float(basis_probability_z),
            total_pulses=int(total_pulses),
            repetition_rate=float(repetition_rate),
            basis_probability_z_bob=basis_probability_z_bob,
        )

    @property
    def means(self) -> Tuple[float, float, float]:
        return tuple(i.mean_photon_number for i in self.intensities)

    @property
    def mu(self) -> float:
        return self.intensities[0].mean_photon_number

    @property
    def nu(self) -> float:
        return self.intensities[1].mean_photon_number

    @property
    def omega(self) -> float:
        return self.intensities[2].mean_photon_number

    @property
    def p_z_alice(self) -> float:
        return self.basis_probability_z

    @property
    def p_z_bob(self) -> float:
        if self.basis_probability_z_bob is None:
            return self.basis_probability_z
        return self.basis_probability_z_bob

    def basis_probability(self, party: Party, basis: Basis) -> float:
        p_z = self.p_z_alice if party is Party.ALICE else self.p_z_bob
        return p_z if basis is Basis.Z else 1.0 - p_z

    @property
    def signal_pair_fraction(self) -> float:
        """q: fraction of slots where both send signal states in Z"""
        p_mu = self.intensity_probabilities[0]
        return p_mu * p_mu * self.p_z_alice * self.p_z_bob


@dataclass(frozen=True)
class ChannelParams:
    """Symmetric fiber link: each party sits fiber_length_km away from Charlie"""
    fiber_length_km: float = 5.0
    attenuation_db_per_km: float = 0.2  # standard telecom fiber
    misalignment: float = 0.01

    @property
    def transmittance(self) -> float:
        return 10.0 ** (-self.attenuation_db_per_km * self.fiber_length_km / 10.0)


@dataclass(frozen=True)
class DetectorParams:
    """Threshold detectors at Charlie; dark counts are per gate (pulse slot)"""
    efficiency: float = 0.1
    dark_count_probability: float = 5e-5
    layout: DetectorLayout = DetectorLayout.ONE_PBS

    @property
    def active_mask(self) -> Tuple[bool, bool, bool, bool]:
        if self.layout is DetectorLayout.ONE_PBS:
            return (True, True, False, False)
        return (True, True, True, True)


@dataclass(frozen=True)
class FluctuationConfig:
    """Gaussian fluctuation envelope: n_alpha standard deviations"""
    n_alpha: float = 3.0
    security_epsilon: float = 1e-3  # informational; three standard deviations


@dataclass(frozen=True)
class AnalysisConfig:
    """Settings for the bound/key-rate chain"""
    fluctuation: FluctuationConfig = field(default_factory=FluctuationConfig)
    ec_inefficiency: float = 1.16
    quadrature_points: int = 64
    lp_cutoff: int = 10
    y11_formula: Y11Formula = Y11Formula.DERIVED
    run_oracle: bool = True


# Global configuration instances
DEFAULT_PROTOCOL = ProtocolConfig.from_values(0.3, 0.1, 0.01)
DEFAULT_CHANNEL = ChannelParams()
DEFAULT_DETECTOR = DetectorParams()
DEFAULT_ANALYSIS = AnalysisConfig()

# Values reported for the 10 km polarization MDI-QKD run these defaults describe
PUBLISHED_REFERENCE: Dict[str, float] = {
    "y11_z_lower": 4.1e-4,
    "e11_x_upper": 0.151,
    "rate": 9.8e-9,
    "key_length": 1600,
    "total_pulses": 1.69e11,
}
