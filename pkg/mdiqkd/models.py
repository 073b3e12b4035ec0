"""
Data models for detection statistics, decoy-state bounds and key-rate reports
"""
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np

from .config import (
    BASES, INTENSITY_ORDER, Basis, BoundMode, IntensityLabel, PUBLISHED_REFERENCE
)
from .exceptions import ConfigValidationError, TallyStructureError

TALLY_SHAPE = (2, 3, 3)  # [basis, intensity_a, intensity_b]
CellKey = Tuple[Basis, IntensityLabel, IntensityLabel]


def cell_keys() -> Iterator[CellKey]:
    """All 18 (basis, I_A, I_B) cells in storage order"""
    for basis in BASES:
        for ia in INTENSITY_ORDER:
            for ib in INTENSITY_ORDER:
                yield basis, ia, ib


def cell_index(basis: Basis, ia: IntensityLabel, ib: IntensityLabel) -> Tuple[int, int, int]:
    return basis.index, ia.index, ib.index


def sci(value: Optional[float]) -> Optional[str]:
    """Fixed scientific notation with 6 significant digits"""
    if value is None:
        return None
    return f"{float(value):.5e}"


@dataclass
class ValidationResult:
    """Outcome of validate_config: empty violation list means ok"""
    violations: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def raise_if_invalid(self) -> None:
        if self.violations:
            raise ConfigValidationError(self.violations)


@dataclass
class TallyMatrix:
    """
    Detection statistics per (basis W, intensity I_A, intensity I_B).

    Counts are integers for Monte Carlo and session tallies; expected tallies
    and tables reconstructed from published rates carry real-valued counts.
    """
    sent: np.ndarray
    coincidences: np.ndarray
    errors: np.ndarray

    def __post_init__(self):
        for name in ("sent", "coincidences", "errors"):
            arr = np.asarray(getattr(self, name))
            if arr.shape != TALLY_SHAPE:
                raise TallyStructureError(f"Tally field '{name}' must have shape {TALLY_SHAPE}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise TallyStructureError(f"Tally field '{name}' contains non-finite entries")
            setattr(self, name, arr)

        slack = 1e-9 * np.maximum(1.0, np.abs(self.sent))
        if np.any(self.errors < 0) or np.any(self.coincidences < 0) or np.any(self.sent < 0):
            raise TallyStructureError("Tally counts must be nonnegative")
        if np.any(self.errors > self.coincidences + slack):
            raise TallyStructureError("Tally has more errors than coincidences")
        if np.any(self.coincidences > self.sent + slack):
            raise TallyStructureError("Tally has more coincidences than pulses sent")

    @classmethod
    def empty(cls, dtype=np.int64) -> "TallyMatrix":
        return cls(
            sent=np.zeros(TALLY_SHAPE, dtype=dtype),
            coincidences=np.zeros(TALLY_SHAPE, dtype=dtype),
            errors=np.zeros(TALLY_SHAPE, dtype=dtype),
        )

    @property
    def is_integral(self) -> bool:
        return all(np.issubdtype(a.dtype, np.integer) for a in (self.sent, self.coincidences, self.errors))

    @property
    def gains(self) -> np.ndarray:
        """Q^W_{IA IB}; 0 where nothing was sent"""
        sent = self.sent.astype(float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(sent > 0, self.coincidences / np.where(sent > 0, sent, 1.0), 0.0)

    @property
    def qbers(self) -> np.ndarray:
        """E^W_{IA IB}; NaN where there were no coincidences"""
        coinc = self.coincidences.astype(float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(coinc > 0, self.errors / np.where(coinc > 0, coinc, 1.0), np.nan)

    @property
    def error_gains(self) -> np.ndarray:
        """E*Q per cell (errors per pulse sent)"""
        sent = self.sent.astype(float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(sent > 0, self.errors / np.where(sent > 0, sent, 1.0), 0.0)

    def gain(self, basis: Basis, ia: IntensityLabel, ib: IntensityLabel) -> float:
        return float(self.gains[cell_index(basis, ia, ib)])

    def qber(self, basis: Basis, ia: IntensityLabel, ib: IntensityLabel) -> float:
        return float(self.qbers[cell_index(basis, ia, ib)])

    def basis_gains(self, basis: Basis) -> np.ndarray:
        return self.gains[basis.index]

    def basis_qbers(self, basis: Basis) -> np.ndarray:
        return self.qbers[basis.index]

    def rows(self) -> Iterator[Dict[str, Any]]:
        """One record per cell in storage order"""
        for basis, ia, ib in cell_keys():
            idx = cell_index(basis, ia, ib)
            yield {
                "basis": basis.value,
                "intensity_a": ia.value,
                "intensity_b": ib.value,
                "sent": self.sent[idx].item(),
                "coincidences": self.coincidences[idx].item(),
                "errors": self.errors[idx].item(),
                "gain": float(self.gains[idx]),
                "qber": float(self.qbers[idx]),
            }

    def equals(self, other: "TallyMatrix") -> bool:
        return (
            np.array_equal(self.sent, other.sent)
            and np.array_equal(self.coincidences, other.coincidences)
            and np.array_equal(self.errors, other.errors)
        )

    def to_dict(self) -> Dict[str, Any]:
        return {"cells": list(self.rows())}


@dataclass
class BoundedRates:
    """Fluctuation envelopes Q^{W,L/U} and (EQ)^{W,L/U} for every cell"""
    q: np.ndarray
    q_lower: np.ndarray
    q_upper: np.ndarray
    eq: np.ndarray
    eq_lower: np.ndarray
    eq_upper: np.ndarray
    n_alpha: float

    @classmethod
    def exact(cls, gains: np.ndarray, error_gains: np.ndarray) -> "BoundedRates":
        """Zero-width envelopes (infinite-key data)"""
        gains = np.asarray(gains, dtype=float)
        error_gains = np.asarray(error_gains, dtype=float)
        return cls(
            q=gains, q_lower=gains.copy(), q_upper=gains.copy(),
            eq=error_gains, eq_lower=error_gains.copy(), eq_upper=error_gains.copy(),
            n_alpha=0.0,
        )

    def for_basis(self, basis: Basis) -> "BoundedRates":
        """View restricted to a single basis, shape (3, 3)"""
        i = basis.index
        return BoundedRates(
            q=self.q[i], q_lower=self.q_lower[i], q_upper=self.q_upper[i],
            eq=self.eq[i], eq_lower=self.eq_lower[i], eq_upper=self.eq_upper[i],
            n_alpha=self.n_alpha,
        )


@dataclass(frozen=True)
class DecoyBounds:
    """Single-photon yield lower bounds and phase-error upper bound"""
    y11_z_lower: float
    y11_x_lower: float
    e11_x_upper: Optional[float]
    mode: BoundMode

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mode": self.mode.value,
            "y11_z_lower": sci(self.y11_z_lower),
            "y11_x_lower": sci(self.y11_x_lower),
            "e11_x_upper": sci(self.e11_x_upper),
        }


@dataclass(frozen=True)
class LPOracleResult:
    """Linear-program bounds on Y11 and e11 for one basis"""
    basis: Basis
    y11_min: float
    y11_max: float
    e11_max: Optional[float]
    cutoff: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "basis": self.basis.value,
            "cutoff": self.cutoff,
            "y11_min": sci(self.y11_min),
            "y11_max": sci(self.y11_max),
            "e11_max": sci(self.e11_max),
        }


@dataclass(frozen=True)
class KeyRateReport:
    """Inputs and result of the secure key-rate formula"""
    q: float
    p11: float
    y11_z_lower: float
    e11_x_upper: float
    gain_signal: float
    qber_signal: float
    f: float
    rate: float
    key_length: int
    total_pulses: float

    def __iter__(self):
        # unpacks as (R, L)
        yield self.rate
        yield self.key_length

    def to_dict(self) -> Dict[str, Any]:
        return {
            "q": sci(self.q),
            "p11": sci(self.p11),
            "y11_z_lower": sci(self.y11_z_lower),
            "e11_x_upper": sci(self.e11_x_upper),
            "gain_signal": sci(self.gain_signal),
            "qber_signal": sci(self.qber_signal),
            "f": sci(self.f),
            "rate": sci(self.rate),
            "key_length": int(self.key_length),
            "total_pulses": sci(self.total_pulses),
        }


@dataclass
class AnalysisReport:
    """Everything the analysis chain derives from one set of tallies"""
    infinite: DecoyBounds
    finite: DecoyBounds
    key_rate: KeyRateReport
    oracle_infinite: Dict[str, Optional[LPOracleResult]] = field(default_factory=dict)
    oracle_finite: Dict[str, Optional[LPOracleResult]] = field(default_factory=dict)
    published_key_rate: Optional[KeyRateReport] = None
    n_alpha: float = 3.0
    created_at: datetime = None

    def __post_init__(self):
        if self.created_at is None:
            self.created_at = datetime.now(timezone.utc)

    def comparison(self) -> Dict[str, Dict[str, Optional[str]]]:
        """Our finite-key values next to the published ones"""
        ours = {
            "y11_z_lower": self.finite.y11_z_lower,
            "e11_x_upper": self.finite.e11_x_upper,
            "rate": self.key_rate.rate,
            "key_length": float(self.key_rate.key_length),
        }
        table = {}
        for name, value in ours.items():
            reference = PUBLISHED_REFERENCE[name]
            ratio = None if value is None or reference == 0 else value / reference
            table[name] = {"ours": sci(value), "published": sci(reference), "ratio": sci(ratio)}
        return table

    def to_dict(self) -> Dict[str, Any]:
        """Result content only; timestamps stay out so reruns are byte-identical"""
        data = {
            "n_alpha": sci(self.n_alpha),
            "bounds": {
                "infinite_key": self.infinite.to_dict(),
                "finite_n_alpha": self.finite.to_dict(),
            },
            "lp_oracle": {
                "infinite_key": {k: (v.to_dict() if v else None) for k, v in self.oracle_infinite.items()},
                "finite_n_alpha": {k: (v.to_dict() if v else None) for k, v in self.oracle_finite.items()},
            },
            "key_rate": self.key_rate.to_dict(),
            "published_comparison": self.comparison(),
        }
        if self.published_key_rate is not None:
            data["published_parameter_key_rate"] = self.published_key_rate.to_dict()
        return data
