"""
Tally accumulation and statistical-fluctuation envelopes
"""
import logging
from typing import Mapping, Optional, Tuple, Union

import numpy as np

from .config import BASES, INTENSITY_ORDER, FluctuationConfig
from .exceptions import DomainError, TallyStructureError
from .models import TALLY_SHAPE, BoundedRates, CellKey, TallyMatrix

logger = logging.getLogger(__name__)

Table = Union[np.ndarray, Mapping[CellKey, float]]


def merge(t1: TallyMatrix, t2: TallyMatrix) -> TallyMatrix:
    """Cellwise sum; associative and commutative"""
    for name in ("sent", "coincidences", "errors"):
        if getattr(t1, name).shape != getattr(t2, name).shape:
            raise TallyStructureError(f"Cannot merge tallies with different '{name}' structure")
    return TallyMatrix(
        sent=t1.sent + t2.sent,
        coincidences=t1.coincidences + t2.coincidences,
        errors=t1.errors + t2.errors,
    )


def as_table(table: Table, name: str) -> np.ndarray:
    """Accept a (basis, I_A, I_B) array or a complete cell mapping"""
    if isinstance(table, Mapping):
        array = np.full(TALLY_SHAPE, np.nan)
        for basis in BASES:
            for ia in INTENSITY_ORDER:
                for ib in INTENSITY_ORDER:
                    key = (basis, ia, ib)
                    if key not in table:
                        raise TallyStructureError(f"Table '{name}' is missing cell {basis.value}/{ia.value}/{ib.value}")
                    array[basis.index, ia.index, ib.index] = table[key]
        return array

    array = np.asarray(table, dtype=float)
    if array.shape != TALLY_SHAPE:
        raise TallyStructureError(f"Table '{name}' must have shape {TALLY_SHAPE}, got {array.shape}")
    return array


def from_tables(gains: Table, qbers: Table, counts: Optional[Table] = None) -> TallyMatrix:
    """
    Rebuild a (real-valued) TallyMatrix from gain and QBER tables.

    ``counts`` supplies N^W_{IA IB}; without it every cell gets one unit of
    pulses so that only the rate view is meaningful. QBER entries may be NaN
    where the gain is zero.
    """
    q = as_table(gains, "gains")
    e = as_table(qbers, "qbers")
    n = np.ones(TALLY_SHAPE) if counts is None else as_table(counts, "counts")

    if np.any(np.isnan(q)) or np.any(np.isnan(n)):
        raise TallyStructureError("Gain and count tables must be complete")
    if np.any(np.isnan(e) & (q > 0)):
        raise TallyStructureError("QBER missing for a cell with nonzero gain")
    e = np.where(np.isnan(e), 0.0, e)

    if np.any((q < 0) | (q > 1)):
        raise DomainError("Gains must lie in [0, 1]")
    if np.any((e < 0) | (e > 1)):
        raise DomainError("QBERs must lie in [0, 1]")
    if np.any(n < 0):
        raise TallyStructureError("Pulse counts must be nonnegative")

    coincidences = n * q
    return TallyMatrix(sent=n, coincidences=coincidences, errors=coincidences * e)


def to_tables(t: TallyMatrix) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(gains, qbers, sent) arrays; QBER is NaN where nothing was detected"""
    return t.gains, t.qbers, t.sent.astype(float)


def _envelope(value: np.ndarray, n: np.ndarray, n_alpha: float) -> Tuple[np.ndarray, np.ndarray]:
    """value * (1 -/+ n_alpha / sqrt(N value)) with the zero-observation surrogate"""
    lower = np.zeros_like(value)
    upper = np.ones_like(value)

    observed = (n > 0) & (value > 0)
    empty = (n > 0) & (value <= 0)

    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.where(observed, n_alpha / np.sqrt(np.where(observed, n * value, 1.0)), 0.0)
    lower = np.where(observed, np.maximum(0.0, value * (1.0 - delta)), lower)
    upper = np.where(observed, np.minimum(1.0, value * (1.0 + delta)), upper)

    # one-count surrogate: the rate of a single event, widened by n_alpha
    surrogate = np.minimum(1.0, (1.0 + n_alpha) / np.where(empty, n, 1.0))
    upper = np.where(empty, surrogate, upper)
    return lower, upper


def fluct_bounds(t: TallyMatrix, counts: Table, f: FluctuationConfig) -> BoundedRates:
    """
    Gaussian n_alpha-standard-deviation envelopes for Q and EQ per cell.

    Q and EQ come from the tally, the pulse counts N^W from ``counts``.
    Cells without observations get Q^L = 0 and Q^U = (1 + n_alpha) / N;
    cells without pulses carry no information (Q^L = 0, Q^U = 1). With
    n_alpha = 0 the envelopes collapse onto the observed values.
    """
    n_alpha = float(f.n_alpha)
    if n_alpha < 0:
        raise DomainError(f"n_alpha must be nonnegative, got {n_alpha}")

    n = as_table(counts, "counts")
    if np.any(np.isnan(n)):
        raise TallyStructureError("Pulse counts must be complete")
    if np.any(n < 0):
        raise TallyStructureError("Pulse counts must be nonnegative")
    if np.any((n == 0) & (t.coincidences > 0)):
        raise TallyStructureError("Cell has coincidences but zero pulses sent")

    gains = t.gains
    error_gains = t.error_gains

    if n_alpha == 0:
        return BoundedRates.exact(gains, error_gains)

    q_lower, q_upper = _envelope(gains, n, n_alpha)
    eq_lower, eq_upper = _envelope(error_gains, n, n_alpha)

    empty_cells = int(np.sum((n > 0) & (gains <= 0)))
    if empty_cells:
        logger.warning(f"{empty_cells} cell(s) have no coincidences; using the one-count surrogate upper bound")

    return BoundedRates(
        q=gains, q_lower=q_lower, q_upper=q_upper,
        eq=error_gains, eq_lower=eq_lower, eq_upper=eq_upper,
        n_alpha=n_alpha,
    )
