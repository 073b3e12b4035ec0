"""
Decoy-state security analysis for two-decoy MDI-QKD.

Analytic single-photon bounds (infinite-key and n_alpha-fluctuation variants),
an independent linear-program oracle over truncated photon-number yields, and
the secure key rate.
"""
import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog
from scipy.special import entr
from scipy.stats import poisson

from .config import Basis, BoundMode, Y11Formula
from .exceptions import (
    BoundValidityError, DecoyBoundError, DomainError, LPInfeasibleError, LPSolverError,
    TallyStructureError,
)
from .models import BoundedRates, DecoyBounds, KeyRateReport, LPOracleResult

logger = logging.getLogger(__name__)

MU, NU, OMEGA = 0, 1, 2

# Absolute and relative slack of the analytic-vs-LP comparison; the LP is
# solved with HiGHS feasibility tolerances of 1e-10 on row-normalized data.
VALIDITY_ABS_TOLERANCE = 1e-9
VALIDITY_REL_TOLERANCE = 1e-7
HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


def binary_entropy(x: float) -> float:
    """H(x) in bits with H(0) = H(1) = 0"""
    if not (0.0 <= x <= 1.0) or math.isnan(x):
        raise DomainError(f"Binary entropy needs x in [0, 1], got {x}")
    return float((entr(x) + entr(1.0 - x)) / math.log(2.0))


def p11(mu: float) -> float:
    """Probability that both parties emit exactly one photon at mean mu"""
    if mu < 0:
        raise DomainError(f"Mean photon number must be nonnegative, got {mu}")
    return mu * mu * math.exp(-2.0 * mu)


def _intensities(intensities: Sequence[float]) -> Tuple[float, float, float]:
    if len(intensities) != 3:
        raise DomainError(f"Need (mu, nu, omega), got {len(intensities)} values")
    mu, nu, omega = (float(x) for x in intensities)
    if not (mu > nu > omega >= 0):
        raise DomainError(f"Intensities must satisfy mu > nu > omega >= 0; got {mu}, {nu}, {omega}")
    return mu, nu, omega


def _table(values, name: str) -> np.ndarray:
    array = np.asarray(values, dtype=float)
    if array.shape != (3, 3):
        raise TallyStructureError(f"{name} must be a complete 3x3 table, got shape {array.shape}")
    if np.any(np.isnan(array)):
        raise TallyStructureError(f"{name} has missing cells")
    return array


def _clamp(value: float) -> float:
    return min(1.0, max(0.0, value))


def y11_denominator(mu: float, nu: float, omega: float, formula: Y11Formula = Y11Formula.DERIVED) -> float:
    if formula is Y11Formula.AS_PRINTED:
        return (mu - nu) ** 2 * (nu - omega) ** 2 * (mu - nu)
    return (mu - omega) ** 2 * (nu - omega) ** 2 * (mu - nu)


def _bracket(lower: np.ndarray, upper: np.ndarray, x: int, means: Tuple[float, float, float],
             lower_direction: bool) -> float:
    """
    e^{2x} Q_xx + e^{2w} Q_ww - e^{x+w} (Q_xw + Q_wx) using envelopes.

    lower_direction picks envelopes that bound the bracket from below
    (L on the positive terms, U on the cross terms); otherwise from above.
    """
    pos, neg = (lower, upper) if lower_direction else (upper, lower)
    ex, ew = means[x], means[OMEGA]
    return (
        math.exp(2 * ex) * pos[x, x]
        + math.exp(2 * ew) * pos[OMEGA, OMEGA]
        - math.exp(ex + ew) * (neg[x, OMEGA] + neg[OMEGA, x])
    )


def _y11_core(lower: np.ndarray, upper: np.ndarray, means: Tuple[float, float, float],
              formula: Y11Formula) -> float:
    mu, nu, omega = means
    a = (mu ** 2 - omega ** 2) * (mu - omega)
    b = (nu ** 2 - omega ** 2) * (nu - omega)
    numerator = a * _bracket(lower, upper, NU, means, True) - b * _bracket(lower, upper, MU, means, False)
    return _clamp(numerator / y11_denominator(mu, nu, omega, formula))


def y11_lower_infinite(gains, intensities: Sequence[float],
                       formula: Y11Formula = Y11Formula.DERIVED) -> float:
    """
    Lower bound on the single-photon yield Y11 of one basis from its 3x3
    gain table Q[I_A, I_B] (rows Alice, columns Bob, order mu/nu/omega).
    """
    means = _intensities(intensities)
    q = _table(gains, "gains")
    return _y11_core(q, q, means, formula)


def y11_lower_finite(bounded: BoundedRates, intensities: Sequence[float],
                     formula: Y11Formula = Y11Formula.DERIVED) -> float:
    """Same bound with each gain replaced by the envelope that weakens it"""
    means = _intensities(intensities)
    return _y11_core(_table(bounded.q_lower, "Q^L"), _table(bounded.q_upper, "Q^U"), means, formula)


def _e11_core(lower: np.ndarray, upper: np.ndarray, y11_x_lower: float,
              means: Tuple[float, float, float]) -> float:
    _, nu, omega = means
    if y11_x_lower <= 0:
        raise DecoyBoundError("e11 bound undefined: the X-basis single-photon yield bound is zero")
    numerator = _bracket(lower, upper, NU, means, False)
    return _clamp(numerator / ((nu - omega) ** 2 * y11_x_lower))


def e11_upper_infinite(gains_x, qbers_x, y11_x_lower: float, intensities: Sequence[float]) -> float:
    """Upper bound on the single-photon phase error rate from X-basis data"""
    means = _intensities(intensities)
    q = _table(gains_x, "gains")
    e = np.asarray(qbers_x, dtype=float)
    eq = np.where(q > 0, q * np.nan_to_num(e), 0.0)
    eq = _table(eq, "EQ")
    return _e11_core(eq, eq, y11_x_lower, means)


def e11_upper_finite(bounded_x: BoundedRates, y11_x_lower_finite: float,
                     intensities: Sequence[float]) -> float:
    means = _intensities(intensities)
    return _e11_core(_table(bounded_x.eq_lower, "EQ^L"), _table(bounded_x.eq_upper, "EQ^U"),
                     y11_x_lower_finite, means)


def decoy_bounds(bounded: BoundedRates, intensities: Sequence[float], mode: BoundMode,
                 formula: Y11Formula = Y11Formula.DERIVED) -> DecoyBounds:
    """Y11^{Z,L}, Y11^{X,L} and e11^{X,U} from (2, 3, 3) envelopes"""
    z = bounded.for_basis(Basis.Z)
    x = bounded.for_basis(Basis.X)
    y11_z = y11_lower_finite(z, intensities, formula)
    y11_x = y11_lower_finite(x, intensities, formula)
    e11_x = e11_upper_finite(x, y11_x, intensities)
    return DecoyBounds(y11_z_lower=y11_z, y11_x_lower=y11_x, e11_x_upper=e11_x, mode=mode)


# ---------------------------------------------------------------------------
# Linear-program oracle
# ---------------------------------------------------------------------------

def poisson_weights(intensities: Sequence[float], cutoff: int) -> np.ndarray:
    """W[a, b, i, j] = P(i; I_a) P(j; I_b) for photon numbers up to cutoff"""
    means = np.asarray(intensities, dtype=float)
    photons = np.arange(cutoff + 1)
    single = poisson.pmf(photons[None, :], means[:, None])  # (3, cutoff+1)
    return single[:, None, :, None] * single[None, :, None, :]


def forward_gains(yields: np.ndarray, intensities: Sequence[float]) -> np.ndarray:
    """Q[I_A, I_B] = sum_ij P(i; I_A) P(j; I_B) Y_ij for a truncated yield grid"""
    yields = np.asarray(yields, dtype=float)
    cutoff = yields.shape[0] - 1
    weights = poisson_weights(intensities, cutoff)
    return np.einsum("abij,ij->ab", weights, yields)


def _solve(c: np.ndarray, a_ub: np.ndarray, b_ub: np.ndarray, n_vars: int) -> np.ndarray:
    result = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=[(0.0, 1.0)] * n_vars, method="highs",
                     options=HIGHS_OPTIONS)
    if result.status == 2:
        raise LPInfeasibleError(f"Yield LP is infeasible: {result.message}", status=result.status)
    if not result.success:
        raise LPSolverError(f"Yield LP failed: {result.message}", status=result.status)
    return result.x


def y11_oracle_lp(bounded: BoundedRates, intensities: Sequence[float], cutoff: int = 10,
                  basis: Basis = Basis.Z) -> LPOracleResult:
    """
    Tightest Y11 range (and e11 maximum) consistent with one basis' envelopes.

    The Y11 range uses only the gain rows over Y_ij, i, j <= cutoff. The e11
    maximum adds eY_ij with the error-gain rows and eY_ij <= Y_ij; when those
    rows admit no solution (rounded published tables) e11_max is None.
    Photon numbers above the cutoff are handled conservatively: their Poisson
    mass t relaxes each lower constraint to Q^L - t and contributes nothing to
    the upper ones.
    """
    if cutoff < 5:
        raise DomainError(f"LP cutoff must be at least 5, got {cutoff}")
    means = _intensities(intensities)
    q_lower = _table(bounded.q_lower, "Q^L")
    q_upper = _table(bounded.q_upper, "Q^U")
    eq_lower = _table(bounded.eq_lower, "EQ^L")
    eq_upper = _table(bounded.eq_upper, "EQ^U")

    size = cutoff + 1
    n_grid = size * size
    n_vars = 2 * n_grid
    weights = poisson_weights(means, cutoff).reshape(9, n_grid)
    tail = 1.0 - weights.sum(axis=1)

    def envelope_rows(offset: int, low: np.ndarray, high: np.ndarray):
        rows, rhs = [], []
        for k in range(9):
            ia, ib = divmod(k, 3)
            scale = 1.0 / high[ia, ib] if high[ia, ib] > 0 else 1.0
            row = np.zeros(n_vars)
            row[offset:offset + n_grid] = weights[k] * scale
            rows.extend([row, -row])
            rhs.extend([high[ia, ib] * scale, -(low[ia, ib] - tail[k]) * scale])
        return rows, rhs

    gain_rows, gain_rhs = envelope_rows(0, q_lower, q_upper)
    y11 = 1 * size + 1

    # Y11 range: gain rows only, eY columns left out
    a_gain = np.array(gain_rows)[:, :n_grid]
    b_gain = np.array(gain_rhs)
    objective = np.zeros(n_grid)
    objective[y11] = 1.0
    y11_min = _clamp(float(_solve(objective, a_gain, b_gain, n_grid)[y11]))
    y11_max = _clamp(float(_solve(-objective, a_gain, b_gain, n_grid)[y11]))

    error_rows, error_rhs = envelope_rows(n_grid, eq_lower, eq_upper)
    # eY_ij <= Y_ij
    coupling = np.hstack([-np.eye(n_grid), np.eye(n_grid)])
    a_ub = np.vstack([np.array(gain_rows + error_rows), coupling])
    b_ub = np.concatenate([np.array(gain_rhs + error_rhs), np.zeros(n_grid)])
    objective = np.zeros(n_vars)
    objective[n_grid + y11] = -1.0
    e11_max: Optional[float]
    try:
        ey11_max = float(_solve(objective, a_ub, b_ub, n_vars)[n_grid + y11])
        e11_max = 1.0 if y11_min <= 0 else _clamp(ey11_max / y11_min)
    except LPInfeasibleError as e:
        logger.warning(f"LP oracle ({basis.value}): error-gain envelopes admit no yields, e11 maximum skipped: {e}")
        e11_max = None

    logger.debug(f"LP oracle ({basis.value}, cutoff {cutoff}): Y11 in [{y11_min:.5e}, {y11_max:.5e}], e11 <= {e11_max}")
    return LPOracleResult(basis=basis, y11_min=y11_min, y11_max=y11_max, e11_max=e11_max, cutoff=cutoff)


def _tolerance(reference: float) -> float:
    return VALIDITY_ABS_TOLERANCE + VALIDITY_REL_TOLERANCE * abs(reference)


def check_bound_validity(y11_lower: Optional[float] = None, e11_upper: Optional[float] = None,
                         oracle: Optional[LPOracleResult] = None) -> None:
    """
    Raise BoundValidityError when an analytic bound is tighter than the LP
    allows: Y11 lower bound above the LP minimum, or e11 upper bound below
    the LP maximum.
    """
    if oracle is None:
        return
    if y11_lower is not None and y11_lower > oracle.y11_min + _tolerance(oracle.y11_min):
        raise BoundValidityError(
            f"Analytic Y11 lower bound {y11_lower:.6e} exceeds LP minimum {oracle.y11_min:.6e} "
            f"({oracle.basis.value} basis)"
        )
    if oracle.e11_max is None:
        return
    if e11_upper is not None and oracle.y11_min > 0 and e11_upper < oracle.e11_max - _tolerance(oracle.e11_max):
        raise BoundValidityError(
            f"Analytic e11 upper bound {e11_upper:.6e} is below LP maximum {oracle.e11_max:.6e}"
        )


# ---------------------------------------------------------------------------
# Key rate
# ---------------------------------------------------------------------------

def _probability(name: str, value: float) -> float:
    if not (0.0 <= value <= 1.0) or math.isnan(value):
        raise DomainError(f"{name} must lie in [0, 1], got {value}")
    return float(value)


def key_length(rate: float, total_pulses: float) -> int:
    if total_pulses < 0:
        raise DomainError(f"total_pulses must be nonnegative, got {total_pulses}")
    return int(math.floor(rate * total_pulses))


def key_rate(q: float, p11: float, y11_z_lower: float, e11_x_upper: float, gain_signal: float,
             qber_signal: float, f: float = 1.16, total_pulses: float = 1.69e11) -> KeyRateReport:
    """
    R = max(0, q {p11 Y11 [1 - H(e11)] - Q f H(E)}) and L = floor(R N).

    Unpacks as ``rate, length = key_rate(...)``.
    """
    for name, value in (("q", q), ("p11", p11), ("Y11^{Z,L}", y11_z_lower), ("e11^{X,U}", e11_x_upper),
                        ("Q^Z_mumu", gain_signal), ("E^Z_mumu", qber_signal)):
        _probability(name, value)
    if not f >= 1.0:
        raise DomainError(f"Error-correction inefficiency f must be at least 1, got {f}")

    value = q * (p11 * y11_z_lower * (1.0 - binary_entropy(e11_x_upper))
                 - gain_signal * f * binary_entropy(qber_signal))
    rate = max(0.0, value)
    return KeyRateReport(
        q=q, p11=p11, y11_z_lower=y11_z_lower, e11_x_upper=e11_x_upper,
        gain_signal=gain_signal, qber_signal=qber_signal, f=f,
        rate=rate, key_length=key_length(rate, total_pulses), total_pulses=float(total_pulses),
    )
