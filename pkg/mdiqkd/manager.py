"""
Analysis manager that runs the decoy-state chain from tallies to key rate
"""
import time
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

import numpy as np

from .config import (
    DEFAULT_ANALYSIS, AnalysisConfig, Basis, BoundMode, FluctuationConfig, ProtocolConfig,
)
from .decoy import check_bound_validity, decoy_bounds, key_rate, p11, y11_oracle_lp
from .exceptions import LPSolverError, QKDError
from .models import AnalysisReport, BoundedRates, KeyRateReport, LPOracleResult, TallyMatrix
from .tally import fluct_bounds

logger = logging.getLogger(__name__)

HISTORY_LIMIT = 100


@dataclass
class AnalysisAttempt:
    """Record of one chain run"""
    source: str
    success: bool
    duration_s: float
    rate: Optional[float] = None
    key_length: Optional[int] = None
    error: Optional[str] = None
    timestamp: datetime = None

    def __post_init__(self):
        if self.timestamp is None:
            self.timestamp = datetime.now(timezone.utc)


class AnalysisManager:
    """Orchestrates envelopes, analytic bounds, the LP cross-check and the key rate"""

    def __init__(self, config: AnalysisConfig = DEFAULT_ANALYSIS):
        self.config = config
        self.analysis_history: List[AnalysisAttempt] = []

    def analyze(self, tallies: TallyMatrix, protocol: ProtocolConfig, n_alpha: Optional[float] = None,
                total_pulses: Optional[float] = None, source: str = "tallies",
                published_key_params: Optional[Dict[str, float]] = None) -> AnalysisReport:
        """
        Run the full chain on one set of tallies.

        Pulse counts per cell are the tallies' ``sent`` values. ``total_pulses``
        overrides the N used for the key length (default: the protocol's N).
        """
        n_alpha = self.config.fluctuation.n_alpha if n_alpha is None else n_alpha
        total_pulses = float(protocol.total_pulses if total_pulses is None else total_pulses)
        means = protocol.means
        formula = self.config.y11_formula

        logger.info(f"Starting decoy analysis ({source}): n_alpha={n_alpha}, N={total_pulses:.3e}")
        start_time = time.time()
        try:
            exact = BoundedRates.exact(tallies.gains, tallies.error_gains)
            bounded = fluct_bounds(tallies, tallies.sent, FluctuationConfig(
                n_alpha=n_alpha, security_epsilon=self.config.fluctuation.security_epsilon))

            infinite = decoy_bounds(exact, means, BoundMode.INFINITE_KEY, formula)
            finite = decoy_bounds(bounded, means, BoundMode.FINITE_N_ALPHA, formula)

            oracle_infinite: Dict[str, Optional[LPOracleResult]] = {}
            oracle_finite: Dict[str, Optional[LPOracleResult]] = {}
            if self.config.run_oracle:
                oracle_infinite = self._run_oracles(exact, means, infinite)
                oracle_finite = self._run_oracles(bounded, means, finite)

            report = key_rate(
                q=protocol.signal_pair_fraction,
                p11=p11(protocol.mu),
                y11_z_lower=finite.y11_z_lower,
                e11_x_upper=finite.e11_x_upper,
                gain_signal=float(tallies.gains[0, 0, 0]),
                qber_signal=float(np.nan_to_num(tallies.qbers[0, 0, 0])),
                f=self.config.ec_inefficiency,
                total_pulses=total_pulses,
            )

            published: Optional[KeyRateReport] = None
            if published_key_params is not None:
                published = key_rate(**published_key_params)

            result = AnalysisReport(
                infinite=infinite,
                finite=finite,
                key_rate=report,
                oracle_infinite=oracle_infinite,
                oracle_finite=oracle_finite,
                published_key_rate=published,
                n_alpha=n_alpha,
            )
        except QKDError as e:
            self._log_attempt(source, False, time.time() - start_time, error=str(e))
            logger.error(f"❌ Decoy analysis failed ({source}): {e}")
            raise

        duration = time.time() - start_time
        self._log_attempt(source, True, duration, report)
        logger.info(
            f"✅ Decoy analysis completed in {duration:.2f}s. "
            f"Y11^Z,L={finite.y11_z_lower:.4e}, e11^X,U={finite.e11_x_upper:.4f}, "
            f"R={report.rate:.4e}, L={report.key_length}"
        )
        return result

    def _run_oracles(self, bounded: BoundedRates, means, bounds) -> Dict[str, Optional[LPOracleResult]]:
        """LP cross-check per basis; analytic bounds tighter than the LP raise BoundValidityError"""
        results: Dict[str, Optional[LPOracleResult]] = {}
        for basis in (Basis.Z, Basis.X):
            try:
                results[basis.value] = y11_oracle_lp(bounded.for_basis(basis), means,
                                                     cutoff=self.config.lp_cutoff, basis=basis)
            except LPSolverError as e:
                logger.warning(f"LP oracle unavailable for {basis.value} basis ({bounds.mode.value}): {e}")
                results[basis.value] = None

        check_bound_validity(y11_lower=bounds.y11_z_lower, oracle=results[Basis.Z.value])
        check_bound_validity(y11_lower=bounds.y11_x_lower, e11_upper=bounds.e11_x_upper,
                             oracle=results[Basis.X.value])
        return results

    def _log_attempt(self, source: str, success: bool, duration: float,
                     report: Optional[KeyRateReport] = None, error: Optional[str] = None):
        attempt = AnalysisAttempt(
            source=source,
            success=success,
            duration_s=duration,
            rate=report.rate if report else None,
            key_length=report.key_length if report else None,
            error=error,
        )
        self.analysis_history.append(attempt)

        if len(self.analysis_history) > HISTORY_LIMIT:
            self.analysis_history = self.analysis_history[-HISTORY_LIMIT:]

    def get_analysis_analytics(self) -> Dict[str, Any]:
        """Summary statistics over recent chain runs"""
        if not self.analysis_history:
            return {"total_analyses": 0}

        total = len(self.analysis_history)
        successful = [a for a in self.analysis_history if a.success]
        rates = [a.rate for a in successful if a.rate is not None]
        return {
            "total_analyses": total,
            "successful_analyses": len(successful),
            "success_rate": len(successful) / total,
            "average_duration_s": sum(a.duration_s for a in self.analysis_history) / total,
            "positive_key_rate_runs": sum(1 for r in rates if r > 0),
            "last_error": next((a.error for a in reversed(self.analysis_history) if a.error), None),
        }

    def get_health_status(self) -> Dict[str, Any]:
        recent = self.analysis_history[-10:]
        failures = sum(1 for a in recent if not a.success)
        status = "healthy" if failures <= len(recent) // 2 else "degraded"
        return {
            "status": status,
            "oracle_enabled": self.config.run_oracle,
            "y11_formula": self.config.y11_formula.value,
            "lp_cutoff": self.config.lp_cutoff,
            "recent_analyses": len(recent),
            "recent_failures": failures,
        }
