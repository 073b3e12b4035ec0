"""
MDI-QKD simulation and decoy-state analysis package

This package simulates polarization-encoding measurement-device-independent
QKD with weak coherent pulses and turns detection statistics into secure key
rates, with finite-statistics corrections and a linear-program cross-check.
"""
import logging
from datetime import datetime, timezone
from typing import Any, Dict, Optional

from .config import (
    DEFAULT_ANALYSIS, DEFAULT_CHANNEL, DEFAULT_DETECTOR, DEFAULT_PROTOCOL, AnalysisConfig, Basis,
    ChannelParams, CoincidenceClass, DetectorLayout, DetectorParams, IntensityLabel, ProtocolConfig,
    Y11Formula,
)
from .core import pair_pulse_counts, validate_config
from .decoy import (
    binary_entropy, e11_upper_finite, e11_upper_infinite, key_rate, p11, y11_lower_finite,
    y11_lower_infinite, y11_oracle_lp,
)
from .exceptions import QKDError
from .manager import AnalysisManager
from .models import AnalysisReport, DecoyBounds, KeyRateReport, TallyMatrix
from .optics import expected_tallies, run_monte_carlo
from .tally import fluct_bounds, from_tables, merge

__version__ = "1.0.0"

logger = logging.getLogger(__name__)

# Global analysis manager instance
_global_manager: Optional[AnalysisManager] = None


def get_analysis_manager(config: Optional[AnalysisConfig] = None) -> AnalysisManager:
    """Get or create the global analysis manager instance"""
    global _global_manager
    if _global_manager is None:
        _global_manager = AnalysisManager(config or DEFAULT_ANALYSIS)
    return _global_manager


def health_check() -> Dict[str, Any]:
    """Health status of the analysis chain for the HTTP surface"""
    status = get_analysis_manager().get_health_status()
    status.update({
        "service": "MDI-QKD Analysis",
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    })
    return status


__all__ = [
    "AnalysisConfig", "AnalysisManager", "AnalysisReport", "Basis", "ChannelParams", "CoincidenceClass",
    "DEFAULT_ANALYSIS", "DEFAULT_CHANNEL", "DEFAULT_DETECTOR", "DEFAULT_PROTOCOL", "DecoyBounds",
    "DetectorLayout", "DetectorParams", "IntensityLabel", "KeyRateReport", "ProtocolConfig", "QKDError",
    "TallyMatrix", "Y11Formula", "binary_entropy", "e11_upper_finite", "e11_upper_infinite",
    "expected_tallies", "fluct_bounds", "from_tables", "get_analysis_manager", "health_check", "key_rate",
    "merge", "p11", "pair_pulse_counts", "run_monte_carlo", "validate_config", "y11_lower_finite",
    "y11_lower_infinite", "y11_oracle_lp",
]
