"""
Configuration for the MDI-QKD analysis API
"""
import logging
import os
from typing import List, Optional

from pydantic_settings import BaseSettings

from mdiqkd.config import AnalysisConfig, DEFAULT_ANALYSIS
from mdiqkd.logging_setup import configure_logging

logger = logging.getLogger(__name__)


class SimulatorSettings(BaseSettings):
    """Process-level settings; results-affecting parameters live in run configs"""

    # Application Settings
    TITLE: str = "MDI-QKD Analysis API"
    DESCRIPTION: str = "Coherent-state simulation and decoy-state key-rate analysis for MDI-QKD"
    VERSION: str = "1.0.0"

    # Server Configuration
    HOST: str = "0.0.0.0"
    PORT: int = 8000
    ALLOWED_ORIGINS: List[str] = ["*"]

    # Logging
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    LOG_JSON: bool = False

    # Computation
    MC_WORKERS: Optional[int] = None  # parallel workers; never changes results
    QUADRATURE_POINTS: int = 64
    LP_CUTOFF: int = 10
    RUN_LP_ORACLE: bool = True
    OPTIMIZER_MAX_BUDGET: int = 400

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"
        case_sensitive = True
        extra = "ignore"

    def analysis_config(self) -> AnalysisConfig:
        """Library analysis config with this process's numeric settings"""
        return AnalysisConfig(
            fluctuation=DEFAULT_ANALYSIS.fluctuation,
            ec_inefficiency=DEFAULT_ANALYSIS.ec_inefficiency,
            quadrature_points=self.QUADRATURE_POINTS,
            lp_cutoff=self.LP_CUTOFF,
            y11_formula=DEFAULT_ANALYSIS.y11_formula,
            run_oracle=self.RUN_LP_ORACLE,
        )


# Global settings instance
settings = SimulatorSettings()
config = settings


def validate_settings(current: SimulatorSettings = settings) -> None:
    """Validate settings on startup"""
    errors = []

    if current.LOG_LEVEL.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        errors.append(f"LOG_LEVEL must be a logging level name, got {current.LOG_LEVEL}")

    if current.MC_WORKERS is not None and current.MC_WORKERS < 1:
        errors.append("MC_WORKERS must be at least 1 when set")

    if current.QUADRATURE_POINTS < 8:
        errors.append("QUADRATURE_POINTS must be at least 8")

    if current.LP_CUTOFF < 5:
        errors.append("LP_CUTOFF must be at least 5")

    if current.OPTIMIZER_MAX_BUDGET < 1:
        errors.append("OPTIMIZER_MAX_BUDGET must be at least 1")

    if not (0 < current.PORT < 65536):
        errors.append(f"PORT out of range: {current.PORT}")

    if errors:
        raise ValueError(f"Configuration validation failed: {'; '.join(errors)}")

    logger.info("✅ Simulator configuration validated successfully")


def setup_logging(current: SimulatorSettings = settings) -> None:
    configure_logging(current.LOG_LEVEL, json_output=current.LOG_JSON)


__all__ = [
    "SimulatorSettings",
    "settings",
    "config",
    "validate_settings",
    "setup_logging",
]
