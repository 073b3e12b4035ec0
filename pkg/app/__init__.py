"""
MDI-QKD Analysis API Application Package

HTTP surface over the mdiqkd library: key-rate evaluation, the decoy-state
bound chain with its LP cross-check, expected tallies and parameter search.
"""

from .main import app
from .config import config

__version__ = "1.0.0"
__title__ = "MDI-QKD Analysis API"
__description__ = "Decoy-state key-rate analysis for measurement-device-independent QKD"

# Export main app instance
__all__ = ["app", "config"]
