"""
Shared fixtures for the mdiqkd test suite
"""
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from mdiqkd.config import (  # noqa: E402
    DEFAULT_CHANNEL, DEFAULT_DETECTOR, DEFAULT_PROTOCOL, ChannelParams, DetectorLayout, DetectorParams,
    ProtocolConfig,
)
from mdiqkd.io import load_published_tables  # noqa: E402


@pytest.fixture
def protocol() -> ProtocolConfig:
    return DEFAULT_PROTOCOL


@pytest.fixture
def channel() -> ChannelParams:
    return DEFAULT_CHANNEL


@pytest.fixture
def detector() -> DetectorParams:
    return DEFAULT_DETECTOR


@pytest.fixture
def ideal_channel() -> ChannelParams:
    """No misalignment, no fiber"""
    return ChannelParams(fiber_length_km=0.0, misalignment=0.0)


@pytest.fixture
def ideal_detector() -> DetectorParams:
    """Perfect efficiency, no dark counts"""
    return DetectorParams(efficiency=1.0, dark_count_probability=0.0)


@pytest.fixture
def full_detector() -> DetectorParams:
    return DetectorParams(efficiency=1.0, dark_count_probability=0.0, layout=DetectorLayout.FULL)


@pytest.fixture
def published_tables():
    """(gains, qbers) arrays of the packaged published run"""
    return load_published_tables()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20131001)


@pytest.fixture
def run_config_file(tmp_path):
    """Small, fast run configuration with bright detection"""
    def write(**overrides) -> Path:
        sections = {
            "protocol": {"mu": 0.3, "nu": 0.1, "omega": 0.01, "intensity_ratio": [4, 9, 7],
                         "basis_probability_z": 0.5, "total_pulses": 1_000_000},
            "channel": {"fiber_length_km": 0.0, "misalignment": 0.01},
            "detector": {"efficiency": 1.0, "dark_count_probability": 1e-4, "layout": "one_pbs"},
            "analysis": {"n_alpha": 3.0, "run_oracle": False},
            "session": {"seed": 7, "n_slots": 50_000},
        }
        for key, value in overrides.items():
            section, name = key.split("__")
            sections[section][name] = value

        lines = []
        for section, values in sections.items():
            lines.append(f"[{section}]")
            for name, value in values.items():
                lines.append(f"{name} = {_toml_value(value)}")
            lines.append("")
        path = tmp_path / "run.toml"
        path.write_text("\n".join(lines), encoding="utf-8")
        return path

    return write


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    return repr(value)
