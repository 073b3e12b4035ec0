"""
Run configuration, table/tally files, reports and run manifests
"""
import hashlib
import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .config import (
    DEFAULT_BASIS_PROBABILITY_Z, AnalysisConfig, ChannelParams, DetectorLayout, DetectorParams,
    FluctuationConfig, ProtocolConfig, XPsiPlusPolicy, Y11Formula, normalize_ratio,
)
from .core import basis_from_value, intensity_label_from_value
from .exceptions import TallyStructureError
from .models import TALLY_SHAPE, TallyMatrix, cell_index, cell_keys
from .optimizer import SearchBox
from .protocol import SessionConfig
from .tally import from_tables

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent / "data"
DEFAULT_RUN_CONFIG = DATA_DIR / "default_run.toml"
PUBLISHED_TABLES = DATA_DIR / "published_tables_v1.csv"
PUBLISHED_KEY_PARAMS = DATA_DIR / "published_key_params_v1.toml"

FLOAT_FORMAT = "%.5e"
DIGEST_PREFIX = "# run-digest: "
RAW_COLUMNS = ["basis", "intensity_a", "intensity_b", "sent", "coincidences", "errors"]
RATE_COLUMNS = ["basis", "intensity_a", "intensity_b", "gain", "qber"]

PathLike = Union[str, Path]


# ---------------------------------------------------------------------------
# Run configuration schema
# ---------------------------------------------------------------------------

class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ProtocolSection(_Section):
    mu: float = 0.3
    nu: float = 0.1
    omega: float = 0.01
    intensity_ratio: Optional[List[float]] = None
    intensity_probabilities: Optional[List[float]] = None
    basis_probability_z: float = DEFAULT_BASIS_PROBABILITY_Z
    basis_probability_z_bob: Optional[float] = None
    total_pulses: int = Field(default=169_000_000_000, ge=1)
    repetition_rate: float = Field(default=500e3, gt=0)

    @model_validator(mode="after")
    def one_intensity_allocation(self):
        if self.intensity_ratio is not None and self.intensity_probabilities is not None:
            raise ValueError("give either intensity_ratio or intensity_probabilities, not both")
        for values in (self.intensity_ratio, self.intensity_probabilities):
            if values is not None and len(values) != 3:
                raise ValueError("intensity allocation needs exactly three entries")
        return self

    def to_config(self) -> ProtocolConfig:
        if self.intensity_probabilities is not None:
            probs = tuple(self.intensity_probabilities)
        else:
            probs = normalize_ratio(self.intensity_ratio or [4, 9, 7])
        return ProtocolConfig.from_values(
            self.mu, self.nu, self.omega,
            intensity_probabilities=probs,
            basis_probability_z=self.basis_probability_z,
            total_pulses=self.total_pulses,
            repetition_rate=self.repetition_rate,
            basis_probability_z_bob=self.basis_probability_z_bob,
        )


class ChannelSection(_Section):
    fiber_length_km: float = Field(default=5.0, ge=0)
    attenuation_db_per_km: float = Field(default=0.2, ge=0)
    misalignment: float = Field(default=0.01, ge=0, le=0.5)


class DetectorSection(_Section):
    efficiency: float = Field(default=0.1, ge=0, le=1)
    dark_count_probability: float = Field(default=5e-5, ge=0, lt=1)
    layout: DetectorLayout = DetectorLayout.ONE_PBS


class AnalysisSection(_Section):
    n_alpha: float = Field(default=3.0, ge=0)
    security_epsilon: float = Field(default=1e-3, gt=0)
    ec_inefficiency: float = Field(default=1.16, ge=1)
    quadrature_points: int = Field(default=64, ge=8)
    lp_cutoff: int = Field(default=10, ge=5)
    y11_formula: Y11Formula = Y11Formula.DERIVED
    run_oracle: bool = True

    def to_config(self) -> AnalysisConfig:
        return AnalysisConfig(
            fluctuation=FluctuationConfig(n_alpha=self.n_alpha, security_epsilon=self.security_epsilon),
            ec_inefficiency=self.ec_inefficiency,
            quadrature_points=self.quadrature_points,
            lp_cutoff=self.lp_cutoff,
            y11_formula=self.y11_formula,
            run_oracle=self.run_oracle,
        )


class SessionSection(_Section):
    seed: int = 20131001
    n_slots: int = Field(default=100_000, ge=1)
    x_psi_plus_policy: XPsiPlusPolicy = XPsiPlusPolicy.KEEP


class SearchBoxModel(_Section):
    """Optimizer search box; omitted coordinates keep their default interval"""
    mu: Optional[Tuple[float, float]] = None
    nu: Optional[Tuple[float, float]] = None
    omega: Optional[Tuple[float, float]] = None
    p_mu: Optional[Tuple[float, float]] = None
    p_nu: Optional[Tuple[float, float]] = None
    basis_probability_z: Optional[Tuple[float, float]] = None

    def to_box(self) -> SearchBox:
        return SearchBox(**{k: tuple(v) for k, v in self.model_dump().items() if v is not None})


class RunConfigModel(_Section):
    protocol: ProtocolSection = Field(default_factory=ProtocolSection)
    channel: ChannelSection = Field(default_factory=ChannelSection)
    detector: DetectorSection = Field(default_factory=DetectorSection)
    analysis: AnalysisSection = Field(default_factory=AnalysisSection)
    session: SessionSection = Field(default_factory=SessionSection)


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration as library value types"""
    protocol: ProtocolConfig
    channel: ChannelParams
    detector: DetectorParams
    analysis: AnalysisConfig
    seed: int
    n_slots: int
    x_psi_plus_policy: XPsiPlusPolicy = XPsiPlusPolicy.KEEP

    def session_config(self, n_slots: Optional[int] = None, seed: Optional[int] = None) -> SessionConfig:
        return SessionConfig(
            protocol=self.protocol, channel=self.channel, detector=self.detector,
            seed=self.seed if seed is None else seed,
            n_slots=self.n_slots if n_slots is None else n_slots,
            x_psi_plus_policy=self.x_psi_plus_policy,
        )

    def to_dict(self) -> Dict[str, Any]:
        return _plain(asdict(self))


def run_config_from_dict(data: Dict[str, Any]) -> RunConfig:
    """Validate a parsed document; raises pydantic.ValidationError"""
    model = RunConfigModel.model_validate(data)
    return RunConfig(
        protocol=model.protocol.to_config(),
        channel=ChannelParams(**model.channel.model_dump()),
        detector=DetectorParams(**model.detector.model_dump()),
        analysis=model.analysis.to_config(),
        seed=model.session.seed,
        n_slots=model.session.n_slots,
        x_psi_plus_policy=model.session.x_psi_plus_policy,
    )


def load_run_config(path: Optional[PathLike] = None) -> RunConfig:
    """Read a TOML run configuration (the packaged reference run by default)"""
    path = Path(path) if path is not None else DEFAULT_RUN_CONFIG
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    logger.debug(f"Loaded run configuration from {path}")
    return run_config_from_dict(data)


def load_search_box(path: Optional[PathLike] = None) -> SearchBox:
    """Read a TOML search box (the default box when no path is given)"""
    if path is None:
        return SearchBox()
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return SearchBoxModel.model_validate(data.get("box", data)).to_box()


# ---------------------------------------------------------------------------
# Digests and manifests
# ---------------------------------------------------------------------------

def _plain(value: Any) -> Any:
    """Recursively convert enums, tuples and numpy scalars for JSON"""
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def compute_digest(payload: Dict[str, Any]) -> str:
    """sha256 over the canonical JSON of every result-affecting input"""
    canonical = json.dumps(_plain(payload), sort_keys=True, separators=(",", ":"))
    return "sha256:" + hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def file_digest(path: PathLike) -> str:
    return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: str
    config_digest: str
    seed: Optional[int]
    tool_version: str
    started_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))
    finished_at: Optional[datetime] = None
    exit_code: Optional[int] = None

    def finish(self, exit_code: int) -> "RunManifest":
        self.finished_at = datetime.now(timezone.utc)
        self.exit_code = exit_code
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "config_digest": self.config_digest,
            "seed": self.seed,
            "tool_version": self.tool_version,
            "started_at": self.started_at.isoformat(),
            "finished_at": self.finished_at.isoformat() if self.finished_at else None,
            "exit_code": self.exit_code,
        }


def manifest_path(out_path: PathLike) -> Path:
    out_path = Path(out_path)
    return out_path.with_name(out_path.name + ".manifest.json")


def write_manifest(manifest: RunManifest, out_path: PathLike) -> Path:
    """Timestamps live next to the output so the output itself stays reproducible"""
    path = manifest_path(out_path)
    path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_digest(path: PathLike) -> Optional[str]:
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
    return first[len(DIGEST_PREFIX):] if first.startswith(DIGEST_PREFIX) else None


# ---------------------------------------------------------------------------
# CSV tables
# ---------------------------------------------------------------------------

def _write_csv(frame: pd.DataFrame, path: PathLike, digest: Optional[str]) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if digest:
            fh.write(f"{DIGEST_PREFIX}{digest}\n")
        frame.to_csv(fh, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def tallies_frame(t: TallyMatrix) -> pd.DataFrame:
    return pd.DataFrame(list(t.rows()))[RAW_COLUMNS]


def rates_frame(t: TallyMatrix) -> pd.DataFrame:
    return pd.DataFrame(list(t.rows()))[RATE_COLUMNS]


def write_tallies_csv(t: TallyMatrix, path: PathLike, digest: Optional[str] = None) -> Path:
    """Raw-count schema: basis,intensity_a,intensity_b,sent,coincidences,errors"""
    return _write_csv(tallies_frame(t), path, digest)


def write_rates_csv(t: TallyMatrix, path: PathLike, digest: Optional[str] = None) -> Path:
    """Rate schema: basis,intensity_a,intensity_b,gain,qber"""
    return _write_csv(rates_frame(t), path, digest)


def _cell_arrays(frame: pd.DataFrame, columns: Sequence[str]) -> Dict[str, np.ndarray]:
    missing = [c for c in RAW_COLUMNS[:3] + list(columns) if c not in frame.columns]
    if missing:
        raise TallyStructureError(f"Table is missing column(s): {missing}")

    arrays = {c: np.full(TALLY_SHAPE, np.nan) for c in columns}
    seen = set()
    for record in frame.to_dict(orient="records"):
        key = (
            basis_from_value(str(record["basis"])),
            intensity_label_from_value(str(record["intensity_a"]).strip()),
            intensity_label_from_value(str(record["intensity_b"]).strip()),
        )
        if key in seen:
            raise TallyStructureError(f"Duplicate cell {key[0].value}/{key[1].value}/{key[2].value}")
        seen.add(key)
        for c in columns:
            arrays[c][cell_index(*key)] = record[c]

    absent = [f"{b.value}/{a.value}/{i.value}" for b, a, i in cell_keys() if (b, a, i) not in seen]
    if absent:
        raise TallyStructureError(f"Table is missing cell(s): {absent}")
    return arrays


def read_tallies_csv(path: PathLike, counts: Optional[np.ndarray] = None) -> TallyMatrix:
    """
    Read either CSV schema. Raw counts give a TallyMatrix directly; the rate
    form needs ``counts`` (N^W per cell) to rebuild tallies.
    """
    frame = pd.read_csv(path, comment="#", skipinitialspace=True)
    if set(RAW_COLUMNS[3:]).issubset(frame.columns):
        arrays = _cell_arrays(frame, RAW_COLUMNS[3:])
        integral = all(np.all(np.mod(a, 1) == 0) for a in arrays.values())
        dtype = np.int64 if integral else float
        return TallyMatrix(**{k: v.astype(dtype) for k, v in arrays.items()})
    if set(RATE_COLUMNS[3:]).issubset(frame.columns):
        arrays = _cell_arrays(frame, RATE_COLUMNS[3:])
        return from_tables(arrays["gain"], arrays["qber"], counts)
    raise TallyStructureError(f"Unrecognized tally schema in {path}: columns {list(frame.columns)}")


def rate_tables_from_records(records: Iterable[Dict[str, Any]]) -> Tuple[np.ndarray, np.ndarray]:
    """(gains, qbers) arrays from rate-form cell records; a missing QBER is NaN"""
    frame = pd.DataFrame([dict(r, qber=np.nan if r.get("qber") is None else r["qber"]) for r in records])
    arrays = _cell_arrays(frame, RATE_COLUMNS[3:])
    return arrays["gain"], arrays["qber"]


def is_rate_table(path: PathLike) -> bool:
    frame = pd.read_csv(path, comment="#", nrows=0, skipinitialspace=True)
    return "gain" in frame.columns


def load_published_tables(path: PathLike = PUBLISHED_TABLES) -> Tuple[np.ndarray, np.ndarray]:
    """(gains, qbers) arrays indexed (basis, I_A, I_B) from the versioned fixture"""
    frame = pd.read_csv(path, comment="#")
    arrays = _cell_arrays(frame, RATE_COLUMNS[3:])
    return arrays["gain"], arrays["qber"]


def load_published_key_params(path: PathLike = PUBLISHED_KEY_PARAMS) -> Dict[str, Dict[str, float]]:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def write_trace_csv(trace: Iterable[Tuple[Any, float]], path: PathLike, digest: Optional[str] = None) -> Path:
    """Optimizer evaluation trace, one row per scored point"""
    rows = [dict(point.to_dict(), rate=rate) for point, rate in trace]
    columns = ["mu", "nu", "omega", "p_mu", "p_nu", "p_omega", "basis_probability_z", "rate"]
    return _write_csv(pd.DataFrame(rows, columns=columns), path, digest)


def write_sweep_csv(sweep: Iterable[Tuple[float, float]], path: PathLike, digest: Optional[str] = None) -> Path:
    frame = pd.DataFrame(list(sweep), columns=["distance_km", "rate"])
    return _write_csv(frame, path, digest)


# ---------------------------------------------------------------------------
# Reports and transcripts
# ---------------------------------------------------------------------------

def write_report(report: Dict[str, Any], path: PathLike, digest: Optional[str] = None) -> Path:
    """Structured JSON report with sorted keys"""
    document = dict(report)
    if digest:
        document["run_digest"] = digest
    path = Path(path)
    path.write_text(json.dumps(_plain(document), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_transcript(records: Iterable[Dict[str, Any]], path: PathLike, digest: Optional[str] = None) -> Path:
    """JSON lines, one record per slot, after an optional digest record"""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if digest:
            fh.write(json.dumps({"run_digest": digest}) + "\n")
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return path
