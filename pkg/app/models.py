"""
Pydantic models for the MDI-QKD analysis API
"""
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, model_validator

from mdiqkd.io import ChannelSection, DetectorSection, ProtocolSection, SearchBoxModel


# Key-rate models
class KeyRateRequest(BaseModel):
    """Inputs of the secure key-rate formula"""
    q: float = Field(..., ge=0, le=1, description="Fraction of pulse pairs that are signal-signal in Z")
    p11: float = Field(..., ge=0, le=1)
    y11_z_lower: float = Field(..., ge=0, le=1)
    e11_x_upper: float = Field(..., ge=0, le=1)
    gain_signal: float = Field(..., ge=0, le=1)
    qber_signal: float = Field(..., ge=0, le=1)
    f: float = Field(default=1.16, ge=1)
    total_pulses: float = Field(default=1.69e11, gt=0)


class KeyRateResponse(BaseModel):
    rate: float
    key_length: int
    report: Dict[str, Any]


# Analysis models
class CellRate(BaseModel):
    """One (basis, I_A, I_B) cell in rate form"""
    basis: str = Field(..., pattern="^[ZXzx]$")
    intensity_a: str
    intensity_b: str
    gain: float = Field(..., ge=0, le=1)
    qber: Optional[float] = Field(default=None, ge=0, le=1)


class AnalyzeRequest(BaseModel):
    """Bound chain on supplied cells or on the packaged published tables"""
    protocol: ProtocolSection = Field(default_factory=ProtocolSection)
    cells: Optional[List[CellRate]] = None
    use_published_tables: bool = False
    n_alpha: Optional[float] = Field(default=None, ge=0)
    total_pulses: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def one_source(self):
        if (self.cells is None) == (not self.use_published_tables):
            raise ValueError("give either cells or use_published_tables")
        if self.cells is not None and len(self.cells) != 18:
            raise ValueError(f"need all 18 cells, got {len(self.cells)}")
        return self


class AnalyzeResponse(BaseModel):
    report: Dict[str, Any]
    processing_time: float
    timestamp: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))


# Simulation models
class ExpectedTalliesRequest(BaseModel):
    protocol: ProtocolSection = Field(default_factory=ProtocolSection)
    channel: ChannelSection = Field(default_factory=ChannelSection)
    detector: DetectorSection = Field(default_factory=DetectorSection)
    quadrature_points: Optional[int] = Field(default=None, ge=8)


class TallyRow(BaseModel):
    basis: str
    intensity_a: str
    intensity_b: str
    sent: float
    coincidences: float
    errors: float
    gain: float
    qber: Optional[float] = None


class ExpectedTalliesResponse(BaseModel):
    rows: List[TallyRow]


# Optimizer models
class OptimizeRequest(BaseModel):
    protocol: ProtocolSection = Field(default_factory=ProtocolSection)
    channel: ChannelSection = Field(default_factory=ChannelSection)
    detector: DetectorSection = Field(default_factory=DetectorSection)
    box: SearchBoxModel = Field(default_factory=SearchBoxModel)
    budget: int = Field(default=100, ge=1)
    n_alpha: float = Field(default=3.0, ge=0)


class OptimizeResponse(BaseModel):
    best_point: Dict[str, float]
    best_rate: float
    evaluations: int
    processing_time: float


class ErrorResponse(BaseModel):
    """Error payload for analysis failures"""
    detail: str
    error_type: str
