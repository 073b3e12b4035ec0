"""
Deterministic parameter search for the decoy protocol.

Candidate points are scored with the expected-tallies engine followed by the
finite-statistics bound chain and the key-rate formula. The search is a
coordinate descent over refining grids: every coordinate is scanned on a
small grid around the incumbent, and grids shrink once a full sweep brings
no improvement.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import (
    DEFAULT_PROTOCOL, OMEGA_FLOOR, BoundMode, ChannelParams,
    DetectorParams, FluctuationConfig, ProtocolConfig, Y11Formula,
)
from .core import pair_pulse_count_array, validate_all
from .decoy import decoy_bounds, key_rate, p11
from .exceptions import ConfigValidationError, DecoyBoundError, DomainError
from .optics import expected_tallies
from .tally import fluct_bounds

logger = logging.getLogger(__name__)

COORDINATES = ("mu", "nu", "omega", "p_mu", "p_nu", "basis_probability_z")


@dataclass(frozen=True)
class ParameterPoint:
    """Searchable source settings; p_omega is whatever probability remains"""
    mu: float
    nu: float
    omega: float
    p_mu: float
    p_nu: float
    basis_probability_z: float

    @property
    def p_omega(self) -> float:
        return 1.0 - self.p_mu - self.p_nu

    @property
    def violations(self) -> List[str]:
        problems = []
        if not (self.mu > self.nu > self.omega >= OMEGA_FLOOR):
            problems.append(f"need mu > nu > omega >= {OMEGA_FLOOR}")
        if self.p_mu < 0 or self.p_nu < 0 or self.p_omega < -1e-12:
            problems.append("intensity probabilities must be nonnegative and sum to 1")
        if not (0.0 < self.basis_probability_z < 1.0):
            problems.append("basis probability must lie in (0, 1)")
        return problems

    @property
    def is_valid(self) -> bool:
        return not self.violations

    def require_valid(self) -> None:
        if self.violations:
            raise DomainError(f"Invalid parameter point {self}: {'; '.join(self.violations)}")

    def to_protocol(self, total_pulses: float) -> ProtocolConfig:
        return ProtocolConfig.from_values(
            self.mu, self.nu, self.omega,
            intensity_probabilities=(self.p_mu, self.p_nu, max(0.0, self.p_omega)),
            basis_probability_z=self.basis_probability_z,
            total_pulses=int(total_pulses),
        )

    @classmethod
    def from_protocol(cls, cfg: ProtocolConfig) -> "ParameterPoint":
        p_mu, p_nu, _ = cfg.intensity_probabilities
        return cls(cfg.mu, cfg.nu, cfg.omega, p_mu, p_nu, cfg.basis_probability_z)

    def to_dict(self) -> Dict[str, float]:
        data = asdict(self)
        data["p_omega"] = self.p_omega
        return data


DEFAULT_POINT = ParameterPoint.from_protocol(DEFAULT_PROTOCOL)


@dataclass(frozen=True)
class SearchBox:
    """Closed interval per coordinate"""
    mu: Tuple[float, float] = (0.05, 0.8)
    nu: Tuple[float, float] = (0.01, 0.3)
    omega: Tuple[float, float] = (OMEGA_FLOOR, 0.05)
    p_mu: Tuple[float, float] = (0.05, 0.8)
    p_nu: Tuple[float, float] = (0.05, 0.8)
    basis_probability_z: Tuple[float, float] = (0.2, 0.9)

    def __post_init__(self):
        for name in COORDINATES:
            lo, hi = getattr(self, name)
            if lo > hi:
                raise DomainError(f"Empty search interval for {name}: [{lo}, {hi}]")

    @classmethod
    def collapsed(cls, point: ParameterPoint) -> "SearchBox":
        return cls(**{name: (getattr(point, name), getattr(point, name)) for name in COORDINATES})

    def contains(self, point: ParameterPoint) -> bool:
        return all(lo <= getattr(point, name) <= hi for name, (lo, hi) in self.intervals())

    def clip(self, point: ParameterPoint) -> ParameterPoint:
        return replace(point, **{name: float(np.clip(getattr(point, name), lo, hi))
                                 for name, (lo, hi) in self.intervals()})

    def intervals(self) -> List[Tuple[str, Tuple[float, float]]]:
        return [(name, getattr(self, name)) for name in COORDINATES]


@dataclass
class OptimizationResult:
    best_point: ParameterPoint
    best_rate: float
    trace: List[Tuple[ParameterPoint, float]] = field(default_factory=list)
    evaluations: int = 0

    def to_dict(self) -> Dict:
        return {
            "best_point": self.best_point.to_dict(),
            "best_rate": self.best_rate,
            "evaluations": self.evaluations,
        }


def _chain_rate(point: ParameterPoint, ch: ChannelParams, det: DetectorParams, total_pulses: float,
                n_alpha: float, f: float, quadrature_points: int, formula: Y11Formula) -> float:
    cfg = point.to_protocol(total_pulses)
    validate_all(cfg, ch, det).raise_if_invalid()
    tallies = expected_tallies(cfg, ch, det, quadrature_points)
    bounded = fluct_bounds(tallies, pair_pulse_count_array(cfg), FluctuationConfig(n_alpha=n_alpha))
    mode = BoundMode.INFINITE_KEY if n_alpha == 0 else BoundMode.FINITE_N_ALPHA
    try:
        bounds = decoy_bounds(bounded, cfg.means, mode, formula)
    except DecoyBoundError:
        return 0.0
    report = key_rate(
        q=cfg.signal_pair_fraction,
        p11=p11(cfg.mu),
        y11_z_lower=bounds.y11_z_lower,
        e11_x_upper=bounds.e11_x_upper,
        gain_signal=float(tallies.gains[0, 0, 0]),
        qber_signal=float(np.nan_to_num(tallies.qbers[0, 0, 0])),
        f=f,
        total_pulses=total_pulses,
    )
    return report.rate


def evaluate_rate(p: ParameterPoint, ch: ChannelParams, det: DetectorParams, total_pulses: float = 1.69e11,
                  n_alpha: float = 3.0, f: float = 1.16, quadrature_points: int = 64,
                  formula: Y11Formula = Y11Formula.DERIVED) -> float:
    """
    Secure key rate per pulse slot at point p.

    Expected tallies stand in for observations; envelopes use the pulse
    allocation of N = total_pulses. n_alpha = 0 gives the infinite-key rate.
    A zero X-basis yield bound makes the rate 0.
    """
    p.require_valid()
    return _chain_rate(p, ch, det, total_pulses, n_alpha, f, quadrature_points, formula)


def _evaluate_job(args) -> Optional[float]:
    point, ch, det, total_pulses, n_alpha, f, quadrature_points, formula = args
    if not point.is_valid:
        return None
    try:
        return _chain_rate(point, ch, det, total_pulses, n_alpha, f, quadrature_points, formula)
    except (DomainError, ConfigValidationError):
        return None


def _candidates(current: ParameterPoint, name: str, step: float, lo: float, hi: float,
                grid_points: int) -> List[ParameterPoint]:
    value = getattr(current, name)
    half = grid_points // 2
    values = []
    for k in range(-half, half + 1):
        candidate = float(np.clip(value + k * step, lo, hi))
        if candidate != value and candidate not in values:
            values.append(candidate)
    return [replace(current, **{name: v}) for v in values]


def optimize(box: SearchBox, ch: ChannelParams, det: DetectorParams, total_pulses: float = 1.69e11,
             budget: int = 200, n_alpha: float = 3.0, f: float = 1.16, quadrature_points: int = 64,
             start: Optional[ParameterPoint] = None, grid_points: int = 5, shrink: float = 0.5,
             min_relative_step: float = 1e-4, workers: Optional[int] = None,
             formula: Y11Formula = Y11Formula.DERIVED) -> OptimizationResult:
    """
    Maximize the key rate over ``box`` with at most ``budget`` evaluations.

    The search starts from ``start`` (default: the reference point clipped
    into the box), so the result is never worse than that point. Invalid
    candidates are skipped but still count against the budget.
    """
    if budget < 1:
        raise DomainError(f"Budget must be at least 1 evaluation, got {budget}")
    if grid_points < 3:
        raise DomainError(f"grid_points must be at least 3, got {grid_points}")
    if not (0.0 < shrink < 1.0):
        raise DomainError(f"shrink must lie in (0, 1), got {shrink}")

    current = box.clip(start or DEFAULT_POINT)
    settings = (ch, det, total_pulses, n_alpha, f, quadrature_points, formula)
    steps = {name: (hi - lo) / (grid_points - 1) for name, (lo, hi) in box.intervals()}
    widths = {name: hi - lo for name, (lo, hi) in box.intervals()}

    trace: List[Tuple[ParameterPoint, float]] = []
    used = 0
    best_rate: Optional[float] = None
    best_point = current

    pool = ProcessPoolExecutor(max_workers=workers) if workers and workers > 1 else None
    try:
        def run(points: Sequence[ParameterPoint]) -> List[Optional[float]]:
            jobs = [(pt,) + settings for pt in points]
            return list(pool.map(_evaluate_job, jobs)) if pool else [_evaluate_job(job) for job in jobs]

        start_rate = run([current])[0]
        used += 1
        if start_rate is not None:
            trace.append((current, start_rate))
            best_rate = start_rate

        logger.info(f"Optimizer start {current.to_dict()} rate={best_rate}, budget={budget}")

        while used < budget:
            improved = False
            for name, (lo, hi) in box.intervals():
                if used >= budget:
                    break
                if steps[name] <= 0:
                    continue
                candidates = _candidates(best_point, name, steps[name], lo, hi, grid_points)
                candidates = candidates[:budget - used]
                rates = run(candidates)
                used += len(candidates)
                for point, rate in zip(candidates, rates):
                    if rate is None:
                        continue
                    trace.append((point, rate))
                    if best_rate is None or rate > best_rate:
                        best_rate, best_point = rate, point
                        improved = True

            if not improved:
                active = False
                for name in COORDINATES:
                    steps[name] *= shrink
                    if steps[name] > min_relative_step * widths[name]:
                        active = True
                if not active:
                    break
    finally:
        if pool:
            pool.shutdown()

    if best_rate is None:
        raise DomainError("No valid parameter point found in the search box")

    logger.info(f"Optimizer finished after {used} evaluation(s): rate={best_rate:.5e} at {best_point.to_dict()}")
    return OptimizationResult(best_point=best_point, best_rate=best_rate, trace=trace, evaluations=used)


def sweep_distance(point: ParameterPoint, distances_km: Sequence[float], ch: ChannelParams,
                   det: DetectorParams, total_pulses: float = 1.69e11, n_alpha: float = 3.0,
                   f: float = 1.16, quadrature_points: int = 64) -> List[Tuple[float, float]]:
    """Rate versus total Alice-Bob distance; Charlie sits in the middle"""
    results = []
    for distance in distances_km:
        if distance < 0:
            raise DomainError(f"Distance must be nonnegative, got {distance}")
        channel = replace(ch, fiber_length_km=distance / 2.0)
        rate = evaluate_rate(point, channel, det, total_pulses, n_alpha, f, quadrature_points)
        results.append((float(distance), rate))
    return results

