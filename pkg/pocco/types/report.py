from __future__ import annotations

from typing import Dict, List, Literal, Optional, TypedDict

__all__ = (
    "HvFrame",
    "HvReport",
    "EvalReport",
    "RankSumVerdict",
)


class HvFrame(TypedDict):
    reference: List[float]
    ideal: List[float]


class HvReport(TypedDict):
    hv: float
    normalized_hv: float
    gap: Optional[float]
    n_points: int
    frame: HvFrame


class _EvalReportOptional(TypedDict, total=False):
    expert_load: Dict[str, List[int]]


class EvalReport(_EvalReportOptional):
    mean_hv: float
    gap: Optional[float]
    n_instances: int
    n_weights: int
    augment: bool
    wall_ms: Optional[float]


class RankSumVerdict(TypedDict):
    statistic: float
    p_value: float
    alpha: float
    significant: bool
    better: Literal["a", "b", "none"]
