from __future__ import annotations

from typing import List, Literal, Optional, TypedDict

__all__ = (
    "ProblemName",
    "Instance",
    "InstanceFileHeader",
)


ProblemName = Literal["MOTSP", "MOCVRP", "MOKP"]


class Instance(TypedDict):
    problem: ProblemName
    n: int
    kappa: int
    features: List[List[float]]
    capacity: Optional[float]


class InstanceFileHeader(TypedDict):
    problem: ProblemName
    n: int
    kappa: int
    count: int
    seed: int
