"""
pocco.config
~~~~~~~~~~~~

Run configuration. Every model rejects unknown keys so a misspelled option fails loudly
instead of silently falling back to a default.
"""

from __future__ import annotations

import os
from typing import List, Literal, Optional, Tuple, Type, TypeVar, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .enums import Algorithm, DecodeMode, ProblemType, Scheme
from .errors import DataFormatError
from .utils import read_json, write_json

__all__ = (
    "ModelConfig",
    "ScalarizationConfig",
    "FrameConfig",
    "TrainConfig",
    "VarianceConfig",
    "EvalConfig",
    "load_config",
    "write_config",
)

ConfigT = TypeVar("ConfigT", bound=BaseModel)

ProblemName = Literal["MOTSP", "MOCVRP", "MOKP"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelConfig(_Strict):
    embed_dim: int = Field(32, gt=0)
    n_encoder_layers: int = Field(2, gt=0)
    n_heads: int = Field(4, gt=0)
    n_ff_experts: int = Field(4, gt=0)
    topk: int = Field(2, gt=0)
    clip: float = Field(50.0, gt=0.0)
    ff_hidden: Optional[int] = Field(None, gt=0, description="Defaults to 4 * embed_dim")
    n_cco_layers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check_shapes(self) -> "ModelConfig":
        if self.embed_dim % self.n_heads:
            raise ValueError(f"embed_dim {self.embed_dim} is not divisible by n_heads {self.n_heads}")
        if self.topk > self.n_ff_experts + 1:
            raise ValueError(f"topk {self.topk} exceeds the {self.n_ff_experts + 1} available experts")
        return self

    @property
    def hidden(self) -> int:
        return self.ff_hidden if self.ff_hidden is not None else 4 * self.embed_dim

    def resolved(self) -> "ModelConfig":
        return self.model_copy(update={"ff_hidden": self.hidden})


class ScalarizationConfig(_Strict):
    scheme: Literal["WS", "TCH", "PBI"] = "WS"
    ideal_point: Optional[List[float]] = Field(None, description="Minimization form; defaults to the frame ideal")
    pbi_alpha: float = Field(5.0, gt=0.0)

    def build(self, problem: ProblemType, kappa: int, n: int):
        from .models.weights import Scalarization

        return Scalarization.for_problem(problem, kappa, n, Scheme(self.scheme), self.ideal_point, self.pbi_alpha)

    def resolved(self, problem: ProblemType, kappa: int, n: int) -> "ScalarizationConfig":
        return self.model_copy(update={"ideal_point": self.build(problem, kappa, n).ideal.tolist()})


class FrameConfig(_Strict):
    reference: Optional[List[float]] = None
    ideal: Optional[List[float]] = None

    def build(self, problem: ProblemType, kappa: int, n: int):
        from .models.pareto import HvFrame, reference_frame

        table = reference_frame(problem, kappa, n)
        reference = self.reference if self.reference is not None else table.reference
        ideal = self.ideal if self.ideal is not None else table.ideal
        return HvFrame(reference, ideal, problem.orientation)

    def resolved(self, problem: ProblemType, kappa: int, n: int) -> "FrameConfig":
        frame = self.build(problem, kappa, n)
        return self.model_copy(update={"reference": frame.reference.tolist(), "ideal": frame.ideal.tolist()})


class _ProblemMixin(_Strict):
    problem: ProblemName = "MOTSP"
    n: int = Field(20, ge=2)
    kappa: int = Field(2, ge=2, le=3)

    @model_validator(mode="after")
    def _check_problem(self):
        if self.kappa == 3 and self.problem != "MOTSP":
            raise ValueError(f"{self.problem} supports kappa=2 only")
        return self

    @property
    def problem_type(self) -> ProblemType:
        return ProblemType(self.problem)


class TrainConfig(_ProblemMixin):
    batch_size: int = Field(16, gt=0)
    n_range: Optional[Tuple[int, int]] = Field(None, description="Inclusive bounds of a size drawn per batch; n stays the validation size")
    samples_per_subproblem: int = Field(2, ge=2)
    beta: Optional[float] = Field(None, gt=0.0, description="Defaults to 3.5 for two objectives, 4.5 for three")
    steps: int = Field(200, ge=0)
    algorithm: Literal["PL", "REINFORCE"] = "PL"
    seed: int = Field(0, ge=0, le=2**64 - 1)
    lr: float = Field(3e-4, gt=0.0)
    weight_decay: float = Field(1e-6, ge=0.0)
    validate_every: int = Field(100, ge=1)
    validation_size: int = Field(64, ge=1)
    validation_H: Optional[int] = Field(None, ge=1, description="Defaults to 10 for two objectives, 13 for three")
    variance_batches: int = Field(5, ge=0)
    threads: int = Field(1, ge=1)
    log_wall_time: bool = False
    progress: bool = False
    model: ModelConfig = Field(default_factory=ModelConfig)
    scalarization: ScalarizationConfig = Field(default_factory=ScalarizationConfig)
    frame: FrameConfig = Field(default_factory=FrameConfig)

    @field_validator("n_range")
    @classmethod
    def _check_n_range(cls, v: Optional[Tuple[int, int]]) -> Optional[Tuple[int, int]]:
        if v is not None and not 2 <= v[0] <= v[1]:
            raise ValueError(f"n_range must satisfy 2 <= min <= max, got {list(v)}")
        return v

    @property
    def algorithm_type(self) -> Algorithm:
        return Algorithm(self.algorithm)

    @property
    def resolved_beta(self) -> float:
        if self.beta is not None:
            return self.beta
        return 3.5 if self.kappa == 2 else 4.5

    @property
    def resolved_validation_H(self) -> int:
        if self.validation_H is not None:
            return self.validation_H
        return 10 if self.kappa == 2 else 13

    def resolved(self) -> "TrainConfig":
        """Returns a copy with every defaulted-by-``None`` field filled in.

        With ``n_range`` an unset ideal point stays unset and is looked up per batch size.
        """
        problem = self.problem_type
        return self.model_copy(
            update={
                "beta": self.resolved_beta,
                "validation_H": self.resolved_validation_H,
                "model": self.model.resolved(),
                "scalarization": (
                    self.scalarization if self.n_range is not None
                    else self.scalarization.resolved(problem, self.kappa, self.n)
                ),
                "frame": self.frame.resolved(problem, self.kappa, self.n),
            }
        )


class VarianceConfig(TrainConfig):
    """A training setup whose first batches are measured under both algorithms;
    ``algorithm`` picks the gradient that drives the updates in between."""


class EvalConfig(_ProblemMixin):
    checkpoint: str
    dataset: str
    weights: str
    hv_ref: Optional[float] = Field(None, gt=0.0)
    augment: bool = False
    pool_augmented: bool = False
    mode: Literal["greedy", "sample"] = "greedy"
    seed: int = Field(0, ge=0, le=2**64 - 1)
    threads: int = Field(1, ge=1)
    log_wall_time: bool = False
    write_fronts: bool = False
    scalarization: ScalarizationConfig = Field(default_factory=ScalarizationConfig)
    frame: FrameConfig = Field(default_factory=FrameConfig)

    @field_validator("checkpoint", "dataset", "weights")
    @classmethod
    def _non_empty_path(cls, v: str) -> str:
        if not v:
            raise ValueError("path must not be empty")
        return v

    @property
    def decode_mode(self) -> DecodeMode:
        return DecodeMode(self.mode)

    def resolved(self) -> "EvalConfig":
        problem = self.problem_type
        return self.model_copy(
            update={
                "scalarization": self.scalarization.resolved(problem, self.kappa, self.n),
                "frame": self.frame.resolved(problem, self.kappa, self.n),
            }
        )


def load_config(cls: Type[ConfigT], path: Union[str, "os.PathLike[str]"]) -> ConfigT:
    """Reads and validates a JSON config file.

    Raises
    -------
    DataFormatError
        The file is not JSON or fails validation; every failure is listed.
    """
    data = read_json(path)
    try:
        return cls.model_validate(data)
    except ValidationError as exc:
        raise DataFormatError(exc.errors(), path=os.fspath(path)) from None


def write_config(path: Union[str, "os.PathLike[str]"], config: BaseModel) -> None:
    write_json(path, config.model_dump(mode="json"))
