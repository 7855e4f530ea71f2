from enum import Enum

__all__ = (
    "ProblemType",
    "Orientation",
    "Scheme",
    "Algorithm",
    "DecodeMode",
    "Primitive",
)


class Orientation(Enum):
    minimize = "minimize"
    maximize = "maximize"


class ProblemType(Enum):
    motsp  = "MOTSP"
    mocvrp = "MOCVRP"
    mokp   = "MOKP"

    @property
    def orientation(self) -> Orientation:
        """:class:`Orientation`: The direction in which objectives improve."""
        if self is ProblemType.mokp:
            return Orientation.maximize

        return Orientation.minimize

    @property
    def is_coordinate_based(self) -> bool:
        return self is not ProblemType.mokp


class Scheme(Enum):
    weighted_sum = "WS"
    tchebycheff  = "TCH"
    pbi          = "PBI"


class Algorithm(Enum):
    preference = "PL"
    reinforce  = "REINFORCE"


class DecodeMode(Enum):
    greedy = "greedy"
    sample = "sample"


class Primitive(Enum):
    leaf          = "leaf"
    matmul        = "matmul"
    add           = "add"
    sub           = "sub"
    mul           = "mul_elementwise"
    scale         = "scale"
    tanh          = "tanh"
    sigmoid       = "sigmoid"
    log_sigmoid   = "log_sigmoid"
    relu          = "relu"
    exp           = "exp"
    log           = "log"
    softmax       = "softmax"
    log_softmax   = "log_softmax"
    mean          = "mean"
    sum           = "sum"
    instance_norm = "instance_norm"
    concat        = "concat"
    gather        = "gather"
    masked_fill   = "masked_fill"
    topk          = "topk"
