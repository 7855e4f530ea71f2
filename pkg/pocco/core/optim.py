from __future__ import annotations

from typing import List, Sequence

import numpy as np

from ..errors import InvalidArgument, ShapeError
from .tensor import Value

__all__ = (
    "AdamState",
    "adam_step",
    "Adam",
)


class AdamState:
    """Moment estimates and constants for one parameter.

    Attributes
    -----------
    step: :class:`int`
        Number of updates applied so far.
    m: :class:`numpy.ndarray`
        First moment estimate.
    v: :class:`numpy.ndarray`
        Second moment estimate.
    """

    __slots__ = ("step", "m", "v", "lr", "beta1", "beta2", "eps", "weight_decay")

    def __init__(
        self,
        shape: Sequence[int],
        *,
        lr: float = 3e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 1e-6,
    ) -> None:
        self.step: int = 0
        self.m: np.ndarray = np.zeros(tuple(shape))
        self.v: np.ndarray = np.zeros(tuple(shape))
        self.lr: float = lr
        self.beta1: float = beta1
        self.beta2: float = beta2
        self.eps: float = eps
        self.weight_decay: float = weight_decay

    def __repr__(self) -> str:
        return f"<AdamState step={self.step} shape={self.m.shape} lr={self.lr}>"


def adam_step(params: Sequence[Value], states: Sequence[AdamState]) -> None:
    """Applies one Adam update with decoupled weight decay, then zeroes the gradients.

    The update for each parameter ``p`` is ::

        p <- p * (1 - lr * weight_decay) - lr * m_hat / (sqrt(v_hat) + eps)

    Parameter arrays are replaced, never written in place, so graphs recorded before the
    step keep the values they were built from.

    Raises
    -------
    InvalidArgument
        The lists differ in length or a parameter has no gradient.
    ShapeError
        A state does not match its parameter.
    """
    if len(params) != len(states):
        raise InvalidArgument(f"{len(params)} parameters but {len(states)} optimizer states")

    for param, state in zip(params, states):
        if param.grad is None:
            raise InvalidArgument(f"parameter {param.name or param.id} has no gradient")
        if state.m.shape != param.shape:
            raise ShapeError("adam_step", [param.shape, state.m.shape])

        g = param.grad
        state.step += 1
        state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
        state.v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)

        m_hat = state.m / (1.0 - state.beta1 ** state.step)
        v_hat = state.v / (1.0 - state.beta2 ** state.step)

        decayed = param.data * (1.0 - state.lr * state.weight_decay)
        param.data = decayed - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        param.zero_grad()


class Adam:
    """Holds one :class:`AdamState` per parameter.

    Example Usage: ::

        optimizer = Adam(policy.parameters(), lr=3e-4, weight_decay=1e-6)
        backward(loss)
        optimizer.step()
    """

    def __init__(self, params: Sequence[Value], **hyper: float) -> None:
        self.params: List[Value] = list(params)
        self.states: List[AdamState] = [AdamState(p.shape, **hyper) for p in self.params]

    def step(self) -> None:
        adam_step(self.params, self.states)

    def zero_grad(self) -> None:
        for param in self.params:
            param.zero_grad()
