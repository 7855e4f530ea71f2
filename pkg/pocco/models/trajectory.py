from __future__ import annotations

from typing import List, Optional

import numpy as np

from ..core import tensor as T
from ..core.tensor import Value
from ..errors import InvalidArgument
from .instance import Instance

__all__ = (
    "Trajectory",
    "avg_log_likelihood",
)


class Trajectory:
    """A complete solution together with the log-probabilities that produced it.

    Attributes
    -----------
    instance: :class:`Instance`
        The solved instance.
    weight: :class:`numpy.ndarray`
        The weight vector of the subproblem.
    actions: List[:class:`int`]
        The action sequence.
    log_probs: List[:class:`~pocco.core.Value`]
        Per-step ``log p(a_t | a_<t)`` as ``(1, 1)`` graph nodes.
    objectives: :class:`numpy.ndarray`
        Raw objective vector from :func:`~pocco.models.env.evaluate`.
    router_load: Optional[:class:`numpy.ndarray`]
        Expert selection counts, one row per gated block.
    """

    __slots__ = ("instance", "weight", "actions", "log_probs", "objectives", "router_load")

    def __init__(
        self,
        instance: Instance,
        weight: np.ndarray,
        actions: List[int],
        log_probs: List[Value],
        objectives: np.ndarray,
        router_load: Optional[np.ndarray] = None,
    ) -> None:
        self.instance: Instance = instance
        self.weight: np.ndarray = weight
        self.actions: List[int] = actions
        self.log_probs: List[Value] = log_probs
        self.objectives: np.ndarray = objectives
        self.router_load: Optional[np.ndarray] = router_load

    def __len__(self) -> int:
        return len(self.actions)

    def __repr__(self) -> str:
        return f"<Trajectory steps={len(self)} objectives={self.objectives.tolist()}>"

    def log_likelihood(self) -> Value:
        """``log p(pi | instance, weight)`` as a scalar graph node."""
        if not self.log_probs:
            raise InvalidArgument("trajectory has no steps")
        return T.reduce_sum(T.concat(self.log_probs, axis=0))

    @property
    def step_log_probs(self) -> np.ndarray:
        return np.array([v.item() for v in self.log_probs])


def avg_log_likelihood(traj: Trajectory) -> Value:
    """The per-step mean log-likelihood, used as the implicit reward of a solution."""
    return T.scale(traj.log_likelihood(), 1.0 / len(traj))
