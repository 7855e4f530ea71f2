from __future__ import annotations

from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from ..enums import ProblemType
from ..errors import InfeasibleAction, InvalidArgument, InvalidSolution
from .instance import Instance

__all__ = (
    "EnvState",
    "reset",
    "feasible_mask",
    "step",
    "evaluate",
    "max_steps",
)

# slack for capacity comparisons on demands stored as fractions of Q
CAPACITY_EPS = 1e-9

DEPOT = 0


class EnvState:
    """The construction state of one solution.

    States are advanced with :func:`step`, which returns a new state and leaves the old one
    untouched.

    Attributes
    -----------
    instance: :class:`Instance`
        The instance being solved.
    partial: List[:class:`int`]
        Actions taken so far.
    visited: :class:`numpy.ndarray`
        Boolean flag per node. The MOCVRP depot is never flagged.
    remaining: Optional[:class:`float`]
        Remaining vehicle or knapsack capacity; ``None`` for MOTSP.
    current: Optional[:class:`int`]
        Last visited node (MOTSP, MOCVRP).
    first: Optional[:class:`int`]
        First visited node (MOTSP).
    done: :class:`bool`
        Whether the solution is complete.
    """

    __slots__ = ("instance", "partial", "visited", "remaining", "current", "first", "done")

    def __init__(
        self,
        instance: Instance,
        partial: List[int],
        visited: np.ndarray,
        remaining: Optional[float],
        current: Optional[int],
        first: Optional[int],
        done: bool,
    ) -> None:
        self.instance: Instance = instance
        self.partial: List[int] = partial
        self.visited: np.ndarray = visited
        self.remaining: Optional[float] = remaining
        self.current: Optional[int] = current
        self.first: Optional[int] = first
        self.done: bool = done

    def __repr__(self) -> str:
        return (
            f"<EnvState problem={self.instance.problem.value} steps={len(self.partial)} "
            f"current={self.current} remaining={self.remaining} done={self.done}>"
        )

    def snapshot(self) -> Dict[str, Any]:
        return {
            "partial": list(self.partial),
            "visited": np.flatnonzero(self.visited).tolist(),
            "remaining": self.remaining,
            "current": self.current,
            "done": self.done,
        }


def max_steps(instance: Instance) -> int:
    """:class:`int`: Upper bound on the episode length."""
    if instance.problem is ProblemType.mocvrp:
        return 2 * instance.n + 1
    return instance.n


def _mask_of(instance: Instance, visited: np.ndarray, remaining: Optional[float], current: Optional[int]) -> np.ndarray:
    problem = instance.problem
    if problem is ProblemType.motsp:
        return ~visited

    if problem is ProblemType.mocvrp:
        fits = instance.demands <= remaining + CAPACITY_EPS
        mask = ~visited & fits
        unserved = not visited[1:].all()
        mask[DEPOT] = not (current == DEPOT and unserved)
        return mask

    return ~visited & (instance.weights <= remaining + CAPACITY_EPS)


def reset(instance: Instance) -> EnvState:
    """Returns the empty state. MOCVRP starts at the depot with a full vehicle."""
    visited = np.zeros(instance.n_nodes, dtype=bool)
    problem = instance.problem

    if problem is ProblemType.motsp:
        return EnvState(instance, [], visited, None, None, None, False)
    if problem is ProblemType.mocvrp:
        return EnvState(instance, [], visited, instance.capacity, DEPOT, None, False)

    done = not _mask_of(instance, visited, instance.capacity, None).any()
    return EnvState(instance, [], visited, instance.capacity, None, None, done)


def feasible_mask(state: EnvState) -> np.ndarray:
    """Returns a boolean vector over nodes that is ``True`` where an action is allowed.

    Raises
    -------
    InvalidArgument
        The state is already done.
    """
    if state.done:
        raise InvalidArgument("no actions remain in a finished state")
    return _mask_of(state.instance, state.visited, state.remaining, state.current)


def step(state: EnvState, action: int) -> EnvState:
    """Applies ``action`` and returns the successor state.

    Raises
    -------
    InvalidArgument
        The state is already done.
    InfeasibleAction
        ``action`` is masked or out of range.
    """
    mask = feasible_mask(state)
    action = int(action)
    if not 0 <= action < mask.size or not mask[action]:
        raise InfeasibleAction(action, state.snapshot())

    instance = state.instance
    visited = state.visited.copy()
    partial = state.partial + [action]
    problem = instance.problem

    if problem is ProblemType.motsp:
        visited[action] = True
        first = action if state.first is None else state.first
        return EnvState(instance, partial, visited, None, action, first, bool(visited.all()))

    if problem is ProblemType.mocvrp:
        if action == DEPOT:
            remaining = instance.capacity
        else:
            visited[action] = True
            remaining = max(0.0, state.remaining - instance.demands[action])
        done = action == DEPOT and bool(visited[1:].all())
        return EnvState(instance, partial, visited, remaining, action, None, done)

    visited[action] = True
    remaining = max(0.0, state.remaining - instance.weights[action])
    done = not _mask_of(instance, visited, remaining, None).any()
    return EnvState(instance, partial, visited, remaining, None, None, done)


def _tour_length(coords: np.ndarray, order: Sequence[int]) -> float:
    points = coords[np.asarray(order)]
    return float(np.linalg.norm(points - np.roll(points, -1, axis=0), axis=1).sum())


def _split_routes(instance: Instance, partial: Sequence[int]) -> List[List[int]]:
    if not partial or partial[-1] != DEPOT:
        raise InvalidSolution("MOCVRP solution must end at the depot")

    routes: List[List[int]] = []
    route: List[int] = []
    for node in partial:
        if node == DEPOT:
            if not route:
                raise InvalidSolution("consecutive depot visits")
            routes.append(route)
            route = []
        else:
            route.append(node)

    served = sorted(node for r in routes for node in r)
    if served != list(range(1, instance.n_nodes)):
        raise InvalidSolution("every customer must be served exactly once")

    for r in routes:
        if instance.demands[r].sum() > instance.capacity + CAPACITY_EPS:
            raise InvalidSolution(f"route {r} exceeds the vehicle capacity")

    return routes


def evaluate(instance: Instance, partial: Sequence[int]) -> np.ndarray:
    """Computes the objective vector of a complete solution.

    MOTSP gives one closed-tour length per coordinate set, MOCVRP gives the total length and
    the longest route length, and MOKP gives the profit sum per objective (to be maximized).

    Raises
    -------
    InvalidSolution
        The solution is incomplete or infeasible.
    """
    partial = [int(a) for a in partial]
    problem = instance.problem

    if problem is ProblemType.motsp:
        if sorted(partial) != list(range(instance.n_nodes)):
            raise InvalidSolution("MOTSP solution must visit every city exactly once")
        return np.array([_tour_length(instance.coordinates(j), partial) for j in range(instance.kappa)])

    if problem is ProblemType.mocvrp:
        coords = instance.coordinates(0)
        lengths = [_tour_length(coords, [DEPOT] + r) for r in _split_routes(instance, partial)]
        return np.array([sum(lengths), max(lengths)])

    if len(set(partial)) != len(partial) or not all(0 <= a < instance.n_nodes for a in partial):
        raise InvalidSolution("MOKP items must be distinct and in range")

    chosen = np.zeros(instance.n_nodes, dtype=bool)
    chosen[partial] = True
    load = instance.weights[chosen].sum()
    if load > instance.capacity + CAPACITY_EPS:
        raise InvalidSolution(f"selected weight {load} exceeds capacity {instance.capacity}")
    if _mask_of(instance, chosen, instance.capacity - load, None).any():
        raise InvalidSolution("MOKP solution is incomplete: another item still fits")

    return instance.profits[chosen].sum(axis=0)
