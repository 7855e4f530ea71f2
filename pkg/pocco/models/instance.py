from __future__ import annotations

import os
from typing import TYPE_CHECKING, Any, Iterable, Iterator, List, Optional, Tuple, Union

import numpy as np
import structlog

from ..enums import ProblemType
from ..errors import DataFormatError, InvalidArgument
from ..utils import derive_rng, format_f64, loads

if TYPE_CHECKING:
    from ..types.instance import Instance as InstancePayload, InstanceFileHeader

__all__ = (
    "Instance",
    "generate",
    "cvrp_capacity",
    "knapsack_capacity",
    "read_instances",
    "write_instances",
)

log = structlog.get_logger(__name__)

# vehicle capacity by problem size; sizes in between use the nearest row
_CVRP_CAPACITY = {20: 30.0, 50: 40.0, 100: 50.0}
_KNAPSACK_CAPACITY = {50: 12.5, 100: 25.0, 200: 25.0}


def _nearest(table: dict, n: int) -> float:
    size = min(table, key=lambda s: (abs(s - n), s))
    return table[size]


def cvrp_capacity(n: int) -> float:
    """:class:`float`: The vehicle capacity Q used for ``n`` customers."""
    return _nearest(_CVRP_CAPACITY, n)


def knapsack_capacity(n: int) -> float:
    """:class:`float`: The knapsack capacity C used for ``n`` items.

    Sizes below 50 continue the ``n / 4`` rule, never going under 1 so every item fits alone.
    """
    if n < 50:
        return max(1.0, n / 4.0)
    return _nearest(_KNAPSACK_CAPACITY, n)


def _check_kappa(problem: ProblemType, kappa: int) -> None:
    if kappa not in (2, 3) or (kappa == 3 and problem is not ProblemType.motsp):
        raise InvalidArgument(f"{problem.value} does not support kappa={kappa}")


def _feature_width(problem: ProblemType, kappa: int) -> int:
    if problem is ProblemType.motsp:
        return 2 * kappa
    if problem is ProblemType.mocvrp:
        return 3
    return 1 + kappa


class Instance:
    """One problem instance. Instances are never mutated after construction.

    Attributes
    -----------
    problem: :class:`~pocco.ProblemType`
        The problem family.
    n: :class:`int`
        Problem size: cities, customers (the depot is extra) or items.
    kappa: :class:`int`
        Number of objectives.
    features: :class:`numpy.ndarray`
        One row per node. MOTSP rows are ``[x1, y1, ..., xk, yk]``; MOCVRP rows are
        ``[x, y, demand / Q]`` with the depot first; MOKP rows are ``[w, p1, ..., pk]``.
    capacity: Optional[:class:`float`]
        ``1.0`` for MOCVRP (demands are stored relative to Q), C for MOKP, ``None`` for MOTSP.
    """

    __slots__ = ("problem", "n", "kappa", "features", "capacity")

    def __init__(
        self,
        problem: ProblemType,
        n: int,
        kappa: int,
        features: np.ndarray,
        capacity: Optional[float] = None,
    ) -> None:
        self.problem: ProblemType = problem
        self.n: int = n
        self.kappa: int = kappa
        self.features: np.ndarray = np.array(features, dtype=np.float64)
        self.features.flags.writeable = False
        self.capacity: Optional[float] = None if capacity is None else float(capacity)

    def __repr__(self) -> str:
        return f"<Instance problem={self.problem.value} n={self.n} kappa={self.kappa}>"

    def __eq__(self, other: Any) -> bool:
        return (
            isinstance(other, Instance)
            and self.problem is other.problem
            and self.n == other.n
            and self.kappa == other.kappa
            and self.capacity == other.capacity
            and np.array_equal(self.features, other.features)
        )

    @property
    def n_nodes(self) -> int:
        """:class:`int`: Number of selectable nodes, including the MOCVRP depot."""
        return self.features.shape[0]

    def coordinates(self, objective: int) -> np.ndarray:
        """Returns the ``(n_nodes, 2)`` coordinates that define ``objective``'s distances."""
        if self.problem is ProblemType.motsp:
            return self.features[:, 2 * objective : 2 * objective + 2]
        if self.problem is ProblemType.mocvrp:
            return self.features[:, :2]
        raise InvalidArgument("MOKP instances have no coordinates")

    @property
    def demands(self) -> np.ndarray:
        """:class:`numpy.ndarray`: MOCVRP demands relative to the vehicle capacity."""
        return self.features[:, 2]

    @property
    def weights(self) -> np.ndarray:
        return self.features[:, 0]

    @property
    def profits(self) -> np.ndarray:
        return self.features[:, 1:]

    def with_features(self, features: np.ndarray) -> Instance:
        return Instance(self.problem, self.n, self.kappa, features, self.capacity)

    def to_payload(self) -> InstancePayload:
        return {
            "problem": self.problem.value,
            "n": self.n,
            "kappa": self.kappa,
            "features": self.features.tolist(),
            "capacity": self.capacity,
        }

    @classmethod
    def from_payload(cls, data: Any, *, path: Optional[str] = None, line: Optional[int] = None) -> Instance:
        def fail(message: str) -> DataFormatError:
            return DataFormatError(message, path=path, line=line)

        if not isinstance(data, dict):
            raise fail("expected a JSON object")

        missing = {"problem", "n", "kappa", "features", "capacity"} - set(data)
        if missing:
            raise fail(f"missing keys {sorted(missing)}")

        try:
            problem = ProblemType(data["problem"])
        except ValueError:
            raise fail(f"unknown problem {data['problem']!r}") from None

        n, kappa = data["n"], data["kappa"]
        if not isinstance(n, int) or not isinstance(kappa, int):
            raise fail("n and kappa must be integers")
        try:
            _check_kappa(problem, kappa)
        except InvalidArgument as exc:
            raise fail(str(exc)) from None

        try:
            features = np.array(data["features"], dtype=np.float64)
        except (TypeError, ValueError):
            raise fail("features must be a rectangular array of numbers") from None

        rows = n + 1 if problem is ProblemType.mocvrp else n
        expected = (rows, _feature_width(problem, kappa))
        if features.shape != expected:
            raise fail(f"features have shape {features.shape}, expected {expected}")
        if not np.all(np.isfinite(features)):
            raise fail("features must be finite")

        capacity = data["capacity"]
        if (capacity is None) != (problem is ProblemType.motsp):
            raise fail(f"capacity {capacity!r} does not fit {problem.value}")

        return cls(problem, n, kappa, features, capacity)


def generate(problem: Union[ProblemType, str], n: int, kappa: int, seed: int, *key: int) -> Instance:
    """Draws a uniform random instance.

    The stream is :func:`~pocco.utils.derive_rng` ``(seed, *key)``, so equal arguments give
    bit-identical instances.

    Raises
    -------
    InvalidArgument
        ``n < 2`` or an unsupported ``(problem, kappa)`` pair.
    """
    problem = ProblemType(problem)
    if n < 2:
        raise InvalidArgument(f"problem size must be at least 2, got {n}")
    _check_kappa(problem, kappa)

    rng = derive_rng(seed, *key)
    if problem is ProblemType.motsp:
        return Instance(problem, n, kappa, rng.uniform(0.0, 1.0, size=(n, 2 * kappa)))

    if problem is ProblemType.mocvrp:
        q = cvrp_capacity(n)
        xy = rng.uniform(0.0, 1.0, size=(n + 1, 2))
        demand = np.concatenate([[0.0], rng.integers(1, 10, size=n) / q])
        return Instance(problem, n, kappa, np.column_stack([xy, demand]), 1.0)

    features = rng.uniform(0.0, 1.0, size=(n, 1 + kappa))
    return Instance(problem, n, kappa, features, knapsack_capacity(n))


def _encode(instance: Instance) -> str:
    # hand-built so every float carries 17 significant digits
    rows = ",".join("[" + ",".join(format_f64(v) for v in row) + "]" for row in instance.features)
    capacity = "null" if instance.capacity is None else format_f64(instance.capacity)
    return (
        f'{{"capacity":{capacity},"features":[{rows}],"kappa":{instance.kappa},'
        f'"n":{instance.n},"problem":"{instance.problem.value}"}}'
    )


def write_instances(
    path: Union[str, "os.PathLike[str]"],
    instances: Iterable[Instance],
    header: InstanceFileHeader,
) -> int:
    """Writes one instance per line after a ``#`` header comment. Returns the count written."""
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        fp.write("# " + " ".join(f"{k}={header[k]}" for k in sorted(header)) + "\n")
        for instance in instances:
            fp.write(_encode(instance) + "\n")
            count += 1

    return count


def _iter_lines(path: str) -> Iterator[Tuple[int, str]]:
    with open(path, "r", encoding="utf-8") as fp:
        for number, text in enumerate(fp, start=1):
            stripped = text.strip()
            if stripped and not stripped.startswith("#"):
                yield number, stripped


def read_instances(path: Union[str, "os.PathLike[str]"]) -> List[Instance]:
    """Reads an instance file, skipping comments and blank lines.

    Raises
    -------
    DataFormatError
        A line is not valid JSON or not a valid instance; the error carries the line number.
    """
    path = os.fspath(path)
    instances = []
    for number, text in _iter_lines(path):
        try:
            data = loads(text)
        except ValueError as exc:
            raise DataFormatError(f"invalid JSON: {exc}", path=path, line=number) from None
        instances.append(Instance.from_payload(data, path=path, line=number))

    log.debug("instances_read", path=path, count=len(instances))
    return instances
