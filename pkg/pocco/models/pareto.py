from __future__ import annotations

import os
from typing import TYPE_CHECKING, Iterable, List, NamedTuple, Optional, Sequence, Union

import numpy as np

from ..enums import Orientation, ProblemType
from ..errors import InvalidArgument, ShapeError
from ..utils import format_row, parse_row

if TYPE_CHECKING:
    from ..types.report import HvFrame as HvFramePayload, HvReport

__all__ = (
    "dominates",
    "InsertResult",
    "ParetoArchive",
    "HvFrame",
    "reference_frame",
    "hypervolume",
    "normalized_hv",
    "gap",
    "hv_report",
    "read_front",
    "write_front",
)


def _as_vector(values: Sequence[float]) -> np.ndarray:
    return np.asarray(values, dtype=np.float64).reshape(-1)


def dominates(a: Sequence[float], b: Sequence[float], orientation: Orientation = Orientation.minimize) -> bool:
    """Whether ``a`` is no worse than ``b`` everywhere and differs somewhere.

    Raises
    -------
    ShapeError
        The vectors have different lengths.
    """
    a, b = _as_vector(a), _as_vector(b)
    if a.shape != b.shape:
        raise ShapeError("dominates", [a.shape, b.shape])

    if orientation is Orientation.maximize:
        a, b = -a, -b
    return bool(np.all(a <= b) and np.any(a != b))


class InsertResult(NamedTuple):
    accepted: bool
    removed: int

    def __repr__(self) -> str:
        return f"Accepted({self.removed})" if self.accepted else "Dominated"


class ParetoArchive:
    """A set of mutually non-dominated objective vectors.

    Exact duplicates are rejected, so the first copy is the one kept.
    """

    __slots__ = ("orientation", "kappa", "_points")

    def __init__(self, orientation: Orientation = Orientation.minimize, kappa: Optional[int] = None) -> None:
        self.orientation: Orientation = orientation
        self.kappa: Optional[int] = kappa
        self._points: List[np.ndarray] = []

    def __len__(self) -> int:
        return len(self._points)

    def __iter__(self):
        return iter(self._points)

    def __repr__(self) -> str:
        return f"<ParetoArchive orientation={self.orientation.value} size={len(self)}>"

    @property
    def points(self) -> np.ndarray:
        """:class:`numpy.ndarray`: The archived vectors in insertion order, shape ``(m, kappa)``."""
        if not self._points:
            return np.zeros((0, self.kappa or 0))
        return np.array(self._points)

    def insert(self, values: Sequence[float]) -> InsertResult:
        vector = _as_vector(values).copy()
        if not np.all(np.isfinite(vector)):
            raise InvalidArgument(f"objective vector {vector.tolist()} is not finite")
        if self.kappa is None:
            self.kappa = vector.size
        elif vector.size != self.kappa:
            raise ShapeError("archive_insert", [(self.kappa,), vector.shape])

        for kept in self._points:
            if dominates(kept, vector, self.orientation) or np.array_equal(kept, vector):
                return InsertResult(False, 0)

        survivors = [kept for kept in self._points if not dominates(vector, kept, self.orientation)]
        removed = len(self._points) - len(survivors)
        survivors.append(vector)
        self._points = survivors
        return InsertResult(True, removed)

    def extend(self, stream: Iterable[Sequence[float]]) -> None:
        for values in stream:
            self.insert(values)


class HvFrame:
    """Reference point ``r*`` and ideal point ``z`` for hypervolume.

    For maximized objectives the table stores ``r*`` below ``z``; the frame mirrors both
    (``f -> -f``) so every computation runs in minimization form.

    Raises
    -------
    InvalidArgument
        In minimization form some ``z_i`` is not strictly below ``r*_i``.
    """

    __slots__ = ("reference", "ideal", "orientation")

    def __init__(
        self,
        reference: Sequence[float],
        ideal: Sequence[float],
        orientation: Orientation = Orientation.minimize,
    ) -> None:
        self.reference: np.ndarray = _as_vector(reference)
        self.ideal: np.ndarray = _as_vector(ideal)
        self.orientation: Orientation = orientation

        if self.reference.shape != self.ideal.shape:
            raise ShapeError("hv_frame", [self.reference.shape, self.ideal.shape])
        if not np.all(self.ideal_min < self.reference_min):
            raise InvalidArgument(
                f"degenerate frame: ideal {self.ideal.tolist()} vs reference {self.reference.tolist()}"
            )

    def __repr__(self) -> str:
        return f"<HvFrame reference={self.reference.tolist()} ideal={self.ideal.tolist()}>"

    @property
    def kappa(self) -> int:
        return self.reference.size

    @property
    def reference_min(self) -> np.ndarray:
        return -self.reference if self.orientation is Orientation.maximize else self.reference

    @property
    def ideal_min(self) -> np.ndarray:
        return -self.ideal if self.orientation is Orientation.maximize else self.ideal

    @property
    def volume(self) -> float:
        """:class:`float`: Volume of the box between ideal and reference."""
        return float(np.prod(np.abs(self.reference - self.ideal)))

    def to_payload(self) -> HvFramePayload:
        return {"reference": self.reference.tolist(), "ideal": self.ideal.tolist()}


# (problem, kappa) -> size -> (reference, ideal); size 10 rows are desk-scale additions
_REFERENCE_TABLE = {
    (ProblemType.motsp, 2): {
        10: ((10.0, 10.0), (0.0, 0.0)),
        20: ((20.0, 20.0), (0.0, 0.0)),
        50: ((35.0, 35.0), (0.0, 0.0)),
        100: ((65.0, 65.0), (0.0, 0.0)),
        150: ((85.0, 85.0), (0.0, 0.0)),
        200: ((115.0, 115.0), (0.0, 0.0)),
    },
    (ProblemType.mocvrp, 2): {
        10: ((20.0, 4.0), (0.0, 0.0)),
        20: ((30.0, 4.0), (0.0, 0.0)),
        50: ((45.0, 4.0), (0.0, 0.0)),
        100: ((80.0, 4.0), (0.0, 0.0)),
    },
    (ProblemType.mokp, 2): {
        50: ((5.0, 5.0), (30.0, 30.0)),
        100: ((20.0, 20.0), (50.0, 50.0)),
        200: ((30.0, 30.0), (75.0, 75.0)),
    },
    (ProblemType.motsp, 3): {
        10: ((10.0, 10.0, 10.0), (0.0, 0.0, 0.0)),
        20: ((20.0, 20.0, 20.0), (0.0, 0.0, 0.0)),
        50: ((35.0, 35.0, 35.0), (0.0, 0.0, 0.0)),
        100: ((65.0, 65.0, 65.0), (0.0, 0.0, 0.0)),
    },
}


def reference_frame(problem: Union[ProblemType, str], kappa: int, n: int) -> HvFrame:
    """Looks up the frame for a problem size, using the nearest tabulated size."""
    problem = ProblemType(problem)
    rows = _REFERENCE_TABLE.get((problem, kappa))
    if rows is None:
        raise InvalidArgument(f"no reference frame for {problem.value} with kappa={kappa}")

    size = min(rows, key=lambda s: (abs(s - n), s))
    reference, ideal = rows[size]
    return HvFrame(reference, ideal, problem.orientation)


def _hv_2d(points: np.ndarray, reference: np.ndarray) -> float:
    order = np.lexsort((points[:, 1], points[:, 0]))
    volume = 0.0
    ceiling = reference[1]
    for x, y in points[order]:
        if y < ceiling:
            volume += (reference[0] - x) * (ceiling - y)
            ceiling = y
    return volume


def _hv_3d(points: np.ndarray, reference: np.ndarray) -> float:
    order = np.argsort(points[:, 2], kind="stable")
    ordered = points[order]
    volume = 0.0
    for i in range(len(ordered)):
        top = ordered[i + 1, 2] if i + 1 < len(ordered) else reference[2]
        depth = top - ordered[i, 2]
        if depth > 0.0:
            volume += _hv_2d(ordered[: i + 1, :2], reference[:2]) * depth
    return volume


def _clipped(points: np.ndarray, frame: HvFrame) -> np.ndarray:
    if points.size == 0:
        return points.reshape(0, frame.kappa)
    if points.shape[1] != frame.kappa:
        raise ShapeError("hypervolume", [points.shape, frame.reference.shape])

    mirrored = -points if frame.orientation is Orientation.maximize else points
    return np.clip(mirrored, frame.ideal_min, frame.reference_min)


def hypervolume(archive: Union[ParetoArchive, np.ndarray], frame: HvFrame) -> float:
    """Exact volume dominated by the points and bounded by the frame's reference.

    Points are first clipped into the frame's box. Two objectives use a sorted sweep,
    three slice along the third objective and sweep each slab.

    Raises
    -------
    InvalidArgument
        More than three objectives.
    """
    if frame.kappa > 3 or frame.kappa < 2:
        raise InvalidArgument(f"hypervolume supports 2 or 3 objectives, got {frame.kappa}")

    points = archive.points if isinstance(archive, ParetoArchive) else np.atleast_2d(archive)
    points = _clipped(np.asarray(points, dtype=np.float64), frame)
    if len(points) == 0:
        return 0.0

    reference = frame.reference_min
    if frame.kappa == 2:
        return _hv_2d(points, reference)
    return _hv_3d(points, reference)


def normalized_hv(archive: Union[ParetoArchive, np.ndarray], frame: HvFrame) -> float:
    """Hypervolume divided by the volume of the frame's box; always within ``[0, 1]``."""
    return hypervolume(archive, frame) / frame.volume


def gap(hv: float, hv_ref: float) -> float:
    """Relative shortfall ``(hv_ref - hv) / hv_ref``.

    Raises
    -------
    InvalidArgument
        ``hv_ref`` is not positive.
    """
    if hv_ref <= 0.0:
        raise InvalidArgument(f"reference hypervolume must be positive, got {hv_ref}")
    return (hv_ref - hv) / hv_ref


def hv_report(archive: ParetoArchive, frame: HvFrame, hv_ref: Optional[float] = None) -> HvReport:
    hv = hypervolume(archive, frame)
    norm = hv / frame.volume
    return {
        "hv": hv,
        "normalized_hv": norm,
        "gap": None if hv_ref is None else gap(norm, hv_ref),
        "n_points": len(archive),
        "frame": frame.to_payload(),
    }


def write_front(path: Union[str, "os.PathLike[str]"], points: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        for row in points:
            fp.write(format_row(row) + "\n")


def read_front(path: Union[str, "os.PathLike[str]"]) -> np.ndarray:
    path = os.fspath(path)
    with open(path, "r", encoding="utf-8") as fp:
        rows = [parse_row(text, path=path, line=i) for i, text in enumerate(fp, start=1) if text.strip()]
    return np.array(rows, dtype=np.float64)
