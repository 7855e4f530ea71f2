from __future__ import annotations

import itertools
import os
from typing import List, Optional, Sequence, Union

import numpy as np

from ..enums import Orientation, ProblemType, Scheme
from ..errors import DataFormatError, InvalidArgument, ShapeError
from ..utils import format_row, parse_row

__all__ = (
    "das_dennis_weights",
    "check_weight_vector",
    "Scalarization",
    "scalarize",
    "reward",
    "read_weights",
    "write_weights",
)

WEIGHT_SUM_TOLERANCE = 1e-12


def das_dennis_weights(kappa: int, H: int) -> np.ndarray:
    """Returns every simplex-lattice point with spacing ``1 / H``, in lexicographic order.

    The result has ``C(H + kappa - 1, kappa - 1)`` rows; ``kappa=2, H=100`` gives 101
    vectors and ``kappa=3, H=13`` gives 105.
    """
    if H < 1:
        raise InvalidArgument(f"H must be at least 1, got {H}")
    if kappa < 1:
        raise InvalidArgument(f"kappa must be positive, got {kappa}")

    # stars and bars: each choice of kappa-1 bar positions is one composition of H
    counts = []
    for bars in itertools.combinations(range(H + kappa - 1), kappa - 1):
        edges = (-1,) + bars + (H + kappa - 1,)
        counts.append(tuple(edges[i + 1] - edges[i] - 1 for i in range(kappa)))

    counts.sort()
    return np.array(counts, dtype=np.float64) / H


def check_weight_vector(lam: np.ndarray, kappa: Optional[int] = None, tolerance: float = WEIGHT_SUM_TOLERANCE) -> np.ndarray:
    """Validates a weight vector and returns it as a float array.

    Raises
    -------
    InvalidArgument
        A component is negative or the components do not sum to one.
    """
    lam = np.asarray(lam, dtype=np.float64)
    if lam.ndim != 1 or (kappa is not None and lam.size != kappa):
        raise ShapeError("weight_vector", [lam.shape], f"expected {kappa} components")
    if np.any(lam < 0.0) or abs(lam.sum() - 1.0) > tolerance:
        raise InvalidArgument(f"{lam.tolist()} is not on the simplex")
    return lam


class Scalarization:
    """A resolved scalarization scheme.

    Objective vectors handed to :func:`scalarize` are in minimization form. Use
    :meth:`score` and :meth:`reward` with raw objective vectors; they negate maximized
    objectives first.

    Attributes
    -----------
    scheme: :class:`~pocco.Scheme`
        Weighted sum, Tchebycheff or PBI.
    ideal: :class:`numpy.ndarray`
        The ideal point z* in minimization form.
    alpha: :class:`float`
        The PBI penalty.
    orientation: :class:`~pocco.Orientation`
        Direction of the raw objectives.
    """

    __slots__ = ("scheme", "ideal", "alpha", "orientation")

    def __init__(
        self,
        scheme: Scheme = Scheme.weighted_sum,
        ideal: Optional[Sequence[float]] = None,
        alpha: float = 5.0,
        orientation: Orientation = Orientation.minimize,
        kappa: int = 2,
    ) -> None:
        if alpha <= 0.0:
            raise InvalidArgument(f"PBI alpha must be positive, got {alpha}")

        self.scheme: Scheme = scheme
        self.ideal: np.ndarray = np.zeros(kappa) if ideal is None else np.asarray(ideal, dtype=np.float64)
        self.alpha: float = float(alpha)
        self.orientation: Orientation = orientation

    def __repr__(self) -> str:
        return f"<Scalarization scheme={self.scheme.value} ideal={self.ideal.tolist()} alpha={self.alpha}>"

    @classmethod
    def for_problem(
        cls,
        problem: ProblemType,
        kappa: int,
        n: int,
        scheme: Scheme = Scheme.weighted_sum,
        ideal: Optional[Sequence[float]] = None,
        alpha: float = 5.0,
    ) -> Scalarization:
        """Resolves the ideal point from the reference-point table unless one is given.

        An explicit ``ideal`` is taken to be in minimization form already.
        """
        from .pareto import reference_frame

        if ideal is None:
            ideal = reference_frame(problem, kappa, n).ideal_min

        return cls(scheme, ideal, alpha, problem.orientation, kappa)

    def minimization_form(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        return -values if self.orientation is Orientation.maximize else values

    def score(self, values: np.ndarray, lam: np.ndarray) -> float:
        """Scalarized value of raw objectives; lower is better."""
        return scalarize(self.minimization_form(values), lam, self)

    def reward(self, values: np.ndarray, lam: np.ndarray) -> float:
        return -self.score(values, lam)


def scalarize(values: np.ndarray, lam: np.ndarray, cfg: Scalarization) -> float:
    """Maps a minimization-form objective vector to one scalar to be minimized.

    - weighted sum: ``sum(lam * F)``
    - Tchebycheff: ``max(lam * |F - z|)``
    - PBI: ``d1 + alpha * d2`` where ``d1`` is the length of ``F - z`` projected on the unit
      direction of ``lam`` and ``d2`` the distance from ``F`` to that ray.

    Raises
    -------
    InvalidArgument
        ``values`` is not finite.
    ShapeError
        Dimensions disagree.
    """
    values = np.asarray(values, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if values.shape != lam.shape or values.ndim != 1:
        raise ShapeError("scalarize", [values.shape, lam.shape])
    if not np.all(np.isfinite(values)):
        raise InvalidArgument(f"objective vector {values.tolist()} is not finite")

    if cfg.scheme is Scheme.weighted_sum:
        return float(np.dot(lam, values))

    offset = values - cfg.ideal
    if cfg.scheme is Scheme.tchebycheff:
        return float(np.max(lam * np.abs(offset)))

    direction = lam / np.linalg.norm(lam)
    d1 = abs(float(np.dot(offset, direction)))
    d2 = float(np.linalg.norm(offset - d1 * direction))
    return d1 + cfg.alpha * d2


def reward(values: np.ndarray, lam: np.ndarray, cfg: Scalarization) -> float:
    """The negated scalarized value."""
    return -scalarize(values, lam, cfg)


def write_weights(path: Union[str, "os.PathLike[str]"], weights: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        for row in np.atleast_2d(weights):
            fp.write(format_row(row) + "\n")


def read_weights(path: Union[str, "os.PathLike[str]"], kappa: Optional[int] = None) -> np.ndarray:
    """Reads a weight CSV, one vector per row.

    Raises
    -------
    DataFormatError
        A row is malformed, has the wrong width or is off the simplex.
    """
    path = os.fspath(path)
    rows: List[List[float]] = []
    with open(path, "r", encoding="utf-8") as fp:
        for number, text in enumerate(fp, start=1):
            if not text.strip():
                continue

            row = parse_row(text, path=path, line=number)
            width = kappa if kappa is not None else (len(rows[0]) if rows else None)
            try:
                check_weight_vector(np.array(row), width, tolerance=1e-9)
            except InvalidArgument as exc:
                raise DataFormatError(str(exc), path=path, line=number) from None
            rows.append(row)

    if not rows:
        raise DataFormatError("no weight vectors", path=path)

    return np.array(rows, dtype=np.float64)
