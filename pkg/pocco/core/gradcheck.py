from __future__ import annotations

from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from ..context_managers import no_grad
from ..errors import NumericalError
from . import tensor as T
from .tensor import Value

__all__ = (
    "finite_diff_check",
    "primitive_checks",
)

GraphBuilder = Callable[[Dict[str, Value]], Value]
Perturb = Callable[[str, np.ndarray], np.ndarray]


def _evaluate(f: GraphBuilder, point: Mapping[str, np.ndarray]) -> float:
    with no_grad():
        out = f({name: T.constant(arr) for name, arr in point.items()})

    value = out.item()
    if not np.isfinite(value):
        raise NumericalError("non-finite forward value during finite differences", value=value)
    return value


def finite_diff_check(
    f: GraphBuilder,
    point: Mapping[str, np.ndarray],
    h: float = 1e-6,
    *,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    perturb: Optional[Perturb] = None,
) -> float:
    """Compares :func:`~pocco.core.backward` against central finite differences.

    ``f`` receives one leaf per entry of ``point`` and must return a scalar
    :class:`~pocco.core.Value`. The result is the largest
    ``|analytic - numeric| / max(1, |analytic|)`` over the checked coordinates.

    Parameters
    -----------
    f: Callable[[Dict[:class:`str`, :class:`~pocco.core.Value`]], :class:`~pocco.core.Value`]
        Builds the graph from named leaves.
    point: Mapping[:class:`str`, :class:`numpy.ndarray`]
        Where to differentiate.
    h: :class:`float`
        Central difference step.
    max_coords: Optional[:class:`int`]
        Check at most this many coordinates per entry, chosen with ``rng``.
    perturb: Optional[Callable]
        Applied to each analytic gradient before comparison. Used to check that
        a corrupted gradient is caught.

    Raises
    -------
    NumericalError
        A forward evaluation is not finite.
    """
    leaves = {name: T.parameter(np.array(arr, dtype=np.float64), name=name) for name, arr in point.items()}
    root = f(leaves)
    if not np.all(np.isfinite(root.data)):
        raise NumericalError("non-finite forward value", value=root.item())

    T.backward(root)

    worst = 0.0
    base = {name: np.array(arr, dtype=np.float64) for name, arr in point.items()}
    for name, leaf in leaves.items():
        analytic = leaf.grad
        if perturb is not None:
            analytic = perturb(name, analytic)

        coords = np.arange(analytic.size)
        if max_coords is not None and coords.size > max_coords:
            chooser = rng if rng is not None else np.random.default_rng(0)
            coords = np.sort(chooser.choice(coords, size=max_coords, replace=False))

        for flat in coords:
            idx = np.unravel_index(flat, analytic.shape)
            original = base[name][idx]

            base[name][idx] = original + h
            upper = _evaluate(f, base)
            base[name][idx] = original - h
            lower = _evaluate(f, base)
            base[name][idx] = original

            numeric = (upper - lower) / (2.0 * h)
            a = float(analytic[idx])
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))

    return worst


def _contract(out: Value, weights: np.ndarray) -> Value:
    return T.reduce_sum(T.mul(out, T.constant(weights)))


def _away_from_zero(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    magnitude = rng.uniform(0.2, 1.0, size=shape)
    return magnitude * rng.choice([-1.0, 1.0], size=shape)


def primitive_checks(
    rng: np.random.Generator,
    scale: int = 1,
) -> List[Tuple[str, GraphBuilder, Dict[str, np.ndarray]]]:
    """Returns one randomized ``(label, builder, point)`` case per primitive.

    Every output is contracted with fixed random weights so each output entry gets a
    distinct upstream gradient. ``scale`` grows the operand sizes.
    """
    n, m = 3 * scale, 4 * scale
    cases: List[Tuple[str, GraphBuilder, Dict[str, np.ndarray]]] = []

    def unary(label: str, fn: Callable[[Value], Value], x: np.ndarray) -> None:
        w = rng.normal(size=fn(T.constant(x)).shape)
        cases.append((label, lambda p, fn=fn, w=w: _contract(fn(p["x"]), w), {"x": x}))

    def binary(label: str, fn: Callable[[Value, Value], Value], a: np.ndarray, b: np.ndarray) -> None:
        w = rng.normal(size=fn(T.constant(a), T.constant(b)).shape)
        cases.append((label, lambda p, fn=fn, w=w: _contract(fn(p["a"], p["b"]), w), {"a": a, "b": b}))

    binary("matmul", T.matmul, rng.normal(size=(n, m)), rng.normal(size=(m, 2)))
    binary("matmul_transpose_b", lambda a, b: T.matmul(a, b, transpose_b=True),
           rng.normal(size=(n, m)), rng.normal(size=(2, m)))
    binary("matmul_vector", T.matmul, rng.normal(size=m), rng.normal(size=(m, n)))
    binary("add", T.add, rng.normal(size=(n, m)), rng.normal(size=m))
    binary("sub", T.sub, rng.normal(size=(n, 1)), rng.normal(size=(n, m)))
    binary("mul_elementwise", T.mul, rng.normal(size=(n, m)), rng.normal(size=(n, m)))

    unary("scale", lambda x: T.scale(x, -2.5), rng.normal(size=(n, m)))
    unary("tanh", T.tanh, rng.uniform(-1.0, 1.0, size=(n, m)))
    unary("sigmoid", T.sigmoid, rng.normal(size=(n, m)))
    unary("log_sigmoid", T.log_sigmoid, rng.normal(scale=3.0, size=(n, m)))
    unary("relu", T.relu, _away_from_zero(rng, (n, m)))
    unary("exp", T.exp, rng.uniform(-1.0, 1.0, size=(n, m)))
    unary("log", T.log, rng.uniform(0.5, 2.0, size=(n, m)))
    unary("softmax", lambda x: T.softmax(x, axis=1), rng.normal(size=(n, m)))
    unary("log_softmax", lambda x: T.log_softmax(x, axis=0), rng.normal(size=(n, m)))
    unary("mean", lambda x: T.reduce_mean(x, axis=1), rng.normal(size=(n, m)))
    unary("sum", lambda x: T.reduce_sum(x, axis=0, keepdims=True), rng.normal(size=(n, m)))
    unary("gather", lambda x: T.gather(x, [0, 2, 2], axis=1), rng.normal(size=(n, m)))

    mask = np.zeros((n, m), dtype=bool)
    mask[:, 0] = True
    unary("masked_fill", lambda x: T.masked_fill(x, mask, -7.0), rng.normal(size=(n, m)))

    distinct = rng.permutation(n * m).reshape(n, m) * 0.5 + rng.uniform(0.0, 0.1, size=(n, m))
    unary("topk", lambda x: T.topk(x, 2, axis=1)[0], distinct)

    parts = {"a": rng.normal(size=(n, 2)), "b": rng.normal(size=(n, m))}
    w_concat = rng.normal(size=(n, m + 2))
    cases.append(("concat", lambda p: _contract(T.concat([p["a"], p["b"]], axis=1), w_concat), parts))

    w_norm = rng.normal(size=(n, m))
    norm_point = {
        "x": rng.normal(size=(n, m)),
        "scale": rng.uniform(0.5, 1.5, size=m),
        "shift": rng.normal(size=m),
    }
    cases.append((
        "instance_norm",
        lambda p: _contract(T.instance_norm(p["x"], p["scale"], p["shift"], axis=0), w_norm),
        norm_point,
    ))

    return cases
