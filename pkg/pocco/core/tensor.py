"""
pocco.core.tensor
~~~~~~~~~~~~~~~~~

Define-by-run reverse-mode differentiation over dense f64 arrays.

Every primitive is registered once with a forward rule and a vector-Jacobian product;
:func:`apply_primitive` runs the forward rule and records provenance, :func:`backward`
walks the recorded graph in reverse topological order.
"""

from __future__ import annotations

import itertools
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from ..context_managers import is_grad_enabled
from ..enums import Primitive
from ..errors import InvalidArgument, ShapeError

__all__ = (
    "Value",
    "MAX_RANK",
    "parameter",
    "constant",
    "apply_primitive",
    "backward",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "tanh",
    "sigmoid",
    "log_sigmoid",
    "relu",
    "exp",
    "log",
    "softmax",
    "log_softmax",
    "reduce_mean",
    "reduce_sum",
    "instance_norm",
    "concat",
    "gather",
    "masked_fill",
    "topk",
)

MAX_RANK = 4

ArrayLike = Union[np.ndarray, float, int, Sequence[Any]]
Attrs = Dict[str, Any]

_ids = itertools.count(1)


class Value:
    """A node of the differentiation graph.

    Attributes
    -----------
    id: :class:`int`
        Process-unique node identifier; later nodes have larger ids.
    data: :class:`numpy.ndarray`
        The forward result, always ``float64``.
    grad: Optional[:class:`numpy.ndarray`]
        Accumulated gradient, same shape as ``data``. Leaves that require gradients start
        at zero; intermediate nodes receive theirs during :func:`backward`.
    op: :class:`~pocco.Primitive`
        The primitive that produced this node.
    parents: Tuple[:class:`Value`, ...]
        Inputs of ``op`` in call order. Empty for leaves and for nodes built under
        :class:`~pocco.no_grad`.
    requires_grad: :class:`bool`
        Whether gradients flow into this node.
    name: Optional[:class:`str`]
        Optional label, set on parameters.
    """

    __slots__ = (
        "id",
        "data",
        "grad",
        "op",
        "parents",
        "requires_grad",
        "attrs",
        "aux",
        "name",
    )

    def __init__(
        self,
        data: ArrayLike,
        *,
        op: Primitive = Primitive.leaf,
        parents: Tuple[Value, ...] = (),
        requires_grad: bool = False,
        attrs: Optional[Attrs] = None,
        aux: Any = None,
        name: Optional[str] = None,
    ) -> None:
        array = np.asarray(data, dtype=np.float64)
        if array.ndim > MAX_RANK:
            raise ShapeError(op.value, [array.shape], f"rank is limited to {MAX_RANK}")

        self.id: int = next(_ids)
        self.data: np.ndarray = array
        self.op: Primitive = op
        self.parents: Tuple[Value, ...] = parents
        self.requires_grad: bool = requires_grad
        self.attrs: Attrs = attrs or {}
        self.aux: Any = aux
        self.name: Optional[str] = name
        self.grad: Optional[np.ndarray] = None

        if requires_grad and op is Primitive.leaf:
            self.grad = np.zeros_like(array)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"<Value id={self.id} op={self.op.value}{label} shape={self.shape}>"

    @property
    def shape(self) -> Tuple[int, ...]:
        """Tuple[:class:`int`, ...]: The dims of ``data``."""
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self.op is Primitive.leaf

    def item(self) -> float:
        """Returns the single element of a size-1 value as a Python float."""
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    # operator sugar over the registered primitives

    def __add__(self, other: Union[Value, ArrayLike]) -> Value:
        return add(self, _lift(other))

    def __radd__(self, other: ArrayLike) -> Value:
        return add(_lift(other), self)

    def __sub__(self, other: Union[Value, ArrayLike]) -> Value:
        return sub(self, _lift(other))

    def __rsub__(self, other: ArrayLike) -> Value:
        return sub(_lift(other), self)

    def __mul__(self, other: Union[Value, ArrayLike]) -> Value:
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _lift(other))

    def __rmul__(self, other: Union[Value, ArrayLike]) -> Value:
        return self.__mul__(other)

    def __truediv__(self, other: float) -> Value:
        return scale(self, 1.0 / float(other))

    def __neg__(self) -> Value:
        return scale(self, -1.0)

    def __matmul__(self, other: Value) -> Value:
        return matmul(self, other)


def parameter(data: ArrayLike, name: Optional[str] = None) -> Value:
    """Creates a trainable leaf."""
    return Value(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def constant(data: ArrayLike) -> Value:
    """Creates a leaf that never receives gradients."""
    return Value(data)


def _lift(obj: Union[Value, ArrayLike]) -> Value:
    return obj if isinstance(obj, Value) else constant(obj)


# ---------------------------------------------------------------------------
# primitive registry

Forward = Callable[[List[np.ndarray], Attrs], Tuple[np.ndarray, Any]]
Vjp = Callable[[np.ndarray, List[np.ndarray], np.ndarray, Any, Attrs], Tuple[Optional[np.ndarray], ...]]


class _Rule(NamedTuple):
    arity: Optional[int]
    forward: Forward
    vjp: Vjp


_RULES: Dict[Primitive, _Rule] = {}


def _register(kind: Primitive, arity: Optional[int]) -> Callable[[Vjp], Vjp]:
    def decorator(vjp: Vjp) -> Vjp:
        forward = _FORWARDS.pop(kind)
        _RULES[kind] = _Rule(arity, forward, vjp)
        return vjp

    return decorator


_FORWARDS: Dict[Primitive, Forward] = {}


def _forward(kind: Primitive) -> Callable[[Forward], Forward]:
    def decorator(fn: Forward) -> Forward:
        _FORWARDS[kind] = fn
        return fn

    return decorator


def _axis(attrs: Attrs, ndim: int, default: Optional[int] = -1) -> Optional[int]:
    axis = attrs.get("axis", default)
    if axis is None:
        return None
    if not -ndim <= axis < max(ndim, 1):
        raise InvalidArgument(f"axis {axis} out of range for rank {ndim}")
    return axis % max(ndim, 1)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(kind: Primitive, a: np.ndarray, b: np.ndarray) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(kind.value, [a.shape, b.shape]) from None


# matmul


@_forward(Primitive.matmul)
def _matmul_forward(datas: List[np.ndarray], attrs: Attrs) -> Tuple[np.ndarray, Any]:
    a, b = datas
    if a.ndim > 2 or b.ndim > 2 or a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul", [a.shape, b.shape], "operands must have rank 1 or 2")

    rhs = b.T if attrs.get("transpose_b") else b
    if a.shape[-1] != rhs.shape[0]:
        raise ShapeError("matmul", [a.shape, b.shape])

    return a @ rhs, None


@_register(Primitive.matmul, 2)
def _matmul_vjp(g, datas, out, aux, attrs):
    a, b = datas
    transposed = attrs.get("transpose_b", False)
    rhs = b.T if transposed else b

    a2 = a.reshape(1, -1) if a.ndim == 1 else a
    b2 = rhs.reshape(-1, 1) if rhs.ndim == 1 else rhs
    g2 = g.reshape(a2.shape[0], b2.shape[1])

    ga = (g2 @ b2.T).reshape(a.shape)
    grhs = (a2.T @ g2).reshape(rhs.shape)
    return ga, (grhs.T if transposed else grhs)


# elementwise binary


@_forward(Primitive.add)
def _add_forward(datas, attrs):
    _broadcast_shape(Primitive.add, *datas)
    return datas[0] + datas[1], None


@_register(Primitive.add, 2)
def _add_vjp(g, datas, out, aux, attrs):
    return _unbroadcast(g, datas[0].shape), _unbroadcast(g, datas[1].shape)


@_forward(Primitive.sub)
def _sub_forward(datas, attrs):
    _broadcast_shape(Primitive.sub, *datas)
    return datas[0] - datas[1], None


@_register(Primitive.sub, 2)
def _sub_vjp(g, datas, out, aux, attrs):
    return _unbroadcast(g, datas[0].shape), _unbroadcast(-g, datas[1].shape)


@_forward(Primitive.mul)
def _mul_forward(datas, attrs):
    _broadcast_shape(Primitive.mul, *datas)
    return datas[0] * datas[1], None


@_register(Primitive.mul, 2)
def _mul_vjp(g, datas, out, aux, attrs):
    a, b = datas
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


# elementwise unary


@_forward(Primitive.scale)
def _scale_forward(datas, attrs):
    return datas[0] * float(attrs["factor"]), None


@_register(Primitive.scale, 1)
def _scale_vjp(g, datas, out, aux, attrs):
    return (g * float(attrs["factor"]),)


@_forward(Primitive.tanh)
def _tanh_forward(datas, attrs):
    return np.tanh(datas[0]), None


@_register(Primitive.tanh, 1)
def _tanh_vjp(g, datas, out, aux, attrs):
    return (g * (1.0 - out * out),)


@_forward(Primitive.sigmoid)
def _sigmoid_forward(datas, attrs):
    return expit(datas[0]), None


@_register(Primitive.sigmoid, 1)
def _sigmoid_vjp(g, datas, out, aux, attrs):
    return (g * out * (1.0 - out),)


# -softplus(-x), finite for any finite x
@_forward(Primitive.log_sigmoid)
def _log_sigmoid_forward(datas, attrs):
    return -np.logaddexp(0.0, -datas[0]), None


@_register(Primitive.log_sigmoid, 1)
def _log_sigmoid_vjp(g, datas, out, aux, attrs):
    return (g * expit(-datas[0]),)


@_forward(Primitive.relu)
def _relu_forward(datas, attrs):
    return np.maximum(datas[0], 0.0), None


@_register(Primitive.relu, 1)
def _relu_vjp(g, datas, out, aux, attrs):
    return (g * (datas[0] > 0.0),)


@_forward(Primitive.exp)
def _exp_forward(datas, attrs):
    return np.exp(datas[0]), None


@_register(Primitive.exp, 1)
def _exp_vjp(g, datas, out, aux, attrs):
    return (g * out,)


@_forward(Primitive.log)
def _log_forward(datas, attrs):
    with np.errstate(divide="ignore"):
        return np.log(datas[0]), None


@_register(Primitive.log, 1)
def _log_vjp(g, datas, out, aux, attrs):
    return (g / datas[0],)


# normalizing maps


def _reject_all_masked(kind: Primitive, x: np.ndarray, axis: int) -> None:
    if np.isneginf(x).all(axis=axis).any():
        raise InvalidArgument(f"{kind.value} over an axis where every entry is -inf")


@_forward(Primitive.softmax)
def _softmax_forward(datas, attrs):
    x = datas[0]
    axis = _axis(attrs, x.ndim)
    _reject_all_masked(Primitive.softmax, x, axis)

    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True), None


@_register(Primitive.softmax, 1)
def _softmax_vjp(g, datas, out, aux, attrs):
    axis = _axis(attrs, out.ndim)
    return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)


@_forward(Primitive.log_softmax)
def _log_softmax_forward(datas, attrs):
    x = datas[0]
    axis = _axis(attrs, x.ndim)
    _reject_all_masked(Primitive.log_softmax, x, axis)

    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True)), None


@_register(Primitive.log_softmax, 1)
def _log_softmax_vjp(g, datas, out, aux, attrs):
    axis = _axis(attrs, out.ndim)
    return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)


# reductions


def _expand_reduced(g: np.ndarray, shape: Tuple[int, ...], attrs: Attrs) -> np.ndarray:
    axis = _axis(attrs, len(shape), default=None)
    if axis is not None and not attrs.get("keepdims", False):
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).copy()


@_forward(Primitive.mean)
def _mean_forward(datas, attrs):
    x = datas[0]
    return np.mean(x, axis=_axis(attrs, x.ndim, default=None), keepdims=attrs.get("keepdims", False)), None


@_register(Primitive.mean, 1)
def _mean_vjp(g, datas, out, aux, attrs):
    x = datas[0]
    axis = _axis(attrs, x.ndim, default=None)
    count = x.size if axis is None else x.shape[axis]
    return (_expand_reduced(g, x.shape, attrs) / count,)


@_forward(Primitive.sum)
def _sum_forward(datas, attrs):
    x = datas[0]
    return np.sum(x, axis=_axis(attrs, x.ndim, default=None), keepdims=attrs.get("keepdims", False)), None


@_register(Primitive.sum, 1)
def _sum_vjp(g, datas, out, aux, attrs):
    return (_expand_reduced(g, datas[0].shape, attrs),)


@_forward(Primitive.instance_norm)
def _instance_norm_forward(datas, attrs):
    x, gamma, beta = datas
    axis = _axis(attrs, x.ndim)
    for affine in (gamma, beta):
        if _broadcast_shape(Primitive.instance_norm, affine, x) != x.shape:
            raise ShapeError("instance_norm", [x.shape, gamma.shape, beta.shape])

    centered = x - x.mean(axis=axis, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=axis, keepdims=True) + attrs.get("eps", 1e-5))
    xhat = centered * inv_std
    return xhat * gamma + beta, (xhat, inv_std)


@_register(Primitive.instance_norm, 3)
def _instance_norm_vjp(g, datas, out, aux, attrs):
    x, gamma, beta = datas
    xhat, inv_std = aux
    axis = _axis(attrs, x.ndim)
    count = x.shape[axis]

    dxhat = g * gamma
    dx = (inv_std / count) * (
        count * dxhat
        - dxhat.sum(axis=axis, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=axis, keepdims=True)
    )
    return dx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape)


# structural


@_forward(Primitive.concat)
def _concat_forward(datas, attrs):
    axis = _axis(attrs, datas[0].ndim, default=0)
    try:
        return np.concatenate(datas, axis=axis), None
    except ValueError:
        raise ShapeError("concat", [d.shape for d in datas]) from None


@_register(Primitive.concat, None)
def _concat_vjp(g, datas, out, aux, attrs):
    axis = _axis(attrs, datas[0].ndim, default=0)
    offsets = np.cumsum([d.shape[axis] for d in datas])[:-1]
    return tuple(np.split(g, offsets, axis=axis))


@_forward(Primitive.gather)
def _gather_forward(datas, attrs):
    x = datas[0]
    axis = _axis(attrs, x.ndim)
    index = np.atleast_1d(np.asarray(attrs["index"], dtype=np.intp))
    if index.ndim != 1 or index.size == 0:
        raise ShapeError("gather", [x.shape, index.shape], "index must be a non-empty 1-D set")
    if index.min() < -x.shape[axis] or index.max() >= x.shape[axis]:
        raise InvalidArgument(f"gather index out of range for axis of extent {x.shape[axis]}")

    return np.take(x, index, axis=axis), index


@_register(Primitive.gather, 1)
def _gather_vjp(g, datas, out, aux, attrs):
    x = datas[0]
    axis = _axis(attrs, x.ndim)
    gx = np.zeros_like(x)
    np.add.at(np.moveaxis(gx, axis, 0), aux, np.moveaxis(g, axis, 0))
    return (gx,)


@_forward(Primitive.masked_fill)
def _masked_fill_forward(datas, attrs):
    x = datas[0]
    mask = np.asarray(attrs["mask"], dtype=bool)
    try:
        fits = np.broadcast_shapes(mask.shape, x.shape) == x.shape
    except ValueError:
        fits = False
    if not fits:
        raise ShapeError("masked_fill", [x.shape, mask.shape])

    return np.where(mask, float(attrs["fill"]), x), mask


@_register(Primitive.masked_fill, 1)
def _masked_fill_vjp(g, datas, out, aux, attrs):
    return (np.where(aux, 0.0, g),)


@_forward(Primitive.topk)
def _topk_forward(datas, attrs):
    x = datas[0]
    axis = _axis(attrs, x.ndim)
    k = int(attrs["k"])
    if not 1 <= k <= x.shape[axis]:
        raise InvalidArgument(f"topk k={k} outside 1..{x.shape[axis]}")

    # stable sort of the negation: equal values keep ascending index order
    order = np.argsort(-x, axis=axis, kind="stable")
    index = np.take(order, np.arange(k), axis=axis)
    return np.take_along_axis(x, index, axis=axis), index


@_register(Primitive.topk, 1)
def _topk_vjp(g, datas, out, aux, attrs):
    gx = np.zeros_like(datas[0])
    np.put_along_axis(gx, aux, g, axis=_axis(attrs, gx.ndim))
    return (gx,)


assert not _FORWARDS, "every forward rule needs a vjp"


# ---------------------------------------------------------------------------
# graph construction and traversal


def apply_primitive(kind: Primitive, inputs: Sequence[Value], attrs: Optional[Attrs] = None) -> Value:
    """Runs ``kind`` on ``inputs`` and records the result on the graph.

    Parameters
    -----------
    kind: :class:`~pocco.Primitive`
        Any registered primitive except ``leaf``.
    inputs: Sequence[:class:`Value`]
        Operands in signature order (``instance_norm`` takes ``x, scale, shift``).
    attrs: Optional[:class:`dict`]
        Primitive attributes such as ``axis``, ``k``, ``index``, ``mask``/``fill``,
        ``factor``, ``eps`` and ``transpose_b``.

    Raises
    -------
    ShapeError
        The operand shapes do not conform.
    InvalidArgument
        Bad attributes, or a softmax over an entirely ``-inf`` axis.
    """
    rule = _RULES.get(kind)
    if rule is None:
        raise InvalidArgument(f"{kind.value} is not an applicable primitive")
    if rule.arity is not None and len(inputs) != rule.arity:
        raise InvalidArgument(f"{kind.value} takes {rule.arity} inputs, got {len(inputs)}")

    attrs = dict(attrs or {})
    data, aux = rule.forward([v.data for v in inputs], attrs)

    track = is_grad_enabled() and any(v.requires_grad for v in inputs)
    return Value(
        data,
        op=kind,
        parents=tuple(inputs) if track else (),
        requires_grad=track,
        attrs=attrs,
        aux=aux,
    )


def _topological_order(root: Value) -> List[Value]:
    # iterative post-order DFS; a node is appended only after all of its parents
    order: List[Value] = []
    visited = set()
    stack: List[Tuple[Value, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in visited:
            continue

        visited.add(node.id)
        stack.append((node, True))
        for parent in node.parents:
            if parent.id not in visited and parent.requires_grad:
                stack.append((parent, False))

    return order


def backward(root: Value) -> Dict[int, np.ndarray]:
    """Back-propagates from a scalar ``root``.

    Gradients accumulate into the ``grad`` of every leaf that requires them, so calling
    this twice without zeroing doubles them. Intermediate nodes get their gradient
    assigned fresh on each call.

    Returns
    --------
    Dict[:class:`int`, :class:`numpy.ndarray`]
        The gradient contributed by this call to each reachable leaf, keyed by :attr:`Value.id`.

    Raises
    -------
    InvalidArgument
        ``root`` holds more than one element.
    """
    if root.data.size != 1:
        raise InvalidArgument(f"backward needs a scalar root, got shape {root.shape}")

    contributions: Dict[int, np.ndarray] = {}
    if not root.requires_grad:
        return contributions

    pending: Dict[int, np.ndarray] = {root.id: np.ones_like(root.data)}
    for node in reversed(_topological_order(root)):
        g = pending.pop(node.id, None)
        if g is None:
            continue

        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            contributions[node.id] = g
            continue

        node.grad = g
        rule = _RULES[node.op]
        parent_grads = rule.vjp(g, [p.data for p in node.parents], node.data, node.aux, node.attrs)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent.id in pending:
                pending[parent.id] = pending[parent.id] + pg
            else:
                pending[parent.id] = np.asarray(pg, dtype=np.float64)

    return contributions


# ---------------------------------------------------------------------------
# functional wrappers


def matmul(a: Value, b: Value, *, transpose_b: bool = False) -> Value:
    return apply_primitive(Primitive.matmul, [a, b], {"transpose_b": transpose_b})


def add(a: Value, b: Value) -> Value:
    return apply_primitive(Primitive.add, [a, b])


def sub(a: Value, b: Value) -> Value:
    return apply_primitive(Primitive.sub, [a, b])


def mul(a: Value, b: Value) -> Value:
    return apply_primitive(Primitive.mul, [a, b])


def scale(x: Value, factor: float) -> Value:
    return apply_primitive(Primitive.scale, [x], {"factor": factor})


def tanh(x: Value) -> Value:
    return apply_primitive(Primitive.tanh, [x])


def sigmoid(x: Value) -> Value:
    return apply_primitive(Primitive.sigmoid, [x])


def log_sigmoid(x: Value) -> Value:
    return apply_primitive(Primitive.log_sigmoid, [x])


def relu(x: Value) -> Value:
    return apply_primitive(Primitive.relu, [x])


def exp(x: Value) -> Value:
    return apply_primitive(Primitive.exp, [x])


def log(x: Value) -> Value:
    return apply_primitive(Primitive.log, [x])


def softmax(x: Value, axis: int = -1) -> Value:
    return apply_primitive(Primitive.softmax, [x], {"axis": axis})


def log_softmax(x: Value, axis: int = -1) -> Value:
    return apply_primitive(Primitive.log_softmax, [x], {"axis": axis})


def reduce_mean(x: Value, axis: Optional[int] = None, keepdims: bool = False) -> Value:
    return apply_primitive(Primitive.mean, [x], {"axis": axis, "keepdims": keepdims})


def reduce_sum(x: Value, axis: Optional[int] = None, keepdims: bool = False) -> Value:
    return apply_primitive(Primitive.sum, [x], {"axis": axis, "keepdims": keepdims})


def instance_norm(x: Value, scale: Value, shift: Value, axis: int = -1, eps: float = 1e-5) -> Value:
    """Normalizes ``x`` along ``axis`` with population variance, then applies ``scale``/``shift``."""
    return apply_primitive(Primitive.instance_norm, [x, scale, shift], {"axis": axis, "eps": eps})


def concat(values: Sequence[Value], axis: int = 0) -> Value:
    return apply_primitive(Primitive.concat, list(values), {"axis": axis})


def gather(x: Value, index: Union[int, Sequence[int], np.ndarray], axis: int = -1) -> Value:
    """Selects ``index`` along ``axis``; the selected axis keeps its place with extent ``len(index)``."""
    return apply_primitive(Primitive.gather, [x], {"index": index, "axis": axis})


def masked_fill(x: Value, mask: np.ndarray, fill: float) -> Value:
    return apply_primitive(Primitive.masked_fill, [x], {"mask": mask, "fill": fill})


def topk(x: Value, k: int, axis: int = -1) -> Tuple[Value, np.ndarray]:
    """Returns the ``k`` largest entries along ``axis`` and their integer indices.

    Ties resolve to the lowest index. The indices are constants for differentiation,
    so gradient only reaches the selected entries.
    """
    out = apply_primitive(Primitive.topk, [x], {"k": k, "axis": axis})
    return out, out.aux
