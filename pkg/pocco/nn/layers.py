"""
pocco.nn.layers
~~~~~~~~~~~~~~~

Stateless building blocks. Each block reads its weights from a flat name -> parameter
mapping under a dotted prefix, which is also the naming used by checkpoints.
Activations are row vectors: a linear map is ``x @ W + b``.
"""

from __future__ import annotations

import math
from typing import Dict, List, Mapping, NamedTuple, Tuple

import numpy as np

from ..core import tensor as T
from ..core.tensor import Value
from ..errors import InvalidArgument

__all__ = (
    "Params",
    "uniform_init",
    "linear",
    "feed_forward",
    "multi_head_attention",
    "project_keys_values",
    "CcoOutput",
    "cco_forward",
    "feed_forward_shapes",
    "attention_shapes",
    "cco_parameter_shapes",
)

Params = Mapping[str, Value]


def uniform_init(rng: np.random.Generator, fan_in: int, shape: Tuple[int, ...]) -> np.ndarray:
    """Draws uniformly from ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def linear(x: Value, params: Params, prefix: str, bias: bool = True) -> Value:
    out = T.matmul(x, params[f"{prefix}.W"])
    if bias:
        out = T.add(out, params[f"{prefix}.b"])
    return out


def feed_forward(x: Value, params: Params, prefix: str) -> Value:
    hidden = T.relu(T.add(T.matmul(x, params[f"{prefix}.W1"]), params[f"{prefix}.b1"]))
    return T.add(T.matmul(hidden, params[f"{prefix}.W2"]), params[f"{prefix}.b2"])


def _split_heads(x: Value, n_heads: int) -> List[Value]:
    width = x.shape[-1] // n_heads
    return [T.gather(x, np.arange(h * width, (h + 1) * width), axis=1) for h in range(n_heads)]


def multi_head_attention(
    queries: Value,
    keys: Value,
    values: Value,
    params: Params,
    prefix: str,
    n_heads: int,
) -> Value:
    """Scaled dot-product attention with ``n_heads`` heads.

    ``keys`` and ``values`` are already projected (``Wk``/``Wv``); ``queries`` are raw
    tokens and are projected here. This lets a decoder project its static key set once.
    """
    q = T.matmul(queries, params[f"{prefix}.Wq"])
    width = q.shape[-1] // n_heads
    heads = []
    for qh, kh, vh in zip(_split_heads(q, n_heads), _split_heads(keys, n_heads), _split_heads(values, n_heads)):
        scores = T.scale(T.matmul(qh, kh, transpose_b=True), 1.0 / math.sqrt(width))
        heads.append(T.matmul(T.softmax(scores, axis=1), vh))

    return T.matmul(T.concat(heads, axis=1), params[f"{prefix}.Wo"])


def project_keys_values(tokens: Value, params: Params, prefix: str) -> Tuple[Value, Value]:
    return T.matmul(tokens, params[f"{prefix}.Wk"]), T.matmul(tokens, params[f"{prefix}.Wv"])


class CcoOutput(NamedTuple):
    value: Value
    experts: np.ndarray
    gates: np.ndarray


def cco_forward(h: Value, params: Params, prefix: str, n_experts: int, k: int) -> CcoOutput:
    """Gated mixture of ``n_experts`` feed-forward experts plus an identity expert.

    The gate keeps the ``k`` largest of the ``n_experts + 1`` router logits, takes a softmax
    over them, and mixes the chosen experts' outputs. Index ``n_experts`` is the identity.
    Only chosen experts are evaluated, so the others get no gradient. The mix is added to
    ``h`` and normalized over the feature axis.

    Returns the block output, the chosen expert indices in gate order and their gates.
    """
    if not 1 <= k <= n_experts + 1:
        raise InvalidArgument(f"k={k} must lie in 1..{n_experts + 1}")

    logits = T.matmul(h, params[f"{prefix}.gate"])
    kept, chosen = T.topk(logits, k, axis=-1)
    gates = T.softmax(kept, axis=-1)

    mixed = h
    for slot, expert in enumerate(chosen[0]):
        expert = int(expert)
        if expert == n_experts:
            out = h
        else:
            out = feed_forward(h, params, f"{prefix}.expert.{expert}")
        mixed = T.add(mixed, T.mul(T.gather(gates, [slot], axis=1), out))

    normed = T.instance_norm(mixed, params[f"{prefix}.norm.scale"], params[f"{prefix}.norm.shift"], axis=-1)
    return CcoOutput(normed, chosen[0].copy(), gates.data[0].copy())


def cco_parameter_shapes(prefix: str, d: int, hidden: int, n_experts: int) -> Dict[str, Tuple[Tuple[int, ...], int]]:
    """Name -> (shape, fan_in) for one gated block."""
    shapes: Dict[str, Tuple[Tuple[int, ...], int]] = {f"{prefix}.gate": ((d, n_experts + 1), d)}
    for j in range(n_experts):
        shapes.update(feed_forward_shapes(f"{prefix}.expert.{j}", d, hidden))
    return shapes


def feed_forward_shapes(prefix: str, d: int, hidden: int) -> Dict[str, Tuple[Tuple[int, ...], int]]:
    return {
        f"{prefix}.W1": ((d, hidden), d),
        f"{prefix}.b1": ((hidden,), d),
        f"{prefix}.W2": ((hidden, d), hidden),
        f"{prefix}.b2": ((d,), hidden),
    }


def attention_shapes(prefix: str, d: int) -> Dict[str, Tuple[Tuple[int, ...], int]]:
    return {f"{prefix}.{name}": ((d, d), d) for name in ("Wq", "Wk", "Wv", "Wo")}
