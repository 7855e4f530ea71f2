from __future__ import annotations

import math
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import structlog

from ..config import ModelConfig
from ..core import tensor as T
from ..core.tensor import Value
from ..enums import DecodeMode, ProblemType
from ..errors import InvalidArgument, NumericalError
from ..models.env import EnvState, evaluate, feasible_mask, reset, step
from ..models.instance import Instance
from ..models.trajectory import Trajectory
from ..models.weights import check_weight_vector
from ..utils import derive_rng
from .layers import (
    CcoOutput,
    attention_shapes,
    cco_forward,
    cco_parameter_shapes,
    feed_forward,
    feed_forward_shapes,
    linear,
    multi_head_attention,
    project_keys_values,
    uniform_init,
)

__all__ = (
    "Embeddings",
    "Policy",
    "node_feature_width",
)

log = structlog.get_logger(__name__)

# spawn key of the parameter initialization stream
INIT_STREAM = 0x1A17


def node_feature_width(problem: ProblemType, kappa: int) -> int:
    if problem is ProblemType.motsp:
        return 2 * kappa
    if problem is ProblemType.mocvrp:
        return 3
    return 1 + kappa


class Embeddings(NamedTuple):
    """Encoder output for one ``(instance, weight)`` pair plus the decoder's static projections."""

    nodes: Value
    weight: Value
    node_mean: Value
    attn_keys: Value
    attn_values: Value
    compat_keys: Value


def _norm_names(prefix: str) -> Tuple[str, str]:
    return f"{prefix}.scale", f"{prefix}.shift"


class Policy:
    """The weight-conditioned attention policy.

    An encoder embeds the nodes together with the weight vector; a decoder picks one node per
    step from a context vector refined by gated expert blocks.

    Parameters
    -----------
    config: :class:`~pocco.config.ModelConfig`
        Widths, depths and routing settings.
    problem: :class:`~pocco.ProblemType`
        The problem family this policy solves.
    kappa: :class:`int`
        Number of objectives.
    seed: :class:`int`
        Seed of the parameter initialization stream.
    arrays: Optional[Mapping[:class:`str`, :class:`numpy.ndarray`]]
        Parameter values to use instead of a fresh initialization.
    """

    def __init__(
        self,
        config: ModelConfig,
        problem: ProblemType,
        kappa: int,
        seed: int = 0,
        arrays: Optional[Mapping[str, np.ndarray]] = None,
    ) -> None:
        self.config: ModelConfig = config.resolved()
        self.problem: ProblemType = problem
        self.kappa: int = kappa
        self.params: Dict[str, Value] = {}

        shapes = self.parameter_shapes()
        if arrays is None:
            rng = derive_rng(seed, INIT_STREAM)
            arrays = {}
            for name, (shape, fan_in) in shapes.items():
                if name.endswith(".scale"):
                    arrays[name] = np.ones(shape)
                elif name.endswith(".shift"):
                    arrays[name] = np.zeros(shape)
                else:
                    arrays[name] = uniform_init(rng, fan_in, shape)

        missing = set(shapes) - set(arrays)
        unknown = set(arrays) - set(shapes)
        if missing or unknown:
            raise InvalidArgument(f"parameter set mismatch: missing {sorted(missing)}, unknown {sorted(unknown)}")

        for name, (shape, _) in shapes.items():
            data = np.asarray(arrays[name], dtype=np.float64)
            if data.shape != shape:
                raise InvalidArgument(f"parameter {name} has shape {data.shape}, expected {shape}")
            self.params[name] = T.parameter(data, name=name)

    def __repr__(self) -> str:
        return f"<Policy problem={self.problem.value} kappa={self.kappa} parameters={self.size}>"

    # parameters

    def parameter_shapes(self) -> Dict[str, Tuple[Tuple[int, ...], int]]:
        """Ordered ``name -> (shape, fan_in)`` of every parameter."""
        cfg = self.config
        d, hidden = cfg.embed_dim, cfg.hidden
        node_in = node_feature_width(self.problem, self.kappa)

        shapes: Dict[str, Tuple[Tuple[int, ...], int]] = {
            "embed.node.W": ((node_in, d), node_in),
            "embed.node.b": ((d,), node_in),
            "embed.weight.W": ((self.kappa, d), self.kappa),
            "embed.weight.b": ((d,), self.kappa),
        }
        for layer in range(cfg.n_encoder_layers):
            prefix = f"enc.{layer}"
            shapes[f"{prefix}.film.Wg"] = ((d, d), d)
            shapes[f"{prefix}.film.Wb"] = ((d, d), d)
            shapes.update(attention_shapes(f"{prefix}.mha", d))
            for name in _norm_names(f"{prefix}.norm1"):
                shapes[name] = ((d,), d)
            shapes.update(feed_forward_shapes(f"{prefix}.ff", d, hidden))
            for name in _norm_names(f"{prefix}.norm2"):
                shapes[name] = ((d,), d)

        if self.problem is ProblemType.motsp:
            shapes["dec.placeholder"] = ((1, 2 * d), d)
            context_in = 2 * d
        else:
            context_in = d + 1
        shapes["dec.ctx.W"] = ((context_in, d), context_in)
        shapes["dec.ctx.b"] = ((d,), context_in)
        shapes.update(attention_shapes("dec.mha", d))

        for block in range(cfg.n_cco_layers):
            prefix = f"dec.cco.{block}"
            shapes.update(cco_parameter_shapes(prefix, d, hidden, cfg.n_ff_experts))
            for name in _norm_names(f"{prefix}.norm"):
                shapes[name] = ((d,), d)

        shapes["dec.compat.Wk"] = ((d, d), d)
        return shapes

    def parameters(self) -> List[Value]:
        return list(self.params.values())

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    @property
    def size(self) -> int:
        """:class:`int`: Total number of scalar parameters."""
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    # encoder

    def encode(self, instance: Instance, lam: Sequence[float]) -> Embeddings:
        """Embeds the nodes of ``instance`` conditioned on the weight vector ``lam``.

        Raises
        -------
        InvalidArgument
            The instance does not match this policy or ``lam`` is not a valid weight vector.
        NumericalError
            An encoder layer produced a non-finite activation.
        """
        if instance.problem is not self.problem or instance.kappa != self.kappa:
            raise InvalidArgument(
                f"policy solves {self.problem.value} with kappa={self.kappa}, "
                f"got {instance.problem.value} with kappa={instance.kappa}"
            )

        lam = check_weight_vector(lam, self.kappa, tolerance=1e-9)
        P, cfg = self.params, self.config
        n_nodes = instance.n_nodes

        nodes = linear(T.constant(instance.features), P, "embed.node")
        weight = linear(T.constant(lam.reshape(1, -1)), P, "embed.weight")

        for layer in range(cfg.n_encoder_layers):
            prefix = f"enc.{layer}"
            gamma = T.matmul(weight, P[f"{prefix}.film.Wg"])
            beta = T.matmul(weight, P[f"{prefix}.film.Wb"])
            conditioned = T.concat([weight, T.add(T.mul(nodes, gamma), beta)], axis=0)
            tokens = T.concat([weight, nodes], axis=0)

            keys, values = project_keys_values(conditioned, P, f"{prefix}.mha")
            attended = multi_head_attention(conditioned, keys, values, P, f"{prefix}.mha", cfg.n_heads)
            scale, shift = (P[name] for name in _norm_names(f"{prefix}.norm1"))
            tokens = T.instance_norm(T.add(tokens, attended), scale, shift, axis=0)

            scale, shift = (P[name] for name in _norm_names(f"{prefix}.norm2"))
            tokens = T.instance_norm(T.add(tokens, feed_forward(tokens, P, f"{prefix}.ff")), scale, shift, axis=0)

            if not np.all(np.isfinite(tokens.data)):
                raise NumericalError("non-finite encoder activation", layer=layer)

            weight = T.gather(tokens, [0], axis=0)
            nodes = T.gather(tokens, np.arange(1, n_nodes + 1), axis=0)

        joint = T.concat([weight, nodes], axis=0)
        attn_keys, attn_values = project_keys_values(joint, P, "dec.mha")
        return Embeddings(
            nodes=nodes,
            weight=weight,
            node_mean=T.reduce_mean(nodes, axis=0, keepdims=True),
            attn_keys=attn_keys,
            attn_values=attn_values,
            compat_keys=T.matmul(nodes, P["dec.compat.Wk"]),
        )

    # decoder

    def _context(self, embeds: Embeddings, state: EnvState) -> Value:
        if self.problem is ProblemType.motsp:
            if state.first is None:
                return self.params["dec.placeholder"]
            pair = [T.gather(embeds.nodes, [state.first], axis=0), T.gather(embeds.nodes, [state.current], axis=0)]
            return T.concat(pair, axis=1)

        load = T.constant([[state.remaining / state.instance.capacity]])
        if self.problem is ProblemType.mocvrp:
            return T.concat([T.gather(embeds.nodes, [state.current], axis=0), load], axis=1)
        return T.concat([embeds.node_mean, load], axis=1)

    def step_log_probs(self, embeds: Embeddings, state: EnvState, mask: np.ndarray) -> Tuple[Value, List[CcoOutput]]:
        """Log-probabilities over all nodes for the next action, shape ``(1, n_nodes)``.

        Masked nodes get ``-inf``. Also returns the routing of every gated block.
        """
        P, cfg = self.params, self.config
        query = linear(self._context(embeds, state), P, "dec.ctx")
        glimpse = multi_head_attention(query, embeds.attn_keys, embeds.attn_values, P, "dec.mha", cfg.n_heads)

        routes: List[CcoOutput] = []
        for block in range(cfg.n_cco_layers):
            routed = cco_forward(glimpse, P, f"dec.cco.{block}", cfg.n_ff_experts, cfg.topk)
            routes.append(routed)
            glimpse = routed.value

        scores = T.matmul(glimpse, embeds.compat_keys, transpose_b=True)
        logits = T.scale(T.tanh(T.scale(scores, 1.0 / math.sqrt(cfg.embed_dim))), cfg.clip)
        logits = T.masked_fill(logits, ~mask.reshape(1, -1), -np.inf)
        return T.log_softmax(logits, axis=-1), routes

    def decode_step(self, embeds: Embeddings, state: EnvState) -> np.ndarray:
        """The action distribution for ``state``; masked nodes have probability exactly 0."""
        log_probs, _ = self.step_log_probs(embeds, state, feasible_mask(state))
        return np.exp(log_probs.data[0])

    def rollout(
        self,
        instance: Instance,
        lam: Sequence[float],
        mode: DecodeMode = DecodeMode.greedy,
        rng: Optional[np.random.Generator] = None,
        *,
        forced_actions: Optional[Sequence[int]] = None,
        embeds: Optional[Embeddings] = None,
    ) -> Trajectory:
        """Builds one complete solution.

        Greedy mode takes the most likely action (lowest index on ties); sample mode draws
        from the distribution with ``rng``. With ``forced_actions`` the given sequence is
        replayed and only its log-probabilities are recorded. Steps with a single feasible
        action are taken without evaluating the decoder and have log-probability 0.

        Raises
        -------
        InvalidArgument
            Sample mode without ``rng``, or a forced sequence of the wrong length.
        InfeasibleAction
            A forced action is masked.
        """
        if mode is DecodeMode.sample and rng is None and forced_actions is None:
            raise InvalidArgument("sample mode needs a random generator")

        lam = np.asarray(lam, dtype=np.float64)
        if embeds is None:
            embeds = self.encode(instance, lam)

        cfg = self.config
        load = np.zeros((cfg.n_cco_layers, cfg.n_ff_experts + 1), dtype=np.int64)
        log_probs: List[Value] = []
        state = reset(instance)

        while not state.done:
            mask = feasible_mask(state)
            t = len(state.partial)
            if forced_actions is not None and t >= len(forced_actions):
                raise InvalidArgument(f"forced action sequence ended after {t} steps")

            if mask.sum() == 1:
                action = int(np.flatnonzero(mask)[0]) if forced_actions is None else int(forced_actions[t])
                log_probs.append(T.constant(np.zeros((1, 1))))
                state = step(state, action)
                continue

            step_lp, routes = self.step_log_probs(embeds, state, mask)
            for block, routed in enumerate(routes):
                load[block, routed.experts] += 1

            if forced_actions is not None:
                action = int(forced_actions[t])
            elif mode is DecodeMode.greedy:
                action = int(np.argmax(step_lp.data[0]))
            else:
                probs = np.exp(step_lp.data[0])
                action = int(rng.choice(probs.size, p=probs / probs.sum()))

            state = step(state, action)
            log_probs.append(T.gather(step_lp, [action], axis=1))

        if forced_actions is not None and len(forced_actions) != len(state.partial):
            raise InvalidArgument(f"forced action sequence is longer than the {len(state.partial)}-step episode")

        objectives = evaluate(instance, state.partial)
        return Trajectory(instance, lam, list(state.partial), log_probs, objectives, load)

    def sample(self, instance: Instance, lam: Sequence[float], count: int, rng: np.random.Generator) -> List[Trajectory]:
        """Draws ``count`` trajectories that share one encoder pass."""
        embeds = self.encode(instance, lam)
        return [self.rollout(instance, lam, DecodeMode.sample, rng, embeds=embeds) for _ in range(count)]

    def log_likelihood(self, instance: Instance, lam: Sequence[float], actions: Sequence[int]) -> Trajectory:
        """Replays ``actions`` and returns the trajectory with a fresh graph."""
        return self.rollout(instance, lam, forced_actions=list(actions))
