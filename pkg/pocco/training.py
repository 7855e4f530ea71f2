"""
pocco.training
~~~~~~~~~~~~~~

Preference-learning and REINFORCE training of a :class:`~pocco.nn.Policy`.

Each step samples a batch of (instance, weight) subproblems, draws K trajectories per
subproblem, turns them into a loss and takes one Adam step. Every random stream is derived
from the run seed and a fixed key, so a run is reproducible whatever the thread count.
"""

from __future__ import annotations

import itertools
import os
from concurrent.futures import Executor, ThreadPoolExecutor
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from scipy.special import expit
from tqdm import tqdm

from .config import ModelConfig, TrainConfig, VarianceConfig
from .context_managers import Stopwatch
from .core import tensor as T
from .core.gradcheck import finite_diff_check, primitive_checks
from .core.optim import Adam
from .core.tensor import Value
from .enums import Algorithm, ProblemType
from .errors import InvalidArgument, NumericalError
from .inference import solve_front
from .models.instance import Instance, generate
from .models.pareto import HvFrame, normalized_hv
from .models.trajectory import Trajectory, avg_log_likelihood
from .models.weights import Scalarization, das_dennis_weights
from .nn.checkpoint import save_checkpoint
from .nn.policy import Policy
from .utils import derive_rng, format_f64

__all__ = (
    "Subproblem",
    "PreferencePair",
    "sample_weights",
    "sample_subproblems",
    "build_pairs",
    "pl_loss",
    "pl_gradient_check",
    "reinforce_loss",
    "batch_loss",
    "pooled_variance",
    "gradient_variance",
    "sample_gradients",
    "sample_variance",
    "collect_rollouts",
    "validation_instances",
    "validate",
    "MetricsRow",
    "TrainResult",
    "train",
    "write_metrics",
    "VarianceRow",
    "variance_study",
    "write_variance",
    "CheckResult",
    "gradient_checks",
)

log = structlog.get_logger(__name__)

# spawn keys of the random streams of a run
BATCH_STREAM = 1
ROLLOUT_STREAM = 2
VALIDATION_STREAM = 3

METRICS_HEADER = "step,algorithm,loss,validation_hv,grad_variance,wall_ms"
VARIANCE_HEADER = "batch,algorithm,variance"


class Subproblem(NamedTuple):
    instance: Instance
    weight: np.ndarray


class PreferencePair:
    """Two trajectories of one subproblem, oriented so the winner scalarizes lower.

    Attributes
    -----------
    winner: :class:`~pocco.models.Trajectory`
        The preferred trajectory.
    loser: :class:`~pocco.models.Trajectory`
        The other one.
    label: :class:`int`
        ``1`` when the winner is preferred. ``0`` switches the pair off.
    """

    __slots__ = ("winner", "loser", "label")

    def __init__(self, winner: Trajectory, loser: Trajectory, label: int = 1) -> None:
        if label not in (0, 1):
            raise InvalidArgument(f"preference label must be 0 or 1, got {label}")
        self.winner: Trajectory = winner
        self.loser: Trajectory = loser
        self.label: int = label

    def __repr__(self) -> str:
        return f"<PreferencePair winner={self.winner.objectives.tolist()} loser={self.loser.objectives.tolist()} y={self.label}>"

    @property
    def subproblem(self) -> Subproblem:
        return Subproblem(self.winner.instance, self.winner.weight)


def sample_weights(rng: np.random.Generator, kappa: int, count: int) -> np.ndarray:
    """Draws ``count`` weight vectors uniformly from the simplex.

    The last component is ``1 - sum(others)`` so every row sums to one exactly.
    """
    draws = rng.dirichlet(np.ones(kappa), size=count)
    draws[:, -1] = 1.0 - draws[:, :-1].sum(axis=1)
    return draws


def sample_subproblems(
    rng: np.random.Generator,
    batch_size: int,
    problem: Union[ProblemType, str],
    n: int,
    kappa: int,
) -> List[Subproblem]:
    """``batch_size`` independent random instances, each paired with a uniform weight vector."""
    seeds = rng.integers(0, 2**63, size=batch_size)
    weights = sample_weights(rng, kappa, batch_size)
    return [Subproblem(generate(problem, n, kappa, int(s)), lam) for s, lam in zip(seeds, weights)]


def build_pairs(trajectories: Sequence[Trajectory], scalarization: Scalarization) -> List[PreferencePair]:
    """Every unordered pair of ``trajectories`` with the lower scalarized value as winner.

    Pairs with equal scalarized values are dropped.

    Raises
    -------
    InvalidArgument
        Fewer than two trajectories.
    """
    if len(trajectories) < 2:
        raise InvalidArgument(f"preference pairs need at least 2 trajectories, got {len(trajectories)}")

    scores = [scalarization.score(t.objectives, t.weight) for t in trajectories]
    pairs = []
    for i, j in itertools.combinations(range(len(trajectories)), 2):
        if scores[i] == scores[j]:
            continue
        win, lose = (i, j) if scores[i] < scores[j] else (j, i)
        pairs.append(PreferencePair(trajectories[win], trajectories[lose]))

    return pairs


def pl_loss(pair: PreferencePair, beta: float) -> Value:
    """``-y * log(sigmoid(beta * (avg_ll(winner) - avg_ll(loser))))`` on the graph.

    Finite for any finite margin.
    """
    margin = T.scale(T.sub(avg_log_likelihood(pair.winner), avg_log_likelihood(pair.loser)), beta)
    return T.scale(T.log_sigmoid(margin), -float(pair.label))


def _gradients(policy: Policy, root: Value) -> List[np.ndarray]:
    policy.zero_grad()
    T.backward(root)
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in policy.parameters()]
    policy.zero_grad()
    return grads


def pl_gradient_check(pair: PreferencePair, beta: float, policy: Policy) -> float:
    """Largest absolute difference between the autodiff gradient of :func:`pl_loss` and the
    closed form ``-y * beta * (1 - sigmoid(z)) * (grad avg_ll(winner) - grad avg_ll(loser))``.

    Both trajectories are replayed with fresh graphs. Parameter gradients are zero afterwards.
    """
    def replay(traj: Trajectory) -> Trajectory:
        return policy.log_likelihood(traj.instance, traj.weight, traj.actions)

    fresh = PreferencePair(replay(pair.winner), replay(pair.loser), pair.label)
    autodiff = _gradients(policy, pl_loss(fresh, beta))

    winner_ll = avg_log_likelihood(replay(pair.winner))
    loser_ll = avg_log_likelihood(replay(pair.loser))
    z = beta * (winner_ll.item() - loser_ll.item())
    coefficient = -pair.label * beta * (1.0 - float(expit(z)))

    winner_grads = _gradients(policy, winner_ll)
    loser_grads = _gradients(policy, loser_ll)

    deviation = 0.0
    for got, gw, gl in zip(autodiff, winner_grads, loser_grads):
        deviation = max(deviation, float(np.max(np.abs(got - coefficient * (gw - gl)), initial=0.0)))
    return deviation


def _sum(values: Sequence[Value]) -> Value:
    total = values[0]
    for v in values[1:]:
        total = T.add(total, v)
    return total


def reinforce_loss(trajectories: Sequence[Trajectory], scalarization: Scalarization) -> Value:
    """``-(1/K) * sum((R_j - b) * log p(pi_j))`` with ``b`` the mean of the K rewards.

    Advantages are constants of the graph.

    Raises
    -------
    InvalidArgument
        Fewer than two trajectories.
    """
    if len(trajectories) < 2:
        raise InvalidArgument(f"the shared baseline needs at least 2 trajectories, got {len(trajectories)}")

    rewards = np.array([scalarization.reward(t.objectives, t.weight) for t in trajectories])
    advantages = rewards - rewards.mean()
    k = len(trajectories)
    return _sum([T.scale(t.log_likelihood(), -float(a) / k) for t, a in zip(trajectories, advantages)])


def batch_loss(
    rollouts: Sequence[Sequence[Trajectory]],
    algorithm: Algorithm,
    scalarization: Scalarization,
    beta: float,
) -> Value:
    """The loss of one optimization batch: per-subproblem losses averaged over subproblems.

    Preference learning sums the pair losses of a subproblem; a subproblem whose
    trajectories all tie contributes nothing.
    """
    terms: List[Value] = []
    for group in rollouts:
        if algorithm is Algorithm.preference:
            pairs = build_pairs(group, scalarization)
            if pairs:
                terms.append(_sum([pl_loss(p, beta) for p in pairs]))
        else:
            terms.append(reinforce_loss(group, scalarization))

    if not terms:
        return T.constant(0.0)
    return T.scale(_sum(terms), 1.0 / len(rollouts))


def pooled_variance(params: Iterable[Value]) -> float:
    """Variance of all gradient entries of ``params`` pooled together; missing gradients count as zeros."""
    entries = [np.zeros(p.data.size) if p.grad is None else p.grad.ravel() for p in params]
    if not entries:
        return 0.0
    return float(np.var(np.concatenate(entries)))


def gradient_variance(
    policy: Policy,
    rollouts: Sequence[Sequence[Trajectory]],
    algorithm: Algorithm,
    scalarization: Scalarization,
    beta: float,
) -> Tuple[Value, float]:
    """Back-propagates the batch loss and returns it with the pooled gradient variance.

    The gradients stay on the parameters for the optimizer step.
    """
    policy.zero_grad()
    loss = batch_loss(rollouts, algorithm, scalarization, beta)
    T.backward(loss)
    return loss, pooled_variance(policy.parameters())


def sample_gradients(
    policy: Policy,
    rollouts: Sequence[Sequence[Trajectory]],
    algorithm: Algorithm,
    scalarization: Scalarization,
    beta: float,
) -> np.ndarray:
    """One flattened parameter gradient per estimator sample, stacked as rows.

    A REINFORCE sample is ``-(R_j - b) * grad log p(pi_j)`` for one trajectory, with ``b``
    the mean reward of its subproblem. A preference sample is the gradient of
    :func:`pl_loss` for one unordered pair of trajectories; a tied pair is a zero sample.
    Parameter gradients are zero afterwards.

    Raises
    -------
    InvalidArgument
        A subproblem has fewer than two trajectories.
    """
    def flat(root: Value) -> np.ndarray:
        return np.concatenate([g.ravel() for g in _gradients(policy, root)])

    zero = np.zeros(policy.size)
    rows: List[np.ndarray] = []
    for group in rollouts:
        k = len(group)
        if k < 2:
            raise InvalidArgument(f"gradient samples need at least 2 trajectories per subproblem, got {k}")

        if algorithm is Algorithm.reinforce:
            rewards = np.array([scalarization.reward(t.objectives, t.weight) for t in group])
            for t, advantage in zip(group, rewards - rewards.mean()):
                rows.append(zero if advantage == 0.0 else flat(T.scale(t.log_likelihood(), -float(advantage))))
        else:
            pairs = build_pairs(group, scalarization)
            rows.extend(flat(pl_loss(p, beta)) for p in pairs)
            rows.extend(zero for _ in range(k * (k - 1) // 2 - len(pairs)))

    if not rows:
        return np.zeros((0, policy.size))
    return np.stack(rows)


def sample_variance(samples: np.ndarray) -> float:
    """Variance across samples of every gradient entry, averaged over entries."""
    if samples.shape[0] == 0:
        return 0.0
    return float(np.mean(np.var(samples, axis=0)))


def collect_rollouts(
    policy: Policy,
    subproblems: Sequence[Subproblem],
    k: int,
    seed: int,
    step: int,
    executor: Optional[Executor] = None,
) -> List[List[Trajectory]]:
    """Samples ``k`` trajectories per subproblem; subproblem ``b`` of step ``s`` has its own stream."""
    def run(index: int) -> List[Trajectory]:
        sub = subproblems[index]
        return policy.sample(sub.instance, sub.weight, k, derive_rng(seed, ROLLOUT_STREAM, step, index))

    indices = range(len(subproblems))
    if executor is None:
        return [run(i) for i in indices]
    return list(executor.map(run, indices))


def validation_instances(config: TrainConfig) -> List[Instance]:
    return [
        generate(config.problem, config.n, config.kappa, config.seed, VALIDATION_STREAM, i)
        for i in range(config.validation_size)
    ]


def validate(
    policy: Policy,
    instances: Sequence[Instance],
    weights: np.ndarray,
    scalarization: Scalarization,
    frame: HvFrame,
    executor: Optional[Executor] = None,
) -> float:
    """Mean normalized hypervolume of greedy fronts over ``instances``."""
    def run(instance: Instance) -> float:
        return normalized_hv(solve_front(policy, instance, weights, scalarization).archive, frame)

    if executor is None:
        values = [run(i) for i in instances]
    else:
        values = list(executor.map(run, instances))
    return float(np.mean(values))


class MetricsRow(NamedTuple):
    step: int
    algorithm: str
    loss: Optional[float] = None
    validation_hv: Optional[float] = None
    grad_variance: Optional[float] = None
    wall_ms: Optional[float] = None

    def to_csv(self) -> str:
        cells = [str(self.step), self.algorithm]
        for value in (self.loss, self.validation_hv, self.grad_variance, self.wall_ms):
            cells.append("" if value is None else format_f64(value))
        return ",".join(cells)


class TrainResult(NamedTuple):
    policy: Policy
    metrics: List[MetricsRow]


class _Run:
    """Shared state of one training run."""

    __slots__ = ("config", "policy", "optimizer", "beta", "executor", "_scalarizations")

    def __init__(self, config: TrainConfig, executor: Optional[Executor]) -> None:
        self.config: TrainConfig = config.resolved()
        cfg = self.config
        self.policy: Policy = Policy(cfg.model, cfg.problem_type, cfg.kappa, seed=cfg.seed)
        self.optimizer: Adam = Adam(self.policy.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
        self.beta: float = cfg.resolved_beta
        self.executor: Optional[Executor] = executor
        self._scalarizations: Dict[int, Scalarization] = {}

    def scalarization(self, n: int) -> Scalarization:
        """The scalarization at problem size ``n``; a configured ideal point holds for every size."""
        if n not in self._scalarizations:
            cfg = self.config
            self._scalarizations[n] = cfg.scalarization.build(cfg.problem_type, cfg.kappa, n)
        return self._scalarizations[n]

    def collect(self, step: int) -> Tuple[int, List[List[Trajectory]]]:
        """Samples the batch of ``step`` and its rollouts; returns the batch's problem size with them."""
        cfg = self.config
        rng = derive_rng(cfg.seed, BATCH_STREAM, step)
        n = cfg.n if cfg.n_range is None else int(rng.integers(cfg.n_range[0], cfg.n_range[1] + 1))
        subproblems = sample_subproblems(rng, cfg.batch_size, cfg.problem_type, n, cfg.kappa)
        rollouts = collect_rollouts(self.policy, subproblems, cfg.samples_per_subproblem, cfg.seed, step, self.executor)
        return n, rollouts

    def update(self, step: int, n: int, rollouts: List[List[Trajectory]], algorithm: Algorithm) -> Tuple[float, float]:
        """Back-propagates ``algorithm``'s batch loss, takes one Adam step and returns
        ``(loss, pooled gradient variance)``."""
        loss, variance = gradient_variance(self.policy, rollouts, algorithm, self.scalarization(n), self.beta)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericalError(
                "non-finite training loss",
                step=step,
                algorithm=algorithm.value,
                loss=value,
                objectives=[t.objectives.tolist() for group in rollouts for t in group],
            )

        load = sum(t.router_load for group in rollouts for t in group)
        log.debug("router_load", step=step, n=n, load=load.tolist())
        self.optimizer.step()
        return value, variance

    def optimize(self, step: int, algorithm: Algorithm) -> Tuple[float, float]:
        n, rollouts = self.collect(step)
        return self.update(step, n, rollouts, algorithm)


def _executor(threads: int) -> Optional[ThreadPoolExecutor]:
    return ThreadPoolExecutor(max_workers=threads) if threads > 1 else None


def train(config: TrainConfig, out_dir: Optional[Union[str, "os.PathLike[str]"]] = None) -> TrainResult:
    """Trains a fresh policy for ``config.steps`` steps.

    Validation runs before the first step, every ``validate_every`` steps and after the
    last step. The pooled gradient variance is recorded for the first ``variance_batches``
    steps and on every validation step. With ``out_dir`` the checkpoint ``policy.ckpt``
    and ``metrics.csv`` are written there.

    Raises
    -------
    NumericalError
        A loss is not finite.
    """
    executor = _executor(config.threads)
    try:
        run = _Run(config, executor)
        cfg = run.config
        algorithm = cfg.algorithm_type
        frame = cfg.frame.build(cfg.problem_type, cfg.kappa, cfg.n)
        val_set = validation_instances(cfg)
        val_weights = das_dennis_weights(cfg.kappa, cfg.resolved_validation_H)

        def validation() -> float:
            return validate(run.policy, val_set, val_weights, run.scalarization(cfg.n), frame, executor)

        initial = validation()
        log.info("validation", step=0, hv=initial)
        metrics = [MetricsRow(0, algorithm.value, validation_hv=initial)]

        for step in tqdm(range(1, cfg.steps + 1), desc="train", disable=not cfg.progress):
            with Stopwatch(cfg.log_wall_time) as watch:
                loss, variance = run.optimize(step, algorithm)

            log.debug("train_step", step=step, loss=loss)
            validating = step % cfg.validate_every == 0 or step == cfg.steps
            row = MetricsRow(step, algorithm.value, loss=loss, wall_ms=watch.elapsed_ms)
            if step <= cfg.variance_batches or validating:
                log.info("gradient_variance", step=step, algorithm=algorithm.value, variance=variance)
                row = row._replace(grad_variance=variance)
            if validating:
                hv = validation()
                log.info("validation", step=step, hv=hv)
                row = row._replace(validation_hv=hv)
            metrics.append(row)
    finally:
        if executor is not None:
            executor.shutdown()

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        save_checkpoint(os.path.join(out_dir, "policy.ckpt"), run.policy)
        write_metrics(os.path.join(out_dir, "metrics.csv"), metrics)

    return TrainResult(run.policy, metrics)


def write_metrics(path: Union[str, "os.PathLike[str]"], rows: Iterable[MetricsRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        fp.write(METRICS_HEADER + "\n")
        for row in rows:
            fp.write(row.to_csv() + "\n")


class VarianceRow(NamedTuple):
    batch: int
    algorithm: str
    variance: float


def variance_study(config: VarianceConfig) -> List[VarianceRow]:
    """Gradient-estimator variance of preference learning and REINFORCE over the first
    ``variance_batches`` batches of one training run.

    Each batch draws a single rollout set. Both estimators' per-sample gradients are taken
    from those rollouts at the same parameters (see :func:`sample_gradients`), and only then
    does ``config.algorithm`` take its optimization step.
    """
    rows: List[VarianceRow] = []
    executor = _executor(config.threads)
    try:
        run = _Run(config, executor)
        for batch in range(1, config.variance_batches + 1):
            n, rollouts = run.collect(batch)
            for algorithm in (Algorithm.preference, Algorithm.reinforce):
                samples = sample_gradients(run.policy, rollouts, algorithm, run.scalarization(n), run.beta)
                variance = sample_variance(samples)
                log.info("gradient_variance", step=batch, algorithm=algorithm.value, samples=len(samples), variance=variance)
                rows.append(VarianceRow(batch, algorithm.value, variance))
            run.update(batch, n, rollouts, run.config.algorithm_type)
    finally:
        if executor is not None:
            executor.shutdown()

    return rows


def write_variance(path: Union[str, "os.PathLike[str]"], rows: Iterable[VarianceRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        fp.write(VARIANCE_HEADER + "\n")
        for row in rows:
            fp.write(f"{row.batch},{row.algorithm},{format_f64(row.variance)}\n")


class CheckResult(NamedTuple):
    label: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.error < self.tolerance)


# small enough for finite differences over every parameter tensor
GRADCHECK_MODEL = ModelConfig(embed_dim=8, n_encoder_layers=1, n_heads=2, n_ff_experts=2, topk=2, ff_hidden=16)
GRADCHECK_STREAM = 0x6C4E


def gradient_checks(
    seed: int = 0,
    scale: int = 1,
    *,
    inject_fault: bool = False,
    pairs: int = 100,
    coords_per_tensor: int = 3,
) -> List[CheckResult]:
    """Runs every gradient oracle and returns one result per check.

    - each primitive against central finite differences (tolerance ``1e-5``)
    - the policy log-likelihood of a 4-node MOTSP instance against finite differences (``1e-4``)
    - the REINFORCE loss with frozen advantages against finite differences (``1e-4``)
    - the preference loss against its closed-form gradient on ``pairs`` random pairs (``1e-10``)

    ``inject_fault`` scales every analytic gradient by 1.5 before the finite-difference
    comparisons, which must make them fail.
    """
    perturb = (lambda name, g: g * 1.5) if inject_fault else None
    rng = derive_rng(seed, GRADCHECK_STREAM)
    results: List[CheckResult] = []

    for label, builder, point in primitive_checks(rng, scale):
        error = finite_diff_check(builder, point, perturb=perturb)
        results.append(CheckResult(f"primitive.{label}", error, 1e-5))

    policy = Policy(GRADCHECK_MODEL, ProblemType.motsp, 2, seed=seed)
    point = policy.arrays()
    own = policy.params
    scalarization = Scalarization(kappa=2)

    instance = generate(ProblemType.motsp, 4, 2, seed, GRADCHECK_STREAM, 0)
    lam = sample_weights(rng, 2, 1)[0]
    sampled = policy.sample(instance, lam, 2, rng)

    def with_leaves(build):
        def f(leaves):
            policy.params = dict(leaves)
            try:
                return build()
            finally:
                policy.params = own
        return f

    def likelihood() -> Value:
        return policy.log_likelihood(instance, lam, sampled[0].actions).log_likelihood()

    def reinforce() -> Value:
        return reinforce_loss([policy.log_likelihood(instance, lam, t.actions) for t in sampled], scalarization)

    for label, build in (("policy.log_likelihood", likelihood), ("reinforce.loss", reinforce)):
        error = finite_diff_check(
            with_leaves(build), point, max_coords=coords_per_tensor, rng=rng, perturb=perturb
        )
        results.append(CheckResult(label, error, 1e-4))

    worst = 0.0
    for i in range(pairs):
        pair_instance = generate(ProblemType.motsp, 4, 2, seed, GRADCHECK_STREAM, i + 1)
        pair_lam = sample_weights(rng, 2, 1)[0]
        first, second = policy.sample(pair_instance, pair_lam, 2, rng)
        worst = max(worst, pl_gradient_check(PreferencePair(first, second), 3.5, policy))
    results.append(CheckResult("preference.closed_form", worst, 1e-10))

    for result in results:
        log.info("gradcheck_result", check=result.label, error=result.error, passed=result.passed)
    return results
