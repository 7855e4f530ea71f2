"""
pocco.inference
~~~~~~~~~~~~~~~

Pareto front construction at test time. Every weight vector is solved by a greedy rollout,
optionally over all coordinate reflections of the instance, and the kept objective vectors
go into a fresh archive.
"""

from __future__ import annotations

import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from typing import TYPE_CHECKING, Callable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from scipy.stats import ranksums

from .context_managers import Stopwatch, no_grad
from .enums import DecodeMode, ProblemType
from .errors import DataFormatError, InvalidArgument
from .models.instance import Instance
from .models.pareto import HvFrame, ParetoArchive, gap, normalized_hv, write_front
from .models.trajectory import Trajectory
from .models.weights import Scalarization, check_weight_vector
from .utils import derive_rng, format_f64, write_json

if TYPE_CHECKING:
    from .nn.policy import Policy
    from .types.report import EvalReport, RankSumVerdict

__all__ = (
    "COORDINATE_MAPS",
    "AugmentTransform",
    "augment_transforms",
    "apply_transform",
    "FrontResult",
    "solve_front",
    "InstanceResult",
    "EvalResult",
    "evaluate_model",
    "write_evaluation",
    "read_instance_hvs",
    "rank_sum_test",
)

log = structlog.get_logger(__name__)

# spawn key of the sampling stream of evaluation instance i
EVAL_SAMPLE_STREAM = 0xE7A1

_XY = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]

COORDINATE_MAPS: Tuple[_XY, ...] = (
    lambda x, y: (x, y),
    lambda x, y: (y, x),
    lambda x, y: (x, 1.0 - y),
    lambda x, y: (y, 1.0 - x),
    lambda x, y: (1.0 - x, y),
    lambda x, y: (1.0 - y, x),
    lambda x, y: (1.0 - x, 1.0 - y),
    lambda x, y: (1.0 - y, 1.0 - x),
)


class AugmentTransform(NamedTuple):
    """One coordinate map index per coordinate set (per objective for MOTSP, one for MOCVRP)."""

    maps: Tuple[int, ...]

    @property
    def is_identity(self) -> bool:
        return not any(self.maps)


def augment_transforms(problem: ProblemType, kappa: int) -> List[AugmentTransform]:
    """All transforms for ``problem``, identity first: ``8**kappa`` for MOTSP, 8 for MOCVRP.

    Raises
    -------
    InvalidArgument
        ``problem`` has no coordinates.
    """
    if not problem.is_coordinate_based:
        raise InvalidArgument(f"{problem.value} instances have no coordinates to transform")

    sets = kappa if problem is ProblemType.motsp else 1
    return [AugmentTransform(maps) for maps in itertools.product(range(len(COORDINATE_MAPS)), repeat=sets)]


def apply_transform(instance: Instance, transform: AugmentTransform) -> Instance:
    """Maps each coordinate set of ``instance`` by its chosen reflection or swap.

    Demands and capacities are untouched.

    Raises
    -------
    InvalidArgument
        ``instance`` is a MOKP instance, or the transform has the wrong number of maps.
    """
    problem = instance.problem
    if not problem.is_coordinate_based:
        raise InvalidArgument(f"{problem.value} instances have no coordinates to transform")

    sets = instance.kappa if problem is ProblemType.motsp else 1
    if len(transform.maps) != sets:
        raise InvalidArgument(f"{problem.value} needs {sets} coordinate maps, got {len(transform.maps)}")

    features = np.array(instance.features, dtype=np.float64)
    for j, index in enumerate(transform.maps):
        x, y = COORDINATE_MAPS[index](features[:, 2 * j], features[:, 2 * j + 1])
        features[:, 2 * j], features[:, 2 * j + 1] = x, y

    return instance.with_features(features)


class FrontResult(NamedTuple):
    archive: ParetoArchive
    best: List[Trajectory]
    rollouts: int
    router_load: Optional[np.ndarray]


def solve_front(
    policy: Policy,
    instance: Instance,
    weights: np.ndarray,
    scalarization: Scalarization,
    *,
    augment: bool = False,
    pool: bool = False,
    mode: DecodeMode = DecodeMode.greedy,
    rng: Optional[np.random.Generator] = None,
) -> FrontResult:
    """Solves every weight vector of ``weights`` on ``instance``.

    Without augmentation each weight gets one rollout. With it every transformed variant
    is solved and the rollout with the lowest scalarized value is kept for that weight;
    with ``pool`` every variant's objective vector enters the archive instead.
    Augmentation of MOKP instances is skipped with a warning.

    Parameters
    -----------
    policy: :class:`~pocco.nn.Policy`
        The trained policy.
    instance: :class:`~pocco.models.Instance`
        The instance to solve.
    weights: :class:`numpy.ndarray`
        One weight vector per row.
    scalarization: :class:`~pocco.models.Scalarization`
        Scores rollouts when picking the best variant per weight.
    augment: :class:`bool`
        Solve every coordinate transform of the instance as well.
    pool: :class:`bool`
        Insert every augmented rollout into the archive.
    mode: :class:`~pocco.DecodeMode`
        Greedy or sampled decoding.
    rng: Optional[:class:`numpy.random.Generator`]
        Required in sample mode.
    """
    variants = [instance]
    if augment:
        if instance.problem.is_coordinate_based:
            variants = [apply_transform(instance, t) for t in augment_transforms(instance.problem, instance.kappa)]
        else:
            log.warning("augment_skipped", problem=instance.problem.value)

    archive = ParetoArchive(instance.problem.orientation, instance.kappa)
    best: List[Trajectory] = []
    load: Optional[np.ndarray] = None
    rollouts = 0

    with no_grad():
        for lam in np.atleast_2d(weights):
            kept: Optional[Trajectory] = None
            kept_score = np.inf
            for variant in variants:
                traj = policy.rollout(variant, lam, mode, rng)
                rollouts += 1
                load = traj.router_load if load is None else load + traj.router_load
                if pool:
                    archive.insert(traj.objectives)

                score = scalarization.score(traj.objectives, lam)
                if score < kept_score:
                    kept, kept_score = traj, score

            best.append(kept)
            if not pool:
                archive.insert(kept.objectives)

    return FrontResult(archive, best, rollouts, load)


class InstanceResult(NamedTuple):
    index: int
    normalized_hv: float
    n_points: int
    front: np.ndarray


class EvalResult(NamedTuple):
    report: EvalReport
    instances: List[InstanceResult]


def _check_compatible(policy: Policy, instances: Sequence[Instance], weights: np.ndarray, frame: HvFrame) -> None:
    if not instances:
        raise InvalidArgument("the dataset is empty")
    if frame.kappa != policy.kappa:
        raise InvalidArgument(f"frame has {frame.kappa} objectives, policy has {policy.kappa}")
    if frame.orientation is not policy.problem.orientation:
        raise InvalidArgument(f"frame orientation {frame.orientation.value} does not fit {policy.problem.value}")

    for index, instance in enumerate(instances):
        if instance.problem is not policy.problem or instance.kappa != policy.kappa:
            raise InvalidArgument(
                f"instance {index} is {instance.problem.value} with kappa={instance.kappa}, "
                f"policy solves {policy.problem.value} with kappa={policy.kappa}"
            )

    for lam in weights:
        check_weight_vector(lam, policy.kappa, tolerance=1e-9)


def evaluate_model(
    policy: Policy,
    instances: Sequence[Instance],
    weights: np.ndarray,
    scalarization: Scalarization,
    frame: HvFrame,
    *,
    hv_ref: Optional[float] = None,
    augment: bool = False,
    pool: bool = False,
    mode: DecodeMode = DecodeMode.greedy,
    seed: int = 0,
    threads: int = 1,
    log_wall_time: bool = False,
) -> EvalResult:
    """Solves every instance and reports the mean normalized hypervolume.

    Instances are independent; with ``threads > 1`` they are solved on a thread pool and
    gathered in dataset order. Sample mode draws instance ``i`` from its own stream, so
    the result does not depend on ``threads``.

    Raises
    -------
    InvalidArgument
        The dataset, weights and frame do not fit the policy.
    """
    weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    _check_compatible(policy, instances, weights, frame)

    def solve(index: int) -> Tuple[InstanceResult, Optional[np.ndarray]]:
        rng = derive_rng(seed, EVAL_SAMPLE_STREAM, index) if mode is DecodeMode.sample else None
        result = solve_front(
            policy, instances[index], weights, scalarization, augment=augment, pool=pool, mode=mode, rng=rng
        )
        hv = normalized_hv(result.archive, frame)
        log.debug("eval_instance", index=index, normalized_hv=hv, n_points=len(result.archive))
        return InstanceResult(index, hv, len(result.archive), result.archive.points), result.router_load

    with Stopwatch(log_wall_time) as watch:
        indices = range(len(instances))
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as executor:
                solved = list(executor.map(solve, indices))
        else:
            solved = [solve(i) for i in indices]

    per_instance = [item for item, _ in solved]
    mean_hv = float(np.mean([item.normalized_hv for item in per_instance]))
    load = sum(l for _, l in solved if l is not None)

    report: EvalReport = {
        "mean_hv": mean_hv,
        "gap": None if hv_ref is None else gap(mean_hv, hv_ref),
        "n_instances": len(per_instance),
        "n_weights": len(weights),
        "augment": bool(augment and policy.problem.is_coordinate_based),
        "wall_ms": watch.elapsed_ms,
    }
    if isinstance(load, np.ndarray):
        report["expert_load"] = {f"block.{b}": row.tolist() for b, row in enumerate(load)}

    log.info("eval_done", mean_hv=mean_hv, n_instances=len(per_instance), n_weights=len(weights))
    return EvalResult(report, per_instance)


def write_evaluation(out_dir: Union[str, "os.PathLike[str]"], result: EvalResult, write_fronts: bool = False) -> None:
    """Writes ``report.json``, ``instances.csv`` and optionally ``fronts/<i>.csv``."""
    os.makedirs(out_dir, exist_ok=True)
    write_json(os.path.join(out_dir, "report.json"), result.report)

    with open(os.path.join(out_dir, "instances.csv"), "w", encoding="utf-8", newline="\n") as fp:
        fp.write("index,normalized_hv,n_points\n")
        for item in result.instances:
            fp.write(f"{item.index},{format_f64(item.normalized_hv)},{item.n_points}\n")

    if write_fronts:
        fronts = os.path.join(out_dir, "fronts")
        os.makedirs(fronts, exist_ok=True)
        for item in result.instances:
            write_front(os.path.join(fronts, f"{item.index}.csv"), item.front)


def read_instance_hvs(path: Union[str, "os.PathLike[str]"]) -> np.ndarray:
    """Reads the ``normalized_hv`` column of an ``instances.csv`` file."""
    path = os.fspath(path)
    with open(path, "r", encoding="utf-8") as fp:
        lines = fp.read().splitlines()

    if not lines or lines[0].strip() != "index,normalized_hv,n_points":
        raise DataFormatError("expected an 'index,normalized_hv,n_points' header", path=path, line=1)

    values = []
    for number, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        cells = text.split(",")
        try:
            values.append(float(cells[1]))
        except (IndexError, ValueError):
            raise DataFormatError(f"malformed row {text!r}", path=path, line=number) from None

    return np.array(values, dtype=np.float64)


def rank_sum_test(hv_a: Sequence[float], hv_b: Sequence[float], alpha: float = 0.01) -> RankSumVerdict:
    """Wilcoxon rank-sum test on per-instance hypervolumes of two runs.

    ``better`` names the run with the higher hypervolumes when the difference is
    significant at ``alpha``.

    Raises
    -------
    InvalidArgument
        Either sample is empty or ``alpha`` is not in ``(0, 1)``.
    """
    if len(hv_a) == 0 or len(hv_b) == 0:
        raise InvalidArgument("both samples need at least one value")
    if not 0.0 < alpha < 1.0:
        raise InvalidArgument(f"alpha must lie in (0, 1), got {alpha}")

    statistic, p_value = ranksums(hv_a, hv_b)
    significant = bool(p_value < alpha)
    better = "none"
    if significant:
        better = "a" if statistic > 0 else "b"

    return {
        "statistic": float(statistic),
        "p_value": float(p_value),
        "alpha": alpha,
        "significant": significant,
        "better": better,
    }
