"""
pocco.cli
~~~~~~~~~

The ``pocco`` command line. Exit codes: 0 success, 1 usage error, 2 data or format error,
3 numerical failure (including failed gradient checks).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Type, TypeVar

import structlog
from pydantic import BaseModel, ValidationError

from .config import EvalConfig, TrainConfig, VarianceConfig, load_config, write_config
from .enums import ProblemType
from .errors import DataFormatError, InvalidArgument, NumericalError, PoccoException
from .inference import evaluate_model, read_instance_hvs, rank_sum_test, write_evaluation
from .models.instance import generate, read_instances, write_instances
from .models.weights import das_dennis_weights, read_weights, write_weights
from .nn.checkpoint import load_checkpoint
from .training import gradient_checks, train, variance_study, write_variance
from .utils import dumps, format_f64, read_json, setup_logging

__all__ = (
    "main",
    "build_parser",
)

log = structlog.get_logger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

# spawn key of the instance generator of ``pocco gen``
GEN_STREAM = 0x6E4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        raise UsageError(f"{self.prog}: {message}")


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits, got {text}")
    return value


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        updates["threads"] = args.threads
    return updates


def _stdout(text: str) -> None:
    sys.stdout.write(text + "\n")
    sys.stdout.flush()


def cmd_gen(args: argparse.Namespace) -> int:
    """Writes the instance file; its header line records every argument, so no config.json is written."""
    problem = ProblemType(args.problem)
    instances = (generate(problem, args.n, args.kappa, args.seed, GEN_STREAM, i) for i in range(args.count))
    header = {"problem": problem.value, "n": args.n, "kappa": args.kappa, "count": args.count, "seed": args.seed}
    written = write_instances(args.out, instances, header)
    log.info("instances_generated", path=args.out, count=written)
    return EXIT_OK


def cmd_weights(args: argparse.Namespace) -> int:
    """Writes the weight file. Its rows determine kappa and H, so no config.json is written."""
    weights = das_dennis_weights(args.kappa, args.H)
    write_weights(args.out, weights)
    log.info("weights_written", path=args.out, count=len(weights))
    return EXIT_OK


ConfigT = TypeVar("ConfigT", bound=BaseModel)


def _validate(cls: Type[ConfigT], data: Dict[str, Any], path: Optional[str] = None) -> ConfigT:
    try:
        return cls.model_validate(data)
    except ValidationError as exc:
        raise DataFormatError(exc.errors(), path=path) from None


def _load(cls: Type[ConfigT], path: Optional[str], updates: Dict[str, Any]) -> ConfigT:
    config = load_config(cls, path) if path else cls()
    return _validate(cls, {**config.model_dump(), **updates}, path)


def cmd_train(args: argparse.Namespace) -> int:
    config = _load(TrainConfig, args.config, _overrides(args)).resolved()
    os.makedirs(args.out, exist_ok=True)
    write_config(os.path.join(args.out, "config.json"), config)

    result = train(config, args.out)
    final = next(row.validation_hv for row in reversed(result.metrics) if row.validation_hv is not None)
    log.info("train_done", steps=config.steps, algorithm=config.algorithm, validation_hv=final)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    raw: Dict[str, Any] = {}
    if args.config:
        raw = read_json(args.config)
        if not isinstance(raw, dict):
            raise DataFormatError("an eval config must be a JSON object", path=args.config)

    for key in ("checkpoint", "dataset", "weights", "hv_ref", "augment", "mode"):
        value = getattr(args, key)
        if value is not None:
            raw[key] = value
    raw.update(_overrides(args))

    for key in ("checkpoint", "dataset", "weights"):
        if not raw.get(key):
            raise UsageError(f"eval needs --{key} or a config file that names it")

    policy = load_checkpoint(raw["checkpoint"])
    instances = read_instances(raw["dataset"])
    raw.setdefault("problem", policy.problem.value)
    raw.setdefault("kappa", policy.kappa)
    if instances:
        raw.setdefault("n", instances[0].n)

    config = _validate(EvalConfig, raw, args.config).resolved()

    weights = read_weights(config.weights, config.kappa)
    problem = config.problem_type
    result = evaluate_model(
        policy,
        instances,
        weights,
        config.scalarization.build(problem, config.kappa, config.n),
        config.frame.build(problem, config.kappa, config.n),
        hv_ref=config.hv_ref,
        augment=config.augment,
        pool=config.pool_augmented,
        mode=config.decode_mode,
        seed=config.seed,
        threads=config.threads,
        log_wall_time=config.log_wall_time,
    )

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_config(os.path.join(args.out, "config.json"), config)
        write_evaluation(args.out, result, config.write_fronts)

    _stdout(dumps(result.report))
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    results = gradient_checks(args.seed, args.scale, inject_fault=args.inject_fault, pairs=args.pairs)

    lines = ["check,max_error,tolerance,status"]
    for r in results:
        lines.append(f"{r.label},{format_f64(r.error)},{format_f64(r.tolerance)},{'pass' if r.passed else 'FAIL'}")
    table = "\n".join(lines)
    _stdout(table)

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "gradcheck.csv"), "w", encoding="utf-8", newline="\n") as fp:
            fp.write(table + "\n")

    failed = [r.label for r in results if not r.passed]
    if failed:
        log.error("gradcheck_failed", checks=failed)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_variance(args: argparse.Namespace) -> int:
    config = _load(VarianceConfig, args.config, _overrides(args)).resolved()
    rows = variance_study(config)

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_config(os.path.join(args.out, "config.json"), config)
        write_variance(os.path.join(args.out, "variance.csv"), rows)

    _stdout("batch,algorithm,variance")
    for row in rows:
        _stdout(f"{row.batch},{row.algorithm},{format_f64(row.variance)}")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    verdict = rank_sum_test(read_instance_hvs(args.a), read_instance_hvs(args.b), args.alpha)
    _stdout(dumps(verdict))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pocco", description="Preference-trained conditional-computation solvers for multi-objective routing and packing")
    parser.add_argument("--verbose", action="store_true", help="log debug events")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = commands.add_parser("gen", help="generate random instances")
    gen.add_argument("--problem", choices=[p.value for p in ProblemType], default="MOTSP")
    gen.add_argument("--n", type=int, default=20)
    gen.add_argument("--kappa", type=int, default=2)
    gen.add_argument("--count", type=int, default=100)
    gen.add_argument("--seed", type=_u64, default=0)
    gen.add_argument("--out", required=True, help="instance file to write")
    gen.set_defaults(handler=cmd_gen)

    weights = commands.add_parser("weights", help="write a simplex-lattice weight set")
    weights.add_argument("--kappa", type=int, default=2)
    weights.add_argument("--H", type=int, default=100)
    weights.add_argument("--out", required=True, help="weight CSV to write")
    weights.set_defaults(handler=cmd_weights)

    def run_flags(sub: argparse.ArgumentParser, out_required: bool) -> None:
        sub.add_argument("--config", help="JSON config file")
        sub.add_argument("--seed", type=_u64, help="overrides the config seed")
        sub.add_argument("--threads", type=int, help="overrides the config thread count")
        sub.add_argument("--out", required=out_required, help="output directory")

    train_cmd = commands.add_parser("train", help="train a policy")
    run_flags(train_cmd, True)
    train_cmd.set_defaults(handler=cmd_train)

    evaluate = commands.add_parser("eval", help="evaluate a checkpoint on a dataset")
    run_flags(evaluate, False)
    evaluate.add_argument("--checkpoint")
    evaluate.add_argument("--dataset")
    evaluate.add_argument("--weights")
    evaluate.add_argument("--hv-ref", dest="hv_ref", type=float)
    evaluate.add_argument("--augment", type=_bool)
    evaluate.add_argument("--mode", choices=["greedy", "sample"])
    evaluate.set_defaults(handler=cmd_eval)

    check = commands.add_parser("gradcheck", help="run the gradient oracles")
    check.add_argument("--scale", type=int, default=1)
    check.add_argument("--seed", type=_u64, default=0)
    check.add_argument("--pairs", type=int, default=100)
    check.add_argument("--inject-fault", dest="inject_fault", action="store_true", help="corrupt analytic gradients")
    check.add_argument("--out", help="output directory")
    check.set_defaults(handler=cmd_gradcheck)

    variance = commands.add_parser("variance", help="compare gradient variance of both algorithms")
    run_flags(variance, False)
    variance.set_defaults(handler=cmd_variance)

    compare = commands.add_parser("compare", help="rank-sum test between two eval runs")
    compare.add_argument("a", help="instances.csv of the first run")
    compare.add_argument("b", help="instances.csv of the second run")
    compare.add_argument("--alpha", type=float, default=0.01)
    compare.set_defaults(handler=cmd_compare)

    return parser


_EXIT_CODES: List[Tuple[Type[BaseException], int]] = [
    (UsageError, EXIT_USAGE),
    (InvalidArgument, EXIT_USAGE),
    (DataFormatError, EXIT_DATA),
    (OSError, EXIT_DATA),
    (NumericalError, EXIT_NUMERICAL),
    (PoccoException, EXIT_USAGE),
]


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE

    setup_logging(logging.DEBUG if args.verbose else logging.INFO)
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except (UsageError, PoccoException, OSError) as exc:
        code = next(code for cls, code in _EXIT_CODES if isinstance(exc, cls))
        log.error("command_failed", command=args.command, error=str(exc), exit_code=code)
        return code
