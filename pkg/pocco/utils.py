from __future__ import annotations

import logging
import os
import sys
from typing import Any, Iterable, Optional, Union

import numpy as np
import structlog

try:
    import ujson as _json
except ImportError:
    import json as _json

from .errors import DataFormatError

__all__ = (
    "derive_rng",
    "format_f64",
    "format_row",
    "parse_row",
    "dumps",
    "loads",
    "read_json",
    "write_json",
    "setup_logging",
)

PathLike = Union[str, "os.PathLike[str]"]


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Returns an independent random stream for ``(seed, *key)``.

    Streams come from a counter-based :class:`numpy.random.Philox` generator seeded through
    :class:`numpy.random.SeedSequence` with ``key`` as the spawn key, so the stream for a
    given key never depends on how many other streams were drawn before it. For example: ::

        rng = pocco.utils.derive_rng(seed, step, batch_index)

    Parameters
    -----------
    seed: :class:`int`
        The global 64-bit run seed.
    key: :class:`int`
        Any number of non-negative integers naming the stream.
    """
    sequence = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(sequence))


def format_f64(value: float) -> str:
    """Formats a float with 17 significant digits, which round-trips every f64 exactly."""
    return format(float(value), ".17g")


def format_row(values: Iterable[float]) -> str:
    return ",".join(format_f64(v) for v in values)


def parse_row(text: str, *, path: Optional[str] = None, line: Optional[int] = None) -> list:
    try:
        return [float(cell) for cell in text.strip().split(",")]
    except ValueError:
        raise DataFormatError(f"expected comma separated numbers, got {text.strip()!r}", path=path, line=line) from None


def dumps(obj: Any) -> str:
    return _json.dumps(obj, sort_keys=True, indent=2)


def loads(text: str) -> Any:
    return _json.loads(text)


def read_json(path: PathLike) -> Any:
    with open(path, "r", encoding="utf-8") as fp:
        text = fp.read()

    try:
        return loads(text)
    except ValueError as exc:
        raise DataFormatError(f"invalid JSON: {exc}", path=os.fspath(path)) from None


def write_json(path: PathLike, obj: Any) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        fp.write(dumps(obj))
        fp.write("\n")


def setup_logging(level: int = logging.INFO) -> None:
    """Configures :mod:`structlog` to render key/value events on stderr.

    Output files never receive log lines, so runs stay byte-identical.
    """
    structlog.configure(
        processors=[
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="%H:%M:%S"),
            structlog.dev.ConsoleRenderer(colors=False),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(level),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )

