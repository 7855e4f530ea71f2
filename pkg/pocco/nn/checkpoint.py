"""
pocco.nn.checkpoint
~~~~~~~~~~~~~~~~~~~

Binary policy checkpoints: an 8 byte magic, a little-endian u64 header length, a UTF-8
JSON header ``{config, manifest}`` and the parameters as little-endian f64 blobs in
manifest order. Manifest offsets count from the start of the blob region.
"""

from __future__ import annotations

import os
import struct
from typing import TYPE_CHECKING, Any, Dict, Tuple, Union

import numpy as np
import structlog

from ..config import ModelConfig
from ..enums import ProblemType
from ..errors import DataFormatError, InvalidArgument
from ..utils import dumps, loads
from .policy import Policy

if TYPE_CHECKING:
    from ..types.checkpoint import CheckpointHeader, ManifestEntry

__all__ = (
    "MAGIC",
    "save_checkpoint",
    "load_checkpoint",
)

log = structlog.get_logger(__name__)

MAGIC = b"POCCOCK1"
_LENGTH = struct.Struct("<Q")
_BLOB_DTYPE = np.dtype("<f8")


def _policy_config(policy: Policy) -> Dict[str, Any]:
    return {
        "model": policy.config.model_dump(mode="json"),
        "problem": policy.problem.value,
        "kappa": policy.kappa,
    }


def save_checkpoint(path: Union[str, "os.PathLike[str]"], policy: Policy) -> int:
    """Writes ``policy`` to ``path`` and returns the number of bytes written."""
    manifest: Dict[str, ManifestEntry] = {}
    blobs = []
    offset = 0
    for name, param in policy.params.items():
        blob = np.ascontiguousarray(param.data, dtype=_BLOB_DTYPE).tobytes()
        manifest[name] = {"shape": list(param.data.shape), "offset": offset}
        blobs.append(blob)
        offset += len(blob)

    header: CheckpointHeader = {"config": _policy_config(policy), "manifest": manifest}
    encoded = dumps(header).encode("utf-8")

    with open(path, "wb") as fp:
        fp.write(MAGIC)
        fp.write(_LENGTH.pack(len(encoded)))
        fp.write(encoded)
        for blob in blobs:
            fp.write(blob)

    size = len(MAGIC) + _LENGTH.size + len(encoded) + offset
    log.info("checkpoint_saved", path=os.fspath(path), parameters=policy.size, bytes=size)
    return size


def _read_header(raw: bytes, path: str) -> Tuple[CheckpointHeader, int]:
    if raw[: len(MAGIC)] != MAGIC:
        raise DataFormatError("not a checkpoint file (bad magic)", path=path)

    start = len(MAGIC) + _LENGTH.size
    if len(raw) < start:
        raise DataFormatError("truncated checkpoint header", path=path)

    (length,) = _LENGTH.unpack_from(raw, len(MAGIC))
    if len(raw) < start + length:
        raise DataFormatError("truncated checkpoint header", path=path)

    try:
        header = loads(raw[start : start + length].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise DataFormatError(f"invalid checkpoint header: {exc}", path=path) from None

    if not isinstance(header, dict) or "config" not in header or "manifest" not in header:
        raise DataFormatError("checkpoint header needs 'config' and 'manifest'", path=path)

    return header, start + length


def load_checkpoint(path: Union[str, "os.PathLike[str]"]) -> Policy:
    """Reads a policy written by :func:`save_checkpoint`.

    Raises
    -------
    DataFormatError
        The file is not a checkpoint, is truncated, or its manifest does not match its config.
    """
    path = os.fspath(path)
    with open(path, "rb") as fp:
        raw = fp.read()

    header, blob_start = _read_header(raw, path)
    config = header["config"]
    try:
        model = ModelConfig.model_validate(config["model"])
        problem = ProblemType(config["problem"])
        kappa = int(config["kappa"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"invalid checkpoint config: {exc}", path=path) from None

    arrays: Dict[str, np.ndarray] = {}
    for name, entry in header["manifest"].items():
        shape = tuple(int(d) for d in entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        begin = blob_start + int(entry["offset"])
        end = begin + count * _BLOB_DTYPE.itemsize
        if end > len(raw):
            raise DataFormatError(f"blob of parameter {name} runs past the end of the file", path=path)
        arrays[name] = np.frombuffer(raw, dtype=_BLOB_DTYPE, count=count, offset=begin).astype(np.float64).reshape(shape)

    try:
        return Policy(model, problem, kappa, arrays=arrays)
    except InvalidArgument as exc:
        raise DataFormatError(f"checkpoint does not match its config: {exc}", path=path) from None
