from __future__ import annotations

from typing import Any, Dict, List, TypedDict

__all__ = (
    "ManifestEntry",
    "CheckpointHeader",
)


class ManifestEntry(TypedDict):
    shape: List[int]
    offset: int


class CheckpointHeader(TypedDict):
    config: Dict[str, Any]
    manifest: Dict[str, ManifestEntry]
