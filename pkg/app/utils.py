from __future__ import annotations

import json
import os
from typing import Any, Dict, Iterable, List

from app.errors import ArtifactError


def ensure_dir(path: str) -> None:
    os.makedirs(path, exist_ok=True)


def write_json(path: str, payload: Any) -> None:
    """Write with sorted keys so reruns are byte-comparable."""
    parent = os.path.dirname(path)
    if parent:
        ensure_dir(parent)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path: str) -> Any:
    if not os.path.exists(path):
        raise ArtifactError("utils.read_json", f"missing file: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise ArtifactError("utils.read_json", f"malformed JSON in {path}: {e}")


class JsonlWriter:
    """Append-only JSON-lines log, flushed per record."""

    def __init__(self, path: str):
        parent = os.path.dirname(path)
        if parent:
            ensure_dir(parent)
        self.path = path
        self._fh = open(path, "w", encoding="utf-8")

    def write(self, record: Dict[str, Any]) -> None:
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self) -> "JsonlWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_jsonl(path: str) -> List[Dict[str, Any]]:
    if not os.path.exists(path):
        raise ArtifactError("utils.read_jsonl", f"missing file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def strip_wall_time(payload: Any, suffixes: Iterable[str] = ("_seconds", "wall_time")) -> Any:
    """Drop wall-clock fields recursively; what remains is the deterministic part of an artifact."""
    suffixes = tuple(suffixes)
    if isinstance(payload, dict):
        return {k: strip_wall_time(v, suffixes) for k, v in payload.items() if not k.endswith(suffixes)}
    if isinstance(payload, list):
        return [strip_wall_time(v, suffixes) for v in payload]
    return payload
