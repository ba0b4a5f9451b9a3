"""JSON output with round-trip floats, content hashes and run manifests."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1)) if indent else ""
    end = " " * (indent * level) if indent else ""
    sep = ",\n" if indent else ","
    nl = "\n" if indent else ""
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        return f"{x:.17g}"
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{" + nl + sep.join(items) + nl + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        # numeric arrays stay on one line
        if all(isinstance(v, (int, float, np.number)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_encode(v, 0, 0) for v in obj) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[" + nl + sep.join(items) + nl + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent=2) -> str:
    """JSON text with every float printed to 17 significant digits."""
    return _encode(obj, indent, 0) + "\n"


def loads(text: str):
    return json.loads(text)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_hash(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    input_hashes: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    output_hashes: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    exit_code: int = 0

    def add_output(self, path):
        path = str(path)
        if path not in self.outputs:
            self.outputs.append(path)
        self.output_hashes[path] = file_hash(path)

    def to_json(self) -> str:
        return dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))
