"""Run records and their persistence."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy


def artifact_versions() -> dict[str, str]:
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"artifact": own, "numpy": np.__version__, "scipy": scipy.__version__}


@dataclass
class RunRecord:
    """One seeded unit of work: labels identify the table cell it feeds."""

    experiment: str
    config_hash: str
    seed: int
    labels: dict = field(default_factory=dict)
    structure: dict | None = None
    metrics: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    versions: dict = field(default_factory=artifact_versions)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> RunRecord:
        return cls(**data)

    def comparable(self) -> dict:
        """Everything except timing, for reproducibility checks."""
        data = self.to_json()
        data.pop("wall_clock")
        return data


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_records(path: str | Path, records: Iterable[RunRecord]) -> None:
    text = "".join(json.dumps(r.to_json(), sort_keys=True) + "\n" for r in records)
    _atomic_write(Path(path), text)


def read_records(path: str | Path) -> list[RunRecord]:
    path = Path(path)
    files = sorted(path.glob("*.jsonl")) if path.is_dir() else [path]
    out = []
    for f in files:
        with open(f) as fh:
            out.extend(RunRecord.from_json(json.loads(line)) for line in fh if line.strip())
    return out


def write_json(path: str | Path, data) -> None:
    _atomic_write(Path(path), json.dumps(data, indent=2, sort_keys=True) + "\n")
