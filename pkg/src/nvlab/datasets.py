"""Experiment output records and their on-disk form.

A dataset is the tagged result of one experiment run: sweep axis, the
normalized signal, raw gate totals and enough metadata (spec, apparatus
snapshot, seed) to reproduce it bit-exactly.  Files are versioned JSON
with a CSV sidecar, content-addressed by the hash of (spec, seed) so a
re-run can never silently overwrite different data.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

DATASET_SCHEMA = "nvlab-dataset/1"


class DatasetError(RuntimeError):
    pass


class DatasetExistsError(DatasetError):
    """A different dataset already sits at this content address."""


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      allow_nan=True)


def content_address(spec_dict: dict, seed) -> str:
    payload = canonical_json({"spec": spec_dict, "seed": seed})
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class Dataset:
    kind: str
    axis_name: str
    axis_units: str
    axis: list
    signal: list
    errors: Optional[list] = None
    raw: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.axis) != len(self.signal):
            raise DatasetError("axis and signal lengths differ")
        if self.errors is not None and len(self.errors) != len(self.signal):
            raise DatasetError("errors length differs from signal")

    @property
    def dataset_id(self) -> str:
        spec = self.metadata.get("spec", {})
        return content_address(spec, self.metadata.get("seed"))

    def x(self) -> np.ndarray:
        return np.asarray(self.axis, dtype=float)

    def y(self) -> np.ndarray:
        return np.asarray(self.signal, dtype=float)

    def to_dict(self) -> dict:
        return {
            "schema": DATASET_SCHEMA,
            "id": self.dataset_id,
            "kind": self.kind,
            "axis_name": self.axis_name,
            "axis_units": self.axis_units,
            "axis": list(map(float, self.axis)),
            "signal": list(map(float, self.signal)),
            "errors": None if self.errors is None
                      else list(map(float, self.errors)),
            "raw": self.raw,
            "metadata": self.metadata,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Dataset":
        if data.get("schema") != DATASET_SCHEMA:
            raise DatasetError(
                f"unsupported dataset schema {data.get('schema')!r}, "
                f"expected {DATASET_SCHEMA}")
        return cls(
            kind=data["kind"], axis_name=data["axis_name"],
            axis_units=data["axis_units"], axis=data["axis"],
            signal=data["signal"], errors=data.get("errors"),
            raw=data.get("raw", {}), metadata=data.get("metadata", {}),
            warnings=data.get("warnings", []))

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    def to_csv(self) -> str:
        lines = [f"{self.axis_name}_{self.axis_units},signal,error"]
        errs = self.errors or [float("nan")] * len(self.axis)
        for x, y, e in zip(self.axis, self.signal, errs):
            lines.append(f"{x!r},{y!r},{e!r}")
        return "\n".join(lines) + "\n"

    def save(self, data_dir) -> Path:
        """Write <id>.json (+ .csv sidecar) under data_dir.  Identical
        re-runs are no-ops; conflicting content at the same address is an
        error rather than an overwrite."""
        data_dir = Path(data_dir)
        data_dir.mkdir(parents=True, exist_ok=True)
        path = data_dir / f"{self.dataset_id}.json"
        payload = self.to_json()
        if path.exists():
            if path.read_text() != payload:
                raise DatasetExistsError(
                    f"dataset {self.dataset_id} exists with different "
                    f"content at {path}")
            return path
        path.write_text(payload)
        (data_dir / f"{self.dataset_id}.csv").write_text(self.to_csv())
        return path

    @classmethod
    def load(cls, path) -> "Dataset":
        return cls.from_dict(json.loads(Path(path).read_text()))
