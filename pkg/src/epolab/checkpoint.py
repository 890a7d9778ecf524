"""JSON checkpoints: architecture, weights, schedule, step, RNG position, optimizer state."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .diffcore import AdamState
from .flowmodel import Schedule, VelocityModel

FORMAT_VERSION = 1
KIND = "epolab-checkpoint"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def write_json_atomic(path, obj, indent=None) -> None:
    """Write via a temporary file and rename, so a crash never leaves a half-written file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=indent, allow_nan=False)
        fh.write("\n")
    os.replace(tmp, path)


@dataclass
class Checkpoint:
    model: VelocityModel
    schedule: str = "linear"
    step: int = 0
    seed: int = 0
    optimizer: AdamState | None = None
    config_hash: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": KIND,
            **self.model.to_dict(),
            "schedule": self.schedule,
            "step": self.step,
            "rng": {"seed": self.seed, "next_iteration": self.step},
            "optimizer": None if self.optimizer is None else self.optimizer.to_dict(),
            "config_hash": self.config_hash,
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Checkpoint":
        if d.get("kind") != KIND:
            raise ValueError("not an epolab checkpoint")
        version = d.get("format_version")
        if version != FORMAT_VERSION:
            raise ValueError(f"checkpoint format version {version} is not supported (expected {FORMAT_VERSION})")
        Schedule(d["schedule"])  # validates the kind
        return cls(
            model=VelocityModel.from_dict(d),
            schedule=d["schedule"],
            step=int(d["step"]),
            seed=int(d["rng"]["seed"]),
            optimizer=None if d["optimizer"] is None else AdamState.from_dict(d["optimizer"]),
            config_hash=d["config_hash"],
            extra=d.get("extra", {}),
        )

    def save(self, path) -> None:
        write_json_atomic(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValueError(f"cannot read checkpoint {path}: {exc}") from exc
        return cls.from_dict(data)
