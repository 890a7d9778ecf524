"""Strict JSON run configuration.

Every section is a dataclass with defaults; unknown keys anywhere are an
error, and ``RunConfig.from_dict(cfg.to_dict()) == cfg`` holds.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .energy import Potential, preset
from .flowmodel import Schedule
from .refine import RefineConfig
from .sampler import SamplerConfig

FORMAT_VERSION = 1


@dataclass
class PotentialSection:
    name: str = "double-well"
    params: dict = field(default_factory=dict)
    kT: float | None = None

    def build(self) -> Potential:
        extra = dict(self.params)
        if self.kT is not None:
            extra["kT"] = self.kT
        return preset(self.name, **extra)


@dataclass
class ModelSection:
    hidden: list = field(default_factory=lambda: [64, 64])
    n_time_features: int = 16
    init_seed: int = 0


@dataclass
class ScheduleSection:
    kind: str = "linear"

    def build(self) -> Schedule:
        return Schedule(self.kind)


@dataclass
class SamplerSection:
    steps: int = 50
    method: str = "sde"
    score_norm: float = 0.01
    eps: float = 1e-3

    def build(self, seed: int = 0) -> SamplerConfig:
        return SamplerConfig(steps=self.steps, method=self.method, score_norm=self.score_norm,
                             eps=self.eps, seed=seed)


@dataclass
class DatasetSection:
    source: str = "mh-oracle"        # mh-oracle | biased | csv
    n: int = 20000
    left_fraction: float = 0.9       # used by source=biased
    csv_path: str = ""
    mh_step: float = 1.0
    mh_burn_in: int = 10000
    mh_thin: int = 10


@dataclass
class PretrainSection:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    epochs: int = 40
    batch_size: int = 256
    lr: float = 1e-3


@dataclass
class PreferenceSection:
    beta: float = 1.0
    k: int = 8
    shared_t: bool = True


@dataclass
class RefineSection:
    method: str = "epo-list"
    iterations: int = 1000
    lists_per_iter: int = 4
    lr: float = 1e-5
    lora_rank: int = 4
    lora_scale: float = 1.0
    eval_every: int = 50
    eval_samples: int = 5000
    eval_steps: int = 50
    hist_bins: int = 100
    checkpoint_every: int = 100


@dataclass
class MetricsSection:
    reference: str = "mh-oracle"     # mh-oracle | csv
    reference_csv: str = ""
    reference_n: int = 100000
    metrics: list = field(default_factory=lambda: ["jsd", "w2", "mode_masses", "fes"])
    bins: int = 100
    tica_lag: int = 10
    tica_bins: int = 50


@dataclass
class RunConfig:
    potential: PotentialSection = field(default_factory=PotentialSection)
    model: ModelSection = field(default_factory=ModelSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    preference: PreferenceSection = field(default_factory=PreferenceSection)
    refine: RefineSection = field(default_factory=RefineSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    seed: int = 0
    out: str = "runs/default"
    format_version: int = FORMAT_VERSION

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        cfg = _strict(cls, d, "config")
        if cfg.format_version != FORMAT_VERSION:
            raise ValueError(f"config format_version {cfg.format_version} is not supported")
        return cfg

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValueError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def refine_config(self) -> RefineConfig:
        r, pr = self.refine, self.preference
        return RefineConfig(
            method=r.method, k=pr.k, beta=pr.beta, sampler=self.sampler.build(self.seed),
            iterations=r.iterations, lists_per_iter=r.lists_per_iter, lr=r.lr, lora_rank=r.lora_rank,
            lora_scale=r.lora_scale, shared_t=pr.shared_t, eval_every=r.eval_every,
            eval_samples=r.eval_samples, eval_steps=r.eval_steps, hist_bins=r.hist_bins,
            checkpoint_every=r.checkpoint_every, seed=self.seed)


def _strict(cls, data, where: str):
    if not isinstance(data, dict):
        raise ValueError(f"{where}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ValueError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(fields)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name)
        if dataclasses.is_dataclass(default):
            kwargs[name] = _strict(type(default), value, f"{where}.{name}")
        else:
            kwargs[name] = value
    return cls(**kwargs)
