"""Online energy-preference refinement.

Each iteration samples lists from the current model with the SDE sampler,
ranks every list by energy, and takes one Adam step on the adapter weights
using the configured preference loss against the frozen reference model.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .checkpoint import Checkpoint, config_hash, write_json_atomic
from .energy import Potential, bin_probabilities, rank_by_energy
from .flowmodel import ModelPair, Schedule, VelocityModel
from .metrics import HistogramSpec, jsd_to_reference, mode_masses
from .preference import LIST_LOSSES, PreferenceConfig
from .sampler import SamplerConfig, generate_ensemble

log = logging.getLogger(__name__)

METHODS = tuple(LIST_LOSSES)


@dataclass(frozen=True)
class RefineConfig:
    method: str = "epo-list"
    k: int = 8
    beta: float = 1.0
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig(steps=50, method="sde", score_norm=0.01))
    iterations: int = 1000
    lists_per_iter: int = 4
    lr: float = 1e-5
    lora_rank: int = 4
    lora_scale: float = 1.0
    shared_t: bool = True
    eval_every: int = 50
    eval_samples: int = 5000
    eval_steps: int = 50
    hist_bins: int = 100
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown refinement method {self.method!r}; choose from {METHODS}")
        if self.k < 2:
            raise ValueError(f"list size K must be >= 2, got {self.k}")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.lists_per_iter < 1 or self.lora_rank < 1:
            raise ValueError("lists_per_iter and lora_rank must be >= 1")
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")
        if self.eval_every < 0 or self.checkpoint_every < 0:
            raise ValueError("eval_every and checkpoint_every must be >= 0 (0 disables)")

    def preference(self) -> PreferenceConfig:
        return PreferenceConfig(beta=self.beta, k=self.k, shared_t=self.shared_t, eps=self.sampler.eps)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RefineConfig":
        d = dict(d)
        if "sampler" in d and isinstance(d["sampler"], dict):
            d["sampler"] = SamplerConfig(**d["sampler"])
        return cls(**d)


@dataclass
class RunLog:
    """Append-only per-iteration records plus evaluation snapshots.

    Everything here is a deterministic function of (config, seed); wall-clock
    timing is kept in ``timing`` and written to a separate file.
    """

    config_hash: str
    records: list[dict] = field(default_factory=list)
    evaluations: list[dict] = field(default_factory=list)
    timing: dict = field(default_factory=dict)

    def append(self, record: dict) -> None:
        expected = len(self.records)
        if record["iteration"] != expected:
            raise ValueError(f"RunLog expects iteration {expected}, got {record['iteration']}")
        self.records.append(record)

    def losses(self) -> np.ndarray:
        return np.array([r["loss"] for r in self.records])

    def to_dict(self) -> dict:
        return {"format_version": 1, "config_hash": self.config_hash,
                "records": self.records, "evaluations": self.evaluations}

    @classmethod
    def from_dict(cls, d: dict) -> "RunLog":
        return cls(config_hash=d["config_hash"], records=list(d["records"]),
                   evaluations=list(d["evaluations"]))

    def save(self, path) -> None:
        write_json_atomic(path, self.to_dict(), indent=1)


def init_refinement(pretrained: VelocityModel, p: Potential, cfg: RefineConfig) -> ModelPair:
    """Frozen reference plus a trainable copy with zero-initialized adapters."""
    if pretrained.dim != p.dim:
        raise ValueError(f"model dimension {pretrained.dim} does not match potential dimension {p.dim}")
    if pretrained.periodic != p.periodic:
        raise ValueError("model and potential disagree on periodicity")
    return ModelPair.from_pretrained(pretrained, rank=cfg.lora_rank, scale=cfg.lora_scale, seed=cfg.seed)


def iteration_rng(seed: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(iteration),)))


def epo_iteration(models: ModelPair, p: Potential, cfg: RefineConfig, rng, opt_state: dc.AdamState,
                  sched: Schedule | None = None, iteration: int = 0) -> dict:
    """Sample, rank, compute the loss, and update the adapters in place.

    Returns the iteration record: loss (value before the step) and ensemble energy stats.
    """
    sched = sched or Schedule("linear")
    pref = cfg.preference()
    loss_fn = LIST_LOSSES[cfg.method]
    n = cfg.lists_per_iter * cfg.k
    samples = generate_ensemble(models.opt, n, cfg.sampler, sched, rng)
    energies = p.energy(samples)
    total = 0.0
    grads: dict[str, np.ndarray] = {}
    for j in range(cfg.lists_per_iter):
        sl = slice(j * cfg.k, (j + 1) * cfg.k)
        ranked = rank_by_energy(samples[sl], energies[sl])
        loss = loss_fn(ranked, models, pref, rng, sched)
        value = float(loss.value)
        if not math.isfinite(value):
            raise FloatingPointError(f"non-finite loss at iteration {iteration} (list {j})")
        total += value
        for name, g in loss.graph.backward(loss).items():
            grads[name] = grads[name] + g if name in grads else g
    scale = 1.0 / cfg.lists_per_iter
    grads = {k: g * scale for k, g in grads.items()}
    try:
        new, _ = dc.adam_step(models.opt.adapters, grads, opt_state)
    except FloatingPointError as exc:
        raise FloatingPointError(f"iteration {iteration}: {exc}") from exc
    models.update_adapters(new)
    return {
        "iteration": iteration,
        "loss": total * scale,
        "energy_mean": float(np.mean(energies)),
        "energy_min": float(np.min(energies)),
        "energy_max": float(np.max(energies)),
    }


class Evaluator:
    """Deterministic ODE-sample metrics against the Boltzmann reference."""

    def __init__(self, p: Potential, cfg: RefineConfig, sched: Schedule | None = None):
        self.p = p
        self.cfg = cfg
        self.sched = sched or Schedule("linear")
        self.spec = HistogramSpec.for_potential(p, cfg.hist_bins)
        self.reference = bin_probabilities(p, self.spec.edges()) if p.dim <= 2 else None
        self.sampler = SamplerConfig(steps=cfg.eval_steps, method="ode-heun", eps=cfg.sampler.eps)
        self.seed = cfg.seed + 1_000_003

    def samples(self, model) -> np.ndarray:
        return generate_ensemble(model, self.cfg.eval_samples, self.sampler, self.sched, self.seed)

    def __call__(self, model, iteration: int) -> dict:
        x = self.samples(model)
        out = {
            "iteration": iteration,
            "mode_masses": mode_masses(x, self.p.default_partition()).tolist(),
            "energy_mean": float(np.mean(self.p.energy(x))),
        }
        if self.reference is not None:
            out["jsd"] = jsd_to_reference(x, self.reference, self.spec)
        return out


def _checkpoint(models: ModelPair, cfg: RefineConfig, state: dc.AdamState, step: int, runlog: RunLog,
                sched: Schedule) -> Checkpoint:
    return Checkpoint(model=models.opt, schedule=sched.kind, step=step, seed=cfg.seed, optimizer=state,
                      config_hash=runlog.config_hash,
                      extra={"refine_config": cfg.to_dict(), "runlog": runlog.to_dict()})


def latest_checkpoint(out_dir) -> Path | None:
    found = sorted(Path(out_dir).glob("checkpoints/step_*.json"))
    return found[-1] if found else None


def refine_run(pretrained: VelocityModel, p: Potential, cfg: RefineConfig, *,
               sched: Schedule | None = None, out_dir=None, resume: Checkpoint | None = None,
               stop_after: int | None = None) -> tuple[Checkpoint, RunLog]:
    """Run (or resume) the refinement loop.

    With ``out_dir`` set, periodic checkpoints go to ``out_dir/checkpoints``.
    ``stop_after`` ends the loop early at that iteration count (used to
    simulate interruption); the result then reflects the partial run.
    """
    sched = sched or Schedule("linear")
    chash = config_hash({"refine": cfg.to_dict(), "potential": p.to_dict(), "schedule": sched.kind})
    if cfg.iterations == 0:
        return Checkpoint(model=pretrained, schedule=sched.kind, step=0, seed=cfg.seed,
                          config_hash=chash), RunLog(config_hash=chash)

    evaluator = Evaluator(p, cfg, sched) if cfg.eval_every else None
    if resume is None:
        models = init_refinement(pretrained, p, cfg)
        state = dc.AdamState(lr=cfg.lr)
        runlog = RunLog(config_hash=chash)
        start = 0
        if evaluator:
            runlog.evaluations.append(evaluator(models.ref, 0))
    else:
        if resume.config_hash != chash:
            raise ValueError("checkpoint was written by a run with a different configuration")
        models = init_refinement(resume.model.without_adapters(), p, cfg)
        models.update_adapters(resume.model.adapters)
        state = resume.optimizer
        runlog = RunLog.from_dict(resume.extra["runlog"])
        start = resume.step

    end = cfg.iterations if stop_after is None else min(cfg.iterations, stop_after)
    t0 = time.perf_counter()
    for it in range(start, end):
        record = epo_iteration(models, p, cfg, iteration_rng(cfg.seed, it), state, sched, it)
        runlog.append(record)
        done = it + 1
        if evaluator and (done % cfg.eval_every == 0 or done == cfg.iterations):
            ev = evaluator(models.opt, done)
            runlog.evaluations.append(ev)
            log.info("iter %d loss %.5f E %.3f masses %s jsd %s", done, record["loss"], ev["energy_mean"],
                     np.round(ev["mode_masses"], 3), ev.get("jsd"))
        if out_dir is not None and cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
            _checkpoint(models, cfg, state, done, runlog, sched).save(
                Path(out_dir) / "checkpoints" / f"step_{done:06d}.json")
    runlog.timing = {"wall_seconds": time.perf_counter() - t0, "iterations_run": end - start}
    return _checkpoint(models, cfg, state, end, runlog, sched), runlog
