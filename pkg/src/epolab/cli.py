"""Command-line entry point: ``epolab pretrain | refine | sample | eval | gradcheck``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from . import plots
from .checkpoint import Checkpoint, config_hash, write_json_atomic
from .config import RunConfig
from .datasets import biased_split, oracle_samples, read_samples_csv, write_samples_csv
from .energy import PRESETS, Potential, bin_probabilities
from .flowmodel import VelocityModel, pretrain
from .metrics import (LOG_BASE, HistogramSpec, fes_grid, jsd_hist, jsd_to_reference, mode_masses, tica,
                      w2_1d, w2_gauss)
from .refine import METHODS, latest_checkpoint, refine_run
from .sampler import METHODS as SAMPLERS
from .sampler import generate_ensemble

log = logging.getLogger("epolab")

REPORT_FORMAT = "epolab-metrics/1"
REPORT_SCHEMA = {
    "type": "object",
    "required": ["format", "format_version", "dim", "n_samples", "n_reference", "potential", "metrics"],
    "properties": {
        "format": {"const": REPORT_FORMAT},
        "format_version": {"const": 1},
        "dim": {"type": "integer", "minimum": 1},
        "n_samples": {"type": "integer", "minimum": 0},
        "n_reference": {"type": "integer", "minimum": 0},
        "potential": {"type": "object"},
        "metrics": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["value", "params"],
                "properties": {"params": {"type": "object"}},
            },
        },
    },
}


class CliError(Exception):
    """User-facing failure; reported without a traceback."""


# --- shared helpers -----------------------------------------------------------------------

def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if getattr(args, "potential", None):
        cfg.potential.name = args.potential
        cfg.potential.params = {}
    for flag, section, key in (("method", cfg.refine, "method"), ("sampler", cfg.sampler, "method"),
                               ("steps", cfg.sampler, "steps"), ("score_norm", cfg.sampler, "score_norm"),
                               ("beta", cfg.preference, "beta"), ("k", cfg.preference, "k"),
                               ("iterations", cfg.refine, "iterations"), ("epochs", cfg.pretrain, "epochs")):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(section, key, value)
    cfg.sampler.build(cfg.seed)  # validate early
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_effective_config(out: Path, cfg: RunConfig, command: str) -> None:
    write_json_atomic(out / f"{command}.config.json", cfg.to_dict(), indent=2)


def _load_checkpoint(path) -> Checkpoint:
    if not path:
        raise CliError("a --checkpoint path is required")
    try:
        return Checkpoint.load(path)
    except (ValueError, KeyError) as exc:
        raise CliError(str(exc)) from exc


def _check_dims(model: VelocityModel, p: Potential) -> None:
    if model.dim != p.dim:
        raise CliError(f"checkpoint model has dimension {model.dim} but potential "
                       f"{p.name or p.kind} has dimension {p.dim}")


def _write_trace_csv(path, values, name="loss") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", name])
        for i, v in enumerate(values):
            w.writerow([i, repr(float(v))])


# --- commands ---------------------------------------------------------------------------------

def _dataset(cfg: RunConfig, p: Potential) -> np.ndarray:
    ds = cfg.pretrain.dataset
    kw = dict(step=ds.mh_step, burn_in=ds.mh_burn_in, thin=ds.mh_thin)
    if ds.source == "mh-oracle":
        return oracle_samples(p, ds.n, seed=cfg.seed, **kw)
    if ds.source == "biased":
        return biased_split(p, ds.n, ds.left_fraction, seed=cfg.seed, **kw)
    if ds.source == "csv":
        try:
            return read_samples_csv(ds.csv_path, dim=p.dim)
        except ValueError as exc:
            raise CliError(str(exc)) from exc
    raise CliError(f"unknown dataset source {ds.source!r} (mh-oracle | biased | csv)")


def cmd_pretrain(args) -> int:
    cfg = _load_config(args)
    p = cfg.potential.build()
    out = _out_dir(cfg)
    data = _dataset(cfg, p)
    write_samples_csv(out / "dataset.csv", data)
    model = VelocityModel.init(p.dim, hidden=tuple(cfg.model.hidden), n_time_features=cfg.model.n_time_features,
                               periodic=p.periodic, seed=cfg.model.init_seed)
    sched = cfg.schedule.build()
    if cfg.pretrain.epochs > 0:
        res = pretrain(model, data, cfg.pretrain.epochs, cfg.pretrain.batch_size, cfg.pretrain.lr,
                       seed=cfg.seed, sched=sched)
        model, trace, steps, opt = res.model, res.trace, res.steps, res.optimizer
    else:
        trace, steps, opt = [], 0, None
    Checkpoint(model=model, schedule=sched.kind, step=steps, seed=cfg.seed, optimizer=opt,
               config_hash=config_hash({k: v for k, v in cfg.to_dict().items() if k != "out"}),
               extra={"potential": p.to_dict()}).save(out / "pretrained.json")
    _write_trace_csv(out / "pretrain_trace.csv", trace)
    _write_effective_config(out, cfg, "pretrain")
    if trace:
        plots.trace_svg(out / "pretrain_trace.svg", trace, title="flow-matching loss")
    masses = mode_masses(data, p.default_partition())
    print(f"pretrained on {len(data)} samples ({steps} steps); dataset mode masses {np.round(masses, 4).tolist()}")
    print(f"checkpoint: {out / 'pretrained.json'}")
    return 0


def cmd_refine(args) -> int:
    cfg = _load_config(args)
    p = cfg.potential.build()
    out = _out_dir(cfg)
    rcfg = cfg.refine_config()
    ck = _load_checkpoint(args.checkpoint)
    pretrained = ck.model.without_adapters()
    _check_dims(pretrained, p)
    sched = cfg.schedule.build()
    if ck.schedule != sched.kind:
        raise CliError(f"checkpoint was trained with schedule {ck.schedule!r}, config says {sched.kind!r}")
    resume = None
    if args.resume:
        path = latest_checkpoint(out)
        if path is None:
            log.warning("no periodic checkpoint in %s; starting from scratch", out)
        else:
            resume = Checkpoint.load(path)
            print(f"resuming from {path} (iteration {resume.step})")
    try:
        final, runlog = refine_run(pretrained, p, rcfg, sched=sched, out_dir=out, resume=resume,
                                   stop_after=args.stop_after)
    except (ValueError, FloatingPointError) as exc:
        raise CliError(str(exc)) from exc
    final.save(out / "final.json")
    runlog.save(out / "runlog.json")
    write_json_atomic(out / "timing.json", runlog.timing, indent=1)
    _write_trace_csv(out / "loss_trace.csv", runlog.losses())
    _write_effective_config(out, cfg, "refine")
    if runlog.records:
        plots.trace_svg(out / "loss_trace.svg", runlog.losses(), title=f"{rcfg.method} loss")
    if runlog.evaluations:
        last = runlog.evaluations[-1]
        print(f"iteration {last['iteration']}: mode masses {np.round(last['mode_masses'], 4).tolist()}"
              + (f", JSD {last['jsd']:.4f}" if "jsd" in last else ""))
    print(f"final checkpoint: {out / 'final.json'}")
    return 0


def cmd_sample(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    ck = _load_checkpoint(args.checkpoint)
    if args.n < 0:
        raise CliError("--n must be >= 0")
    scfg = cfg.sampler.build(cfg.seed)
    sched = cfg.schedule.build()
    x = generate_ensemble(ck.model, args.n, scfg, sched, rng=cfg.seed)
    name = args.name or "samples"
    write_samples_csv(out / f"{name}.csv", x)
    meta = {"format_version": 1, "checkpoint": str(args.checkpoint), "n": args.n, "seed": cfg.seed,
            "sampler": cfg.sampler.__dict__, "schedule": sched.kind, "config": cfg.to_dict()}
    write_json_atomic(out / f"{name}.meta.json", meta, indent=2)
    print(f"wrote {args.n} samples to {out / (name + '.csv')}")
    return 0


def _eval_samples(args, cfg, p) -> np.ndarray:
    if args.samples:
        try:
            return read_samples_csv(args.samples)
        except ValueError as exc:
            raise CliError(str(exc)) from exc
    if args.checkpoint:
        ck = _load_checkpoint(args.checkpoint)
        _check_dims(ck.model, p)
        return generate_ensemble(ck.model, args.n, cfg.sampler.build(cfg.seed), cfg.schedule.build(), cfg.seed)
    raise CliError("eval needs --samples CSV or --checkpoint")


def _reference(args, cfg, p):
    """Reference samples (time-ordered when they come from the Metropolis chain)."""
    if args.reference:
        try:
            return read_samples_csv(args.reference), "csv"
        except ValueError as exc:
            raise CliError(str(exc)) from exc
    ds = cfg.pretrain.dataset
    x = oracle_samples(p, cfg.metrics.reference_n, seed=cfg.seed + 1, step=ds.mh_step,
                       burn_in=ds.mh_burn_in, thin=ds.mh_thin)
    return x, "mh-oracle"


def evaluate(x, ref, p: Potential, cfg: RunConfig, out: Path | None = None, ref_is_trajectory=True) -> dict:
    """Metrics report comparing samples ``x`` with reference samples ``ref``."""
    m = cfg.metrics
    spec = HistogramSpec.for_potential(p, m.bins) if p.dim <= 2 else None
    report = {"format": REPORT_FORMAT, "format_version": 1, "dim": int(p.dim), "n_samples": int(len(x)),
              "n_reference": int(len(ref)), "potential": p.to_dict(), "metrics": {}}
    metrics = report["metrics"]
    wanted = set(m.metrics)
    if len(x) == 0:
        raise CliError("eval needs at least one sample")
    if "jsd" in wanted and spec is not None:
        hist = {"bins": list(spec.bins), "bounds": [list(b) for b in spec.bounds], "log_base": LOG_BASE}
        metrics["jsd_reference"] = {"value": jsd_hist(x, ref, spec), "params": hist}
        metrics["jsd_boltzmann"] = {"value": jsd_to_reference(x, bin_probabilities(p, spec.edges()), spec),
                                    "params": {**hist, "reference": "Boltzmann bin probabilities"}}
    if "w2" in wanted:
        per_axis = [w2_1d(x[:, j], ref[:, j]) for j in range(p.dim)]
        metrics["w2_1d"] = {"value": per_axis, "params": {"coupling": "sorted quantiles, per axis"}}
        cx = np.atleast_2d(np.cov(x, rowvar=False)) if len(x) > 1 else np.zeros((p.dim, p.dim))
        cr = np.atleast_2d(np.cov(ref, rowvar=False))
        metrics["w2_gauss"] = {"value": w2_gauss(x.mean(0), cx, ref.mean(0), cr),
                               "params": {"fit": "mean and covariance"}}
    if "mode_masses" in wanted:
        cuts = p.default_partition()
        metrics["mode_masses"] = {"value": mode_masses(x, cuts).tolist(),
                                  "params": {"cuts": cuts, "axis": 0,
                                             "reference_value": mode_masses(ref, cuts).tolist()}}
    if "fes" in wanted and spec is not None:
        fes = fes_grid(x, spec, p.kT)
        metrics["fes"] = {"value": "fes.csv", "params": {**fes.metadata(), "bins": list(spec.bins)}}
        if out is not None:
            _write_fes_csv(out / "fes.csv", fes)
            plots.fes_svg(out / "fes.svg", fes, title="free energy")
            edges = spec.edges()
            if p.dim == 1:
                probs = spec.counts(x) / len(x)
                _write_hist_csv(out / "histogram.csv", edges[0], probs, bin_probabilities(p, edges))
                plots.histogram_svg(out / "histogram.svg", edges[0], probs, bin_probabilities(p, edges))
    if "tica" in wanted and p.dim >= 2 and ref_is_trajectory:
        model, proj_ref = tica(ref, m.tica_lag, 2)
        proj_x = model.transform(x)
        lo, hi = proj_ref.min(axis=0), proj_ref.max(axis=0)
        tspec = HistogramSpec(tuple(zip(lo, hi)), (m.tica_bins, m.tica_bins))
        metrics["tica_jsd"] = {"value": jsd_hist(proj_x, proj_ref, tspec),
                               "params": {"lag": m.tica_lag, "bins": [m.tica_bins] * 2, "log_base": LOG_BASE,
                                          "range": "reference projection",
                                          "eigenvalues": model.eigenvalues.tolist()}}
    return report


def _write_fes_csv(path, fes) -> None:
    centers = fes.centers()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if fes.values.ndim == 1:
            w.writerow(["x", "free_energy"])
            for c, v in zip(centers[0], fes.values):
                w.writerow([repr(float(c)), repr(float(v))])
        else:
            w.writerow(["x", "y", "free_energy"])
            for i, cx in enumerate(centers[0]):
                for j, cy in enumerate(centers[1]):
                    w.writerow([repr(float(cx)), repr(float(cy)), repr(float(fes.values[i, j]))])


def _write_hist_csv(path, edges, probs, reference) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "probability", "boltzmann"])
        for lo, hi, pr, rf in zip(edges[:-1], edges[1:], probs, reference):
            w.writerow([repr(float(lo)), repr(float(hi)), repr(float(pr)), repr(float(rf))])


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    p = cfg.potential.build()
    out = _out_dir(cfg)
    if args.metrics:
        cfg.metrics.metrics = args.metrics.split(",")
    x = _eval_samples(args, cfg, p)
    if x.shape[1] != p.dim:
        raise CliError(f"samples have dimension {x.shape[1]} but potential has dimension {p.dim}")
    ref, source = _reference(args, cfg, p)
    if ref.shape[1] != p.dim:
        raise CliError(f"reference has dimension {ref.shape[1]} but potential has dimension {p.dim}")
    report = evaluate(x, ref, p, cfg, out, ref_is_trajectory=(source == "mh-oracle"))
    report["reference"] = source
    write_json_atomic(out / "metrics.json", report, indent=2)
    _write_effective_config(out, cfg, "eval")
    for name, entry in report["metrics"].items():
        print(f"{name:<16} {entry['value']}")
    return 0


def cmd_gradcheck(args) -> int:
    rows = gc.run_suite(configs=args.configs, seed=args.seed or 0, corrupt=args.corrupt)
    print(gc.format_table(rows))
    return 0 if all(r.passed for r in rows) else 1


# --- parser ------------------------------------------------------------------------------------

def _nonneg_float(text: str) -> float:
    v = float(text)
    if not (math.isfinite(v) and v >= 0):
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text}")
    return v


def _steps(text: str) -> int:
    v = int(text)
    if v < 2:
        raise argparse.ArgumentTypeError("steps must be >= 2")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epolab", description="Energy-preference refinement of flow models.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, sampler=True):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--seed", type=int, help="global seed (overrides the config)")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--potential", choices=sorted(PRESETS), help="potential preset")
        if sampler:
            sp.add_argument("--sampler", choices=SAMPLERS)
            sp.add_argument("--steps", type=_steps, help="integration steps")
            sp.add_argument("--score-norm", type=_nonneg_float, help="SDE diffusion strength w")

    sp = sub.add_parser("pretrain", help="flow-matching pretraining")
    common(sp, sampler=False)
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("refine", help="online energy-preference refinement")
    common(sp)
    sp.add_argument("--checkpoint", required=True, help="pretrained checkpoint")
    sp.add_argument("--method", choices=METHODS)
    sp.add_argument("--beta", type=float)
    sp.add_argument("--k", type=int, help="list size")
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--resume", action="store_true", help="continue from the latest periodic checkpoint in --out")
    sp.add_argument("--stop-after", type=int, help="stop after this many iterations (staged runs)")
    sp.set_defaults(func=cmd_refine)

    sp = sub.add_parser("sample", help="draw samples from a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--name", help="output file stem (default: samples)")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("eval", help="metrics against a reference ensemble")
    common(sp)
    sp.add_argument("--samples", help="samples CSV")
    sp.add_argument("--checkpoint", help="checkpoint to sample from instead of --samples")
    sp.add_argument("--n", type=int, default=5000)
    sp.add_argument("--reference", help="reference samples CSV (default: Metropolis oracle)")
    sp.add_argument("--metrics", help="comma-separated subset of jsd,w2,mode_masses,fes,tica")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference check of all losses")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--configs", type=int, default=100, help="random configurations per loss")
    sp.add_argument("--corrupt", choices=gc.LOSSES, help="perturb one loss's gradient (negative control)")
    sp.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
