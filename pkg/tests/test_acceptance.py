"""Acceptance criteria, one test per criterion.

Each criterion is a function returning ``(passed, detail)``. The tests record a
one-line verdict (shown in the "acceptance criteria" section of the pytest
summary) and then assert. Running this file directly prints the same lines.
"""
from __future__ import annotations

import math
import shutil
import statistics
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, perturbed_pair

from epolab import diffcore as dc
from epolab.cli import main as cli_main
from epolab.config import RunConfig
from epolab.energy import mh_sample, preset, rank_by_energy
from epolab.flowmodel import ModelPair, Schedule, VelocityModel
from epolab.gradcheck import TOL, format_table, run_suite
from epolab.metrics import HistogramSpec, fes_grid, jsd_hist, mode_masses, tica, w2_1d, w2_gauss
from epolab.preference import (CouplingPair, PreferenceConfig, draw_couplings, dpo_bt_from_scores,
                               epo_list_loss, flowdpo_list_loss, flowdpo_pair_loss, listwise_pl_from_scores,
                               mse_values)
from epolab.sampler import GaussianTargetVelocity, SamplerConfig, ode_sample, score_from_velocity, sde_sample
from epolab.sampler import generate_ensemble

NAMES = {
    1: "gradient suite",
    2: "algebraic reductions",
    3: "Jensen bound direction",
    4: "sampler correctness",
    5: "canonical EPO experiment",
    6: "SDE vs ODE ablation",
    7: "epo-list vs epo-pair",
    8: "metric anchors",
    9: "reproducibility",
}


def _record(n: int, result) -> None:
    passed, detail = result
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {n} ({NAMES[n]}): {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


# --- 1 ------------------------------------------------------------------------------------

def criterion_1():
    t0 = time.perf_counter()
    rows = run_suite(configs=100, seed=0)
    elapsed = time.perf_counter() - t0
    print(format_table(rows))
    worst = max(rows, key=lambda r: r.max_rel_error)
    passed = all(r.passed for r in rows) and elapsed < 120.0
    return passed, (f"{len(rows)} losses x 100 configs, worst {worst.loss} rel err {worst.max_rel_error:.2e} "
                    f"(< {TOL:g}), {elapsed:.1f} s (< 120 s)")


# --- 2 ------------------------------------------------------------------------------------

def criterion_2():
    rng = np.random.default_rng(20)
    # (a) at theta_opt = theta_ref every score is zero, so the loss is ln K!
    worst_a = 0.0
    for k in (2, 4, 8):
        for trial in range(5):
            pre = VelocityModel.init(1, hidden=(16,), n_time_features=4, seed=trial)
            mp = ModelPair.from_pretrained(pre, rank=4, seed=trial + 100)
            x = rng.standard_normal((k, 1))
            ranked = rank_by_energy(x, rng.standard_normal(k))
            loss = float(epo_list_loss(ranked, mp, PreferenceConfig(k=k), rng).value)
            worst_a = max(worst_a, abs(loss - math.log(math.factorial(k))))
    # (b) K=2 list loss against the pairwise flow loss on the same generator state
    worst_b = 0.0
    for trial in range(20):
        mp = perturbed_pair(dim=1 + trial % 2, seed=trial)
        x = rng.standard_normal((2, mp.opt.dim))
        ranked = rank_by_energy(x, rng.standard_normal(2))
        cfg = PreferenceConfig(k=2, beta=float(rng.uniform(0.2, 5.0)))
        seed = int(rng.integers(1 << 30))
        a = float(epo_list_loss(ranked, mp, cfg, np.random.default_rng(seed)).value)
        b = float(flowdpo_list_loss(ranked, mp, cfg, np.random.default_rng(seed)).value)
        pairs = draw_couplings(ranked.ranked_samples(), cfg, np.random.default_rng(seed))
        c = float(flowdpo_pair_loss(pairs[0:1], pairs[1:2], mp, cfg.beta).value)
        worst_b = max(worst_b, abs(a - b), abs(a - c))
    # (c) Plackett-Luce with two items is Bradley-Terry
    worst_c = 0.0
    for s1, s2 in rng.uniform(-20, 20, (1000, 2)):
        worst_c = max(worst_c, abs(listwise_pl_from_scores([s1, s2]) - dpo_bt_from_scores(s1, s2)))
    passed = worst_a < 1e-9 and worst_b < 1e-10 and worst_c < 1e-12
    return passed, f"(a) |loss - ln K!| {worst_a:.1e}, (b) |list - pair| {worst_b:.1e}, (c) |PL - BT| {worst_c:.1e}"


# --- 3 ------------------------------------------------------------------------------------

def _pl_grad(scores):
    g = dc.Graph()
    node = g.leaf(np.asarray(scores, dtype=np.float64), name="s")
    return g.backward(listwise_pl_from_scores(node))["s"]


def _list_scores(mp, y1, beta, m, rng, eps=1e-3):
    """Scores of ``m`` independent coupling draws for one ranked list, shape ``(m, K)``."""
    k, d = y1.shape
    t = np.repeat(rng.uniform(eps, 1 - eps, m), k)
    pair = CouplingPair(np.tile(y1, (m, 1)), rng.standard_normal((m * k, d)), t)
    sched = Schedule("linear")
    return (beta * (mse_values(mp.ref, pair, sched) - mse_values(mp.opt, pair, sched))).reshape(m, k)


def criterion_3(trials: int = 1000, draws: int = 64):
    """Expected PL loss of random scores against PL loss of the expected scores.

    The left side averages the loss over ``draws`` coupling draws; the right side
    evaluates the loss at the mean score of an independent set of draws. Each
    trial passes if the gap is above -3 combined standard errors (the right side's
    error comes from the delta method).
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(30)
    gaps, zs = [], []
    for trial in range(trials):
        dim = 1 + trial % 2
        k = int(rng.integers(2, 9))
        mp = perturbed_pair(dim=dim, seed=trial, scale=float(rng.uniform(0.1, 1.0)))
        y1 = rng.standard_normal((k, dim))
        beta = float(rng.uniform(0.5, 5.0))
        a = _list_scores(mp, y1, beta, draws, rng)
        b = _list_scores(mp, y1, beta, draws, rng)
        losses = np.array([listwise_pl_from_scores(row) for row in a])
        lhs, se_l = losses.mean(), losses.std(ddof=1) / math.sqrt(draws)
        mean_b = b.mean(axis=0)
        rhs = listwise_pl_from_scores(mean_b)
        grad = _pl_grad(mean_b)
        se_r = math.sqrt(max(float(grad @ np.cov(b, rowvar=False) @ grad), 0.0) / draws)
        se = math.hypot(se_l, se_r)
        gaps.append(lhs - rhs)
        zs.append((lhs - rhs) / se if se > 0 else math.inf)
    elapsed = time.perf_counter() - t0
    zs = np.array(zs)
    violations = int(np.sum(zs < -3.0))
    passed = violations == 0 and elapsed < 60.0
    return passed, (f"{trials} trials, {violations} below -3 SE, mean gap {np.mean(gaps):.3e}, "
                    f"min z {zs.min():.2f}, {elapsed:.1f} s (< 60 s)")


# --- 4 ------------------------------------------------------------------------------------

def criterion_4():
    t0 = time.perf_counter()
    # (a) score recovered from the exact velocity against the closed-form Gaussian score
    worst_a = 0.0
    x = np.linspace(-4, 4, 41)[:, None]
    for kind in ("linear", "trig"):
        sched = Schedule(kind)
        target = GaussianTargetVelocity([1.5], std=0.7, sched=sched)
        for t in np.linspace(1e-3, 1 - 1e-3, 101):
            s = score_from_velocity(target(x, t), x, t, sched)
            worst_a = max(worst_a, float(np.max(np.abs(s - target.score(x, t)))))
    # (b) terminal moments of the SDE
    mean, std = np.array([1.0, -0.5]), 0.8
    target = GaussianTargetVelocity(mean, std=std)
    worst_mean = worst_var = 0.0
    for w in (0.01, 0.1):
        rng = np.random.default_rng(int(w * 1000))
        cfg = SamplerConfig(steps=200, method="sde", score_norm=w)
        out = sde_sample(target, rng.standard_normal((100_000, 2)), cfg, rng=rng)
        worst_mean = max(worst_mean, float(np.max(np.abs(out.mean(axis=0) - mean))))
        worst_var = max(worst_var, float(np.max(np.abs(out.var(axis=0) - std ** 2))))
    # (c) w=0 takes the Euler path exactly
    x0 = np.random.default_rng(4).standard_normal((5000, 2))
    same = np.array_equal(sde_sample(target, x0, SamplerConfig(steps=200, method="sde", score_norm=0.0)),
                          ode_sample(target, x0, SamplerConfig(steps=200, method="ode-euler")))
    elapsed = time.perf_counter() - t0
    passed = worst_a < 1e-5 and worst_mean < 0.02 and worst_var < 0.03 and same and elapsed < 180.0
    return passed, (f"(a) score err {worst_a:.1e}, (b) mean err {worst_mean:.4f} var err {worst_var:.4f}, "
                    f"(c) w=0 == Euler: {same}, {elapsed:.1f} s")


# --- 5 and 6 --------------------------------------------------------------------------------

def _canonical_outcome(log):
    pre, final = log.evaluations[0], log.evaluations[-1]
    masses = final["mode_masses"]
    reduction = 1.0 - final["jsd"] / pre["jsd"]
    ok = all(abs(m - 0.5) <= 0.1 for m in masses) and reduction >= 0.5
    return ok, pre, final, reduction


def criterion_5():
    from _experiments import canonical_refine
    t0 = time.perf_counter()
    _, log = canonical_refine()
    ok, pre, final, reduction = _canonical_outcome(log)
    ok = ok and final["iteration"] <= 2000
    return ok, (f"masses {np.round(pre['mode_masses'], 3).tolist()} -> {np.round(final['mode_masses'], 3).tolist()} "
                f"(need 0.5 +- 0.1), JSD {pre['jsd']:.4f} -> {final['jsd']:.4f} "
                f"(reduction {100 * reduction:.1f}%, need >= 50%), {final['iteration']} iterations, "
                f"{time.perf_counter() - t0:.0f} s")


def _minority(model, p, cfg, n=20_000, seed=60):
    x = generate_ensemble(model, n, cfg, rng=seed)
    return float(mode_masses(x, p.default_partition())[1])


def criterion_6():
    from _experiments import canonical_config, canonical_pretrained, canonical_refine, left_only_pretrained
    p = canonical_config().potential.build()
    sde = SamplerConfig(steps=50, method="sde", score_norm=0.05)
    ode = SamplerConfig(steps=50, method="ode-heun")
    model = canonical_pretrained()
    sde_min, ode_min = _minority(model, p, sde), _minority(model, p, ode)
    _, ode_log = canonical_refine("ode-euler")
    ode_run_min = ode_log.evaluations[-1]["mode_masses"][1]
    _, sde_log = canonical_refine()
    sde_reaches_5 = _canonical_outcome(sde_log)[0]
    passed = sde_min > 0.01 and ode_min < 0.001 and ode_run_min <= 0.2 and sde_reaches_5
    left = left_only_pretrained()
    diag = f"left-only model: SDE {_minority(left, p, sde):.4f}, ODE {_minority(left, p, ode):.4f}"
    return passed, (f"pretrained minority SDE(w=0.05) {sde_min:.4f} (need > 0.01), ODE {ode_min:.4f} "
                    f"(need < 0.001); ODE-sampled refine minority {ode_run_min:.3f} (need <= 0.2); "
                    f"SDE run meets criterion 5: {sde_reaches_5}; [{diag}]")


# --- 7 ------------------------------------------------------------------------------------

def criterion_7(seeds=(0, 1, 2)):
    from _experiments import canonical_config, tilted_refine
    iterations = canonical_config().refine.iterations
    finals = {m: [tilted_refine(m, s, iterations)[1].evaluations[-1]["jsd"] for s in seeds]
              for m in ("epo-list", "epo-pair")}
    med = {m: statistics.median(v) for m, v in finals.items()}
    passed = med["epo-list"] <= med["epo-pair"]
    fmt = lambda v: "/".join(f"{j:.4f}" for j in v)
    return passed, (f"tilted well, {iterations} iterations, final JSD epo-list {fmt(finals['epo-list'])} "
                    f"(median {med['epo-list']:.4f}) vs epo-pair {fmt(finals['epo-pair'])} "
                    f"(median {med['epo-pair']:.4f})")


# --- 8 ------------------------------------------------------------------------------------

def _ar1(n, rhos, seed):
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((n, len(rhos)))
    x = np.zeros_like(noise)
    for i in range(1, n):
        x[i] = np.asarray(rhos) * x[i - 1] + noise[i]
    return x


def criterion_8():
    rng = np.random.default_rng(80)
    checks = {}
    a = rng.standard_normal((10_000, 1))
    spec = HistogramSpec.uniform(1, -3, 3, 30)
    checks["JSD(a,a)=0"] = jsd_hist(a, a, spec) == 0.0
    disjoint = jsd_hist(rng.uniform(-3, -1, (10_000, 1)), rng.uniform(1, 3, (10_000, 1)), spec)
    checks["disjoint JSD=ln2"] = abs(disjoint - math.log(2)) < 1e-3
    # dyadic samples keep x + 1 exact, so the shifted distance is exactly 1
    x = rng.integers(-4096, 4096, 5000) / 1024.0
    checks["w2_1d shift=1"] = w2_1d(x, x + 1.0) == 1.0
    mu = np.array([0.3, -1.2, 2.0])
    checks["w2_gauss=|mu|"] = abs(w2_gauss(np.zeros(3), np.eye(3), mu, np.eye(3)) - np.linalg.norm(mu)) < 1e-10
    rot = np.array([[math.cos(0.6), -math.sin(0.6)], [math.sin(0.6), math.cos(0.6)]])
    model, _ = tica(_ar1(100_000, (0.99, 0.5), seed=81) @ rot.T, lag=1)
    cosine = abs(float(model.directions()[:, 0] @ rot[:, 0]))
    checks["TICA slow axis"] = cosine > 0.99
    p = preset("double-well")
    samples = mh_sample(p, 1_000_000, step=1.0, seed=82).samples
    fes = fes_grid(samples, HistogramSpec.uniform(1, -3, 3, 100), p.kT)
    centers = fes.centers()[0]
    energy = p.energy(centers[:, None]) / p.kT
    shape = fes.values - fes.values[np.argmin(energy)]
    fes_err = max(abs(shape[i] - (energy[i] - energy.min()))
                  for i in (int(np.argmin(np.abs(centers - w))) for w in (-1.0, 1.0)))
    checks["FES at wells"] = fes_err < 0.2
    failed = [k for k, ok in checks.items() if not ok]
    return not failed, (f"disjoint JSD {disjoint:.6f}, TICA |cos| {cosine:.5f}, FES well error {fes_err:.3f} kT"
                        + (f"; failed: {', '.join(failed)}" if failed else f"; all {len(checks)} anchors hold"))


# --- 9 ------------------------------------------------------------------------------------

def _small_config(path: Path) -> Path:
    cfg = RunConfig()
    cfg.model.hidden = [16]
    cfg.pretrain.dataset.source = "biased"
    cfg.pretrain.dataset.n = 2000
    cfg.pretrain.epochs = 2
    cfg.refine.iterations = 6
    cfg.refine.lists_per_iter = 2
    cfg.refine.lr = 1e-2
    cfg.refine.eval_every = 3
    cfg.refine.eval_samples = 200
    cfg.refine.eval_steps = 10
    cfg.refine.checkpoint_every = 2
    cfg.metrics.reference_n = 20_000
    cfg.sampler.steps = 10
    path.write_text(cfg.to_json())
    return path


def _pipeline(config: Path, out: Path) -> None:
    c = ["--config", str(config)]
    steps = [
        ["pretrain", *c, "--out", str(out / "pretrain")],
        ["refine", *c, "--checkpoint", str(out / "pretrain" / "pretrained.json"), "--out", str(out / "refine")],
        ["sample", *c, "--checkpoint", str(out / "refine" / "final.json"), "--n", "500", "--out", str(out / "sample")],
        ["eval", *c, "--samples", str(out / "sample" / "samples.csv"), "--out", str(out / "eval")],
    ]
    for argv in steps:
        if cli_main(argv) != 0:
            raise RuntimeError(f"command failed: {argv[0]}")


def _snapshot(root: Path) -> dict[str, bytes]:
    # timing.json holds wall-clock seconds and is the one intentionally non-deterministic file
    return {str(f.relative_to(root)): f.read_bytes() for f in sorted(root.rglob("*"))
            if f.is_file() and f.name != "timing.json"}


def criterion_9(tmp: Path):
    """Run the whole command pipeline twice with identical arguments and compare every output byte."""
    config = _small_config(tmp / "config.json")
    out = tmp / "run"
    _pipeline(config, out)
    first = _snapshot(out)
    shutil.rmtree(out)
    _pipeline(config, out)
    second = _snapshot(out)
    differ = sorted(k for k in first.keys() | second.keys() if first.get(k) != second.get(k))
    kinds = sorted({Path(k).suffix for k in first})
    has_checkpoints = any(k.startswith("refine/checkpoints/") for k in first)
    passed = not differ and has_checkpoints
    return passed, (f"{len(first)} files from pretrain/refine/sample/eval compared ({', '.join(kinds)}), "
                    f"{len(differ)} differ" + (f": {differ}" if differ else ""))


# --- tests ----------------------------------------------------------------------------------

def test_criterion_1_gradient_suite():
    _record(1, criterion_1())


def test_criterion_2_algebraic_reductions():
    _record(2, criterion_2())


def test_criterion_3_jensen_direction():
    _record(3, criterion_3())


def test_criterion_4_sampler_correctness():
    _record(4, criterion_4())


@pytest.mark.slow
def test_criterion_5_canonical_experiment():
    _record(5, criterion_5())


@pytest.mark.slow
def test_criterion_6_sde_vs_ode():
    _record(6, criterion_6())


@pytest.mark.slow
def test_criterion_7_list_vs_pair():
    _record(7, criterion_7())


def test_criterion_8_metric_anchors():
    _record(8, criterion_8())


def test_criterion_9_reproducibility(tmp_path):
    _record(9, criterion_9(tmp_path))


if __name__ == "__main__":
    import tempfile

    results = {}
    with tempfile.TemporaryDirectory() as tmp:
        runners = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5, 6: criterion_6,
                   7: criterion_7, 8: criterion_8, 9: lambda: criterion_9(Path(tmp))}
        for n, fn in runners.items():
            results[n] = fn()
    print()
    for n, (passed, detail) in results.items():
        print(f"[{'PASS' if passed else 'FAIL'}] criterion {n} ({NAMES[n]}): {detail}")
    sys.exit(0 if all(p for p, _ in results.values()) else 1)
