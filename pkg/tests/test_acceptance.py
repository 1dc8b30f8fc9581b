"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 6 and 7 run full training experiments and are marked ``slow``
(deselect with ``-m "not slow"``).
"""

import os
import shutil
import time

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from conftest import ACCEPTANCE_LINES
from gradcheck import check_instance, random_instance
from prnn.cli import _make_paths, main
from prnn.constitutive import (
    BulkProps,
    BulkState,
    CohesiveState,
    CzmProps,
    czm_update,
    j2_update,
    yield_function,
)
from prnn.loadpaths import GpConfig, gp_covariance, gp_samples
from prnn.network import ARCHITECTURES, LayerSizes, decoder_weights, forward_batch, init_params, softplus
from prnn.oracle import gen_dataset, teacher_build
from prnn.training import TrainConfig, evaluate, train
from test_constitutive import uniaxial_stress_step


def report(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


# --------------------------------------------------------------------------
# 1. cohesive envelope
# --------------------------------------------------------------------------

def test_criterion_1_czm_envelope():
    t0 = time.perf_counter()
    props = CzmProps()
    K, d0, df = props.penalty_stiffness, props.onset_normal, props.final_normal
    # sequential monotonic sweep against the analytic bilinear envelope
    jumps = np.concatenate([np.linspace(0.0, 2 * d0, 1001), np.linspace(2 * d0, 1.2 * df, 4001)[1:]])
    state = CohesiveState.virgin()
    t = np.empty_like(jumps)
    dmg = np.empty_like(jumps)
    for k, j in enumerate(jumps):
        tr, state = czm_update(np.array([j, 0.0]), state, props)
        t[k], dmg[k] = tr[0], state.damage
    envelope = np.where(jumps <= d0, K * jumps, np.maximum(props.normal_strength * (df - jumps) / (df - d0), 0.0))
    env_err = np.max(np.abs(t - envelope)) / props.normal_strength

    def traction(j):
        return czm_update(np.array([j, 0.0]), CohesiveState.virgin(), props)[0][0]

    peak = minimize_scalar(lambda j: -traction(j), bounds=(0.0, 1e-5), method="bounded",
                           options={"xatol": 1e-17})
    peak_jump, peak_t = peak.x, -peak.fun
    lo, hi = d0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if traction(mid) > 0 else (lo, mid)
    zero_jump = hi
    d_final = czm_update(np.array([df, 0.0]), CohesiveState.virgin(), props)[1].damage
    d_ok = bool(np.all(dmg[jumps >= df] == 1.0) and np.all(dmg[jumps < df] < 1.0))
    elapsed = time.perf_counter() - t0
    ok = (abs(peak_t - 60.0) / 60.0 <= 1e-6 and abs(peak_jump - 1.2e-6) / 1.2e-6 <= 1e-6
          and abs(zero_jump - 2 * 0.874 / 60.0) / (2 * 0.874 / 60.0) <= 1e-6
          and abs(zero_jump - 2.913e-2) / 2.913e-2 <= 5e-4   # the quoted value has 4 digits
          and d_final == 1.0 and d_ok and env_err <= 1e-6 and elapsed < 1.0)
    report(1, ok, f"peak {peak_t:.9g} MPa at {peak_jump:.9g} mm, zero traction at {zero_jump:.9g} mm, "
                  f"d={d_final}, envelope err {env_err:.2e}, {elapsed:.2f} s")
    assert ok


# --------------------------------------------------------------------------
# 2. damage monotonicity fuzz
# --------------------------------------------------------------------------

def test_criterion_2_damage_monotonicity():
    rng = np.random.default_rng(2)
    n_seq, n_steps = 1000, 200
    # per-sequence scale from below onset to well past the final jump
    scale = 10.0 ** rng.uniform(-7.5, -2.0, (n_seq, 1))
    incs = rng.normal(0.0, 1.0, (n_steps, n_seq, 2)) * scale
    jumps = np.cumsum(incs, axis=0)
    props = CzmProps()
    state = CohesiveState(np.zeros(n_seq), np.zeros(n_seq))
    violations = 0
    reached = np.zeros(n_seq, dtype=bool)
    for k in range(n_steps):
        _, new = czm_update(jumps[k], state, props)
        violations += int(np.sum(new.damage < state.damage))
        violations += int(np.sum((new.damage < 0) | (new.damage > 1) | ~np.isfinite(new.damage)))
        reached |= new.damage >= 1.0
        state = new
    ok = violations == 0
    report(2, ok, f"{n_seq} sequences x {n_steps} steps, {violations} violations, "
                  f"{np.mean(state.damage > 0):.0%} damaged, {reached.mean():.0%} fully damaged")
    assert ok


# --------------------------------------------------------------------------
# 3. J2 consistency and plateau
# --------------------------------------------------------------------------

def test_criterion_3_j2_consistency():
    rng = np.random.default_rng(3)
    props = BulkProps()
    n_paths, n_steps = 1000, 50
    scale = 10.0 ** rng.uniform(-4.0, -1.5, (n_paths, 1))
    strains = np.cumsum(rng.normal(0.0, 1.0, (n_steps, n_paths, 3)) * scale, axis=0)
    state = BulkState(np.zeros((n_paths, 3)), np.zeros(n_paths))
    worst, plastic = -np.inf, 0
    for k in range(n_steps):
        s, new = j2_update(strains[k], state, props)
        worst = max(worst, float(np.max(yield_function(s, new.equivalent_plastic_strain, props))))
        plastic += int(np.sum(new.equivalent_plastic_strain > state.equivalent_plastic_strain))
        state = new
    pp = BulkProps(youngs_modulus=3130.0, poisson_ratio=0.0, yield_stress=64.8, hardening_modulus=0.0)
    st = BulkState.virgin()
    plateau_err = 0.0
    for exx in np.linspace(0.0, 5 * pp.yield_stress / pp.youngs_modulus, 51)[1:]:
        s, st = uniaxial_stress_step(exx, st, pp)
        exact = min(pp.youngs_modulus * exx, pp.yield_stress)
        plateau_err = max(plateau_err, abs(s[0] - exact) / exact)
    ok = worst <= 1e-8 * props.yield_stress and plateau_err <= 1e-8
    report(3, ok, f"max f = {worst:.2e} MPa over {n_paths} paths ({plastic} plastic steps), "
                  f"plateau rel err {plateau_err:.1e}")
    assert ok


# --------------------------------------------------------------------------
# 4. gradient oracle
# --------------------------------------------------------------------------

def test_criterion_4_gradient_oracle():
    t0 = time.perf_counter()
    worst, excluded = {}, 0
    for arch in ARCHITECTURES:
        errs = []
        for seed in range(20):
            err = check_instance(*random_instance(arch, seed))
            if err is None:
                excluded += 1
            else:
                errs.append(err)
        worst[arch] = max(errs)
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-4 and elapsed < 60.0
    detail = ", ".join(f"{a} {e:.1e}" for a, e in worst.items())
    report(4, ok, f"max rel error {detail}; {excluded} excluded; {elapsed:.0f} s")
    assert ok


# --------------------------------------------------------------------------
# 5. zero map and positivity
# --------------------------------------------------------------------------

def test_criterion_5_zero_map_and_positivity():
    X = np.zeros((2, 7, 3))
    zero_ok = True
    for arch in ARCHITECTURES:
        for mode in ("linear", "leaky") if arch != "prnn1" else ("linear",):
            for seed in range(5):
                p = init_params(arch, LayerSizes(4, 2), seed, mode, scheme="uniform")
                zero_ok &= bool(np.all(forward_batch(X, p) == 0.0))
    raw = np.random.default_rng(5).uniform(-700.0, 700.0, 100_000)
    pos = softplus(raw)
    p = init_params("prnn3", LayerSizes(4, 1), 0)
    p = p.with_weights({"W2": raw[: p.W2.size].reshape(p.W2.shape)})
    ok = zero_ok and bool(np.all(pos > 0)) and bool(np.all(decoder_weights(p) > 0))
    report(5, ok, f"zero path exact: {zero_ok}; min effective weight {pos.min():.3e} over 1e5 raw values")
    assert ok


# --------------------------------------------------------------------------
# 6. teacher-student recovery
# --------------------------------------------------------------------------

def unload_reload_pairs(path_len, windows):
    """Step index pairs (unload, reload) at equal strain for one unload window."""
    (first, length), = windows
    a = first - 1   # zero-based index of the first unload step
    peak = a - 1
    return [(peak + k, peak + 2 * length - k) for k in range(1, length) if peak + 2 * length - k < path_len]


@pytest.mark.slow
def test_criterion_6_teacher_student_recovery():
    t0 = time.perf_counter()
    teacher = teacher_build()
    tr = gen_dataset(gp_samples(GpConfig(rng_seed=1), 192), teacher)
    va = gen_dataset(gp_samples(GpConfig(rng_seed=100_000), 200), teacher)
    te_gp = gen_dataset(gp_samples(GpConfig(rng_seed=200_000), 54), teacher)
    te_prop = gen_dataset(_make_paths("prop-rand", 54, 1, 300_000, {}), teacher)
    std = float(np.concatenate(tr.stresses).std())
    ck, _ = train(tr, va, TrainConfig(), "prnn3", LayerSizes(44, 11))
    nrmse = {}
    for name, ds in (("gp", te_gp), ("proportional", te_prop)):
        rep, _ = evaluate(ck.params, ds.strains, ds.stresses)
        nrmse[name] = rep.rmse / std
    X = np.stack(te_prop.strains)
    pred, rec = forward_batch(X, ck.params, record=True)
    pairs = unload_reload_pairs(X.shape[1], te_prop.entries[0].path.config.get("unload_windows")
                                or ((16, 6),))
    compared, worst = 0, 0.0
    for i in range(len(X)):
        for u, r in pairs:
            assert np.allclose(X[i, u], X[i, r], rtol=1e-12, atol=0.0)
            same = (np.array_equal(rec["bulk_state"][i, u], rec["bulk_state"][i, r])
                    and np.array_equal(rec["cohesive_state"][i, u], rec["cohesive_state"][i, r]))
            if same:
                compared += 1
                worst = max(worst, float(np.max(np.abs(pred[i, u] - pred[i, r])) / np.max(np.abs(pred[i, u]))))
    elapsed = time.perf_counter() - t0
    ok = (max(nrmse.values()) <= 0.05 and compared > 0 and worst <= 1e-6 and elapsed <= 30 * 60)
    report(6, ok, f"normalized test RMSE gp {nrmse['gp']:.2%}, proportional {nrmse['proportional']:.2%} "
                  f"(teacher std {std:.1f} MPa, best epoch {ck.epoch}); unload/reload max rel diff {worst:.1e} "
                  f"over {compared} state-matched pairs; {elapsed / 60:.1f} min on 1 core")
    assert ok


# --------------------------------------------------------------------------
# 7. architecture ordering (informational)
# --------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_7_architecture_ordering_report():
    teacher = teacher_build()
    tr = gen_dataset(gp_samples(GpConfig(rng_seed=1), 16), teacher)
    va = gen_dataset(gp_samples(GpConfig(rng_seed=100_000), 16), teacher)
    med = {}
    for arch in ARCHITECTURES:
        vals = [train(tr, va, TrainConfig(max_epochs=15, rng_seed=s), arch, LayerSizes(4, 1))[0].best_val_mse
                for s in range(10)]
        med[arch] = float(np.median(vals))
    ordered = med["prnn2"] <= med["prnn1"] and med["prnn3"] <= med["prnn1"]
    detail = ", ".join(f"{a} {v:.4g}" for a, v in med.items())
    # informational only: the line records the outcome, the test does not gate on it
    report(7, ordered, f"(informational) median-of-10 validation MSE at 4+1, 16 paths, 15 epochs: {detail}")


# --------------------------------------------------------------------------
# 8. GP sampler statistics
# --------------------------------------------------------------------------

def test_criterion_8_gp_statistics():
    cfg = GpConfig(rng_seed=8)
    steps = np.stack([p.steps for p in gp_samples(cfg, 10_000)])
    var = steps.var(axis=0)
    dev = float(np.max(np.abs(var / cfg.variance - 1.0)))
    k0 = gp_covariance(0, 0, cfg)
    kl = gp_covariance(0, cfg.length_scale, cfg)
    k_err = max(abs(k0 - 1.667e-4), abs(kl - 1.667e-4 * np.exp(-0.5)))
    ok = dev <= 0.05 and k_err <= 1e-12
    report(8, ok, f"max per-step variance deviation {dev:.2%} over 1e4 paths; kernel abs err {k_err:.1e}")
    assert ok


# --------------------------------------------------------------------------
# 9. CLI reproducibility
# --------------------------------------------------------------------------

CLI_RUNS = [
    ["gen-data", "--kind", "gp", "--n", "5", "--steps", "10", "--seed", "3", "--splits", "train=3,val=2",
     "--out", "data"],
    ["gen-data", "--kind", "prop-fund", "--n", "2", "--cycles", "2", "--out", "data/prop.jsonl"],
    ["train", "--train", "data/train.jsonl", "--val", "data/val.jsonl", "--max-epochs", "2", "--out", "run"],
    ["select", "--train", "data/train.jsonl", "--val", "data/val.jsonl", "--coh", "1", "--train-sizes", "2,3",
     "--inits", "2", "--max-epochs", "1", "--out", "select.csv"],
    ["eval", "--checkpoint", "run/checkpoint.json", "--test", "data/val.jsonl", "--test", "data/prop.jsonl",
     "--out", "eval"],
]


def _snapshot(root):
    files = {}
    for dirpath, _, names in os.walk(root):
        for name in names:
            full = os.path.join(dirpath, name)
            data = open(full, "rb").read()
            if name == "train_log.csv":   # wall-clock column is the one allowed difference
                data = b"\n".join(line.rsplit(b",", 1)[0] for line in data.splitlines())
            files[os.path.relpath(full, root)] = data
    return files


def test_criterion_9_cli_reproducibility(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    snaps, codes = [], []
    for _ in range(2):
        codes += [main(argv) for argv in CLI_RUNS]
        snaps.append(_snapshot(tmp_path))
        for entry in os.listdir(tmp_path):
            p = tmp_path / entry
            shutil.rmtree(p) if p.is_dir() else p.unlink()
    differ = sorted(k for k in set(snaps[0]) | set(snaps[1]) if snaps[0].get(k) != snaps[1].get(k))
    ok = all(c == 0 for c in codes) and not differ and len(snaps[0]) >= 12
    report(9, ok, f"{len(CLI_RUNS)} commands re-run, {len(snaps[0])} files compared, "
                  f"{len(differ)} differ{': ' + ', '.join(differ) if differ else ''}")
    assert ok
