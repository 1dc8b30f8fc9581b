"""``prnn`` command line: data generation, training, model selection, evaluation.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
Relative output paths resolve against ``$PRNN_OUTPUT_ROOT`` when it is set.
All files are written atomically and, apart from the ``wall_time_s`` column of
training logs, are bit-identical across re-runs with identical flags.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from . import __version__
from .checkpoint import atomic_write, load_checkpoint, save_checkpoint
from .config import ConfigError, bulk_props, czm_props, gp_config, prop_settings, read_config
from .config import teacher_config, train_config
from .constitutive import ReturnMappingError
from .loadpaths import (
    ProportionalConfig,
    fundamental_directions,
    gp_samples,
    magnitude_series,
    proportional_path,
    random_direction,
)
from .network import ARCHITECTURES, COHESIVE_MODES, INIT_SCHEMES, LayerSizes, forward_batch
from .oracle import CalibrationError, dumps_dataset, gen_dataset, loads_dataset, teacher_build
from .training import (
    ErrorReport,
    GradientError,
    SelectionGrid,
    TrainingDiverged,
    history_csv,
    model_select,
    train,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
OUTPUT_ROOT_ENV = "PRNN_OUTPUT_ROOT"
CYCLES = {0: "monotonic", 1: "one_cycle", 2: "two_cycles"}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _out(path):
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _sha256_file(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _csv(rows, header):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _f(x):
    return repr(float(x))


def _manifest(args, argv, config_hash, datasets=None, checkpoint=None, seeds=None, outputs=None, extra=None):
    m = {
        "command": ["prnn", *argv],
        "subcommand": args.command,
        "config_file": getattr(args, "config", None),
        "config_hash": config_hash,
        "dataset_hashes": datasets or {},
        "checkpoint": checkpoint,
        "seeds": seeds or {},
        "outputs": outputs or {},
        "version": __version__,
    }
    if extra:
        m.update(extra)
    return json.dumps(m, sort_keys=True, indent=1) + "\n"


def _load_dataset(path):
    try:
        with open(path) as fh:
            return loads_dataset(fh.read())
    except FileNotFoundError as exc:
        raise UsageError(f"dataset not found: {path}") from exc
    except (ValueError, KeyError) as exc:
        raise UsageError(f"malformed dataset {path}: {exc}") from exc


def _parse_splits(text, n):
    if not text:
        return None
    splits = []
    for part in text.split(","):
        name, _, count = part.partition("=")
        if not name or not count.isdigit():
            raise UsageError(f"--splits expects name=count[,name=count...], got {text!r}")
        splits.append((name.strip(), int(count)))
    if n is not None and sum(c for _, c in splits) != n:
        raise UsageError("--n must equal the sum of the split counts")
    return splits


# --------------------------------------------------------------------------
# gen-data
# --------------------------------------------------------------------------

def _make_paths(kind, n, cycles, seed, cfg, steps=None):
    if kind == "gp":
        over = {"rng_seed": seed}
        if steps is not None:
            over["n_steps"] = steps
        return gp_samples(gp_config(cfg, **over), n)
    step, n_steps = prop_settings(cfg)
    n_steps = steps or n_steps
    fn = CYCLES[cycles]
    fund = fundamental_directions()
    paths = []
    for k in range(n):
        s = seed + k
        if kind == "prop-fund":
            direction, prov = fund[s % len(fund)], "proportional_fundamental"
        else:
            direction, prov = random_direction(s), "proportional_random"
        pc = ProportionalConfig(tuple(float(v) for v in direction), step, fn, n_steps)
        paths.append(proportional_path(pc, prov, s))
    return paths


def cmd_gen_data(args, argv):
    cfg, cfg_hash = read_config(args.config)
    if args.n < 0:
        raise UsageError("--n must be >= 0")
    if args.kind == "gp" and args.cycles:
        raise UsageError("--cycles applies to proportional kinds only")
    splits = _parse_splits(args.splits, args.n) or [(None, args.n)]
    teacher = teacher_build(teacher_config(cfg))
    out = _out(args.out)
    hashes, seeds, outputs = {}, {}, {}
    offset = 0
    for name, count in splits:
        paths = _make_paths(args.kind, count, args.cycles, args.seed + offset, cfg, args.steps)
        ds = gen_dataset(paths, teacher, start_id=offset)
        target = out if name is None else os.path.join(out, f"{name}.jsonl")
        atomic_write(target, dumps_dataset(ds))
        key = name or "data"
        hashes[key] = _sha256_file(target)
        seeds[key] = [args.seed + offset, args.seed + offset + count - 1] if count else []
        outputs[key] = target
        offset += count
    manifest_path = (out + ".manifest.json") if splits[0][0] is None else os.path.join(out, "manifest.json")
    atomic_write(manifest_path, _manifest(
        args, argv, cfg_hash, hashes, None, seeds, outputs,
        {"teacher_hash": teacher.hash(), "kind": args.kind, "cycles": args.cycles},
    ))
    return EXIT_OK


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------

def _train_config(args, cfg):
    return train_config(cfg, rng_seed=args.seed, max_epochs=args.max_epochs, learning_rate=args.lr,
                        batch_size=args.batch_size, patience=args.patience, init_scheme=args.init)


def cmd_train(args, argv):
    cfg, cfg_hash = read_config(args.config)
    tr, va = _load_dataset(args.train), _load_dataset(args.val)
    if args.n_train is not None:
        if args.n_train > len(tr):
            raise UsageError(f"--n-train {args.n_train} exceeds the {len(tr)} training paths")
        tr = tr.subset(args.n_train)
    tc = _train_config(args, cfg)
    out = _out(args.out)
    ck_path = os.path.join(out, "checkpoint.json")
    log_path = os.path.join(out, "train_log.csv")
    try:
        sizes = LayerSizes(args.bulk, args.coh)
        ck, history = train(tr, va, tc, args.arch, sizes, cohesive_mode=args.cohesive_mode,
                            bulk_props=bulk_props(cfg), czm_props=czm_props(cfg))
        status = EXIT_OK
    except TrainingDiverged as exc:
        ck, history, status = exc.checkpoint, [], EXIT_NUMERIC
        print(f"prnn train: {exc}; last good checkpoint kept", file=sys.stderr)
    save_checkpoint(ck, ck_path)
    if history:
        atomic_write(log_path, history_csv(history))
    atomic_write(os.path.join(out, "manifest.json"), _manifest(
        args, argv, cfg_hash,
        {"train": _sha256_file(args.train), "val": _sha256_file(args.val)},
        ck_path, {"init": tc.rng_seed, "shuffle": tc.rng_seed},
        {"checkpoint": ck_path, "log": log_path},
        {"train_config": asdict(tc), "best_epoch": ck.epoch, "best_val_mse": ck.best_val_mse},
    ))
    return status


# --------------------------------------------------------------------------
# select
# --------------------------------------------------------------------------

def _int_list(text, flag):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"{flag} expects comma-separated integers") from exc
    if not vals:
        raise UsageError(f"{flag} is empty")
    return vals


def cmd_select(args, argv):
    cfg, cfg_hash = read_config(args.config)
    tr, va = _load_dataset(args.train), _load_dataset(args.val)
    if args.inits < 1:
        raise UsageError("--inits must be >= 1")
    default = SelectionGrid.default(args.inits)
    if args.coh:
        sizes = tuple(LayerSizes.with_ratio(c, args.ratio) for c in _int_list(args.coh, "--coh"))
    else:
        sizes = default.layer_sizes
    ntr = tuple(_int_list(args.train_sizes, "--train-sizes")) if args.train_sizes else default.training_sizes
    grid = SelectionGrid(sizes, ntr, args.inits)
    tc = _train_config(args, cfg)
    try:
        res = model_select(grid, tr, va, args.arch, tc, args.cohesive_mode, args.workers)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = _out(args.out)
    atomic_write(out, res.table_csv())
    nb, nc, n = res.selected
    atomic_write(out + ".manifest.json", _manifest(
        args, argv, cfg_hash,
        {"train": _sha256_file(args.train), "val": _sha256_file(args.val)},
        None, {"inits": [tc.rng_seed + k for k in range(args.inits)]}, {"table": out},
        {"selected": {"n_bulk": nb, "n_cohesive": nc, "training_size": n, "val_mse": res.cells[res.selected]},
         "train_config": asdict(tc)},
    ))
    print(f"selected n_bulk={nb} n_cohesive={nc} training_size={n} val_mse={res.cells[res.selected]:.6g}")
    return EXIT_OK


# --------------------------------------------------------------------------
# eval
# --------------------------------------------------------------------------

def _lstsq_slope(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    den = float(xc @ xc)
    return float(xc @ (y - y.mean()) / den) if den > 0 else float("nan")


def cycle_slopes(path, stress):
    """Load, unload and reload slopes of the stress projected on the loading direction.

    Each unload window ``(first, length)`` is fitted by least squares on the
    peak step plus the window steps; the reload branch uses the window's last
    step plus the next ``length`` steps; the initial slope uses the origin and
    the steps before the first window (at most five).
    """
    cfg = path.config
    windows = cfg.get("unload_windows") or None
    n = len(path)
    mag = magnitude_series(cfg["magnitude_fn"], n, cfg["step"], windows)
    if windows is None:
        from .loadpaths import default_unload_windows

        windows = default_unload_windows(cfg["magnitude_fn"], n)
    proj = np.asarray(stress) @ np.asarray(cfg["direction"], dtype=float)
    m = np.concatenate([[0.0], mag])
    s = np.concatenate([[0.0], proj])   # index i = step i, step 0 = origin
    rows = []
    first0 = windows[0][0]
    k0 = min(first0 - 1, 5)
    load = _lstsq_slope(m[:k0 + 1], s[:k0 + 1]) if k0 >= 1 else float("nan")
    for w, (first, length) in enumerate(windows):
        a = first - 1
        unload = _lstsq_slope(m[a:a + length + 1], s[a:a + length + 1])
        b = a + length
        c = min(b + length, n)
        reload = _lstsq_slope(m[b:c + 1], s[b:c + 1]) if c > b else float("nan")
        rows.append((w + 1, first, length, load, unload, reload))
    return rows


def cmd_eval(args, argv):
    try:
        ck = load_checkpoint(args.checkpoint)
    except FileNotFoundError as exc:
        raise UsageError(f"checkpoint not found: {args.checkpoint}") from exc
    except (ValueError, KeyError) as exc:
        raise UsageError(f"malformed checkpoint: {exc}") from exc
    params = ck.params
    out = _out(args.out)
    names = args.name or [os.path.splitext(os.path.basename(t))[0] for t in args.test]
    if len(names) != len(args.test) or len(set(names)) != len(names):
        raise UsageError("--name must be given once per --test and be unique")
    err_rows, pred_rows, sum_rows, slope_rows = [], [], [], []
    hashes = {}
    for name, tpath in zip(names, args.test):
        ds = _load_dataset(tpath)
        hashes[name] = _sha256_file(tpath)
        preds = []
        by_len = {}
        for k, e in enumerate(ds.entries):
            by_len.setdefault(len(e.path), []).append(k)
        out_pred = {}
        for n, idx in by_len.items():
            y = forward_batch(np.stack([ds.entries[k].path.steps for k in idx]), params)
            for j, k in enumerate(idx):
                out_pred[k] = y[j]
        preds = [out_pred[k] for k in range(len(ds.entries))]
        targets = ds.stresses
        rep = ErrorReport.from_predictions(preds, targets) if len(ds) else None
        for k, e in enumerate(ds.entries):
            r = preds[k] - targets[k]
            mse_c = np.mean(r * r, axis=0) if len(r) else np.full(3, np.nan)
            mse = float(np.mean(mse_c))
            err_rows.append([name, e.id, _f(mse), _f(np.sqrt(mse)), *map(_f, mse_c)])
            for t in range(len(e.path)):
                pred_rows.append([name, e.id, t + 1, *map(_f, e.path.steps[t]), *map(_f, targets[k][t]),
                                  *map(_f, preds[k][t])])
            if e.path.provenance != "gp" and e.path.config.get("magnitude_fn", "monotonic") != "monotonic":
                for src, series in (("target", targets[k]), ("prediction", preds[k])):
                    for w, first, length, load, unload, reload in cycle_slopes(e.path, series):
                        slope_rows.append([name, e.id, src, w, first, length, _f(load), _f(unload), _f(reload)])
        if rep is not None:
            std = float(np.concatenate(targets).std())
            nrmse = rep.rmse / std if std > 0 else float("nan")
            sum_rows.append([name, len(ds), _f(rep.mse), _f(rep.rmse), _f(std), _f(nrmse)])
            print(f"{name}: paths={len(ds)} mse={rep.mse:.6g} rmse={rep.rmse:.6g} normalized_rmse={nrmse:.4%}")
        else:
            sum_rows.append([name, 0, "nan", "nan", "nan", "nan"])
    outputs = {
        "errors": os.path.join(out, "errors.csv"),
        "predictions": os.path.join(out, "predictions.csv"),
        "summary": os.path.join(out, "summary.csv"),
    }
    atomic_write(outputs["errors"], _csv(err_rows, ["dataset", "path_id", "mse", "rmse", "mse_xx", "mse_yy",
                                                     "mse_xy"]))
    atomic_write(outputs["predictions"], _csv(pred_rows, [
        "dataset", "path_id", "step", "eps_xx", "eps_yy", "gamma_xy",
        "target_xx", "target_yy", "target_xy", "pred_xx", "pred_yy", "pred_xy"]))
    atomic_write(outputs["summary"], _csv(sum_rows, ["dataset", "n_paths", "mse", "rmse", "target_std",
                                                      "normalized_rmse"]))
    if slope_rows:
        outputs["slopes"] = os.path.join(out, "slopes.csv")
        atomic_write(outputs["slopes"], _csv(slope_rows, [
            "dataset", "path_id", "source", "window", "first_step", "length",
            "load_slope", "unload_slope", "reload_slope"]))
    atomic_write(os.path.join(out, "manifest.json"), _manifest(
        args, argv, "", hashes, args.checkpoint, {"checkpoint_rng_seed": ck.rng_seed}, outputs,
        {"checkpoint_hash": _sha256_file(args.checkpoint)},
    ))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _add_train_flags(p):
    p.add_argument("--train", required=True, help="training dataset (JSON lines)")
    p.add_argument("--val", required=True, help="validation dataset (JSON lines)")
    p.add_argument("--arch", choices=ARCHITECTURES, default="prnn3")
    p.add_argument("--cohesive-mode", choices=COHESIVE_MODES, default="linear")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--init", choices=INIT_SCHEMES)
    p.add_argument("--config", help="key = value configuration file")


def build_parser():
    ap = argparse.ArgumentParser(prog="prnn", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"prnn {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate teacher datasets")
    g.add_argument("--kind", choices=("gp", "prop-fund", "prop-rand"), required=True)
    g.add_argument("--n", type=int, required=True, help="number of paths (sum over splits)")
    g.add_argument("--cycles", type=int, choices=(0, 1, 2), default=0)
    g.add_argument("--seed", type=int, default=0, help="path k uses seed + k")
    g.add_argument("--steps", type=int, help="override the path length")
    g.add_argument("--splits", help="name=count list, e.g. train=192,val=200; --out is then a directory")
    g.add_argument("--out", required=True)
    g.add_argument("--config", help="key = value configuration file")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one network")
    _add_train_flags(t)
    t.add_argument("--bulk", type=int, default=4)
    t.add_argument("--coh", type=int, default=1)
    t.add_argument("--n-train", type=int, help="use only the first N training paths")
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("select", help="grid search over layer and training sizes")
    _add_train_flags(s)
    s.add_argument("--coh", help="comma-separated cohesive counts (default 1,2,4,7,11,20)")
    s.add_argument("--ratio", type=int, default=4, help="bulk points per cohesive point")
    s.add_argument("--train-sizes", help="comma-separated training sizes (default 32,...,192)")
    s.add_argument("--inits", type=int, default=10)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True, help="selection table CSV")
    s.set_defaults(func=cmd_select)

    e = sub.add_parser("eval", help="evaluate a checkpoint on test sets")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--test", action="append", required=True, help="test dataset; repeatable")
    e.add_argument("--name", action="append", help="label per --test (default: file stem)")
    e.add_argument("--out", required=True, help="output directory")
    e.set_defaults(func=cmd_eval)
    return ap


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, argv)
    except (UsageError, ConfigError, CalibrationError, OSError) as exc:
        print(f"prnn {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, GradientError, ReturnMappingError, FloatingPointError) as exc:
        print(f"prnn {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"prnn {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
