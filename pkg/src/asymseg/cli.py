"""Command-line front end: ``asymseg {gen-data,train,predict,evaluate,sweep-beta}``.

Experiment parameters live in one JSON document (``--config``): a seed plus
data, train, fusion, metrics and sweep sections.  Flags only pick paths and
modes.  Every run writes the fully
resolved config next to its outputs.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import _kernels
from .losses import LossSpec
from .metrics import confusion, evaluate, pr_curve, voxel_metrics
from .model import TrainConfig, load_checkpoint, predict_volume, save_checkpoint, train, write_log
from .synth import PRESETS, SynthSpec, generate_dataset, preset
from .volume import (
    load_mask,
    load_probability,
    load_volume,
    read_header,
    save_mask,
    save_probability,
    save_volume,
    threshold,
)

SWEEP_COLUMNS = ("beta", "dsc", "sensitivity", "specificity", "f2", "apr")
FUSION_MODES = ("tiling", "uniform", "spline")

DEFAULT_CONFIG = {
    "seed": 7,
    "data": {
        "preset": "medium",
        "dims": [48, 48, 48],
        "channels": 2,
        "intensity_shift": [1.0, 0.6],
        "noise_sigma": 0.8,
        "n_images": 3,
        "holdout": 1,
    },
    "train": {
        "loss": {"kind": "f_beta", "beta": 1.5, "alpha": 0.25, "gamma": 2.0},
        "learning_rate": 0.02,
        "lr_decay": 0.7,
        "lr_interval": 100,
        "lr_growth_every": 16000,
        "lr_growth": 2,
        "steps": 1000,
        "patch_size": 32,
        "overlap": 0.5,
        "quota": 4,
        "min_lesion_voxels": 10,
    },
    "fusion": {"mode": "spline", "patch_size": 32, "overlap": 0.5},
    "metrics": {"threshold": 0.5, "n_thresholds": 100, "spacing": None},
    "sweep": {"betas": [1.0, 1.5, 3.0]},
}

# keys a data section may carry on top of the preset fields
_DATA_EXTRA = {"preset", "n_images", "holdout"}
_SYNTH_FIELDS = {f.name for f in dataclasses.fields(SynthSpec)} - {"rng_seed"}


class CLIError(Exception):
    """Reported on stderr with exit status 1."""


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------

def _merge(base, override, where="config"):
    out = dict(base)
    for key, val in override.items():
        if key not in base:
            raise CLIError(f"{where}: unknown key {key!r} (allowed: {', '.join(sorted(base))})")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise CLIError(f"{where}.{key}: expected an object")
            out[key] = _merge(base[key], val, f"{where}.{key}")
        else:
            out[key] = val
    return out


def resolve_config(path=None, seed=None):
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except OSError as exc:
            raise CLIError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise CLIError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(user, dict):
            raise CLIError(f"{path}: top level must be an object")
        cfg = _merge(cfg, user)
    if seed is not None:
        cfg["seed"] = int(seed)
    if cfg["data"]["preset"] not in PRESETS:
        raise CLIError(f"unknown preset {cfg['data']['preset']!r}; valid presets: {', '.join(PRESETS)}")
    return cfg


def synth_spec(cfg):
    data = cfg["data"]
    fields = {k: (tuple(v) if isinstance(v, list) else v)
              for k, v in data.items() if k not in _DATA_EXTRA}
    unknown = set(fields) - _SYNTH_FIELDS
    if unknown:
        raise CLIError(f"config.data: unknown keys {sorted(unknown)}")
    return preset(data["preset"], rng_seed=cfg["seed"], **fields)


def train_config(cfg, beta=None):
    t = dict(cfg["train"])
    loss = dict(t.pop("loss"))
    if beta is not None:
        loss.update(kind="f_beta", beta=float(beta))
    return TrainConfig(loss=LossSpec(**loss), rng_seed=cfg["seed"], **t)


def _write_config(cfg, path):
    Path(path).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# data directories
# ---------------------------------------------------------------------------

def _case_dirs(data_dir):
    root = Path(data_dir)
    if not root.is_dir():
        raise CLIError(f"data directory not found: {root}")
    cases = sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("case_"))
    if not cases:
        raise CLIError(f"no case_* directories in {root}")
    return cases


def load_cases(data_dir):
    out = []
    for case in _case_dirs(data_dir):
        vpath, mpath = case / "volume.rvol", case / "mask.rvol"
        for p in (vpath, mpath):
            if not p.is_file():
                raise CLIError(f"missing file: {p}")
        v = load_volume(vpath)
        m, _ = load_mask(mpath)
        if v.dims != m.dims:
            raise CLIError(f"{case}: volume dims {v.dims} differ from mask dims {m.dims}")
        out.append((v, m))
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(cfg, args):
    spec = synth_spec(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, (v, m) in enumerate(generate_dataset(spec, int(cfg["data"]["n_images"]))):
        case = out / f"case_{i:03d}"
        case.mkdir(exist_ok=True)
        save_volume(v, case / "volume.rvol")
        save_mask(m, case / "mask.rvol", v.spacing)
        k = int(m.data.sum())
        print(f"{case.name}: {k} lesion voxels, fraction {k / m.data.size:.6f} "
              f"(target {spec.lesion_fraction:.6f})")
    _write_config(cfg, out / "resolved_config.json")


def cmd_train(cfg, args):
    tcfg = train_config(cfg)
    cases = load_cases(args.data_dir)
    log = []
    model = train(cases, tcfg, log=log)
    out = Path(args.model_out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out)
    write_log(log, out.with_name(out.name + ".log.csv"))
    _write_config(cfg, out.with_name(out.name + ".config.json"))
    if log:
        print(f"loss {log[0].loss:.6f} -> {log[-1].loss:.6f} over {len(log)} steps")


def _fusion_args(cfg, mode):
    f = cfg["fusion"]
    mode = mode or f["mode"]
    if mode not in FUSION_MODES:
        raise CLIError(f"unknown fusion mode {mode!r}; expected one of {', '.join(FUSION_MODES)}")
    return int(f["patch_size"]), float(f["overlap"]), mode


def cmd_predict(cfg, args):
    size, overlap, mode = _fusion_args(cfg, args.fusion)
    for p in (args.model, args.volume):
        if not Path(p).is_file():
            raise CLIError(f"missing file: {p}")
    model = load_checkpoint(args.model)
    v = load_volume(args.volume)
    if v.channels != model.channels:
        raise CLIError(f"model expects {model.channels} channels, {args.volume} has {v.channels}")
    prob = predict_volume(model, v, size, overlap, mode)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_probability(prob, out / "probability.rvol", v.spacing)
    save_mask(threshold(prob, cfg["metrics"]["threshold"]), out / "mask.rvol", v.spacing)
    resolved = dict(cfg, fusion=dict(cfg["fusion"], mode=mode))
    _write_config(resolved, out / "resolved_config.json")


def cmd_evaluate(cfg, args):
    for p in (args.prediction, args.ground_truth):
        if not Path(p).is_file():
            raise CLIError(f"missing file: {p}")
    g, g_spacing = load_mask(args.ground_truth)
    prob = None
    if read_header(args.prediction)["dtype"] == "f32le":
        prob, _ = load_probability(args.prediction)
        pred = threshold(prob, cfg["metrics"]["threshold"])
    else:
        pred, _ = load_mask(args.prediction)
    if pred.dims != g.dims:
        raise CLIError(f"dimension mismatch: prediction {pred.dims} vs ground truth {g.dims}")
    spacing = args.spacing or cfg["metrics"]["spacing"] or g_spacing
    report = evaluate(pred, g, tuple(spacing), prob=prob, n_thresholds=cfg["metrics"]["n_thresholds"])
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(report.to_json() + "\n")
    (out / "metrics.csv").write_text(report.to_csv())
    if prob is not None and report.pr_curve:
        (out / "pr_curve.csv").write_text(report.pr_curve_csv())
    resolved = dict(cfg, metrics=dict(cfg["metrics"], spacing=[float(s) for s in spacing]))
    _write_config(resolved, out / "resolved_config.json")
    print(report.to_json())


def sweep_row(beta, pairs, n_thresholds):
    """Pooled metrics over held-out ``(probability, truth)`` pairs."""
    probs = np.concatenate([p.ravel() for p, _ in pairs])
    truth = np.concatenate([g.ravel() for _, g in pairs]).astype(bool)
    vm = voxel_metrics(confusion(probs >= 0.5, truth))
    _, apr = pr_curve(probs, truth, n_thresholds)
    return {"beta": beta, "dsc": vm["dsc"], "sensitivity": vm["tpr"],
            "specificity": vm["specificity"], "f2": vm["f2"], "apr": apr}


def cmd_sweep_beta(cfg, args):
    betas = args.betas if args.betas is not None else cfg["sweep"]["betas"]
    betas = [float(b) for b in betas]
    if len(betas) < 2:
        raise CLIError("sweep-beta needs at least two beta values")
    cases = load_cases(args.data_dir)
    holdout = int(cfg["data"]["holdout"])
    if not 1 <= holdout < len(cases):
        raise CLIError(f"holdout {holdout} leaves no training or test cases among {len(cases)}")
    train_set, test_set = cases[:-holdout], cases[-holdout:]
    size, overlap, _ = _fusion_args(cfg, "spline")
    rows = []
    for beta in betas:
        model = train(train_set, train_config(cfg, beta))
        pairs = [(predict_volume(model, v, size, overlap, "spline").data, m.data) for v, m in test_set]
        rows.append(sweep_row(beta, pairs, cfg["metrics"]["n_thresholds"]))
        print(", ".join(f"{k}={'null' if rows[-1][k] is None else f'{rows[-1][k]:.4f}'}"
                        for k in SWEEP_COLUMNS))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow(["" if r[k] is None else repr(r[k]) for k in SWEEP_COLUMNS])
    resolved = dict(cfg, sweep={"betas": betas}, fusion=dict(cfg["fusion"], mode="spline"))
    _write_config(resolved, out / "resolved_config.json")


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="asymseg", description="Synthetic data, training, fused prediction and evaluation.")
    parser.add_argument("--config", help="JSON experiment config (defaults are used for absent keys)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--threads", type=int, help="cap worker threads for compiled kernels")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write synthetic case_NNN/{volume,mask}.rvol")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on every case in a data directory")
    p.add_argument("data_dir")
    p.add_argument("model_out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="fused probability map and 0.5-thresholded mask")
    p.add_argument("model")
    p.add_argument("volume")
    p.add_argument("out_dir")
    p.add_argument("--fusion", choices=FUSION_MODES, help="default: config fusion.mode")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="metric report for a mask or probability map")
    p.add_argument("prediction")
    p.add_argument("ground_truth")
    p.add_argument("out_dir")
    p.add_argument("--spacing", type=float, nargs=3, metavar=("SX", "SY", "SZ"),
                   help="voxel size in mm; default: ground-truth header")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-beta", help="train one model per beta and compare on held-out cases")
    p.add_argument("data_dir")
    p.add_argument("out_dir")
    p.add_argument("--betas", type=float, nargs="+")
    p.set_defaults(func=cmd_sweep_beta)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args.config, args.seed)
        if args.threads:
            _kernels.set_threads(args.threads)
        args.func(cfg, args)
    # file-format, selection and synthesis errors all derive from ValueError
    except (CLIError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
