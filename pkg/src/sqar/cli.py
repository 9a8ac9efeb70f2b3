"""Command-line front end: train / attack / detect / aip / quantize-demo.

Experiments are described by a strict JSON config (unknown keys are errors,
so a typo like "bata" fails fast instead of silently training with defaults).
Every subcommand writes a JSON summary plus CSV tables into the output
directory; the aip subcommand also emits a small dependency-free SVG scatter
of accuracy against mutual information.
"""

import argparse
import csv
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import detector as det
from .attacks import AttackConfig, attack_batch, evaluate_robustness, write_report_csv
from .data import Dataset, load_mnist, synth_blobs, synth_digits
from .ensemble import build_model, ensemble_eval
from .quant import make_bin_grid, sq_pmf
from .training import TrainConfig, load_checkpoint, save_checkpoint, train


class ConfigError(ValueError):
    """Experiment configuration is invalid."""


@dataclass
class ExperimentConfig:
    dataset: dict
    arch: list
    train: TrainConfig
    attacks: list                       # [AttackConfig, ...]
    out_dir: str = "out"
    seed: int = 0
    quantize_input: bool = True
    quantize_features: bool = True


_DATASET_KEYS = {
    "mnist": {"kind", "images", "labels"},
    "blobs": {"kind", "n_per_class", "classes", "dim", "separation", "seed"},
    "digits": {"kind", "n", "seed", "noise"},
}


def _check_keys(given, allowed, where):
    unknown = set(given) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


def _build_dataclass(cls, raw, where):
    fields = {f.name for f in dataclasses.fields(cls)}
    _check_keys(raw, fields, where)
    try:
        return cls(**raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad {where} config: {e}") from None


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a raw JSON object into an ExperimentConfig."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(raw, {f.name for f in dataclasses.fields(ExperimentConfig)},
                "top-level")
    for key in ("dataset", "arch"):
        if key not in raw:
            raise ConfigError(f"missing required key {key!r}")
    ds = raw["dataset"]
    if not isinstance(ds, dict) or ds.get("kind") not in _DATASET_KEYS:
        raise ConfigError(
            f"dataset.kind must be one of {sorted(_DATASET_KEYS)}")
    _check_keys(ds, _DATASET_KEYS[ds["kind"]], f"dataset[{ds['kind']}]")
    arch = raw["arch"]
    if (not isinstance(arch, list) or len(arch) < 2
            or any(not isinstance(a, int) or a < 1 for a in arch)):
        raise ConfigError("arch must be a list of >= 2 positive ints")
    tc = _build_dataclass(TrainConfig, raw.get("train", {}), "train")
    attacks = [_build_dataclass(AttackConfig, a, f"attacks[{i}]")
               for i, a in enumerate(raw.get("attacks", []))]
    return ExperimentConfig(dataset=ds, arch=arch, train=tc, attacks=attacks,
                            out_dir=raw.get("out_dir", "out"),
                            seed=raw.get("seed", 0),
                            quantize_input=raw.get("quantize_input", True),
                            quantize_features=raw.get("quantize_features", True))


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as f:
            raw = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    except ValueError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    return parse_config(raw)


def load_dataset(spec: dict) -> Dataset:
    kind = spec["kind"]
    if kind == "mnist":
        return load_mnist(spec["images"], spec["labels"])
    if kind == "blobs":
        return synth_blobs(spec["n_per_class"], spec["classes"], spec["dim"],
                           spec["separation"], spec.get("seed", 0))
    return synth_digits(spec["n"], spec.get("seed", 0),
                        noise=spec.get("noise", 0.08))


def model_from_config(cfg: ExperimentConfig):
    tc = cfg.train
    return build_model(
        cfg.arch,
        sq_input=tc.sq_params() if cfg.quantize_input else None,
        sq_feature=tc.sq_params() if cfg.quantize_features else None,
        n_members=tc.n_members, seed=cfg.seed)


# -- AIP -----------------------------------------------------------------

@dataclass
class AipRow:
    attack: str
    strength_index: int        # contiguous from 1
    epsilon: float
    accuracy: float
    mean_mi: float
    clean_mi: float


def run_aip(model, dataset, attack_grid, n_members=None, eval_seed=10_000):
    """One row per attack strength; epsilon=0 rows reuse the clean numbers."""
    X, y = np.asarray(dataset[0], dtype=np.float64), np.asarray(dataset[1])
    clean = ensemble_eval(model, X, y, n_members=n_members,
                          rng=np.random.default_rng(eval_seed), collect_mi=True)
    clean_mi = float(np.mean(clean["mi"])) if "mi" in clean else 0.0
    rows = []
    for i, cfg in enumerate(attack_grid):
        if cfg.epsilon == 0:
            acc, mi = clean["accuracy"], clean_mi
        else:
            adv = attack_batch(model, X, y, cfg)
            res = ensemble_eval(model, adv, y, n_members=n_members,
                                rng=np.random.default_rng((eval_seed, cfg.seed)),
                                collect_mi=True)
            acc = res["accuracy"]
            mi = float(np.mean(res["mi"])) if "mi" in res else 0.0
        rows.append(AipRow(attack=cfg.kind, strength_index=i + 1,
                           epsilon=cfg.epsilon, accuracy=acc, mean_mi=mi,
                           clean_mi=clean_mi))
    return rows


def write_aip_csv(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["attack", "strength_index", "epsilon", "accuracy",
                    "mean_mi", "clean_mi"])
        for r in rows:
            w.writerow([r.attack, r.strength_index, repr(r.epsilon),
                        repr(r.accuracy), repr(r.mean_mi), repr(r.clean_mi)])


def write_aip_svg(rows, path, width=480, height=360):
    """Minimal scatter + polyline of accuracy (y) vs mean MI (x)."""
    pad = 48
    xs = [r.mean_mi for r in rows]
    ys = [r.accuracy for r in rows]
    x0, x1 = min(xs), max(xs)
    if x1 - x0 < 1e-12:
        x0, x1 = x0 - 0.5, x1 + 0.5
    def px(v):
        return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)
    def py(v):
        return height - pad - v * (height - 2 * pad)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" font-family="monospace" font-size="11">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{pad}" y1="{height-pad}" x2="{width-pad}" '
             f'y2="{height-pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height-pad}" '
             f'stroke="black"/>',
             f'<text x="{width//2}" y="{height-12}">mean MI (nats)</text>',
             f'<text x="12" y="{pad-10}">accuracy</text>']
    pts = " ".join(f"{px(r.mean_mi):.1f},{py(r.accuracy):.1f}" for r in rows)
    parts.append(f'<polyline points="{pts}" fill="none" stroke="steelblue"/>')
    for r in rows:
        cx, cy = px(r.mean_mi), py(r.accuracy)
        parts.append(f'<circle cx="{cx:.1f}" cy="{cy:.1f}" r="3" '
                     f'fill="crimson"/>')
        label = f"{r.attack} eps={r.epsilon:g}"
        parts.append(f'<text x="{cx+5:.1f}" y="{cy-5:.1f}">{label}</text>')
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts))


# -- subcommands ---------------------------------------------------------

def _write_json(obj, path):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    tr = cfg.train
    updates = {}
    for flag, name in (("alpha", "alpha"), ("beta", "beta"), ("mu", "mu"),
                       ("bins", "n_bins"), ("members", "n_members")):
        v = getattr(args, flag, None)
        if v is not None:
            updates[name] = v
    if updates:
        tr = dataclasses.replace(tr, **updates)
    if getattr(args, "seed", None) is not None:
        tr = dataclasses.replace(tr, seed=args.seed)
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "out", None) is not None:
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    return dataclasses.replace(cfg, train=tr)


def _prepare(args):
    cfg = _apply_overrides(load_config(args.config), args)
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg


def cmd_train(args):
    cfg = _prepare(args)
    data = load_dataset(cfg.dataset)
    model = model_from_config(cfg)
    model, history = train(model, (data.flat, data.labels), cfg.train,
                           verbose=not args.quiet)
    ckpt = os.path.join(cfg.out_dir, "model.ckpt")
    save_checkpoint(model, ckpt, config=cfg.train, history=history)
    with open(os.path.join(cfg.out_dir, "history.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "total", "l_class", "mi", "bin_spacing",
                    "clean_accuracy"])
        for rec in history:
            w.writerow([rec["epoch"], repr(rec["total"]), repr(rec["l_class"]),
                        repr(rec["mi"]), repr(rec["bin_spacing"]),
                        repr(rec["clean_accuracy"])])
    summary = {"checkpoint": ckpt, "epochs": len(history),
               "final": history[-1] if history else None}
    _write_json(summary, os.path.join(cfg.out_dir, "train_summary.json"))
    if not args.quiet:
        print(f"wrote {ckpt}")
    return 0


def _load_model_for(args, cfg):
    if args.checkpoint:
        model, _, _ = load_checkpoint(args.checkpoint)
        return model
    raise ConfigError("this subcommand needs --checkpoint from a train run")


def cmd_attack(args):
    cfg = _prepare(args)
    data = load_dataset(cfg.dataset)
    model = _load_model_for(args, cfg)
    n = min(len(data), args.limit) if args.limit else len(data)
    report = evaluate_robustness(model, (data.flat[:n], data.labels[:n]),
                                 cfg.attacks)
    path = os.path.join(cfg.out_dir, "attacks.csv")
    write_report_csv(report, path)
    _write_json({"clean_accuracy": report.clean_accuracy,
                 "clean_mean_mi": report.clean_mean_mi,
                 "rows": report.rows, "csv": path},
                os.path.join(cfg.out_dir, "attack_summary.json"))
    if not args.quiet:
        print(f"clean accuracy {report.clean_accuracy:.4f}; wrote {path}")
    return 0


def cmd_detect(args):
    cfg = _prepare(args)
    data = load_dataset(cfg.dataset)
    model = _load_model_for(args, cfg)
    n = min(len(data), args.limit) if args.limit else len(data)
    X, y = data.flat[:n], data.labels[:n]
    atk = cfg.attacks[0] if cfg.attacks else AttackConfig(kind="fgm", epsilon=0.3)
    adv = attack_batch(model, X, y, atk)
    curve = det.roc(model, X, adv)
    path = os.path.join(cfg.out_dir, "roc.csv")
    det.write_roc_csv(curve, path)
    cal = det.calibrate(model, X, rng=np.random.default_rng(cfg.seed))
    _write_json({"auc": curve.auc, "attack": dataclasses.asdict(atk),
                 "calibration_mean_mi": cal.mean_mi,
                 "calibration_std_mi": cal.std_mi, "csv": path},
                os.path.join(cfg.out_dir, "detect_summary.json"))
    if not args.quiet:
        print(f"ROC AUC {curve.auc:.4f}; wrote {path}")
    return 0


def cmd_aip(args):
    cfg = _prepare(args)
    data = load_dataset(cfg.dataset)
    model = _load_model_for(args, cfg)
    n = min(len(data), args.limit) if args.limit else len(data)
    rows = run_aip(model, (data.flat[:n], data.labels[:n]), cfg.attacks)
    csv_path = os.path.join(cfg.out_dir, "aip.csv")
    svg_path = os.path.join(cfg.out_dir, "aip.svg")
    write_aip_csv(rows, csv_path)
    if rows:
        write_aip_svg(rows, svg_path)
    _write_json({"rows": [dataclasses.asdict(r) for r in rows],
                 "csv": csv_path, "svg": svg_path if rows else None},
                os.path.join(cfg.out_dir, "aip_summary.json"))
    if not args.quiet:
        print(f"wrote {csv_path}")
    return 0


def cmd_quantize_demo(args):
    grid = make_bin_grid(args.lo, args.hi, args.bins)
    pmf = sq_pmf(args.value, grid, args.alpha)
    print(f"value {args.value} on [{args.lo}, {args.hi}] with "
          f"{args.bins} bins, alpha={args.alpha}")
    print(f"{'bin':>12} {'probability':>14}")
    for b, p in zip(grid.bins, pmf.probs):
        print(f"{b:12.6f} {p:14.10f}")
    mean = float(np.dot(grid.bins, pmf.probs))
    print(f"{'mean':>12} {mean:14.10f}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="sqar",
        description="Stochastic-quantization ensembles: training, white-box "
                    "attacks, MI-based detection, and AIP reports.")
    p.add_argument("--threads", type=int, default=1,
                   help="inner compute threads; 1 is bitwise reproducible")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_ckpt=False):
        sp.add_argument("--config", required=True, help="experiment JSON")
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--beta", type=float)
        sp.add_argument("--mu", type=float)
        sp.add_argument("--bins", type=int)
        sp.add_argument("--members", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory override")
        sp.add_argument("--quiet", action="store_true")
        if needs_ckpt:
            sp.add_argument("--checkpoint", required=True)
            sp.add_argument("--limit", type=int, default=0,
                            help="evaluate at most this many images")

    common(sub.add_parser("train", help="train and checkpoint a model"))
    common(sub.add_parser("attack", help="robustness report"), needs_ckpt=True)
    common(sub.add_parser("detect", help="MI-detector ROC"), needs_ckpt=True)
    common(sub.add_parser("aip", help="accuracy-vs-MI sweep"), needs_ckpt=True)

    qd = sub.add_parser("quantize-demo", help="print one quantizer PMF table")
    qd.add_argument("--value", type=float, required=True)
    qd.add_argument("--bins", type=int, default=5)
    qd.add_argument("--alpha", type=float, default=2.0)
    qd.add_argument("--lo", type=float, default=0.0)
    qd.add_argument("--hi", type=float, default=1.0)
    return p


_COMMANDS = {"train": cmd_train, "attack": cmd_attack, "detect": cmd_detect,
             "aip": cmd_aip, "quantize-demo": cmd_quantize_demo}


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads != 1:
        # orchestration is sequential; kernels are single-threaded loops, so
        # extra threads have nothing to run
        print("note: --threads > 1 has no effect; running sequentially",
              file=sys.stderr)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("interrupted; partial results (if any) are in the output "
              "directory", file=sys.stderr)
        return 130
    except Exception as e:                       # noqa: BLE001
        print(f"error [{type(e).__name__}]: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
