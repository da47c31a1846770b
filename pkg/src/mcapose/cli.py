"""Command-line entry point: ``mcapose {synth,train,eval,infer,export-attention}``.

A JSON config file (``--config``) may set any option by its long-flag name
with dashes replaced by underscores; explicit flags override the file.
Errors go to stderr as ``mcapose: error[<category>]: <message>`` with a
category-specific exit code.
"""

from __future__ import annotations

import argparse
import json
import math
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data.annotations import AnnotationError, flip_permutation, load_annotations, save_annotations
from .data.synth import DEFAULT_PARTS, SynthSpec, synth_generate
from .data.transforms import AugmentParams, NO_AUGMENT, crop_warp
from .evaluation import TTA_PRESETS, tta_predict
from .network import (
    VARIANTS,
    ConfigError,
    MetricsWriter,
    NetworkConfig,
    build_network,
    load_network,
    save_network,
    variant_config,
)
from .pnm import read_ppm, write_pgm
from .tensor import NonFiniteError
from .training import TrainSettings, evaluate, fit

EXIT_CODES = {"usage": 2, "config": 3, "data": 4, "numeric": 5, "io": 6}


class CLIError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _prepare_out(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()) and not force:
        raise CLIError("io", f"output directory {path} is not empty (use --force)")
    path.mkdir(parents=True, exist_ok=True)


def _echo(out: Path, args: argparse.Namespace) -> None:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    cfg["versions"] = {"mcapose": __version__, "numpy": np.__version__, "python": platform.python_version()}
    (out / "run_config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.count <= 0:
        raise CLIError("usage", f"count must be positive, got {args.count}")
    out = Path(args.out)
    _prepare_out(out, args.force)
    spec = SynthSpec(
        seed=args.seed,
        image_size=args.image_size,
        clutter_density=args.clutter,
        distractor_prob=args.distractor_prob,
        parts=tuple(args.parts.split(",")),
    )
    dataset = synth_generate(spec, args.count)
    save_annotations(dataset, out)
    _echo(out, args)
    print(f"wrote {len(dataset)} images and {out / 'annotations.json'} ({len(spec.parts)} parts)")
    return 0


def _network_config(args, parts: int) -> NetworkConfig:
    base = NetworkConfig(
        stacks=args.stacks,
        parts=parts,
        input_size=args.input_size,
        channels=args.channels,
        depth=args.depth,
        attention_mode=args.attention_mode,
        crf_steps=args.crf_steps,
        crf_include_unary=args.crf_include_unary,
        part_start=args.part_start,
        seed=args.seed,
    )
    return variant_config(base, args.variant).validate()


def _load_dataset(path):
    try:
        return load_annotations(path)
    except FileNotFoundError as exc:
        raise CLIError("data", f"dataset not found: {exc.filename}") from exc


def cmd_train(args) -> int:
    dataset = _load_dataset(args.data)
    if not dataset:
        raise CLIError("data", "dataset is empty")
    cfg = _network_config(args, dataset[0][1].parts)
    out = Path(args.out)
    _prepare_out(out, args.force)
    _echo(out, args)
    steps = args.steps
    if args.epochs is not None:
        steps = args.epochs * math.ceil(len(dataset) / args.batch_size)
    aug = NO_AUGMENT if args.no_augment else AugmentParams(args.rotation, (args.scale_min, args.scale_max), args.flip_prob, args.jitter)
    settings = TrainSettings(
        steps=steps,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        augment=aug,
        val_every=args.val_every,
        checkpoint_every=args.checkpoint_every,
    )
    net = build_network(cfg)
    writer = MetricsWriter(out / "metrics.csv", cfg.stacks, out / "timing.csv")
    val_path = out / "validation.csv"
    val_path.write_text("step,pck,pckh\n")
    extra = {"train": {"lr": args.lr, "steps": steps, "batch_size": args.batch_size, "seed": args.seed}}

    def on_validate(step, pck_report, pckh_report):
        with open(val_path, "a") as fh:
            fh.write(f"{step},{pck_report.mean!r},{pckh_report.mean!r}\n")

    def on_checkpoint(step):
        save_network(net, out / f"checkpoint_{step:06d}.bin", extra)

    history = fit(net, dataset, settings, writer, on_validate, on_checkpoint)
    save_network(net, out / "checkpoint.bin", extra)
    print(f"{cfg.variant}: {steps} steps, loss {history[0]['loss']:.4f} -> {history[-1]['loss']:.4f}")
    return 0


def _load_checkpoint(path):
    try:
        return load_network(path)
    except FileNotFoundError as exc:
        raise CLIError("io", f"checkpoint not found: {path}") from exc


def cmd_eval(args) -> int:
    net, _ = _load_checkpoint(args.checkpoint)
    dataset = _load_dataset(args.data)
    if not dataset:
        raise CLIError("data", "dataset is empty")
    parts = dataset[0][1].parts
    if parts != net.config.parts:
        raise CLIError("data", f"checkpoint predicts {net.config.parts} parts but dataset has {parts}")
    scales, flip = TTA_PRESETS[args.tta]
    pck_rep, pckh_rep, _ = evaluate(net, dataset, args.pck_threshold, args.pckh_threshold, scales, flip)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "pck.csv").write_text(pck_rep.to_csv())
    (out / "pckh.csv").write_text(pckh_rep.to_csv())
    summary = pck_rep.summary() + "\n" + pckh_rep.summary() + "\n"
    (out / "summary.txt").write_text(summary)
    sys.stdout.write(summary)
    return 0


def cmd_infer(args) -> int:
    net, _ = _load_checkpoint(args.checkpoint)
    image = read_ppm(args.image)
    size = net.config.input_size
    if image.shape[1:] != (size, size):
        raise CLIError("data", f"image is {image.shape[2]}x{image.shape[1]}, network expects {size}x{size}")
    scales, flip = TTA_PRESETS[args.tta]
    perm = None
    if args.flip_pairs:
        pairs = [tuple(int(i) for i in p.split("-")) for p in args.flip_pairs.split(",")]
        perm = flip_permutation(pairs, net.config.parts)
    pred = tta_predict(net, image, scales, flip, perm)
    lines = ["part,x,y,confidence"] + [f"{p},{float(x)!r},{float(y)!r},{float(c)!r}" for p, ((x, y), c) in enumerate(zip(pred.keypoints, pred.confidence))]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _export_map(out: Path, name: str, values: np.ndarray) -> None:
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo
    scaled = (values - lo) / span if span > 0 else np.zeros_like(values)
    write_pgm(out / f"{name}.pgm", scaled)
    (out / f"{name}.txt").write_text(f"min {lo!r}\nmax {hi!r}\n")


def cmd_export_attention(args) -> int:
    net, _ = _load_checkpoint(args.checkpoint)
    if args.parts and not net.config.hp:
        raise CLIError("config", "part maps requested but the network has no part attention (HP disabled)")
    if not net.config.ms:
        raise CLIError("config", "the network has no attention maps (MS disabled)")
    dataset = _load_dataset(args.data)
    match = [(img, ann) for img, ann in dataset if ann.image_id == args.image_id]
    if not match:
        raise CLIError("data", f"image id {args.image_id!r} not in dataset")
    image, _ = crop_warp(*match[0], net.config.input_size)
    net.eval()
    outputs = net(image[None])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = 0
    for k, so in enumerate(outputs, start=1):
        for key in ("phi", "refined"):
            if key in so.holistic:
                _export_map(out, f"stack{k}_{key}", so.holistic[key].values.data[0, 0])
                written += 1
        if "fused" in so.holistic:
            _export_map(out, f"stack{k}_fused", so.holistic["fused"].data[0, 0])
            written += 1
            for r, amap in so.holistic["multires"].items():
                _export_map(out, f"stack{k}_res{r}", amap.values.data[0, 0])
                written += 1
        if args.parts:
            for p, amap in enumerate(so.part_maps):
                _export_map(out, f"stack{k}_part{p}", amap.values.data[0, 0])
                written += 1
    print(f"wrote {written} attention maps to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcapose", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file with option defaults")
    sub = parser.add_subparsers(dest="command", required=True)
    parser.commands = sub.choices

    p = sub.add_parser("synth", help="generate a synthetic stick-figure dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--parts", default=",".join(DEFAULT_PARTS))
    p.add_argument("--clutter", type=float, default=0.5)
    p.add_argument("--distractor-prob", type=float, default=0.5)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a network variant")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", default=VARIANTS[-1], choices=VARIANTS)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--epochs", type=int, default=None, help="overrides --steps")
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--lr", type=float, default=2.5e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stacks", type=int, default=2)
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--input-size", type=int, default=64)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--part-start", type=int, default=None)
    p.add_argument("--attention-mode", choices=("crf", "softmax"), default="crf")
    p.add_argument("--crf-steps", type=int, default=3)
    p.add_argument("--crf-include-unary", action="store_true")
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--rotation", type=float, default=30.0)
    p.add_argument("--scale-min", type=float, default=0.75)
    p.add_argument("--scale-max", type=float, default=1.25)
    p.add_argument("--flip-prob", type=float, default=0.5)
    p.add_argument("--jitter", type=float, default=0.2)
    p.add_argument("--val-every", type=int, default=0)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="PCK / PCKh of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tta", choices=sorted(TTA_PRESETS), default="none")
    p.add_argument("--pck-threshold", type=float, default=0.2)
    p.add_argument("--pckh-threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict keypoints for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out")
    p.add_argument("--tta", choices=sorted(TTA_PRESETS), default="none")
    p.add_argument("--flip-pairs", default="", help="left-right channel pairs, e.g. 2-3")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("export-attention", help="write attention maps as graymaps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--image-id", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--parts", action="store_true", help="also write per-part maps")
    p.set_defaults(func=cmd_export_attention)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CLIError("config", f"cannot read config {args.config}: {exc}") from exc
        sub = parser.commands[args.command]
        known = {a.dest for a in sub._actions if a.dest != "help"}
        unknown = set(file_cfg) - known
        if unknown:
            raise CLIError("config", f"unknown config keys: {sorted(unknown)}")
        sub.set_defaults(**file_cfg)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        return args.func(args)
    except CLIError as exc:
        category, msg = exc.category, str(exc)
    except ConfigError as exc:
        category, msg = "config", str(exc)
    except AnnotationError as exc:
        category, msg = "data", str(exc)
    except NonFiniteError as exc:
        category, msg = "numeric", str(exc)
    except OSError as exc:
        category, msg = "io", str(exc)
    print(f"mcapose: error[{category}]: {msg}", file=sys.stderr)
    return EXIT_CODES[category]


if __name__ == "__main__":
    sys.exit(main())
