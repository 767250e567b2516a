"""Command-line interface: dataset generation, training, saliency runs, comparisons."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import data, imaging, model, saliency


def _parse_schedule(text: str) -> tuple[float, ...]:
    try:
        percents = [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise ValueError(f"schedule must be a comma list of percents, got {text!r}") from None
    return tuple(p / 100.0 for p in percents)


def _parse_step_size(text: str):
    if text == "auto":
        return "auto"
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"--little-h must be a number or 'auto', got {text!r}") from None


def _config_from_args(args) -> saliency.SaliencyConfig:
    return saliency.SaliencyConfig(
        step_size=_parse_step_size(args.little_h),
        schedule=_parse_schedule(args.schedule),
        steps_per_fraction=args.steps_per_fraction,
        kernel_sigma=args.sigma,
        kernel_radius=args.radius,
    )


def _run_dir(out_dir: str, command: str, args) -> Path:
    """Per-run output directory keyed by a hash of the full flag set."""
    flags = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    digest = hashlib.sha256(
        json.dumps({"command": command, **flags}, sort_keys=True, default=str).encode()
    ).hexdigest()[:12]
    path = Path(out_dir) / f"run-{digest}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_gen_data(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    images, labels = data.make_shapes_dataset(args.seed, args.count)
    lines = []
    for i, (img, label) in enumerate(zip(images, labels)):
        name = f"img_{i:04d}.png"
        imaging.save_image(img, out / name)
        lines.append(f"{name},{label},{data.CLASS_NAMES[label]}")
    (out / "labels.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {args.count} images and labels.csv to {out}")
    return 0


def _load_labeled_dir(data_dir: Path):
    manifest = data_dir / "labels.csv"
    if not manifest.is_file():
        raise ValueError(f"no labels.csv in {data_dir}")
    names, labels = [], []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        name, label, _ = line.split(",")
        names.append(name)
        labels.append(int(label))
    images = np.stack([imaging.load_image(data_dir / name) for name in names])
    return images, np.array(labels, dtype=np.int64)


def cmd_train(args) -> int:
    images, labels = _load_labeled_dir(Path(args.data_dir))
    net = model.default_network(seed=args.seed)
    start = time.perf_counter()
    model.train(net, images, labels, epochs=args.epochs, lr=args.lr, seed=args.seed)
    elapsed = time.perf_counter() - start
    acc = model.accuracy(net, images, labels)
    model.save_model(net, args.model_out)
    print(f"trained {args.epochs} epochs in {elapsed:.1f}s, train accuracy {acc:.4f}")
    print(f"model written to {args.model_out}")
    return 0


def cmd_saliency(args) -> int:
    net = model.load_model(args.model)
    image = imaging.load_image(args.image)
    class_index = net.class_index(getattr(args, "class"))
    cfg = _config_from_args(args)
    run = saliency.run_linear if args.mode == "linear" else saliency.run_nonlinear
    traj = run(net, image, class_index, cfg)

    out = _run_dir(args.out_dir, "saliency", args)
    saliency.write_trajectory_csv(traj, out / "trajectory.csv")
    manifest = saliency.write_snapshots(traj, out / "snapshots")
    saliency.write_manifest(manifest, out / "manifest.json")

    picks = saliency.snapshot_indices(traj)
    tiles = [traj.steps[i].image for i in picks] + [traj.steps[i].map for i in picks]
    montage = imaging.render_montage(tiles, rows=2, cols=len(picks), separator_px=2)
    imaging.save_image(montage, out / "montage.png")
    svg = imaging.render_trajectory_plot(traj, net.class_names[class_index])
    (out / "trajectory.svg").write_text(svg)

    result = saliency.retrace_best(traj)
    threshold = "n/a" if result.threshold_estimate is None else f"{result.threshold_estimate:.9g}"
    print(
        f"{args.mode} class={net.class_names[class_index]} "
        f"best_prob={result.best_prob:.9g} threshold_estimate={threshold}"
    )
    print(f"outputs in {out}")
    return 0


def cmd_compare(args) -> int:
    net = model.load_model(args.model)
    image = imaging.load_image(args.image)
    indices = [net.class_index(args.class_a), net.class_index(args.class_b)]
    cfg = _config_from_args(args)

    out = _run_dir(args.out_dir, "compare", args)
    tiles, scores = [], {}
    for idx in indices:
        linear = saliency.run_linear(net, image, idx, cfg)
        nonlinear = saliency.run_nonlinear(net, image, idx, cfg)
        lin_last, non_last = linear.steps[-1], nonlinear.steps[-1]
        disagreement = float(np.mean(lin_last.mask != non_last.mask))
        scores[net.class_names[idx]] = disagreement
        tiles += [image, lin_last.map, non_last.map]
        print(f"class={net.class_names[idx]} mask_disagreement={disagreement:.9g}")
    montage = imaging.render_montage(tiles, rows=2, cols=3, separator_px=2)
    imaging.save_image(montage, out / "comparison.png")
    with open(out / "scores.json", "w") as fh:
        json.dump(scores, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"outputs in {out}")
    return 0


def _add_saliency_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--schedule", default="0,5,10,20,30,50,75,95",
                   help="comma list of blur percents")
    p.add_argument("--steps-per-fraction", type=int, default=25)
    p.add_argument("--little-h", default="auto",
                   help="gradient step size; a number or 'auto'")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nsal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic shapes dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=2000)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the classifier on a generated dataset")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--lr", type=float, default=0.04)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("saliency", help="run one saliency trajectory")
    p.add_argument("--class", required=True, help="target class name or index")
    p.add_argument("--mode", choices=("linear", "nonlinear"), default="nonlinear")
    _add_saliency_flags(p)
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("compare", help="linear vs nonlinear maps for two classes")
    p.add_argument("--class-a", required=True)
    p.add_argument("--class-b", required=True)
    _add_saliency_flags(p)
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
