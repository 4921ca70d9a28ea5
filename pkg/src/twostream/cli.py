"""Command-line surface: dataset synthesis, training, evaluation, flow
estimation, and saliency rendering.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
failure. Every command is deterministic given its config and seed; the
``--threads`` flag caps worker pools, and since the numpy implementation
runs a single worker regardless, outputs are identical for any value.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config, serialize_config
from .data import (
    generate_synthetic_dataset,
    load_clip_ppm_sequence,
    read_manifest,
    save_clip,
    write_manifest,
)
from .errors import ConfigError, DataError, NumericError, ShapeError
from .evaluation import ap_table_text, confusion_matrix, input_saliency, mean_average_precision
from .flow import estimate_flow, flow_to_color, preprocess_clip, write_flo
from .imageio import read_ppm, rgb_to_gray, write_pgm, write_ppm
from .model import build_model, forward_clip
from .training import prepare_samples, train

__all__ = ["main"]


def _replace_seed(config: RunConfig, seed: int | None) -> RunConfig:
    if seed is None:
        return config
    return RunConfig(
        model=replace(config.model, seed=seed),
        backbone=config.backbone,
        flow=config.flow,
        synth=replace(config.synth, seed=seed),
        training=replace(config.training, seed=seed),
    )


def cmd_synth(config_path, out_dir, seed: int | None = None) -> int:
    config = _replace_seed(load_config(config_path), seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_clips, test_clips = generate_synthetic_dataset(config.synth)
    entries = []
    for split, clips in (("train", train_clips), ("test", test_clips)):
        for clip in clips:
            save_clip(clip, out_dir / clip.id)
            # manifest paths are relative to its own directory so the
            # dataset tree is relocatable and byte-reproducible
            entries.append((clip.id, split))
    write_manifest(entries, out_dir / "manifest.tsv")
    (out_dir / "config.cfg").write_text(serialize_config(config))
    print(f"wrote {len(train_clips)} train + {len(test_clips)} test clips to {out_dir}")
    return 0


def _load_split(manifest_path, split: str):
    clips = [load_clip_ppm_sequence(path) for path, tag in read_manifest(manifest_path) if tag == split]
    if not clips:
        raise DataError(f"manifest {manifest_path} holds no {split!r} clips")
    return clips


def _model_from_config(config: RunConfig):
    return build_model(
        num_categories=config.model.num_categories,
        time_step=config.model.time_step,
        backbone_config=config.backbone,
        seed=config.model.seed,
        lstm_hidden=config.model.lstm_hidden,
        representation=config.model.representation,
    )


def cmd_train(config_path, manifest_path, out_checkpoint, seed: int | None = None) -> int:
    config = _replace_seed(load_config(config_path), seed)
    clips = _load_split(manifest_path, "train")
    model = _model_from_config(config)
    samples = prepare_samples(clips, model.time_step, model.backbone_frame.config.input_size,
                              config.flow)
    model, history = train(model, None, config.training, samples=samples)
    out_checkpoint = Path(out_checkpoint)
    out_checkpoint.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out_checkpoint)
    history_path = out_checkpoint.with_suffix(out_checkpoint.suffix + ".history.tsv")
    history_path.write_text(history.to_log_text())
    last = history.records[-1]
    print(f"trained {len(history.records)} epochs; final loss {last.total_loss:.6f}, "
          f"accuracy {last.accuracy:.3f}; checkpoint {out_checkpoint}")
    return 0


def cmd_eval(checkpoint_path, manifest_path, out_dir, flow_config: RunConfig | None = None) -> int:
    model = load_checkpoint(checkpoint_path)
    clips = _load_split(manifest_path, "test")
    categories = {clip.label for clip in clips}
    if max(categories) >= model.num_categories:
        raise DataError(
            f"manifest labels go up to {max(categories)} but the checkpoint has "
            f"{model.num_categories} categories"
        )
    flow_params = flow_config.flow if flow_config is not None else None
    samples = prepare_samples(clips, model.time_step, model.backbone_frame.config.input_size,
                              flow_params)
    scores = []
    labels = []
    predictions = []
    for pairs, label in samples:
        probs = forward_clip(model, pairs).final_probs.data
        scores.append(probs)
        labels.append(label)
        predictions.append(int(probs.argmax()))
    map_value, aps = mean_average_precision(np.array(scores), np.array(labels))
    matrix = confusion_matrix(predictions, labels, num_categories=model.num_categories)
    accuracy = float(np.mean([p == a for p, a in zip(predictions, labels)]))

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ap_text = ap_table_text(aps, map_value)
    (out_dir / "ap_table.tsv").write_text(ap_text)
    (out_dir / "confusion.tsv").write_text(matrix.to_text())
    print(ap_text, end="")
    print(matrix.to_text(), end="")
    print(f"accuracy\t{accuracy:.6f}")
    print(f"mAP\t{map_value:.6f}")
    return 0


def cmd_flow(prev_path, curr_path, out_flo, out_image, flow_config: RunConfig | None = None) -> int:
    prev = read_ppm(prev_path)
    curr = read_ppm(curr_path)
    if prev.shape != curr.shape:
        raise DataError(f"frame sizes differ: {prev.shape} vs {curr.shape}")
    params = flow_config.flow if flow_config is not None else None
    field = estimate_flow(rgb_to_gray(prev), rgb_to_gray(curr), params)
    write_flo(field, out_flo)
    write_ppm(flow_to_color(field), out_image)
    print(f"wrote {out_flo} and {out_image}")
    return 0


def cmd_saliency(checkpoint_path, clip_dir, category: int, out_dir) -> int:
    model = load_checkpoint(checkpoint_path)
    clip = load_clip_ppm_sequence(clip_dir)
    pairs = preprocess_clip(clip, target_frames=model.time_step + 1,
                            target_size=model.backbone_frame.config.input_size)
    result = input_saliency(model, pairs, category)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for t, (frame_map, flow_map) in enumerate(zip(result.frame_maps, result.flow_maps)):
        for kind, sal in (("frame", frame_map), ("flow", flow_map)):
            peak = sal.max()
            scaled = np.zeros_like(sal) if peak <= 0 else sal / peak
            img = np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)
            write_pgm(img, out_dir / f"saliency_{kind}_{t:03d}.pgm")
            count += 1
    print(f"wrote {count} saliency maps to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twostream",
                                     description="two-stream activity recognition pipeline")
    parser.add_argument("--threads", type=int, default=1,
                        help="cap on worker threads (outputs are identical for any value)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset and manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("train", help="train a model from a dataset manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="dataset manifest path")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset manifest path")
    p.add_argument("--out", required=True, help="directory for metric files")
    p.add_argument("--config", default=None, help="optional config for flow parameters")

    p = sub.add_parser("flow", help="estimate flow between two PPM frames")
    p.add_argument("prev")
    p.add_argument("curr")
    p.add_argument("out_flo")
    p.add_argument("out_image")
    p.add_argument("--config", default=None, help="optional config for flow parameters")

    p = sub.add_parser("saliency", help="render per-frame saliency maps for a clip")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("clip_dir")
    p.add_argument("category", type=int)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        if args.command == "synth":
            return cmd_synth(args.config, args.out, seed=args.seed)
        if args.command == "train":
            return cmd_train(args.config, args.data, args.out, seed=args.seed)
        if args.command == "eval":
            flow_config = load_config(args.config) if args.config else None
            return cmd_eval(args.checkpoint, args.data, args.out, flow_config=flow_config)
        if args.command == "flow":
            flow_config = load_config(args.config) if args.config else None
            return cmd_flow(args.prev, args.curr, args.out_flo, args.out_image,
                            flow_config=flow_config)
        if args.command == "saliency":
            return cmd_saliency(args.checkpoint, args.clip_dir, args.category, args.out)
        parser.error(f"unknown command {args.command!r}")
    except (ConfigError, ShapeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
