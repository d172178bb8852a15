"""``cgtrace`` command-line interface.

Exit codes: 0 success, 1 runtime failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import acquisition, texture
from .checkpoint import IntegrityError, ModelCheckpoint, load_checkpoint, save_checkpoint
from .config import RunConfig
from .core.tensor import NumericError
from .detector import evaluate
from .imaging import high_pass, load_image, rescale, save_image
from .manifest import read_manifest
from .pipeline import (
    System,
    cross_eval,
    evaluate_manifest,
    fit_renderer,
    load_split,
    metrics_csv,
    new_renderer,
    prepare,
    robustness_suite,
    save_system,
    segment_all,
    system_from_checkpoint,
    train_detector,
)
from .renderer import render
from .segmentation import load_segmap, save_segmap, segment_simple

log = logging.getLogger("cgtrace")


class UsageError(Exception):
    pass


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {k: getattr(args, k, None) for k in
                 ("seed", "image_size", "lr", "batch_size", "max_epochs", "cutoff", "branches",
                  "attention", "renderer_steps", "segmenter_k")}
    return cfg.with_overrides(**overrides)


def _manifest(path):
    try:
        return read_manifest(path)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc


def _system(path) -> tuple[System, ModelCheckpoint]:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"checkpoint not found: {p}")
    ckpt = load_checkpoint(p)
    return system_from_checkpoint(ckpt), ckpt


def _image(path):
    try:
        return load_image(path)
    except OSError as exc:
        raise UsageError(str(exc)) from exc


# --- subcommands ------------------------------------------------------------------

def cmd_synth(args):
    splits = tuple(args.splits) if args.splits else None
    m = acquisition.build_dataset(args.n, args.out, np.random.default_rng(args.seed),
                                  size=args.size, splits=splits, family=args.family)
    print(f"wrote {len(m)} images and {Path(args.out) / 'manifest.csv'}")


def cmd_segment(args):
    img = _image(args.image)
    seg = segment_simple(img, args.k, np.random.default_rng(args.seed))
    save_segmap(seg, args.out)
    print(f"{args.out}: {seg.num_classes} classes")


def cmd_render_train(args):
    cfg = _config(args)
    m = _manifest(args.manifest)
    train = load_split(m, "train", cfg.image_size)
    segs = segment_all(train.images, train.indices, cfg)
    renderer, hist = fit_renderer(train.images, segs, cfg)
    ckpt = ModelCheckpoint(config=cfg.dumps(), seed=cfg.seed,
                           metrics={"l1_first": hist["l1"][0] if hist["l1"] else None,
                                    "l1_last": hist["l1"][-1] if hist["l1"] else None})
    ckpt.add_module("renderer", renderer)
    save_checkpoint(ckpt, args.out)
    print("step,l1,g_adv,d_loss")
    for i, (a, b, c) in enumerate(zip(hist["l1"], hist["g_adv"], hist["d_loss"])):
        print(f"{i},{a!r},{b!r},{c!r}")


def cmd_render(args):
    img = _image(args.image)
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        cfg = RunConfig.parse(ckpt.config, "checkpoint config")
        renderer = new_renderer(cfg)
        renderer.load_state_dict(ckpt.module_state("renderer"))
    else:
        cfg = RunConfig(seed=args.seed, renderer_blocks=args.blocks)
        renderer = new_renderer(cfg, np.random.default_rng([args.seed, 1]))
    if args.segmap:
        seg = load_segmap(args.segmap, img.shape[:2])
    else:
        seg = segment_simple(img, renderer.config.num_classes, np.random.default_rng(args.seed))
    save_image(render(img, seg, renderer), args.out)
    print(args.out)


def cmd_glcm(args):
    img = _image(args.image)
    g = texture.compute_glcm(img, args.levels, tuple(args.offset))
    print(f"homogeneity,{texture.homogeneity(g)!r}")
    print(f"asm,{texture.asm(g)!r}")
    if args.map_out:
        save_image(texture.feature_map(img, args.feature, args.window, args.stride, args.levels,
                                       tuple(args.offset)), args.map_out)


def cmd_traces(args):
    imgs = [_image(p) for p in args.images]
    rep = acquisition.pattern_trace(imgs, args.denoiser)
    print(f"pattern,{rep.summary!r}")
    q = acquisition.QuantTable.from_quality(args.quality)
    rng = np.random.default_rng(args.seed)
    blocks = [acquisition.compression_trace(rng.integers(-8, 9, (8, 8)), q) for _ in range(64)]
    print(f"compression,{float(np.mean(np.abs(blocks)))!r}")
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        cfg = RunConfig.parse(ckpt.config, "checkpoint config")
        renderer = new_renderer(cfg)
        renderer.load_state_dict(ckpt.module_state("renderer"))
        img = imgs[0]
        seg = segment_simple(img, cfg.segmenter_k, np.random.default_rng(args.seed))
        rt = acquisition.rendering_trace(img, seg, lambda im, s: render(im, s, renderer))
        print(f"rendering,{rt.summary!r}")


def cmd_filter(args):
    img = _image(args.image)
    if args.size:
        img = rescale(img, (args.size, args.size))
    save_image(high_pass(img, args.cutoff), args.out)
    print(args.out)


def cmd_train(args):
    cfg = _config(args)
    m = _manifest(args.manifest)
    prep = prepare(m, cfg)

    def epoch_log(r):
        log.info("epoch %d train_loss %.4f val_loss %.4f train_acc %.4f val_acc %.4f",
                 r.epoch, r.train_loss, r.val_loss, r.train_acc, r.val_acc)

    system = train_detector(prep, cfg, epoch_log)
    metrics = evaluate(system.detector, prep.data["test"]) if "test" in prep.data else None
    stored = {"acc": metrics.acc, "tpr": metrics.tpr, "tnr": metrics.tnr} if metrics else {}
    save_system(system, args.out, stored)
    if args.history:
        Path(args.history).write_text(system.result.csv())
    if metrics is not None:
        print(metrics_csv([("test", metrics)]), end="")


def cmd_eval(args):
    system, _ = _system(args.checkpoint)
    m = _manifest(args.manifest)
    metrics = evaluate_manifest(system, m, args.split)
    print(metrics_csv([(args.split, metrics)]), end="")


def cmd_robustness(args):
    system, _ = _system(args.checkpoint)
    m = _manifest(args.manifest)
    prep = prepare(m, system.config, system.renderer, splits=("test",))
    text = metrics_csv(robustness_suite(system, prep))
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")


def cmd_cross_eval(args):
    system, _ = _system(args.checkpoint)
    train_m = _manifest(args.train_manifest) if args.train_manifest else None
    test_m = _manifest(args.test_manifest)
    metrics, warnings = cross_eval(system, train_m, test_m, args.split)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(metrics_csv([("cross", metrics)]), end="")


# --- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cgtrace", description="CG vs PG image forensics toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="progress logging")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=fn)
        return p

    def run_opts(p):
        p.add_argument("--config", help="key = value run configuration")
        p.add_argument("--image-size", dest="image_size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--max-epochs", dest="max_epochs", type=int)
        p.add_argument("--cutoff", type=float)
        p.add_argument("--branches", choices=["full", "no_renderer", "no_highpass"])
        p.add_argument("--attention", choices=["channel_spatial", "spatial_channel", "channel",
                                               "spatial", "none"])
        p.add_argument("--renderer-steps", dest="renderer_steps", type=int)
        p.add_argument("--segmenter-k", dest="segmenter_k", type=int)

    p = add("synth", cmd_synth, "build a synthetic PG/CG dataset with manifest")
    p.add_argument("--n", type=int, required=True, help="images per class")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--family", choices=acquisition.FAMILIES, default="A")
    p.add_argument("--splits", type=int, nargs=3, metavar=("TRAIN", "VAL", "TEST"))

    p = add("segment", cmd_segment, "k-means segmentation map of an image")
    p.add_argument("--image", required=True)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--out", required=True)

    p = add("render-train", cmd_render_train, "adversarially fit the texture renderer")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    run_opts(p)

    p = add("render", cmd_render, "re-render an image with the texture renderer")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--segmap")
    p.add_argument("--blocks", type=int, default=16)

    p = add("glcm", cmd_glcm, "GLCM homogeneity / ASM of an image")
    p.add_argument("--image", required=True)
    p.add_argument("--levels", type=int, default=8)
    p.add_argument("--offset", type=int, nargs=2, default=[0, 1])
    p.add_argument("--feature", choices=sorted(texture.FEATURES), default="homogeneity")
    p.add_argument("--window", type=int, default=16)
    p.add_argument("--stride", type=int, default=8)
    p.add_argument("--map-out", dest="map_out")

    p = add("traces", cmd_traces, "pattern, compression and rendering trace summaries")
    p.add_argument("images", nargs="+")
    p.add_argument("--denoiser", choices=sorted(acquisition.DENOISERS), default="median")
    p.add_argument("--quality", type=int, default=75)
    p.add_argument("--checkpoint")

    p = add("filter", cmd_filter, "high-pass residual image")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cutoff", type=float, default=30.0)
    p.add_argument("--size", type=int)

    p = add("train", cmd_train, "full pipeline training; writes a checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="per-epoch CSV")
    run_opts(p)

    p = add("eval", cmd_eval, "evaluate a checkpoint; prints attack,acc,tpr,tnr")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])

    p = add("robustness", cmd_robustness, "clean + attacked-CG evaluation table")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out")

    p = add("cross-eval", cmd_cross_eval, "evaluate on a different dataset")
    p.add_argument("--test-manifest", dest="test_manifest", required=True)
    p.add_argument("--train-manifest", dest="train_manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (UsageError, ValueError, KeyError, OSError) as exc:
        if isinstance(exc, IntegrityError):
            print(f"cgtrace: integrity error: {exc}", file=sys.stderr)
            return 1
        print(f"cgtrace: error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"cgtrace: numeric failure: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
