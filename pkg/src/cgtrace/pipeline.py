"""Experiment pipelines: view preparation, training, evaluation, robustness, cross-dataset.

A trained *system* is the texture renderer plus the detector. Preparing the
detector inputs for an image means segmenting it, rendering it, and taking
the high-pass residual of both the image and its rendering.

Random streams are derived from the run seed ``S`` so that every stage is
reproducible on its own: ``[S, 1]`` renderer, ``[S, 2, i]`` segmentation of
manifest record ``i``, ``[S, 3]`` detector, ``[S, 4, a, i]`` attack ``a`` on
record ``i``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import ModelCheckpoint, load_checkpoint, save_checkpoint
from .config import RunConfig
from .core.optim import Adam
from .detector import (
    AttentionConfig,
    DetectorNet,
    Metrics,
    TrainConfig,
    TrainResult,
    ViewData,
    evaluate,
    train,
)
from .imaging import (
    Image,
    add_gaussian_noise,
    add_salt_pepper,
    high_pass,
    jpeg_recompress,
    load_image,
    rescale,
)
from .manifest import CG, DatasetManifest
from .renderer import (
    AdversarialConfig,
    Discriminator,
    RendererConfig,
    TextureRenderer,
    adversarial_train,
    render_many,
)
from .segmentation import SegMap, segment_simple

log = logging.getLogger(__name__)


# --- loading --------------------------------------------------------------------

@dataclass
class Split:
    indices: list[int]
    images: list[Image]
    labels: np.ndarray


def load_split(manifest: DatasetManifest, split: str, size: int) -> Split:
    idx = [i for i, r in enumerate(manifest.records) if r.split == split]
    if not idx:
        raise ValueError(f"manifest has no '{split}' records")
    images = []
    for i in idx:
        img = load_image(manifest.resolve(manifest.records[i]))
        if img.channels == 1:
            img = img.with_pixels(np.repeat(img.pixels, 3, axis=2))
        if img.shape[:2] != (size, size):
            img = rescale(img, (size, size))
        images.append(img)
    labels = np.array([manifest.records[i].label for i in idx], dtype=np.int64)
    return Split(idx, images, labels)


def segment_all(images, indices, cfg: RunConfig, salt: tuple = ()) -> list[SegMap]:
    return [segment_simple(im, cfg.segmenter_k, np.random.default_rng([cfg.seed, 2, *salt, i]))
            for im, i in zip(images, indices)]


# --- renderer -------------------------------------------------------------------

def new_renderer(cfg: RunConfig, rng: np.random.Generator | None = None) -> TextureRenderer:
    rcfg = RendererConfig(num_classes=cfg.segmenter_k, num_blocks=cfg.renderer_blocks)
    return TextureRenderer(rcfg, rng).astype(np.float32)


def fit_renderer(images, segs, cfg: RunConfig) -> tuple[TextureRenderer, dict]:
    """Adversarially fine-tune a freshly initialized renderer on the first training images."""
    rng = np.random.default_rng([cfg.seed, 1])
    renderer = new_renderer(cfg, rng)
    disc = Discriminator(rng).astype(np.float32)
    n = min(cfg.renderer_images, len(images))
    acfg = AdversarialConfig(l1_weight=cfg.renderer_l1, adv_weight=cfg.renderer_adv, lr=cfg.renderer_lr)
    hist = adversarial_train(renderer, disc, list(zip(images[:n], segs[:n])), cfg.renderer_steps, rng, acfg)
    return renderer, hist


def uses_renderer(cfg: RunConfig) -> bool:
    return 3 in DetectorNet.preset(cfg.branches)


# --- views ----------------------------------------------------------------------

def _chw(img: Image) -> np.ndarray:
    return img.to_chw(np.float32) - np.float32(0.5)


def make_views(images, segs, renderer: TextureRenderer | None, cfg: RunConfig) -> tuple:
    """Centered float32 views (H(img), img, H(render(img))); the last is zeros without a renderer."""
    cutoff = cfg.scaled_cutoff
    hf = np.stack([_chw(high_pass(im, cutoff)) for im in images])
    rgb = np.stack([_chw(im) for im in images])
    if renderer is None:
        hfr = np.zeros_like(hf)
    else:
        rendered = render_many(images, segs, renderer)
        hfr = np.stack([_chw(high_pass(r, cutoff)) for r in rendered])
    return hf, rgb, hfr


@dataclass
class Prepared:
    """Detector inputs for every split plus what the robustness suite needs."""

    config: RunConfig
    renderer: TextureRenderer | None
    data: dict[str, ViewData]
    test: Split | None = None
    renderer_history: dict = field(default_factory=dict)


def prepare(manifest: DatasetManifest, cfg: RunConfig, renderer: TextureRenderer | None = None,
            splits=("train", "val", "test")) -> Prepared:
    """Segment, (fit and) render, and high-pass every requested split.

    Without an explicit ``renderer`` one is fitted on the training split when
    the configured branches use it.
    """
    loaded = {s: load_split(manifest, s, cfg.image_size) for s in splits}
    segs = {s: segment_all(sp.images, sp.indices, cfg) for s, sp in loaded.items()}
    history = {}
    if renderer is None and uses_renderer(cfg):
        if "train" not in loaded:
            raise ValueError("fitting the renderer needs the train split")
        renderer, history = fit_renderer(loaded["train"].images, segs["train"], cfg)
        log.info("renderer fitted: l1 %.5f -> %.5f", history["l1"][0] if history["l1"] else np.nan,
                 history["l1"][-1] if history["l1"] else np.nan)
    data = {}
    for s, sp in loaded.items():
        data[s] = ViewData(make_views(sp.images, segs[s], renderer, cfg), sp.labels)
        log.info("prepared %s split: %d images", s, len(sp.labels))
    return Prepared(cfg, renderer, data, loaded.get("test"), history)


# --- training / evaluation ----------------------------------------------------------

@dataclass
class System:
    config: RunConfig
    detector: DetectorNet
    renderer: TextureRenderer | None
    result: TrainResult | None = None


def new_detector(cfg: RunConfig, rng: np.random.Generator | None = None) -> DetectorNet:
    return DetectorNet(cfg.branches, AttentionConfig(mode=cfg.attention), rng).astype(np.float32)


def train_detector(prep: Prepared, cfg: RunConfig | None = None, log_epoch=None) -> System:
    """Train a detector on prepared views; ``cfg`` may differ from ``prep.config`` in seed/branches."""
    cfg = cfg or prep.config
    rng = np.random.default_rng([cfg.seed, 3])
    net = new_detector(cfg, rng)
    tcfg = TrainConfig(lr=cfg.lr, batch_size=cfg.batch_size, max_epochs=cfg.max_epochs,
                       flip_p=(cfg.flip_p, cfg.flip_p), patience=cfg.patience or None)
    result = train(net, prep.data["train"], prep.data["val"], rng, tcfg, log=log_epoch)
    return System(cfg, net, prep.renderer, result)


def run_experiment(manifest: DatasetManifest, cfg: RunConfig, log_epoch=None):
    """Full pipeline: prepare all splits, train, evaluate on test."""
    prep = prepare(manifest, cfg)
    system = train_detector(prep, cfg, log_epoch)
    return system, evaluate(system.detector, prep.data["test"]), prep


def evaluate_manifest(system: System, manifest: DatasetManifest, split: str = "test") -> Metrics:
    prep = prepare(manifest, system.config, system.renderer, splits=(split,))
    return evaluate(system.detector, prep.data[split])


# --- robustness -------------------------------------------------------------------

def attack_grid(cfg: RunConfig) -> list[tuple[str, str, float]]:
    grid = [(f"jpeg{q}", "jpeg", q) for q in cfg.jpeg_qualities]
    grid += [(f"gaussian{v:g}", "gaussian", v) for v in cfg.noise_levels]
    grid += [(f"saltpepper{v:g}", "saltpepper", v) for v in cfg.salt_pepper]
    return grid


def apply_attack(img: Image, kind: str, value, rng: np.random.Generator) -> Image:
    if kind == "jpeg":
        return jpeg_recompress(img, int(value))
    if kind == "gaussian":
        return add_gaussian_noise(img, float(value), rng)
    if kind == "saltpepper":
        return add_salt_pepper(img, float(value), rng)
    raise ValueError(f"unknown attack '{kind}'")


def attacked_views(prep: Prepared) -> list[tuple[str, ViewData]]:
    """Test views with every CG image replaced by its attacked version, one entry per attack.

    Attacks, segmentation and rendering depend only on the prepared data, so
    the result can be shared by every detector trained on ``prep``.
    """
    test = prep.test
    if test is None or len(test.labels) == 0:
        raise ValueError("robustness suite needs a non-empty test split")
    cfg = prep.config
    clean = prep.data["test"]
    cg = [j for j, y in enumerate(test.labels) if y == CG]
    idx = [test.indices[j] for j in cg]
    out = []
    for a, (name, kind, value) in enumerate(attack_grid(cfg)):
        attacked = [apply_attack(test.images[j], kind, value, np.random.default_rng([cfg.seed, 4, a, i]))
                    for j, i in zip(cg, idx)]
        segs = segment_all(attacked, idx, cfg, salt=(a + 1,))
        views = make_views(attacked, segs, prep.renderer, cfg)
        mixed = tuple(v.copy() for v in clean.views)
        for k in range(3):
            mixed[k][cg] = views[k]
        out.append((name, ViewData(mixed, clean.labels)))
    return out


def robustness_suite(system: System, prep: Prepared, attacked=None) -> list[tuple[str, Metrics]]:
    """Clean baseline row then one row per attack, attacking CG test images only (in memory)."""
    if attacked is None:
        attacked = attacked_views(prep)
    rows = [("clean", evaluate(system.detector, prep.data["test"]))]
    rows += [(name, evaluate(system.detector, data)) for name, data in attacked]
    return rows


def metrics_csv(rows) -> str:
    return "attack,acc,tpr,tnr\n" + "".join(m.row(name) + "\n" for name, m in rows)


# --- cross-dataset ----------------------------------------------------------------

def cross_eval(system: System, train_manifest: DatasetManifest | None,
               test_manifest: DatasetManifest, split: str = "test") -> tuple[Metrics, list[str]]:
    """Evaluate on another manifest; overlapping image paths produce warnings, not errors."""
    warnings = []
    if train_manifest is not None:
        seen = {train_manifest.resolve(r).resolve() for r in train_manifest.records}
        overlap = [r.path for r in test_manifest.split(split) if test_manifest.resolve(r).resolve() in seen]
        if overlap:
            warnings.append(f"{len(overlap)} test images also appear in the training manifest "
                            f"(e.g. {overlap[0]})")
    return evaluate_manifest(system, test_manifest, split), warnings


# --- persistence ------------------------------------------------------------------

def system_checkpoint(system: System, metrics: dict | None = None) -> ModelCheckpoint:
    ckpt = ModelCheckpoint(config=system.config.dumps(), seed=system.config.seed, metrics=metrics or {})
    ckpt.add_module("detector", system.detector)
    if system.result is not None and system.result.optimizer is not None:
        ckpt.add_optimizer("detector", system.detector, system.result.optimizer)
    if system.renderer is not None:
        ckpt.add_module("renderer", system.renderer)
    return ckpt


def save_system(system: System, path, metrics: dict | None = None) -> Path:
    return save_checkpoint(system_checkpoint(system, metrics), path)


def system_from_checkpoint(ckpt: ModelCheckpoint) -> System:
    cfg = RunConfig.parse(ckpt.config, "checkpoint config")
    det = new_detector(cfg)
    det.load_state_dict(ckpt.module_state("detector"))
    renderer = None
    rstate = ckpt.module_state("renderer")
    if rstate:
        renderer = new_renderer(cfg)
        renderer.load_state_dict(rstate)
    return System(cfg, det, renderer)


def load_system(path) -> System:
    return system_from_checkpoint(load_checkpoint(path))


def detector_optimizer(system: System, ckpt: ModelCheckpoint) -> Adam:
    opt = Adam(system.detector.parameters(), lr=system.config.lr)
    if "detector" in ckpt.optimizer:
        ckpt.restore_optimizer("detector", system.detector, opt)
    return opt
