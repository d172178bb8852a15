"""Segmentation-guided texture renderer and its VGG-style discriminator.

The renderer runs a head conv and one stride-2 conv, a stack of residual
blocks whose features are modulated per pixel by condition maps (P1, P2)
computed from the one-hot segmentation, a final modulation + conv, nearest
neighbour x2 upsampling, two tail convs and a global skip to the input.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import Adam, Conv2d, ConvSpec, Linear, Module, NumericError, Tensor
from .core import ops
from .imaging import Image, Provenance
from .segmentation import SegMap, one_hot

log = logging.getLogger(__name__)


@dataclass
class RendererConfig:
    num_classes: int = 8
    features: int = 64
    num_blocks: int = 16
    response_width: int = 32


@dataclass
class ConditionMaps:
    p1: Tensor
    p2: Tensor


def affine_transform(fm: Tensor, cond: ConditionMaps) -> Tensor:
    """Per-element modulation ``fm * P1 + P2``."""
    if fm.shape[-3:] != cond.p1.shape[-3:] or cond.p1.shape != cond.p2.shape:
        raise ops.DimensionError(
            f"feature map {fm.shape} does not match condition maps {cond.p1.shape}")
    return fm * cond.p1 + cond.p2


class SegResponse(Module):
    """1x1-conv trunk (five layers, the first with stride 2) and two 2-layer heads."""

    def __init__(self, num_classes: int, width: int = 32, features: int = 64,
                 rng: np.random.Generator | None = None):
        self.num_classes = num_classes
        self.trunk = [Conv2d(ConvSpec(num_classes, width, 1, 1, 2, 0), rng)]
        self.trunk += [Conv2d(ConvSpec(width, width, 1, 1), rng) for _ in range(4)]
        self.scale_head = [Conv2d(ConvSpec(width, width, 1, 1), rng),
                           Conv2d(ConvSpec(width, features, 1, 1), rng, gain=0.1)]
        self.shift_head = [Conv2d(ConvSpec(width, width, 1, 1), rng),
                           Conv2d(ConvSpec(width, features, 1, 1), rng, gain=0.1)]
        if rng is not None:
            # start near the identity modulation (P1 ~ 1)
            self.scale_head[1].bias.data[...] = 1.0

    def forward(self, seg_onehot: Tensor) -> ConditionMaps:
        if seg_onehot.ndim == 3:
            seg_onehot = seg_onehot.reshape(1, *seg_onehot.shape)
        if seg_onehot.shape[1] != self.num_classes:
            raise ValueError(
                f"segmentation has {seg_onehot.shape[1]} classes, renderer expects {self.num_classes}")
        h = seg_onehot
        for conv in self.trunk:
            h = ops.relu(conv(h))
        p1 = self.scale_head[1](ops.relu(self.scale_head[0](h)))
        p2 = self.shift_head[1](ops.relu(self.shift_head[0](h)))
        return ConditionMaps(p1, p2)


class ResidualBlock(Module):
    def __init__(self, features: int = 64, rng: np.random.Generator | None = None):
        self.conv1 = Conv2d(ConvSpec.square(features, features, 3), rng)
        self.conv2 = Conv2d(ConvSpec.square(features, features, 3), rng, gain=0.1)

    def forward(self, fm: Tensor, cond: ConditionMaps) -> Tensor:
        h = ops.relu(self.conv1(affine_transform(fm, cond)))
        h = ops.relu(self.conv2(affine_transform(h, cond)))
        return h + fm


class TextureRenderer(Module):
    def __init__(self, config: RendererConfig | None = None,
                 rng: np.random.Generator | None = None):
        cfg = config or RendererConfig()
        f = cfg.features
        self.config = cfg
        self.response = SegResponse(cfg.num_classes, cfg.response_width, f, rng)
        self.head = Conv2d(ConvSpec.square(3, f, 3), rng)
        self.down = Conv2d(ConvSpec.square(f, f, 3, stride=2), rng)
        self.blocks = [ResidualBlock(f, rng) for _ in range(cfg.num_blocks)]
        self.body_tail = Conv2d(ConvSpec.square(f, f, 3), rng)
        self.tail1 = Conv2d(ConvSpec.square(f, f, 3), rng)
        self.tail2 = Conv2d(ConvSpec.square(f, 3, 3), rng, gain=0.1)

    def forward(self, x: Tensor, seg_onehot: Tensor) -> Tensor:
        """``x``: N x 3 x H x W in [0, 1]; ``seg_onehot``: N x K x H x W."""
        n, c, h, w = x.shape
        if c != 3 or h % 2 or w % 2:
            raise ValueError(f"renderer expects N x 3 x H x W with even H, W; got {x.shape}")
        if seg_onehot.shape[-2:] != (h, w):
            raise ValueError(f"segmentation {seg_onehot.shape} does not match image {x.shape}")
        cond = self.response(seg_onehot)
        fm = ops.relu(self.down(ops.relu(self.head(x))))
        for block in self.blocks:
            fm = block(fm, cond)
        fm = self.body_tail(affine_transform(fm, cond))
        fm = ops.upsample_nearest(fm, 2)
        out = self.tail2(ops.relu(self.tail1(fm)))
        return ops.clamp01(out + x)


def seg_response(seg_onehot: Tensor, net: SegResponse) -> ConditionMaps:
    return net(seg_onehot)


def residual_block(fm: Tensor, cond: ConditionMaps, block: ResidualBlock) -> Tensor:
    return block(fm, cond)


def _batch(images, segs, num_classes: int, dtype):
    x = np.stack([im.to_chw(dtype) for im in images])
    s = np.stack([one_hot(_fit_classes(sg, num_classes), dtype).data for sg in segs])
    return Tensor(x), Tensor(s)


def _fit_classes(seg: SegMap, num_classes: int) -> SegMap:
    if seg.num_classes == num_classes:
        return seg
    if seg.num_classes > num_classes:
        raise ValueError(f"segmentation has {seg.num_classes} classes, renderer expects {num_classes}")
    return SegMap(seg.labels, num_classes)


def render(img: Image, seg: SegMap, renderer: TextureRenderer) -> Image:
    """Forward pass on one image; output has the input's size and lies in [0, 1]."""
    if img.channels != 3:
        raise ValueError("render expects a 3-channel image")
    if seg.shape != (img.height, img.width):
        raise ValueError(f"segmentation {seg.shape} does not match image {img.shape[:2]}")
    dtype = renderer.head.weight.dtype
    x, s = _batch([img], [seg], renderer.config.num_classes, dtype)
    out = renderer(x, s).data[0].transpose(1, 2, 0)
    return img.with_pixels(out.astype(np.float64), Provenance.RENDERED)


def render_many(images, segs, renderer: TextureRenderer, batch_size: int = 8) -> list[Image]:
    out = []
    for i in range(0, len(images), batch_size):
        imgs, sgs = images[i:i + batch_size], segs[i:i + batch_size]
        x, s = _batch(imgs, sgs, renderer.config.num_classes, renderer.head.weight.dtype)
        y = renderer(x, s).data
        out += [im.with_pixels(y[j].transpose(1, 2, 0).astype(np.float64), Provenance.RENDERED)
                for j, im in enumerate(imgs)]
    return out


class Discriminator(Module):
    """Four stride-2 3x3 convs (16, 32, 64, 64) with ReLU, global average pool, FC."""

    def __init__(self, rng: np.random.Generator | None = None, channels=(16, 32, 64, 64)):
        chans = (3,) + tuple(channels)
        self.convs = [Conv2d(ConvSpec.square(chans[i], chans[i + 1], 3, stride=2), rng)
                      for i in range(len(channels))]
        self.fc = Linear(chans[-1], 1, rng)

    def logits(self, x: Tensor) -> Tensor:
        h = x
        for conv in self.convs:
            h = ops.relu(conv(h))
        return self.fc(ops.global_avg_pool(h)).reshape(x.shape[0])

    def forward(self, x: Tensor) -> Tensor:
        return ops.sigmoid(self.logits(x))


def discriminator(img: Image, net: Discriminator) -> float:
    """Probability in (0, 1) that ``img`` is a real (unrendered) sample."""
    dtype = net.fc.weight.dtype
    return float(net(Tensor(img.to_chw(dtype)[None])).data[0])


@dataclass
class AdversarialConfig:
    l1_weight: float = 1.0
    adv_weight: float = 0.01
    lr: float = 1e-4
    batch_size: int = 4
    saturating: bool = False


def adversarial_train(renderer: TextureRenderer, disc: Discriminator, samples, steps: int,
                      rng: np.random.Generator, config: AdversarialConfig | None = None,
                      real_images=None) -> dict:
    """Alternate discriminator and renderer updates; returns per-step loss history.

    ``samples`` is a list of (Image, SegMap). The discriminator's real set is
    ``real_images`` when given, otherwise the unrendered inputs. The renderer
    minimizes ``adv_weight * L_adv + l1_weight * |G(x) - x|``; L_adv is
    ``-log D(G(x))`` unless ``saturating`` selects ``log(1 - D(G(x)))``.
    """
    cfg = config or AdversarialConfig()
    if not samples:
        raise ValueError("adversarial_train needs at least one sample")
    history = {"l1": [], "g_adv": [], "d_loss": []}
    if steps <= 0:
        return history
    dtype = renderer.head.weight.dtype
    images = [im for im, _ in samples]
    segs = [sg for _, sg in samples]
    reals = list(real_images) if real_images is not None else images
    g_opt = Adam(renderer.parameters(), lr=cfg.lr)
    d_opt = Adam(disc.parameters(), lr=cfg.lr)
    use_adv = cfg.adv_weight > 0
    n = len(images)
    for step in range(steps):
        idx = rng.choice(n, size=min(cfg.batch_size, n), replace=False) if n > cfg.batch_size \
            else np.arange(n)
        x, s = _batch([images[i] for i in idx], [segs[i] for i in idx],
                      renderer.config.num_classes, dtype)
        try:
            fake = renderer(x, s)
            d_loss = np.nan
            if use_adv:
                ridx = rng.choice(len(reals), size=len(idx), replace=len(reals) < len(idx))
                y = Tensor(np.stack([reals[i].to_chw(dtype) for i in ridx]))
                d_opt.zero_grad()
                d_obj = -(ops.log_sigmoid(disc.logits(y)).mean()
                          + ops.log_sigmoid(-disc.logits(Tensor(fake.data))).mean())
                d_obj.backward()
                d_opt.step()
                d_loss = float(d_obj.data)
            g_opt.zero_grad()
            l1 = (fake - x).abs().mean()
            loss = l1 * cfg.l1_weight
            g_adv = 0.0
            if use_adv:
                z = disc.logits(fake)
                adv = ops.log_sigmoid(-z).mean() if cfg.saturating else -ops.log_sigmoid(z).mean()
                loss = loss + adv * cfg.adv_weight
                g_adv = float(adv.data)
            loss.backward()
            g_opt.step()
        except NumericError as exc:
            raise NumericError(f"adversarial training diverged at step {step}: {exc}") from exc
        history["l1"].append(float(l1.data))
        history["g_adv"].append(g_adv)
        history["d_loss"].append(d_loss)
        log.debug("render step %d l1=%.5f d=%.4f", step, history["l1"][-1], d_loss)
    renderer.zero_grad()
    disc.zero_grad()
    return history


def train_discriminator(disc: Discriminator, real, fake, steps: int,
                        rng: np.random.Generator, lr: float = 1e-3, batch_size: int = 8) -> list:
    """Fit the discriminator alone on fixed real / fake image lists."""
    dtype = disc.fc.weight.dtype
    xr = np.stack([im.to_chw(dtype) for im in real])
    xf = np.stack([im.to_chw(dtype) for im in fake])
    opt = Adam(disc.parameters(), lr=lr)
    losses = []
    for _ in range(steps):
        ir = rng.choice(len(xr), size=min(batch_size, len(xr)), replace=False)
        jf = rng.choice(len(xf), size=min(batch_size, len(xf)), replace=False)
        opt.zero_grad()
        obj = -(ops.log_sigmoid(disc.logits(Tensor(xr[ir]))).mean()
                + ops.log_sigmoid(-disc.logits(Tensor(xf[jf]))).mean())
        obj.backward()
        opt.step()
        losses.append(float(obj.data))
    disc.zero_grad()
    return losses
