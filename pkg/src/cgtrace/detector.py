"""Three-branch attention classifier for CG (label 1) vs PG (label 0) images.

Branch 1 sees the high-frequency residual of the image, branch 2 the RGB
image and branch 3 the high-frequency residual of its re-rendered version.
Each branch is a stack of Conv-Pool blocks with an attention module before
the final 1x1 block; the globally pooled branch features are concatenated
and mapped to two logits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Tensor, concat, ops
from .core.nn import BatchNorm2d, Conv2d, Linear, Module
from .core.ops import ConvSpec
from .core.optim import Adam
from .core.tensor import DimensionError
from .imaging import Image, apply_flips, draw_flips

ATTENTION_MODES = ("channel_spatial", "spatial_channel", "channel", "spatial", "none")
BRANCH_PRESETS = {
    "full": (1, 2, 3),
    "no_renderer": (1, 2),
    "no_highpass": (2, 3),
}


@dataclass(frozen=True)
class BlockSpec:
    channels: int
    kernel: int


@dataclass(frozen=True)
class BranchConfig:
    branch_id: int
    blocks: tuple[BlockSpec, ...]
    attention_index: int

    def __post_init__(self):
        if self.branch_id not in (1, 2, 3):
            raise ValueError(f"branch id must be 1, 2 or 3, got {self.branch_id}")
        if not 1 <= self.attention_index <= len(self.blocks):
            raise ValueError("attention index out of range")

    @property
    def out_channels(self) -> int:
        return self.blocks[-1].channels

    @property
    def downsample(self) -> int:
        return 2 ** len(self.blocks)

    @classmethod
    def standard(cls, branch_id: int) -> "BranchConfig":
        if branch_id == 2:
            blocks = (BlockSpec(16, 5), BlockSpec(32, 5), BlockSpec(64, 5), BlockSpec(128, 1))
        else:
            blocks = (BlockSpec(16, 5), BlockSpec(32, 5), BlockSpec(64, 1))
        return cls(branch_id, blocks, len(blocks) - 1)


@dataclass(frozen=True)
class AttentionConfig:
    ratio: int = 8
    spatial_kernel: int = 7
    mode: str = "channel_spatial"

    def __post_init__(self):
        if self.ratio < 1:
            raise ValueError("reduction ratio must be positive")
        if self.spatial_kernel < 1 or self.spatial_kernel % 2 == 0:
            raise ValueError("spatial kernel must be odd")
        if self.mode not in ATTENTION_MODES:
            raise ValueError(f"attention mode must be one of {ATTENTION_MODES}")


@dataclass
class NetworkInput:
    """One sample's three views: H(Img), Img and H(rendered Img)."""

    hf_original: Image
    rgb: Image
    hf_rendered: Image

    def views(self) -> tuple[Image, Image, Image]:
        return self.hf_original, self.rgb, self.hf_rendered


def stack_inputs(samples, dtype=np.float32) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """List of NetworkInput -> three centered N x 3 x H x W arrays."""
    out = []
    for k in range(3):
        out.append(np.stack([s.views()[k].to_chw(dtype) for s in samples]) - dtype(0.5))
    return tuple(out)


# --- building blocks ------------------------------------------------------------

class ConvPool(Module):
    """conv -> BN -> ReLU6 -> 2x2 average pool."""

    def __init__(self, cin: int, spec: BlockSpec, rng: np.random.Generator | None = None):
        self.conv = Conv2d(ConvSpec.square(cin, spec.channels, spec.kernel), rng)
        self.bn = BatchNorm2d(spec.channels)

    def forward(self, x: Tensor) -> Tensor:
        return ops.avg_pool2d(ops.relu6(self.bn(self.conv(x))), 2)


def conv_pool_block(fm: Tensor, block: ConvPool) -> Tensor:
    return block(fm)


class ChannelAttention(Module):
    """GAP -> 1x1 conv C -> C/r -> 1x1 conv C/r -> C -> sigmoid gate per channel."""

    def __init__(self, channels: int, ratio: int = 8, rng: np.random.Generator | None = None):
        if channels % ratio:
            raise ValueError(f"channels {channels} not divisible by reduction ratio {ratio}")
        hidden = channels // ratio
        self.down = Conv2d(ConvSpec.square(channels, hidden, 1), rng)
        self.up = Conv2d(ConvSpec.square(hidden, channels, 1), rng)

    def gate(self, fm: Tensor) -> Tensor:
        n, c = fm.shape[:2]
        stat = ops.global_avg_pool(fm).reshape((n, c, 1, 1))
        return ops.sigmoid(self.up(self.down(stat)))

    def forward(self, fm: Tensor) -> Tensor:
        return fm * self.gate(fm)


class SpatialAttention(Module):
    """[channel mean, channel max] -> k x k conv -> sigmoid gate per location."""

    def __init__(self, kernel: int = 7, rng: np.random.Generator | None = None):
        self.conv = Conv2d(ConvSpec.square(2, 1, kernel), rng)

    def gate(self, fm: Tensor) -> Tensor:
        pooled = concat([ops.channel_mean(fm), ops.channel_max(fm)], axis=1)
        return ops.sigmoid(self.conv(pooled))

    def forward(self, fm: Tensor) -> Tensor:
        return fm * self.gate(fm)


class AttentionModule(Module):
    def __init__(self, channels: int, config: AttentionConfig | None = None,
                 rng: np.random.Generator | None = None):
        self.config = config or AttentionConfig()
        self.channel = ChannelAttention(channels, self.config.ratio, rng)
        self.spatial = SpatialAttention(self.config.spatial_kernel, rng)

    def forward(self, fm: Tensor) -> Tensor:
        mode = self.config.mode
        if mode == "channel_spatial":
            return self.spatial(self.channel(fm))
        if mode == "spatial_channel":
            return self.channel(self.spatial(fm))
        if mode == "channel":
            return self.channel(fm)
        if mode == "spatial":
            return self.spatial(fm)
        return fm


def channel_attention(fm: Tensor, module: ChannelAttention) -> Tensor:
    return module(fm)


def spatial_attention(fm: Tensor, module: SpatialAttention) -> Tensor:
    return module(fm)


def attention_module(fm: Tensor, module: AttentionModule) -> Tensor:
    return module(fm)


class Branch(Module):
    def __init__(self, config: BranchConfig, attention: AttentionConfig,
                 rng: np.random.Generator | None = None):
        self.config = config
        self.blocks = []
        cin = 3
        for spec in config.blocks:
            self.blocks.append(ConvPool(cin, spec, rng))
            cin = spec.channels
        att_channels = config.blocks[config.attention_index - 1].channels
        self.attention = AttentionModule(att_channels, attention, rng)

    def feature_map(self, x: Tensor) -> Tensor:
        for i, block in enumerate(self.blocks):
            if i == self.config.attention_index:
                x = self.attention(x)
            x = block(x)
        return x

    def forward(self, x: Tensor) -> Tensor:
        return ops.global_avg_pool(self.feature_map(x))


class DetectorNet(Module):
    """``branches`` selects which of the three views are used (ablations drop one)."""

    def __init__(self, branches=(1, 2, 3), attention: AttentionConfig | None = None,
                 rng: np.random.Generator | None = None):
        self.branch_ids = self.preset(branches)
        self.attention_config = attention or AttentionConfig()
        self.branches = [Branch(BranchConfig.standard(b), self.attention_config, rng)
                         for b in self.branch_ids]
        width = sum(b.config.out_channels for b in self.branches)
        self.fc = Linear(width, 2, rng)

    @staticmethod
    def preset(branches) -> tuple[int, ...]:
        """Normalize a preset name or id collection to sorted branch ids."""
        if isinstance(branches, str):
            if branches not in BRANCH_PRESETS:
                raise ValueError(f"unknown branch preset '{branches}'")
            branches = BRANCH_PRESETS[branches]
        ids = tuple(sorted(set(branches)))
        if not ids or any(b not in (1, 2, 3) for b in ids):
            raise ValueError(f"invalid branch selection {branches!r}")
        return ids

    @property
    def feature_width(self) -> int:
        return self.fc.weight.shape[1]

    def _check(self, views) -> list[Tensor]:
        if len(views) != 3:
            raise DimensionError("detector expects three views (hf_original, rgb, hf_rendered)")
        used = []
        for b, branch in zip(self.branch_ids, self.branches):
            v = views[b - 1]
            v = v if isinstance(v, Tensor) else Tensor(np.asarray(v))
            if v.data.ndim != 4 or v.shape[1] != 3:
                raise DimensionError(f"view {b} must be N x 3 x H x W, got {v.shape}")
            f = branch.config.downsample
            if v.shape[2] % f or v.shape[3] % f:
                raise DimensionError(f"view {b} extent {v.shape[2:]} not divisible by {f}")
            used.append(v)
        if len({v.shape for v in used}) != 1:
            raise DimensionError("views must share one shape")
        return used

    def logits(self, views) -> Tensor:
        used = self._check(views)
        feats = [branch(v) for branch, v in zip(self.branches, used)]
        return self.fc(concat(feats, axis=1) if len(feats) > 1 else feats[0])

    def forward(self, views) -> Tensor:
        return ops.softmax(self.logits(views), axis=-1)


# --- metrics ------------------------------------------------------------------

@dataclass(frozen=True)
class Metrics:
    """Rates in [0, 1]; ``None`` where the denominator is empty."""

    acc: float
    tpr: float | None
    tnr: float | None
    counts: tuple[int, int, int, int] = (0, 0, 0, 0)  # tp, fn, tn, fp

    @classmethod
    def from_counts(cls, tp: int, fn: int, tn: int, fp: int) -> "Metrics":
        total = tp + fn + tn + fp
        if total == 0:
            raise ValueError("no samples to score")
        return cls((tp + tn) / total,
                   tp / (tp + fn) if tp + fn else None,
                   tn / (tn + fp) if tn + fp else None,
                   (tp, fn, tn, fp))

    @classmethod
    def from_predictions(cls, labels, predictions) -> "Metrics":
        y = np.asarray(labels).astype(int)
        p = np.asarray(predictions).astype(int)
        return cls.from_counts(int(np.sum((y == 1) & (p == 1))), int(np.sum((y == 1) & (p == 0))),
                               int(np.sum((y == 0) & (p == 0))), int(np.sum((y == 0) & (p == 1))))

    def row(self, name: str = "") -> str:
        fmt = lambda v: "NA" if v is None else f"{100 * v:.2f}"
        return ",".join([name, fmt(self.acc), fmt(self.tpr), fmt(self.tnr)])


# --- training -----------------------------------------------------------------

@dataclass
class ViewData:
    """Stacked, centered views plus labels, ready for minibatching."""

    views: tuple[np.ndarray, np.ndarray, np.ndarray]
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if any(len(v) != len(self.labels) for v in self.views):
            raise ValueError("views and labels differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx) -> tuple[list[np.ndarray], np.ndarray]:
        return [v[idx] for v in self.views], self.labels[idx]


@dataclass
class TrainConfig:
    lr: float = 0.0008
    batch_size: int = 64
    max_epochs: int = 400
    flip_p: tuple[float, float] = (0.3, 0.3)
    patience: int | None = None


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    train_acc: float
    val_acc: float


@dataclass
class TrainResult:
    history: list[EpochRecord] = field(default_factory=list)
    optimizer: Adam | None = None
    best_epoch: int = 0

    def csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,train_acc,val_acc"]
        for r in self.history:
            lines.append(f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.train_acc!r},{r.val_acc!r}")
        return "\n".join(lines) + "\n"


def _flip_batch(views, rng, p_h, p_v):
    """Draw one flip pair per sample and apply it to every view of that sample."""
    out = [v.copy() for v in views]
    for i in range(len(out[0])):
        hf, vf = draw_flips(rng, p_h, p_v)
        if hf or vf:
            for v in out:
                v[i] = apply_flips(v[i], hf, vf, layout="chw")
    return out


def predict_proba(net: DetectorNet, data: ViewData, batch_size: int = 64) -> np.ndarray:
    net.eval()
    out = []
    for start in range(0, len(data), batch_size):
        views, _ = data.take(slice(start, start + batch_size))
        out.append(net(views).data)
    return np.concatenate(out) if out else np.zeros((0, 2))


def _loss_acc(net, data, batch_size):
    probs = predict_proba(net, data, batch_size)
    p = np.clip(probs[np.arange(len(data)), data.labels], 1e-12, None)
    return float(-np.mean(np.log(p))), float(np.mean(probs.argmax(1) == data.labels))


def train(net: DetectorNet, train_data: ViewData, val_data: ViewData, rng: np.random.Generator,
          config: TrainConfig | None = None, optimizer: Adam | None = None, log=None) -> TrainResult:
    """Minibatch Adam on softmax cross-entropy with consistent per-sample flips.

    With ``patience`` set, training stops after that many epochs without a
    validation-loss improvement and the best weights are restored.
    """
    config = config or TrainConfig()
    if len(train_data) == 0 or len(val_data) == 0:
        raise ValueError("train and val splits must be non-empty")
    opt = optimizer or Adam(net.parameters(), lr=config.lr)
    result = TrainResult(optimizer=opt)
    best = (np.inf, None)
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        net.train()
        order = rng.permutation(len(train_data))
        loss_sum, correct = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            views, labels = train_data.take(idx)
            views = _flip_batch(views, rng, *config.flip_p)
            opt.zero_grad()
            logits = net.logits(views)
            loss = ops.cross_entropy_with_logits(logits, labels)
            loss.backward()
            opt.step()
            loss_sum += float(loss.data) * len(idx)
            correct += int(np.sum(logits.data.argmax(1) == labels))
        val_loss, val_acc = _loss_acc(net, val_data, config.batch_size)
        rec = EpochRecord(epoch, loss_sum / len(order), val_loss, correct / len(order), val_acc)
        result.history.append(rec)
        if log is not None:
            log(rec)
        if config.patience is not None:
            if val_loss < best[0]:
                best, stale = (val_loss, {k: v.copy() for k, v in net.state_dict().items()}), 0
                result.best_epoch = epoch
            else:
                stale += 1
                if stale >= config.patience:
                    break
    if config.patience is not None and best[1] is not None:
        net.load_state_dict(best[1])
    else:
        result.best_epoch = len(result.history)
    return result


def evaluate(net: DetectorNet, data: ViewData, batch_size: int = 64) -> Metrics:
    if len(data) == 0:
        raise ValueError("cannot evaluate an empty split")
    probs = predict_proba(net, data, batch_size)
    return Metrics.from_predictions(data.labels, probs.argmax(axis=1))
