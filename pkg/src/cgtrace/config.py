"""Run configuration as flat ``key = value`` text.

Blank lines and ``#`` comments are ignored; unknown keys and malformed or
out-of-range values are rejected on load.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .detector import ATTENTION_MODES, BRANCH_PRESETS


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    image_size: int = 256
    lr: float = 0.0008
    batch_size: int = 64
    max_epochs: int = 400
    patience: int = 0  # 0 disables early stopping
    cutoff: float = 30.0  # radius at 256 x 256; scaled with image size
    flip_p: float = 0.3
    attention: str = "channel_spatial"
    branches: str = "full"
    renderer_l1: float = 1.0  # lambda
    renderer_adv: float = 0.01  # alpha
    renderer_lr: float = 1e-4
    renderer_steps: int = 20
    renderer_images: int = 16
    renderer_blocks: int = 16
    segmenter_k: int = 8
    jpeg_qualities: tuple[int, ...] = (95, 85, 75)
    noise_levels: tuple[float, ...] = (0.01, 0.02)
    salt_pepper: tuple[float, ...] = (0.01, 0.02)

    def __post_init__(self):
        checks = [
            (self.image_size >= 16 and self.image_size % 16 == 0, "image_size must be a positive multiple of 16"),
            (self.lr > 0 and self.renderer_lr > 0, "learning rates must be positive"),
            (self.batch_size >= 2, "batch_size must be at least 2"),
            (self.max_epochs >= 1, "max_epochs must be at least 1"),
            (self.patience >= 0, "patience must be non-negative"),
            (self.cutoff >= 0, "cutoff must be non-negative"),
            (0 <= self.flip_p <= 1, "flip_p must be in [0, 1]"),
            (self.attention in ATTENTION_MODES, f"attention must be one of {ATTENTION_MODES}"),
            (self.branches in BRANCH_PRESETS, f"branches must be one of {tuple(BRANCH_PRESETS)}"),
            (self.renderer_l1 >= 0 and self.renderer_adv >= 0, "renderer weights must be non-negative"),
            (self.renderer_steps >= 0 and self.renderer_images >= 1, "invalid renderer schedule"),
            (self.renderer_blocks >= 1, "renderer_blocks must be positive"),
            (self.segmenter_k >= 1, "segmenter_k must be positive"),
            (all(1 <= q <= 100 for q in self.jpeg_qualities), "JPEG qualities must be in 1..100"),
            (all(v >= 0 for v in self.noise_levels), "noise levels must be non-negative"),
            (all(0 <= v <= 1 for v in self.salt_pepper), "salt-pepper densities must be in [0, 1]"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    @property
    def scaled_cutoff(self) -> float:
        return self.cutoff * self.image_size / 256.0

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def dumps(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{source}:{lineno}: expected key = value")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ValueError(f"{source}:{lineno}: unknown key '{key}'")
            try:
                values[key] = _convert(types[key], val)
            except ValueError as exc:
                raise ValueError(f"{source}:{lineno}: bad value for '{key}': {val!r}") from exc
        return cls(**values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        return cls.parse(path.read_text(), str(path))


def _convert(kind: str, val: str):
    if kind == "int":
        return int(val)
    if kind == "float":
        return float(val)
    if kind == "str":
        return val
    if kind == "tuple[int, ...]":
        return _ints(val)
    if kind == "tuple[float, ...]":
        return _floats(val)
    raise ValueError(f"unsupported field type {kind}")
