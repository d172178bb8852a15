"""Texture rendering as a detector input.

The renderer re-synthesizes an image conditioned on its segmentation. A
freshly zeroed renderer is the identity; after a few adversarial steps it
starts to change textures, and the high-pass residual of the rendering
becomes the third view the detector sees.

    python3 demos/texture_rendering.py
"""

import numpy as np

from cgtrace.acquisition import image_rng, synth_cg, synth_pg
from cgtrace.core import zero_parameters
from cgtrace.imaging import highpass_residual
from cgtrace.manifest import CG, PG
from cgtrace.renderer import (
    AdversarialConfig,
    Discriminator,
    RendererConfig,
    TextureRenderer,
    adversarial_train,
    render,
)
from cgtrace.segmentation import segment_simple
from cgtrace.texture import texture_delta

SIZE, K = 32, 8
rng = np.random.default_rng(0)
images = [synth_pg(image_rng(0, i, PG), SIZE) for i in range(4)]
images += [synth_cg(image_rng(0, i, CG), SIZE) for i in range(4)]
segs = [segment_simple(im, K, np.random.default_rng([0, 2, i])) for i, im in enumerate(images)]
print(f"segmented {len(images)} images into at most {K} regions:",
      [int(np.unique(s.labels).size) for s in segs])

renderer = TextureRenderer(RendererConfig(num_classes=K, num_blocks=4), rng)
zeroed = TextureRenderer(RendererConfig(num_classes=K, num_blocks=4))
zero_parameters(zeroed)
print("zeroed renderer is the identity:",
      all(np.array_equal(render(im, s, zeroed).pixels, im.pixels) for im, s in zip(images, segs)))

hist = adversarial_train(renderer, Discriminator(rng), list(zip(images, segs)), 30, rng,
                         AdversarialConfig(l1_weight=1.0, adv_weight=0.01, lr=1e-4))
print(f"adversarial fine-tuning: L1 {hist['l1'][0]:.4f} -> {hist['l1'][-1]:.4f}")

cutoff = 30 * SIZE / 256
for label, sl in (("photo", slice(0, 4)), ("render", slice(4, 8))):
    deltas, energy = [], []
    for im, s in zip(images[sl], segs[sl]):
        out = render(im, s, renderer)
        deltas.append(texture_delta(im, out))
        energy.append(np.mean(highpass_residual(out.pixels, cutoff) ** 2))
    print(f"  {label:6s} homogeneity change {np.mean(deltas):+.4f}  HF energy of rendering {np.mean(energy):.2e}")
