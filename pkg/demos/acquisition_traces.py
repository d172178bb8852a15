"""Where do photographs and renderings differ?

A photograph passes through a colour filter array, demosaicing and JPEG
compression; a rendering does not. This walk-through synthesizes one image
of each kind from the same scene and compares the traces each stage leaves.

    python3 demos/acquisition_traces.py
"""

import numpy as np

from cgtrace.acquisition import (
    DemosaicKernel,
    QuantTable,
    bayer_mosaic,
    compression_trace,
    demosaic,
    image_rng,
    pattern_trace,
    synth_cg,
    synth_pg,
)
from cgtrace.imaging import highpass_residual
from cgtrace.manifest import CG, PG
from cgtrace.texture import asm, compute_glcm, homogeneity

SIZE = 128

pg = synth_pg(image_rng(0, 0, PG), SIZE)
cg = synth_cg(image_rng(0, 0, CG), SIZE)
print(f"one scene, two renderings: {SIZE}x{SIZE}")

# 1. Resampling the Bayer mosaic. The smooth rendering is reproduced almost
#    exactly; the photograph's sensor noise and JPEG residue are not.
kernel = DemosaicKernel.bilinear()
for name, img in (("photo", pg), ("render", cg)):
    again = demosaic(bayer_mosaic(img), kernel)
    err = np.abs(again.pixels - img.pixels)[4:-4, 4:-4].mean()
    print(f"  CFA re-interpolation error  {name:6s} {err:.5f}")

# 2. Pattern noise: the average denoising residual of a stack of images.
stack = [synth_pg(image_rng(0, i, PG), SIZE) for i in range(8)]
renders = [synth_cg(image_rng(0, i, CG), SIZE) for i in range(8)]
print(f"  pattern trace |mean|        photo  {pattern_trace(stack).summary:.5f}")
print(f"  pattern trace |mean|        render {pattern_trace(renders).summary:.5f}")

# 3. Compression: rounding to 8-bit samples after the inverse DCT leaves at
#    most half a grey level of error per pixel while the block stays in range.
rng = np.random.default_rng(1)
table = QuantTable.from_quality(75)
levels = np.zeros((8, 8))
levels[:3, :3] = np.round(rng.normal(0, 1, (3, 3)))
tr = compression_trace(levels, table)
print(f"  compression trace           max |err| {np.abs(tr).max():.3f} (<= 0.5)")

# 4. High-frequency energy and texture statistics.
for name, img in (("photo", pg), ("render", cg)):
    hf = highpass_residual(img.pixels, 30 * SIZE / 256)
    g = compute_glcm(img)
    print(f"  {name:6s} HF energy {np.mean(hf ** 2):.2e}  homogeneity {homogeneity(g):.3f}"
          f"  ASM {asm(g):.4f}")
