"""
Enhancing a synthetic low-light pair
====================================

Takes a well-exposed picture from scikit-image as the reference, fakes a
low-light capture from it (gamma darkening, a slight blue cast, Poisson-like
shot noise, 8-bit quantisation), then lets the optimiser tune the eight
pipeline parameters against the reference.

Run from the repository root::

    python demos/enhance_synthetic_pair.py [out_dir]

Writes ``low.png``, ``enhanced.png``, ``reference.png``, the per-iteration
trace and a luminance-histogram figure into ``out_dir`` (default
``demo_out/``). Coffee is a warm-toned scene, and the grey-world stage
always neutralises the cast: even the reference itself, sent through the
pipeline with neutral settings, scores only about 14.5 dB against itself.
The dark input starts near 8 dB and the search lands around 13 dB. With the small budget below this takes under a
minute.
"""

import sys
from pathlib import Path

import numpy as np
import skimage.data
import skimage.transform

from flarebo.harness import emit_histograms, histogram_l1
from flarebo.imagecore import srgb8, write_png
from flarebo.metrics import psnr, ssim
from flarebo.optimizer import BoConfig, optimise_image

out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("demo_out")
rng = np.random.default_rng(0)

ref_arr = skimage.transform.resize(skimage.data.coffee(), (192, 256), anti_aliasing=True) * 255.0
unit = ref_arr / 255.0
dark = unit ** 2.2 * 0.25 * np.array([0.9, 0.95, 1.1])
# shot noise grows with the signal, as on a real sensor
noisy = dark + rng.normal(0.0, 1.0, dark.shape) * np.sqrt(dark / 400.0)
low = srgb8(np.clip(np.round(noisy * 255.0), 0, 255))
ref = srgb8(np.round(ref_arr))

# 12 Sobol points, then 28 GP-guided ones.
config = BoConfig(n_init=12, n_total=40, seed=0)
res = optimise_image(low, ref, config=config)

print("chosen parameters:")
for name, value in res.theta.as_dict().items():
    print(f"  {name:8s} {value:8.4f}")
r = res.report
print(f"low input: PSNR {psnr(low, ref):.2f} dB  SSIM {ssim(low, ref):.4f}")
print(f"PSNR {r.psnr:.2f} dB  SSIM {r.ssim:.4f}  NIQE {r.niqe:.2f}  objective {r.objective:.3f}")
print(f"{res.seconds:.1f} s")

write_png(low, out_dir / "low.png")
write_png(res.image, out_dir / "enhanced.png")
write_png(ref, out_dir / "reference.png")
res.write_trace(out_dir / "trace.jsonl")
fig = emit_histograms(low, res.image, ref, out_dir / "histograms.png")
print(f"histogram L1 to reference: low {histogram_l1(low, ref):.3f}, enhanced {histogram_l1(res.image, ref):.3f}")
print(f"wrote {out_dir}/ (figure: {fig.name})")
