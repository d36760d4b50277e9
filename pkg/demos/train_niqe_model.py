"""
Training the shipped NIQE pristine model
========================================

The package ships one pre-trained NIQE model so scores are reproducible
without any download. This script rebuilds it from ten greyscale-convertible
images bundled with scikit-image, using the default 96-pixel patches and a
0.75 sharpness threshold.

Five other scikit-image pictures (astronaut, coffee, chelsea, clock, coins)
are deliberately left out; the acceptance suite scores them clean and with
heavy noise against this model.

Run from the repository root::

    python demos/train_niqe_model.py            # rewrite the shipped model
    python demos/train_niqe_model.py out.json   # write elsewhere
"""

import sys
import warnings
from pathlib import Path

import numpy as np
import skimage.data

from flarebo import niqe

TRAINING_IMAGES = (
    "camera", "rocket", "grass", "gravel", "brick",
    "hubble_deep_field", "retina", "immunohistochemistry", "moon", "cell",
)

target = Path(sys.argv[1]) if len(sys.argv) > 1 else (
    Path(__file__).resolve().parents[1] / "src" / "flarebo" / "data" / "niqe_pristine.json"
)

# Some of these are RGB, some are 8-bit grey, one is 16-bit-ish float; as_image
# accepts either layout and NIQE works on BT.601 luma internally.
images = []
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    for name in TRAINING_IMAGES:
        arr = getattr(skimage.data, name)().astype(np.float64)
        images.append(niqe.as_image(arr))
        print(f"{name:22s} {arr.shape}")

per_image = niqe.training_patch_features(images)
print("sharp patches per image:", [len(f) for f in per_image])

model = niqe.niqe_train(images)
model.save(target)
print(f"wrote {target}")

# A quick look at how the training images score against the model built
# from the other nine.  These are the baseline numbers the held-out check
# in the test suite is compared to.
loo = niqe.leave_one_out_scores(images)
for name, s in zip(TRAINING_IMAGES, loo):
    print(f"  leave-one-out {name:22s} {s:7.3f}")
print(f"median {np.median(loo):.3f}")
