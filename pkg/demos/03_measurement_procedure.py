"""Walk through the corner measurement procedure on small patches.

A measurement takes a patch, evaluates the corner response, suppresses
non-maxima, picks the strongest interior candidate, and applies one
guarded Newton step for subpixel precision.  Patches without a reliable
structure fail rather than returning a bogus point.
"""

import numpy as np

from stabscore import measure, nms_candidates, refine, response
from stabscore.image import ImageGray
from stabscore.synth import corner_patch

# A corner displaced a fraction of a pixel from the patch center.
patch = corner_patch(13, offset=(0.35, -0.15))
out = measure(patch)
print(f"corner at center + (0.35, -0.15): measured {out.point}")

# The same pipeline by hand: response -> suppression -> refinement.
score = response(patch)
xy, vals = nms_candidates(score, radius=1, threshold=1e-6)
print(f"suppression kept {len(xy)} candidates; strongest at "
      f"({int(xy[0, 0])}, {int(xy[0, 1])}) with response {vals[0]:.2e}")
refined = refine(score, xy[0])
print(f"refined candidate: {refined.point}")

# Failure cases: no structure, and a peak too far from its pixel.
flat = ImageGray(np.full((13, 13), 0.5))
print(f"flat patch measured ok: {measure(flat).ok}")

noisy = corner_patch(13, offset=(0.0, 0.0), amplitude=0.002)
print(f"near-noise-level corner measured ok: {measure(noisy).ok} "
      f"(peak response {response(noisy).values.max():.2e} below threshold)")
