"""Do low-expected-error keypoints give better homography estimates?

Each trial warps the scene, verifies correspondences against the ground
truth, and fits one homography from the most stable quartile of matches
and one from the least stable quartile.  The paired comparison isolates
the effect of measurement quality.  (20 trials here; the acceptance suite
runs 100.)
"""

import json

from stabscore import BetaConfig, Stream
from stabscore.evalkit import run_eme_vs_accuracy
from stabscore.synth import make_texture

SEED = 5

img = make_texture(SEED, 320, 320)
report = run_eme_vs_accuracy(img, trials=20, cfg=BetaConfig(beta=2.0),
                             stream=Stream(SEED))

print(json.dumps(report.aggregates, indent=2, sort_keys=True))
agg = report.aggregates
print(f"\nlow-eta quartile median corner error : {agg['median_err_low_eta']:.3f} px")
print(f"high-eta quartile median corner error: {agg['median_err_high_eta']:.3f} px")
print(f"paired wins (low better): {agg['low_eta_wins']} of "
      f"{agg['low_eta_wins'] + agg['low_eta_losses']} decided trials")
