"""Export supervision targets for learning a stability predictor.

Strongly salient candidates get a measured error target; candidates below
the noise threshold are labeled with the saturation value outright; the
ambiguous band in between is excluded.  The squared-error objective scores
a predictor against these targets.
"""

import numpy as np

from stabscore import BetaConfig, Stream, Thresholds, export_ground_truth, supervision_loss
from stabscore.detector import GtClass, write_ground_truth_csv
from stabscore.synth import make_texture

SEED = 11

img = make_texture(SEED, 256, 256)
thresholds = Thresholds(t_salient=0.01, t_noise=0.0001)

records = export_ground_truth(img, n=256, cfg=BetaConfig(beta=2.828),
                              thresholds=thresholds, stream=Stream(SEED), m=64)
n_salient = sum(r.cls is GtClass.SALIENT for r in records)
print(f"records: {len(records)} ({n_salient} salient, {len(records) - n_salient} noise)")

salient_targets = [r.target_eta for r in records if r.cls is GtClass.SALIENT]
print(f"salient target range: [{min(salient_targets):.3f}, {max(salient_targets):.3f}] px")

# A predictor that always answers with the mean target:
mean_target = float(np.mean([r.target_eta for r in records]))
baseline = supervision_loss([mean_target] * len(records), records)
perfect = supervision_loss([r.target_eta for r in records], records)
print(f"loss of mean-constant predictor: {baseline:.4f}")
print(f"loss of perfect predictor      : {perfect:.4f}")

write_ground_truth_csv("ground_truth_demo.csv", records)
print("wrote ground_truth_demo.csv")
