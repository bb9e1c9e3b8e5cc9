"""Sweep the scoring difficulty and watch repeatability respond.

Scoring with harder synthetic viewpoints favors keypoints that survive
them, so measured repeatability on fixed pairs rises with the difficulty
parameter.  (A small sweep; the acceptance suite runs the full one.)
"""

from stabscore import Stream
from stabscore.evalkit import run_beta_sweep
from stabscore.synth import make_texture

SEED = 2
BETAS = [1.189, 1.681, 2.378, 3.363]

imgs = [make_texture(SEED + i, 256, 256) for i in range(4)]
report = run_beta_sweep(imgs, BETAS, Stream(SEED), n=128, m=24)

print("beta   mean rep   mean MMA   median corner err")
for beta in BETAS:
    row = report.aggregates["per_beta"][repr(beta)]
    print(f"{beta:5.3f}  {row['mean_repeatability']:8.3f}  "
          f"{row['mean_mma']:8.3f}  {row['median_corner_error']:10.3f}")
rho = report.aggregates.get("spearman_rep_vs_beta")
print(f"\nSpearman(beta, mean repeatability) = {rho:.3f}")
