"""End-to-end two-view homography estimation on a synthetic pair.

A textured image is warped by a generated homography; keypoints are
detected in both views, matched by normalized cross-correlation, fit
robustly, and the estimate is compared against the ground truth.
"""

from stabscore import BetaConfig, Correspondence, Stream, corner_error, detect, ransac
from stabscore.evalkit import make_pair, match_ncc, mma, repeatability
from stabscore.geometry import estimate_dlt, refine_homography, transfer_log_likelihood
from stabscore.synth import make_texture

SEED = 21

img = make_texture(SEED, 320, 320)
pair = make_pair(img, beta=2.0, stream=Stream(SEED))
cfg = BetaConfig(beta=2.0)

res_a = detect(pair.img_a, 256, cfg, Stream(SEED).child(1), m=48)
res_b = detect(pair.img_b, 256, cfg, Stream(SEED).child(2), m=48)
pos_a, pos_b = res_a.positions(), res_b.positions()

rep = repeatability(pos_a, pos_b, pair.h_ab, 3.0, (320, 320), (320, 320))
print(f"repeatability at 3px: {rep:.3f}")

matches = match_ncc(pair.img_a, pos_a, pair.img_b, pos_b)
print(f"NCC matches: {len(matches)}, MMA at 3px: {mma(matches, pair.h_ab, 3.0):.3f}")

corrs = [Correspondence(k=tuple(matches.pts_b[i]), k_prime=tuple(matches.pts_a[i]))
         for i in range(len(matches))]
result = ransac(corrs, 3.0, Stream(SEED).child(3))
print(f"RANSAC: {int(result.inlier_mask.sum())} inliers "
      f"of {len(corrs)} after {result.n_hypotheses} hypotheses")

inliers = [c for c, keep in zip(corrs, result.inlier_mask) if keep]
h_dlt = estimate_dlt(inliers)
refined = refine_homography(h_dlt, inliers)
print(f"log-likelihood: DLT {transfer_log_likelihood(inliers, h_dlt):.2f} "
      f"-> refined {refined.log_likelihood:.2f} in {refined.n_iter} steps")

print(f"corner error vs ground truth: "
      f"DLT {corner_error(h_dlt, pair.h_ab, (320, 320)):.3f} px, "
      f"refined {corner_error(refined.homography, pair.h_ab, (320, 320)):.3f} px, "
      f"ransac pipeline {corner_error(result.homography, pair.h_ab, (320, 320)):.3f} px")
