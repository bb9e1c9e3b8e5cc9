"""The estimator's bound family and the second-moment decomposition.

The mean projection distance is the tightest report; its square-root
second-moment bound holds unconditionally; the raw second moment bounds it
once the mean reaches one pixel; and the spectral form bounds the
covariance trace.  The decomposition splits the second moment into spread
(covariance trace) and offset (squared distance of the keypoint from the
mean projection).
"""

import math

from stabscore import (BetaConfig, EmeVariant, Stream, bound_value, estimate,
                       stability_score)
from stabscore.synth import checkerboard

img = checkerboard(96, 96, cell=16)
cfg = BetaConfig(beta=2.828)
k = (48.0, 48.0)

est = estimate(img, k, cfg, Stream(1), m=256)
print(f"measured keypoint {k} with m={est.m_total}, failures={est.m_failed}")
print(f"  mean distance        : {est.mean_dist:.4f} px")
print(f"  second moment        : {est.second_moment:.4f} px^2")
print(f"  sqrt second moment   : {math.sqrt(est.second_moment):.4f} px")
print(f"  covariance trace     : {est.cov_trace:.4f} px^2")
print(f"  squared offset       : {est.delta_sq:.4f} px^2")
print(f"  2 * spectral norm    : {est.spectral_2x:.4f} px^2")

print("\nbound chain:")
print(f"  mean <= sqrt(second): {est.mean_dist:.4f} <= {math.sqrt(est.second_moment):.4f}")
if est.mean_dist >= 1.0:
    print(f"  mean <= second      : {est.mean_dist:.4f} <= {est.second_moment:.4f}")
print(f"  trace <= 2*spectral : {est.cov_trace:.4f} <= {est.spectral_2x:.4f}")

if est.m_failed == 0:
    lhs = est.cov_trace + est.delta_sq
    print(f"\ndecomposition: trace + offset = {lhs:.6f} "
          f"vs second moment {est.second_moment:.6f}")

print("\nstability scores per variant:")
for variant in EmeVariant:
    eta = bound_value(est, variant)
    print(f"  {variant.value:20s}: eta {eta:7.4f} -> score {stability_score(eta):.5f}")
