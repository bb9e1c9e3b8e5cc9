"""Corner keypoint stability scoring under synthetic viewpoint change.

The package detects Shi-Tomasi corners, estimates each keypoint's expected
measurement error under randomly sampled homographies of tunable
difficulty, ranks keypoints by the resulting stability score, and ships a
two-view homography estimation harness for validating that stable
keypoints yield better estimates.
"""

from .errors import (DomainError, GeometryError, ImageFormatError, RangeError,
                     StabscoreError)
from .streams import Stream
from .image import (ImageGray, PatchSpec, PatchWarp, load_image, sample_bilinear,
                    save_pgm, warp_patch)
from .homography import (BETA_GRID, BetaConfig, Homography, generate, project,
                         project_many, solve_4pt)
from .shitomasi import (MeasurementOutcome, ScoreMap, measure, nms_candidates,
                        refine, response, write_score_map)
from .stability import (BetaEmeEstimate, EmeVariant, bound_value, estimate,
                        estimate_batch, failure_distance, stability_score)
from .detector import (DetectResult, GroundTruthRecord, GtClass, Keypoint,
                       Thresholds, detect, export_ground_truth, supervision_loss)
from .geometry import (Correspondence, RansacResult, RefineResult, corner_error,
                       estimate_dlt, ransac, refine_homography,
                       transfer_log_likelihood)
from .evalkit import (ExperimentReport, ImagePairTask, Matches, load_pairs,
                      make_pair, match_ncc, mma, repeatability,
                      run_beta_sweep, run_eme_vs_accuracy, save_pair)

__version__ = "0.1.0"

__all__ = [
    "BETA_GRID", "BetaConfig", "BetaEmeEstimate", "Correspondence",
    "DetectResult", "DomainError", "EmeVariant", "ExperimentReport",
    "GeometryError", "GroundTruthRecord", "GtClass", "Homography",
    "ImageFormatError", "ImageGray", "ImagePairTask", "Keypoint", "Matches",
    "MeasurementOutcome", "PatchSpec", "PatchWarp", "RangeError",
    "RansacResult", "RefineResult", "ScoreMap", "StabscoreError", "Stream",
    "Thresholds", "bound_value", "corner_error", "detect", "estimate",
    "estimate_batch", "estimate_dlt", "export_ground_truth",
    "failure_distance", "generate", "load_image", "load_pairs", "make_pair",
    "match_ncc", "measure", "mma", "nms_candidates", "project",
    "project_many", "ransac", "refine", "refine_homography", "repeatability",
    "response", "run_beta_sweep", "run_eme_vs_accuracy", "sample_bilinear",
    "save_pair", "save_pgm", "solve_4pt", "stability_score",
    "supervision_loss", "transfer_log_likelihood", "warp_patch",
    "write_score_map",
]
