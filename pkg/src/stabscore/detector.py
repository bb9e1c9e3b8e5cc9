"""End-to-end detection: rank corner candidates by stability score,
export supervision targets, and evaluate the supervision objective."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .homography import BetaConfig
from .image import ImageGray
from .shitomasi import (DEFAULT_SIGMA, FULL_NMS_RADIUS, nms_candidates,
                        refine_offsets, response)
from .stability import (DEFAULT_PATCH_SIZE, DEFAULT_SAMPLES, BetaEmeEstimate,
                        EmeVariant, bound_value, estimate_batch,
                        failure_distance, keypoint_in_bounds, stability_score,
                        support_margin)
from .streams import Stream, child_keys

OVERSAMPLE = 4
RESPONSE_FLOOR = 1e-8


@dataclass(frozen=True)
class Keypoint:
    """A scored keypoint: subpixel position, saliency, and stability."""

    x: float
    y: float
    s: float
    eme: BetaEmeEstimate | None = None
    eta: float | None = None
    score: float | None = None


@dataclass(frozen=True)
class Thresholds:
    """Saliency split for supervision export.

    Candidates above ``t_salient`` are trusted enough to measure; those
    below ``t_noise`` are labeled as unrepeatable outright; the band in
    between is excluded.
    """

    t_salient: float = 0.01
    t_noise: float = 0.0001

    def __post_init__(self):
        if not (0.0 < self.t_noise < self.t_salient):
            raise ValueError(
                f"need 0 < t_noise < t_salient, got {self.t_noise}, {self.t_salient}")


class GtClass(Enum):
    SALIENT = "salient"
    NOISE = "noise"


@dataclass(frozen=True)
class GroundTruthRecord:
    x: float
    y: float
    s: float
    target_eta: float
    cls: GtClass


@dataclass(frozen=True)
class DetectResult:
    keypoints: list[Keypoint]
    shortage: bool
    n_candidates: int
    n_boundary_skipped: int

    def positions(self) -> np.ndarray:
        return np.array([[kp.x, kp.y] for kp in self.keypoints]).reshape(-1, 2)


def _subpixel_positions(score_values: np.ndarray, xy: np.ndarray) -> np.ndarray:
    """Refine integer candidates on the full-image response surface.

    Candidates whose refinement fails keep their integer position.
    """
    pos = xy.astype(np.float64)
    h, w = score_values.shape
    interior = ((xy[:, 0] >= 1) & (xy[:, 0] <= w - 2)
                & (xy[:, 1] >= 1) & (xy[:, 1] <= h - 2))
    idx = np.nonzero(interior)[0]
    if idx.size:
        rows = xy[idx, 1][:, None, None] + np.arange(-1, 2)[None, :, None]
        cols = xy[idx, 0][:, None, None] + np.arange(-1, 2)[None, None, :]
        neigh = score_values[rows, cols]
        delta, ok = refine_offsets(neigh)
        pos[idx[ok], 0] += delta[ok, 0]
        pos[idx[ok], 1] += delta[ok, 1]
    return pos


def rank_candidates(img: ImageGray, xy: np.ndarray, saliency: np.ndarray,
                    cfg: BetaConfig, stream: Stream, n: int,
                    variant: EmeVariant = EmeVariant.SQRT_SECOND_MOMENT,
                    m: int = DEFAULT_SAMPLES,
                    patch_size: int = DEFAULT_PATCH_SIZE,
                    margin: int | None = None,
                    refine_positions: bool = True,
                    score_values: np.ndarray | None = None,
                    threads: int | None = None) -> DetectResult:
    """Score prepared candidates by stability and rank them.

    Candidate ``i`` draws its Monte-Carlo samples from ``stream.child(i)``,
    so the ranking does not depend on evaluation order.  Candidates too
    close to the border for warping are skipped and counted.
    """
    if margin is None:
        margin = support_margin(cfg, patch_size)
    keys = child_keys(stream.key, np.arange(xy.shape[0]))

    if refine_positions and score_values is not None and xy.shape[0]:
        pos = _subpixel_positions(score_values, xy)
    else:
        pos = xy.astype(np.float64)

    keep = np.array([
        keypoint_in_bounds(img.data.shape, pos[i], margin)
        for i in range(pos.shape[0])
    ], dtype=bool) if pos.shape[0] else np.zeros(0, dtype=bool)
    n_skipped = int(pos.shape[0] - keep.sum())

    kept_idx = np.nonzero(keep)[0]
    ests = estimate_batch(img, pos[kept_idx], cfg, keys[kept_idx], m=m,
                          patch_size=patch_size, threads=threads) if kept_idx.size else []

    kps = []
    for local, i in enumerate(kept_idx):
        est = ests[local]
        eta = bound_value(est, variant)
        kps.append(Keypoint(
            x=float(pos[i, 0]), y=float(pos[i, 1]), s=float(saliency[i]),
            eme=est, eta=eta, score=stability_score(eta)))
    kps.sort(key=lambda kp: (-kp.score, -kp.s, kp.y, kp.x))
    shortage = len(kps) < n
    return DetectResult(keypoints=kps[:n], shortage=shortage,
                        n_candidates=int(xy.shape[0]),
                        n_boundary_skipped=n_skipped)


def detect(img: ImageGray, n: int, cfg: BetaConfig, stream: Stream,
           variant: EmeVariant = EmeVariant.SQRT_SECOND_MOMENT,
           m: int = DEFAULT_SAMPLES, oversample: int = OVERSAMPLE,
           patch_size: int = DEFAULT_PATCH_SIZE,
           nms_radius: int = FULL_NMS_RADIUS,
           response_floor: float = RESPONSE_FLOOR,
           sigma_window: float = DEFAULT_SIGMA,
           refine_positions: bool = True,
           margin: int | None = None,
           threads: int | None = None) -> DetectResult:
    """Detect up to ``n`` keypoints ranked by stability score.

    Corner response and suppression propose candidates; the strongest
    ``oversample * n`` by saliency are Monte-Carlo scored; the survivors
    are ordered by descending score with saliency as the tie-break.  A
    shortage (fewer than ``n`` survivors) is flagged, not raised.
    """
    if n < 1:
        raise ValueError(f"keypoint budget must be >= 1, got {n}")
    score = response(img, sigma_window)
    xy, saliency = nms_candidates(score, radius=nms_radius, threshold=response_floor)
    xy = xy[: oversample * n]
    saliency = saliency[: oversample * n]
    return rank_candidates(img, xy, saliency, cfg, stream, n, variant=variant,
                           m=m, patch_size=patch_size, margin=margin,
                           refine_positions=refine_positions,
                           score_values=score.values, threads=threads)


def export_ground_truth(img: ImageGray, n: int, cfg: BetaConfig,
                        thresholds: Thresholds, stream: Stream,
                        m: int = DEFAULT_SAMPLES,
                        patch_size: int = DEFAULT_PATCH_SIZE,
                        nms_radius: int = FULL_NMS_RADIUS,
                        response_floor: float = RESPONSE_FLOOR,
                        threads: int | None = None) -> list[GroundTruthRecord]:
    """Supervision targets for learning a stability predictor.

    Candidates keep their integer pixel positions (targets supervise a
    per-pixel predictor).  Salient candidates are Monte-Carlo measured and
    receive the square-root second-moment bound as target; noise-class
    candidates receive the saturation value without any sampling; the band
    between the thresholds is excluded.  At most ``n`` records are
    returned, in descending-saliency candidate order.
    """
    score = response(img)
    xy, saliency = nms_candidates(score, radius=nms_radius, threshold=response_floor)
    keys = child_keys(stream.key, np.arange(xy.shape[0]))
    margin = support_margin(cfg, patch_size)
    eta_max = failure_distance(patch_size)

    salient_idx = [
        i for i in range(xy.shape[0])
        if saliency[i] > thresholds.t_salient
        and keypoint_in_bounds(img.data.shape, xy[i], margin)
    ]
    ests = estimate_batch(
        img, xy[salient_idx].astype(np.float64), cfg,
        keys[salient_idx], m=m, patch_size=patch_size,
        threads=threads) if salient_idx else []
    eta_by_idx = {
        i: bound_value(est, EmeVariant.SQRT_SECOND_MOMENT)
        for i, est in zip(salient_idx, ests)
    }

    records: list[GroundTruthRecord] = []
    for i in range(xy.shape[0]):
        if len(records) >= n:
            break
        s = float(saliency[i])
        x, y = float(xy[i, 0]), float(xy[i, 1])
        if s > thresholds.t_salient:
            if i in eta_by_idx:
                records.append(GroundTruthRecord(x, y, s, eta_by_idx[i], GtClass.SALIENT))
        elif s < thresholds.t_noise:
            records.append(GroundTruthRecord(x, y, s, eta_max, GtClass.NOISE))
    return records


def supervision_loss(pred, records: list[GroundTruthRecord]) -> float:
    """Mean squared error of predictions against the exported targets.

    Salient records contribute against their measured value, noise records
    against the saturation value; both are stored in ``target_eta``.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    if pred.shape[0] != len(records):
        raise ValueError(
            f"{pred.shape[0]} predictions for {len(records)} records")
    if len(records) == 0:
        raise ValueError("need at least one record")
    targets = np.array([r.target_eta for r in records])
    return float(((pred - targets) ** 2).mean())


# ---------------------------------------------------------------------------
# serialization

def _fmt(v: float) -> str:
    return repr(float(v))


def write_detections_csv(path, result: DetectResult) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write("x,y,s,eta,score\n")
        for kp in result.keypoints:
            f.write(",".join(_fmt(v) for v in (kp.x, kp.y, kp.s, kp.eta, kp.score)) + "\n")


def write_estimates_csv(path, result: DetectResult) -> None:
    """Full per-keypoint estimate rows."""
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write("x,y,s,mean_dist,second_moment,cov_trace,delta_sq,m_failed,score\n")
        for kp in result.keypoints:
            e = kp.eme
            f.write(",".join([
                _fmt(kp.x), _fmt(kp.y), _fmt(kp.s),
                _fmt(e.mean_dist), _fmt(e.second_moment), _fmt(e.cov_trace),
                _fmt(e.delta_sq), str(e.m_failed), _fmt(kp.score),
            ]) + "\n")


_BIN_MAGIC = b"SSKP"


def write_detections_binary(path, result: DetectResult) -> None:
    """Binary record file: magic 'SSKP', u32 version, u32 count, then
    five little-endian float64 per keypoint (x, y, s, eta, score)."""
    with open(path, "wb") as f:
        f.write(_BIN_MAGIC)
        f.write(struct.pack("<II", 1, len(result.keypoints)))
        for kp in result.keypoints:
            f.write(struct.pack("<5d", kp.x, kp.y, kp.s, kp.eta, kp.score))


def read_detections_binary(path) -> list[Keypoint]:
    with open(path, "rb") as f:
        if f.read(4) != _BIN_MAGIC:
            raise ValueError(f"{path}: not a detections file")
        version, count = struct.unpack("<II", f.read(8))
        if version != 1:
            raise ValueError(f"{path}: unsupported version {version}")
        out = []
        for _ in range(count):
            x, y, s, eta, score = struct.unpack("<5d", f.read(40))
            out.append(Keypoint(x=x, y=y, s=s, eta=eta, score=score))
    return out


def write_ground_truth_csv(path, records: list[GroundTruthRecord]) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write("x,y,s,target_eta,class\n")
        for r in records:
            f.write(",".join([
                _fmt(r.x), _fmt(r.y), _fmt(r.s), _fmt(r.target_eta), r.cls.value,
            ]) + "\n")


def read_ground_truth_csv(path) -> list[GroundTruthRecord]:
    records = []
    with open(path, "r", encoding="ascii") as f:
        header = f.readline()
        if header.strip() != "x,y,s,target_eta,class":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in f:
            x, y, s, eta, cls = line.strip().split(",")
            records.append(GroundTruthRecord(
                float(x), float(y), float(s), float(eta), GtClass(cls)))
    return records
