"""Classical metrics, an NCC matcher, synthetic pair generation, and the two
desk-scale experiments: stability-vs-accuracy and the difficulty sweep."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import detector as det
from .geometry import Correspondence, corner_error, estimate_dlt, ransac, refine_homography
from .errors import GeometryError
from .homography import BetaConfig, Homography, conjugate_about, generate
from .homography import load as load_h
from .homography import save as save_h
from .image import ImageGray, bilinear_at, load_image, patch_grid
from .stability import support_margin
from .shitomasi import FULL_NMS_RADIUS, nms_candidates, response
from .streams import Stream

DEFAULT_MATCH_THRESHOLD = 3.0
NCC_WINDOW = 11
NCC_RATIO = 0.95


@dataclass(frozen=True)
class ImagePairTask:
    """Two views of a planar scene related by a known homography a -> b."""

    img_a: ImageGray
    img_b: ImageGray
    h_ab: Homography
    name: str = "pair"


def make_pair(img: ImageGray, beta: float, stream: Stream,
              half_extent_frac: float = 0.45, name: str = "pair") -> ImagePairTask:
    """Warp an image by a generated homography to form a synthetic pair.

    The generator square is centered on the image with half-side
    ``half_extent_frac * min(width, height)``; regions of the second view
    sampled outside the first replicate the border.
    """
    w, h = img.width, img.height
    cfg = BetaConfig(beta=beta, half_extent=half_extent_frac * min(w, h))
    g = generate(stream, cfg)
    center = ((w - 1) * 0.5, (h - 1) * 0.5)
    h_ba = conjugate_about(g, center)
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    pts = np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1)
    m = h_ba.projective_matrix()
    wdiv = pts @ m[2, :2] + m[2, 2]
    px = (pts @ m[0, :2] + m[0, 2]) / wdiv
    py = (pts @ m[1, :2] + m[1, 2]) / wdiv
    values, _ = bilinear_at(img.data, px, py)
    img_b = ImageGray(np.clip(values.reshape(h, w), 0.0, 1.0))
    return ImagePairTask(img_a=img, img_b=img_b, h_ab=h_ba.inverse(), name=name)


def greedy_matches(pts_a: np.ndarray, pts_b: np.ndarray, threshold: float) -> np.ndarray:
    """Greedy one-to-one nearest assignment within a distance threshold.

    Returns an (M, 2) array of (index_a, index_b) pairs, chosen globally
    closest-first with deterministic index tie-breaks.
    """
    pts_a = np.asarray(pts_a, dtype=np.float64).reshape(-1, 2)
    pts_b = np.asarray(pts_b, dtype=np.float64).reshape(-1, 2)
    if pts_a.shape[0] == 0 or pts_b.shape[0] == 0:
        return np.zeros((0, 2), dtype=np.int64)
    d = np.hypot(pts_a[:, None, 0] - pts_b[None, :, 0],
                 pts_a[:, None, 1] - pts_b[None, :, 1])
    ii, jj = np.nonzero(d <= threshold)
    if ii.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    dd = d[ii, jj]
    order = np.lexsort((jj, ii, dd))
    used_a = np.zeros(pts_a.shape[0], dtype=bool)
    used_b = np.zeros(pts_b.shape[0], dtype=bool)
    pairs = []
    for idx in order:
        i, j = ii[idx], jj[idx]
        if used_a[i] or used_b[j]:
            continue
        used_a[i] = True
        used_b[j] = True
        pairs.append((i, j))
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def _inside(pts: np.ndarray, extent) -> np.ndarray:
    w, h = extent
    return ((pts[:, 0] >= 0.0) & (pts[:, 0] <= w - 1.0)
            & (pts[:, 1] >= 0.0) & (pts[:, 1] <= h - 1.0))


def repeatability(kps_a: np.ndarray, kps_b: np.ndarray, h_ab: Homography,
                  threshold: float, extent_a, extent_b) -> float:
    """Fraction of mutually visible keypoints re-detected within a threshold.

    First-view keypoints are projected into the second view and matched
    one-to-one greedily; the count is normalized by the smaller visible
    set.  Returns NaN when no keypoint is visible in both views.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    kps_a = np.asarray(kps_a, dtype=np.float64).reshape(-1, 2)
    kps_b = np.asarray(kps_b, dtype=np.float64).reshape(-1, 2)
    from .homography import project_many
    vis_a = np.zeros(0, dtype=bool)
    vis_b = np.zeros(0, dtype=bool)
    proj_a = np.zeros((0, 2))
    if kps_a.shape[0]:
        proj_a = project_many(h_ab, kps_a, on_infinity="inf")
        vis_a = _inside(proj_a, extent_b)
    if kps_b.shape[0]:
        proj_b = project_many(h_ab.inverse(), kps_b, on_infinity="inf")
        vis_b = _inside(proj_b, extent_a)
    denom = min(int(vis_a.sum()), int(vis_b.sum()))
    if denom == 0:
        return float("nan")
    pairs = greedy_matches(proj_a[vis_a], kps_b[vis_b], threshold)
    return pairs.shape[0] / denom


@dataclass(frozen=True)
class Matches:
    """Index pairs and positions of matched keypoints between two views."""

    idx_a: np.ndarray
    idx_b: np.ndarray
    pts_a: np.ndarray
    pts_b: np.ndarray
    similarity: np.ndarray

    def __len__(self) -> int:
        return int(self.idx_a.shape[0])


def _patch_descriptors(img: ImageGray, kps: np.ndarray, window: int):
    """Zero-mean, unit-norm window patches sampled at continuous positions."""
    n = kps.shape[0]
    if n == 0:
        return np.zeros((0, window * window)), np.zeros(0, dtype=bool)
    half = (window - 1) * 0.5
    offs = patch_grid(window)[:, :2]
    xs = kps[:, 0:1] + offs[None, :, 0].reshape(1, -1)
    ys = kps[:, 1:2] + offs[None, :, 1].reshape(1, -1)
    inside = ((kps[:, 0] >= half) & (kps[:, 0] <= img.width - 1 - half)
              & (kps[:, 1] >= half) & (kps[:, 1] <= img.height - 1 - half))
    values, _ = bilinear_at(img.data, xs, ys)
    values = values - values.mean(axis=1, keepdims=True)
    norms = np.sqrt((values**2).sum(axis=1))
    usable = inside & (norms > 1e-12)
    values[usable] /= norms[usable, None]
    return values, usable


def match_ncc(img_a: ImageGray, kps_a: np.ndarray, img_b: ImageGray,
              kps_b: np.ndarray, window: int = NCC_WINDOW,
              ratio: float = NCC_RATIO) -> Matches:
    """Mutual-nearest NCC matching with a distance-ratio test.

    Patches with zero variance or insufficient support are excluded;
    ties resolve to the lowest index, so matching is deterministic.
    """
    if window < 7 or window % 2 != 1:
        raise ValueError(f"window must be odd and >= 7, got {window}")
    kps_a = np.asarray(kps_a, dtype=np.float64).reshape(-1, 2)
    kps_b = np.asarray(kps_b, dtype=np.float64).reshape(-1, 2)
    da, ok_a = _patch_descriptors(img_a, kps_a, window)
    db, ok_b = _patch_descriptors(img_b, kps_b, window)
    ia = np.nonzero(ok_a)[0]
    ib = np.nonzero(ok_b)[0]
    empty = Matches(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
                    np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0))
    if ia.size == 0 or ib.size == 0:
        return empty
    sim = da[ia] @ db[ib].T
    best_b = sim.argmax(axis=1)
    best_a = sim.argmax(axis=0)
    rows = np.arange(ia.size)
    s1 = sim[rows, best_b]
    masked = sim.copy()
    masked[rows, best_b] = -np.inf
    s2 = masked.max(axis=1) if ib.size > 1 else np.full(ia.size, -np.inf)
    mutual = best_a[best_b] == rows
    passes = (1.0 - s1) < ratio * (1.0 - s2)
    keep = mutual & passes
    out_a = ia[rows[keep]]
    out_b = ib[best_b[keep]]
    return Matches(idx_a=out_a, idx_b=out_b,
                   pts_a=kps_a[out_a], pts_b=kps_b[out_b],
                   similarity=s1[keep])


def mma(matches: Matches, h_ab: Homography, threshold: float) -> float:
    """Fraction of matches consistent with the ground-truth homography."""
    if len(matches) == 0:
        return float("nan")
    from .homography import project_many
    proj = project_many(h_ab, matches.pts_a, on_infinity="inf")
    d = np.hypot(proj[:, 0] - matches.pts_b[:, 0], proj[:, 1] - matches.pts_b[:, 1])
    return float((d <= threshold).mean())


@dataclass
class ExperimentReport:
    """Per-trial records plus aggregates recomputable from them."""

    records: list[dict]
    aggregates: dict
    metadata: dict = field(default_factory=dict)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="ascii", newline="\n") as f:
            if not self.records:
                f.write("\n")
                return
            cols = list(self.records[0].keys())
            f.write(",".join(cols) + "\n")
            for rec in self.records:
                f.write(",".join(_csv_cell(rec[c]) for c in cols) + "\n")

    def write_json(self, path, timestamp: bool = True) -> None:
        meta = dict(self.metadata)
        if timestamp:
            meta["written_utc"] = datetime.now(timezone.utc).isoformat()
        payload = {"aggregates": self.aggregates, "metadata": meta}
        with open(path, "w", encoding="ascii") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")


def _csv_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def sign_test_p(wins: int, losses: int) -> float:
    """One-sided exact binomial sign test: P[X >= wins] under fairness."""
    n = wins + losses
    if n == 0:
        return 1.0
    total = sum(math.comb(n, k) for k in range(wins, n + 1))
    return total / 2.0**n


def spearman_rho(x, y) -> float:
    """Spearman rank correlation with average ranks for ties."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 2:
        raise ValueError("need two equal-length samples of size >= 2")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float((rx**2).sum()) * float((ry**2).sum()))
    if denom == 0.0:
        return float("nan")
    return float((rx * ry).sum()) / denom


def _average_ranks(v: np.ndarray) -> np.ndarray:
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size)
    sv = v[order]
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _matched_pairs_with_eta(result_a, result_b, h_ab, threshold):
    """Ground-truth-verified matches between two detections, with the
    summed stability bound of each pair's endpoints."""
    from .homography import project_many
    pos_a = result_a.positions()
    pos_b = result_b.positions()
    if pos_a.shape[0] == 0 or pos_b.shape[0] == 0:
        return []
    proj = project_many(h_ab, pos_a, on_infinity="inf")
    pairs = greedy_matches(proj, pos_b, threshold)
    out = []
    for i, j in pairs:
        eta = result_a.keypoints[i].eta + result_b.keypoints[j].eta
        out.append((int(i), int(j), float(eta)))
    return out


def run_eme_vs_accuracy(img: ImageGray, trials: int, cfg: BetaConfig,
                        stream: Stream, n: int = 384, m: int = 48,
                        match_threshold: float = 1.5,
                        half_extent_frac: float = 0.45,
                        nms_radius: int = 4,
                        threads: int | None = None) -> ExperimentReport:
    """Paired comparison: do low-error keypoints give better homographies?

    Each trial warps the image by a generated homography, detects in both
    views, verifies correspondences against the ground truth, and fits one
    homography from the lowest-eta quartile of matches and one from the
    highest-eta quartile.  Corner errors are recorded per trial.

    Candidates are budgeted by saliency without stability pre-selection
    (the quartiles must span the full error spectrum), and a wide
    suppression radius keeps each quartile spatially spread so that the
    fitted homographies differ by measurement quality, not configuration.
    """
    records = []
    n_skipped = 0
    extent = (img.width, img.height)
    for t in range(trials):
        pair = make_pair(img, cfg.beta, stream.child(t, 0), half_extent_frac,
                         name=f"trial{t:03d}")
        res_a = det.detect(pair.img_a, n, cfg, stream.child(t, 1), m=m,
                           oversample=1, nms_radius=nms_radius, threads=threads)
        res_b = det.detect(pair.img_b, n, cfg, stream.child(t, 2), m=m,
                           oversample=1, nms_radius=nms_radius, threads=threads)
        matched = _matched_pairs_with_eta(res_a, res_b, pair.h_ab, match_threshold)
        q = len(matched) // 4
        if q < 4:
            n_skipped += 1
            continue
        matched.sort(key=lambda rec: (rec[2], rec[0], rec[1]))
        err = {}
        degenerate = False
        for label, subset in (("low", matched[:q]), ("high", matched[-q:])):
            corrs = [
                Correspondence(k=(res_b.keypoints[j].x, res_b.keypoints[j].y),
                               k_prime=(res_a.keypoints[i].x, res_a.keypoints[i].y))
                for i, j, _ in subset
            ]
            try:
                h = estimate_dlt(corrs)
                refined = refine_homography(h, corrs)
                if refined.success:
                    h = refined.homography
                err[label] = corner_error(h, pair.h_ab, extent)
            except GeometryError:
                degenerate = True
                break
        if degenerate:
            n_skipped += 1
            continue
        records.append({
            "trial": t,
            "n_matched": len(matched),
            "err_low_eta": err["low"],
            "err_high_eta": err["high"],
        })
    aggregates = recompute_eme_accuracy_aggregates(records)
    return ExperimentReport(records=records, aggregates=aggregates,
                            metadata={"experiment": "eme-accuracy",
                                      "trials": trials, "skipped": n_skipped,
                                      "beta": cfg.beta, "n": n, "m": m})


def _iqr(values: np.ndarray) -> float:
    return float(np.percentile(values, 75) - np.percentile(values, 25))


def recompute_eme_accuracy_aggregates(records: list[dict]) -> dict:
    if not records:
        return {"n_trials": 0}
    low = np.array([r["err_low_eta"] for r in records])
    high = np.array([r["err_high_eta"] for r in records])
    wins = int((low < high).sum())
    losses = int((low > high).sum())
    return {
        "n_trials": len(records),
        "median_err_low_eta": float(np.median(low)),
        "median_err_high_eta": float(np.median(high)),
        "mean_err_low_eta": float(low.mean()),
        "mean_err_high_eta": float(high.mean()),
        "iqr_err_low_eta": _iqr(low),
        "iqr_err_high_eta": _iqr(high),
        "low_eta_wins": wins,
        "low_eta_losses": losses,
        "sign_test_p": sign_test_p(wins, losses),
    }


def run_beta_sweep(imgs: list[ImageGray], betas, stream: Stream,
                   n: int = 192, m: int = 48, pair_beta: float = 2.828,
                   half_extent: float = 6.0, patch_size: int = 13,
                   rep_threshold: float = DEFAULT_MATCH_THRESHOLD,
                   inlier_threshold: float = DEFAULT_MATCH_THRESHOLD,
                   half_extent_frac: float = 0.45,
                   oversample: int = det.OVERSAMPLE,
                   threads: int | None = None) -> ExperimentReport:
    """Sweep the scoring difficulty over fixed synthetic pairs.

    Candidates are proposed once per view; each beta re-scores the same
    candidates (support margin fixed at the grid maximum so the candidate
    set is identical across the sweep) and the standard metrics are
    recorded per (image, beta).
    """
    betas = list(betas)
    if not betas:
        raise ValueError("need at least one beta")
    margin = support_margin(BetaConfig(beta=max(betas), half_extent=half_extent),
                            patch_size)
    records = []
    for i, img in enumerate(imgs):
        pair = make_pair(img, pair_beta, stream.child(i, 0), half_extent_frac,
                         name=f"img{i:03d}")
        views = []
        for v, view_img in enumerate((pair.img_a, pair.img_b)):
            score = response(view_img)
            xy, sal = nms_candidates(score, radius=FULL_NMS_RADIUS,
                                     threshold=det.RESPONSE_FLOOR)
            views.append((view_img, xy[: oversample * n], sal[: oversample * n],
                          score.values))
        extent_a = (pair.img_a.width, pair.img_a.height)
        extent_b = (pair.img_b.width, pair.img_b.height)
        for bi, beta in enumerate(betas):
            cfg = BetaConfig(beta=beta, half_extent=half_extent)
            results = []
            for v, (view_img, xy, sal, score_values) in enumerate(views):
                results.append(det.rank_candidates(
                    view_img, xy, sal, cfg, stream.child(i, 1 + v, bi), n,
                    m=m, patch_size=patch_size, margin=margin,
                    score_values=score_values, threads=threads))
            pos_a = results[0].positions()
            pos_b = results[1].positions()
            rep = repeatability(pos_a, pos_b, pair.h_ab, rep_threshold,
                                extent_a, extent_b)
            matches = match_ncc(pair.img_a, pos_a, pair.img_b, pos_b)
            mma_val = mma(matches, pair.h_ab, rep_threshold)
            corner = float("nan")
            n_inliers = 0
            if len(matches) >= 4:
                corrs = [Correspondence(k=tuple(matches.pts_b[x]),
                                        k_prime=tuple(matches.pts_a[x]))
                         for x in range(len(matches))]
                rr = ransac(corrs, inlier_threshold, stream.child(i, 3, bi))
                if rr.success:
                    corner = corner_error(rr.homography, pair.h_ab, extent_a)
                    n_inliers = int(rr.inlier_mask.sum())
            records.append({
                "image": i, "beta": beta, "repeatability": rep,
                "mma": mma_val, "corner_error": corner,
                "n_matches": len(matches), "n_inliers": n_inliers,
            })
    aggregates = recompute_beta_sweep_aggregates(records)
    return ExperimentReport(records=records, aggregates=aggregates,
                            metadata={"experiment": "beta-sweep",
                                      "betas": betas, "n": n, "m": m,
                                      "pair_beta": pair_beta,
                                      "n_images": len(imgs)})


def recompute_beta_sweep_aggregates(records: list[dict]) -> dict:
    per_beta: dict = {}
    for rec in records:
        per_beta.setdefault(rec["beta"], []).append(rec)
    rows = {}
    mean_reps = []
    betas = sorted(per_beta)
    for beta in betas:
        recs = per_beta[beta]
        reps = np.array([r["repeatability"] for r in recs])
        mmas = np.array([r["mma"] for r in recs])
        errs = np.array([r["corner_error"] for r in recs])
        mean_rep = float(np.nanmean(reps)) if reps.size else float("nan")
        finite_errs = errs[np.isfinite(errs)]
        rows[repr(beta)] = {
            "mean_repeatability": mean_rep,
            "mean_mma": float(np.nanmean(mmas)) if mmas.size else float("nan"),
            "median_corner_error": float(np.nanmedian(errs)) if errs.size else float("nan"),
            "iqr_corner_error": _iqr(finite_errs) if finite_errs.size else float("nan"),
        }
        mean_reps.append(mean_rep)
    out = {"per_beta": rows}
    if len(betas) >= 2 and not any(math.isnan(v) for v in mean_reps):
        out["spearman_rep_vs_beta"] = spearman_rho(np.array(betas), np.array(mean_reps))
    return out


# ---------------------------------------------------------------------------
# pair directory layout: pairs/<name>/{a.png, b.png, H_ab.txt}

def save_pair(task: ImagePairTask, root) -> Path:
    from PIL import Image

    folder = Path(root) / task.name
    folder.mkdir(parents=True, exist_ok=True)
    for fname, img in (("a.png", task.img_a), ("b.png", task.img_b)):
        arr = np.rint(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(folder / fname)
    save_h(task.h_ab, folder / "H_ab.txt")
    return folder


def load_pairs(root) -> list[ImagePairTask]:
    root = Path(root)
    tasks = []
    for folder in sorted(p for p in root.iterdir() if p.is_dir()):
        a, b, hf = folder / "a.png", folder / "b.png", folder / "H_ab.txt"
        if not (a.exists() and b.exists() and hf.exists()):
            continue
        tasks.append(ImagePairTask(
            img_a=load_image(a), img_b=load_image(b),
            h_ab=load_h(hf), name=folder.name))
    return tasks
