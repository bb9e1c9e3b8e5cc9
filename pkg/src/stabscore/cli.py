"""Command-line interface.

Every command is a pure function of its inputs, configuration and seed:
re-runs write byte-identical data files (timestamps appear only in the
JSON summary metadata).  A single seed expands into per-keypoint,
per-sample counter-based streams, so STABSCORE_THREADS changes wall time,
never results.  Option precedence: command line > config file > defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import detector as det
from . import evalkit
from .errors import StabscoreError
from .geometry import Correspondence, corner_error, ransac
from .homography import BETA_GRID, BetaConfig
from .image import load_image
from .shitomasi import response
from .stability import EmeVariant
from .streams import Stream

DEFAULTS = {
    "n": 2048,
    "beta": 2.828,
    "m": 128,
    "variant": "sqrt-second-moment",
    "seed": 0,
    "t_salient": 0.01,
    "t_noise": 0.0001,
    "threshold": 3.0,
    "window": 11,
    "ratio": 0.95,
    "trials": 100,
    "pair_beta": 2.828,
    "betas": ",".join(str(b) for b in BETA_GRID),
}


class CliError(Exception):
    """Raised for bad configuration or unusable inputs (exit code 2)."""


def read_config_file(path) -> dict:
    """Parse a `key = value` configuration file; '#' starts a comment."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def resolve(args, key: str, cast=str):
    """CLI > config file > defaults."""
    cli_value = getattr(args, key, None)
    if cli_value is not None:
        return cli_value
    file_values = getattr(args, "_file_values", {})
    if key in file_values:
        try:
            return cast(file_values[key])
        except ValueError as exc:
            raise CliError(f"config value for {key!r}: {exc}") from None
    return cast(DEFAULTS[key]) if key in DEFAULTS else None


def _variant(args) -> EmeVariant:
    name = resolve(args, "variant")
    try:
        return EmeVariant(name)
    except ValueError:
        valid = ", ".join(v.value for v in EmeVariant)
        raise CliError(f"unknown variant {name!r} (choose from: {valid})") from None


def _load_image_arg(path) -> "object":
    if path is None:
        raise CliError("--image is required")
    p = Path(path)
    if not p.exists():
        raise CliError(f"image not found: {p}")
    return load_image(p)


def _beta_config(args) -> BetaConfig:
    return BetaConfig(beta=resolve(args, "beta", float))


def _write_json_summary(path, command: str, args, payload: dict) -> None:
    summary = {
        "results": payload,
        "metadata": {
            "command": command,
            "seed": resolve(args, "seed", int),
            "version": __version__,
            "written_utc": datetime.now(timezone.utc).isoformat(),
        },
    }
    with open(path, "w", encoding="ascii") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# commands

def cmd_detect(args) -> int:
    img = _load_image_arg(args.image)
    result = det.detect(img, resolve(args, "n", int), _beta_config(args),
                        Stream(resolve(args, "seed", int)),
                        variant=_variant(args), m=resolve(args, "m", int))
    det.write_detections_csv(args.out, result)
    if args.binary_out:
        det.write_detections_binary(args.binary_out, result)
    if args.estimates_out:
        det.write_estimates_csv(args.estimates_out, result)
    print(f"detect: wrote {len(result.keypoints)} keypoints to {args.out}"
          + (" (shortage)" if result.shortage else ""))
    if result.shortage and args.strict:
        print("error: fewer keypoints than requested budget", file=sys.stderr)
        return 1
    return 0


def cmd_score(args) -> int:
    img = _load_image_arg(args.image)
    if args.keypoints is None:
        raise CliError("--keypoints is required")
    kps = _read_xy_csv(args.keypoints)
    cfg = _beta_config(args)
    stream = Stream(resolve(args, "seed", int))
    score_map = response(img)
    from .stability import estimate_batch, keypoint_in_bounds, support_margin
    from .stability import bound_value, stability_score
    from .streams import child_keys
    margin = support_margin(cfg)
    keys = child_keys(stream.key, np.arange(kps.shape[0]))
    keep = [i for i in range(kps.shape[0])
            if keypoint_in_bounds(img.data.shape, kps[i], margin)]
    ests = estimate_batch(img, kps[keep], cfg, keys[keep],
                          m=resolve(args, "m", int)) if keep else []
    variant = _variant(args)
    with open(args.out, "w", encoding="ascii", newline="\n") as f:
        f.write("x,y,s,mean_dist,second_moment,cov_trace,delta_sq,m_failed,score\n")
        for local, i in enumerate(keep):
            e = ests[local]
            x, y = kps[i]
            xi = min(max(int(round(x)), 0), img.width - 1)
            yi = min(max(int(round(y)), 0), img.height - 1)
            s = float(score_map.values[yi, xi])
            sc = stability_score(bound_value(e, variant))
            f.write(",".join([
                repr(float(x)), repr(float(y)), repr(s),
                repr(e.mean_dist), repr(e.second_moment), repr(e.cov_trace),
                repr(e.delta_sq), str(e.m_failed), repr(sc)]) + "\n")
    skipped = kps.shape[0] - len(keep)
    print(f"score: wrote {len(keep)} rows to {args.out}"
          + (f" ({skipped} skipped at borders)" if skipped else ""))
    return 0


def cmd_gt_export(args) -> int:
    img = _load_image_arg(args.image)
    thresholds = det.Thresholds(t_salient=resolve(args, "t_salient", float),
                                t_noise=resolve(args, "t_noise", float))
    records = det.export_ground_truth(
        img, resolve(args, "n", int), _beta_config(args), thresholds,
        Stream(resolve(args, "seed", int)), m=resolve(args, "m", int))
    det.write_ground_truth_csv(args.out, records)
    n_salient = sum(1 for r in records if r.cls is det.GtClass.SALIENT)
    print(f"gt-export: wrote {len(records)} records "
          f"({n_salient} salient, {len(records) - n_salient} noise) to {args.out}")
    return 0


def _detect_pair(task, args, cfg, stream, n, m, variant):
    res_a = det.detect(task.img_a, n, cfg, stream.child(0), variant=variant, m=m)
    res_b = det.detect(task.img_b, n, cfg, stream.child(1), variant=variant, m=m)
    return res_a, res_b


def _load_pairs_arg(args):
    if args.pairs is None:
        raise CliError("--pairs is required")
    root = Path(args.pairs)
    if not root.is_dir():
        raise CliError(f"pairs directory not found: {root}")
    tasks = evalkit.load_pairs(root)
    if not tasks:
        print(f"error: no usable pairs under {root}", file=sys.stderr)
        raise SystemExit(1)
    return tasks


def cmd_eval_rep(args) -> int:
    tasks = _load_pairs_arg(args)
    cfg = _beta_config(args)
    n = resolve(args, "n", int)
    m = resolve(args, "m", int)
    threshold = resolve(args, "threshold", float)
    variant = _variant(args)
    stream = Stream(resolve(args, "seed", int))
    rows = []
    for i, task in enumerate(tasks):
        res_a, res_b = _detect_pair(task, args, cfg, stream.child(i), n, m, variant)
        rep = evalkit.repeatability(
            res_a.positions(), res_b.positions(), task.h_ab, threshold,
            (task.img_a.width, task.img_a.height),
            (task.img_b.width, task.img_b.height))
        rows.append((task.name, rep, len(res_a.keypoints), len(res_b.keypoints)))
    with open(args.out, "w", encoding="ascii", newline="\n") as f:
        f.write("pair,repeatability,n_a,n_b\n")
        for name, rep, na, nb in rows:
            f.write(f"{name},{rep!r},{na},{nb}\n")
    mean_rep = float(np.nanmean([r[1] for r in rows]))
    print(f"eval-rep: mean repeatability {mean_rep:.4f} over {len(rows)} pairs -> {args.out}")
    return 0


def cmd_eval_mma(args) -> int:
    tasks = _load_pairs_arg(args)
    cfg = _beta_config(args)
    n = resolve(args, "n", int)
    m = resolve(args, "m", int)
    threshold = resolve(args, "threshold", float)
    window = resolve(args, "window", int)
    ratio = resolve(args, "ratio", float)
    variant = _variant(args)
    stream = Stream(resolve(args, "seed", int))
    rows = []
    for i, task in enumerate(tasks):
        res_a, res_b = _detect_pair(task, args, cfg, stream.child(i), n, m, variant)
        matches = evalkit.match_ncc(task.img_a, res_a.positions(),
                                    task.img_b, res_b.positions(),
                                    window=window, ratio=ratio)
        val = evalkit.mma(matches, task.h_ab, threshold)
        rows.append((task.name, val, len(matches)))
    with open(args.out, "w", encoding="ascii", newline="\n") as f:
        f.write("pair,mma,n_matches\n")
        for name, val, nm in rows:
            f.write(f"{name},{val!r},{nm}\n")
    mean_mma = float(np.nanmean([r[1] for r in rows]))
    print(f"eval-mma: mean MMA {mean_mma:.4f} over {len(rows)} pairs -> {args.out}")
    return 0


def cmd_bench_h(args) -> int:
    tasks = _load_pairs_arg(args)
    cfg = _beta_config(args)
    n = resolve(args, "n", int)
    m = resolve(args, "m", int)
    threshold = resolve(args, "threshold", float)
    window = resolve(args, "window", int)
    ratio = resolve(args, "ratio", float)
    variant = _variant(args)
    stream = Stream(resolve(args, "seed", int))
    rows = []
    for i, task in enumerate(tasks):
        res_a, res_b = _detect_pair(task, args, cfg, stream.child(i), n, m, variant)
        matches = evalkit.match_ncc(task.img_a, res_a.positions(),
                                    task.img_b, res_b.positions(),
                                    window=window, ratio=ratio)
        err = float("nan")
        n_inl = 0
        if len(matches) >= 4:
            corrs = [Correspondence(k=tuple(matches.pts_b[x]),
                                    k_prime=tuple(matches.pts_a[x]))
                     for x in range(len(matches))]
            rr = ransac(corrs, threshold, stream.child(i, 9))
            if rr.success:
                err = corner_error(rr.homography, task.h_ab,
                                   (task.img_a.width, task.img_a.height))
                n_inl = int(rr.inlier_mask.sum())
        rows.append((task.name, err, len(matches), n_inl))
    with open(args.out, "w", encoding="ascii", newline="\n") as f:
        f.write("pair,corner_error,n_matches,n_inliers\n")
        for name, err, nm, ni in rows:
            f.write(f"{name},{err!r},{nm},{ni}\n")
    finite = [r[1] for r in rows if np.isfinite(r[1])]
    med = float(np.median(finite)) if finite else float("nan")
    print(f"bench-h: median corner error {med:.4f}px over {len(rows)} pairs -> {args.out}")
    return 0


def _load_images_dir(path) -> list:
    if path is None:
        raise CliError("--images is required")
    root = Path(path)
    if not root.is_dir():
        raise CliError(f"images directory not found: {root}")
    files = sorted(p for p in root.iterdir()
                   if p.suffix.lower() in (".png", ".pgm"))
    if not files:
        print(f"error: no images under {root}", file=sys.stderr)
        raise SystemExit(1)
    return [load_image(p) for p in files]


def cmd_experiment(args) -> int:
    out_dir = Path(args.out_dir if args.out_dir else ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = resolve(args, "seed", int)
    stream = Stream(seed)
    if args.experiment == "beta-sweep":
        imgs = _load_images_dir(args.images)
        betas = [float(b) for b in resolve(args, "betas").split(",") if b.strip()]
        report = evalkit.run_beta_sweep(
            imgs, betas, stream, n=resolve(args, "n", int),
            m=resolve(args, "m", int),
            pair_beta=resolve(args, "pair_beta", float))
        base = "beta_sweep"
    else:
        img = _load_image_arg(args.image)
        report = evalkit.run_eme_vs_accuracy(
            img, resolve(args, "trials", int), _beta_config(args), stream,
            n=resolve(args, "n", int), m=resolve(args, "m", int))
        base = "eme_accuracy"
    csv_path = out_dir / f"{base}_records.csv"
    json_path = out_dir / f"{base}_summary.json"
    report.metadata["seed"] = seed
    report.metadata["version"] = __version__
    report.write_csv(csv_path)
    report.write_json(json_path)
    print(f"experiment {args.experiment}: {len(report.records)} records -> {csv_path}")
    print(json.dumps(report.aggregates, indent=2, sort_keys=True))
    return 0


def _read_xy_csv(path) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise CliError(f"keypoints file not found: {p}")
    rows = []
    with open(p, "r", encoding="ascii") as f:
        header = f.readline().strip().split(",")
        if len(header) < 2 or header[0] != "x" or header[1] != "y":
            raise CliError(f"{p}: expected a CSV with x,y leading columns")
        for line in f:
            parts = line.strip().split(",")
            if len(parts) >= 2:
                rows.append((float(parts[0]), float(parts[1])))
    return np.array(rows, dtype=np.float64).reshape(-1, 2)


# ---------------------------------------------------------------------------
# argument parsing

def _add_common(p: argparse.ArgumentParser, *names: str) -> None:
    if "n" in names:
        p.add_argument("--n", type=int, default=None, help="keypoint budget")
    if "beta" in names:
        p.add_argument("--beta", type=float, default=None, help="difficulty parameter")
    if "m" in names:
        p.add_argument("--m", type=int, default=None, help="Monte-Carlo samples per keypoint")
    if "variant" in names:
        p.add_argument("--variant", default=None,
                       help="bound variant: mean-dist, second-moment, "
                            "sqrt-second-moment, spectral")
    if "seed" in names:
        p.add_argument("--seed", type=int, default=None, help="global seed")
    if "threshold" in names:
        p.add_argument("--threshold", type=float, default=None,
                       help="pixel threshold (matching / inliers)")
    p.add_argument("--config", default=None, help="key = value configuration file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stabscore",
        description="Keypoint stability scoring and homography estimation harness")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="rank keypoints by stability score")
    p.add_argument("--image", required=False)
    p.add_argument("--out", required=True)
    p.add_argument("--binary-out", default=None)
    p.add_argument("--estimates-out", default=None)
    p.add_argument("--strict", action="store_true",
                   help="exit nonzero when fewer than n keypoints survive")
    _add_common(p, "n", "beta", "m", "variant", "seed")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("score", help="score an explicit keypoint list")
    p.add_argument("--image", required=False)
    p.add_argument("--keypoints", required=False, help="CSV with x,y columns")
    p.add_argument("--out", required=True)
    _add_common(p, "beta", "m", "variant", "seed")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("gt-export", help="export supervision targets")
    p.add_argument("--image", required=False)
    p.add_argument("--out", required=True)
    p.add_argument("--t-salient", dest="t_salient", type=float, default=None)
    p.add_argument("--t-noise", dest="t_noise", type=float, default=None)
    _add_common(p, "n", "beta", "m", "seed")
    p.set_defaults(func=cmd_gt_export)

    for name, fn in (("eval-rep", cmd_eval_rep), ("eval-mma", cmd_eval_mma),
                     ("bench-h", cmd_bench_h)):
        p = sub.add_parser(name, help=f"{name} over a pairs directory")
        p.add_argument("--pairs", required=False)
        p.add_argument("--out", required=True)
        if name != "eval-rep":
            p.add_argument("--window", type=int, default=None)
            p.add_argument("--ratio", type=float, default=None)
        _add_common(p, "n", "beta", "m", "variant", "seed", "threshold")
        p.set_defaults(func=fn)

    p = sub.add_parser("experiment", help="run a built-in experiment")
    p.add_argument("experiment", choices=["beta-sweep", "eme-accuracy"])
    p.add_argument("--images", default=None, help="directory of images (beta-sweep)")
    p.add_argument("--image", default=None, help="single image (eme-accuracy)")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--betas", default=None, help="comma-separated difficulty grid")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--pair-beta", dest="pair_beta", type=float, default=None)
    _add_common(p, "n", "beta", "m", "seed")
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args._file_values = read_config_file(args.config) if args.config else {}
        return args.func(args)
    except (CliError, StabscoreError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0


if __name__ == "__main__":
    sys.exit(main())
