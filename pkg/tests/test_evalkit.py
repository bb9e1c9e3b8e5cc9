"""Repeatability, NCC matching, MMA, pair synthesis, and report plumbing."""

import json
import math

import numpy as np
import pytest

from stabscore.evalkit import (ExperimentReport, greedy_matches, load_pairs,
                               make_pair, match_ncc, mma,
                               recompute_beta_sweep_aggregates,
                               recompute_eme_accuracy_aggregates,
                               repeatability, save_pair, sign_test_p,
                               spearman_rho)
from stabscore.homography import Homography
from stabscore.image import ImageGray
from stabscore.streams import Stream


class TestRepeatability:
    def test_identical_sets_identity(self):
        kps = np.array([[10.0, 10.0], [20.0, 30.0], [40.0, 15.0]])
        rep = repeatability(kps, kps, Homography.identity(), 3.0, (64, 64), (64, 64))
        assert rep == 1.0

    def test_disjoint_sets_zero(self):
        a = np.array([[10.0, 10.0], [20.0, 20.0]])
        b = np.array([[50.0, 50.0], [60.0, 40.0]])
        rep = repeatability(a, b, Homography.identity(), 3.0, (64, 64), (64, 64))
        assert rep == 0.0

    def test_constructed_half_match(self):
        """10 keypoints, 5 within threshold under greedy one-to-one: 0.5."""
        a = np.array([[float(10 * i + 5), 10.0] for i in range(10)])
        b = a.copy()
        b[5:, 1] += 20.0  # push 5 far away
        b[:5, 0] += 1.0   # keep 5 within 3 px
        rep = repeatability(a, b, Homography.identity(), 3.0, (128, 64), (128, 64))
        assert rep == 0.5

    def test_visibility_normalization(self):
        """Points projecting outside the other view are not counted."""
        a = np.array([[10.0, 10.0], [200.0, 10.0]])  # second leaves the frame
        b = np.array([[12.0, 10.0]])
        rep = repeatability(a, b, Homography.translation(-100.0, 0.0), 3.0,
                            (64, 64), (64, 64))
        assert math.isnan(rep)  # projected a-points: (-90,10) and (100,10) -> none visible

    def test_empty_visible_undefined(self):
        rep = repeatability(np.zeros((0, 2)), np.zeros((0, 2)),
                            Homography.identity(), 3.0, (64, 64), (64, 64))
        assert math.isnan(rep)

    def test_swap_symmetry_on_translation_pairs(self):
        rng = np.random.default_rng(3)
        a = rng.uniform(10, 54, (25, 2))
        h = Homography.translation(2.0, -1.0)
        from stabscore.homography import project_many

        b = project_many(h, a) + rng.normal(0, 0.5, (25, 2))
        r1 = repeatability(a, b, h, 3.0, (64, 64), (64, 64))
        r2 = repeatability(b, a, h.inverse(), 3.0, (64, 64), (64, 64))
        assert r1 == pytest.approx(r2, abs=1e-12)

    def test_greedy_is_one_to_one(self):
        a = np.array([[0.0, 0.0], [1.0, 0.0]])
        b = np.array([[0.5, 0.0]])
        pairs = greedy_matches(a, b, 3.0)
        assert pairs.shape[0] == 1
        assert pairs[0].tolist() == [0, 0]  # closest first, index tie-break


class TestMatchNcc:
    def test_identical_images_self_match(self, texture_image):
        rng = np.random.default_rng(5)
        kps = rng.uniform(20, 300, (40, 2))
        matches = match_ncc(texture_image, kps, texture_image, kps)
        assert len(matches) >= 35
        assert (matches.idx_a == matches.idx_b).all()

    def test_constant_background_no_matches(self):
        img = ImageGray(np.full((64, 64), 0.25))
        kps = np.array([[20.0, 20.0], [40.0, 40.0]])
        matches = match_ncc(img, kps, img, kps)
        assert len(matches) == 0

    def test_translated_pair_interior_match_rate(self, texture_image):
        """>= 90% of interior keypoints match correctly at 3 px under an
        integer translation."""
        shift = 8
        data_b = np.roll(texture_image.data, shift, axis=1)
        img_b = ImageGray(data_b)
        rng = np.random.default_rng(6)
        kps_a = rng.uniform(30, 280, (60, 2))
        kps_b = kps_a + np.array([shift, 0.0])
        matches = match_ncc(texture_image, kps_a, img_b, kps_b)
        assert len(matches) >= 0.9 * 60
        assert (matches.idx_a == matches.idx_b).mean() >= 0.9

    def test_window_validation(self):
        img = ImageGray(np.full((32, 32), 0.5))
        with pytest.raises(ValueError):
            match_ncc(img, np.zeros((1, 2)), img, np.zeros((1, 2)), window=8)


class TestMma:
    def test_all_exact_matches(self):
        from stabscore.evalkit import Matches

        pts = np.array([[10.0, 10.0], [20.0, 20.0]])
        m = Matches(np.arange(2), np.arange(2), pts, pts, np.ones(2))
        assert mma(m, Homography.identity(), 3.0) == 1.0

    def test_all_wrong_by_ten(self):
        from stabscore.evalkit import Matches

        pts = np.array([[10.0, 10.0], [20.0, 20.0]])
        m = Matches(np.arange(2), np.arange(2), pts, pts + 10.0, np.ones(2))
        assert mma(m, Homography.identity(), 3.0) == 0.0

    def test_three_of_four(self):
        from stabscore.evalkit import Matches

        pts = np.array([[10.0, 10.0], [20.0, 20.0], [30.0, 30.0], [40.0, 40.0]])
        off = pts.copy()
        off[3] += 10.0
        m = Matches(np.arange(4), np.arange(4), pts, off, np.ones(4))
        assert mma(m, Homography.identity(), 3.0) == 0.75

    def test_empty_is_nan(self):
        from stabscore.evalkit import Matches

        m = Matches(np.zeros(0, dtype=int), np.zeros(0, dtype=int),
                    np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0))
        assert math.isnan(mma(m, Homography.identity(), 3.0))

    def test_monotone_in_threshold(self, texture_image):
        pair = make_pair(texture_image, 2.0, Stream(4))
        rng = np.random.default_rng(7)
        kps = rng.uniform(40, 280, (80, 2))
        from stabscore.homography import project_many

        kps_b = project_many(pair.h_ab, kps)
        inside = ((kps_b > 20) & (kps_b < 300)).all(axis=1)
        matches = match_ncc(pair.img_a, kps[inside], pair.img_b, kps_b[inside])
        if len(matches) == 0:
            pytest.skip("no matches on this draw")
        vals = [mma(matches, pair.h_ab, t) for t in (0.5, 1.0, 2.0, 3.0, 5.0)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))


class TestMakePair:
    def test_ground_truth_maps_a_to_b(self, texture_image):
        pair = make_pair(texture_image, 2.828, Stream(11))
        from stabscore.homography import project_many
        from stabscore.image import sample_bilinear

        rng = np.random.default_rng(8)
        pts_b = rng.uniform(100, 220, (50, 2))
        pts_a = project_many(pair.h_ab.inverse(), pts_b)
        for (xb, yb), (xa, ya) in zip(pts_b, pts_a):
            if 1 <= xa <= 318 and 1 <= ya <= 318:
                va = sample_bilinear(texture_image, (xa, ya))
                vb = sample_bilinear(pair.img_b, (xb, yb))
                assert vb == pytest.approx(va, abs=0.08)

    def test_beta_one_pair_is_identity(self, texture_image):
        pair = make_pair(texture_image, 1.0, Stream(2))
        np.testing.assert_array_equal(pair.img_b.data, texture_image.data)
        np.testing.assert_allclose(pair.h_ab.m, np.eye(3) / np.sqrt(3), atol=1e-12)


class TestStatistics:
    def test_sign_test_values(self):
        assert sign_test_p(0, 0) == 1.0
        assert sign_test_p(10, 0) == pytest.approx(2.0**-10)
        assert sign_test_p(5, 5) == pytest.approx(
            sum(math.comb(10, k) for k in range(5, 11)) / 1024.0)

    def test_spearman_perfect_orders(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        assert spearman_rho(x, x * 2 + 1) == pytest.approx(1.0)
        assert spearman_rho(x, -x) == pytest.approx(-1.0)

    def test_spearman_matches_scipy(self):
        from scipy import stats

        rng = np.random.default_rng(9)
        x = rng.normal(0, 1, 30)
        y = 0.5 * x + rng.normal(0, 1, 30)
        ours = spearman_rho(x, y)
        theirs = stats.spearmanr(x, y).statistic
        assert ours == pytest.approx(theirs, abs=1e-12)


class TestEmeAccuracyExperiment:
    def test_homogeneous_lattice_shows_no_significant_difference(self):
        """On a scene where every keypoint is the same corner (a regular
        checkerboard), the low- and high-eta quartiles differ only by
        Monte-Carlo noise, so neither side wins significantly."""
        from stabscore.evalkit import run_eme_vs_accuracy, sign_test_p
        from stabscore.homography import BetaConfig
        from stabscore.synth import checkerboard

        img = checkerboard(320, 320, cell=16, sharpness=3.0, amplitude=0.8)
        report = run_eme_vs_accuracy(img, 12, BetaConfig(beta=1.681), Stream(77),
                                     n=256, m=24)
        agg = report.aggregates
        assert agg["n_trials"] >= 8
        p_low = sign_test_p(agg["low_eta_wins"], agg["low_eta_losses"])
        p_high = sign_test_p(agg["low_eta_losses"], agg["low_eta_wins"])
        assert min(p_low, p_high) > 0.05

    def test_report_bookkeeping_identity(self, texture_image):
        from stabscore.evalkit import (recompute_eme_accuracy_aggregates,
                                       run_eme_vs_accuracy)
        from stabscore.homography import BetaConfig

        report = run_eme_vs_accuracy(texture_image, 3, BetaConfig(beta=2.0),
                                     Stream(31), n=128, m=16)
        assert report.aggregates == recompute_eme_accuracy_aggregates(report.records)


class TestReports:
    def test_aggregates_recomputable(self):
        records = [
            {"trial": 0, "n_matched": 40, "err_low_eta": 0.5, "err_high_eta": 0.9},
            {"trial": 1, "n_matched": 44, "err_low_eta": 0.7, "err_high_eta": 0.6},
            {"trial": 2, "n_matched": 39, "err_low_eta": 0.4, "err_high_eta": 1.1},
        ]
        agg = recompute_eme_accuracy_aggregates(records)
        report = ExperimentReport(records=records, aggregates=agg)
        assert report.aggregates == recompute_eme_accuracy_aggregates(report.records)
        assert agg["low_eta_wins"] == 2 and agg["low_eta_losses"] == 1
        assert agg["median_err_low_eta"] == 0.5

    def test_csv_and_json_outputs(self, tmp_path):
        records = [{"image": 0, "beta": 2.0, "repeatability": 0.5,
                    "mma": 0.7, "corner_error": 1.25, "n_matches": 30,
                    "n_inliers": 25}]
        report = ExperimentReport(records=records,
                                  aggregates=recompute_beta_sweep_aggregates(records),
                                  metadata={"experiment": "beta-sweep"})
        csv_path = tmp_path / "r.csv"
        json_path = tmp_path / "r.json"
        report.write_csv(csv_path)
        report.write_json(json_path)
        lines = csv_path.read_text().splitlines()
        assert lines[0].startswith("image,beta,")
        payload = json.loads(json_path.read_text())
        assert "written_utc" in payload["metadata"]
        assert "per_beta" in payload["aggregates"]


class TestPairIo:
    def test_save_and_load_roundtrip(self, tmp_path, texture_image):
        pair = make_pair(texture_image, 2.0, Stream(3), name="t0")
        save_pair(pair, tmp_path)
        tasks = load_pairs(tmp_path)
        assert len(tasks) == 1
        task = tasks[0]
        assert task.name == "t0"
        assert task.img_a.width == texture_image.width
        # H survives the text roundtrip exactly; images are 8-bit quantized
        np.testing.assert_array_equal(task.h_ab.m, pair.h_ab.m)
        assert np.abs(task.img_a.data - texture_image.data).max() <= 0.5 / 255 + 1e-12

    def test_malformed_h_named_in_error(self, tmp_path, texture_image):
        pair = make_pair(texture_image, 2.0, Stream(3), name="bad")
        folder = save_pair(pair, tmp_path)
        (folder / "H_ab.txt").write_text("not a matrix\n")
        with pytest.raises(ValueError, match="H_ab.txt"):
            load_pairs(tmp_path)
