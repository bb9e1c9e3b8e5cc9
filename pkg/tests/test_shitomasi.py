"""Corner response, suppression, refinement, and the measurement procedure."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stabscore.errors import RangeError
from stabscore.image import ImageGray
from stabscore.shitomasi import (MeasurementOutcome, ScoreMap, gaussian_kernel,
                                 gradient_products, measure, measure_stack,
                                 nms_candidates, read_score_map, refine,
                                 response, response_stack, write_score_map)
from stabscore.synth import checkerboard, corner_patch, make_texture


def brute_force_response(data: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    """Independent oracle: accumulate the windowed structure tensor per
    pixel by direct loops and take the eigensolver's minimum eigenvalue."""
    k = gaussian_kernel(sigma)
    r = k.size // 2
    gxx, gxy, gyy = gradient_products(data)
    h, w = data.shape
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            t = np.zeros((2, 2))
            for di in range(-r, r + 1):
                ii = min(max(i + di, 0), h - 1)
                for dj in range(-r, r + 1):
                    jj = min(max(j + dj, 0), w - 1)
                    wgt = k[di + r] * k[dj + r]
                    t[0, 0] += wgt * gxx[ii, jj]
                    t[0, 1] += wgt * gxy[ii, jj]
                    t[1, 1] += wgt * gyy[ii, jj]
            t[1, 0] = t[0, 1]
            out[i, j] = max(np.linalg.eigvalsh(t)[0], 0.0)
    return out


class TestResponse:
    def test_constant_image_is_zero(self):
        img = ImageGray(np.full((16, 16), 0.4))
        assert response(img).values.max() == 0.0

    def test_step_edge_has_zero_min_eigenvalue(self):
        data = np.zeros((16, 16))
        data[:, 8:] = 1.0
        score = response(ImageGray(data))
        assert score.values.max() <= 1e-12

    def test_matches_bruteforce_eigensolver(self):
        """Windowed-tensor minimum eigenvalue against the per-pixel
        eigendecomposition oracle, to 1e-9."""
        img = checkerboard(20, 20, cell=10, sharpness=1.2)
        got = response(img).values
        want = brute_force_response(img.data)
        np.testing.assert_allclose(got, want, atol=1e-9)
        cy = cx = 10  # crossing sits on the lattice
        lam = got[cy, cx]
        neigh = got[cy - 1:cy + 2, cx - 1:cx + 2].copy()
        neigh[1, 1] = -np.inf
        assert lam > neigh.max()

    def test_texture_matches_bruteforce(self):
        img = make_texture(21, 24, 24)
        np.testing.assert_allclose(response(img).values,
                                   brute_force_response(img.data), atol=1e-9)

    def test_transposition_invariance(self):
        img = make_texture(8, 20, 28)
        a = response(img).values
        b = response(ImageGray(img.data.T.copy())).values
        np.testing.assert_allclose(a, b.T, atol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_nonnegative_everywhere(self, seed):
        img = make_texture(seed, 16, 16)
        assert response(img).values.min() >= 0.0

    def test_small_image_rejected(self):
        with pytest.raises(ValueError):
            response(ImageGray(np.zeros((5, 9))))

    def test_stack_path_matches_single(self):
        imgs = [make_texture(s, 13, 13).data for s in range(6)]
        stack = response_stack(np.stack(imgs))
        for i, data in enumerate(imgs):
            single = response(ImageGray(data)).values
            np.testing.assert_allclose(stack[i], single, atol=1e-12)


class TestNms:
    def test_all_zero_map_empty(self):
        xy, s = nms_candidates(ScoreMap(np.zeros((10, 10))), radius=2, threshold=0.0)
        assert xy.shape == (0, 2)

    def test_single_spike(self):
        vals = np.zeros((12, 12))
        vals[5, 5] = 3.0
        xy, s = nms_candidates(ScoreMap(vals), radius=2, threshold=0.0)
        assert xy.tolist() == [[5, 5]] and s.tolist() == [3.0]

    def test_equal_maxima_tie_break(self):
        """Two equal far-apart maxima: both returned, (row 3, col 3) first."""
        vals = np.zeros((12, 16))
        vals[3, 3] = 2.0
        vals[3, 10] = 2.0
        xy, s = nms_candidates(ScoreMap(vals), radius=2, threshold=0.0)
        assert xy.tolist() == [[3, 3], [10, 3]]

    def test_radius_suppresses_neighbors(self):
        vals = np.zeros((12, 12))
        vals[5, 5] = 3.0
        vals[5, 7] = 2.0  # inside radius-2 window of the stronger peak
        xy, _ = nms_candidates(ScoreMap(vals), radius=2, threshold=0.0)
        assert xy.tolist() == [[5, 5]]
        xy, _ = nms_candidates(ScoreMap(vals), radius=1, threshold=0.0)
        assert xy.tolist() == [[5, 5], [7, 5]]

    def test_threshold_filters(self):
        vals = np.zeros((10, 10))
        vals[2, 2] = 0.5
        vals[7, 7] = 1.5
        xy, _ = nms_candidates(ScoreMap(vals), radius=1, threshold=1.0)
        assert xy.tolist() == [[7, 7]]


def quadratic_surface(w, h, peak_x, peak_y):
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    return ScoreMap(-(xs - peak_x) ** 2 - (ys - peak_y) ** 2)


class TestRefine:
    def test_exact_on_quadratic(self):
        """One Newton step recovers a quadratic's peak exactly."""
        score = quadratic_surface(11, 11, 5.3, 5.2)
        out = refine(score, (5, 5))
        assert out.ok
        assert abs(out.point[0] - 5.3) <= 1e-12
        assert abs(out.point[1] - 5.2) <= 1e-12

    def test_constant_surface_fails(self):
        out = refine(ScoreMap(np.ones((9, 9))), (4, 4))
        assert not out.ok

    def test_step_beyond_half_pixel_fails(self):
        """A peak 0.7 px from the candidate violates the step bound."""
        score = quadratic_surface(11, 11, 5.7, 5.0)
        out = refine(score, (5, 5))
        assert not out.ok

    def test_border_candidate_raises(self):
        score = quadratic_surface(9, 9, 4.0, 4.0)
        with pytest.raises(RangeError):
            refine(score, (0, 4))

    def test_never_farther_than_half_pixel(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            vals = rng.random((9, 9))
            out = refine(ScoreMap(vals), (4, 4))
            if out.ok:
                assert abs(out.point[0] - 4) < 0.5
                assert abs(out.point[1] - 4) < 0.5


class TestMeasure:
    def test_flat_patch_fails(self):
        assert not measure(ImageGray(np.full((13, 13), 0.5))).ok

    def test_centered_crossing_measured_at_center(self):
        """Symmetric crossing: measurement lands within 0.1 px of center,
        which dense response evaluation confirms is the argmax."""
        patch = corner_patch(13, (0.0, 0.0))
        score = response(patch)
        flat_argmax = np.unravel_index(np.argmax(score.values), score.values.shape)
        assert flat_argmax == (6, 6)
        out = measure(patch)
        assert out.ok
        assert abs(out.point[0] - 6.0) <= 0.1
        assert abs(out.point[1] - 6.0) <= 0.1

    def test_offset_crossing_tracked(self):
        patch = corner_patch(13, (0.3, -0.2))
        out = measure(patch)
        assert out.ok
        assert out.point[0] == pytest.approx(6.3, abs=0.1)
        assert out.point[1] == pytest.approx(5.8, abs=0.1)

    def test_default_patch_size_is_13(self):
        from stabscore.stability import DEFAULT_PATCH_SIZE

        assert DEFAULT_PATCH_SIZE == 13

    def test_intensity_scaling_preserves_location(self):
        """Positive intensity scaling moves score values but not the
        measured location (kept clear of the [0, 1] clip range)."""
        base = corner_patch(13, (0.25, 0.1), amplitude=0.5)
        out1 = measure(base)
        for alpha in (0.5, 1.3):
            scaled = ImageGray(base.data * alpha)
            out2 = measure(scaled)
            assert out2.ok
            np.testing.assert_allclose(out2.point, out1.point, atol=1e-9)

    def test_size_validation(self):
        with pytest.raises(ValueError):
            measure(ImageGray(np.zeros((12, 12))))
        with pytest.raises(ValueError):
            measure(ImageGray(np.zeros((5, 5))))

    def test_stack_agrees_with_scalar_composition(self):
        """The vectorized measurement path equals the composed scalar ops."""
        patches = np.stack([
            corner_patch(13, (0.2, -0.3)).data,
            corner_patch(13, (0.0, 0.0)).data,
            np.full((13, 13), 0.7),
            make_texture(5, 13, 13).data,
            make_texture(9, 13, 13).data,
        ])
        pts, ok = measure_stack(patches)
        for i in range(patches.shape[0]):
            single = measure(ImageGray(patches[i]))
            assert single.ok == bool(ok[i])
            if single.ok:
                np.testing.assert_allclose(pts[i], single.point, atol=1e-12)


class TestScoreMapExport:
    def test_binary_roundtrip(self, tmp_path):
        img = make_texture(13, 16, 20)
        score = response(img)
        path = tmp_path / "score.bin"
        write_score_map(score, path)
        back = read_score_map(path)
        assert back.width == score.width and back.height == score.height
        np.testing.assert_allclose(back.values, score.values, atol=1e-6)
        assert path.stat().st_size == 8 + 4 * score.width * score.height

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"\x01\x00")
        with pytest.raises(ValueError):
            read_score_map(path)


class TestOutcomeType:
    def test_refined_within_half_pixel_of_candidate(self):
        out = MeasurementOutcome.refined(3.2, 4.4)
        assert out.ok and out.point == (3.2, 4.4)
        assert not MeasurementOutcome.failed().ok
