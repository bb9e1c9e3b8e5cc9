"""Image loading, bilinear interpolation, and patch warping."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stabscore.errors import ImageFormatError, RangeError
from stabscore.homography import Homography, conjugate_about, solve_4pt
from stabscore.image import (ImageGray, PatchSpec, load_image, sample_bilinear,
                             save_pgm, warp_patch)
from stabscore.synth import linear_ramp, make_texture


def write_pgm(path, pixels: np.ndarray, maxval: int = 255):
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n%d\n" % (pixels.shape[1], pixels.shape[0], maxval))
        f.write(pixels.astype(dtype).tobytes())


class TestLoading:
    def test_pgm_maxval_normalization(self, tmp_path):
        """2x2 PGM {0,255,0,255} loads as {0,1,0,1}."""
        p = tmp_path / "t.pgm"
        write_pgm(p, np.array([[0, 255], [0, 255]]))
        img = load_image(p)
        np.testing.assert_array_equal(img.data, [[0.0, 1.0], [0.0, 1.0]])

    def test_pgm_16bit(self, tmp_path):
        p = tmp_path / "t16.pgm"
        write_pgm(p, np.array([[0, 65535], [32768, 16384]]), maxval=65535)
        img = load_image(p)
        np.testing.assert_allclose(img.data[0], [0.0, 1.0])
        np.testing.assert_allclose(img.data[1], [32768 / 65535, 16384 / 65535])

    def test_black_png_loads_zero(self, tmp_path):
        from PIL import Image

        p = tmp_path / "black.png"
        Image.fromarray(np.zeros((8, 8), dtype=np.uint8), mode="L").save(p)
        img = load_image(p)
        assert img.data.min() == img.data.max() == 0.0

    def test_color_png_uses_luminance_weights(self, tmp_path):
        from PIL import Image

        p = tmp_path / "c.png"
        rgb = np.zeros((4, 4, 3), dtype=np.uint8)
        rgb[..., 0] = 255
        Image.fromarray(rgb, mode="RGB").save(p)
        img = load_image(p)
        np.testing.assert_allclose(img.data, 0.299, atol=1e-9)

    def test_loading_is_deterministic(self, tmp_path):
        p = tmp_path / "d.pgm"
        write_pgm(p, (np.arange(64).reshape(8, 8) * 3) % 256)
        a = load_image(p)
        b = load_image(p)
        np.testing.assert_array_equal(a.data, b.data)

    def test_unreadable_and_unsupported(self, tmp_path):
        with pytest.raises(ImageFormatError):
            load_image(tmp_path / "missing.pgm")
        junk = tmp_path / "junk.pgm"
        junk.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(ImageFormatError):
            load_image(junk)

    def test_pgm_roundtrip_via_save(self, tmp_path):
        img = make_texture(3, 32, 32)
        p = tmp_path / "rt.pgm"
        save_pgm(img, p)
        back = load_image(p)
        assert np.abs(back.data - img.data).max() <= 0.5 / 255 + 1e-12

    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            ImageGray(np.array([[0.0, 2.0]]))
        with pytest.raises(ValueError):
            ImageGray(np.array([[np.nan]]))


class TestBilinear:
    def test_exact_on_lattice(self):
        img = make_texture(1, 16, 16)
        assert sample_bilinear(img, (3, 5)) == img.data[5, 3]

    def test_midpoint_average(self):
        img = ImageGray(np.array([[0.0, 1.0]]))
        assert sample_bilinear(img, (0.5, 0.0)) == 0.5

    def test_quarter_point(self):
        """Hand evaluation: 0.25 between 0.0 and 0.8 gives 0.2."""
        img = ImageGray(np.array([[0.0, 0.8]]))
        assert sample_bilinear(img, (0.25, 0.0)) == pytest.approx(0.2, abs=1e-15)

    def test_out_of_bounds_raises(self):
        img = make_texture(2, 8, 8)
        with pytest.raises(RangeError):
            sample_bilinear(img, (-0.01, 3.0))
        with pytest.raises(RangeError):
            sample_bilinear(img, (3.0, 7.5))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.0, 14.0), st.floats(0.0, 14.0), st.integers(0, 14))
    def test_monotone_along_rows_of_monotone_image(self, x1, x2, row):
        """Bilinear preserves value-monotonicity along axis-aligned segments."""
        data = np.tile(np.linspace(0.0, 1.0, 15) ** 1.5, (15, 1))
        img = ImageGray(data)
        lo, hi = sorted((x1, x2))
        assert sample_bilinear(img, (lo, row)) <= sample_bilinear(img, (hi, row)) + 1e-15


class TestWarpPatch:
    def test_identity_is_exact_crop(self):
        img = make_texture(4, 64, 64)
        spec = PatchSpec(center=(30.0, 25.0), size=13)
        wp = warp_patch(img, spec, Homography.identity())
        np.testing.assert_array_equal(wp.patch.data, img.data[19:32, 24:37])
        assert wp.out_of_support == 0.0 and not wp.flagged

    def test_integer_translation_shifts_crop(self):
        img = make_texture(4, 64, 64)
        spec = PatchSpec(center=(30.0, 25.0), size=13)
        wp = warp_patch(img, spec, Homography.translation(2.0, 0.0))
        np.testing.assert_array_equal(wp.patch.data, img.data[19:32, 26:39])

    def test_rotated_linear_ramp_matches_analytic(self):
        """30-degree rotation of a plane: warped values equal the plane at
        the rotated sample positions (bilinear is exact on planes)."""
        gx, gy, c0 = 0.004, 0.002, 0.3
        img = linear_ramp(64, 64, gx, gy, c0)
        center = (31.0, 29.0)
        theta = np.deg2rad(30.0)
        ct, st = np.cos(theta), np.sin(theta)
        rot = Homography(np.array([[ct, -st, 0.0], [st, ct, 0.0], [0.0, 0.0, 1.0]]))
        h = conjugate_about(rot, center)
        wp = warp_patch(img, PatchSpec(center=center, size=13), h)
        for r in range(13):
            for c in range(13):
                dx, dy = c - 6.0, r - 6.0
                sx = center[0] + ct * dx - st * dy
                sy = center[1] + st * dx + ct * dy
                expected = c0 + gx * sx + gy * sy
                assert wp.patch.data[r, c] == pytest.approx(expected, abs=1e-6)

    def test_inverse_warp_recovers_interior(self):
        """Warping by H then H^-1 reproduces the patch interior within
        bilinear-resampling tolerance on a band-limited image."""
        img = make_texture(9, 96, 96)
        spec = PatchSpec(center=(48.0, 48.0), size=13)
        src = np.array([[-6.0, -6.0], [6.0, -6.0], [6.0, 6.0], [-6.0, 6.0]])
        dst = src + np.array([[1.1, 0.4], [-0.8, 0.7], [0.9, -0.5], [-0.6, -0.9]])
        g = solve_4pt(src, dst)
        h = conjugate_about(g, spec.center)
        once = warp_patch(img, spec, h)
        spec2 = PatchSpec(center=(6.0, 6.0), size=13)
        back = warp_patch(once.patch, spec2, h.inverse())
        direct = warp_patch(img, spec, Homography.identity())
        interior = (slice(3, 10), slice(3, 10))
        err = np.abs(back.patch.data[interior] - direct.patch.data[interior]).max()
        assert err <= 0.05

    def test_out_of_support_reported_and_flagged(self):
        img = make_texture(4, 40, 40)
        spec = PatchSpec(center=(3.0, 20.0), size=13)
        wp = warp_patch(img, spec, Homography.identity())
        assert wp.out_of_support == pytest.approx(3 * 13 / 169)
        assert wp.flagged

    def test_patch_spec_validation(self):
        with pytest.raises(ValueError):
            PatchSpec(center=(0.0, 0.0), size=12)
        with pytest.raises(ValueError):
            PatchSpec(center=(0.0, 0.0), size=1)
