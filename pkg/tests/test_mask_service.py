"""
Pruebas de las perturbaciones de máscara
"""
import numpy as np
import pytest

from app.core.exceptions import DimensionMismatch, EmptyMask, InvalidRange
from app.models.mask import BinaryMask, PerturbConfig, RandomMaskParams
from app.services.mask_service import BRANCH_RECT, MaskService
from app.utils.seeding import generator_for

MEAN_COVERAGE_64 = 0.257
MEAN_COVERAGE_TOLERANCE = 0.03


def dilate_oracle(values: np.ndarray, k: int) -> np.ndarray:
    h, w = values.shape
    out = np.zeros_like(values)
    for i in range(h):
        for j in range(w):
            out[i, j] = values[max(0, i - k):i + k + 1, max(0, j - k):j + k + 1].any()
    return out


def bounding_rect_oracle(values: np.ndarray) -> np.ndarray:
    i_min, i_max, j_min, j_max = values.shape[0], -1, values.shape[1], -1
    for i in range(values.shape[0]):
        for j in range(values.shape[1]):
            if values[i, j]:
                i_min, i_max = min(i_min, i), max(i_max, i)
                j_min, j_max = min(j_min, j), max(j_max, j)
    out = np.zeros_like(values)
    out[i_min:i_max + 1, j_min:j_max + 1] = 1
    return out


def random_binary(rng, size=16, density=0.1) -> BinaryMask:
    values = (rng.random((size, size)) < density).astype(np.uint8)
    if not values.any():
        values[rng.integers(size), rng.integers(size)] = 1
    return BinaryMask(values)


def single_pixel(size: int, i: int, j: int) -> BinaryMask:
    values = np.zeros((size, size), dtype=np.uint8)
    values[i, j] = 1
    return BinaryMask(values)


class TestBinaryMask:
    def test_rejects_non_binary_values(self):
        with pytest.raises(InvalidRange):
            BinaryMask(np.array([[0, 2], [1, 0]]))

    def test_values_are_read_only(self):
        mask = BinaryMask.zeros(4, 3)
        assert mask.shape == (3, 4)
        with pytest.raises(ValueError):
            mask.values[0, 0] = 1

    def test_contains_and_equality(self):
        a = single_pixel(5, 2, 2)
        b = MaskService.dilate(a, 1)
        assert b.contains(a)
        assert not a.contains(b)
        assert a == BinaryMask(a.values.copy())


class TestDilate:
    def test_empty_mask_stays_empty(self):
        assert MaskService.dilate(BinaryMask.zeros(8, 8), 3).is_empty()

    def test_single_pixel_k1_gives_3x3_block(self):
        out = MaskService.dilate(single_pixel(5, 2, 2), 1).values
        expected = np.zeros((5, 5), dtype=np.uint8)
        expected[1:4, 1:4] = 1
        np.testing.assert_array_equal(out, expected)

    def test_k0_is_identity(self, rng):
        mask = random_binary(rng)
        assert MaskService.dilate(mask, 0) == mask

    def test_negative_radius_rejected(self):
        with pytest.raises(InvalidRange):
            MaskService.dilate(BinaryMask.zeros(4, 4), -1)

    def test_matches_neighborhood_oracle(self, rng):
        for n in range(1000):
            k = 1 + n % 3
            mask = random_binary(rng, density=0.05)
            np.testing.assert_array_equal(MaskService.dilate(mask, k).values, dilate_oracle(mask.values, k))

    def test_border_is_clipped(self):
        out = MaskService.dilate(single_pixel(6, 0, 0), 2)
        assert out.shape == (6, 6)
        assert out.area == 9

    def test_interior_composition(self, rng):
        for _ in range(200):
            k1, k2 = (int(v) for v in rng.integers(0, 3, size=2))
            values = np.zeros((24, 24), dtype=np.uint8)
            values[8:16, 8:16] = (rng.random((8, 8)) < 0.2)
            mask = BinaryMask(values)
            assert MaskService.dilate(MaskService.dilate(mask, k1), k2) == MaskService.dilate(mask, k1 + k2)

    def test_monotone(self, rng):
        for _ in range(200):
            small = random_binary(rng, density=0.05)
            big = MaskService.union(small, random_binary(rng, density=0.05))
            assert MaskService.dilate(big, 2).contains(MaskService.dilate(small, 2))
            assert MaskService.bounding_rect(big).contains(MaskService.bounding_rect(small))


class TestBoundingRect:
    def test_two_points(self):
        values = np.zeros((6, 6), dtype=np.uint8)
        values[1, 1] = values[3, 4] = 1
        out = MaskService.bounding_rect(BinaryMask(values))
        assert out.area == 12
        assert out.values[1:4, 1:5].all()

    def test_single_pixel_fixed_point(self):
        mask = single_pixel(7, 3, 5)
        assert MaskService.bounding_rect(mask) == mask

    def test_rectangle_fixed_point(self):
        values = np.zeros((8, 8), dtype=np.uint8)
        values[2:5, 1:7] = 1
        mask = BinaryMask(values)
        assert MaskService.bounding_rect(mask) == mask

    def test_empty_raises(self):
        with pytest.raises(EmptyMask):
            MaskService.bounding_rect(BinaryMask.zeros(4, 4))

    def test_matches_oracle_and_is_minimal(self, rng):
        for _ in range(1000):
            mask = random_binary(rng, density=0.03)
            rect = MaskService.bounding_rect(mask)
            np.testing.assert_array_equal(rect.values, bounding_rect_oracle(mask.values))
            assert rect.contains(mask)
            rows = np.flatnonzero(rect.values.any(axis=1))
            cols = np.flatnonzero(rect.values.any(axis=0))
            # quitar una fila o columna del borde deja fuera algún píxel activo
            assert mask.values[rows[0]].any() and mask.values[rows[-1]].any()
            assert mask.values[:, cols[0]].any() and mask.values[:, cols[-1]].any()


class TestUnion:
    def test_identity_and_idempotence(self, rng):
        mask = random_binary(rng)
        assert MaskService.union(mask, BinaryMask.zeros(16, 16)) == mask
        assert MaskService.union(mask, mask) == mask

    def test_matches_per_pixel_max(self, rng):
        for _ in range(1000):
            a, b = random_binary(rng, density=0.3), random_binary(rng, density=0.3)
            out = MaskService.union(a, b)
            np.testing.assert_array_equal(out.values, np.maximum(a.values, b.values))
            assert out.contains(a) and out.contains(b)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            MaskService.union(BinaryMask.zeros(4, 4), BinaryMask.zeros(5, 4))


class TestRandomMask:
    def test_nothing_drawn(self):
        out = MaskService.random_mask(32, 32, RandomMaskParams.empty(), generator_for(0))
        assert out.is_empty()

    def test_deterministic(self):
        params = RandomMaskParams()
        a = MaskService.random_mask(64, 48, params, generator_for(5))
        assert a == MaskService.random_mask(64, 48, params, generator_for(5))

    def test_too_small(self):
        with pytest.raises(InvalidRange):
            MaskService.random_mask(7, 32, RandomMaskParams(), generator_for(0))

    def test_coverage_never_exceeds_cap(self):
        params = RandomMaskParams(target_coverage_cap=0.2, num_strokes_range=(3, 6), num_rects_range=(2, 4))
        for seed in range(200):
            assert MaskService.random_mask(32, 32, params, generator_for(seed)).coverage <= 0.2

    def test_mean_coverage_in_range(self):
        params = RandomMaskParams()
        coberturas = [MaskService.random_mask(64, 64, params, generator_for(seed)).coverage for seed in range(1000)]
        media = float(np.mean(coberturas))
        assert 0.05 <= media <= params.target_coverage_cap
        # media de referencia con los parámetros por defecto (1000 semillas, 64x64)
        assert media == pytest.approx(MEAN_COVERAGE_64, abs=MEAN_COVERAGE_TOLERANCE)

    def test_ranges_parsed_from_config_text(self):
        params = RandomMaskParams(num_strokes_range="2, 3")
        assert params.num_strokes_range == (2, 3)

    def test_inverted_range_rejected(self):
        with pytest.raises(ValueError):
            RandomMaskParams(stroke_width_range=(9, 3))


class TestReshape:
    def test_rect_probability_one(self, rng):
        cfg = PerturbConfig(rect_probability=1.0)
        mask = random_binary(rng)
        for _ in range(20):
            assert MaskService.reshape_perturb(mask, cfg, rng) == MaskService.bounding_rect(mask)

    def test_rect_probability_zero_with_empty_params(self, rng):
        cfg = PerturbConfig(rect_probability=0.0, random_mask=RandomMaskParams.empty())
        mask = random_binary(rng)
        assert MaskService.reshape_perturb(mask, cfg, rng) == mask

    def test_mixture_frequency(self):
        cfg = PerturbConfig(rect_probability=0.5)
        rng = generator_for(42)
        mask = BinaryMask(MaskService.dilate(single_pixel(32, 16, 16), 3).values)
        rect_count = 0
        for _ in range(10_000):
            out, branch = MaskService.reshape_perturb_with_branch(mask, cfg, rng)
            assert out.contains(mask)
            rect_count += branch == BRANCH_RECT
        assert 0.47 <= rect_count / 10_000 <= 0.53

    def test_empty_mask_raises(self, rng):
        with pytest.raises(EmptyMask):
            MaskService.reshape_perturb(BinaryMask.zeros(16, 16), PerturbConfig(), rng)


class TestSamplePerturbations:
    def test_fully_degenerate(self, rng):
        mask = random_binary(rng)
        dilated, reshaped = MaskService.sample_perturbations(mask, PerturbConfig.degenerate(), rng)
        assert dilated == mask and reshaped == mask

    def test_center_pixel_k2(self, rng):
        cfg = PerturbConfig(dilation_radius_k=2)
        dilated, _ = MaskService.sample_perturbations(single_pixel(16, 8, 8), cfg, rng)
        expected = np.zeros((16, 16), dtype=np.uint8)
        expected[6:11, 6:11] = 1
        np.testing.assert_array_equal(dilated.values, expected)

    def test_outputs_contain_input(self, rng):
        cfg = PerturbConfig(dilation_radius_k=1)
        for _ in range(1000):
            mask = random_binary(rng, density=0.05)
            dilated, reshaped = MaskService.sample_perturbations(mask, cfg, rng)
            assert dilated.contains(mask) and reshaped.contains(mask)

    def test_auto_radius_scales_with_width(self):
        assert PerturbConfig().radius_for(256) == 8
        assert PerturbConfig().radius_for(64) == 2
        assert PerturbConfig().radius_for(16) == 1

    def test_radius_range_mode(self):
        cfg = PerturbConfig(dilation_radius_range="1, 3")
        rng = generator_for(0)
        radii = {cfg.radius_for(64, rng) for _ in range(200)}
        assert radii == {1, 2, 3}

    def test_determinism(self, rng):
        mask = random_binary(rng)
        a = MaskService.sample_perturbations(mask, PerturbConfig(), generator_for(9))
        b = MaskService.sample_perturbations(mask, PerturbConfig(), generator_for(9))
        assert a == b
