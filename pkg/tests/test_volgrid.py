import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_mask, random_volume
from scbct.volgrid import (Grid, GridError, Mask3, Volume3, add_gaussian_noise, add_scaled,
                           cleanup_mask, crop_overlap_fov, rescale_unit, resample_to_grid)


class TestInvariants:
    def test_rejects_non_finite(self):
        with pytest.raises(GridError):
            Volume3(np.array([[[np.nan]]]))

    def test_rejects_bad_spacing(self):
        with pytest.raises(GridError):
            Volume3(np.zeros((2, 2, 2)), spacing=(1, 0, 1))

    def test_mask_must_be_binary(self):
        with pytest.raises(GridError):
            Mask3(np.full((2, 2, 2), 2))


class TestResample:
    def test_identity_grid(self, rng):
        v = random_volume(rng)
        out = resample_to_grid(v, v.grid)
        assert np.array_equal(out.values, v.values)

    def test_constant_to_interior_grid(self):
        v = Volume3(np.full((10, 10, 10), 5.0), (2, 2, 2), (-9, -9, -9))
        g = Grid((7, 5, 6), (1.3, 0.7, 1.9), (-4.0, -1.0, -3.0))
        out = resample_to_grid(v, g)
        assert np.allclose(out.values, 5.0, atol=0, rtol=1e-6)

    def test_ramp_at_half_voxel_offsets(self):
        x = np.arange(8, dtype=np.float32)
        v = Volume3(np.broadcast_to(x[:, None, None], (8, 4, 4)).copy(), (1, 1, 1), (0, 0, 0))
        g = Grid((7, 4, 4), (1, 1, 1), (0.5, 0, 0))
        out = resample_to_grid(v, g)
        assert np.allclose(out.values[:, 0, 0], x[:-1] + 0.5, atol=1e-6)

    def test_trilinear_function_reproduced_at_interior_points(self, rng):
        i, j, k = np.indices((9, 9, 9)).astype(float)
        f = lambda x, y, z: 1 + 2 * x - y + 0.5 * z + 0.25 * x * y * z
        v = Volume3(f(i, j, k), (1, 1, 1))
        pts = rng.uniform(0.5, 7.5, size=(3,))
        g = Grid((3, 3, 3), (0.37, 0.41, 0.29), tuple(pts - 0.5))
        out = resample_to_grid(v, g)
        coords = np.meshgrid(*[g.origin[a] + np.arange(3) * g.spacing[a] for a in range(3)], indexing="ij")
        assert np.allclose(out.values, f(*coords), rtol=1e-5)

    def test_outside_extent_is_zero(self):
        v = Volume3(np.ones((4, 4, 4)))
        out = resample_to_grid(v, Grid((2, 2, 2), (1, 1, 1), (10, 10, 10)), "nearest")
        assert np.all(out.values == 0)

    def test_mask_nearest_stays_mask(self, rng):
        m = random_mask(rng)
        out = resample_to_grid(m, Grid((5, 5, 5), (1.5, 1.5, 1.5), (0, 0, 0)), "nearest")
        assert isinstance(out, Mask3)


class TestCrop:
    def test_identical_grids(self, rng):
        a = random_volume(rng)
        b = random_volume(rng)
        ra, rb, region = crop_overlap_fov(a, b)
        assert np.array_equal(ra.values, a.values) and np.array_equal(rb.values, b.values)
        assert region.lo == (0, 0, 0) and region.hi == a.dims

    def test_z_overlap(self):
        ref = Volume3(np.ones((4, 4, 101)), (1, 1, 3), (0, 0, 0))
        other = Volume3(np.ones((4, 4, 61)), (1, 1, 3), (0, 0, 60))
        ra, rb, region = crop_overlap_fov(ref, other)
        assert ra.origin[2] == 60.0
        assert ra.origin[2] + (ra.dims[2] - 1) * 3 == 240.0
        assert ra.grid.same_as(rb.grid)
        assert region.lo[2] == 20 and region.hi[2] == 81

    def test_disjoint(self):
        a = Volume3(np.ones((3, 3, 3)))
        b = Volume3(np.ones((3, 3, 3)), origin=(100, 0, 0))
        with pytest.raises(GridError):
            crop_overlap_fov(a, b)

    @settings(max_examples=40, deadline=None)
    @given(st.tuples(*[st.integers(2, 9)] * 3), st.tuples(*[st.integers(2, 9)] * 3),
           st.tuples(*[st.integers(-4, 4)] * 3))
    def test_outputs_share_grid_and_shrink(self, da, db, shift):
        a = Volume3(np.ones(da))
        b = Volume3(np.ones(db), origin=tuple(float(s) for s in shift))
        try:
            ra, rb, _ = crop_overlap_fov(a, b)
        except GridError:
            return
        assert ra.grid.same_as(rb.grid)
        assert np.prod(ra.dims) <= min(np.prod(da), np.prod(db))


class TestArithmetic:
    def test_add_scaled_cases(self, rng):
        a, b = random_volume(rng), random_volume(rng)
        assert np.array_equal(add_scaled(a, b, 0.0).values, a.values)
        z = a.with_values(np.zeros(a.dims))
        assert np.allclose(add_scaled(z, b, 1.0).values, b.values)
        out = add_scaled(a, b, 0.5).values
        flat_a, flat_b = a.values.ravel(), b.values.ravel()
        expect = [float(x) + 0.5 * float(y) for x, y in zip(flat_a, flat_b)]
        assert np.allclose(out.ravel(), expect, rtol=1e-6)

    def test_add_scaled_grid_mismatch(self, rng):
        with pytest.raises(GridError):
            add_scaled(random_volume(rng), random_volume(rng, spacing=(2, 1, 1)))

    def test_rescale_examples(self):
        v = Volume3(np.array([-1000.0, 0.0, 1000.0]).reshape(3, 1, 1))
        assert np.array_equal(rescale_unit(v).values.ravel(), [0, 0.5, 1])
        u = Volume3(np.array([0.0, 0.3, 1.0]).reshape(3, 1, 1))
        assert np.array_equal(rescale_unit(u).values, u.values)
        with pytest.raises(GridError):
            rescale_unit(Volume3(np.ones((2, 2, 2))))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float32, (4, 3, 5), elements=st.floats(-1e4, 1e4, width=32), unique=True))
    def test_rescale_preserves_rank(self, arr):
        out = rescale_unit(Volume3(arr)).values
        assert out.min() == 0 and out.max() == 1
        order = np.argsort(arr.ravel(), kind="stable")
        assert np.all(np.diff(out.ravel()[order]) >= 0)


class TestNoise:
    def test_sigma_zero(self, rng):
        v = random_volume(rng)
        assert np.array_equal(add_gaussian_noise(v, 0, 7).values, v.values)

    def test_deterministic(self, rng):
        v = random_volume(rng)
        a = add_gaussian_noise(v, 0.1, 123).values
        b = add_gaussian_noise(v, 0.1, 123).values
        assert a.tobytes() == b.tobytes()
        assert not np.array_equal(a, add_gaussian_noise(v, 0.1, 124).values)

    def test_moments(self):
        v = Volume3(np.zeros((100, 100, 100)))
        n = add_gaussian_noise(v, 1.0, 99).values.astype(np.float64)
        assert abs(n.mean()) < 0.01
        assert abs(n.std() - 1.0) < 0.01

    def test_negative_sigma(self, rng):
        with pytest.raises(ValueError):
            add_gaussian_noise(random_volume(rng), -1.0, 0)


class TestCleanup:
    def test_fills_cavity(self):
        m = np.zeros((7, 7, 7), np.uint8)
        m[1:6, 1:6, 1:6] = 1
        m[3, 3, 3] = 0
        out = cleanup_mask(Mask3(m), min_island_voxels=1).values
        assert out[3, 3, 3] == 1

    def test_removes_small_island(self):
        m = np.zeros((12, 12, 12), np.uint8)
        m[1:6, 1:6, 1:5] = 1  # 100 voxels
        m[9, 9, 8:11] = 1  # 3 voxels
        out = cleanup_mask(Mask3(m), min_island_voxels=10).values
        assert out[1:6, 1:6, 1:5].all()
        assert out.sum() == 100

    def test_diagonal_neighbours_are_one_island(self):
        m = np.zeros((5, 5, 5), np.uint8)
        for t in range(5):
            m[t, t, t] = 1
        assert cleanup_mask(Mask3(m), min_island_voxels=5).values.sum() == 5

    def test_idempotent_and_grid_preserving(self, rng):
        for _ in range(20):
            m = random_mask(rng, (10, 10, 10), p=rng.uniform(0.2, 0.7))
            once = cleanup_mask(m, 8)
            twice = cleanup_mask(once, 8)
            assert np.array_equal(once.values, twice.values)
            assert once.grid == m.grid
