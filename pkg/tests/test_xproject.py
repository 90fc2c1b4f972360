import math

import numpy as np
import pytest

from conftest import ball
from scbct.volgrid import Grid, Volume3
from scbct.xproject import (ConeBeamGeometry, ProjectionSet, back_array, back_project, default_step,
                            desk_geometry, forward_array, forward_project, uniform_angles)


def small_geometry(n_views=8, n=32, offset=(0.0, 0.0)):
    return ConeBeamGeometry(dsd=1500.0, dso=1000.0, det_rows=n, det_cols=n, pixel_size=(1.0, 1.0),
                            center_offset=offset, angles=uniform_angles(n_views))


def cube_volume(n=32, side_vox=20, spacing=1.0):
    vals = np.zeros((n, n, n), np.float32)
    lo = (n - side_vox) // 2
    vals[lo:lo + side_vox, lo:lo + side_vox, lo:lo + side_vox] = 1
    return Volume3(vals, (spacing,) * 3, (0.0, 0.0, 0.0))


class TestGeometry:
    @pytest.mark.parametrize("kwargs", [
        dict(dsd=900.0), dict(det_rows=0), dict(pixel_size=(1.0, 0.0)), dict(angles=()),
    ])
    def test_invalid(self, kwargs):
        base = dict(dsd=1500.0, dso=1000.0, det_rows=4, det_cols=4, angles=(0.0,))
        base.update(kwargs)
        with pytest.raises(ValueError):
            ConeBeamGeometry(**base)

    def test_round_trip_dict(self):
        g = desk_geometry(12)
        assert ConeBeamGeometry.from_dict(g.to_dict()) == g

    def test_projection_shape_checked(self):
        with pytest.raises(ValueError):
            ProjectionSet(small_geometry(2, 4), np.zeros((2, 4, 5)))

    def test_uniform_angles(self):
        a = uniform_angles(4)
        assert np.allclose(a, [0, math.pi / 2, math.pi, 3 * math.pi / 2])


class TestForward:
    def test_zero_volume(self):
        v = Volume3(np.zeros((8, 8, 8)))
        assert not forward_project(v, small_geometry(4, 16)).data.any()

    def test_central_chord_of_cube(self):
        v = cube_volume()
        g = ConeBeamGeometry(dsd=1500.0, dso=1000.0, det_rows=33, det_cols=33, center_offset=(0.0, 0.0),
                             angles=(0.0, 0.3, math.pi / 4))
        p = forward_project(v, g, default_step(v))
        for view in range(3):
            val = float(p.data[view, 16, 16])
            chord = 20.0 / max(abs(math.cos(g.angles[view])), abs(math.sin(g.angles[view])))
            assert abs(val - chord) / chord <= 0.02

    def test_linearity(self, rng):
        g = small_geometry(4, 24)
        a = rng.random((12, 12, 12))
        b = rng.random((12, 12, 12))
        fa, fb = forward_array(a, (1, 1, 1), g, 0.5), forward_array(b, (1, 1, 1), g, 0.5)
        fab = forward_array(2.5 * a - 1.5 * b, (1, 1, 1), g, 0.5)
        assert np.allclose(fab, 2.5 * fa - 1.5 * fb, rtol=1e-6, atol=1e-9 * np.abs(fa).max())

    def test_bad_step(self):
        with pytest.raises(ValueError):
            forward_project(Volume3(np.ones((4, 4, 4))), small_geometry(1, 4), 0.0)

    def test_center_offset_translates_image(self, rng):
        v = Volume3(rng.random((12, 12, 12)))
        k = 3
        p0 = forward_project(v, small_geometry(3, 32)).data
        pk = forward_project(v, small_geometry(3, 32, offset=(k * 1.0, 0.0))).data
        # pixel c with offset k*pu sees the ray of pixel c + k without offset
        assert np.allclose(pk[:, :, : 32 - k], p0[:, :, k:], rtol=1e-3, atol=1e-4)

    def test_rotational_symmetry(self):
        n = 32
        idx = np.indices((n, n, n)).astype(float) - (n - 1) / 2
        r2 = idx[0] ** 2 + idx[1] ** 2 + idx[2] ** 2
        blob = Volume3(np.exp(-r2 / (2 * 4.0 ** 2)))
        p = forward_project(blob, small_geometry(12, 48)).data.astype(np.float64)
        ref = p[0]
        for view in p[1:]:
            assert np.linalg.norm(view - ref) / np.linalg.norm(ref) <= 0.01

    def test_deterministic(self, rng):
        import numba
        v = Volume3(rng.random((16, 16, 16)))
        a = forward_project(v, small_geometry()).data
        numba.set_num_threads(1)
        try:
            b = forward_project(v, small_geometry()).data
        finally:
            numba.set_num_threads(numba.config.NUMBA_NUM_THREADS)
        assert a.tobytes() == b.tobytes()


class TestBack:
    def test_zero_projections(self):
        g = small_geometry(4, 16)
        out = back_project(ProjectionSet(g, np.zeros((4, 16, 16))), Grid((8, 8, 8), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0)))
        assert not out.values.any()

    @pytest.mark.parametrize("step", [0.5, 0.37, 1.3])
    def test_adjointness(self, rng, step):
        g = small_geometry(8, 32)
        for _ in range(3):
            x = rng.standard_normal((16, 16, 16))
            y = rng.standard_normal((8, 32, 32))
            ax = forward_array(x, (1, 1, 1), g, step)
            aty = back_array(y, x.shape, (1, 1, 1), g, step)
            assert abs(np.vdot(ax, y) - np.vdot(x, aty)) / (np.linalg.norm(ax) * np.linalg.norm(y)) <= 1e-10

    def test_adjointness_anisotropic_offset(self, rng):
        g = ConeBeamGeometry(dsd=1200.0, dso=700.0, det_rows=20, det_cols=28, pixel_size=(0.8, 1.1),
                             center_offset=(-3.0, 1.0), angles=uniform_angles(5, math.pi))
        x = rng.standard_normal((10, 14, 9))
        sp = (1.2, 0.8, 1.5)
        y = rng.standard_normal((5, 20, 28))
        ax = forward_array(x, sp, g, 0.4)
        aty = back_array(y, x.shape, sp, g, 0.4)
        assert abs(np.vdot(ax, y) - np.vdot(x, aty)) / (np.linalg.norm(ax) * np.linalg.norm(y)) <= 1e-10

    def test_single_pixel_ray_support(self):
        n = 16
        g = ConeBeamGeometry(dsd=1500.0, dso=1000.0, det_rows=16, det_cols=16, center_offset=(0.0, 0.0),
                             angles=(0.7,))
        y = np.zeros((1, 16, 16))
        r, c = 5, 11
        y[0, r, c] = 1.0
        out = back_array(y, (n, n, n), (1, 1, 1), g, 0.5)
        assert out.any()
        # ray geometry rebuilt by hand
        th = g.angles[0]
        src = np.array([1000 * math.cos(th), 1000 * math.sin(th), 0.0])
        u, v = c - 7.5, r - 7.5
        pix = src + np.array([-1500 * math.cos(th) - u * math.sin(th), -1500 * math.sin(th) + u * math.cos(th), v])
        d = (pix - src) / np.linalg.norm(pix - src)
        pts = np.stack(np.nonzero(out), axis=1) - (n - 1) / 2
        rel = pts - src
        dist = np.linalg.norm(rel - (rel @ d)[:, None] * d, axis=1)
        assert dist.max() <= math.sqrt(3) + 1e-9
        assert np.count_nonzero(out) < 0.05 * n ** 3

    def test_deterministic(self, rng):
        g = small_geometry()
        y = rng.standard_normal((8, 32, 32))
        a = back_array(y, (16, 16, 16), (1, 1, 1), g, 0.5)
        b = back_array(y, (16, 16, 16), (1, 1, 1), g, 0.5)
        assert a.tobytes() == b.tobytes()


def test_desk_profile_smoke():
    v = Volume3(ball((16, 16, 16), (7.5, 7.5, 7.5), 6).values.astype(np.float32))
    p = forward_project(v, desk_geometry(6))
    assert p.data.shape == (6, 128, 128)
    assert p.data.max() > 10
