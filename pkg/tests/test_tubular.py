import numpy as np
import pytest
from hypothesis import given, strategies as st

from artifact.errors import InvalidArgumentError, NotAGraphError, OutOfTubeError
from artifact.refsurface import SurfaceSampling, make_ellipsoid, make_sphere, make_torus
from artifact.tubular import (LevelField, TubularNeighborhood, cutoff, level_profile, parameterize_over,
                              smoothstep_c4)


@pytest.fixture(scope="module")
def sphere_tube():
    return TubularNeighborhood(make_sphere(1.0), resolution=16)


@pytest.fixture(scope="module")
def circle_tube():
    return TubularNeighborhood(make_sphere(1.0, n=2), resolution=64)


class TestCutoff:
    def test_plateaus(self):
        s = np.array([-3, -2, -1, -0.5, 0, 0.5, 1, 2, 3.0])
        assert np.allclose(cutoff(s), [0, 0, 1, 1, 1, 1, 1, 0, 0])

    @given(st.floats(-2.5, 2.5), st.floats(-2.5, 2.5))
    def test_monotone_in_abs(self, a, b):
        if abs(a) <= abs(b):
            assert cutoff(a) >= cutoff(b) - 1e-15

    def test_derivatives_by_differences(self):
        s = np.linspace(-2.2, 2.2, 41) + 0.013
        h = 1e-5
        chi, c1, c2 = cutoff(s, 2)
        assert np.allclose(c1, (cutoff(s + h) - cutoff(s - h)) / (2 * h), atol=1e-8)
        assert np.allclose(c2, (cutoff(s + h, 2)[1] - cutoff(s - h, 2)[1]) / (2 * h), atol=1e-7)

    def test_smoothstep_endpoints(self):
        assert smoothstep_c4(0.0) == 0.0 and smoothstep_c4(1.0) == 1.0

    def test_level_profile(self):
        a = 0.6
        d = np.array([-1.0, -0.3, -0.1, 0.0, 0.1, 0.3, 1.0])
        g, g1, _ = level_profile(d, a)
        # identity near the surface, sign far away
        assert np.allclose(g[2:5], d[2:5]) and np.allclose(g1[2:5], 1.0)
        assert np.allclose(g[[0, -1]], [-1.0, 1.0])
        assert np.all(np.diff(level_profile(np.linspace(-0.5, 0.5, 101), a)[0]) >= 0)
        inner = np.linspace(-0.39, 0.39, 101)
        assert np.all(np.diff(level_profile(inner, a)[0]) > 0)


class TestProjection:
    @given(st.floats(-0.6, 0.6), st.floats(0.1, 3.0), st.floats(0, 2 * np.pi))
    def test_sphere_distance(self, r, polar, az):
        tube = TubularNeighborhood(make_sphere(1.0), resolution=8, width=1.0)
        u = np.array([np.sin(polar) * np.cos(az), np.sin(polar) * np.sin(az), np.cos(polar)])
        pr = tube.project([(1 + r) * u])
        assert abs(pr.distance[0] - r) < 1e-13
        assert np.allclose(pr.normal[0], u, atol=1e-12)
        assert pr.reconstruction_error()[0] < 1e-13

    def test_torus_reconstruction(self):
        tube = TubularNeighborhood(make_torus(), resolution=24)
        rng = np.random.default_rng(0)
        u, v = rng.uniform(0, 2 * np.pi, (2, 200))
        r = rng.uniform(-0.5, 0.5, 200)
        c = np.stack([np.cos(u), np.sin(u), 0 * u], 1)
        nrm = np.cos(v)[:, None] * c + np.sin(v)[:, None] * np.array([0, 0, 1.0])
        x = 2 * c + (1 + r)[:, None] * nrm
        pr = tube.project(x)
        assert np.max(np.abs(pr.distance - r)) < 1e-12
        assert np.max(pr.reconstruction_error()) < 1e-12

    def test_outside_tube_raises(self, sphere_tube):
        with pytest.raises(OutOfTubeError):
            sphere_tube.project([[3.0, 0, 0]])
        assert abs(sphere_tube.project([[3.0, 0, 0]], check_tube=False).distance[0] - 2.0) < 1e-12

    def test_distance_derivatives_sphere(self, sphere_tube):
        x = np.array([[0.0, 1.3, 0.0], [0.5, 0.0, 0.0]])
        d = sphere_tube.distance_derivatives(x)
        r = np.linalg.norm(x, axis=1)
        u = x / r[:, None]
        # hess |x| = (I - u u^T) / |x| and lap = 2 / |x|
        want = (np.eye(3)[None] - u[:, :, None] * u[:, None, :]) / r[:, None, None]
        assert np.allclose(d["hess"], want, atol=1e-12)
        assert np.allclose(d["laplacian"], 2 / r, atol=1e-12)


class TestReach:
    def test_sphere(self):
        est = TubularNeighborhood(make_sphere(0.8), resolution=16).reach()
        assert abs(est.width - 0.8) < 1e-6

    def test_ellipsoid_curvature_limited(self):
        # largest principal curvature of (1.2, 1, 0.5) is 1.2 / 0.25 at the ends of the long axis
        est = TubularNeighborhood(make_ellipsoid([1.2, 1.0, 0.5]), resolution=24).reach()
        assert abs(est.width - 0.25 / 1.2) < 1e-6
        assert est.curvature_limited


class TestLevelFunction:
    def test_values_and_sign(self, circle_tube):
        lf = circle_tube.level_function([-1.6, -1.6], [1.6, 1.6], 0.05, width=0.5)
        r = np.linalg.norm(lf.points(), axis=1)
        near = np.abs(r - 1) < 0.5 / 3
        assert np.allclose(lf.values.ravel()[near], (r - 1)[near], atol=1e-12)
        far = np.abs(r - 1) > 2 * 0.5 / 3
        assert np.allclose(lf.values.ravel()[far], np.sign(r - 1)[far])
        zc = lf.zero_crossings()
        assert np.max(np.abs(np.linalg.norm(zc, axis=1) - 1)) < 1e-3

    def test_box_too_small(self, circle_tube):
        with pytest.raises(InvalidArgumentError):
            circle_tube.level_function([-1.1, -1.1], [1.1, 1.1], 0.05, width=0.5)

    def test_save_load_roundtrip(self, circle_tube, tmp_path):
        lf = circle_tube.level_function([-1.6, -1.6], [1.6, 1.6], 0.1, width=0.5)
        lf.save(tmp_path / "phi.bin")
        back = LevelField.load(tmp_path / "phi.bin")
        assert back.shape == lf.shape
        assert np.array_equal(back.values, lf.values)
        # the exchange format carries values only
        assert back.grad is None
        assert back.width == lf.width
        assert np.allclose(back.lower, lf.lower)

    def test_load_rejects_truncated(self, circle_tube, tmp_path):
        lf = circle_tube.level_function([-1.6, -1.6], [1.6, 1.6], 0.1, width=0.5)
        lf.save(tmp_path / "phi.bin")
        raw = (tmp_path / "phi.bin").read_bytes()
        (tmp_path / "phi.bin").write_bytes(raw[:-8])
        with pytest.raises(InvalidArgumentError):
            LevelField.load(tmp_path / "phi.bin")


class TestParameterizeOver:
    def test_concentric(self):
        smp = SurfaceSampling(make_sphere(1.0), 12)
        h = parameterize_over(smp, make_sphere(1.2), closeness=False)
        assert max(np.max(np.abs(v - 0.2)) for v in h.field.values) < 1e-12

    def test_not_a_graph(self):
        smp = SurfaceSampling(make_sphere(1.0), 12)
        with pytest.raises(NotAGraphError):
            parameterize_over(smp, make_sphere(0.3, [0.6, 0, 0]), closeness=False)
