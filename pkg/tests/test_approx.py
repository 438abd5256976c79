import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate as sint

from artifact.approx import (MollifierKernel, ball_condition_check, bundle_cloud, direct_convolution, hausdorff,
                             hypersurface_metric, implicit_height, kernel_constant, mollify_level)
from artifact.errors import InvalidArgumentError
from artifact.refsurface import SurfaceSampling, make_sphere, make_torus
from artifact.tubular import TubularNeighborhood


@pytest.fixture(scope="module")
def circle_level():
    tube = TubularNeighborhood(make_sphere(1.0, n=2), resolution=64)
    return tube.level_function([-1.8, -1.8], [1.8, 1.8], 0.05, width=0.5)


class TestKernel:
    @given(st.integers(1, 40), st.floats(0.2, 5.0), st.sampled_from([2, 3]))
    def test_constant_closed_form(self, k, R, n):
        a = kernel_constant(k, R, n)
        b = kernel_constant(k, R, n, method="closed")
        assert abs(a - b) < 1e-11 * b

    def test_unit_mass_in_plane(self):
        ker = MollifierKernel(3, 1.5, 2)
        mass = sint.quad(lambda r: 2 * np.pi * r * ker(np.array([r, 0.0])), 0, 1.5, epsabs=0, epsrel=1e-13)[0]
        assert abs(mass - 1) < 1e-12

    def test_derivatives_by_differences(self):
        ker = MollifierKernel(4, 1.0, 3)
        x = np.array([0.2, -0.3, 0.4])
        _, g, H = ker.derivatives(x)
        h = 1e-6
        E = np.eye(3)
        fd = np.array([(ker(x + h * e) - ker(x - h * e)) / (2 * h) for e in E])
        fdH = np.array([(ker.derivatives(x + h * e)[1] - ker.derivatives(x - h * e)[1]) / (2 * h) for e in E])
        assert np.allclose(g, fd, atol=1e-7)
        assert np.allclose(H, fdH, atol=1e-6)

    def test_bad_arguments(self):
        with pytest.raises(InvalidArgumentError):
            kernel_constant(0, 1.0)
        with pytest.raises(InvalidArgumentError):
            MollifierKernel(2, -1.0)


class TestMollify:
    def test_fft_matches_direct_sum(self, circle_level):
        phik = mollify_level(circle_level, 4)
        rng = np.random.default_rng(0)
        idx = rng.integers(0, circle_level.shape[0], (15, 2))
        ref = direct_convolution(circle_level, 4, phik.R, idx)
        got = np.concatenate([phik.values[tuple(idx.T)][:, None], phik.grad[tuple(idx.T)],
                              phik.hess[tuple(idx.T)].reshape(15, -1)], axis=1)
        assert np.max(np.abs(got - ref)) < 1e-11

    def test_radius_too_small(self, circle_level):
        with pytest.raises(InvalidArgumentError):
            mollify_level(circle_level, 4, R=1.0)

    def test_constant_input_rejected(self, circle_level):
        from dataclasses import replace

        with pytest.raises(InvalidArgumentError):
            mollify_level(replace(circle_level, values=np.ones(circle_level.shape)), 4)

    def test_implicit_height_is_concentric(self, circle_level):
        # a radial phi_k has a circular zero set: r_k is constant
        phik = mollify_level(circle_level, 64)
        h = implicit_height(phik, SurfaceSampling(make_sphere(1.0, n=2), 64))
        vals = np.concatenate(h.field.values)
        assert np.ptp(vals) < 1e-3
        assert abs(vals.mean()) < 0.5


class TestMetric:
    def test_hausdorff_symmetry_and_identity(self):
        rng = np.random.default_rng(1)
        A, B = rng.normal(size=(50, 4)), rng.normal(size=(70, 4))
        assert hausdorff(A, B) == hausdorff(B, A)
        assert hausdorff(A, A) == 0.0

    def test_hausdorff_dimension_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            hausdorff(np.zeros((3, 2)), np.zeros((3, 3)))

    @pytest.mark.parametrize("order,want", [(0, 0.2), (1, 0.2), (2, np.sqrt(0.04 + 2 * (1 - 1 / 1.2) ** 2))])
    def test_concentric_spheres(self, order, want):
        # identical angular samples: matched points are the nearest in every block
        d = hypersurface_metric(make_sphere(1.0), make_sphere(1.2), order=order, resolution=12)
        assert abs(d - want) < 1e-12

    def test_cloud_shape(self):
        assert bundle_cloud(make_torus(), 2, 8).shape[1] == 3 + 3 + 9


class TestBallCondition:
    def test_sphere(self):
        tube = TubularNeighborhood(make_sphere(1.0), resolution=12)
        assert ball_condition_check(make_sphere(1.0), 0.9, tube)[0]
        assert not ball_condition_check(make_sphere(1.0), 1.1, tube)[0]
