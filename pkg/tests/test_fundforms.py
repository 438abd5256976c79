import numpy as np
import pytest
from hypothesis import given, strategies as st

from artifact.errors import InvalidArgumentError
from artifact.fundforms import geometry_jet, principal_decomposition, weingarten_apply
from artifact.refsurface import SurfaceSampling, make_ellipsoid, make_sphere, make_torus


def ellipsoid_mean_curvature(x, axes):
    w = 1.0 / np.asarray(axes, float) ** 2
    g = 2 * x * w
    H = 2 * w
    ng = np.linalg.norm(g, axis=1)
    return -(ng**2 * H.sum() - np.einsum("na,a,na->n", g, H, g)) / ng**3


class TestSphere:
    @pytest.mark.parametrize("radius", [0.5, 1.0, 2.5])
    def test_principal_curvatures(self, radius):
        smp = SurfaceSampling(make_sphere(radius, [0.1, 0.2, -0.3]), 24)
        for J in smp.jets():
            assert np.allclose(J.kappas, -1.0 / radius, atol=1e-12)
            assert np.allclose(J.gauss, 1.0 / radius**2, atol=1e-12)
            assert np.allclose(J.trL2, 2.0 / radius**2, atol=1e-12)

    def test_circle(self):
        smp = SurfaceSampling(make_sphere(2.0, n=2), 32)
        for J in smp.jets():
            assert np.allclose(J.kappa, -0.5, atol=1e-13)


class TestEllipsoid:
    def test_mean_curvature_matches_implicit_formula(self):
        axes = [1.3, 1.0, 0.7]
        smp = SurfaceSampling(make_ellipsoid(axes), 24)
        for J in smp.jets():
            assert np.allclose(J.kappa, ellipsoid_mean_curvature(J.p, axes), atol=1e-11)


class TestPointwiseIdentities:
    @given(st.floats(0, 2 * np.pi), st.floats(0, 2 * np.pi))
    def test_torus_frame(self, u, v):
        J = geometry_jet(make_torus(), 0, [u, v])
        assert np.allclose(J.G[0], J.G[0].T)
        assert np.all(np.linalg.eigvalsh(J.G[0]) > 0)
        assert abs(np.linalg.norm(J.nu[0]) - 1) < 1e-14
        assert np.allclose(J.tau[0] @ J.nu[0], 0, atol=1e-14)
        # Weingarten: W tau_i = -d_i nu, W nu = 0
        assert np.allclose(J.W[0] @ J.tau[0].T, -J.dnu[0].T, atol=1e-12)
        assert np.allclose(J.W[0] @ J.nu[0], 0, atol=1e-12)
        assert np.allclose(J.W[0], J.W[0].T, atol=1e-12)

    @given(st.floats(-1.2, 1.2), st.floats(-1.2, 1.2))
    def test_principal_directions(self, a, b):
        J = geometry_jet(make_ellipsoid([1.2, 1.0, 0.8]), 0, [a, b])
        k, E = principal_decomposition(J)
        # L e = kappa G e, with G-orthonormal columns
        for i in range(2):
            assert np.allclose(J.L[0] @ E[0][:, i], k[0, i] * J.G[0] @ E[0][:, i], atol=1e-11)
        assert np.allclose(E[0].T @ J.G[0] @ E[0], np.eye(2), atol=1e-11)
        assert abs(k[0].sum() - J.kappa[0]) < 1e-12


class TestWeingartenApply:
    def test_rejects_mixed_vectors(self):
        J = geometry_jet(make_sphere(), 0, [0.3, 0.2])
        with pytest.raises(InvalidArgumentError):
            weingarten_apply(J, J.nu[0] + J.tau[0, 0])

    def test_tangent_and_normal(self):
        J = geometry_jet(make_sphere(2.0), 0, [0.3, 0.2])
        t = J.tau[0, 0]
        assert np.allclose(weingarten_apply(J, t), -0.5 * t)
        assert np.allclose(weingarten_apply(J, J.nu[0]), 0, atol=1e-14)
