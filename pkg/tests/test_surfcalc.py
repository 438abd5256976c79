import numpy as np
import pytest

from artifact.ambient import PlaneWaves, Polynomial, VectorFunction, spherical_harmonic
from artifact.refsurface import SurfaceSampling, make_ellipsoid, make_sphere, make_torus
from artifact.surfcalc import (SurfaceField, integrate, laplace_beltrami, surface_divergence,
                               surface_gradient, surface_hessian)


def owned_err(a, b, smp):
    return max(float(np.max(np.abs(np.asarray(x) - np.asarray(y))[g.owned])) for x, y, g in zip(a, b, smp.grids))


class TestLaplaceBeltrami:
    @pytest.mark.parametrize("l", [0, 1, 2, 3])
    def test_sphere_eigenfunctions(self, l):
        R = 1.7
        smp = SurfaceSampling(make_sphere(R), 32)
        Y = SurfaceField.from_function(smp, spherical_harmonic(l, 3, radius=R))
        lap = laplace_beltrami(Y)
        assert owned_err(lap.values, [-l * (l + 1) / R**2 * v for v in Y.values], smp) < 1e-11

    def test_forms_agree(self):
        smp = SurfaceSampling(make_torus(), 24)
        f = SurfaceField.from_function(smp, PlaneWaves.random(3, np.random.default_rng(0), 3))
        a = laplace_beltrami(f).values
        b = laplace_beltrami(f, "divergence").values
        c = surface_divergence(surface_gradient(f)).values
        tr = [np.trace(h, axis1=1, axis2=2) for h in surface_hessian(f).values]
        assert owned_err(a, b, smp) < 1e-8
        assert owned_err(a, c, smp) < 1e-8
        assert owned_err(a, tr, smp) < 1e-8

    def test_finite_difference_route_converges(self):
        errs = []
        f = PlaneWaves.random(3, np.random.default_rng(1), 3)
        for res in (24, 48):
            smp = SurfaceSampling(make_torus(), res)
            exact = SurfaceField.from_function(smp, f)
            fd = SurfaceField.from_values(smp, exact.values, stencil_order=4)
            errs.append(owned_err(laplace_beltrami(exact).values, laplace_beltrami(fd).values, smp))
        assert np.log2(errs[0] / errs[1]) > 3.5


class TestGradient:
    def test_tangential(self):
        smp = SurfaceSampling(make_ellipsoid([1.2, 1, 0.8]), 24)
        g = surface_gradient(SurfaceField.from_function(smp, PlaneWaves.random(3, np.random.default_rng(3), 3)))
        for v, J in zip(g.values, smp.jets()):
            assert np.max(np.abs(np.einsum("na,na->n", v, J.nu))) < 1e-12

    def test_projection_of_ambient_gradient(self):
        f = Polynomial({(1, 0, 0): 2.0, (0, 1, 1): 1.0}, 3)
        smp = SurfaceSampling(make_sphere(), 24)
        g = surface_gradient(SurfaceField.from_function(smp, f))
        want = [np.einsum("nab,nb->na", J.P, f.derivatives(J.p, 1)[1]) for J in smp.jets()]
        assert owned_err(g.values, want, smp) < 1e-12


class TestIntegration:
    def test_divergence_theorem_closed_surface(self):
        smp = SurfaceSampling(make_torus(), 48)
        V = VectorFunction([PlaneWaves.random(3, np.random.default_rng(4 + a), 3) for a in range(3)])
        f = SurfaceField.from_function(smp, V)
        # int div_S f = -int kappa (f | nu) for any ambient field restricted to a closed surface
        lhs = integrate(surface_divergence(f).values, smp)
        rhs = -integrate([J.kappa * np.einsum("na,na->n", v, J.nu) for v, J in zip(f.values, smp.jets())], smp)
        assert abs(lhs - rhs) < 1e-10

    def test_mean_of_harmonic_vanishes(self):
        smp = SurfaceSampling(make_sphere(), 64)
        Y = SurfaceField.from_function(smp, spherical_harmonic(2))
        assert abs(integrate(Y.values, smp)) < 1e-6
