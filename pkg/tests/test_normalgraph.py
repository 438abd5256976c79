import numpy as np
import pytest
from hypothesis import given, strategies as st

from artifact.ambient import Constant, PlaneWaves, Polynomial
from artifact.errors import InadmissibleHeightError, InvalidArgumentError
from artifact.normalgraph import (HeightFunction, admissible_bound, area_of_graph, ellipticity_constant,
                                  graph_geometry, mean_curvature_of_graph, offset_surface, principal_symbol,
                                  symbol_lower_bound)
from artifact.refsurface import SurfaceSampling, make_ellipsoid, make_sphere, make_torus
from artifact.surfcalc import integrate


def small_wave(seed, dim=3, amp=0.05):
    return PlaneWaves.random(dim, np.random.default_rng(seed), count=3, amplitude=amp)


class TestAdmissibility:
    def test_sphere_bound(self):
        assert abs(admissible_bound(make_sphere(1.5), 16) - 1.5) < 1e-12

    def test_torus_bound(self):
        # largest principal curvature is 1 / r_minor
        assert abs(admissible_bound(make_torus(2.0, 0.5), 24) - 0.5) < 1e-12

    def test_too_large_raises(self):
        smp = SurfaceSampling(make_sphere(), 12)
        with pytest.raises(InadmissibleHeightError):
            HeightFunction.constant(smp, 0.95)
        HeightFunction.constant(smp, 0.85)

    def test_vector_field_rejected(self):
        from artifact.surfcalc import position_field

        smp = SurfaceSampling(make_sphere(), 12)
        with pytest.raises(InvalidArgumentError):
            HeightFunction(position_field(smp))


class TestConcentricSpheres:
    @pytest.mark.parametrize("c", [-0.5, -0.1, 0.0, 0.3, 0.8])
    def test_offset_sphere(self, c):
        R = 1.0
        smp = SurfaceSampling(make_sphere(R), 24)
        h = HeightFunction.constant(smp, c)
        for geo, J in zip(graph_geometry(h), smp.jets()):
            assert np.allclose(np.linalg.norm(geo.q, axis=1), R + c, atol=1e-13)
            assert np.allclose(geo.beta, 1.0)
            assert np.allclose(geo.nu, J.nu, atol=1e-14)
            assert np.allclose(geo.G, (1 + c / R) ** 2 * J.G, atol=1e-12)
            assert np.allclose(geo.measure, (1 + c / R) ** 2, atol=1e-13)
            assert np.allclose(geo.kappa, -2.0 / (R + c), atol=1e-12)
        ref = integrate([np.ones(len(g.theta)) for g in smp.grids], smp)
        assert abs(area_of_graph(h) - (1 + c / R) ** 2 * ref) < 1e-12


class TestGraphFormulas:
    @pytest.mark.parametrize("seed", range(3))
    def test_metric_and_determinant(self, seed):
        smp = SurfaceSampling(make_ellipsoid([1.2, 1.0, 0.8]), 16)
        h = HeightFunction.from_function(smp, small_wave(seed))
        for geo in graph_geometry(h):
            assert np.max(np.abs(geo.G - geo.G_formula)) < 1e-12
            assert np.max(np.abs(geo.detg - geo.detg_formula) / geo.detg) < 1e-12
            assert np.max(np.abs(np.einsum("na,nia->ni", geo.nu, geo.tau))) < 1e-13
            assert np.allclose(np.linalg.norm(geo.nu, axis=1), 1.0)

    def test_curvature_matches_offset_chart(self):
        surf = make_torus()
        rho = small_wave(7)
        smp = SurfaceSampling(surf, 16)
        k = mean_curvature_of_graph(HeightFunction.from_function(smp, rho))
        off = SurfaceSampling(offset_surface(surf, rho), 16)
        for a, J in zip(k.values, off.jets(2)):
            assert np.max(np.abs(a - J.kappa)) < 1e-10

    def test_flat_graph_of_linear_height(self):
        # rho = s * x on the unit sphere is not flat, but beta must equal 1 / sqrt(1 + |M0 grad rho|^2)
        smp = SurfaceSampling(make_sphere(), 12)
        h = HeightFunction.from_function(smp, Polynomial({(1, 0, 0): 0.2}, 3))
        for geo in graph_geometry(h):
            assert np.allclose(geo.beta, 1 / np.sqrt(1 + np.sum(geo.a**2, axis=1)))


class TestSymbol:
    @given(st.integers(0, 50))
    def test_lower_bound_and_ellipticity(self, seed):
        smp = SurfaceSampling(make_sphere(), 8)
        h = HeightFunction.from_function(smp, small_wave(seed, amp=0.1))
        rng = np.random.default_rng(seed)
        for geo, J in zip(graph_geometry(h), smp.jets()):
            xi = rng.normal(size=(len(geo.beta), 3))
            xi -= np.einsum("na,na->n", xi, J.nu)[:, None] * J.nu
            c = principal_symbol(geo, xi)
            lb = symbol_lower_bound(geo, xi)
            eta = ellipticity_constant(geo, J)
            scale = np.sum(xi**2, axis=1)
            assert np.all(c >= lb - 64 * np.finfo(float).eps * np.abs(c))
            assert np.all(lb >= eta * scale * (1 - 1e-12))
            assert eta > 0
