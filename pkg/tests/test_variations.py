import numpy as np
import pytest

from artifact.ambient import PlaneWaves, VectorFunction, spherical_harmonic
from artifact.errors import InvalidArgumentError, VariationNotImplementedError
from artifact.refsurface import SurfaceSampling, make_sphere, make_torus
from artifact.surfcalc import SurfaceField
from artifact.variations import GENERAL_RHO, QUANTITIES, fd_variation_report, variation


def field(smp, seed, amp=0.1):
    return SurfaceField.from_function(smp, PlaneWaves.random(smp.surface.dim, np.random.default_rng(seed), 3, amp))


class TestClosedForms:
    @pytest.mark.parametrize("l", [0, 1, 2, 3])
    def test_curvature_variation_on_sphere(self, l):
        # kappa'(0) Y_l = (Delta + tr L^2) Y_l = (2 - l (l + 1)) / R^2 Y_l
        R = 1.3
        smp = SurfaceSampling(make_sphere(R), 24)
        Y = SurfaceField.from_function(smp, spherical_harmonic(l, radius=R))
        for v, y in zip(variation("mean_curvature", Y), Y.values):
            assert np.max(np.abs(v - (2 - l * (l + 1)) / R**2 * y)) < 1e-11

    def test_beta_stationary_at_zero(self):
        smp = SurfaceSampling(make_torus(), 12)
        for v in variation("beta", field(smp, 0)):
            assert np.max(np.abs(v)) < 1e-14

    def test_M0_at_zero_is_hW(self):
        smp = SurfaceSampling(make_torus(), 12)
        h = field(smp, 1)
        for v, hv, J in zip(variation("M0", h), h.values, smp.jets()):
            assert np.allclose(v, hv[:, None, None] * J.W, atol=1e-13)

    def test_carrier_required(self):
        smp = SurfaceSampling(make_sphere(), 8)
        with pytest.raises(InvalidArgumentError):
            variation("gradient", field(smp, 0))


class TestFiniteDifferenceHarness:
    @pytest.mark.parametrize("which", QUANTITIES)
    def test_second_order(self, which):
        smp = SurfaceSampling(make_sphere(), 8)
        h = field(smp, 2)
        base = field(smp, 3, 0.05) if which in GENERAL_RHO else None
        carrier = field(smp, 4, 1.0)
        if which == "divergence":
            rng = np.random.default_rng(4)
            carrier = SurfaceField.from_function(smp, VectorFunction([PlaneWaves.random(3, rng, 3) for _ in range(3)]))
        rep = fd_variation_report(which, h, base, carrier)
        assert rep.passed, rep.to_json()
        assert rep.fitted_order > 1.9

    def test_nonzero_base_only_for_general_quantities(self):
        smp = SurfaceSampling(make_sphere(), 8)
        with pytest.raises(VariationNotImplementedError):
            variation("mean_curvature", field(smp, 0), field(smp, 1, 0.05))

    def test_report_serialisation(self):
        smp = SurfaceSampling(make_sphere(), 8)
        rep = fd_variation_report("beta", field(smp, 5), field(smp, 6, 0.05))
        assert rep.to_csv().startswith("eps,error,order,roundoff\n")
        assert len(rep.to_csv().splitlines()) == len(rep.rows) + 1
        assert rep.to_dict()["which"] == "beta"
