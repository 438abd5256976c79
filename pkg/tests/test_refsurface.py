import numpy as np
import pytest
from hypothesis import given, strategies as st

from artifact.ambient import PlaneWaves, Constant
from artifact.errors import InvalidArgumentError
from artifact.refsurface import (SurfaceSampling, check_immersion, make_dumbbell, make_ellipsoid,
                                 make_graph_surface, make_sphere, make_torus, surface_from_config)
from artifact.surfcalc import area


class TestConstruction:
    def test_torus_needs_ordered_radii(self):
        with pytest.raises(InvalidArgumentError):
            make_torus(1.0, 2.0)

    def test_resolution_floor(self):
        with pytest.raises(InvalidArgumentError):
            SurfaceSampling(make_sphere(), 4)

    @pytest.mark.parametrize("cfg", [
        {"kind": "sphere", "radius": 2.0},
        {"kind": "ellipsoid", "axes": [1, 2, 3]},
        {"kind": "torus", "R_major": 3, "r_minor": 1},
        {"kind": "dumbbell"},
        {"kind": "graph", "terms": [{"exponents": [2, 0], "coefficient": 0.3}]},
    ])
    def test_from_config(self, cfg):
        S = surface_from_config(cfg)
        assert S.dim == (2 if cfg["kind"] == "dumbbell" else 3)
        assert check_immersion(S, 16) > 0

    def test_unknown_kind(self):
        with pytest.raises(InvalidArgumentError):
            surface_from_config({"kind": "klein bottle"})


class TestAtlas:
    @given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
    def test_stereo_transition_same_point(self, u, v):
        S = make_ellipsoid([1.2, 1.0, 0.8])
        th = np.array([[u, v]])
        if np.linalg.norm(th) < 0.3:
            return
        other = S.transition(0, 1, th)
        assert np.allclose(S.charts[0].point(th), S.charts[1].point(other), atol=1e-12)

    @given(st.floats(0.4, 1.5), st.floats(0, 2 * np.pi))
    def test_partition_of_unity(self, r, a):
        S = make_sphere()
        th = np.array([[r * np.cos(a), r * np.sin(a)]])
        total = S.weights(0, th)[0] + S.weights(1, S.transition(0, 1, th))[0]
        assert abs(total - 1.0) < 1e-12

    def test_outer_orientation(self):
        # enclosed volume int (x | nu) / n is positive only for the outer normal
        for S in (make_sphere(), make_torus(), make_ellipsoid([1, 2, 3]), make_dumbbell()):
            smp = SurfaceSampling(S, 16)
            vol = sum(np.sum(w * np.einsum("na,na->n", J.p, J.nu))
                      for J, w in zip(smp.jets(2), smp.quadrature_weights())) / S.dim
            assert vol > 0


class TestQuadrature:
    def test_sphere_area_converges(self):
        errs = [abs(area(SurfaceSampling(make_sphere(), r)) - 4 * np.pi) for r in (24, 48, 96)]
        assert errs[2] < errs[1] < errs[0]
        assert errs[2] < 1e-8

    def test_torus_area_spectral(self):
        assert abs(area(SurfaceSampling(make_torus(2, 1), 32)) - 8 * np.pi**2) < 1e-10

    def test_flat_patch_area(self):
        S = make_graph_surface(Constant(0.0, 2), -1.0, 1.0)
        assert abs(area(SurfaceSampling(S, 8)) - 4.0) < 1e-13


class TestSync:
    def test_sync_reproduces_smooth_function(self):
        smp = SurfaceSampling(make_sphere(), 48)
        f = PlaneWaves.random(3, np.random.default_rng(2), 3)
        vals = [f(S_p) for S_p in (smp.surface.charts[g.chart_id].point(g.theta) for g in smp.grids)]
        synced = smp.sync(vals)
        err = max(np.max(np.abs(a - b)) for a, b in zip(vals, synced))
        assert err < 1e-6
        for a, b, g in zip(vals, synced, smp.grids):
            assert np.array_equal(a[g.owned], b[g.owned])
