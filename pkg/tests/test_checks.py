import pytest

from artifact.ambient import Polynomial
from artifact.checks import TOLERANCES, Residual, invariant_suite, suite_report
from artifact.refsurface import make_graph_surface, make_sphere, make_torus


class TestResidual:
    def test_pass_fail(self):
        assert Residual("a", 1e-12, 1e-10).passed
        assert not Residual("a", 1e-9, 1e-10).passed
        assert not Residual("a", float("nan"), 1.0).passed
        assert Residual("a", 0.0, 0.0).to_dict() == {"name": "a", "value": 0.0, "tol": 0.0, "passed": True}


class TestSuite:
    def test_names_cover_tolerances(self):
        res = invariant_suite(make_sphere(), resolution=24)
        assert [r.name for r in res] == list(TOLERANCES)

    @pytest.mark.parametrize("surface", [make_sphere(1.3), make_torus()], ids=["sphere", "torus"])
    def test_pointwise_identities_at_low_resolution(self, surface):
        # point-wise identities hold at any resolution; only the integral check needs more samples
        res = {r.name: r for r in invariant_suite(surface, resolution=32)}
        for name in ("christoffel_routes", "gauss_frame", "kappa_div_normal", "trace_L2"):
            assert res[name].passed, res[name]

    def test_patch_uses_compact_support(self):
        surf = make_graph_surface(Polynomial({(2, 0): 0.3, (1, 1): -0.2}, 2))
        rep = suite_report(surf, resolution=48)
        assert {r["name"] for r in rep["residuals"]} == set(TOLERANCES)

    def test_override_tolerance(self):
        res = invariant_suite(make_sphere(), resolution=24, tolerances={"trace_L2": -1.0})
        assert not {r.name: r for r in res}["trace_L2"].passed
