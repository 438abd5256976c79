import numpy as np
import pytest
from hypothesis import given, strategies as st

from artifact.ambient import (Constant, PlaneWaves, Polynomial, VectorFunction, function_from_config,
                              random_polynomial, spherical_harmonic)

CONFIGS = [
    2.5,
    {"kind": "constant", "value": -1.0},
    {"kind": "waves", "seed": 3, "count": 2, "amplitude": 0.5},
    {"kind": "polynomial", "terms": [{"exponents": [1, 2, 0], "coefficient": 2.0}], "center": [0.1, 0, 0]},
    {"kind": "random_polynomial", "degree": 3, "seed": 1},
    {"kind": "harmonic", "l": 2, "amplitude": 0.3},
    {"kind": "sum", "parts": [1.0, {"kind": "harmonic", "l": 1}]},
]


def fd_check(f, x, h=1e-5):
    v, g, H = f.derivatives(x, 2)
    E = np.eye(x.shape[1])
    fg = np.stack([(f.derivatives(x + h * e, 0)[0] - f.derivatives(x - h * e, 0)[0]) / (2 * h) for e in E], -1)
    fH = np.stack([(f.derivatives(x + h * e, 1)[1] - f.derivatives(x - h * e, 1)[1]) / (2 * h) for e in E], -1)
    return np.max(np.abs(g - fg)), np.max(np.abs(H - fH))


class TestFromConfig:
    @pytest.mark.parametrize("cfg", CONFIGS)
    def test_derivatives_by_differences(self, cfg):
        f = function_from_config(cfg, 3)
        x = np.random.default_rng(0).normal(size=(20, 3))
        eg, eh = fd_check(f, x)
        assert eg < 1e-7 and eh < 1e-6

    def test_vector(self):
        f = function_from_config({"kind": "vector", "components": [1.0, 2.0, {"kind": "harmonic", "l": 1}]}, 3)
        assert isinstance(f, VectorFunction)
        v = f.derivatives(np.zeros((4, 3)), 0)[0]
        assert v.shape == (4, 3)

    @pytest.mark.parametrize("cfg", ["x", {"kind": "nope"},
                                     {"kind": "polynomial", "terms": [{"exponents": [1, 0], "coefficient": 1}]}])
    def test_bad_config(self, cfg):
        with pytest.raises(ValueError):
            function_from_config(cfg, 3)

    def test_none(self):
        assert function_from_config(None, 3) is None


class TestHarmonics:
    def test_degree_limit(self):
        with pytest.raises(ValueError):
            spherical_harmonic(4)

    @pytest.mark.parametrize("l", [0, 1, 2, 3])
    def test_homogeneous_harmonic(self, l):
        Y = spherical_harmonic(l, 3)
        x = np.random.default_rng(l).normal(size=(30, 3))
        H = Y.derivatives(x, 2)[2]
        assert np.max(np.abs(np.trace(H, axis1=1, axis2=2))) < 1e-10
        # degree l homogeneity: Y(2x) = 2^l Y(x)
        assert np.allclose(Y.derivatives(2 * x, 0)[0], 2**l * Y.derivatives(x, 0)[0])


class TestPrimitives:
    @given(st.floats(-3, 3))
    def test_constant(self, c):
        v, g, H = Constant(c, 2).derivatives(np.zeros((5, 2)), 2)
        assert np.all(v == c) and not g.any() and not H.any()

    def test_polynomial_value(self):
        p = Polynomial({(2, 0): 1.0, (0, 1): -3.0}, 2)
        assert np.allclose(p.derivatives(np.array([[2.0, 1.0]]), 0)[0], [1.0])

    def test_plane_waves_random_reproducible(self):
        a = PlaneWaves.random(3, np.random.default_rng(5))
        b = PlaneWaves.random(3, np.random.default_rng(5))
        x = np.ones((2, 3))
        assert np.array_equal(a.derivatives(x, 0)[0], b.derivatives(x, 0)[0])

    def test_random_polynomial_degree(self):
        p = random_polynomial(3, 2, np.random.default_rng(0))
        assert max(sum(e) for e in p.terms) <= 2
