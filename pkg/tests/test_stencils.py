import numpy as np
import pytest
from hypothesis import given, strategies as st

from artifact.errors import InvalidArgumentError
from artifact.stencils import (apply_plan, central_weights, grid_derivative, interpolate_uniform,
                               interpolation_plan, lagrange_weights)


class TestCentralWeights:
    @pytest.mark.parametrize("deriv,order", [(1, 2), (1, 4), (2, 4), (3, 4), (2, 8)])
    def test_exact_on_polynomials(self, deriv, order):
        offs, w = central_weights(deriv, order)
        # exact for monomials up to degree order + deriv - 1
        for p in range(order + deriv):
            got = np.sum(w * offs.astype(float) ** p)
            want = float(np.prod(range(p - deriv + 1, p + 1))) * 0.0**(p - deriv) if p >= deriv else 0.0
            assert abs(got - want) < 1e-10

    def test_rejects_odd_order(self):
        with pytest.raises(InvalidArgumentError):
            central_weights(1, 3)

    def test_periodic_convergence_order(self):
        errs = []
        for N in (32, 64):
            x = np.arange(N) * 2 * np.pi / N
            d = grid_derivative(np.sin(x), 0, 2 * np.pi / N, 1, 4)
            errs.append(np.max(np.abs(d - np.cos(x))))
        assert np.log2(errs[0] / errs[1]) > 3.8


class TestInterpolation:
    def test_weights_partition_of_unity(self):
        _, w = lagrange_weights(np.linspace(3, 7, 11), 6)
        assert np.allclose(w.sum(axis=1), 1.0, atol=1e-14)

    @given(st.lists(st.floats(-1, 1), min_size=6, max_size=6))
    def test_exact_for_degree_five(self, coef):
        x = np.linspace(-1, 1, 21)
        y = np.linspace(-1, 1, 17)
        X, Y = np.meshgrid(x, y, indexing="ij")
        f = lambda a, b: np.polyval(coef, a) * (1 + b - b**5)
        pts = np.random.default_rng(0).uniform(-0.7, 0.7, (40, 2))
        got = interpolate_uniform(f(X, Y), [-1, -1], [x[1] - x[0], y[1] - y[0]], pts, 6)
        assert np.allclose(got, f(pts[:, 0], pts[:, 1]), atol=1e-11)

    def test_plan_matches_direct(self):
        rng = np.random.default_rng(1)
        grid = rng.normal(size=(20, 20, 3))
        pts = rng.uniform(3, 15, (50, 2))
        direct = interpolate_uniform(grid, [0, 0], [1, 1], pts, 6)
        plan = interpolation_plan((20, 20), [0, 0], [1, 1], pts, 6)
        assert np.allclose(apply_plan(grid.reshape(400, 3), plan), direct, atol=1e-13)

    def test_stencil_outside_grid(self):
        with pytest.raises(InvalidArgumentError):
            interpolate_uniform(np.zeros((10, 10)), [0, 0], [1, 1], np.array([[0.5, 5.0]]), 6)
