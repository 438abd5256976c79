"""Finite-difference stencils and local polynomial interpolation on uniform grids."""

from __future__ import annotations

from functools import lru_cache
from math import factorial

import numpy as np

from .errors import InvalidArgumentError


@lru_cache(maxsize=None)
def central_weights(deriv: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Offsets and weights of the central difference for ``d^deriv/dx^deriv``.

    Parameters
    ----------
    deriv : int
        Derivative order (1, 2 or 3).
    order : int
        Even accuracy order of the stencil.

    Returns
    -------
    offsets, weights : ndarray
        Weights are for unit spacing; divide by ``h**deriv``.
    """
    if order % 2 or order < 2:
        raise InvalidArgumentError("stencil order must be even and >= 2")
    half = (deriv - 1) // 2 + order // 2
    offsets = np.arange(-half, half + 1)
    vander = np.vander(offsets.astype(float), increasing=True).T
    rhs = np.zeros(len(offsets))
    rhs[deriv] = factorial(deriv)
    weights = np.linalg.solve(vander, rhs)
    weights[np.abs(weights) < 1e-14] = 0.0
    return offsets, weights


def grid_derivative(values: np.ndarray, axis: int, spacing: float, deriv: int = 1,
                    order: int = 4) -> np.ndarray:
    """Central difference along ``axis`` with periodic wrap.

    On non-periodic boxes the outermost ``order//2`` layers are polluted by the
    wrap and must be treated as ghost points by the caller.
    """
    offsets, weights = central_weights(deriv, order)
    out = np.zeros_like(values, dtype=float)
    for off, w in zip(offsets, weights):
        if w != 0.0:
            out += w * np.roll(values, -int(off), axis=axis)
    return out / spacing**deriv


def stencil_halfwidth(order: int) -> int:
    return order // 2


INTERP_CHUNK = 8192


def lagrange_weights(t: np.ndarray, npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Base index and weights for ``npts``-point Lagrange interpolation.

    ``t`` holds positions in grid-index units. The stencil is centred on ``t``.
    """
    base = np.floor(t).astype(int) - (npts // 2 - 1)
    local = t[..., None] - (base[..., None] + np.arange(npts))
    w = np.ones(t.shape + (npts,))
    for j in range(npts):
        for k in range(npts):
            if k != j:
                w[..., j] *= local[..., k] / (j - k)
    return base, w


def interpolate_uniform(grid: np.ndarray, lower, spacing, points: np.ndarray,
                        npts: int = 6) -> np.ndarray:
    """Tensor-product Lagrange interpolation of a uniform-grid array.

    Parameters
    ----------
    grid : ndarray
        Values of shape ``grid_shape + tail``.
    lower, spacing : sequence of float
        Grid origin and spacing per axis.
    points : ndarray
        Query coordinates, shape ``(N, m)``.
    npts : int
        Stencil width per axis (``npts - 1`` is the polynomial degree).
    """
    m = points.shape[1]
    shape = grid.shape[:m]
    tail = grid.shape[m:]
    bases, weights = [], []
    for a in range(m):
        t = (points[:, a] - lower[a]) / spacing[a]
        b, w = lagrange_weights(t, npts)
        if np.any(b < 0) or np.any(b + npts > shape[a]):
            raise InvalidArgumentError("interpolation stencil leaves the grid")
        bases.append(b)
        weights.append(w)
    flat = grid.reshape((-1,) + tail)
    strides = np.cumprod((1,) + shape[::-1])[:-1][::-1]
    offs = np.arange(npts)
    out = np.empty((points.shape[0],) + tail)
    for s in range(0, points.shape[0], INTERP_CHUNK):
        sl = slice(s, s + INTERP_CHUNK)
        # gather the whole (npts,)*m block at once and contract axis by axis
        lin = np.zeros((min(INTERP_CHUNK, points.shape[0] - s),) + (1,) * m, dtype=np.intp)
        for a in range(m):
            ix = (bases[a][sl, None] + offs) * strides[a]
            lin = lin + ix.reshape((-1,) + (1,) * a + (npts,) + (1,) * (m - a - 1))
        block = flat[lin]
        for a in range(m):
            block = np.einsum("nj...,nj->n...", block, weights[a][sl])
        out[sl] = block
    return out


def interpolation_plan(shape, lower, spacing, points: np.ndarray, npts: int = 6) -> tuple:
    """Flat gather indices and weights, shape ``(N, npts**m)``, reproducing :func:`interpolate_uniform`.

    Worth building when the same query points are interpolated repeatedly.
    """
    m = points.shape[1]
    shape = tuple(shape)
    strides = np.cumprod((1,) + shape[::-1])[:-1][::-1]
    lin = np.zeros((points.shape[0],) + (1,) * m, dtype=np.intp)
    w = np.ones((points.shape[0],) + (1,) * m)
    for a in range(m):
        t = (points[:, a] - lower[a]) / spacing[a]
        b, wa = lagrange_weights(t, npts)
        if np.any(b < 0) or np.any(b + npts > shape[a]):
            raise InvalidArgumentError("interpolation stencil leaves the grid")
        sh = (-1,) + (1,) * a + (npts,) + (1,) * (m - a - 1)
        lin = lin + ((b[:, None] + np.arange(npts)) * strides[a]).reshape(sh)
        w = w * wa.reshape(sh)
    return lin.reshape(len(lin), -1), w.reshape(len(w), -1)


def apply_plan(flat: np.ndarray, plan: tuple) -> np.ndarray:
    """Evaluate an :func:`interpolation_plan` on values flattened over the grid axes."""
    lin, w = plan
    vals = flat[lin]
    if vals.ndim == 2:
        return np.sum(vals * w, axis=1)
    return np.einsum("nk...,nk->n...", vals, w)
