"""Surface calculus: fields, gradient, divergence, Laplace-Beltrami, integration.

Fields are stored in ambient coordinates. Their chart derivatives (a
:class:`FieldJet`) come either from the chain rule applied to an ambient
function (exact) or from central differences on the chart grid (periodic wrap;
samples owned by another chart are refreshed by interpolation).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError
from .fundforms import GeometryJet
from .refsurface import ReferenceSurface, SurfaceSampling
from .stencils import grid_derivative


@dataclass
class FieldJet:
    """Value and chart derivatives of a scalar (tail ``()``) or vector (tail ``(n,)``) field."""

    value: np.ndarray
    d1: np.ndarray
    d2: Optional[np.ndarray] = None

    def __mul__(self, c):
        return FieldJet(c * self.value, c * self.d1, None if self.d2 is None else c * self.d2)

    __rmul__ = __mul__

    def __add__(self, other):
        d2 = None if (self.d2 is None or other.d2 is None) else self.d2 + other.d2
        return FieldJet(self.value + other.value, self.d1 + other.d1, d2)

    def __neg__(self):
        return self * -1.0

    def take(self, idx):
        return FieldJet(self.value[idx], self.d1[idx], None if self.d2 is None else self.d2[idx])


def jet_of_function(fn, jet: GeometryJet, order: int = 2) -> FieldJet:
    """Exact chart derivatives of an ambient function restricted to the surface."""
    d = fn.derivatives(jet.p, order)
    vec = d[0].ndim == 2
    if vec:
        val = d[0]
        d1 = np.einsum("nia,nab->nib", jet.tau, d[1])
        d2 = None
        if order >= 2:
            d2 = (np.einsum("nia,njc,nacb->nijb", jet.tau, jet.tau, d[2])
                  + np.einsum("nija,nab->nijb", jet.tau2, d[1]))
        return FieldJet(val, d1, d2)
    d1 = np.einsum("nia,na->ni", jet.tau, d[1])
    d2 = None
    if order >= 2:
        d2 = np.einsum("nia,njb,nab->nij", jet.tau, jet.tau, d[2]) + np.einsum("nija,na->nij", jet.tau2, d[1])
    return FieldJet(d[0], d1, d2)


def jet_of_samples(values: np.ndarray, grid, order: int = 4, second: bool = True) -> FieldJet:
    """Chart derivatives of grid samples by central differences."""
    if grid.layout == "gauss":
        raise InvalidArgumentError("grid differencing is not available on Gauss-node charts")
    tail = values.shape[1:]
    m = len(grid.shape)
    arr = values.reshape(grid.shape + tail)
    d1 = [grid_derivative(arr, a, grid.spacing[a], 1, order) for a in range(m)]
    flat = lambda x: x.reshape((-1,) + tail)
    D1 = np.stack([flat(x) for x in d1], axis=1)
    D2 = None
    if second:
        D2 = np.zeros((values.shape[0], m, m) + tail)
        for a in range(m):
            D2[:, a, a] = flat(grid_derivative(arr, a, grid.spacing[a], 2, order))
            for b in range(a + 1, m):
                mixed = flat(grid_derivative(d1[a], b, grid.spacing[b], 1, order))
                D2[:, a, b] = mixed
                D2[:, b, a] = mixed
    return FieldJet(values, D1, D2)


class SurfaceField:
    """Scalar or ambient-vector samples on every chart grid of a sampling.

    Parameters
    ----------
    sampling : SurfaceSampling
    values : list of ndarray
        Per-chart sample values, shape ``(N_c,)`` or ``(N_c, n)``.
    jets : list of FieldJet, optional
        Exact derivatives; when absent they are computed by differencing.
    stencil_order : int
        Accuracy order of the difference stencils.
    """

    def __init__(self, sampling: SurfaceSampling, values, jets=None, stencil_order: int = 4):
        self.sampling = sampling
        self.values = [np.asarray(v, float) for v in values]
        for v, g in zip(self.values, sampling.grids):
            if v.shape[0] != g.theta.shape[0]:
                raise InvalidArgumentError("field does not match the sample layout")
            if not np.all(np.isfinite(v)):
                raise InvalidArgumentError("field values must be finite")
        self._jets = jets
        self.stencil_order = stencil_order

    @classmethod
    def from_function(cls, sampling: SurfaceSampling, fn, order: int = 2, stencil_order: int = 4):
        jets = [jet_of_function(fn, J, order) for J in sampling.jets()]
        return cls(sampling, [j.value for j in jets], jets, stencil_order)

    @classmethod
    def from_values(cls, sampling: SurfaceSampling, values, stencil_order: int = 4, sync: bool = True):
        if sync:
            values = sampling.sync(values)
        return cls(sampling, values, None, stencil_order)

    @property
    def exact(self) -> bool:
        return self._jets is not None

    @property
    def is_vector(self) -> bool:
        return self.values[0].ndim == 2

    def jet(self, chart_id: int) -> FieldJet:
        if self._jets is not None:
            return self._jets[chart_id]
        return jet_of_samples(self.values[chart_id], self.sampling.grids[chart_id], self.stencil_order)

    def jets(self) -> list:
        return [self.jet(c) for c in range(self.sampling.n_charts)]

    def map_values(self, fn) -> "SurfaceField":
        return SurfaceField(self.sampling, [fn(v) for v in self.values], None, self.stencil_order)

    def owned_values(self) -> np.ndarray:
        return np.concatenate([v[g.owned] for v, g in zip(self.values, self.sampling.grids)])

    def sup(self) -> float:
        v = self.owned_values()
        return float(np.max(np.abs(v) if v.ndim == 1 else np.linalg.norm(v.reshape(len(v), -1), axis=1)))


# ---------------------------------------------------------------------------
# point-wise kernels


def gradient_kernel(J: GeometryJet, F: FieldJet) -> np.ndarray:
    """``grad rho = d_j rho tau^j``; for vector fields ``tau^j (x) d_j f`` (n x n)."""
    if F.d1.ndim == 2:
        return np.einsum("nj,nja->na", F.d1, J.dual)
    return np.einsum("nja,njb->nab", J.dual, F.d1)


def gradient_jet(J: GeometryJet, F: FieldJet) -> FieldJet:
    """Surface gradient of a scalar together with its first chart derivatives."""
    if F.d2 is None:
        raise InvalidArgumentError("second derivatives required")
    val = gradient_kernel(J, F)
    d1 = np.einsum("nkj,nja->nka", F.d2, J.dual) + np.einsum("nj,nkja->nka", F.d1, J.ddual)
    return FieldJet(val, d1)


def divergence_kernel(J: GeometryJet, F: FieldJet) -> np.ndarray:
    """General form ``div f = (tau^i | d_i f)``; valid for non-tangential ``f``."""
    return np.einsum("nia,nia->n", J.dual, F.d1)


def divergence_tangential_kernel(J: GeometryJet, F: FieldJet) -> np.ndarray:
    """``(1/sqrt g) d_i (sqrt g f^i)`` with ``f^i = (tau^i | f)``; tangential fields only."""
    fi = np.einsum("nia,na->ni", J.dual, F.value)
    dfi = np.einsum("niia,na->n", J.ddual, F.value) + np.einsum("nia,nia->n", J.dual, F.d1)
    half_dlogg = 0.5 * np.einsum("nij,nkji->nk", J.Ginv, J.dG)
    return np.einsum("ni,ni->n", half_dlogg, fi) + dfi


def laplace_kernel(J: GeometryJet, F: FieldJet, form: str = "christoffel") -> np.ndarray:
    """Laplace-Beltrami of a scalar or (component-wise) vector field.

    ``christoffel``: ``g^ij (d_i d_j f - Lambda^k_ij d_k f)``.
    ``divergence``: ``(1/sqrt g) d_i (sqrt g g^ij d_j f)``.
    """
    if F.d2 is None:
        raise InvalidArgumentError("second derivatives required")
    vec = F.d1.ndim == 3
    if form == "christoffel":
        if vec:
            inner = F.d2 - np.einsum("nijk,nkb->nijb", J.chris, F.d1)
            return np.einsum("nij,nijb->nb", J.Ginv, inner)
        inner = F.d2 - np.einsum("nijk,nk->nij", J.chris, F.d1)
        return np.einsum("nij,nij->n", J.Ginv, inner)
    if form == "divergence":
        half_dlogg = 0.5 * np.einsum("nab,niba->ni", J.Ginv, J.dG)
        coef = np.einsum("niij->nj", J.dGinv) + np.einsum("ni,nij->nj", half_dlogg, J.Ginv)
        if vec:
            return np.einsum("nj,njb->nb", coef, F.d1) + np.einsum("nij,nijb->nb", J.Ginv, F.d2)
        return np.einsum("nj,nj->n", coef, F.d1) + np.einsum("nij,nij->n", J.Ginv, F.d2)
    raise InvalidArgumentError(f"unknown form {form!r}")


def hessian_kernel(J: GeometryJet, F: FieldJet) -> np.ndarray:
    """``grad_S grad_S rho = tau^k (x) d_k grad rho`` (ambient n x n, not symmetric)."""
    G = gradient_jet(J, F)
    return np.einsum("nka,nkb->nab", J.dual, G.d1)


# ---------------------------------------------------------------------------
# field-level operators


def _wrap(field: SurfaceField, values, jets=None) -> SurfaceField:
    s = field.sampling
    if jets is None and not field.exact:
        values = s.sync(values)
    return SurfaceField(s, values, jets, field.stencil_order)


def surface_gradient(field: SurfaceField) -> SurfaceField:
    """Surface gradient of a scalar field (ambient vector field, tangential)."""
    if field.is_vector:
        raise InvalidArgumentError("surface_gradient expects a scalar field")
    Js = field.sampling.jets()
    if field.exact:
        jets = [gradient_jet(J, field.jet(c)) for c, J in enumerate(Js)]
        return SurfaceField(field.sampling, [j.value for j in jets], jets, field.stencil_order)
    return _wrap(field, [gradient_kernel(J, field.jet(c)) for c, J in enumerate(Js)])


def surface_divergence(field: SurfaceField, form: str = "general") -> SurfaceField:
    """Surface divergence of an ambient vector field.

    ``general`` uses ``(tau^i | d_i f)``; ``tangential`` uses the metric form.
    """
    if not field.is_vector:
        raise InvalidArgumentError("surface_divergence expects a vector field")
    kern = divergence_kernel if form == "general" else divergence_tangential_kernel
    vals = [kern(J, field.jet(c)) for c, J in enumerate(field.sampling.jets())]
    return _wrap(field, vals)


def laplace_beltrami(field: SurfaceField, form: str = "christoffel") -> SurfaceField:
    """Laplace-Beltrami operator of a scalar or vector field."""
    vals = [laplace_kernel(J, field.jet(c), form) for c, J in enumerate(field.sampling.jets())]
    return _wrap(field, vals)


def surface_hessian(field: SurfaceField) -> SurfaceField:
    vals = [hessian_kernel(J, field.jet(c)) for c, J in enumerate(field.sampling.jets())]
    n = vals[0].shape[-1]
    out = _wrap(field, [v.reshape(len(v), n * n) for v in vals])
    return out.map_values(lambda v: v.reshape(len(v), n, n))


def integrate(field, sampling: Optional[SurfaceSampling] = None) -> float:
    """Quadrature of a scalar field against the area measure.

    ``field`` may be a :class:`SurfaceField` or a list of per-chart arrays (then
    ``sampling`` is required).
    """
    if isinstance(field, SurfaceField):
        sampling, values = field.sampling, field.values
    else:
        values = field
    if any(np.asarray(v).ndim != 1 for v in values):
        raise InvalidArgumentError("integrate expects a scalar field")
    return float(sum(np.dot(v, w) for v, w in zip(values, sampling.quadrature_weights())))


def area(sampling: SurfaceSampling) -> float:
    return float(sum(w.sum() for w in sampling.quadrature_weights()))


# ---------------------------------------------------------------------------
# closed-form graph operators


def graph_operators_oracle(h, x, rho=None, f=None) -> dict:
    """Closed-form operators on the graph ``x -> (x, h(x))``.

    Parameters
    ----------
    h : AmbientFunction of ``n-1`` variables, or a graph ReferenceSurface
    x : ndarray, shape ``(N, n-1)``
    rho : AmbientFunction of ``n-1`` variables, optional
        Scalar field written in graph coordinates.
    f : VectorFunction of ``n-1`` variables with ``n`` components, optional

    Returns
    -------
    dict with ``beta``, ``normal``, ``G``, ``Ginv``, ``L``, ``chris``, ``kappa`` and,
    when requested, ``grad`` (of ``rho``), ``laplace`` (of ``rho``) and ``div`` (of ``f``).
    """
    if isinstance(h, ReferenceSurface):
        if h.kind != "graph":
            raise InvalidArgumentError("the closed-form oracle applies to graph surfaces only")
        h = h.params["h"]
    if not hasattr(h, "derivatives"):
        raise InvalidArgumentError("h must provide derivatives")
    x = np.atleast_2d(np.asarray(x, float))
    _, dh, d2h = h.derivatives(x, 2)
    N, m = dh.shape
    beta = 1.0 / np.sqrt(1.0 + np.sum(dh * dh, axis=1))
    b2 = beta**2
    out = {"beta": beta}
    out["normal"] = beta[:, None] * np.concatenate([-dh, np.ones((N, 1))], axis=1)
    out["G"] = np.eye(m)[None] + np.einsum("ni,nj->nij", dh, dh)
    out["Ginv"] = np.eye(m)[None] - b2[:, None, None] * np.einsum("ni,nj->nij", dh, dh)
    out["L"] = beta[:, None, None] * d2h
    out["chris"] = b2[:, None, None, None] * np.einsum("nij,nk->nijk", d2h, dh)
    lap_h = np.trace(d2h, axis1=1, axis2=2)
    hgg = np.einsum("nij,ni,nj->n", d2h, dh, dh)
    curv = lap_h - b2 * hgg
    out["kappa"] = beta * curv
    if rho is not None:
        _, dr, d2r = rho.derivatives(x, 2)
        s = np.einsum("ni,ni->n", dr, dh)
        out["grad"] = np.concatenate([dr - (b2 * s)[:, None] * dh, (b2 * s)[:, None]], axis=1)
        out["laplace"] = (np.trace(d2r, axis1=1, axis2=2) - b2 * np.einsum("nij,ni,nj->n", d2r, dh, dh)
                          - b2 * curv * s)
    if f is not None:
        df = f.derivatives(x, 1)[1]  # df[n, i, a] = d_i f_a
        div_bar = np.einsum("nii->n", df[:, :, :m])
        grad_fn = df[:, :, m]
        directional = np.einsum("nia,ni->na", df[:, :, :m], dh)
        out["div"] = div_bar + b2 * np.einsum("ni,ni->n", dh, grad_fn - directional)
    return out


def position_field(sampling: SurfaceSampling) -> SurfaceField:
    """The identity map ``id_S`` as an exact vector field."""
    jets = [FieldJet(J.p, J.tau, J.tau2) for J in sampling.jets()]
    return SurfaceField(sampling, [j.value for j in jets], jets)


def normal_field(sampling: SurfaceSampling) -> SurfaceField:
    """The outer unit normal as an exact vector field."""
    jets = [FieldJet(J.nu, J.dnu, J.d2nu) for J in sampling.jets()]
    return SurfaceField(sampling, [j.value for j in jets], jets)


def curvature_field(sampling: SurfaceSampling) -> SurfaceField:
    """Mean curvature with its exact first derivatives (second derivatives absent)."""
    jets = [FieldJet(J.kappa, J.dkappa) for J in sampling.jets()]
    return SurfaceField(sampling, [j.value for j in jets], jets)
