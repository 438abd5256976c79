"""Geometry of normal graphs ``Gamma_rho = {p + rho(p) nu(p)}`` over a reference surface.

Everything is expressed on the reference surface: the shift operator
``M0 = (I - rho L)^-1`` (an ambient matrix acting as the identity on the normal),
``a = M0 grad rho``, ``beta = (1 + |a|^2)^-1/2``, the area factor ``alpha / beta``
with ``alpha = det(I - rho K)``, the normal ``beta (nu - a)`` and the mean
curvature ``kappa(rho)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InadmissibleHeightError, InvalidArgumentError
from .fundforms import GeometryJet, _normal_derivatives, geometry_jet
from .refsurface import Chart, ReferenceSurface, SurfaceSampling
from .surfcalc import FieldJet, SurfaceField, gradient_jet, integrate, jet_of_function

ADMISSIBLE_MARGIN = 0.9


def admissible_bound(surface, resolution: int = 64) -> float:
    """``rho0 = 1 / max |kappa_i|`` over the samples; ``inf`` for a flat surface.

    ``surface`` may be a :class:`ReferenceSurface` or a :class:`SurfaceSampling`.
    """
    smp = surface if isinstance(surface, SurfaceSampling) else SurfaceSampling(surface, resolution)
    kmax = 0.0
    for J, g in zip(smp.jets(), smp.grids):
        kmax = max(kmax, float(np.max(np.abs(J.kappas[g.owned]))))
    return np.inf if kmax <= 1e-14 else 1.0 / kmax


class HeightFunction:
    """A scalar field ``rho`` on the reference surface with ``|rho| <= 0.9 rho0``.

    Parameters
    ----------
    field : SurfaceField
        Scalar samples (exact jets when built from an ambient function).
    rho0 : float, optional
        Admissible bound; computed from the sampling when omitted.
    margin : float
        Fraction of ``rho0`` allowed for ``sup |rho|``.
    source : AmbientFunction, optional
        The ambient function ``rho`` was restricted from, if any.
    """

    def __init__(self, field: SurfaceField, rho0: Optional[float] = None,
                 margin: float = ADMISSIBLE_MARGIN, source=None):
        if field.is_vector:
            raise InvalidArgumentError("height must be a scalar field")
        self.field = field
        self.rho0 = admissible_bound(field.sampling) if rho0 is None else float(rho0)
        self.sup = field.sup()
        self.source = source
        self.diagnostics: dict = {}
        if self.sup > margin * self.rho0:
            raise InadmissibleHeightError(
                f"sup|rho| = {self.sup:.4g} exceeds {margin} * rho0 = {margin * self.rho0:.4g}")

    @classmethod
    def from_function(cls, sampling: SurfaceSampling, fn, rho0=None, margin=ADMISSIBLE_MARGIN):
        return cls(SurfaceField.from_function(sampling, fn), rho0, margin, source=fn)

    @classmethod
    def constant(cls, sampling: SurfaceSampling, c: float, rho0=None, margin=ADMISSIBLE_MARGIN):
        from .ambient import Constant

        return cls.from_function(sampling, Constant(float(c), sampling.surface.dim), rho0, margin)

    @property
    def sampling(self) -> SurfaceSampling:
        return self.field.sampling

    def jet(self, chart_id: int) -> FieldJet:
        return self.field.jet(chart_id)


@dataclass
class GraphGeometry:
    """Point-wise geometry of ``Gamma_rho`` at reference samples (leading sample axis)."""

    q: np.ndarray
    tau: np.ndarray
    G: np.ndarray
    G_formula: np.ndarray
    Ginv: np.ndarray
    detg: np.ndarray
    detg_formula: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    M0: np.ndarray
    a: np.ndarray
    nu: np.ndarray
    P: np.ndarray
    dual: np.ndarray
    measure: np.ndarray
    kappa: Optional[np.ndarray] = None
    da: Optional[np.ndarray] = None
    dM0: Optional[np.ndarray] = None
    dnu: Optional[np.ndarray] = None
    tau2: Optional[np.ndarray] = None


def graph_geometry_kernel(J: GeometryJet, R: FieldJet) -> GraphGeometry:
    """All normal-graph quantities from the reference jet ``J`` and the height jet ``R``.

    Needs ``R.d2`` and a third-order reference jet for ``kappa(rho)``.
    """
    n, m = J.n, J.m
    rho, drho = R.value, R.d1
    I = np.eye(n)[None]
    A = I - rho[:, None, None] * J.W
    M0 = np.linalg.inv(A)
    grad = np.einsum("nj,nja->na", drho, J.dual)
    a = np.einsum("nab,nb->na", M0, grad)
    beta = 1.0 / np.sqrt(1.0 + np.sum(a * a, axis=1))
    nu = beta[:, None] * (J.nu - a)
    alpha = np.linalg.det(np.eye(m)[None] - rho[:, None, None] * J.K)
    tau = J.tau + drho[:, :, None] * J.nu[:, None, :] + rho[:, None, None] * J.dnu
    G = np.einsum("nia,nja->nij", tau, tau)
    LGL = J.L @ J.Ginv @ J.L
    G_formula = (J.G - 2 * rho[:, None, None] * J.L + (rho**2)[:, None, None] * LGL
                 + np.einsum("ni,nj->nij", drho, drho))
    Ginv = np.linalg.inv(G)
    detg = np.linalg.det(G)
    detg_formula = J.detg * alpha**2 / beta**2
    P = I - np.einsum("na,nb->nab", nu, nu)
    dual = np.einsum("nab,nbc,nic->nia", P, M0, J.dual)
    geo = GraphGeometry(J.p + rho[:, None] * J.nu, tau, G, G_formula, Ginv, detg, detg_formula,
                        alpha, beta, M0, a, nu, P, dual, alpha / beta)
    if R.d2 is None or J.dW is None:
        return geo
    # d_j M0 = M0 (d_j rho W + rho d_j W) M0 ; d_j a = d_j M0 grad + M0 d_j grad
    dA = drho[:, :, None, None] * J.W[:, None] + rho[:, None, None, None] * J.dW
    dM0 = np.einsum("nab,njbc,ncd->njad", M0, dA, M0)
    dgrad = gradient_jet(J, R).d1
    da = np.einsum("njab,nb->nja", dM0, grad) + np.einsum("nab,njb->nja", M0, dgrad)
    grad_a = np.einsum("nja,njb->nab", J.dual, da)  # tau^j (x) d_j a
    tr = np.einsum("nab,nba->n", M0, J.W + grad_a)
    M0a = np.einsum("nab,nb->na", M0, a)
    corr = np.einsum("na,nab,nb->n", M0a, grad_a, a)
    geo.kappa = beta * (tr - beta**2 * corr)
    geo.da, geo.dM0 = da, dM0
    dbeta = -beta[:, None] ** 3 * np.einsum("na,nja->nj", a, da)
    geo.dnu = (dbeta[:, :, None] * (J.nu - a)[:, None, :]
               + beta[:, None, None] * (J.dnu - da))
    if J.d2nu is not None:
        d2 = R.d2
        geo.tau2 = (J.tau2 + d2[..., None] * J.nu[:, None, None, :]
                    + drho[:, :, None, None] * J.dnu[:, None, :, :]
                    + drho[:, None, :, None] * J.dnu[:, :, None, :]
                    + rho[:, None, None, None] * J.d2nu)
    return geo


def _check(height: HeightFunction):
    if not isinstance(height, HeightFunction):
        raise InvalidArgumentError("expected a HeightFunction")


def graph_geometry(height: HeightFunction, chart_id: Optional[int] = None):
    """Normal-graph geometry per chart (a list), or for one chart."""
    _check(height)
    Js = height.sampling.jets()
    ids = range(len(Js)) if chart_id is None else [chart_id]
    out = [graph_geometry_kernel(Js[c], height.jet(c)) for c in ids]
    return out if chart_id is None else out[0]


def normal_of_graph(height: HeightFunction) -> SurfaceField:
    """Unit normal of ``Gamma_rho`` indexed by reference points."""
    geos = graph_geometry(height)
    return SurfaceField(height.sampling, [g.nu for g in geos], None, height.field.stencil_order)


def mean_curvature_of_graph(height: HeightFunction) -> SurfaceField:
    """Mean curvature ``kappa(rho)`` of ``Gamma_rho`` at ``p + rho(p) nu(p)``, indexed by ``p``."""
    geos = graph_geometry(height)
    if geos[0].kappa is None:
        raise InvalidArgumentError("kappa(rho) needs second derivatives of rho and a third-order chart")
    vals = [g.kappa for g in geos]
    if not height.field.exact:
        vals = height.sampling.sync(vals)
    return SurfaceField(height.sampling, vals, None, height.field.stencil_order)


def area_of_graph(height: HeightFunction) -> float:
    """``mes Gamma_rho = int alpha / beta d sigma``."""
    geos = graph_geometry(height)
    return integrate([g.measure for g in geos], height.sampling)


def principal_symbol(geo: GraphGeometry, xi) -> np.ndarray:
    """``c(rho, xi) = beta (|M0 xi|^2 - beta^2 (a | M0 xi)^2)`` for tangential ``xi``."""
    xi = np.asarray(xi, float)
    M0xi = np.einsum("nab,nb->na", geo.M0, np.broadcast_to(xi, geo.a.shape))
    s = np.einsum("na,na->n", M0xi, M0xi)
    return geo.beta * (s - geo.beta**2 * np.einsum("na,na->n", geo.a, M0xi) ** 2)


def symbol_lower_bound(geo: GraphGeometry, xi) -> np.ndarray:
    """``beta^3 |M0 xi|^2``."""
    xi = np.asarray(xi, float)
    M0xi = np.einsum("nab,nb->na", geo.M0, np.broadcast_to(xi, geo.a.shape))
    return geo.beta**3 * np.einsum("na,na->n", M0xi, M0xi)


def ellipticity_constant(geo: GraphGeometry, J: GeometryJet) -> float:
    """``eta = min beta^3 sigma_min(M0 on T_p)^2`` so that ``c(rho, xi) >= eta |xi|^2``."""
    # M0 restricted to the tangent space, in an orthonormal tangent frame
    Q = np.linalg.qr(np.swapaxes(J.tau, 1, 2))[0]  # [n, a, m]
    Mt = np.einsum("nam,nab,nbk->nmk", Q, geo.M0, Q)
    smin = np.linalg.svd(Mt, compute_uv=False)[:, -1]
    return float(np.min(geo.beta**3 * smin**2))


# ---------------------------------------------------------------------------
# pulled-back operators


def _pullback_jets(height: HeightFunction, phi: SurfaceField, c: int):
    J = height.sampling.jets()[c]
    geo = graph_geometry_kernel(J, height.jet(c))
    return J, geo, phi.jet(c)


def _gamma_christoffel(geo: GraphGeometry) -> np.ndarray:
    """``Lambda^k_ij`` of ``Gamma_rho`` from ``tau^Gamma_ij``."""
    low = np.einsum("nija,nka->nijk", geo.tau2, geo.tau)
    return np.einsum("nkr,nijr->nijk", geo.Ginv, low)


def pullback_operator(height: HeightFunction, which: str, phi: SurfaceField,
                      route: str = "coefficients") -> SurfaceField:
    """Evaluate an operator of ``Gamma_rho`` on ``phi = phi_Gamma o psi_rho`` entirely on the reference.

    Parameters
    ----------
    which : {"gradient", "divergence", "laplace_beltrami"}
    phi : SurfaceField
        Scalar (gradient, laplace_beltrami) or ambient vector field (divergence).
    route : {"coefficients", "invariant"}
        For ``laplace_beltrami``: local coefficients ``g^ij_Gamma``,
        ``-g^ij_Gamma Lambda^k_Gamma,ij`` or the invariant trace form
        ``tr[P_G M0 grad(P_G M0 grad phi)]``.
    """
    _check(height)
    smp = height.sampling
    out = []
    for c in range(smp.n_charts):
        J, geo, F = _pullback_jets(height, phi, c)
        PM = np.einsum("nab,nbc->nac", geo.P, geo.M0)
        if which == "gradient":
            grad = np.einsum("nj,nja->na", F.d1, J.dual)
            out.append(np.einsum("nab,nb->na", PM, grad))
        elif which == "divergence":
            out.append(np.einsum("nja,nja->n", geo.dual, F.d1))
        elif which == "laplace_beltrami":
            if F.d2 is None:
                raise InvalidArgumentError("laplace_beltrami needs second derivatives")
            if route == "coefficients":
                if geo.tau2 is None:
                    raise InvalidArgumentError("coefficient route needs a third-order chart")
                chris = _gamma_christoffel(geo)
                b = -np.einsum("nij,nijk->nk", geo.Ginv, chris)
                out.append(np.einsum("nij,nij->n", geo.Ginv, F.d2) + np.einsum("nk,nk->n", b, F.d1))
            elif route == "invariant":
                if geo.dnu is None:
                    raise InvalidArgumentError("invariant route needs second derivatives of rho")
                grad = gradient_jet(J, F)
                dP = -(np.einsum("nja,nb->njab", geo.dnu, geo.nu) + np.einsum("na,njb->njab", geo.nu, geo.dnu))
                dPM = np.einsum("njab,nbc->njac", dP, geo.M0) + np.einsum("nab,njbc->njac", geo.P, geo.dM0)
                v_d = (np.einsum("njab,nb->nja", dPM, grad.value)
                       + np.einsum("nab,njb->nja", PM, grad.d1))
                out.append(np.einsum("nja,nja->n", geo.dual, v_d))
            else:
                raise InvalidArgumentError(f"unknown route {route!r}")
        else:
            raise InvalidArgumentError(f"unknown operator {which!r}")
    if not (phi.exact and height.field.exact):
        out = smp.sync(out)
    return SurfaceField(smp, out, None, phi.stencil_order)


# ---------------------------------------------------------------------------
# the normal graph as a stand-alone surface


def offset_surface(surface: ReferenceSurface, rho) -> ReferenceSurface:
    """Chart atlas of ``Gamma_rho`` with charts ``theta -> phi + rho(phi) nu``.

    ``rho`` is an ambient function (restricted to the surface). The offset charts
    provide derivatives up to second order.
    """
    charts = []
    for cid, chart in enumerate(surface.charts):
        def ev(th, order, cid=cid, chart=chart):
            # lean path: only the base derivatives and normal derivatives actually needed
            d = chart.evaluate(th, order + 1)
            tau, tau2 = d[1], d[2] if order >= 1 else None
            nu, dnu, d2nu = _normal_derivatives(d[1], d[2] if order >= 1 else np.zeros(d[1].shape[:2] + d[1].shape[1:]),
                                                d[3] if order >= 2 else None, chart.orientation)
            rd = rho.derivatives(d[0], min(order, 2))
            val = rd[0]
            out = [d[0] + val[:, None] * nu]
            if order >= 1:
                g1 = np.einsum("nia,na->ni", tau, rd[1])
                out.append(tau + g1[:, :, None] * nu[:, None, :] + val[:, None, None] * dnu)
            if order >= 2:
                g2 = (np.einsum("nia,nab,njb->nij", tau, rd[2], tau) + np.einsum("nija,na->nij", tau2, rd[1]))
                out.append(tau2 + g2[..., None] * nu[:, None, None, :]
                           + g1[:, :, None, None] * dnu[:, None, :, :]
                           + g1[:, None, :, None] * dnu[:, :, None, :]
                           + val[:, None, None, None] * d2nu)
            return out

        charts.append(Chart(chart.dim, chart.lower, chart.upper, chart.periodic, ev, chart.orientation,
                            2, chart.layout, chart.name + "-offset"))
    return ReferenceSurface(tuple(charts), surface.kind + "-offset", {"base": surface, "rho": rho},
                            surface.closed, surface.owner, surface.partition, surface.transition,
                            surface.other_chart, None, None, surface.center)
