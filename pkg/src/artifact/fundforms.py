"""Point-wise fundamental forms, curvatures, Christoffel symbols and Weingarten tensor.

Sign convention: ``l_ij = (tau_ij | nu)`` with the outer normal and
``kappa = tr(G^-1 L) = -div nu``, so the unit sphere has ``kappa = -(n-1)``.

All arrays carry a leading sample axis. Index layout:

* ``tau[n, i, a]`` tangent ``tau_i``; ``tau2[n, i, j, a]``; ``tau3[n, i, j, k, a]``
* ``dG[n, k, i, j] = d_k g_ij``
* ``chris_lower[n, i, j, k] = Lambda_{ij|k}``, ``chris[n, i, j, k] = Lambda^k_ij``
* ``dnu[n, i, a] = d_i nu``, ``d2nu[n, i, j, a]``
* ``dual[n, i, a] = tau^i``, ``ddual[n, k, i, a] = d_k tau^i``
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateChartError, InvalidArgumentError
from .refsurface import ReferenceSurface, normal_from_tangents
from .stencils import central_weights

METRIC_FD_STEP = 1e-2
METRIC_FD_ORDER = 8


@dataclass
class GeometryJet:
    """All point-wise quantities of a hypersurface at a set of chart samples."""

    p: np.ndarray
    tau: np.ndarray
    tau2: np.ndarray
    nu: np.ndarray
    dnu: np.ndarray
    G: np.ndarray
    Ginv: np.ndarray
    detg: np.ndarray
    L: np.ndarray
    K: np.ndarray
    dG: np.ndarray
    dGinv: np.ndarray
    chris_lower: np.ndarray
    chris: np.ndarray
    dual: np.ndarray
    ddual: np.ndarray
    P: np.ndarray
    W: np.ndarray
    kappa: np.ndarray
    gauss: np.ndarray
    kappas: np.ndarray
    directions: np.ndarray
    trL2: np.ndarray
    tau3: Optional[np.ndarray] = None
    d2nu: Optional[np.ndarray] = None
    dL: Optional[np.ndarray] = None
    dW: Optional[np.ndarray] = None
    dkappa: Optional[np.ndarray] = None
    chris_metric: Optional[np.ndarray] = None

    @property
    def m(self) -> int:
        return self.tau.shape[1]

    @property
    def n(self) -> int:
        return self.tau.shape[2]

    @property
    def sqrtg(self) -> np.ndarray:
        return np.sqrt(self.detg)

    def __len__(self):
        return self.p.shape[0]

    def take(self, idx) -> "GeometryJet":
        """Sub-jet at the selected samples."""
        kw = {k: (None if v is None else v[idx]) for k, v in self.__dict__.items()}
        return GeometryJet(**kw)


def _normal_derivatives(tau, tau2, tau3, orientation):
    """Unit normal and its first (and second) parameter derivatives.

    Computed by differentiating the normalised cross product, independently of
    the second fundamental form.
    """
    n = tau.shape[-1]
    m = tau.shape[1]
    N = normal_from_tangents(tau) * orientation
    if n == 3:
        c = np.cross
        dN = np.stack([c(tau2[:, 0, i], tau[:, 1]) + c(tau[:, 0], tau2[:, 1, i]) for i in range(m)], 1)
    else:
        dN = np.stack([tau2[:, 0, :, 1], -tau2[:, 0, :, 0]], axis=-1)
    dN = dN * orientation
    s = np.linalg.norm(N, axis=1)
    nu = N / s[:, None]
    ds = np.einsum("na,nia->ni", nu, dN)
    dnu = dN / s[:, None, None] - N[:, None, :] * (ds / s[:, None] ** 2)[:, :, None]
    d2nu = None
    if tau3 is not None:
        if n == 3:
            d2N = np.zeros(tau.shape[:1] + (m, m, 3))
            for i in range(m):
                for j in range(m):
                    d2N[:, i, j] = (c(tau3[:, 0, i, j], tau[:, 1]) + c(tau2[:, 0, i], tau2[:, 1, j])
                                    + c(tau2[:, 0, j], tau2[:, 1, i]) + c(tau[:, 0], tau3[:, 1, i, j]))
        else:
            d2N = np.stack([tau3[:, 0, :, :, 1], -tau3[:, 0, :, :, 0]], axis=-1)
        d2N = d2N * orientation
        d2s = (np.einsum("nja,nia->nij", dN, dN) + np.einsum("na,nija->nij", N, d2N)) / s[:, None, None]
        d2s -= np.einsum("ni,nj->nij", ds, ds) / s[:, None, None]
        s2, s3 = s**2, s**3
        d2nu = (d2N / s[:, None, None, None]
                - np.einsum("nia,nj->nija", dN, ds) / s2[:, None, None, None]
                - np.einsum("nja,ni->nija", dN, ds) / s2[:, None, None, None]
                + np.einsum("na,nij->nija", N, 2 * np.einsum("ni,nj->nij", ds, ds) / s3[:, None, None]
                            - d2s / s2[:, None, None]))
    return nu, dnu, d2nu


def principal_decomposition_arrays(G, L):
    """Principal curvatures (ascending) and G-orthonormal directions.

    Solves ``L eta = kappa G eta`` via the Cholesky factor of ``G``.
    """
    C = np.linalg.cholesky(G)
    Cinv = np.linalg.inv(C)
    S = Cinv @ L @ np.swapaxes(Cinv, -1, -2)
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    vals, vecs = np.linalg.eigh(S)
    eta = np.swapaxes(Cinv, -1, -2) @ vecs
    return vals, eta


def _metric_fd_christoffel(chart, theta):
    """Christoffel symbols of the first kind from finite differences of the metric.

    Uses an eighth-order central stencil on the first-order chart oracle only.
    """
    m = chart.m
    offsets, weights = central_weights(1, METRIC_FD_ORDER)
    h = METRIC_FD_STEP
    dG = np.zeros((theta.shape[0], m, m, m))
    for k in range(m):
        for off, w in zip(offsets, weights):
            if w == 0.0:
                continue
            th = theta.copy()
            th[:, k] += off * h
            tau = chart.evaluate(th, 1)[1]
            dG[:, k] += w * np.einsum("nia,nja->nij", tau, tau)
    dG /= h
    # Lambda_{ij|k} = (d_i g_jk + d_j g_ik - d_k g_ij) / 2
    return 0.5 * (np.einsum("nijk->nijk", dG) + np.einsum("njik->nijk", dG) - np.einsum("nkij->nijk", dG))


def jet_from_derivatives(derivs, orientation: int = 1, order: Optional[int] = None,
                         chris_metric=None) -> GeometryJet:
    """Build a :class:`GeometryJet` from chart derivatives ``[phi, d1, d2, (d3)]``."""
    p, tau, tau2 = derivs[0], derivs[1], derivs[2]
    tau3 = derivs[3] if len(derivs) > 3 else None
    N, m, n = tau.shape
    G = np.einsum("nia,nja->nij", tau, tau)
    detg = np.linalg.det(G)
    smin = np.min(np.linalg.svd(tau, compute_uv=False), axis=1)
    if np.any(smin <= 1e-12 * np.maximum(1.0, np.max(np.abs(tau), axis=(1, 2)))):
        raise DegenerateChartError("rank-deficient chart Jacobian")
    Ginv = np.linalg.inv(G)
    nu, dnu, d2nu = _normal_derivatives(tau, tau2, tau3, orientation)
    L = np.einsum("nija,na->nij", tau2, nu)
    K = Ginv @ L
    dG = np.einsum("nika,nja->nkij", tau2, tau) + np.einsum("nia,njka->nkij", tau, tau2)
    dGinv = -np.einsum("nia,nkab,nbj->nkij", Ginv, dG, Ginv)
    chris_lower = np.einsum("nija,nka->nijk", tau2, tau)
    chris = np.einsum("nkr,nijr->nijk", Ginv, chris_lower)
    dual = np.einsum("nij,nja->nia", Ginv, tau)
    ddual = np.einsum("nkij,nja->nkia", dGinv, tau) + np.einsum("nij,njka->nkia", Ginv, tau2)
    P = np.eye(n)[None] - np.einsum("na,nb->nab", nu, nu)
    W = np.einsum("nij,nia,njb->nab", L, dual, dual)
    kappa = np.trace(K, axis1=1, axis2=2)
    gauss = np.linalg.det(L) / detg
    kappas, eta = principal_decomposition_arrays(G, L)
    trL2 = np.trace(K @ K, axis1=1, axis2=2)
    jet = GeometryJet(p, tau, tau2, nu, dnu, G, Ginv, detg, L, K, dG, dGinv, chris_lower, chris,
                      dual, ddual, P, W, kappa, gauss, kappas, eta, trL2, chris_metric=chris_metric)
    if tau3 is not None and d2nu is not None:
        jet.tau3 = tau3
        jet.d2nu = d2nu
        dL = np.einsum("nijka,na->nkij", tau3, nu) + np.einsum("nija,nka->nkij", tau2, dnu)
        jet.dL = dL
        jet.dkappa = (np.einsum("nkij,nji->nk", dGinv, L) + np.einsum("nij,nkji->nk", Ginv, dL))
        jet.dW = (np.einsum("nkij,nia,njb->nkab", dL, dual, dual)
                  + np.einsum("nij,nkia,njb->nkab", L, ddual, dual)
                  + np.einsum("nij,nia,nkjb->nkab", L, dual, ddual))
    return jet


def geometry_jet(surface: ReferenceSurface, chart_id: int, theta, order: int = 3,
                 metric_route: bool = True) -> GeometryJet:
    """All point-wise second-order geometry at parameters ``theta`` of one chart.

    Parameters
    ----------
    surface : ReferenceSurface
    chart_id : int
    theta : array_like
        Parameters, shape ``(m,)`` or ``(N, m)``.
    order : int
        Highest chart derivative to use; 3 adds derivatives of ``L``, ``kappa``
        and second derivatives of the normal.
    metric_route : bool
        Also compute Christoffel symbols from finite differences of the metric.
    """
    chart = surface.charts[chart_id]
    theta = np.atleast_2d(np.asarray(theta, float))
    order = max(2, min(order, chart.max_order))
    derivs = chart.evaluate(theta, order)
    cm = _metric_fd_christoffel(chart, theta) if metric_route else None
    return jet_from_derivatives(derivs, chart.orientation, order, cm)


def weingarten_apply(jet: GeometryJet, v, tol: float = 1e-10) -> np.ndarray:
    """Apply the Weingarten tensor to ambient vectors ``v``.

    ``v`` must be tangential up to ``tol`` (relative); the normal is mapped to zero.
    """
    v = np.asarray(v, float)
    v = np.broadcast_to(v, jet.nu.shape) if v.ndim == 1 else v
    nrm = np.linalg.norm(v, axis=-1)
    normal_part = np.abs(np.einsum("na,na->n", v, jet.nu))
    is_normal = np.abs(normal_part - nrm) <= tol * np.maximum(nrm, 1.0)
    if np.any((normal_part > tol * np.maximum(nrm, 1.0)) & ~is_normal):
        raise InvalidArgumentError("vector is not tangential")
    return np.einsum("nab,nb->na", jet.W, v)


def principal_decomposition(jet: GeometryJet):
    """Return ``(kappas, directions)``; directions are G-orthonormal columns in chart coordinates."""
    return jet.kappas, jet.directions
