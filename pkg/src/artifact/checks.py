"""Invariant suites: residuals of identities that must hold on every surface.

Each check returns a :class:`Residual` with the measured value and its tolerance.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .ambient import PlaneWaves, Polynomial, VectorFunction, random_polynomial
from .refsurface import ReferenceSurface, SurfaceSampling
from .surfcalc import (FieldJet, SurfaceField, integrate, laplace_beltrami, normal_field, position_field,
                       surface_divergence, surface_gradient)

TOLERANCES = {
    "christoffel_routes": 1e-9,
    "gauss_frame": 1e-9,
    "kappa_div_normal": 1e-8,
    "laplace_identity": 1e-6,
    "grad_curvature": 1e-6,
    "trace_L2": 1e-10,
    "integration_by_parts": 1e-6,
}


@dataclass
class Residual:
    name: str
    value: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tol)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def _owned_max(values, sampling):
    """Largest entrywise magnitude over owned samples."""
    out = 0.0
    for v, g in zip(values, sampling.grids):
        a = np.abs(np.asarray(v)[g.owned])
        if a.size:
            out = max(out, float(np.max(a)))
    return out


def _poly_mul(a: dict, b: dict) -> dict:
    out = {}
    for ea, ca in a.items():
        for eb, cb in b.items():
            e = tuple(x + y for x, y in zip(ea, eb))
            out[e] = out.get(e, 0.0) + ca * cb
    return out


def _bump(surface: ReferenceSurface) -> dict:
    """Polynomial terms vanishing to second order on the boundary of a graph patch."""
    lo = np.array(surface.charts[0].lower, float)
    hi = np.array(surface.charts[0].upper, float)
    n = surface.dim
    m = n - 1
    # prod_i (1 - u_i^2)^2 with u = (2x - lo - hi) / (hi - lo): expand per axis then multiply
    terms = {tuple([0] * n): 1.0}
    for i in range(m):
        c = 0.5 * (lo[i] + hi[i])
        s = 0.5 * (hi[i] - lo[i])
        # (1 - ((x - c)/s)^2)^2 as polynomial in x
        p = np.polynomial.polynomial.polypow([1 - c * c / s**2, 2 * c / s**2, -1 / s**2], 2)
        new = {}
        for e, v in terms.items():
            for k, pk in enumerate(p):
                ee = list(e)
                ee[i] += k
                new[tuple(ee)] = new.get(tuple(ee), 0.0) + v * pk
        terms = new
    return terms


def invariant_suite(surface: ReferenceSurface, resolution: int = 96, seed: int = 0,
                    tolerances: Optional[dict] = None) -> list:
    """Residuals of the frame, curvature and integral identities on one surface.

    * Christoffel symbols from second derivatives vs differenced metric;
    * ``tau_ij = Lambda^k_ij tau_k + l_ij nu``;
    * ``kappa = -div nu``; ``Delta id = kappa nu``;
    * ``Delta nu = -grad kappa - tr(L^2) nu``; ``tr L^2 = sum kappa_i^2``;
    * ``int (grad f | g) + int f div g = 0`` for tangential ``g`` (compactly supported ``f`` on patches).
    """
    tol = dict(TOLERANCES)
    tol.update(tolerances or {})
    rng = np.random.default_rng(seed)
    smp = SurfaceSampling(surface, resolution)
    Js = smp.jets(3)
    n = surface.dim
    out = []

    chris = _owned_max([J.chris_lower - J.chris_metric for J in Js], smp)
    out.append(Residual("christoffel_routes", chris, tol["christoffel_routes"]))

    frame = [J.tau2 - np.einsum("nijk,nka->nija", J.chris, J.tau) - J.L[..., None] * J.nu[:, None, None, :] for J in Js]
    out.append(Residual("gauss_frame", _owned_max(frame, smp), tol["gauss_frame"]))

    nf = normal_field(smp)
    divnu = surface_divergence(nf)
    out.append(Residual("kappa_div_normal", _owned_max([d + J.kappa for d, J in zip(divnu.values, Js)], smp),
                        tol["kappa_div_normal"]))

    lapid = laplace_beltrami(position_field(smp))
    out.append(Residual("laplace_identity",
                        _owned_max([l - J.kappa[:, None] * J.nu for l, J in zip(lapid.values, Js)], smp),
                        tol["laplace_identity"]))

    lapnu = laplace_beltrami(nf)
    gk = [np.einsum("nj,nja->na", J.dkappa, J.dual) for J in Js]
    out.append(Residual("grad_curvature",
                        _owned_max([l + g + J.trL2[:, None] * J.nu for l, g, J in zip(lapnu.values, gk, Js)], smp),
                        tol["grad_curvature"]))

    out.append(Residual("trace_L2", _owned_max([J.trL2 - np.sum(J.kappas**2, axis=1) for J in Js], smp),
                        tol["trace_L2"]))

    if surface.closed:
        f = PlaneWaves.random(n, rng, count=3)
    else:
        # boundary terms vanish for f supported inside the patch
        r = random_polynomial(n, 2, rng).terms
        r[(0,) * n] = 1.0
        f = Polynomial(_poly_mul(_bump(surface), r), n)
    fx = SurfaceField.from_function(smp, f)
    V = VectorFunction([PlaneWaves.random(n, rng, count=3) for _ in range(n)])
    fv = SurfaceField.from_function(smp, V)
    jets = []
    for J, fj in zip(Js, fv.jets()):
        dP = -(np.einsum("nia,nb->niab", J.dnu, J.nu) + np.einsum("na,nib->niab", J.nu, J.dnu))
        d1 = np.einsum("niab,nb->nia", dP, fj.value) + np.einsum("nab,nib->nia", J.P, fj.d1)
        jets.append(FieldJet(np.einsum("nab,nb->na", J.P, fj.value), d1))
    gt = SurfaceField(smp, [j.value for j in jets], jets)
    gx = surface_gradient(fx)
    dv = surface_divergence(gt)
    ibp = (integrate([np.einsum("na,na->n", a, b) for a, b in zip(gx.values, gt.values)], smp)
           + integrate([a * b for a, b in zip(fx.values, dv.values)], smp))
    out.append(Residual("integration_by_parts", abs(ibp), tol["integration_by_parts"]))
    return out


def suite_report(surface: ReferenceSurface, resolution: int = 96, seed: int = 0) -> dict:
    res = invariant_suite(surface, resolution, seed)
    return {"residuals": [r.to_dict() for r in res], "passed": all(r.passed for r in res)}
