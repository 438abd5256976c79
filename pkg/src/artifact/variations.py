"""First variations of normal-graph quantities and their finite-difference check.

For a quantity ``Q(rho)`` of the normal graph the variation in direction ``h`` is
``Q'(rho) h = d/de Q(rho + e h) at e = 0``. Closed forms are available at any
``rho`` for ``M0``, ``beta`` and ``normal``; all others are at ``rho = 0``.
The oracle is the centred difference ``[Q(rho + e h) - Q(rho - e h)] / (2 e)``
built from the same nonlinear maps as :mod:`artifact.normalgraph`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError, VariationNotImplementedError
from .fundforms import GeometryJet
from .normalgraph import GraphGeometry, graph_geometry_kernel
from .surfcalc import FieldJet, SurfaceField, gradient_jet, hessian_kernel

QUANTITIES = ("M0", "beta", "normal", "projection", "gradient", "divergence",
              "laplace_beltrami", "weingarten", "mean_curvature")
GENERAL_RHO = ("M0", "beta", "normal")
CARRIER_SCALAR = ("gradient", "laplace_beltrami")
CARRIER_VECTOR = ("divergence",)

DEFAULT_EPSILONS = tuple(1e-2 * 2.0 ** -k for k in range(11))  # 1e-2 down to ~1e-5
MIN_ORDER = 1.9
ROUNDOFF_EPS = 1e-9


def _zero_jet(like: FieldJet) -> FieldJet:
    return FieldJet(np.zeros_like(like.value), np.zeros_like(like.d1),
                    None if like.d2 is None else np.zeros_like(like.d2))


# ---------------------------------------------------------------------------
# nonlinear maps


def quantity(which: str, J: GeometryJet, R: FieldJet, carrier: Optional[FieldJet] = None) -> np.ndarray:
    """``Q(rho)`` at the samples of one chart."""
    geo = graph_geometry_kernel(J, R)
    if which == "M0":
        return geo.M0
    if which == "beta":
        return geo.beta
    if which == "normal":
        return geo.nu
    if which == "projection":
        return geo.P
    if which == "mean_curvature":
        return geo.kappa
    if which == "weingarten":
        # L_Gamma = -grad_Gamma nu_Gamma = -tau_Gamma^j (x) d_j nu_Gamma
        return -np.einsum("nja,njb->nab", geo.dual, geo.dnu)
    if carrier is None:
        raise InvalidArgumentError(f"{which} needs a carrier field")
    PM = np.einsum("nab,nbc->nac", geo.P, geo.M0)
    if which == "gradient":
        return np.einsum("nab,nb->na", PM, np.einsum("nj,nja->na", carrier.d1, J.dual))
    if which == "divergence":
        return np.einsum("nja,nja->n", geo.dual, carrier.d1)
    if which == "laplace_beltrami":
        chris = np.einsum("nkr,nijr->nijk", geo.Ginv, np.einsum("nija,nka->nijk", geo.tau2, geo.tau))
        b = -np.einsum("nij,nijk->nk", geo.Ginv, chris)
        return np.einsum("nij,nij->n", geo.Ginv, carrier.d2) + np.einsum("nk,nk->n", b, carrier.d1)
    raise InvalidArgumentError(f"unknown quantity {which!r}")


# ---------------------------------------------------------------------------
# closed forms


def variation_kernel(which: str, J: GeometryJet, H: FieldJet, R: Optional[FieldJet] = None,
                     carrier: Optional[FieldJet] = None, form: str = "primary") -> np.ndarray:
    """Closed-form ``Q'(rho) h`` at the samples of one chart.

    ``form="alternative"`` selects the second expression for the Laplace-Beltrami
    variation (through ``div L``) and the trace of ``L'(0)`` for the mean curvature.
    """
    if which not in QUANTITIES:
        raise InvalidArgumentError(f"unknown quantity {which!r}")
    at_zero = R is None or (np.all(R.value == 0) and np.all(R.d1 == 0))
    if not at_zero and which not in GENERAL_RHO:
        raise VariationNotImplementedError(f"the variation of {which} is available at rho = 0 only")
    h = H.value
    gh = np.einsum("nj,nja->na", H.d1, J.dual)
    if which in GENERAL_RHO:
        R = _zero_jet(H) if R is None else R
        geo = graph_geometry_kernel(J, R)
        grad_rho = np.einsum("nj,nja->na", R.d1, J.dual)
        dM0 = np.einsum("nab,nbc,ncd->nad", geo.M0, J.W, geo.M0) * h[:, None, None]
        if which == "M0":
            return dM0
        w = np.einsum("nab,nb->na", dM0, grad_rho) + np.einsum("nab,nb->na", geo.M0, gh)
        dbeta = -geo.beta**3 * np.einsum("na,na->n", geo.a, w)
        if which == "beta":
            return dbeta
        return dbeta[:, None] * (J.nu - geo.a) - geo.beta[:, None] * w
    nu, W = J.nu, J.W
    if which == "projection":
        return np.einsum("na,nb->nab", gh, nu) + np.einsum("na,nb->nab", nu, gh)
    if which == "weingarten":
        hess = hessian_kernel(J, H)
        Lgh = np.einsum("nab,nb->na", W, gh)
        return np.einsum("na,nb->nab", nu, Lgh) + h[:, None, None] * (W @ W) + hess
    if which == "mean_curvature":
        if form == "alternative":
            return np.trace(variation_kernel("weingarten", J, H), axis1=1, axis2=2)
        from .surfcalc import laplace_kernel

        return J.trL2 * h + laplace_kernel(J, H)
    if carrier is None:
        raise InvalidArgumentError(f"{which} needs a carrier field")
    if which == "gradient":
        gphi = np.einsum("nj,nja->na", carrier.d1, J.dual)
        return (np.einsum("na,na->n", gh, gphi)[:, None] * nu
                + h[:, None] * np.einsum("nab,nb->na", W, gphi))
    if which == "divergence":
        # (nu | (grad h | grad) f) + h tr[L grad f]
        directional = np.einsum("na,nja,njb->nb", gh, J.dual, carrier.d1)
        grad_f = np.einsum("nja,njb->nab", J.dual, carrier.d1)
        return np.einsum("na,na->n", nu, directional) + h * np.einsum("nab,nba->n", W, grad_f)
    if which == "laplace_beltrami":
        if J.dW is None:
            raise InvalidArgumentError("needs a third-order reference jet")
        G = gradient_jet(J, carrier)
        gphi = G.value
        hess = np.einsum("nka,nkb->nab", J.dual, G.d1)
        tr_L_hess = np.einsum("nab,nba->n", W, hess)
        Lgh = np.einsum("nab,nb->na", W, gh)
        cross = np.einsum("na,na->n", gh, gphi)
        if form == "alternative":
            divL = np.einsum("njab,njb->na", J.dW, J.dual)
            vec = h[:, None] * divL + 2 * Lgh - J.kappa[:, None] * gh
            return 2 * h * tr_L_hess + np.einsum("na,na->n", vec, gphi)
        # tr grad(L grad phi) = (tau^j | d_j(W grad phi))
        d_Lg = np.einsum("njab,nb->nja", J.dW, gphi) + np.einsum("nab,njb->nja", W, G.d1)
        tr_grad_Lg = np.einsum("nja,nja->n", J.dual, d_Lg)
        return h * (tr_L_hess + tr_grad_Lg) + 2 * np.einsum("na,na->n", Lgh, gphi) - J.kappa * cross
    raise InvalidArgumentError(f"unknown quantity {which!r}")


def _field_jets(f, sampling):
    if f is None:
        return [None] * sampling.n_charts
    return [f.jet(c) for c in range(sampling.n_charts)]


def variation(which: str, h: SurfaceField, base: Optional[SurfaceField] = None,
              carrier: Optional[SurfaceField] = None, form: str = "primary") -> list:
    """Closed-form variation per chart.

    Parameters
    ----------
    which : str
        One of ``QUANTITIES``.
    h : SurfaceField
        Scalar direction of variation.
    base : SurfaceField, optional
        Base height ``rho`` (zero when omitted).
    carrier : SurfaceField, optional
        ``phi`` (gradient, laplace_beltrami) or ``f`` (divergence).

    Returns
    -------
    list of ndarray
        Values on every chart grid (scalar, vector or matrix per sample).
    """
    smp = h.sampling
    Js = smp.jets()
    Rs, Cs = _field_jets(base, smp), _field_jets(carrier, smp)
    return [variation_kernel(which, J, h.jet(c), Rs[c], Cs[c], form) for c, J in enumerate(Js)]


# ---------------------------------------------------------------------------
# finite-difference harness


@dataclass
class VariationRow:
    eps: float
    error: float
    order: float
    roundoff: bool


@dataclass
class VariationReport:
    """Convergence table of the closed form against centred differences."""

    which: str
    rows: list = field(default_factory=list)
    fitted_order: float = float("nan")
    extrapolated_error: float = float("nan")
    scale: float = 0.0
    passed: bool = False

    def to_dict(self) -> dict:
        return {"which": self.which, "fitted_order": self.fitted_order,
                "extrapolated_error": self.extrapolated_error, "scale": self.scale,
                "passed": self.passed, "rows": [asdict(r) for r in self.rows]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        lines = ["eps,error,order,roundoff"]
        lines += [f"{r.eps:.6e},{r.error:.6e},{r.order:.4f},{int(r.roundoff)}" for r in self.rows]
        return "\n".join(lines) + "\n"


def fd_variation_report(which: str, h: SurfaceField, base: Optional[SurfaceField] = None,
                        carrier: Optional[SurfaceField] = None, epsilons=DEFAULT_EPSILONS,
                        form: str = "primary", owned_only: bool = True) -> VariationReport:
    """Compare the closed-form variation with ``[Q(rho + e h) - Q(rho - e h)] / (2 e)``.

    Rows with ``e < 1e-9`` or an error below the round-off floor
    ``~ 100 u |Q| / e`` are flagged and excluded from the order fit. The test
    passes when the least-squares order over the remaining rows is at least 1.9.
    """
    smp = h.sampling
    Js = smp.jets()
    Rs, Cs = _field_jets(base, smp), _field_jets(carrier, smp)
    masks = [g.owned if owned_only else np.ones(len(g.theta), bool) for g in smp.grids]
    exact = [variation_kernel(which, J, h.jet(c), Rs[c], Cs[c], form) for c, J in enumerate(Js)]
    rep = VariationReport(which)
    errs, scale = [], 0.0
    for eps in epsilons:
        err = 0.0
        for c, J in enumerate(Js):
            H = h.jet(c)
            R = Rs[c] if Rs[c] is not None else _zero_jet(H)
            plus = quantity(which, J, R + eps * H, Cs[c])
            minus = quantity(which, J, R + (-eps) * H, Cs[c])
            fd = (plus - minus) / (2 * eps)
            m = masks[c]
            err = max(err, float(np.max(np.abs(fd - exact[c])[m])))
            scale = max(scale, float(np.max(np.abs(plus)[m])))
        errs.append(err)
        noise = 100 * np.finfo(float).eps * max(scale, 1.0) / eps
        rep.rows.append(VariationRow(float(eps), err, float("nan"), bool(eps < ROUNDOFF_EPS or err < noise)))
    for k in range(1, len(rep.rows)):
        a, b = rep.rows[k - 1], rep.rows[k]
        if a.error > 0 and b.error > 0:
            b.order = float(np.log(a.error / b.error) / np.log(a.eps / b.eps))
    rep.scale = scale
    use = [r for r in rep.rows if not r.roundoff and r.error > 0]
    if len(use) >= 3:
        x = np.log([r.eps for r in use])
        y = np.log([r.error for r in use])
        slope, icpt = np.polyfit(x, y, 1)
        rep.fitted_order = float(slope)
        # Richardson: remove the leading e^2 term from the two smallest unflagged rows
        a, b = use[-2], use[-1]
        q = (a.eps / b.eps) ** 2
        rep.extrapolated_error = float(abs(q * b.error - a.error) / (q - 1))
        rep.passed = bool(slope >= MIN_ORDER)
    else:
        # every row sits at round-off: the closed form is exact to working precision
        rep.fitted_order = float("inf")
        rep.extrapolated_error = float(max(errs)) if errs else 0.0
        rep.passed = bool(all(r.roundoff for r in rep.rows))
    return rep
