"""Mollified level functions, implicit heights and the second-normal-bundle metric.

Pipeline on a reference surface ``Sigma`` with tube width ``a``:

1. canonical level function ``phi`` on a box grid (see :mod:`artifact.tubular`);
2. ``phi_k = 1 + psi_k * (phi - 1)`` with ``psi_k = c_k (1 - |x|^2/R^2)^k_+``;
3. ``r_k`` on ``Sigma`` from ``phi_k(p + r nu(p)) = 0``, which defines ``Sigma_k``;
4. ``Sigma`` re-parameterized over ``Sigma_k`` gives ``rho_eps``.

Derivatives of ``phi_k`` come from differentiating the kernel under the sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import fft as sfft
from scipy import integrate, special
from scipy.spatial import cKDTree

from .errors import ClosenessViolatedError, InvalidArgumentError
from .fundforms import _normal_derivatives
from .normalgraph import HeightFunction, admissible_bound
from .refsurface import Chart, ReferenceSurface, SurfaceSampling
from .stencils import interpolate_uniform
from .surfcalc import FieldJet, SurfaceField, surface_gradient, surface_hessian
from .tubular import LevelField, TubularNeighborhood, parameterize_over

INTERP = 6


# ---------------------------------------------------------------------------
# kernel


def kernel_constant(k: int, R: float, n: int = 3, method: str = "quadrature") -> float:
    """``c_k`` with ``int psi_k = 1``.

    ``method="quadrature"`` integrates the radial profile numerically;
    ``"closed"`` uses ``R^n pi^(n/2) Gamma(k+1) / Gamma(k+1+n/2)``.
    """
    if k < 1:
        raise InvalidArgumentError("k must be at least 1")
    if method == "closed":
        logm = n * np.log(R) + 0.5 * n * np.log(np.pi) + special.gammaln(k + 1) - special.gammaln(k + 1 + n / 2)
        return float(np.exp(-logm))
    sphere_area = 2 * np.pi ** (n / 2) / special.gamma(n / 2)
    # substitute r = R sqrt(t): int_0^1 (1-t)^k t^(n/2-1) dt R^n / 2
    val, _ = integrate.quad(lambda t: (1 - t) ** k * t ** (n / 2 - 1), 0.0, 1.0, epsabs=0, epsrel=1e-13, limit=200)
    return float(1.0 / (sphere_area * 0.5 * R**n * val))


@dataclass
class MollifierKernel:
    """Radial kernel ``psi_k(x) = c_k (1 - |x|^2/R^2)^k`` on ``|x| < R``, zero elsewhere."""

    k: int
    R: float
    n: int = 3
    c: float = field(init=False)

    def __post_init__(self):
        if self.k < 1 or self.R <= 0:
            raise InvalidArgumentError("kernel needs k >= 1 and R > 0")
        self.c = kernel_constant(self.k, self.R, self.n)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        s = np.sum(x * x, axis=-1) / self.R**2
        return self.c * np.where(s < 1, np.clip(1 - s, 0, None) ** self.k, 0.0)

    def derivatives(self, x):
        """``psi``, gradient ``[..., a]`` and Hessian ``[..., a, b]``."""
        x = np.asarray(x, float)
        k, R = self.k, self.R
        s = np.sum(x * x, axis=-1) / R**2
        u = np.clip(1 - s, 0, None)
        inside = s < 1
        p0 = np.where(inside, u**k, 0.0)
        p1 = np.where(inside, u ** (k - 1), 0.0)
        p2 = np.where(inside, u ** max(k - 2, 0), 0.0) if k >= 2 else np.zeros_like(s)
        val = self.c * p0
        grad = self.c * (-2 * k / R**2) * p1[..., None] * x
        eye = np.eye(x.shape[-1])
        hess = self.c * (4 * k * (k - 1) / R**4 * p2[..., None, None] * x[..., :, None] * x[..., None, :]
                         - 2 * k / R**2 * p1[..., None, None] * eye)
        return val, grad, hess


def mollifier_kernel(k: int, R: float, n: int = 3) -> MollifierKernel:
    return MollifierKernel(k, R, n)


# ---------------------------------------------------------------------------
# convolution

_COMPONENTS_CACHE = {}


def _components(n):
    if n not in _COMPONENTS_CACHE:
        comps = [("value", ())]
        comps += [("grad", (a,)) for a in range(n)]
        comps += [("hess", (a, b)) for a in range(n) for b in range(a, n)]
        _COMPONENTS_CACHE[n] = comps
    return _COMPONENTS_CACHE[n]


def _fill_kernel_component(out, place, kern: MollifierKernel, offs, which, idx):
    """Write the kernel (or one derivative) at offsets ``offs`` into ``out[np.ix_(*place)]``.

    Built slab by slab along the first axis to keep temporaries small.
    """
    n = len(offs)
    R2 = kern.R**2
    k = kern.k
    rest = list(np.meshgrid(*offs[1:], indexing="ij", sparse=True))
    s_rest = sum(g * g for g in rest)
    sub = np.ix_(*place[1:])
    for i0, x0 in zip(place[0], offs[0]):
        coords = [x0] + rest
        s = (x0 * x0 + s_rest) / R2
        u = np.clip(1 - s, 0, None)
        if which == "value":
            val = kern.c * u**k
        elif which == "grad":
            val = kern.c * (-2 * k / R2) * u ** (k - 1) * coords[idx[0]]
        else:
            a, b = idx
            val = kern.c * 4 * k * (k - 1) / R2**2 * (u ** (k - 2) if k >= 2 else 0 * u) * coords[a] * coords[b]
            if a == b:
                val = val - kern.c * 2 * k / R2 * u ** (k - 1)
        out[(i0,) + sub] = np.broadcast_to(val, s.shape)


@dataclass
class MollifiedLevel(LevelField):
    """``phi_k`` on the grid of the source level field, with kernel-derivative gradient and Hessian."""

    k: int = 0
    R: float = float("nan")


def support_radius(phi: LevelField, center=None) -> float:
    """``sup |x - center|`` over grid points with ``phi != 1``."""
    center = np.zeros(phi.dim) if center is None else np.asarray(center, float)
    nz = phi.values != 1.0
    if not np.any(nz):
        return 0.0
    pts = phi.lower + np.argwhere(nz) * phi.spacing
    return float(np.max(np.linalg.norm(pts - center, axis=1)))


def mollify_level(phi: LevelField, k: int, R: Optional[float] = None, derivatives: bool = True,
                  center=None) -> MollifiedLevel:
    """``phi_k = 1 + psi_k * (phi - 1)`` by grid quadrature of the convolution.

    The sum over grid cells is evaluated with zero-padded real FFTs whose size
    rules out wrap-around, so it equals the direct sum up to round-off.

    Parameters
    ----------
    phi : LevelField
    k : int
    R : float, optional
        Kernel radius; defaults to twice the support radius of ``phi - 1``.
        Must satisfy ``phi = 1`` for ``|x - center| > R/2``.
    derivatives : bool
        Also convolve with the kernel gradient and Hessian.
    """
    n = phi.dim
    h = np.asarray(phi.spacing, float)
    f = phi.values - 1.0
    nz = np.argwhere(f != 0)
    rsup = support_radius(phi, center)
    if R is None:
        R = 2 * rsup
    if rsup > R / 2 * (1 + 1e-12):
        raise InvalidArgumentError(f"phi differs from 1 at radius {rsup:.4g} > R/2 = {R / 2:.4g}")
    if len(nz) == 0:
        raise InvalidArgumentError("phi - 1 vanishes identically")
    lo, hi = nz.min(axis=0), nz.max(axis=0) + 1
    shape = np.array(phi.values.shape)
    if np.any(lo == 0) or np.any(hi == shape):
        raise InvalidArgumentError("support of phi - 1 touches the grid boundary: box margin too small")
    kern = MollifierKernel(k, R, n)
    K = np.floor(R / h).astype(int)
    # circular size free of aliasing for output indices 0..O-1 and input indices lo..hi-1
    N = [sfft.next_fast_len(int(max(shape[a] - 1 - lo[a], hi[a] - 1) + K[a] + 1), real=True) for a in range(n)]
    fsub = np.zeros(N)
    fsub[tuple(slice(0, hi[a] - lo[a]) for a in range(n))] = f[tuple(slice(lo[a], hi[a]) for a in range(n))]
    F = sfft.rfftn(fsub, N)
    del fsub
    offs = [h[a] * np.concatenate([np.arange(0, K[a] + 1), np.arange(-K[a], 0)]) for a in range(n)]
    place = [np.concatenate([np.arange(0, K[a] + 1), np.arange(N[a] - K[a], N[a])]) for a in range(n)]
    out_idx = [np.mod(np.arange(shape[a]) - lo[a], N[a]) for a in range(n)]
    cell = float(np.prod(h))
    comps = _components(n) if derivatives else _components(n)[:1]
    vals = None
    grad = np.zeros(tuple(shape) + (n,)) if derivatives else None
    hess = np.zeros(tuple(shape) + (n, n)) if derivatives else None
    for which, idx in comps:
        ker = np.zeros(N)
        _fill_kernel_component(ker, place, kern, offs, which, idx)
        KF = sfft.rfftn(ker, N, overwrite_x=True)
        del ker
        KF *= F
        conv = sfft.irfftn(KF, N, overwrite_x=True)
        del KF
        res = conv[np.ix_(*out_idx)] * cell
        del conv
        if which == "value":
            vals = 1.0 + res
        elif which == "grad":
            grad[..., idx[0]] = res
        else:
            hess[..., idx[0], idx[1]] = res
            hess[..., idx[1], idx[0]] = res
    return MollifiedLevel(phi.lower.copy(), h.copy(), tuple(phi.shape), vals, grad, hess, phi.width,
                          phi.interp_points, k=k, R=float(R))


def direct_convolution(phi: LevelField, k: int, R: float, points_idx) -> np.ndarray:
    """Direct-sum ``phi_k`` and its derivatives at grid indices (oracle for the FFT path).

    Returns ``(N, 1 + n + n*n)``: value, gradient, flattened Hessian.
    """
    n = phi.dim
    kern = MollifierKernel(k, R, n)
    f = (phi.values - 1.0)
    nz = np.argwhere(f != 0)
    fv = f[tuple(nz.T)]
    ypts = phi.lower + nz * phi.spacing
    cell = float(np.prod(phi.spacing))
    out = []
    for ix in np.atleast_2d(points_idx):
        x = phi.lower + np.asarray(ix) * phi.spacing
        v, g, H = kern.derivatives(x - ypts)
        out.append(np.concatenate([[np.sum(v * fv)], g.T @ fv, np.einsum("nab,n->ab", H, fv).ravel()]) * cell)
    out = np.array(out)
    out[:, 0] += 1.0
    return out


def level_norms(phi: LevelField, phik: LevelField, mask=None) -> tuple:
    """``(|.|_{0,inf}, |.|_{1,inf}, |.|_{2,inf})`` of ``phi - phi_k`` on the grid.

    ``|f|_{j,inf} = sum_{i<=j} sup |grad^i f|`` with Euclidean / Frobenius norms.
    """
    m = np.ones(phi.values.shape, bool) if mask is None else mask
    d0 = float(np.max(np.abs(phi.values - phik.values)[m]))
    if phi.grad is None or phik.grad is None:
        return d0, np.nan, np.nan
    d1 = float(np.max(np.linalg.norm(phi.grad - phik.grad, axis=-1)[m]))
    d2 = float(np.max(np.linalg.norm(phi.hess - phik.hess, axis=(-2, -1))[m]))
    return d0, d0 + d1, d0 + d1 + d2


# ---------------------------------------------------------------------------
# implicit heights


def _interp(lf: LevelField, grid, x):
    return interpolate_uniform(grid, lf.lower, lf.spacing, x, INTERP)


def _normal_root(phik: LevelField, P, V, lo_r: float, hi_r: float, tol: float = 1e-14, max_iter: int = 80):
    """Per-row root of ``phik(P + r V)`` in ``(lo_r, hi_r)`` by Newton with bisection fallback."""
    N = len(P)
    glo = _interp(phik, phik.values, P + lo_r * V)
    ghi = _interp(phik, phik.values, P + hi_r * V)
    if np.any(glo >= 0) or np.any(ghi <= 0):
        i = int(np.flatnonzero((glo >= 0) | (ghi <= 0))[0])
        raise ClosenessViolatedError(f"phi_k has no sign change along the normal at {P[i].tolist()}")
    lo = np.full(N, lo_r)
    hi = np.full(N, hi_r)
    r = np.zeros(N)
    for _ in range(max_iter):
        x = P + r[:, None] * V
        g = _interp(phik, phik.values, x)
        gr = np.einsum("na,na->n", _interp(phik, phik.grad, x), V)
        if np.any(gr <= 0):
            i = int(np.flatnonzero(gr <= 0)[0])
            raise ClosenessViolatedError(f"d/dr phi_k(p + r nu) = {gr[i]:.3g} <= 0 at {x[i].tolist()}")
        lo = np.where(g < 0, r, lo)
        hi = np.where(g > 0, r, hi)
        step = g / gr
        rn = r - step
        bad = (rn <= lo) | (rn >= hi)
        rn = np.where(bad, 0.5 * (lo + hi), rn)
        rn = np.where(g == 0, r, rn)
        done = np.max(np.abs(rn - r)) <= tol
        r = rn
        if done:
            break
    return r


def _implicit_jet(phik: LevelField, d, r, order: int, orientation: int):
    """Chart derivatives of ``theta -> p + r nu`` with ``r`` defined implicitly by ``phi_k = 0``."""
    p, tau = d[0], d[1]
    tau2 = d[2] if len(d) > 2 else np.zeros(tau.shape[:2] + tau.shape[1:])
    tau3 = d[3] if len(d) > 3 and order >= 2 else None
    nu, dnu, d2nu = _normal_derivatives(tau, tau2, tau3, orientation)
    q = p + r[:, None] * nu
    out = [q]
    dr = d2r = None
    if order >= 1:
        F1 = _interp(phik, phik.grad, q)
        gr = np.einsum("na,na->n", F1, nu)
        qi = tau + r[:, None, None] * dnu
        dr = -np.einsum("na,nia->ni", F1, qi) / gr[:, None]
        Q = qi + dr[:, :, None] * nu[:, None, :]
        out.append(Q)
        if order >= 2:
            H = _interp(phik, phik.hess.reshape(phik.hess.shape[:-2] + (-1,)), q).reshape(len(q), *phik.hess.shape[-2:])
            base = tau2 + r[:, None, None, None] * d2nu + dr[:, :, None, None] * dnu[:, None, :, :] \
                + dr[:, None, :, None] * dnu[:, :, None, :]
            d2r = -(np.einsum("nia,nab,njb->nij", Q, H, Q) + np.einsum("na,nija->nij", F1, base)) / gr[:, None, None]
            out.append(base + d2r[..., None] * nu[:, None, None, :])
    return out, nu, dr, d2r


def implicit_height(phik: LevelField, reference, resolution: int = 64, width: Optional[float] = None,
                    window: float = 0.66) -> HeightFunction:
    """``r_k`` with ``phi_k(p + r_k nu(p)) = 0`` at every sample, with exact-in-grid jets.

    The root is sought on ``|r| < window * a``. ``d/dr phi_k`` must stay
    positive along the sampled normal segment, otherwise
    :class:`ClosenessViolatedError` is raised.
    """
    smp = reference if isinstance(reference, SurfaceSampling) else SurfaceSampling(reference, resolution)
    a = phik.width if width is None else float(width)
    if not np.isfinite(a):
        raise InvalidArgumentError("tube width unknown")
    vals, jets = [], []
    for g in smp.grids:
        ch = smp.surface.charts[g.chart_id]
        d = ch.evaluate(g.theta, min(3, ch.max_order))
        J = smp.jets(2)[g.chart_id]
        # sign condition along the normal inside the band
        for t in np.linspace(-window * a, window * a, 9)[1:-1]:
            x = J.p + t * J.nu
            gr = np.einsum("na,na->n", _interp(phik, phik.grad, x), J.nu)
            if np.any(gr <= 0):
                raise ClosenessViolatedError(f"d/dr phi_k <= 0 at offset {t:.3g}")
        r = _normal_root(phik, J.p, J.nu, -window * a, window * a)
        _, _, dr, d2r = _implicit_jet(phik, d, r, 2, ch.orientation)
        vals.append(r)
        jets.append(FieldJet(r, dr, d2r))
    fld = SurfaceField(smp, vals, jets)
    return HeightFunction(fld, admissible_bound(smp))


def implicit_surface(phik: LevelField, base: ReferenceSurface, width: Optional[float] = None,
                     window: float = 0.66) -> ReferenceSurface:
    """Atlas of ``Sigma_k = {phi_k = 0}`` written over the charts of ``base``; derivatives up to order 2."""
    a = phik.width if width is None else float(width)
    charts = []
    for cid, chart in enumerate(base.charts):
        def ev(th, order, chart=chart):
            d = chart.evaluate(th, min(order + 1, chart.max_order))
            nu = _normal_derivatives(d[1], np.zeros(d[1].shape[:2] + d[1].shape[1:]), None, chart.orientation)[0]
            r = _normal_root(phik, d[0], nu, -window * a, window * a)
            return _implicit_jet(phik, d, r, order, chart.orientation)[0]

        charts.append(Chart(chart.dim, chart.lower, chart.upper, chart.periodic, ev, chart.orientation,
                            2, chart.layout, chart.name + "-implicit"))
    return ReferenceSurface(tuple(charts), base.kind + "-implicit", {"base": base, "k": getattr(phik, "k", None)},
                            base.closed, base.owner, base.partition, base.transition, base.other_chart,
                            None, None, base.center)


def height_norms(height: HeightFunction, order: int = 1) -> tuple:
    """``(sup|r|, sup|grad r|, sup|hess r|_F)`` over owned samples (Hessian only when ``order == 2``)."""
    smp = height.sampling
    own = [g.owned for g in smp.grids]
    r0 = max(float(np.max(np.abs(v[o]))) for v, o in zip(height.field.values, own))
    gr = surface_gradient(height.field)
    r1 = max(float(np.max(np.linalg.norm(v[o], axis=1))) for v, o in zip(gr.values, own))
    if order < 2:
        return r0, r1
    H = surface_hessian(height.field)
    r2 = max(float(np.max(np.linalg.norm(v[o], axis=(1, 2)))) for v, o in zip(H.values, own))
    return r0, r1, r2


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class ApproximationRow:
    k: int
    phi_norm0: float
    phi_norm1: float
    phi_norm2: float
    r_sup: float
    grad_r_sup: float
    eps_display: float = float("nan")

    def as_list(self):
        return [self.k, self.phi_norm0, self.phi_norm1, self.phi_norm2, self.r_sup, self.grad_r_sup,
                self.eps_display]


TABLE_HEADER = ["k", "phi_diff_0", "phi_diff_1", "phi_diff_2", "r_sup", "grad_r_sup", "eps_display"]


def epsilon_display(phik: LevelField, surface: ReferenceSurface, resolution: int = 64,
                    target_tube: Optional[TubularNeighborhood] = None) -> dict:
    """Re-parameterize ``surface`` over ``Sigma_k``; returns the three sup norms of ``rho_eps`` and their sum."""
    sk = implicit_surface(phik, surface)
    smp = SurfaceSampling(sk, resolution, metric_route=False)
    # Sigma lies within |r_k| of Sigma_k; a window of half the width of Sigma keeps every scanned
    # point well inside the tube of Sigma, where projection is well posed
    tube = target_tube if target_tube is not None else TubularNeighborhood(surface)
    ref_tube = TubularNeighborhood(sk, resolution=16, width=0.5 * tube.width)
    rho = parameterize_over(smp, surface, target_tube=tube, reference_tube=ref_tube, closeness=False)
    r0, r1, r2 = height_norms(rho, order=2)
    return {"rho_sup": r0, "grad_rho_sup": r1, "hess_rho_sup": r2, "eps": r0 + r1 + r2,
            "residual": rho.diagnostics.get("residual")}


def approximation_table(surface: ReferenceSurface, ks: Sequence[int], spacing: float = 0.02,
                        resolution: int = 64, box=None, R: Optional[float] = None,
                        display: str = "last", tube: Optional[TubularNeighborhood] = None,
                        progress=None):
    """Rows of the mollification pipeline for a schedule of ``k``.

    ``display`` selects where the epsilon display is computed: ``"last"``, ``"all"`` or ``"none"``.
    Returns ``(rows, phi)``.
    """
    tube = TubularNeighborhood(surface) if tube is None else tube
    a = tube.width
    if box is None:
        pts = tube.sampling.positions()
        # phi - 1 vanishes beyond 2a/3 outside; keep room for interpolation stencils
        lo = pts.min(axis=0) - 2 * a / 3 - 5 * spacing
        hi = pts.max(axis=0) + 2 * a / 3 + 5 * spacing
        lo = np.floor(lo / spacing) * spacing
        hi = np.ceil(hi / spacing) * spacing
    else:
        lo, hi = np.asarray(box[0], float), np.asarray(box[1], float)
    phi = tube.level_function(lo, hi, spacing)
    if progress:
        progress("level function ready")
    smp = SurfaceSampling(surface, resolution)
    rows = []
    ks = list(ks)
    for i, k in enumerate(ks):
        phik = mollify_level(phi, k, R)
        n0, n1, n2 = level_norms(phi, phik)
        hk = implicit_height(phik, smp, width=a)
        r0, r1 = height_norms(hk)
        row = ApproximationRow(k, n0, n1, n2, r0, r1)
        if display == "all" or (display == "last" and i == len(ks) - 1):
            row.eps_display = epsilon_display(phik, surface, resolution, target_tube=tube)["eps"]
        rows.append(row)
        if progress:
            progress(f"k={k} done")
        del phik
    return rows, phi


# ---------------------------------------------------------------------------
# second normal bundle metric


def bundle_cloud(surface, order: int = 2, resolution: int = 48) -> np.ndarray:
    """Owned samples of ``(p)``, ``(p, nu)`` or ``(p, nu, grad nu)``; ``grad nu = -L`` as an ``n x n`` block."""
    if order not in (0, 1, 2):
        raise InvalidArgumentError("order must be 0, 1 or 2")
    smp = surface if isinstance(surface, SurfaceSampling) else SurfaceSampling(surface, resolution)
    parts = []
    for J, g in zip(smp.jets(2), smp.grids):
        o = g.owned
        cols = [J.p[o]]
        if order >= 1:
            cols.append(J.nu[o])
        if order >= 2:
            cols.append(-J.W[o].reshape(int(o.sum()), -1))
        parts.append(np.concatenate(cols, axis=1))
    return np.concatenate(parts)


def hausdorff(A, B) -> float:
    """Symmetric Hausdorff distance of two point clouds (Euclidean in the stacked coordinates)."""
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    if A.shape[1] != B.shape[1]:
        raise InvalidArgumentError("clouds live in different spaces")
    dab = cKDTree(B).query(A)[0].max()
    dba = cKDTree(A).query(B)[0].max()
    return float(max(dab, dba))


def hypersurface_metric(s1, s2, order: int = 2, resolution: int = 48) -> float:
    """Sampled ``d_M``: Hausdorff distance of second normal bundles (or their order-0/1 truncations).

    Accepts surfaces, samplings or ready-made clouds.
    """
    c1 = s1 if isinstance(s1, np.ndarray) else bundle_cloud(s1, order, resolution)
    c2 = s2 if isinstance(s2, np.ndarray) else bundle_cloud(s2, order, resolution)
    return hausdorff(c1, c2)


def ball_condition_check(surface: ReferenceSurface, r: float, tube: Optional[TubularNeighborhood] = None):
    """``(ok, witness)``: uniform interior/exterior balls of radius ``r`` iff the tube width is at least ``r``."""
    tube = TubularNeighborhood(surface) if tube is None else tube
    est = tube.reach()
    witness = dict(est.witness)
    witness["width"] = est.width
    return bool(est.width >= r), witness
