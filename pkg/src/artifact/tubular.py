"""Tubular neighbourhoods: closest point, signed distance, reach, level functions.

The signed distance is negative inside the enclosed domain and satisfies
``x = Pi(x) + d(x) nu(Pi(x))`` in the tube. Its derivatives are

* ``grad d = nu o Pi``,
* ``hess d = -L (I - d L)^-1`` (Weingarten tensor evaluated at ``Pi(x)``),
* ``grad Pi = P M0(d)`` with ``M0(d) = (I - d L)^-1``.

The canonical level function is ``phi = d chi(3d/a) + sign(d) (1 - chi(3d/a))``
where ``chi`` is a C^4 cutoff (1 on ``|s| <= 1``, 0 on ``|s| >= 2``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage, optimize
from scipy.spatial import cKDTree

from .errors import (InvalidArgumentError, NotAGraphError, NumericalFailureError,
                     OutOfTubeError)
from .fundforms import geometry_jet
from .normalgraph import HeightFunction, admissible_bound
from .refsurface import ReferenceSurface, SurfaceSampling, normal_from_tangents
from .stencils import interpolate_uniform
from .surfcalc import SurfaceField

MAX_NEWTON = 50
STEREO_SWITCH = 1.25
RAY_SEED = 20240611
EPS = np.finfo(float).eps


# ---------------------------------------------------------------------------
# cutoff and level profile


def smoothstep_c4(t):
    """Degree-9 smoothstep: 0 at 0, 1 at 1, first four derivatives vanish at both ends."""
    t = np.clip(t, 0.0, 1.0)
    return t**5 * (126 - 420 * t + 540 * t**2 - 315 * t**3 + 70 * t**4)


def _smoothstep_c4_derivs(t):
    inside = (t > 0) & (t < 1)
    t = np.clip(t, 0.0, 1.0)
    d1 = 630 * t**4 * (1 - t) ** 4
    d2 = 2520 * t**3 * (1 - t) ** 3 * (1 - 2 * t)
    return np.where(inside, d1, 0.0), np.where(inside, d2, 0.0)


def cutoff(s, deriv: int = 0):
    """C^4 cutoff ``chi``: 1 for ``|s| <= 1``, 0 for ``|s| >= 2``, monotone in ``|s|``.

    Returns ``chi`` or ``(chi, chi', chi'')`` when ``deriv == 2``.
    """
    s = np.asarray(s, float)
    t = np.abs(s) - 1.0
    chi = 1.0 - smoothstep_c4(t)
    if deriv == 0:
        return chi
    d1, d2 = _smoothstep_c4_derivs(t)
    return chi, -np.sign(s) * d1, -d2


def level_profile(d, a: float):
    """``g(d) = d chi(3d/a) + sign(d)(1 - chi(3d/a))`` with ``g'`` and ``g''``."""
    d = np.asarray(d, float)
    k = 3.0 / a
    chi, c1, c2 = cutoff(k * d, 2)
    sg = np.sign(d)
    g = d * chi + sg * (1 - chi)
    g1 = chi + (d - sg) * k * c1
    g2 = 2 * k * c1 + (d - sg) * k * k * c2
    return g, g1, g2


# ---------------------------------------------------------------------------
# meshes and ray parity


@dataclass
class SurfaceMesh:
    """Watertight triangulation (n = 3) or closed polyline (n = 2) of an atlas."""

    chart_ids: np.ndarray
    theta: np.ndarray
    vertices: np.ndarray
    faces: np.ndarray
    closed: bool


def _stereo_polar(res):
    nr = max(4, res // 2)
    na = max(8, 2 * res)
    ang = 2 * np.pi * np.arange(na) / na
    pts = [np.zeros((1, 2))]
    for j in range(1, nr + 1):
        r = j / nr
        pts.append(np.stack([r * np.cos(ang), r * np.sin(ang)], 1))
    theta = np.concatenate(pts)
    faces = []
    ring = lambda j, i: 1 + (j - 1) * na + (i % na)
    for i in range(na):
        faces.append((0, ring(1, i), ring(1, i + 1)))
    for j in range(1, nr):
        for i in range(na):
            a, b, c, d = ring(j, i), ring(j, i + 1), ring(j + 1, i), ring(j + 1, i + 1)
            faces.append((a, c, d))
            faces.append((a, d, b))
    return theta, np.array(faces), nr, na


def surface_mesh(surface: ReferenceSurface, resolution: int = 48) -> SurfaceMesh:
    """Triangulate a built-in atlas without seams (stereographic pairs are glued on ``|theta| = 1``)."""
    charts = surface.charts
    n = surface.dim
    if n == 2:
        ch = charts[0]
        if len(charts) != 1 or not ch.periodic[0]:
            raise InvalidArgumentError("curve meshes need a single periodic chart")
        th = (ch.lower[0] + (ch.upper[0] - ch.lower[0]) * np.arange(resolution) / resolution)[:, None]
        faces = np.stack([np.arange(resolution), (np.arange(resolution) + 1) % resolution], 1)
        ids = np.zeros(resolution, int)
        return SurfaceMesh(ids, th, ch.point(th), faces, True)
    if len(charts) == 2 and surface.transition is not None:
        theta, faces, nr, na = _stereo_polar(resolution)
        nv = len(theta)
        # chart 1 re-uses the outer ring of chart 0 (theta' = theta on |theta| = 1)
        inner = nv - na
        theta1 = theta[:inner]
        remap = np.concatenate([nv + np.arange(inner), inner + np.arange(na)])
        faces1 = remap[faces]
        ids = np.concatenate([np.zeros(nv, int), np.ones(inner, int)])
        th_all = np.concatenate([theta, theta1])
        faces_all = np.concatenate([faces, faces1])
    elif len(charts) == 1:
        ch = charts[0]
        smp = SurfaceSampling(surface, resolution, metric_route=False)
        g = smp.grids[0]
        th_all = g.theta
        ids = np.zeros(len(th_all), int)
        s0, s1 = g.shape
        idx = np.arange(s0 * s1).reshape(s0, s1)
        per = ch.periodic
        i_hi = s0 if per[0] else s0 - 1
        j_hi = s1 if per[1] else s1 - 1
        faces_all = []
        for i in range(i_hi):
            for j in range(j_hi):
                a, b = idx[i, j], idx[(i + 1) % s0, j]
                c, d = idx[i, (j + 1) % s1], idx[(i + 1) % s0, (j + 1) % s1]
                faces_all += [(a, b, d), (a, d, c)]
        faces_all = np.array(faces_all)
    else:
        raise InvalidArgumentError("unsupported atlas for meshing")
    verts = np.zeros((len(th_all), n))
    normals = np.zeros((len(th_all), n))
    for c in range(len(charts)):
        sel = ids == c
        verts[sel] = charts[c].point(th_all[sel])
        normals[sel] = surface.normal(c, th_all[sel])
    # orient every face along the outer normal
    tri = verts[faces_all]
    fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    flip = np.einsum("na,na->n", fn, normals[faces_all].sum(axis=1)) < 0
    faces_all[flip] = faces_all[flip][:, [0, 2, 1]]
    return SurfaceMesh(ids, th_all, verts, faces_all, surface.closed)


def _ray_hits_triangles(origins, direction, tri, chunk=256):
    """Number of crossings of rays ``origin + t dir`` (t > 0) with triangles."""
    v0, e1, e2 = tri[:, 0], tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    pvec = np.cross(direction, e2)
    det = np.einsum("ta,ta->t", e1, pvec)
    ok = np.abs(det) > 1e-14
    v0, e1, e2, pvec, det = v0[ok], e1[ok], e2[ok], pvec[ok], det[ok]
    inv = 1.0 / det
    counts = np.zeros(len(origins), int)
    for s in range(0, len(origins), chunk):
        o = origins[s:s + chunk]
        tvec = o[:, None, :] - v0[None]
        u = np.einsum("pta,ta->pt", tvec, pvec) * inv
        qvec = np.cross(tvec, e1[None])
        v = np.einsum("a,pta->pt", direction, qvec) * inv
        t = np.einsum("ta,pta->pt", e2, qvec) * inv
        hit = (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)
        counts[s:s + chunk] = hit.sum(axis=1)
    return counts


def _ray_hits_segments(origins, direction, seg):
    a, b = seg[:, 0], seg[:, 1]
    e = b - a
    det = direction[0] * (-e[:, 1]) - direction[1] * (-e[:, 0])
    ok = np.abs(det) > 1e-14
    a, e, det = a[ok], e[ok], det[ok]
    w = a[None] - origins[:, None, :]
    t = (w[..., 0] * (-e[:, 1]) - w[..., 1] * (-e[:, 0])) / det
    s = (direction[0] * w[..., 1] - direction[1] * w[..., 0]) / det
    return ((t > 0) & (s >= 0) & (s < 1)).sum(axis=1)


def ray_parity_inside(mesh: SurfaceMesh, points, n_rays: int = 3) -> np.ndarray:
    """Inside test by majority vote of ray-crossing parity over fixed pseudo-random directions."""
    if not mesh.closed:
        raise InvalidArgumentError("inside/outside is undefined for open surfaces")
    points = np.atleast_2d(np.asarray(points, float))
    n = points.shape[1]
    rng = np.random.default_rng(RAY_SEED)
    votes = np.zeros(len(points), int)
    prim = mesh.vertices[mesh.faces]
    for _ in range(n_rays):
        d = rng.normal(size=n)
        d /= np.linalg.norm(d)
        cnt = _ray_hits_triangles(points, d, prim) if n == 3 else _ray_hits_segments(points, d, prim)
        votes += cnt % 2
    return votes * 2 > n_rays


def _small_min_eig(A):
    """Smallest eigenvalue of symmetric ``m x m`` blocks (closed form for m <= 2)."""
    m = A.shape[1]
    if m == 1:
        return A[:, 0, 0]
    if m == 2:
        half = 0.5 * (A[:, 0, 0] + A[:, 1, 1])
        det = A[:, 0, 0] * A[:, 1, 1] - A[:, 0, 1] * A[:, 1, 0]
        return half - np.sqrt(np.maximum(half * half - det, 0.0))
    return np.linalg.eigvalsh(A)[:, 0]


def _small_solve(A, b):
    """Solve ``A x = b`` for stacked ``m x m`` systems (closed form for m <= 2)."""
    m = A.shape[1]
    if m == 1:
        return b / A[:, 0, :]
    if m == 2:
        det = A[:, 0, 0] * A[:, 1, 1] - A[:, 0, 1] * A[:, 1, 0]
        x0 = (A[:, 1, 1] * b[:, 0] - A[:, 0, 1] * b[:, 1]) / det
        x1 = (A[:, 0, 0] * b[:, 1] - A[:, 1, 0] * b[:, 0]) / det
        return np.stack([x0, x1], axis=1)
    return np.linalg.solve(A, b[..., None])[..., 0]


# ---------------------------------------------------------------------------
# projections


@dataclass
class Projection:
    """Closest points ``Pi(x)`` and signed distances for a batch of queries."""

    x: np.ndarray
    point: np.ndarray
    chart_id: np.ndarray
    theta: np.ndarray
    distance: np.ndarray
    normal: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray

    def reconstruction_error(self) -> np.ndarray:
        return np.linalg.norm(self.x - self.point - self.distance[:, None] * self.normal, axis=1)


@dataclass
class ReachEstimate:
    """Tube width ``a = min(rho0, pair bound)`` with the limiting witness."""

    width: float
    rho0: float
    pair_bound: float
    witness: dict = field(default_factory=dict)

    @property
    def curvature_limited(self) -> bool:
        return self.witness.get("kind") == "curvature"


class TubularNeighborhood:
    """Closest-point machinery for a reference surface.

    Parameters
    ----------
    surface : ReferenceSurface
    resolution : int
        Seed-cloud resolution per chart axis (k-d tree of owned samples).
    width : float, optional
        Known tube width; estimated by :meth:`reach` when omitted.
    """

    def __init__(self, surface: ReferenceSurface, resolution: Optional[int] = None,
                 width: Optional[float] = None):
        self.surface = surface
        if resolution is None:
            resolution = 256 if surface.dim == 2 else 48
        self.sampling = SurfaceSampling(surface, resolution, metric_route=False)
        ids, th = [], []
        for g in self.sampling.grids:
            ids.append(np.full(int(g.owned.sum()), g.chart_id))
            th.append(g.theta[g.owned])
        self.seed_chart = np.concatenate(ids)
        self.seed_theta = np.concatenate(th)
        self.seed_points = self.sampling.positions(owned_only=True)
        self.tree = cKDTree(self.seed_points)
        nn = self.tree.query(self.seed_points, k=2)[0][:, 1]
        self.seed_spacing = float(nn.max())
        self._width = width
        self._reach = None
        self._mesh = None

    # -- tube width -------------------------------------------------------

    def reach(self, resolution: Optional[int] = None, chunk: int = 256) -> ReachEstimate:
        """Tube width from the curvature bound and the pair criterion.

        For sample pairs ``p != q`` the quantity ``|q - p|^2 / (2 |(q - p).nu(p)|)``
        bounds the reach from above (its infimum over the surface is the reach);
        the result is the smaller of its sampled minimum and ``rho0``.
        """
        if self._reach is not None and resolution is None:
            return self._reach
        smp = self.sampling if resolution is None else SurfaceSampling(self.surface, resolution, metric_route=False)
        rho0 = min(admissible_bound(smp), self._refined_curvature_radius(smp))
        P = smp.positions(owned_only=True)
        Js = smp.jets(2)
        N = np.concatenate([J.nu[g.owned] for J, g in zip(Js, smp.grids)])
        best, pair = np.inf, None
        for s in range(0, len(P), chunk):
            D = P[None, :, :] - P[s:s + chunk, None, :]
            num = np.einsum("pqa,pqa->pq", D, D)
            den = 2 * np.abs(np.einsum("pqa,pa->pq", D, N[s:s + chunk]))
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(den > 1e-14 * np.maximum(num, 1e-300), num / den, np.inf)
            ratio[num == 0] = np.inf
            k = np.unravel_index(np.argmin(ratio), ratio.shape)
            if ratio[k] < best:
                best, pair = float(ratio[k]), (s + k[0], k[1])
        if best < rho0 * (1 - 1e-9):
            witness = {"kind": "pair", "p": P[pair[0]].tolist(), "q": P[pair[1]].tolist(), "value": best}
        else:
            kk = np.concatenate([np.max(np.abs(J.kappas[g.owned]), axis=1) for J, g in zip(Js, smp.grids)])
            i = int(np.argmax(kk))
            witness = {"kind": "curvature", "p": P[i].tolist(), "kappa": 1.0 / rho0, "value": rho0}
        est = ReachEstimate(float(min(rho0, best)), float(rho0), best, witness)
        if resolution is None:
            self._reach = est
        return est

    def _refined_curvature_radius(self, smp, candidates: int = 4) -> float:
        """Smallest curvature radius after local maximisation of ``max |kappa_i|`` from the worst samples."""
        rows = []
        for J, g in zip(smp.jets(2), smp.grids):
            kk = np.max(np.abs(J.kappas), axis=1)
            kk[~g.owned] = -1.0
            for i in np.argsort(kk)[::-1][:candidates]:
                rows.append((kk[i], g.chart_id, g.theta[i]))
        rows.sort(key=lambda r: -r[0])
        best = max(r[0] for r in rows)
        ch_all = self.surface.charts

        def negk(t, cid):
            ch = ch_all[cid]
            if ch.layout == "gauss" or (ch.layout == "box" and self.surface.transition is None):
                if np.any(t < np.array(ch.lower)) or np.any(t > np.array(ch.upper)):
                    return 0.0
            J = geometry_jet(self.surface, cid, t[None], order=2, metric_route=False)
            return -float(np.max(np.abs(J.kappas)))

        for k0, cid, th in rows[:candidates]:
            res = optimize.minimize(negk, th, args=(cid,), method="Nelder-Mead",
                                    options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 400})
            best = max(best, -float(res.fun))
        return 1.0 / best if best > 0 else np.inf

    @property
    def width(self) -> float:
        if self._width is None:
            self._width = self.reach().width
        return self._width

    @property
    def mesh(self) -> SurfaceMesh:
        if self._mesh is None:
            res = 512 if self.surface.dim == 2 else 64
            self._mesh = surface_mesh(self.surface, res)
        return self._mesh

    # -- Newton ----------------------------------------------------------

    def _normalise_params(self, c, th):
        s = self.surface
        for cid, ch in enumerate(s.charts):
            sel = c == cid
            if not np.any(sel):
                continue
            t = th[sel]
            if ch.layout == "box" and s.transition is not None:
                r = np.linalg.norm(t, axis=1)
                sw = r > STEREO_SWITCH
                if np.any(sw):
                    dst = s.other_chart(cid)
                    t[sw] = s.transition(cid, dst, t[sw])
                    cc = c[sel]
                    cc[sw] = dst
                    c[sel] = cc
            else:
                lo, hi = np.array(ch.lower), np.array(ch.upper)
                per = np.array(ch.periodic)
                t = np.where(per, lo + np.mod(t - lo, hi - lo), np.clip(t, lo, hi))
            th[sel] = t
        return c, th

    def project(self, x, check_tube: bool = True, seeds=None, tol: float = 1e-14,
                strict: bool = True) -> Projection:
        """Closest points by damped Newton on ``|phi(theta) - x|^2 / 2``.

        Seeds come from the nearest sample of the k-d tree unless ``seeds``
        ``(chart_id, theta)`` are given. Raises :class:`OutOfTubeError` when
        ``check_tube`` and some ``|d| >= a``. Non-converged points raise
        :class:`NumericalFailureError`, or get ``distance = nan`` when ``strict`` is false.
        """
        x = np.atleast_2d(np.asarray(x, float))
        if x.shape[1] != self.surface.dim:
            raise InvalidArgumentError("query points have the wrong dimension")
        if seeds is None:
            idx = self.tree.query(x)[1]
            c, th = self.seed_chart[idx].copy(), self.seed_theta[idx].copy()
        else:
            c, th = np.array(seeds[0], int).copy(), np.array(seeds[1], float).copy()
            redo = ~np.all(np.isfinite(th), axis=1)
            if np.any(redo):
                idx = self.tree.query(x[redo])[1]
                c[redo], th[redo] = self.seed_chart[idx], self.seed_theta[idx]
        N = len(x)
        active = np.ones(N, bool)
        iters = np.zeros(N, int)
        scale = np.maximum(1.0, np.linalg.norm(x, axis=1))
        charts = self.surface.charts
        for it in range(MAX_NEWTON):
            if not np.any(active):
                break
            for cid, ch in enumerate(charts):
                sel = np.flatnonzero(active & (c == cid))
                if len(sel) == 0:
                    continue
                t = th[sel]
                d = ch.evaluate(t, 2)
                r = d[0] - x[sel]
                tau, tau2 = d[1], d[2]
                g = (tau @ r[:, :, None])[:, :, 0]
                G = tau @ np.swapaxes(tau, 1, 2)
                Gg = _small_solve(G, g)
                tang = np.sqrt(np.maximum(np.sum(g * Gg, axis=1), 0.0))
                done = tang <= tol * scale[sel]
                iters[sel] = it
                active[sel[done]] = False
                keep = ~done
                if not np.any(keep):
                    continue
                sel, t, r, g, G = sel[keep], t[keep], r[keep], g[keep], G[keep]
                m = G.shape[1]
                H = G + (tau2[keep].reshape(len(sel), m * m, -1) @ r[:, :, None]).reshape(len(sel), m, m)
                ev = _small_min_eig(H)
                gmin = _small_min_eig(G)
                H = np.where((ev > 1e-3 * gmin)[:, None, None], H, G)
                step = -_small_solve(H, g)
                slen = np.linalg.norm(step, axis=1)
                step *= np.minimum(1.0, 0.5 / np.maximum(slen, 1e-300))[:, None]
                F0 = 0.5 * np.sum(r * r, axis=1)
                slope = np.sum(g * step, axis=1)
                alpha = np.ones(len(sel))
                # small steps are taken in full: the decrease would be below round-off
                pending = np.linalg.norm((step[:, None, :] @ tau[keep])[:, 0], axis=1) > 1e-6 * scale[sel]
                for _ in range(30):
                    if not np.any(pending):
                        break
                    trial = t + alpha[:, None] * step
                    if ch.layout != "box" or self.surface.transition is None:
                        lo, hi = np.array(ch.lower), np.array(ch.upper)
                        trial = np.where(np.array(ch.periodic), trial, np.clip(trial, lo, hi))
                    rr = ch.point(trial[pending]) - x[sel[pending]]
                    F1 = 0.5 * np.sum(rr * rr, axis=1)
                    ok = F1 <= F0[pending] + 1e-4 * alpha[pending] * slope[pending] + 1e-300
                    idx = np.flatnonzero(pending)
                    pending[idx[ok]] = False
                    if not np.any(pending):
                        break
                    alpha[pending] *= 0.5
                th[sel] = t + alpha[:, None] * step
            c, th = self._normalise_params(c, th)
        if strict and np.any(active):
            bad = np.flatnonzero(active)
            raise NumericalFailureError(
                f"closest-point Newton did not converge for {len(bad)} of {N} points",
                {"indices": bad[:20].tolist(), "points": x[bad[:5]].tolist(), "iterations": MAX_NEWTON})
        pts = np.zeros_like(x)
        nrm = np.zeros_like(x)
        for cid, ch in enumerate(charts):
            sel = c == cid
            if np.any(sel):
                d = ch.evaluate(th[sel], 1)
                pts[sel] = d[0]
                nv = normal_from_tangents(d[1]) * ch.orientation
                nrm[sel] = nv / np.linalg.norm(nv, axis=1, keepdims=True)
        dist = np.einsum("na,na->n", x - pts, nrm)
        dist[active] = np.nan
        proj = Projection(x, pts, c, th, dist, nrm, ~active, iters)
        if check_tube:
            out = ~(np.abs(dist) < self.width) & ~active
            if np.any(out):
                i = int(np.flatnonzero(out)[0])
                raise OutOfTubeError(f"point {x[i].tolist()} at distance {dist[i]:.4g} lies outside the tube "
                                     f"of width {self.width:.4g}")
        return proj

    def signed_distance(self, x, check_tube: bool = True) -> np.ndarray:
        return self.project(x, check_tube).distance

    def inside(self, x) -> np.ndarray:
        """Inside test by ray parity against the seam-free mesh."""
        return ray_parity_inside(self.mesh, x)

    def distance_derivatives(self, x, check_tube: bool = True) -> dict:
        """``grad d``, ``hess d``, ``grad Pi`` and ``lap d`` at query points (closed forms)."""
        pr = self.project(x, check_tube)
        n = self.surface.dim
        W = np.zeros((len(pr.x), n, n))
        for cid, ch in enumerate(self.surface.charts):
            sel = pr.chart_id == cid
            if np.any(sel):
                d = ch.evaluate(pr.theta[sel], 2)
                tau, tau2, nu = d[1], d[2], pr.normal[sel]
                m = tau.shape[1]
                L = (tau2.reshape(len(nu), m * m, n) @ nu[:, :, None]).reshape(len(nu), m, m)
                dual = np.linalg.solve(tau @ np.swapaxes(tau, 1, 2), tau)
                Wc = np.swapaxes(dual, 1, 2) @ L @ dual
                W[sel] = 0.5 * (Wc + np.swapaxes(Wc, 1, 2))
        d = pr.distance
        M0 = np.linalg.inv(np.eye(n)[None] - d[:, None, None] * W)
        hess = -W @ M0
        hess = 0.5 * (hess + np.swapaxes(hess, 1, 2))
        P = np.eye(n)[None] - pr.normal[:, :, None] * pr.normal[:, None, :]
        # lap d = -sum kappa_i / (1 - d kappa_i) = tr hess d
        lap = np.trace(hess, axis1=1, axis2=2)
        return {"projection": pr, "grad": pr.normal, "hess": hess,
                "grad_pi": P @ M0, "laplacian": lap}

    # -- level functions -----------------------------------------------

    def level_function(self, lower, upper, spacing: float, width: Optional[float] = None,
                       derivatives: bool = True) -> "LevelField":
        """Canonical level function on the box grid ``lower + spacing * index``.

        ``phi = d`` on ``|d| <= a/3`` and ``phi = sign d`` on ``|d| >= 2a/3``.
        Points away from the band are signed by connected components of the
        far region, each decided by ray parity at one representative point.
        """
        a = self.width if width is None else float(width)
        lower = np.asarray(lower, float)
        upper = np.asarray(upper, float)
        n = self.surface.dim
        if lower.shape != (n,) or upper.shape != (n,):
            raise InvalidArgumentError("box corners have the wrong dimension")
        pts = self.sampling.positions()
        need = 2 * a / 3 + spacing
        if np.any(pts.min(axis=0) - need < lower) or np.any(pts.max(axis=0) + need > upper):
            raise InvalidArgumentError("box must contain the surface with a margin of 2a/3 plus one cell")
        shape = tuple(int(np.floor((upper[i] - lower[i]) / spacing + 1e-9)) + 1 for i in range(n))
        axes = [lower[i] + spacing * np.arange(shape[i]) for i in range(n)]
        X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        band = 2 * a / 3
        near = self.tree.query(X, distance_upper_bound=band + 2 * self.seed_spacing)[0] < np.inf
        vals = np.zeros(len(X))
        grad = np.zeros((len(X), n)) if derivatives else None
        hess = np.zeros((len(X), n, n)) if derivatives else None
        known = np.zeros(len(X), bool)
        idx = np.flatnonzero(near)
        for s in range(0, len(idx), 200_000):
            sub = idx[s:s + 200_000]
            if derivatives:
                dd = self.distance_derivatives(X[sub], check_tube=False)
                d = dd["projection"].distance
            else:
                d = self.project(X[sub], check_tube=False).distance
            g, g1, g2 = level_profile(d, a)
            in_band = np.abs(d) < band
            vals[sub] = np.where(in_band, g, np.sign(d))
            if derivatives:
                grad[sub] = np.where(in_band[:, None], g1[:, None] * dd["grad"], 0.0)
                h = g2[:, None, None] * np.einsum("na,nb->nab", dd["grad"], dd["grad"]) + g1[:, None, None] * dd["hess"]
                hess[sub] = np.where(in_band[:, None, None], h, 0.0)
            known[sub] = True
        far = (~known).reshape(shape)
        labels, count = ndimage.label(far)
        if count:
            flat = labels.ravel()
            lab, reps = np.unique(flat, return_index=True)
            reps = reps[lab > 0]
            inside = self.inside(X[reps])
            signs = np.where(inside, -1.0, 1.0)
            vals[~known] = signs[flat[~known] - 1]
        return LevelField(lower, np.full(n, float(spacing)), shape, vals.reshape(shape),
                          None if grad is None else grad.reshape(shape + (n,)),
                          None if hess is None else hess.reshape(shape + (n, n)), a)


# ---------------------------------------------------------------------------
# level fields


@dataclass
class LevelField:
    """Scalar function on an axis-aligned grid, optionally with gradient and Hessian grids."""

    lower: np.ndarray
    spacing: np.ndarray
    shape: tuple
    values: np.ndarray
    grad: Optional[np.ndarray] = None
    hess: Optional[np.ndarray] = None
    width: float = float("nan")
    interp_points: int = 4

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def upper(self) -> np.ndarray:
        return self.lower + self.spacing * (np.array(self.shape) - 1)

    def axes(self) -> list:
        return [self.lower[i] + self.spacing[i] * np.arange(self.shape[i]) for i in range(self.dim)]

    def points(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1).reshape(-1, self.dim)

    def evaluate(self, x, deriv: int = 0, npts: Optional[int] = None) -> np.ndarray:
        """Piecewise-polynomial (Lagrange, ``npts`` per axis; cubic by default) interpolation."""
        npts = self.interp_points if npts is None else npts
        x = np.atleast_2d(np.asarray(x, float))
        src = {0: self.values, 1: self.grad, 2: self.hess}[deriv]
        if src is None:
            raise InvalidArgumentError(f"derivative grid of order {deriv} not stored")
        return interpolate_uniform(src, self.lower, self.spacing, x, npts)

    def zero_crossings(self) -> np.ndarray:
        """Linear-interpolated zero crossings along grid edges."""
        out = []
        v = self.values
        for ax in range(self.dim):
            a = np.take(v, np.arange(self.shape[ax] - 1), axis=ax)
            b = np.take(v, np.arange(1, self.shape[ax]), axis=ax)
            hit = np.sign(a) * np.sign(b) < 0
            if not np.any(hit):
                continue
            idx = np.argwhere(hit).astype(float)
            t = a[hit] / (a[hit] - b[hit])
            idx[:, ax] += t
            out.append(self.lower + idx * self.spacing)
        return np.concatenate(out) if out else np.zeros((0, self.dim))

    def header(self) -> dict:
        return {"format": "artifact-levelfield", "version": 1, "dtype": "<f8", "order": "C",
                "byte_order": "little", "lower": [float(v) for v in self.lower],
                "spacing": [float(v) for v in self.spacing], "shape": list(self.shape),
                "width": None if not np.isfinite(self.width) else float(self.width)}

    def save(self, path) -> tuple:
        """Write ``path`` (raw little-endian doubles) and ``path.json`` (header)."""
        path = Path(path)
        np.ascontiguousarray(self.values, dtype="<f8").tofile(path)
        hdr = path.with_name(path.name + ".json")
        hdr.write_text(json.dumps(self.header(), indent=2))
        return path, hdr

    @classmethod
    def load(cls, path) -> "LevelField":
        path = Path(path)
        hdr = json.loads(path.with_name(path.name + ".json").read_text())
        if hdr.get("format") != "artifact-levelfield":
            raise InvalidArgumentError("not a level-field header")
        shape = tuple(hdr["shape"])
        vals = np.fromfile(path, dtype="<f8")
        if vals.size != int(np.prod(shape)):
            raise InvalidArgumentError("binary size does not match the header")
        width = hdr.get("width")
        return cls(np.array(hdr["lower"]), np.array(hdr["spacing"]), shape, vals.reshape(shape),
                   width=float("nan") if width is None else width)


# ---------------------------------------------------------------------------
# module-level conveniences


def tubular_width(surface: ReferenceSurface, resolution: Optional[int] = None) -> float:
    return TubularNeighborhood(surface, resolution).width


def closest_point(surface: ReferenceSurface, x, tube: Optional[TubularNeighborhood] = None) -> Projection:
    tube = TubularNeighborhood(surface) if tube is None else tube
    return tube.project(x)


def distance_derivatives(surface: ReferenceSurface, x, tube: Optional[TubularNeighborhood] = None) -> dict:
    tube = TubularNeighborhood(surface) if tube is None else tube
    return tube.distance_derivatives(x)


def level_function(surface: ReferenceSurface, lower, upper, spacing: float,
                   tube: Optional[TubularNeighborhood] = None, **kw) -> LevelField:
    tube = TubularNeighborhood(surface) if tube is None else tube
    return tube.level_function(lower, upper, spacing, **kw)


# ---------------------------------------------------------------------------
# normal parameterization


def normal_roots(reference: SurfaceSampling, target_distance, width: float, scan: int = 24,
                 tol: float = 1e-14, max_iter: int = 60):
    """Per-sample roots ``r`` of ``target_distance(p + r nu(p)) = 0`` on ``(-width, width)``.

    ``target_distance(points, seeds) -> (values, derivative along nu-line data, new seeds)`` is
    supplied by the caller. Exactly one sign change must occur along every scanned line;
    nan values (no reliable distance) never count as a crossing.

    Returns per-chart root arrays and the worst residual.
    """
    out, worst = [], 0.0
    Js = reference.jets(2)
    for c, J in enumerate(Js):
        P, V = J.p, J.nu
        rs = np.linspace(-width, width, scan + 1)[1:-1] * 0.999
        cols, seeds = [], None
        for r in rs:
            # neighbouring scan points have nearby projections: warm start
            f, _, seeds = target_distance(P + r * V, seeds)
            cols.append(f)
        F = np.stack(cols, axis=1)
        s = np.sign(F)
        changes = (s[:, :-1] * s[:, 1:] < 0) | ((s[:, :-1] == 0) & (np.arange(len(rs) - 1) > 0))
        nchg = changes.sum(axis=1)
        exact = np.any(F == 0, axis=1)
        bad = (nchg != 1) & ~(exact & (nchg == 0))
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            kind = "no" if nchg[i] == 0 else "several"
            raise NotAGraphError(f"{kind} crossing of the target along the normal line at {P[i].tolist()}",
                                 point=P[i])
        k = np.argmax(changes, axis=1)
        lo, hi = rs[k].copy(), rs[k + 1].copy()
        flo = F[np.arange(len(P)), k]
        r = 0.5 * (lo + hi)
        for z in np.flatnonzero(exact & (nchg == 0)):
            r[z] = rs[np.flatnonzero(F[z] == 0)[0]]
            lo[z] = hi[z] = r[z]
        seeds = None
        for _ in range(max_iter):
            f, slope, seeds = target_distance(P + r[:, None] * V, seeds, V)
            same = np.sign(f) == np.sign(flo)
            lo = np.where(same, r, lo)
            flo = np.where(same, f, flo)
            hi = np.where(same, hi, r)
            with np.errstate(divide="ignore", invalid="ignore"):
                newton = r - f / slope
            ok = (newton >= np.minimum(lo, hi)) & (newton <= np.maximum(lo, hi)) & np.isfinite(newton)
            r_new = np.where(ok, newton, 0.5 * (lo + hi))
            # converged samples stay put so round-off in f cannot push them off the root
            done = np.abs(f) <= tol
            r_new = np.where(done, r, r_new)
            if np.all(done):
                break
            r = r_new
        f = target_distance(P + r[:, None] * V, seeds, V)[0]
        worst = max(worst, float(np.max(np.abs(f))))
        out.append(r)
    return out, worst


def parameterize_over(reference, target: ReferenceSurface, resolution: int = 64,
                      target_tube: Optional[TubularNeighborhood] = None,
                      reference_tube: Optional[TubularNeighborhood] = None,
                      scan: int = 24, stencil_order: Optional[int] = None,
                      closeness: bool = True) -> HeightFunction:
    """Normal parameterization ``rho`` of ``target`` over ``reference``.

    For every reference sample the unique ``r`` in ``(-a, a)`` with
    ``p + r nu(p)`` on the target is found by a sign-change scan of the target's
    signed distance followed by safeguarded Newton iteration.

    Returns a :class:`HeightFunction` whose ``diagnostics`` record the worst
    residual, the tube width and the measured closeness of the normal bundles.
    """
    smp = reference if isinstance(reference, SurfaceSampling) else SurfaceSampling(reference, resolution, metric_route=False)
    ref_surface = smp.surface
    ttube = TubularNeighborhood(target) if target_tube is None else target_tube
    rtube = TubularNeighborhood(ref_surface) if reference_tube is None else reference_tube
    a = rtube.width

    def tdist(x, seeds=None, line=None):
        # deep scan points may sit where projection onto the target is ill posed (nan)
        pr = ttube.project(x, check_tube=False, seeds=seeds, strict=line is not None)
        slope = None if line is None else np.einsum("na,na->n", pr.normal, line)
        th = pr.theta.copy()
        th[~pr.converged] = np.nan
        return pr.distance, slope, (pr.chart_id, th)

    roots, worst = normal_roots(smp, tdist, a, scan)
    order = stencil_order or (smp.max_stencil_order() or 4)
    field = SurfaceField.from_values(smp, roots, stencil_order=min(order, 8), sync=False)
    height = HeightFunction(field, admissible_bound(smp))
    height.diagnostics = {"residual": worst, "width": a}
    if not closeness:
        return height
    # closeness of normal bundles measured from the target side
    tq = ttube.seed_points
    pr = rtube.project(tq, check_tube=False)
    tn = np.concatenate([J.nu[g.owned] for J, g in zip(ttube.sampling.jets(2), ttube.sampling.grids)])
    close = float(np.max(np.abs(pr.distance) + np.linalg.norm(tn - pr.normal, axis=1)))
    lip = 1.0 / height.rho0 if np.isfinite(height.rho0) else 0.0
    height.diagnostics = {"residual": worst, "width": a, "closeness": close, "lipschitz": lip,
                          "closeness_bound": 2 * (1 + lip) * close}
    return height
