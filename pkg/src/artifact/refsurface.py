"""Reference hypersurfaces as chart atlases with exact derivative oracles.

Built-in surfaces:

* spheres and ellipsoids in R^3: two stereographic charts (projection from
  either pole) blended by a smooth partition of unity;
* circles and ellipses in R^2: one periodic angle chart;
* tori in R^3: one doubly periodic chart;
* graphs over ``[-1, 1]^(n-1)``: one chart sampled at Gauss-Legendre nodes;
* a dumbbell-shaped closed curve in R^2 (reach smaller than the curvature bound).

Chart evaluators return ``[phi, d1, d2, d3]`` with shapes ``(N, n)``,
``(N, m, n)``, ``(N, m, m, n)`` and ``(N, m, m, m, n)`` where ``m = n - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateChartError, InvalidArgumentError
from .stencils import apply_plan, interpolation_plan

# stereographic atlas layout
STEREO_HALFWIDTH = 1.6
STEREO_BAND = 0.3  # partition of unity blends over |ln|theta|| < band
INTERP_POINTS = 6


@dataclass(frozen=True)
class Chart:
    """A single chart ``theta -> phi(theta)`` with derivatives up to ``max_order``."""

    dim: int
    lower: tuple
    upper: tuple
    periodic: tuple
    evaluator: Callable
    orientation: int = 1
    max_order: int = 3
    layout: str = "periodic"  # periodic | box | gauss
    name: str = ""

    @property
    def m(self) -> int:
        return self.dim - 1

    def evaluate(self, theta, order: int = 2) -> list:
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        if order > self.max_order:
            raise InvalidArgumentError(f"chart {self.name!r} supplies derivatives up to order {self.max_order}")
        return self.evaluator(theta, order)

    def point(self, theta) -> np.ndarray:
        return self.evaluate(theta, 0)[0]


@dataclass(frozen=True)
class ReferenceSurface:
    """Chart atlas of a connected, oriented hypersurface.

    ``owner(c, theta)`` marks the samples whose derived quantities are taken
    from chart ``c``; ``partition(c, theta)`` returns partition-of-unity weights;
    ``transition(src, dst, theta)`` maps parameters between overlapping charts;
    ``locate(points)`` inverts the atlas for points on the surface.
    """

    charts: tuple
    kind: str
    params: dict = field(default_factory=dict)
    closed: bool = True
    owner: Optional[Callable] = None
    partition: Optional[Callable] = None
    transition: Optional[Callable] = None
    other_chart: Optional[Callable] = None
    locate: Optional[Callable] = None
    curvature_oracle: Optional[Callable] = None
    center: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return self.charts[0].dim

    def owned(self, chart_id: int, theta) -> np.ndarray:
        theta = np.atleast_2d(theta)
        if self.owner is None:
            return np.ones(theta.shape[0], dtype=bool)
        return self.owner(chart_id, theta)

    def weights(self, chart_id: int, theta) -> np.ndarray:
        theta = np.atleast_2d(theta)
        if self.partition is None:
            return np.ones(theta.shape[0])
        return self.partition(chart_id, theta)

    def normal(self, chart_id: int, theta) -> np.ndarray:
        """Unit outer normal from the chart tangents."""
        chart = self.charts[chart_id]
        tau = chart.evaluate(theta, 1)[1]
        n = normal_from_tangents(tau) * chart.orientation
        return n / np.linalg.norm(n, axis=-1, keepdims=True)


@dataclass(frozen=True)
class SamplePoint:
    chart_id: int
    theta: np.ndarray
    weight: float


def normal_from_tangents(tau: np.ndarray) -> np.ndarray:
    """Unnormalised normal ``tau_1 x tau_2`` (n = 3) or the rotated tangent (n = 2)."""
    n = tau.shape[-1]
    if n == 3:
        return np.cross(tau[..., 0, :], tau[..., 1, :])
    if n == 2:
        t = tau[..., 0, :]
        return np.stack([t[..., 1], -t[..., 0]], axis=-1)
    raise InvalidArgumentError("normals implemented for n in {2, 3}")


def _orientation(evaluator, theta0, outward) -> int:
    tau = evaluator(np.atleast_2d(theta0), 1)[1]
    return 1 if float(normal_from_tangents(tau)[0] @ np.asarray(outward, float)) > 0 else -1


def _affine_jets(jets, A, c):
    out = [jets[0] @ A.T + c]
    out.extend(d @ A.T for d in jets[1:])
    return out


# ---------------------------------------------------------------------------
# smooth cutoffs used by the sphere partition of unity


def _exp_ramp(x):
    out = np.zeros_like(x, dtype=float)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def smooth_step(t, band):
    """C-infinity step, 1 for ``t <= -band`` and 0 for ``t >= band``.

    Satisfies ``smooth_step(t) + smooth_step(-t) == 1``.
    """
    a, b = _exp_ramp(band - t), _exp_ramp(band + t)
    return a / (a + b)


# ---------------------------------------------------------------------------
# stereographic charts


def _stereo_unit(u, order, sign):
    """Inverse stereographic map onto the unit sphere S^m in R^(m+1).

    ``sign = +1`` projects from the north pole (chart centre at the south pole).
    """
    N, m = u.shape
    r2 = np.sum(u * u, axis=1)
    f = 1.0 / (1.0 + r2)
    eye = np.eye(m)
    out = [np.concatenate([2 * u * f[:, None], (sign * (1 - 2 * f))[:, None]], axis=1)]
    if order == 0:
        return out
    df = -2 * u * f[:, None] ** 2
    dg = eye[None] * f[:, None, None] + u[:, None, :] * df[:, :, None]  # [n, i, a]
    d1 = np.concatenate([2 * dg, (-2 * sign * df)[:, :, None]], axis=2)
    out.append(d1)
    if order == 1:
        return out
    d2f = -2 * eye[None] * (f**2)[:, None, None] + 8 * np.einsum("ni,nj->nij", u, u) * (f**3)[:, None, None]
    d2g = (np.einsum("ai,nj->nija", eye, df) + np.einsum("aj,ni->nija", eye, df)
           + np.einsum("na,nij->nija", u, d2f))
    out.append(np.concatenate([2 * d2g, (-2 * sign * d2f)[..., None]], axis=3))
    if order == 2:
        return out
    f3, f4 = f**3, f**4
    d3f = 8 * (np.einsum("ij,nk->nijk", eye, u) + np.einsum("ik,nj->nijk", eye, u)
               + np.einsum("jk,ni->nijk", eye, u)) * f3[:, None, None, None]
    d3f -= 48 * np.einsum("ni,nj,nk->nijk", u, u, u) * f4[:, None, None, None]
    d3g = (np.einsum("ai,njk->nijka", eye, d2f) + np.einsum("aj,nik->nijka", eye, d2f)
           + np.einsum("ak,nij->nijka", eye, d2f) + np.einsum("na,nijk->nijka", u, d3f))
    out.append(np.concatenate([2 * d3g, (-2 * sign * d3f)[..., None]], axis=4))
    return out


def _angle_unit(t, order):
    t = t[:, 0]
    c, s = np.cos(t), np.sin(t)
    seq = [np.stack([c, s], 1), np.stack([-s, c], 1), np.stack([-c, -s], 1), np.stack([s, -c], 1)]
    out = [seq[0]]
    for k in range(1, order + 1):
        out.append(seq[k].reshape((-1,) + (1,) * k + (2,)))
    return out


def _ellipsoidal_surface(A, center, n, kind, params, curvature_oracle=None) -> ReferenceSurface:
    A = np.asarray(A, float)
    center = np.asarray(center, float)
    Ainv = np.linalg.inv(A)
    if n == 2:
        ev = lambda th, order: _affine_jets(_angle_unit(th, order), A, center)
        orient = _orientation(ev, [0.0], Ainv.T @ np.array([1.0, 0.0]))
        chart = Chart(2, (0.0,), (2 * np.pi,), (True,), ev, orient, 3, "periodic", "angle")

        def locate(points):
            u = (np.atleast_2d(points) - center) @ Ainv.T
            return np.zeros(len(u), dtype=int), np.mod(np.arctan2(u[:, 1], u[:, 0]), 2 * np.pi)[:, None]

        return ReferenceSurface((chart,), kind, params, True, locate=locate,
                                curvature_oracle=curvature_oracle, center=center)
    if n != 3:
        raise InvalidArgumentError("n must be 2 or 3")
    b = STEREO_HALFWIDTH
    charts = []
    for cid, sign in enumerate((1.0, -1.0)):
        ev = (lambda s: lambda th, order: _affine_jets(_stereo_unit(th, order, s), A, center))(sign)
        pole = np.array([0.0, 0.0, -sign])
        orient = _orientation(ev, [0.0, 0.0], Ainv.T @ pole)
        charts.append(Chart(3, (-b, -b), (b, b), (False, False), ev, orient, 3, "box",
                            "stereo-south" if cid == 0 else "stereo-north"))

    def owner(cid, th):
        r = np.linalg.norm(th, axis=1)
        return r <= 1.0 if cid == 0 else r < 1.0

    def partition(cid, th):
        r = np.linalg.norm(th, axis=1)
        with np.errstate(divide="ignore"):
            return smooth_step(np.log(r), STEREO_BAND)

    def transition(src, dst, th):
        if src == dst:
            return th
        return th / np.sum(th * th, axis=1, keepdims=True)

    def locate(points):
        u = (np.atleast_2d(points) - center) @ Ainv.T
        south = u[:, 2] <= 0
        theta = np.where(south[:, None], u[:, :2] / (1 - u[:, 2:3]), u[:, :2] / (1 + u[:, 2:3]))
        return np.where(south, 0, 1), theta

    return ReferenceSurface(tuple(charts), kind, params, True, owner, partition, transition,
                            lambda cid: 1 - cid, locate, curvature_oracle, center)


def make_sphere(radius: float = 1.0, center=None, n: int = 3) -> ReferenceSurface:
    """Sphere of the given radius with outer normal ``(p - center)/radius``."""
    if radius <= 0:
        raise InvalidArgumentError("radius must be positive")
    center = np.zeros(n) if center is None else np.asarray(center, float)
    if center.shape != (n,):
        raise InvalidArgumentError("center has the wrong dimension")

    def oracle(points):
        k = np.full(len(np.atleast_2d(points)), -1.0 / radius)
        return {"kappa": (n - 1) * k, "kappas": np.repeat(k[:, None], n - 1, axis=1)}

    params = {"radius": radius, "center": center.tolist(), "n": n}
    return _ellipsoidal_surface(radius * np.eye(n), center, n, "sphere", params, oracle)


def make_ellipsoid(axes, center=None) -> ReferenceSurface:
    """Axis-aligned ellipsoid (n = 3) or ellipse (n = 2) with semi-axes ``axes``."""
    axes = np.asarray(axes, float)
    n = len(axes)
    if np.any(axes <= 0):
        raise InvalidArgumentError("semi-axes must be positive")
    center = np.zeros(n) if center is None else np.asarray(center, float)

    def oracle(points):
        # level set F = sum (x_i/a_i)^2; mean curvature = -div(grad F / |grad F|)
        x = np.atleast_2d(points) - center
        g = 2 * x / axes**2
        hd = 2 / axes**2
        ng = np.linalg.norm(g, axis=1)
        lap = np.sum(hd)
        ghg = np.sum(g * g * hd, axis=1)
        return {"kappa": -(lap / ng - ghg / ng**3)}

    params = {"axes": axes.tolist(), "center": center.tolist(), "n": n}
    return _ellipsoidal_surface(np.diag(axes), center, n, "ellipsoid", params, oracle)


def make_torus(R_major: float = 2.0, r_minor: float = 1.0, center=None) -> ReferenceSurface:
    """Torus of revolution about the z axis, chart ``(u, v)`` on ``[0, 2 pi)^2``."""
    if not (R_major > r_minor > 0):
        raise InvalidArgumentError("need R_major > r_minor > 0")
    R, r = float(R_major), float(r_minor)
    center = np.zeros(3) if center is None else np.asarray(center, float)

    def ev(th, order):
        u, v = th[:, 0], th[:, 1]
        N = len(u)
        # derivatives of cos/sin: d^k cos = cos(t + k pi/2)
        cu = lambda k: np.cos(u + k * np.pi / 2)
        su = lambda k: np.sin(u + k * np.pi / 2)
        cv = lambda k: np.cos(v + k * np.pi / 2)
        sv = lambda k: np.sin(v + k * np.pi / 2)

        def comp(ku, kv):
            w = (R if kv == 0 else 0.0) + r * cv(kv)
            x = w * cu(ku)
            y = w * su(ku)
            z = r * sv(kv) if ku == 0 else np.zeros(N)
            return np.stack([x, y, z], axis=1)

        out = [comp(0, 0) + center]
        for k in range(1, order + 1):
            arr = np.zeros((N,) + (2,) * k + (3,))
            for idx in np.ndindex(*([2] * k)):
                arr[(slice(None),) + idx] = comp(idx.count(0), idx.count(1))
            out.append(arr)
        return out

    chart = Chart(3, (0.0, 0.0), (2 * np.pi, 2 * np.pi), (True, True), ev,
                  _orientation(ev, [0.0, 0.0], [1.0, 0.0, 0.0]), 3, "periodic", "torus")

    def locate(points):
        x = np.atleast_2d(points) - center
        u = np.mod(np.arctan2(x[:, 1], x[:, 0]), 2 * np.pi)
        v = np.mod(np.arctan2(x[:, 2], np.hypot(x[:, 0], x[:, 1]) - R), 2 * np.pi)
        return np.zeros(len(x), dtype=int), np.stack([u, v], axis=1)

    def oracle(points):
        x = np.atleast_2d(points) - center
        cosv = (np.hypot(x[:, 0], x[:, 1]) - R) / r
        k1 = np.full(len(x), -1.0 / r)
        k2 = -cosv / (R + r * cosv)
        return {"kappa": k1 + k2, "kappas": np.sort(np.stack([k1, k2], 1), axis=1)}

    return ReferenceSurface((chart,), "torus", {"R_major": R, "r_minor": r, "center": center.tolist()},
                            True, locate=locate, curvature_oracle=oracle, center=center)


def make_graph_surface(h, lower=-1.0, upper=1.0) -> ReferenceSurface:
    """Graph ``x -> (x, h(x))`` over the box ``[lower, upper]^(n-1)``.

    ``h`` is an ambient function of ``n - 1`` variables (see :mod:`artifact.ambient`).
    The normal points upward, ``nu = beta (-grad h, 1)``.
    """
    m = h.dim
    n = m + 1

    def ev(th, order):
        d = h.derivatives(th, order)
        N = th.shape[0]
        out = [np.concatenate([th, d[0][:, None]], axis=1)]
        if order >= 1:
            out.append(np.concatenate([np.broadcast_to(np.eye(m), (N, m, m)), d[1][:, :, None]], axis=2))
        for k in range(2, order + 1):
            zeros = np.zeros(d[k].shape + (m,))
            out.append(np.concatenate([zeros, d[k][..., None]], axis=-1))
        return out

    theta0 = np.full(m, 0.5 * (lower + upper))
    grad0 = h.derivatives(theta0[None], 1)[1][0]
    orient = _orientation(ev, theta0, np.concatenate([-grad0, [1.0]]))
    chart = Chart(n, (lower,) * m, (upper,) * m, (False,) * m, ev, orient, 3, "gauss", "graph")
    return ReferenceSurface((chart,), "graph", {"h": h, "lower": lower, "upper": upper}, False)


def make_dumbbell(a: float = 2.0, b: float = 1.0, c: float = 0.7) -> ReferenceSurface:
    """Closed curve ``(a cos t, b sin t (1 + c cos 2t))`` with a narrow waist.

    For ``c`` close to one the waist is much narrower than the curvature radius
    there, so the reach is limited by the global self-distance.
    """
    if not (a > 0 and b > 0 and 0 <= c < 1):
        raise InvalidArgumentError("need a, b > 0 and 0 <= c < 1")
    # y = b[(1 - c/2) sin t + (c/2) sin 3t]
    coeffs = [(1, b * (1 - c / 2)), (3, b * c / 2)]

    def ev(th, order):
        t = th[:, 0]
        out = []
        for k in range(order + 1):
            x = a * np.cos(t + k * np.pi / 2)
            y = sum(w * f**k * np.sin(f * t + k * np.pi / 2) for f, w in coeffs)
            out.append(np.stack([x, y], 1).reshape((-1,) + (1,) * k + (2,)))
        return out

    chart = Chart(2, (0.0,), (2 * np.pi,), (True,), ev, _orientation(ev, [0.0], [1.0, 0.0]), 3,
                  "periodic", "dumbbell")
    return ReferenceSurface((chart,), "dumbbell", {"a": a, "b": b, "c": c}, True, center=np.zeros(2))


# ---------------------------------------------------------------------------
# sampling


@dataclass
class ChartGrid:
    """Structured sample layout on one chart."""

    chart_id: int
    theta: np.ndarray
    shape: tuple
    lower: np.ndarray
    spacing: np.ndarray
    layout: str
    dtheta: np.ndarray
    pou: np.ndarray
    owned: np.ndarray


def _axis_nodes(lo, hi, res, layout):
    if layout == "periodic":
        h = (hi - lo) / res
        return lo + h * np.arange(res), np.full(res, h), h
    if layout == "box":
        x = np.linspace(lo, hi, res)
        h = x[1] - x[0]
        w = np.full(res, h)
        w[[0, -1]] *= 0.5
        return x, w, h
    if layout == "gauss":
        x, w = np.polynomial.legendre.leggauss(res)
        return 0.5 * (hi - lo) * x + 0.5 * (hi + lo), 0.5 * (hi - lo) * w, np.nan
    raise InvalidArgumentError(f"unknown layout {layout}")


class SurfaceSampling:
    """Sample grids on every chart, with cached geometry jets.

    Parameters
    ----------
    surface : ReferenceSurface
    resolution : int
        Points per chart axis (at least 8).
    metric_route : bool
        Whether cached jets also carry Christoffel symbols from differenced metrics.
    """

    def __init__(self, surface: ReferenceSurface, resolution: int = 64, metric_route: bool = True):
        if resolution < 8:
            raise InvalidArgumentError("resolution must be at least 8 per axis")
        self.surface = surface
        self.resolution = int(resolution)
        self.metric_route = metric_route
        self.grids: list[ChartGrid] = []
        for cid, chart in enumerate(surface.charts):
            axes = [_axis_nodes(chart.lower[a], chart.upper[a], resolution, chart.layout)
                    for a in range(chart.m)]
            mesh = np.meshgrid(*[ax[0] for ax in axes], indexing="ij")
            wmesh = np.meshgrid(*[ax[1] for ax in axes], indexing="ij")
            theta = np.stack([g.ravel() for g in mesh], axis=1)
            dtheta = np.prod(np.stack([g.ravel() for g in wmesh], axis=1), axis=1)
            self.grids.append(ChartGrid(
                cid, theta, tuple(len(ax[0]) for ax in axes), np.array(chart.lower, float),
                np.array([ax[2] for ax in axes]), chart.layout, dtheta,
                surface.weights(cid, theta), surface.owned(cid, theta)))
        self._jets = {}

    @property
    def n_charts(self) -> int:
        return len(self.grids)

    def jets(self, order: int = 3):
        """Geometry jets per chart (cached)."""
        from .fundforms import geometry_jet

        order = min(order, min(c.max_order for c in self.surface.charts))
        if order not in self._jets:
            self._jets[order] = [geometry_jet(self.surface, g.chart_id, g.theta, order=order,
                                              metric_route=self.metric_route)
                                 for g in self.grids]
        return self._jets[order]

    def quadrature_weights(self) -> list[np.ndarray]:
        """Area weights ``sqrt(g) dtheta`` times the partition of unity."""
        out = []
        for g, chart in zip(self.grids, self.surface.charts):
            tau = chart.evaluate(g.theta, 1)[1]
            G = np.einsum("nia,nja->nij", tau, tau)
            out.append(np.sqrt(np.linalg.det(G)) * g.dtheta * g.pou)
        return out

    def points(self) -> list[SamplePoint]:
        out = []
        for g, w in zip(self.grids, self.quadrature_weights()):
            keep = w > 0
            out.extend(SamplePoint(g.chart_id, th, float(wi)) for th, wi in zip(g.theta[keep], w[keep]))
        return out

    def positions(self, owned_only: bool = False) -> np.ndarray:
        pts = []
        for g, chart in zip(self.grids, self.surface.charts):
            p = chart.point(g.theta)
            pts.append(p[g.owned] if owned_only else p)
        return np.concatenate(pts)

    def supports_differencing(self) -> bool:
        return all(g.layout != "gauss" for g in self.grids)

    def sync(self, values: list) -> list:
        """Refill samples not owned by their chart from the owning chart."""
        s = self.surface
        if s.other_chart is None:
            return values
        if getattr(self, "_sync_plans", None) is None:
            plans = []
            for g in self.grids:
                bad = np.flatnonzero(~g.owned)
                if not len(bad):
                    continue
                src = s.other_chart(g.chart_id)
                th = s.transition(g.chart_id, src, g.theta[bad])
                sg = self.grids[src]
                plans.append((g.chart_id, bad, src,
                              interpolation_plan(sg.shape, sg.lower, sg.spacing, th, INTERP_POINTS)))
            self._sync_plans = plans
        new = [np.array(v, dtype=float, copy=True) for v in values]
        for cid, bad, src, plan in self._sync_plans:
            new[cid][bad] = apply_plan(np.asarray(values[src], dtype=float), plan)
        return new

    def max_stencil_order(self) -> int:
        """Largest even FD order whose stencils stay valid through one sync."""
        best = 0
        for g in self.grids:
            if g.layout == "gauss":
                return 0
            if g.layout == "periodic":
                continue
            h = float(np.max(g.spacing))
            reach = 1.0 + (INTERP_POINTS // 2) * h
            for order in (8, 6, 4, 2):
                if reach + (order // 2) * h < STEREO_HALFWIDTH - 1e-12:
                    best = order if best == 0 else min(best, order)
                    break
            else:
                return 0
        return best or 8


def sample(surface: ReferenceSurface, resolution: int = 64) -> list[SamplePoint]:
    """Quadrature sample points with area weights ``sqrt(g) dtheta`` (times partition of unity)."""
    return SurfaceSampling(surface, resolution).points()


def check_immersion(surface: ReferenceSurface, resolution: int = 32, tol: float = 1e-12) -> float:
    """Smallest singular value of the chart Jacobian over a sample grid.

    Raises :class:`DegenerateChartError` if it falls below ``tol``.
    """
    smin = np.inf
    for g, chart in zip(SurfaceSampling(surface, resolution).grids, surface.charts):
        tau = chart.evaluate(g.theta, 1)[1]
        smin = min(smin, float(np.min(np.linalg.svd(tau, compute_uv=False))))
    if smin <= tol:
        raise DegenerateChartError(f"chart Jacobian singular (smallest singular value {smin:.3e})")
    return smin


def surface_from_config(cfg: dict) -> ReferenceSurface:
    """Build a surface from a config dict ``{"kind": ..., parameters}``."""
    from .ambient import Polynomial

    kind = cfg.get("kind")
    if kind == "sphere":
        return make_sphere(cfg.get("radius", 1.0), cfg.get("center"), cfg.get("n", 3))
    if kind == "ellipsoid":
        return make_ellipsoid(cfg["axes"], cfg.get("center"))
    if kind == "torus":
        return make_torus(cfg.get("R_major", 2.0), cfg.get("r_minor", 1.0), cfg.get("center"))
    if kind == "dumbbell":
        return make_dumbbell(cfg.get("a", 2.0), cfg.get("b", 1.0), cfg.get("c", 0.7))
    if kind == "graph":
        terms = {tuple(int(e) for e in t["exponents"]): float(t["coefficient"]) for t in cfg["terms"]}
        m = len(next(iter(terms))) if terms else cfg.get("n", 3) - 1
        return make_graph_surface(Polynomial(terms, m), cfg.get("lower", -1.0), cfg.get("upper", 1.0))
    raise InvalidArgumentError(f"unknown surface kind {kind!r}")
