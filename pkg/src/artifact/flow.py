"""Geometric flows of normal graphs over a fixed reference surface.

A surface ``Gamma_rho`` moving with normal velocity ``V`` (along its outer
normal) changes its height by ``d rho / dt = V / beta``. The laws provided are
mean curvature flow ``V = kappa(rho)`` and its scaled variant ``V = c kappa(rho)``.
Time stepping is classical RK4 with a parabolic step-size bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import FlowBlowupError, InvalidArgumentError
from .normalgraph import ADMISSIBLE_MARGIN, admissible_bound, graph_geometry_kernel
from .refsurface import SurfaceSampling
from .surfcalc import integrate, jet_of_samples

DEFAULT_CFL = 0.4


@dataclass(frozen=True)
class FlowLaw:
    """Normal velocity ``V = coefficient * kappa(rho)``."""

    name: str = "mcf"
    coefficient: float = 1.0

    @classmethod
    def parse(cls, spec) -> "FlowLaw":
        if isinstance(spec, FlowLaw):
            return spec
        if isinstance(spec, str):
            spec = {"name": spec}
        name = spec.get("name", "mcf")
        if name == "mcf":
            return cls("mcf", 1.0)
        if name == "scaled":
            return cls("scaled", float(spec.get("c", spec.get("coefficient", 1.0))))
        raise InvalidArgumentError(f"unknown flow law {name!r}")


@dataclass(frozen=True)
class FlowState:
    """Immutable snapshot: time, step count and per-chart height samples."""

    t: float
    rho: tuple
    sampling: SurfaceSampling = field(repr=False, compare=False)
    steps: int = 0

    @classmethod
    def initial(cls, sampling: SurfaceSampling, rho=None) -> "FlowState":
        """From per-chart arrays, an ambient function, a constant, or zero."""
        if not sampling.supports_differencing():
            raise InvalidArgumentError("flows need a sampling that supports grid differencing")
        if rho is None:
            vals = [np.zeros(len(g.theta)) for g in sampling.grids]
        elif np.isscalar(rho):
            vals = [np.full(len(g.theta), float(rho)) for g in sampling.grids]
        elif hasattr(rho, "derivatives"):
            vals = [rho.derivatives(J.p, 0)[0] for J in sampling.jets(2)]
        else:
            vals = [np.asarray(v, float) for v in rho]
        vals = sampling.sync(vals)
        return cls(0.0, tuple(np.asarray(v, float) for v in vals), sampling, 0)

    def sup(self) -> float:
        return max(float(np.max(np.abs(v[g.owned]))) for v, g in zip(self.rho, self.sampling.grids))

    def positions(self) -> list:
        return [J.p + r[:, None] * J.nu for J, r in zip(self.sampling.jets(2), self.rho)]


@dataclass
class _PrincipalFrame:
    """Reference jet rotated into the eigenframe ``E`` of the Weingarten map (``W = E diag(k) E^T``)."""

    k: np.ndarray
    E: np.ndarray
    dual: np.ndarray
    ddual: np.ndarray
    dW: np.ndarray

    @classmethod
    def of(cls, J) -> "_PrincipalFrame":
        k, E = np.linalg.eigh(J.W)
        dual = np.einsum("nia,nab->nib", J.dual, E)
        ddual = np.einsum("nkia,nab->nkib", J.ddual, E)
        dW = np.einsum("nac,nkab,nbd->nkcd", E, J.dW, E)
        return cls(k, E, dual, ddual, dW)


def _graph_curvature(F: _PrincipalFrame, R):
    """``(kappa(rho), beta, D, a_e)`` with ``M0 = E diag(D) E^T`` and ``a = E a_e``.

    The subset of the normal-graph geometry a flow step needs, with every
    ambient tensor expressed in the principal frame so ``M0`` is diagonal.
    """
    rho, d1, d2 = R.value, R.d1, R.d2
    D = 1.0 / (1.0 - rho[:, None] * F.k)
    g = np.sum(d1[:, :, None] * F.dual, axis=1)
    a = D * g
    beta = 1.0 / np.sqrt(1.0 + np.sum(a * a, axis=1))
    # d_j M0 = M0 (d_j rho W + rho d_j W) M0, diagonal factors act entrywise
    dA = rho[:, None, None, None] * F.dW
    idx = np.arange(len(F.k[0]))
    dA[:, :, idx, idx] += d1[:, :, None] * F.k[:, None, :]
    dM0 = D[:, None, :, None] * dA * D[:, None, None, :]
    dg = np.sum(d2[:, :, :, None] * F.dual[:, None], axis=2) + np.sum(d1[:, None, :, None] * F.ddual, axis=2)
    da = np.sum(dM0 * g[:, None, None, :], axis=3) + D[:, None, :] * dg
    grad_a = np.sum(F.dual[:, :, :, None] * da[:, :, None, :], axis=1)
    tr = np.sum(D * (F.k + np.diagonal(grad_a, axis1=1, axis2=2)), axis=1)
    corr = np.sum((D * a)[:, :, None] * grad_a * a[:, None, :], axis=(1, 2))
    return beta * (tr - beta**2 * corr), beta, D, a


@dataclass
class StepInfo:
    eta: float
    speed: float
    dt_max: float


class FlowSolver:
    """RK4 integrator for ``d rho / dt = V(rho) / beta(rho)``.

    Parameters
    ----------
    sampling : SurfaceSampling
    law : FlowLaw or str or dict
    stencil_order : int
        Finite-difference order for derivatives of ``rho``.
    cfl : float
        Safety factor ``c_cfl`` in ``dt <= c_cfl h^2 / (m lambda_max)``.
    margin : float
        Admissibility margin: ``sup |rho| <= margin * rho0``.
    """

    def __init__(self, sampling: SurfaceSampling, law="mcf", stencil_order: int = 4,
                 cfl: float = DEFAULT_CFL, margin: float = ADMISSIBLE_MARGIN):
        if not sampling.supports_differencing():
            raise InvalidArgumentError("flows need a sampling that supports grid differencing")
        self.sampling = sampling
        self.law = FlowLaw.parse(law)
        self.stencil_order = stencil_order
        self.cfl = cfl
        self.margin = margin
        self.rho0 = admissible_bound(sampling)
        self.h = min(float(np.min(g.spacing)) for g in sampling.grids)
        self.m = sampling.surface.dim - 1
        self.jets = sampling.jets(3)

        # orthonormal tangent frames on owned samples, for the ellipticity constant
        self._frames = [np.linalg.qr(np.swapaxes(J.tau[g.owned], 1, 2))[0]
                        for J, g in zip(self.jets, sampling.grids)]
        self._pf = [_PrincipalFrame.of(J) for J in self.jets]
        self._frames = [np.einsum("nab,nam->nbm", F.E[g.owned], Q)
                        for F, Q, g in zip(self._pf, self._frames, sampling.grids)]

    # -- right-hand side ------------------------------------------------

    def _geometry(self, rho):
        out = []
        for g, J, r in zip(self.sampling.grids, self.jets, rho):
            R = jet_of_samples(r, g, self.stencil_order, second=True)
            out.append(graph_geometry_kernel(J, R))
        return out

    def rhs(self, rho, info: bool = True) -> tuple:
        """``(d rho / dt per chart, step info)``; ``info`` is None unless requested."""
        out, lam, eta, speed = [], 0.0, np.inf, 0.0
        for g, F, r, Q in zip(self.sampling.grids, self._pf, rho, self._frames):
            R = jet_of_samples(r, g, self.stencil_order, second=True)
            kappa, beta, D, a = _graph_curvature(F, R)
            V = self.law.coefficient * kappa
            out.append(V / beta)
            if not info:
                continue
            own = g.owned
            Do, bo, ao = D[own], beta[own], a[own]
            if not len(Do):
                continue
            # chart-coordinate coefficients of the leading part of kappa(rho) / beta, from M0 tau^i
            Md = F.dual[own] * Do[:, None, :]
            am = np.sum(Md * ao[:, None, :], axis=2)
            A = Md @ np.swapaxes(Md, 1, 2) - bo[:, None, None] ** 2 * am[:, :, None] * am[:, None, :]
            lam = max(lam, abs(self.law.coefficient) * float(np.max(np.linalg.eigvalsh(A)[:, -1])))
            # ellipticity: c(rho, xi) >= beta^3 |M0 xi|^2 >= eta |xi|^2 on tangent covectors
            Mt = np.swapaxes(Q, 1, 2) @ (Do[:, :, None] * Q)
            smin = np.linalg.svd(Mt, compute_uv=False)[:, -1]
            eta = min(eta, float(np.min(bo**3 * smin**2)))
            speed = max(speed, float(np.max(np.abs(V[own]))))
        if not info:
            return out, None
        dt_max = np.inf if lam == 0 else self.cfl * self.h**2 / (self.m * lam)
        return out, StepInfo(eta, speed, dt_max)

    # -- stepping ---------------------------------------------------------

    def _admissible(self, rho) -> bool:
        sup = max(float(np.max(np.abs(v[g.owned]))) for v, g in zip(rho, self.sampling.grids))
        return np.isfinite(sup) and sup <= self.margin * self.rho0

    def step(self, state: FlowState, dt: float) -> tuple:
        """One RK4 step; returns ``(new_state, info)``.

        Raises :class:`InvalidArgumentError` when ``dt`` exceeds the step-size
        bound and :class:`FlowBlowupError` (carrying ``state``) when the result
        is no longer admissible or coercivity is lost.
        """
        if dt <= 0:
            raise InvalidArgumentError("dt must be positive")
        sync = self.sampling.sync
        y = [np.asarray(v) for v in state.rho]
        k1, info = self.rhs(y)
        if dt > info.dt_max:
            raise InvalidArgumentError(f"dt = {dt:.3g} exceeds the step-size bound {info.dt_max:.3g}")
        if not (info.eta > 0):
            raise FlowBlowupError("symbol coercivity lost", last_state=state)
        y2 = sync([a + 0.5 * dt * b for a, b in zip(y, k1)])
        k2 = self.rhs(y2, False)[0]
        y3 = sync([a + 0.5 * dt * b for a, b in zip(y, k2)])
        k3 = self.rhs(y3, False)[0]
        y4 = sync([a + dt * b for a, b in zip(y, k3)])
        k4 = self.rhs(y4, False)[0]
        new = sync([a + dt / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)])
        if not self._admissible(new):
            raise FlowBlowupError(f"height left the admissible range at t = {state.t + dt:.6g}", last_state=state)
        return FlowState(state.t + dt, tuple(new), self.sampling, state.steps + 1), info

    # -- diagnostics -------------------------------------------------------

    def area(self, rho) -> float:
        geos = self._geometry(rho)
        return integrate([g.measure for g in geos], self.sampling)

    def diagnostics(self, state: FlowState, info: Optional[StepInfo] = None) -> dict:
        pos = state.positions()
        own = [g.owned for g in self.sampling.grids]
        center = np.asarray(self.sampling.surface.center if self.sampling.surface.center is not None
                            else np.zeros(self.sampling.surface.dim), float)
        radii = np.concatenate([np.linalg.norm(p[o] - center, axis=1) for p, o in zip(pos, own)])
        rho_own = np.concatenate([r[o] for r, o in zip(state.rho, own)])
        out = {"t": state.t, "step": state.steps, "rho_min": float(rho_own.min()), "rho_max": float(rho_own.max()),
               "area": self.area(state.rho), "radius_mean": float(radii.mean()),
               "radius_min": float(radii.min()), "radius_max": float(radii.max())}
        if info is None:
            info = self.rhs(list(state.rho))[1]
        out.update({"eta": info.eta, "max_speed": info.speed, "dt_max": info.dt_max})
        return out


@dataclass
class FlowResult:
    """Diagnostics time series plus requested snapshots."""

    rows: list
    snapshots: dict
    final: FlowState

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows])


def step(state: FlowState, law="mcf", dt: float = 1e-4, solver: Optional[FlowSolver] = None, **kw) -> FlowState:
    solver = FlowSolver(state.sampling, law, **kw) if solver is None else solver
    return solver.step(state, dt)[0]


def run(initial: FlowState, law="mcf", T: float = 0.1, dt: float = 1e-4,
        observers: Sequence[Callable] = (), snapshot_times: Sequence[float] = (),
        solver: Optional[FlowSolver] = None, diagnostics_every: int = 1, **kw) -> FlowResult:
    """Integrate to time ``T`` with fixed ``dt`` (the last step is shortened to land on ``T``).

    ``observers`` are called as ``obs(state, diagnostics)`` whenever a diagnostics row is recorded.
    """
    solver = FlowSolver(initial.sampling, law, **kw) if solver is None else solver
    state = initial
    rows = []
    pending = sorted(float(s) for s in snapshot_times)
    snaps = {}

    def record(st, info):
        d = solver.diagnostics(st, info)
        rows.append(d)
        for obs in observers:
            obs(st, d)

    record(state, None)
    while pending and pending[0] <= state.t + 1e-12:
        snaps[pending.pop(0)] = state
    nsteps = int(np.ceil(T / dt - 1e-9))
    for i in range(nsteps):
        h = min(dt, T - state.t)
        if h <= 1e-15:
            break
        state, info = solver.step(state, h)
        if (i + 1) % diagnostics_every == 0 or i == nsteps - 1:
            record(state, info)
        while pending and pending[0] <= state.t + 1e-12:
            snaps[pending.pop(0)] = state
    return FlowResult(rows, snaps, state)


# ---------------------------------------------------------------------------
# mesh export


def grid_mesh(state: FlowState) -> tuple:
    """Vertices ``p + rho nu`` on every chart grid and triangles of grid cells touching owned samples."""
    smp = state.sampling
    verts, faces, off = [], [], 0
    for g, p in zip(smp.grids, state.positions()):
        verts.append(p)
        ch = smp.surface.charts[g.chart_id]
        if len(g.shape) == 1:
            s0 = g.shape[0]
            hi = s0 if ch.periodic[0] else s0 - 1
            for i in range(hi):
                j = (i + 1) % s0
                if g.owned[i] or g.owned[j]:
                    faces.append((off + i, off + j))
        else:
            s0, s1 = g.shape
            idx = np.arange(s0 * s1).reshape(s0, s1)
            i_hi = s0 if ch.periodic[0] else s0 - 1
            j_hi = s1 if ch.periodic[1] else s1 - 1
            for i in range(i_hi):
                for j in range(j_hi):
                    a, b = idx[i, j], idx[(i + 1) % s0, j]
                    c, d = idx[i, (j + 1) % s1], idx[(i + 1) % s0, (j + 1) % s1]
                    if g.owned[[a, b, c, d]].any():
                        faces += [(off + a, off + b, off + d), (off + a, off + d, off + c)]
        off += len(p)
    return np.concatenate(verts), np.array(faces, dtype=int)


def write_obj(path, vertices, faces) -> Path:
    """ASCII OBJ with ``v`` and ``f`` (or ``l`` for polylines) records, 1-based indices."""
    path = Path(path)
    with path.open("w") as fh:
        for v in vertices:
            coords = list(v) + [0.0] * (3 - len(v))
            fh.write("v " + " ".join(f"{c:.17g}" for c in coords) + "\n")
        tag = "f" if faces.shape[1] == 3 else "l"
        for f in faces:
            fh.write(tag + " " + " ".join(str(i + 1) for i in f) + "\n")
    return path


def export_obj(state: FlowState, path) -> Path:
    v, f = grid_mesh(state)
    return write_obj(path, v, f)
