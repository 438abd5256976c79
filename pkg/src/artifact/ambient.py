"""Smooth functions on R^n with exact derivatives up to third order.

They restrict to fields on a surface with exact chart derivatives through the
chain rule, which makes them the oracle inputs for heights, test functions and
carrier fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class AmbientFunction:
    """Scalar function on R^n. Subclasses implement ``derivatives``."""

    dim: int

    def derivatives(self, x: np.ndarray, order: int = 2) -> list[np.ndarray]:
        """Return ``[f, grad, hess, third]`` truncated at ``order``.

        Shapes are ``(N,)``, ``(N, n)``, ``(N, n, n)`` and ``(N, n, n, n)``.
        """
        raise NotImplementedError

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.derivatives(x, 0)[0]

    def __add__(self, other):
        return SumFunction([self, other])

    def __mul__(self, c):
        return ScaledFunction(self, float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return ScaledFunction(self, -1.0)


@dataclass
class SumFunction(AmbientFunction):
    parts: list

    def __post_init__(self):
        self.dim = self.parts[0].dim

    def derivatives(self, x, order=2):
        outs = [p.derivatives(x, order) for p in self.parts]
        return [sum(o[k] for o in outs) for k in range(order + 1)]


@dataclass
class ScaledFunction(AmbientFunction):
    base: AmbientFunction
    factor: float

    def __post_init__(self):
        self.dim = self.base.dim

    def derivatives(self, x, order=2):
        return [self.factor * d for d in self.base.derivatives(x, order)]


@dataclass
class Polynomial(AmbientFunction):
    """Polynomial given as ``{exponent tuple: coefficient}``.

    Parameters
    ----------
    terms : dict
        Monomial exponents (length ``dim``) mapped to coefficients.
    dim : int
        Ambient dimension.
    center : array_like, optional
        Shift applied before evaluation, so monomials are in ``x - center``.
    scale : float
        Coordinates are divided by ``scale`` after shifting.
    """

    terms: dict
    dim: int
    center: np.ndarray = None
    scale: float = 1.0

    def __post_init__(self):
        self.center = np.zeros(self.dim) if self.center is None else np.asarray(self.center, float)
        self._exps = np.array(list(self.terms.keys()), dtype=int).reshape(-1, self.dim)
        self._coef = np.array(list(self.terms.values()), dtype=float)

    def _eval(self, y, exps, coef):
        if len(coef) == 0:
            return np.zeros(y.shape[0])
        mask = np.all(exps >= 0, axis=1)
        if not np.any(mask):
            return np.zeros(y.shape[0])
        exps, coef = exps[mask], coef[mask]
        vals = np.ones((y.shape[0], len(coef)))
        for a in range(self.dim):
            vals *= y[:, a:a + 1] ** exps[None, :, a]
        return vals @ coef

    def _shifted(self, exps, coef, axis):
        c = coef * exps[:, axis]
        e = exps.copy()
        e[:, axis] -= 1
        return e, c

    def derivatives(self, x, order=2):
        y = (np.asarray(x, float) - self.center) / self.scale
        n, N = self.dim, y.shape[0]
        out = [self._eval(y, self._exps, self._coef)]
        if order >= 1:
            g = np.zeros((N, n))
            h = np.zeros((N, n, n)) if order >= 2 else None
            t = np.zeros((N, n, n, n)) if order >= 3 else None
            for a in range(n):
                ea, ca = self._shifted(self._exps, self._coef, a)
                g[:, a] = self._eval(y, ea, ca)
                if order >= 2:
                    for b in range(n):
                        eb, cb = self._shifted(ea, ca, b)
                        h[:, a, b] = self._eval(y, eb, cb)
                        if order >= 3:
                            for c in range(n):
                                ec, cc = self._shifted(eb, cb, c)
                                t[:, a, b, c] = self._eval(y, ec, cc)
            out.append(g / self.scale)
            if order >= 2:
                out.append(h / self.scale**2)
            if order >= 3:
                out.append(t / self.scale**3)
        return out


@dataclass
class PlaneWaves(AmbientFunction):
    """Sum of ``A_j sin(k_j . x + phase_j)`` plus a constant."""

    amplitudes: np.ndarray
    wavevectors: np.ndarray
    phases: np.ndarray
    offset: float = 0.0
    dim: int = field(init=False)

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, float)
        self.wavevectors = np.atleast_2d(np.asarray(self.wavevectors, float))
        self.phases = np.asarray(self.phases, float)
        self.dim = self.wavevectors.shape[1]

    def derivatives(self, x, order=2):
        arg = np.asarray(x, float) @ self.wavevectors.T + self.phases
        s, c = np.sin(arg) * self.amplitudes, np.cos(arg) * self.amplitudes
        k = self.wavevectors
        out = [s.sum(axis=1) + self.offset]
        if order >= 1:
            out.append(c @ k)
        if order >= 2:
            out.append(-np.einsum("nj,ja,jb->nab", s, k, k))
        if order >= 3:
            out.append(-np.einsum("nj,ja,jb,jc->nabc", c, k, k, k))
        return out

    @classmethod
    def random(cls, dim, rng, count=4, amplitude=1.0, max_wavenumber=2.0, offset=0.0):
        """Random smooth test function with bounded derivatives."""
        amps = amplitude * rng.uniform(-1, 1, count) / count
        kv = rng.normal(size=(count, dim))
        kv *= rng.uniform(0.5, max_wavenumber, (count, 1)) / np.linalg.norm(kv, axis=1, keepdims=True)
        return cls(amps, kv, rng.uniform(0, 2 * np.pi, count), offset)


@dataclass
class Constant(AmbientFunction):
    value: float
    dim: int

    def derivatives(self, x, order=2):
        N, n = np.asarray(x).shape[0], self.dim
        shapes = [(N,), (N, n), (N, n, n), (N, n, n, n)]
        out = [np.zeros(s) for s in shapes[: order + 1]]
        out[0] += self.value
        return out


@dataclass
class VectorFunction:
    """Ambient vector field built from scalar components."""

    components: list

    @property
    def dim(self):
        return self.components[0].dim

    def derivatives(self, x, order=2):
        parts = [c.derivatives(x, order) for c in self.components]
        return [np.stack([p[k] for p in parts], axis=-1) for k in range(order + 1)]


def spherical_harmonic(l: int, n: int = 3, center=None, radius: float = 1.0) -> Polynomial:
    """Zonal harmonic homogeneous polynomial of degree ``l`` (``l <= 3``).

    Restricted to the sphere of the given radius and center it is an eigenfunction
    of the Laplace-Beltrami operator with eigenvalue ``-l(l+n-2)/radius**2``.
    """
    if n == 3:
        table = {
            0: {(0, 0, 0): 1.0},
            1: {(0, 0, 1): 1.0},
            2: {(0, 0, 2): 2.0, (2, 0, 0): -1.0, (0, 2, 0): -1.0},
            3: {(0, 0, 3): 2.0, (2, 0, 1): -3.0, (0, 2, 1): -3.0},
        }
    elif n == 2:
        table = {
            0: {(0, 0): 1.0},
            1: {(1, 0): 1.0},
            2: {(2, 0): 1.0, (0, 2): -1.0},
            3: {(3, 0): 1.0, (1, 2): -3.0},
        }
    else:
        raise ValueError("harmonics implemented for n in {2, 3}")
    if l not in table:
        raise ValueError("degree must be in 0..3")
    return Polynomial(table[l], n, center=center, scale=radius)


def random_polynomial(dim: int, degree: int, rng, scale: float = 1.0, skip=()) -> Polynomial:
    """Polynomial with standard-normal coefficients (times ``scale``)."""
    terms = {}
    for exps in np.ndindex(*([degree + 1] * dim)):
        if 0 < sum(exps) <= degree and exps not in skip:
            terms[tuple(int(e) for e in exps)] = scale * rng.normal()
    return Polynomial(terms, dim)


def function_from_config(cfg, dim: int):
    """Ambient function from a number or a dict ``{"kind": ..., parameters}``.

    Kinds: ``constant`` (value), ``waves`` (seed, count, amplitude, max_wavenumber, offset),
    ``polynomial`` (terms as ``[{"exponents", "coefficient"}]``, center, scale),
    ``random_polynomial`` (degree, seed, scale), ``harmonic`` (l, amplitude, center, radius),
    ``sum`` (parts) and ``vector`` (components).
    """
    if cfg is None:
        return None
    if isinstance(cfg, (int, float)):
        return Constant(float(cfg), dim)
    if not isinstance(cfg, dict):
        raise ValueError(f"function config must be a number or an object, got {type(cfg).__name__}")
    kind = cfg.get("kind")
    if kind == "constant":
        return Constant(float(cfg.get("value", 0.0)), dim)
    if kind == "waves":
        rng = np.random.default_rng(int(cfg.get("seed", 0)))
        return PlaneWaves.random(dim, rng, int(cfg.get("count", 3)), float(cfg.get("amplitude", 1.0)),
                                 float(cfg.get("max_wavenumber", 2.0)), float(cfg.get("offset", 0.0)))
    if kind == "polynomial":
        terms = {tuple(int(e) for e in t["exponents"]): float(t["coefficient"]) for t in cfg["terms"]}
        for e in terms:
            if len(e) != dim:
                raise ValueError(f"exponent {e} does not match dimension {dim}")
        return Polynomial(terms, dim, cfg.get("center"), float(cfg.get("scale", 1.0)))
    if kind == "random_polynomial":
        rng = np.random.default_rng(int(cfg.get("seed", 0)))
        return random_polynomial(dim, int(cfg.get("degree", 2)), rng, float(cfg.get("scale", 1.0)))
    if kind == "harmonic":
        h = spherical_harmonic(int(cfg.get("l", 2)), dim, cfg.get("center"), float(cfg.get("radius", 1.0)))
        return ScaledFunction(h, float(cfg.get("amplitude", 1.0)))
    if kind == "sum":
        return SumFunction([function_from_config(p, dim) for p in cfg["parts"]])
    if kind == "vector":
        return VectorFunction([function_from_config(p, dim) for p in cfg["components"]])
    raise ValueError(f"unknown function kind {kind!r}")
