"""Unit vector fields: the analytic zoo, grid-sampled fields and their covariant derivatives."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .geometry import DomainError, Manifold, PoleError, sphere, torus


def _normalize(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def complex_structure(N: int) -> np.ndarray:
    """Standard complex structure on R^N pairing coordinates (1,2), (3,4), ..."""
    if N % 2:
        raise DomainError("complex structure needs an even ambient dimension")
    J = np.zeros((N, N))
    for k in range(0, N, 2):
        J[k + 1, k] = 1.0
        J[k, k + 1] = -1.0
    return J


class UnitField:
    """A section of the unit tangent bundle, optionally singular at finitely many poles.

    ``func`` maps an array of points (..., ambient) to unit tangent vectors of the
    same shape.  ``jacobian`` (optional) maps (points, frames) to the covariant
    derivative matrix in those frames.
    """

    def __init__(self, manifold: Manifold, func: Callable, poles=(), mode="analytic",
                 name="field", jacobian: Optional[Callable] = None):
        self.manifold = manifold
        self._func = func
        self._jacobian = jacobian
        self.poles = np.asarray(poles, dtype=float).reshape(-1, manifold.ambient_dim)
        self.mode = mode
        self.name = name

    def __repr__(self):
        return f"UnitField({self.name!r}, {self.manifold.kind}{self.manifold.dim}, poles={len(self.poles)})"

    def pole_distance(self, x):
        x = np.asarray(x, dtype=float)
        if len(self.poles) == 0:
            return np.full(x.shape[:-1], np.inf)
        d = [self.manifold.distance(x, p) for p in self.poles]
        return np.min(np.stack(d), axis=0)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        if len(self.poles) and np.any(self.pole_distance(x) < 1e-12 * max(1.0, self.manifold.radius)):
            raise PoleError(f"{self.name} evaluated at a pole")
        return self._func(x)

    __call__ = evaluate

    @property
    def has_closed_form_jacobian(self) -> bool:
        return self._jacobian is not None


# -- the analytic zoo -----------------------------------------------------------------

def constant_field(m: Manifold, vector) -> UnitField:
    if m.is_sphere:
        raise DomainError("constant fields live on flat tori")
    v = _normalize(np.asarray(vector, dtype=float))

    def func(x):
        return np.broadcast_to(v, np.shape(x)).copy()

    def jac(x, frames):
        return np.zeros(np.shape(x)[:-1] + (m.dim, m.dim))

    return UnitField(m, func, name="constant", jacobian=jac)


def hopf_field(m: Manifold) -> UnitField:
    """x -> J x on an odd-dimensional sphere (tangent to the Hopf circles)."""
    if not m.is_sphere or m.dim % 2 == 0:
        raise DomainError("the Hopf field needs an odd-dimensional sphere")
    J = complex_structure(m.ambient_dim)
    R = m.radius

    def func(x):
        return np.asarray(x) @ J.T / R

    def jac(x, frames):
        # nabla_X xi = J X + <X, xi> x / R^2 for X tangent, then frame components
        x = np.asarray(x) / R
        xi = x @ J.T
        JX = frames @ J.T
        cov = JX + np.sum(frames * xi[..., None, :], axis=-1)[..., None] * x[..., None, :]
        return np.einsum("...aj,...bj->...ab", frames, cov) / R

    return UnitField(m, func, name=f"hopf-S{m.dim}", jacobian=jac)


def _transported_field(m: Manifold, base, v, name):
    base = np.asarray(base, dtype=float)
    base = base / np.linalg.norm(base) * m.radius
    v = m.project_tangent(base, np.asarray(v, dtype=float))
    v = _normalize(v)

    def func(x):
        return m.transport(base, x, v)

    f = UnitField(m, func, poles=[-base], name=name)
    f.basepoint = base
    f.initial_vector = v
    return f


def pedersen_field(m: Manifold, basepoint=None, vector=None) -> UnitField:
    """Parallel translate one unit vector along all meridians from ``basepoint`` to its antipode.

    The default initial vector is the Hopf vector J x at the basepoint.
    """
    if not m.is_sphere or m.dim % 2 == 0:
        raise DomainError("Pedersen sections live on odd-dimensional spheres")
    if basepoint is None:
        basepoint = np.eye(m.ambient_dim)[0] * m.radius
    if vector is None:
        vector = complex_structure(m.ambient_dim) @ (np.asarray(basepoint, float) / m.radius)
    return _transported_field(m, basepoint, vector, f"pedersen-S{m.dim}")


def longitude_field(m: Manifold, basepoint=None, vector=None) -> UnitField:
    """Translate ``vector`` parallel to itself along the longitudes of S^2 from ``basepoint``."""
    if not m.is_sphere or m.dim != 2:
        raise DomainError("the longitude field lives on S^2")
    if basepoint is None:
        basepoint = np.array([0.0, 0.0, m.radius])
    if vector is None:
        b = np.asarray(basepoint, float) / m.radius
        vector = m.frame(b)[0]
    return _transported_field(m, basepoint, vector, "longitude-S2")


def rotate_field(f: UnitField, Q) -> UnitField:
    """Push a sphere field forward by the orthogonal map Q: (Q_* f)(x) = Q f(Q^T x)."""
    Q = np.asarray(Q, dtype=float)

    def func(x):
        return f.evaluate(np.asarray(x) @ Q) @ Q.T

    jac = None
    if f.has_closed_form_jacobian:
        def jac(x, frames):
            # pull the point and frame back by Q; components are unchanged
            return f._jacobian(np.asarray(x) @ Q, frames @ Q)

    return UnitField(f.manifold, func, poles=f.poles @ Q.T, name=f.name + "-rotated", jacobian=jac)


def twist_field(m: Manifold, wavevector) -> UnitField:
    """u(x) = (cos k.x, sin k.x) on a flat 2-torus; a smooth, pole-free test graph."""
    if m.is_sphere or m.dim != 2:
        raise DomainError("twist field is defined on flat 2-tori")
    k = np.asarray(wavevector, dtype=float)

    def func(x):
        a = np.asarray(x) @ k
        return np.stack([np.cos(a), np.sin(a)], axis=-1)

    def jac(x, frames):
        a = np.asarray(x) @ k
        d = np.stack([-np.sin(a), np.cos(a)], axis=-1)
        return d[..., :, None] * k[None, :]

    return UnitField(m, func, name="twist", jacobian=jac)


# -- covariant derivative ---------------------------------------------------------------

@dataclass
class FieldJacobian:
    points: np.ndarray
    frames: np.ndarray
    matrix: np.ndarray  # (..., n, n); [a, b] = <e_a, nabla_{e_b} xi>
    h: float


def covariant_derivative(f: UnitField, points, h: float, method: str = "auto") -> FieldJacobian:
    """Covariant derivative of ``f`` in an orthonormal frame at each point.

    ``method='fd'`` takes central differences along geodesics of length ``h``
    in each frame direction, transporting the far values back before
    differencing; ``'exact'`` uses the closed form; ``'auto'`` prefers the
    closed form.
    """
    m = f.manifold
    x = np.asarray(points, dtype=float)
    if len(f.poles) and np.any(f.pole_distance(x) < 2 * h):
        raise PoleError("finite-difference stencil would straddle a pole")
    E = m.frame(x)
    if method == "exact" or (method == "auto" and f.has_closed_form_jacobian):
        if not f.has_closed_form_jacobian:
            raise ValueError(f"{f.name} has no closed-form derivative")
        return FieldJacobian(x, E, f._jacobian(x, E), h)
    if method not in ("fd", "auto"):
        raise ValueError(f"unknown method {method!r}")
    n = m.dim
    J = np.empty(x.shape[:-1] + (n, n))
    for b in range(n):
        step = h * E[..., b, :]
        qp = m.exp(x, step)
        qm = m.exp(x, -step)
        vp = m.transport(qp, x, f.evaluate(qp))
        vm = m.transport(qm, x, f.evaluate(qm))
        J[..., :, b] = np.einsum("...aj,...j->...a", E, (vp - vm) / (2 * h))
    return FieldJacobian(x, E, J, h)


# -- flat chart around a point ------------------------------------------------------------

class LocalGraph:
    """A unit field near ``center`` written as u: B(0, radius) in R^n -> S^{n-1}.

    Points use geodesic normal coordinates; values are transported back to the
    centre along radial geodesics and expressed in a fixed orthonormal frame.
    """

    def __init__(self, func: Callable, dim: int, radius: float = np.inf, center=None,
                 name="graph", singular_at_origin=False):
        self.func = func
        self.dim = dim
        self.radius = radius
        self.center = center
        self.name = name
        self.singular_at_origin = singular_at_origin

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(np.linalg.norm(y, axis=-1) > self.radius * (1 + 1e-12)):
            raise DomainError("point outside the chart")
        return self.func(y)

    def dilate(self, lam):
        return LocalGraph(lambda y: self.func(lam * np.asarray(y)), self.dim, self.radius / lam,
                          self.center, f"{self.name}@{lam:g}", self.singular_at_origin)


def local_graph(f: UnitField, center, radius: Optional[float] = None) -> LocalGraph:
    m = f.manifold
    c = np.asarray(center, dtype=float)
    E0 = m.frame(c)
    rmax = m.injectivity_radius() * (0.999 if m.is_sphere else 1.0)
    if radius is None:
        radius = rmax
    if radius > rmax:
        raise DomainError("chart radius exceeds the injectivity radius")

    def func(y):
        y = np.asarray(y, dtype=float)
        q = m.exp(c, y @ E0)
        return np.einsum("aj,...j->...a", E0, m.transport(q, c, f.evaluate(q)))

    singular = bool(len(f.poles)) and np.min(f.pole_distance(c)) < 1e-12
    return LocalGraph(func, m.dim, radius, c, f.name, singular)


def graph_jacobian(u: LocalGraph, y, h: Optional[float] = None, rel: float = 1e-4):
    """Euclidean Jacobian du/dy by central differences.

    With ``h=None`` the step is ``rel * |y|`` so that cone-like singular
    graphs are differentiated at a scale-invariant resolution.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[-1]
    if h is None:
        step = rel * np.maximum(np.linalg.norm(y, axis=-1, keepdims=True), 1e-300)
    else:
        step = np.full(y.shape[:-1] + (1,), float(h))
    J = np.empty(y.shape[:-1] + (u.dim, n))
    for b in range(n):
        e = np.zeros(n)
        e[b] = 1.0
        J[..., :, b] = (u.func(y + step * e) - u.func(y - step * e)) / (2 * step)
    return J


# -- grid fields -------------------------------------------------------------------------

class TorusLattice:
    """Periodic midpoint lattice on a flat torus."""

    kind = "torus"

    def __init__(self, m: Manifold, counts):
        self.manifold = m
        self.shape = tuple(int(c) for c in counts)
        self.spacing = np.array([P / c for P, c in zip(m.periods, self.shape)])
        axes = [(np.arange(c) + 0.5) * s for c, s in zip(self.shape, self.spacing)]
        self.points = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        self.weights = np.full(self.shape, float(np.prod(self.spacing)))
        self.frames = np.broadcast_to(np.eye(m.dim), self.shape + (m.dim, m.dim))
        self.h = float(self.spacing.max())

    def neighbours(self, b, sign):
        idx = np.indices(self.shape)
        idx[b] = (idx[b] + sign) % self.shape[b]
        return tuple(idx)

    def step_length(self, b):
        return np.full(self.shape, 2 * self.spacing[b])

    def describe(self):
        return {"kind": "torus", "shape": list(self.shape)}

    def interpolate(self, U, x):
        x = np.asarray(x, dtype=float)
        s = np.mod(x, self.manifold.periods) / self.spacing - 0.5
        i0 = np.floor(s).astype(int)
        t = s - i0
        out = np.zeros(x.shape[:-1] + (U.shape[-1],))
        n = len(self.shape)
        for corner in range(2 ** n):
            bits = [(corner >> k) & 1 for k in range(n)]
            w = np.ones(x.shape[:-1])
            idx = []
            for k, bit in enumerate(bits):
                w = w * (t[..., k] if bit else 1 - t[..., k])
                idx.append((i0[..., k] + bit) % self.shape[k])
            out += w[..., None] * U[tuple(idx)]
        return _normalize(out)


class HopfTorusLattice:
    """Lattice on S^3 in toroidal coordinates x = (cos a e^{i s}, sin a e^{i t}).

    a runs over midpoints of (0, pi/2); s, t are periodic.  The boundary circles
    a = 0, pi/2 are handled by reflection, which maps to a half-period shift in
    the complementary angle.
    """

    kind = "s3-hopf"

    def __init__(self, m: Manifold, n_a: int, n_s: int):
        if not (m.is_sphere and m.dim == 3):
            raise DomainError("HopfTorusLattice lives on S^3")
        if n_s % 2:
            raise DomainError("angular count must be even")
        self.manifold = m
        self.shape = (n_a, n_s, n_s)
        R = m.radius
        da = (np.pi / 2) / n_a
        ds = 2 * np.pi / n_s
        self.da, self.ds = da, ds
        a = (np.arange(n_a) + 0.5) * da
        s = (np.arange(n_s) + 0.5) * ds
        A, S, T = np.meshgrid(a, s, s, indexing="ij")
        ca, sa = np.cos(A), np.sin(A)
        self.points = R * np.stack([ca * np.cos(S), ca * np.sin(S), sa * np.cos(T), sa * np.sin(T)], -1)
        z = np.zeros_like(A)
        e_a = np.stack([-sa * np.cos(S), -sa * np.sin(S), ca * np.cos(T), ca * np.sin(T)], -1)
        e_s = np.stack([-np.sin(S), np.cos(S), z, z], -1)
        e_t = np.stack([z, z, -np.sin(T), np.cos(T)], -1)
        self.frames = np.stack([e_a, e_s, e_t], axis=-2)
        edges = np.arange(n_a + 1) * da
        wa = 0.5 * np.diff(np.sin(edges) ** 2)
        self.weights = R ** 3 * wa[:, None, None] * ds * ds * np.ones(self.shape)
        self._ca, self._sa = ca, sa
        self.h = R * max(da, ds)

    def _wrap(self, ia, i1, i2):
        n_a, n_s, _ = self.shape
        half = n_s // 2
        lo = ia < 0
        hi = ia >= n_a
        i2 = np.where(lo, i2 + half, i2)
        i1 = np.where(hi, i1 + half, i1)
        ia = np.where(lo, -1 - ia, np.where(hi, 2 * n_a - 1 - ia, ia))
        return ia, i1 % n_s, i2 % n_s

    def neighbours(self, b, sign):
        ia, i1, i2 = np.indices(self.shape)
        if b == 0:
            ia = ia + sign
        elif b == 1:
            i1 = i1 + sign
        else:
            i2 = i2 + sign
        return self._wrap(ia, i1, i2)

    def step_length(self, b):
        R = self.manifold.radius
        if b == 0:
            return np.full(self.shape, 2 * R * self.da)
        scale = self._ca if b == 1 else self._sa
        return 2 * R * self.ds * scale

    def describe(self):
        return {"kind": "s3-hopf", "shape": list(self.shape)}

    def interpolate(self, U, x):
        x = np.asarray(x, dtype=float) / self.manifold.radius
        a = np.arctan2(np.hypot(x[..., 2], x[..., 3]), np.hypot(x[..., 0], x[..., 1]))
        s = np.mod(np.arctan2(x[..., 1], x[..., 0]), 2 * np.pi)
        t = np.mod(np.arctan2(x[..., 3], x[..., 2]), 2 * np.pi)
        c = np.stack([a / self.da - 0.5, s / self.ds - 0.5, t / self.ds - 0.5], -1)
        i0 = np.floor(c).astype(int)
        fr = c - i0
        out = np.zeros(x.shape[:-1] + (4,))
        for corner in range(8):
            bits = [(corner >> k) & 1 for k in range(3)]
            w = np.ones(x.shape[:-1])
            for k, bit in enumerate(bits):
                w = w * (fr[..., k] if bit else 1 - fr[..., k])
            idx = self._wrap(i0[..., 0] + bits[0], i0[..., 1] + bits[1], i0[..., 2] + bits[2])
            out += w[..., None] * U[idx]
        out = out - np.sum(out * x, axis=-1, keepdims=True) * x
        return _normalize(out)


class GridField(UnitField):
    """A unit field stored as samples on a lattice; off-lattice values are interpolated then renormalized."""

    def __init__(self, lattice, values, name="grid"):
        values = np.asarray(values, dtype=float)
        if values.shape != lattice.points.shape:
            raise DomainError("values must match the lattice point array")
        self.lattice = lattice
        self.values = values
        super().__init__(lattice.manifold, lambda x: lattice.interpolate(self.values, x),
                         mode="grid", name=name)

    def with_values(self, values, name=None):
        return GridField(self.lattice, values, name or self.name)

    def lattice_jacobian(self, values=None):
        """Covariant derivative at the lattice nodes from central differences of neighbours."""
        U = self.values if values is None else values
        lat = self.lattice
        n = lat.manifold.dim
        J = np.empty(lat.shape + (n, n))
        for b in range(n):
            d = (U[lat.neighbours(b, +1)] - U[lat.neighbours(b, -1)]) / lat.step_length(b)[..., None]
            J[..., :, b] = np.einsum("...aj,...j->...a", lat.frames, d)
        return J

    def to_json(self) -> str:
        return json.dumps({
            "manifold": self.manifold.describe(),
            "lattice": self.lattice.describe(),
            "layout": "row-major lattice, embedded vector components last",
            "vectors": self.values.reshape(-1).tolist(),
            "poles": self.poles.tolist(),
            "name": self.name,
        })

    @classmethod
    def from_json(cls, text: str) -> "GridField":
        d = json.loads(text)
        lat = make_lattice(manifold_from_descriptor(d["manifold"]), d["lattice"]["shape"],
                           d["lattice"]["kind"])
        vals = np.asarray(d["vectors"], dtype=float).reshape(lat.points.shape)
        return cls(lat, vals, d.get("name", "grid"))


def manifold_from_descriptor(d: dict) -> Manifold:
    if d["kind"] == "sphere":
        return sphere(int(d["dim"]), float(d.get("radius", 1.0)))
    if d["kind"] == "torus":
        return torus(d["periods"])
    raise DomainError(f"unknown manifold kind {d['kind']!r}")


def make_lattice(m: Manifold, shape, kind=None):
    kind = kind or ("torus" if not m.is_sphere else "s3-hopf")
    if kind == "torus":
        return TorusLattice(m, shape)
    if kind == "s3-hopf":
        return HopfTorusLattice(m, shape[0], shape[1])
    raise DomainError(f"unknown lattice kind {kind!r}")


def sample_field(f: UnitField, lattice) -> GridField:
    vals = f.evaluate(lattice.points)
    return GridField(lattice, _normalize(vals), name=f.name + "-grid")


def _smooth_noise(points, n_modes, rng, scale, periods=None):
    N = points.shape[-1]
    out = np.zeros(points.shape)
    for _ in range(n_modes):
        if periods is None:
            k = rng.normal(size=N) * scale
        else:
            # integer wavenumbers keep the noise periodic
            k = 2 * np.pi * rng.integers(-2, 3, size=N) / np.asarray(periods, dtype=float)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.normal(size=N)
        out += np.sin(points @ k + phase)[..., None] * amp
    return out


def perturb_field(f: GridField, amplitude: float, seed: int, n_modes: int = 6) -> GridField:
    """Add seeded smooth noise tangent to each fibre, then renormalize.

    The noise is rescaled so its largest sample has norm ``amplitude``.
    """
    if f.mode != "grid":
        raise DomainError("perturb_field needs a grid field")
    if amplitude >= 1:
        warnings.warn("amplitude >= 1: renormalization may flip vectors", RuntimeWarning)
    if amplitude == 0:
        return f.with_values(f.values.copy())
    m = f.manifold
    rng = np.random.default_rng(seed)
    pts = f.lattice.points
    if m.is_sphere:
        noise = _smooth_noise(pts, n_modes, rng, 1.5 / m.radius)
    else:
        noise = _smooth_noise(pts, n_modes, rng, None, m.periods)
    U = f.values
    noise = m.project_tangent(pts, noise)
    noise = noise - np.sum(noise * U, axis=-1, keepdims=True) * U
    noise *= amplitude / np.max(np.linalg.norm(noise, axis=-1))
    V = m.project_tangent(pts, U + noise)
    return f.with_values(_normalize(V), name=f.name + f"-perturbed{seed}")


def unit_norm_defect(vectors) -> float:
    return float(np.max(np.abs(np.linalg.norm(vectors, axis=-1) - 1.0)))
