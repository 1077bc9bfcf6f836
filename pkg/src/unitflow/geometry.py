"""Round spheres and flat tori: metrics, geodesics, transport and quadrature.

Points on a sphere are stored in embedded coordinates (arrays whose last axis
has length ``dim + 1``); points on a torus are stored as chart coordinates in
``[0, period)``.  Tangent vectors use the same ambient representation.  All
functions broadcast over leading axes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class DomainError(ValueError):
    """A point or parameter lies outside the admissible domain."""


class PoleError(DomainError):
    """Evaluation hit (or came too close to) a pole of a construction."""


@dataclass(frozen=True)
class Manifold:
    kind: str
    dim: int
    radius: float = 1.0
    periods: tuple = ()

    def __post_init__(self):
        if self.kind not in ("sphere", "torus"):
            raise DomainError(f"unknown manifold kind {self.kind!r}")
        if self.dim < 2:
            raise DomainError("dim must be >= 2")
        if self.kind == "sphere" and not self.radius > 0:
            raise DomainError("radius must be positive")
        if self.kind == "torus":
            if len(self.periods) != self.dim or min(self.periods) <= 0:
                raise DomainError("torus needs dim positive periods")

    @property
    def is_sphere(self) -> bool:
        return self.kind == "sphere"

    @property
    def ambient_dim(self) -> int:
        return self.dim + 1 if self.is_sphere else self.dim

    def volume(self) -> float:
        if self.is_sphere:
            return sphere_area(self.dim) * self.radius ** self.dim
        return float(np.prod(self.periods))

    def injectivity_radius(self) -> float:
        if self.is_sphere:
            return math.pi * self.radius
        return 0.5 * min(self.periods)

    def describe(self) -> dict:
        d = {"kind": self.kind, "dim": self.dim}
        if self.is_sphere:
            d["radius"] = self.radius
        else:
            d["periods"] = list(self.periods)
        return d

    # -- pointwise geometry -------------------------------------------------

    def wrap(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_sphere:
            return x
        return np.mod(x, np.asarray(self.periods))

    def contains(self, x, tol=1e-12) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.ambient_dim:
            return np.zeros(x.shape[:-1], dtype=bool)
        if self.is_sphere:
            return np.abs(np.linalg.norm(x, axis=-1) - self.radius) <= tol * self.radius
        return np.all(np.isfinite(x), axis=-1)

    def frame(self, x) -> np.ndarray:
        """Orthonormal tangent frame at ``x``; rows are basis vectors, shape (..., dim, ambient)."""
        x = np.asarray(x, dtype=float)
        if not self.is_sphere:
            return np.broadcast_to(np.eye(self.dim), x.shape[:-1] + (self.dim, self.dim)).copy()
        return _householder_frame(x / self.radius)

    def project_tangent(self, x, v):
        v = np.asarray(v, dtype=float)
        if not self.is_sphere:
            return v
        u = np.asarray(x, dtype=float) / self.radius
        return v - np.sum(v * u, axis=-1, keepdims=True) * u

    def exp(self, x, v):
        """Exponential map: follow the geodesic from ``x`` with initial velocity ``v`` for unit time."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if not self.is_sphere:
            return self.wrap(x + v)
        R = self.radius
        speed = np.linalg.norm(v, axis=-1, keepdims=True)
        ang = speed / R
        safe = np.where(speed > 0, speed, 1.0)
        return np.cos(ang) * x + R * np.sin(ang) * v / safe

    def log(self, x, y):
        """Inverse of exp: the tangent vector at ``x`` pointing to ``y`` with length d(x, y)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if not self.is_sphere:
            P = np.asarray(self.periods)
            return np.mod(y - x + P / 2, P) - P / 2
        R = self.radius
        a, b = x / R, y / R
        tdir = b - np.sum(a * b, axis=-1, keepdims=True) * a
        tn = np.linalg.norm(tdir, axis=-1, keepdims=True)
        ang = _angle(a, b)[..., None]
        if np.any((tn < 1e-14) & (ang > 1)):
            raise PoleError("log is undefined at the cut point")
        return np.where(tn > 0, R * ang * tdir / np.where(tn > 0, tn, 1.0), 0.0)

    def distance(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if not self.is_sphere:
            P = np.asarray(self.periods)
            d = np.mod(y - x + P / 2, P) - P / 2
            return np.linalg.norm(d, axis=-1)
        R = self.radius
        return R * _angle(x / R, y / R)

    def transport(self, x, y, v):
        """Parallel transport of ``v`` from ``x`` to ``y`` along the minimizing geodesic."""
        if not self.is_sphere:
            return np.asarray(v, dtype=float) + 0.0 * np.asarray(y, dtype=float)
        R = self.radius
        return _sphere_transport(np.asarray(x, float) / R, np.asarray(y, float) / R,
                                 np.asarray(v, dtype=float))


def sphere(dim: int, radius: float = 1.0) -> Manifold:
    return Manifold("sphere", dim, radius=radius)


def torus(periods) -> Manifold:
    periods = tuple(float(p) for p in periods)
    return Manifold("torus", len(periods), periods=periods)


def sphere_area(m: int) -> float:
    """Area of the unit m-sphere S^m in R^{m+1}."""
    return 2 * math.pi ** ((m + 1) / 2) / math.gamma((m + 1) / 2)


def _angle(a, b):
    # atan2 form stays accurate near 0 and pi
    cross = np.linalg.norm(a - np.sum(a * b, axis=-1, keepdims=True) * b, axis=-1)
    return np.arctan2(cross, np.sum(a * b, axis=-1))


def _householder_frame(u):
    N = u.shape[-1]
    s = np.where(u[..., -1:] >= 0, 1.0, -1.0)
    w = u.copy()
    w[..., -1:] += s
    w /= np.linalg.norm(w, axis=-1, keepdims=True)
    H = np.eye(N) - 2 * w[..., :, None] * w[..., None, :]
    # H u = -s e_N, so the first N-1 rows of H span u^perp
    return H[..., :-1, :]


def _sphere_transport(a, b, v):
    a, b, v = np.broadcast_arrays(a, b, v)
    c = np.sum(a * b, axis=-1, keepdims=True)
    tdir = b - c * a
    tn = np.linalg.norm(tdir, axis=-1, keepdims=True)
    if np.any((tn < 1e-14) & (c < 0)):
        raise PoleError("transport between antipodal points is undefined")
    tn_safe = np.where(tn > 0, tn, 1.0)
    ta = np.where(tn > 0, tdir / tn_safe, 0.0)
    theta = np.arctan2(tn, c)
    vel_b = -np.sin(theta) * a + np.cos(theta) * ta
    comp = np.sum(v * ta, axis=-1, keepdims=True)
    return v - comp * ta + comp * vel_b


def parallel_transport_meridian(m: Manifold, p, v, q):
    """Transport tangent vector ``v`` at ``p`` to ``q`` along the great circle through p, q and -p."""
    if not m.is_sphere:
        raise DomainError("meridian transport is defined on spheres")
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any(np.linalg.norm(p + q, axis=-1) < 1e-12 * m.radius):
        raise PoleError("q = -p is the pole of the meridian construction")
    return m.transport(p, q, v)


# -- charts -------------------------------------------------------------------

def from_polar(angles, radius=1.0):
    """Hyperspherical angles (theta_1..theta_{m-1}, phi) -> embedded point on S^m(radius)."""
    angles = np.asarray(angles, dtype=float)
    m = angles.shape[-1]
    out = np.empty(angles.shape[:-1] + (m + 1,))
    sprod = np.ones(angles.shape[:-1])
    for j in range(m - 1):
        out[..., j] = sprod * np.cos(angles[..., j])
        sprod = sprod * np.sin(angles[..., j])
    out[..., m - 1] = sprod * np.cos(angles[..., m - 1])
    out[..., m] = sprod * np.sin(angles[..., m - 1])
    return radius * out


def to_polar(x):
    x = np.asarray(x, dtype=float)
    m = x.shape[-1] - 1
    ang = np.empty(x.shape[:-1] + (m,))
    for j in range(m - 1):
        tail = np.linalg.norm(x[..., j + 1:], axis=-1)
        ang[..., j] = np.arctan2(tail, x[..., j])
    ang[..., m - 1] = np.mod(np.arctan2(x[..., m], x[..., m - 1]), 2 * np.pi)
    return ang


def metric_at(m: Manifold, coords) -> np.ndarray:
    """Chart-frame metric tensor.

    Spheres use the hyperspherical polar chart (theta_1, ..., theta_{n-1}, phi)
    with every theta strictly inside (0, pi); tori use their flat coordinates.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.shape[-1] != m.dim:
        raise DomainError(f"expected {m.dim} chart coordinates")
    if not m.is_sphere:
        return np.broadcast_to(np.eye(m.dim), coords.shape[:-1] + (m.dim, m.dim)).copy()
    th = coords[..., :-1]
    if np.any((th <= 0) | (th >= np.pi)) or np.any(~np.isfinite(coords)):
        raise DomainError("polar angles must lie in (0, pi)")
    diag = np.ones(coords.shape)
    for j in range(1, m.dim):
        diag[..., j] = diag[..., j - 1] * np.sin(coords[..., j - 1]) ** 2
    g = np.zeros(coords.shape + (m.dim,))
    idx = np.arange(m.dim)
    g[..., idx, idx] = diag * m.radius ** 2
    return g


# -- quadrature -----------------------------------------------------------------

def _sin_power_antideriv(p, t):
    t = np.asarray(t, dtype=float)
    if p == 0:
        return t
    if p == 1:
        return -np.cos(t)
    return -np.sin(t) ** (p - 1) * np.cos(t) / p + (p - 1) / p * _sin_power_antideriv(p - 2, t)


def sin_power_cells(p, edges):
    """Exact integrals of sin^p over consecutive cells with the given edges."""
    F = _sin_power_antideriv(p, edges)
    return np.diff(F)


@dataclass(frozen=True)
class SphereLattice:
    """Midpoint lattice on the unit sphere S^m in hyperspherical angles.

    Cell weights are exact integrals of the area element over each angular cell,
    so they sum to |S^m| to rounding; the rule is second order for smooth
    integrands.
    """
    m: int
    n_theta: int
    angles: tuple = field(repr=False)
    points: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def shape(self):
        return self.weights.shape

    @property
    def spacing(self) -> float:
        return math.pi / self.n_theta

    def flat_points(self):
        return self.points.reshape(-1, self.m + 1)

    def flat_weights(self):
        return self.weights.reshape(-1)


def sphere_lattice(m: int, n_theta: int) -> SphereLattice:
    """Lattice with ``n_theta`` cells per polar angle and ``2 n_theta`` in azimuth."""
    if m < 1 or n_theta < 2:
        raise DomainError("need m >= 1 and n_theta >= 2")
    n_phi = 2 * n_theta
    th_edges = np.linspace(0, np.pi, n_theta + 1)
    th = 0.5 * (th_edges[1:] + th_edges[:-1])
    phi = (np.arange(n_phi) + 0.5) * (2 * np.pi / n_phi)
    axes = [th] * (m - 1) + [phi]
    grids = np.meshgrid(*axes, indexing="ij")
    ang = np.stack(grids, axis=-1)
    pts = from_polar(ang)
    w = np.full(ang.shape[:-1], 2 * np.pi / n_phi)
    for j in range(m - 1):
        cw = sin_power_cells(m - 1 - j, th_edges)
        shape = [1] * m
        shape[j] = n_theta
        w = w * cw.reshape(shape)
    return SphereLattice(m, n_theta, tuple(axes), pts, w)


@dataclass(frozen=True)
class QuadratureGrid:
    points: np.ndarray
    weights: np.ndarray
    h: float
    # optional structure for polar grids: radial distance from the centre and unit direction
    radial: np.ndarray = None
    directions: np.ndarray = None

    def __post_init__(self):
        if np.any(self.weights <= 0):
            raise DomainError("quadrature weights must be positive")

    def total(self) -> float:
        return math.fsum(self.weights)

    def integrate(self, values) -> float:
        return math.fsum(np.asarray(values).reshape(-1) * self.weights)


def manifold_grid(m: Manifold, h: float) -> QuadratureGrid:
    """Quadrature grid over the whole manifold with lattice spacing about ``h``."""
    if m.is_sphere:
        n_theta = max(2, int(math.ceil(math.pi / (h / m.radius))))
        lat = sphere_lattice(m.dim, n_theta)
        return QuadratureGrid(m.radius * lat.flat_points(),
                              m.radius ** m.dim * lat.flat_weights(), m.radius * lat.spacing)
    counts = [max(1, int(round(P / h))) for P in m.periods]
    axes = [(np.arange(c) + 0.5) * (P / c) for c, P in zip(counts, m.periods)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m.dim)
    cell = float(np.prod([P / c for c, P in zip(counts, m.periods)]))
    return QuadratureGrid(pts, np.full(len(pts), cell), max(P / c for c, P in zip(counts, m.periods)))


def _center_frame(m: Manifold, center):
    return m.frame(np.asarray(center, dtype=float))


def polar_grid(m: Manifold, center, r_in: float, r_out: float, n_radial: int,
               n_theta: int) -> QuadratureGrid:
    """Geodesic polar grid on the annulus r_in <= dist(center, .) <= r_out.

    Radial cells carry exact integrals of the radial volume density
    (sin^{n-1} on spheres, s^{n-1} on tori) so a ball integrates exactly.
    """
    if not 0 <= r_in < r_out:
        raise DomainError("need 0 <= r_in < r_out")
    if r_out > m.injectivity_radius() * (1 + 1e-12):
        raise DomainError("outer radius exceeds injectivity radius")
    n = m.dim
    lat = sphere_lattice(n - 1, n_theta)
    dirs = lat.flat_points()
    E = _center_frame(m, center)
    amb_dirs = dirs @ E
    edges = np.linspace(r_in, r_out, n_radial + 1)
    s = 0.5 * (edges[1:] + edges[:-1])
    if m.is_sphere:
        R = m.radius
        rw = R ** n * sin_power_cells(n - 1, edges / R)
    else:
        rw = np.diff(edges ** n) / n
    pts = m.exp(np.asarray(center, float), s[:, None, None] * amb_dirs[None, :, :])
    w = rw[:, None] * lat.flat_weights()[None, :]
    rad = np.broadcast_to(s[:, None], w.shape)
    return QuadratureGrid(pts.reshape(-1, m.ambient_dim), w.reshape(-1),
                          (r_out - r_in) / n_radial,
                          radial=rad.reshape(-1),
                          directions=np.broadcast_to(dirs, (n_radial,) + dirs.shape).reshape(-1, n))


def geodesic_sphere_grid(m: Manifold, center, r: float, n_theta: int) -> QuadratureGrid:
    """Grid on the geodesic sphere of radius ``r`` built by pushing a unit-sphere lattice through exp."""
    if not 0 < r < m.injectivity_radius():
        raise DomainError("radius must lie in (0, injectivity radius)")
    lat = sphere_lattice(m.dim - 1, n_theta)
    E = _center_frame(m, center)
    dirs = lat.flat_points()
    pts = m.exp(np.asarray(center, float), r * (dirs @ E))
    scale = (m.radius * math.sin(r / m.radius)) if m.is_sphere else r
    return QuadratureGrid(pts, lat.flat_weights() * scale ** (m.dim - 1), r * lat.spacing,
                          radial=np.full(len(pts), r), directions=dirs)
