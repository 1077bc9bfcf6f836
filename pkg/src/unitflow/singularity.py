"""Horizontal dilations, slices on small spheres, h-cones and the degree of a pole."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .fields import LocalGraph, UnitField, local_graph
from .geometry import DomainError, SphereLattice, sphere_area, sphere_lattice
from .volume import limiting_volume_v0, manifold_v0


class ResolutionError(ValueError):
    """Samples are too coarse to resolve the quantity asked for."""


def _normalize(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _as_graph(f, center=None, radius=None) -> LocalGraph:
    if isinstance(f, LocalGraph):
        return f
    if isinstance(f, HCone):
        return f.as_graph()
    if center is None:
        raise ValueError("a centre is needed to chart a manifold field")
    return local_graph(f, center, radius)


@dataclass
class SphereSliceMap:
    """Samples of a map S^{n-1} -> S^{n-1} on a hyperspherical lattice.

    ``func`` (when present) evaluates the underlying map exactly at arbitrary
    unit directions; otherwise values are interpolated from the samples.
    """
    center: object
    radius: float
    lattice: SphereLattice
    values: np.ndarray
    func: Optional[Callable] = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.lattice.m + 1

    def max_jump(self) -> float:
        """Largest chord between lattice-adjacent samples."""
        V = self.values
        jumps = []
        for ax in range(V.ndim - 1):
            periodic = ax == V.ndim - 2
            if periodic:
                d = V - np.roll(V, 1, axis=ax)
            else:
                d = np.diff(V, axis=ax)
            jumps.append(np.max(np.linalg.norm(d, axis=-1)))
        return float(max(jumps))

    def interpolation_tolerance(self) -> float:
        return 0.5 * self.max_jump()

    def _interpolator(self):
        if getattr(self, "_interp", None) is None:
            axes = list(self.lattice.angles)
            V = self.values
            # periodic padding in azimuth, clamped padding at the polar ends
            phi = axes[-1]
            dphi = phi[1] - phi[0]
            axes[-1] = np.concatenate([[phi[0] - dphi], phi, [phi[-1] + dphi]])
            V = np.concatenate([V[..., -1:, :], V, V[..., :1, :]], axis=-2)
            for ax in range(len(axes) - 1):
                th = axes[ax]
                axes[ax] = np.concatenate([[0.0], th, [math.pi]])
                first = np.take(V, [0], axis=ax)
                last = np.take(V, [-1], axis=ax)
                V = np.concatenate([first, V, last], axis=ax)
            self._interp = RegularGridInterpolator(tuple(axes), V)
        return self._interp

    def interpolate(self, d):
        from .geometry import to_polar
        d = np.asarray(d, dtype=float)
        ang = to_polar(_normalize(d))
        return _normalize(self._interpolator()(ang))

    def __call__(self, d):
        if self.func is not None:
            return self.func(_normalize(np.asarray(d, dtype=float)))
        return self.interpolate(d)

    def sup_distance(self, other: "SphereSliceMap") -> float:
        if other.values.shape != self.values.shape:
            raise ValueError("slices live on different lattices")
        return float(np.max(np.linalg.norm(self.values - other.values, axis=-1)))


class HCone:
    """Radial extension u(y) = slice(y / |y|) of a slice map."""

    def __init__(self, boundary: SphereSliceMap, name="h-cone"):
        self.boundary = boundary
        self.name = name

    @property
    def dim(self):
        return self.boundary.dim

    def __call__(self, y):
        return self.boundary(np.asarray(y, dtype=float))

    def as_graph(self) -> LocalGraph:
        return LocalGraph(self.__call__, self.dim, np.inf, None, self.name, singular_at_origin=True)


def dilate(f, lam: float, R: float = np.inf, center=None) -> LocalGraph:
    """u_lam(y) = u(lam y) on B(0, R) in the flat chart at the centre."""
    if not 0 < lam <= 1:
        raise ValueError("dilation factor must lie in (0, 1]")
    u = _as_graph(f, center)
    if lam * R > u.radius * (1 + 1e-12):
        raise DomainError("field not defined on B(0, lam R)")
    if lam == 1:
        return LocalGraph(u.func, u.dim, min(R, u.radius), u.center, u.name, u.singular_at_origin)
    g = u.dilate(lam)
    g.radius = min(R, g.radius)
    return g


def slice_map(f, r: float, n_theta: int = 32, center=None) -> SphereSliceMap:
    """Restriction of the chart graph to the sphere of radius r, as a map S^{n-1} -> S^{n-1}."""
    u = _as_graph(f, center)
    if not 0 < r <= u.radius:
        raise DomainError("slice radius outside the chart")
    lat = sphere_lattice(u.dim - 1, n_theta)
    vals = _normalize(u.func(r * lat.points))

    def func(d):
        return u.func(r * np.asarray(d))

    return SphereSliceMap(u.center, r, lat, vals, func)


@dataclass
class DegreeResult:
    degree: int
    raw: float

    @property
    def residual(self) -> float:
        return abs(self.raw - self.degree)


def degree(s: SphereSliceMap, tol: float = 0.2) -> DegreeResult:
    """Pulled-back volume form of S^{n-1}, integrated and divided by the sphere's area."""
    V = s.values
    m = s.lattice.m
    if s.max_jump() > 2 * math.sin(math.pi / 8):
        raise ResolutionError("adjacent samples differ by more than pi/4")
    dth = s.lattice.spacing
    dphi = 2 * math.pi / V.shape[-2]
    cols = [V]
    for ax in range(m):
        if ax == m - 1:
            d = (np.roll(V, -1, axis=ax) - np.roll(V, 1, axis=ax)) / (2 * dphi)
        else:
            d = np.gradient(V, dth, axis=ax, edge_order=2)
        cols.append(d)
    M = np.stack(cols, axis=-1)
    dets = np.linalg.det(M)
    raw = math.fsum(dets.ravel()) * dth ** (m - 1) * dphi / sphere_area(m)
    k = int(round(raw))
    if abs(raw - k) > tol:
        raise ResolutionError(f"degree quadrature {raw:.4f} is not near an integer")
    return DegreeResult(k, raw)


@dataclass
class ConeLimit:
    cone: HCone
    defects: list
    converged: bool
    index: int
    lambdas: list
    tolerance: float


def cone_limit(f, R: float, lambdas: Sequence[float] = None, tol: float = None, n_theta: int = 24,
               center=None, min_steps: int = 3) -> ConeLimit:
    """Blow up the graph at the chart origin along a decreasing dilation sequence.

    Stops once consecutive dilated slices at radius R differ by less than
    ``tol`` in sup distance (default: the slice interpolation tolerance),
    after at least ``min_steps`` comparisons.  Non-convergence is reported, not raised.
    """
    u = _as_graph(f, center)
    if lambdas is None:
        lambdas = [2.0 ** -k for k in range(13)]
    lambdas = list(lambdas)
    if any(b >= a for a, b in zip(lambdas, lambdas[1:])) or lambdas[-1] <= 0:
        raise ValueError("dilation factors must strictly decrease towards 0")
    prev = slice_map(dilate(u, lambdas[0], R), R, n_theta)
    if tol is None:
        tol = prev.interpolation_tolerance()
    defects = []
    stop = len(lambdas) - 1
    converged = False
    last = prev
    for j, lam in enumerate(lambdas[1:], start=1):
        cur = slice_map(dilate(u, lam, R), R, n_theta)
        defects.append(cur.sup_distance(prev))
        prev = cur
        last = cur
        if defects[-1] < tol and j >= min_steps:
            stop = j
            converged = True
            break
    return ConeLimit(HCone(last, name=f"cone({u.name})"), defects, converged, stop,
                     lambdas[: stop + 1], tol)


def monotonicity_profile(target, radii: Sequence[float], h: float, center=None):
    """List of (R, V0(B(R)) / R).

    Flat-chart targets (graphs, cones) use the Euclidean top-order term;
    a manifold field with ``center`` uses the Riemannian one on geodesic balls.
    """
    out = []
    for R in radii:
        if isinstance(target, UnitField):
            v = manifold_v0(target, center, R, h)
        else:
            v = limiting_volume_v0(_as_graph(target), R, h)
        out.append((R, v / R))
    return out
