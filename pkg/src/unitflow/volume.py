"""The volume functional, its wedge-power terms and the limiting top-order functional."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .fields import GridField, LocalGraph, UnitField, covariant_derivative, graph_jacobian
from .geometry import DomainError, Manifold, PoleError, QuadratureGrid, manifold_grid, polar_grid, sphere_lattice

CHUNK = 1 << 15


def elementary_symmetric(eigs, kmax=None):
    """e_0..e_kmax of the last axis of ``eigs`` (stacked along a new last axis)."""
    eigs = np.asarray(eigs, dtype=float)
    n = eigs.shape[-1]
    kmax = n if kmax is None else kmax
    e = [np.ones(eigs.shape[:-1])] + [np.zeros(eigs.shape[:-1]) for _ in range(n)]
    for j in range(n):
        lam = eigs[..., j]
        for k in range(j + 1, 0, -1):
            e[k] = e[k] + lam * e[k - 1]
    return np.stack(e[: kmax + 1], axis=-1)


def wedge_terms(J, kmax=None):
    """||(nabla xi)^k||^2 for k = 0..kmax: elementary symmetric functions of the spectrum of J^T J."""
    J = np.asarray(J, dtype=float)
    A = np.swapaxes(J, -1, -2) @ J
    eigs = np.clip(np.linalg.eigvalsh(A), 0.0, None)
    return elementary_symmetric(eigs, kmax)


def wedge_norm_sq(J, k: int):
    """Sum of squared k x k minors of J (0 when k exceeds the rank, 1 when k = 0)."""
    J = np.asarray(J, dtype=float)
    n = J.shape[-1]
    if k < 0:
        raise ValueError("k must be non-negative")
    if k > n:
        return np.zeros(J.shape[:-2])
    return wedge_terms(J, k)[..., k]


def volume_integrand(J, n: int):
    return np.sqrt(np.sum(wedge_terms(J, n - 1), axis=-1))


@dataclass
class VolumeReport:
    total: float
    terms: list            # integral of ||nabla xi^k|| for k = 0..n-1
    h: float
    region: dict
    excluded_radius: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def csv_row(self, header: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["region", "h", "total"] + [f"term{k}" for k in range(len(self.terms))]
        if header:
            w.writerow(cols)
        w.writerow([json.dumps(self.region, sort_keys=True), repr(self.h), repr(self.total)]
                   + [repr(t) for t in self.terms])
        return buf.getvalue()


@dataclass(frozen=True)
class Ball:
    """Geodesic annulus r_in <= d(center, .) <= r_out (a ball when r_in = 0)."""
    center: tuple
    r_out: float
    r_in: float = 0.0

    def describe(self):
        return {"kind": "ball", "center": list(map(float, self.center)), "r_in": self.r_in,
                "r_out": self.r_out}


def _jacobians(f: UnitField, pts, h, method):
    out = []
    for s in range(0, len(pts), CHUNK):
        out.append(covariant_derivative(f, pts[s:s + CHUNK], h, method).matrix)
    return np.concatenate(out) if out else np.zeros((0, f.manifold.dim, f.manifold.dim))


def _integrate_terms(f, grid: QuadratureGrid, h, method):
    n = f.manifold.dim
    J = _jacobians(f, grid.points, h, method)
    T = wedge_terms(J, n)
    roots = np.sqrt(T)
    total = grid.integrate(np.sqrt(np.sum(T[:, :n], axis=-1)))
    terms = [grid.integrate(roots[:, k]) for k in range(n + 1)]
    return total, terms


def _region_grid(m: Manifold, region: Optional[Ball], h: float, r_in=None, n_theta=None):
    if region is None:
        return manifold_grid(m, h)
    r0 = region.r_in if r_in is None else r_in
    n_rad = max(2, int(math.ceil((region.r_out - r0) / h)))
    if n_theta is None:
        scale = m.radius if m.is_sphere else region.r_out
        n_theta = max(4, int(math.ceil(math.pi * scale / h)))
    return polar_grid(m, region.center, r0, region.r_out, n_rad, n_theta)


def _lattice_volume(f: GridField, values=None):
    n = f.manifold.dim
    J = f.lattice_jacobian(values)
    T = wedge_terms(J, n)
    w = f.lattice.weights
    total = math.fsum((w * np.sqrt(np.sum(T[..., :n], axis=-1))).ravel())
    terms = [math.fsum((w * np.sqrt(T[..., k])).ravel()) for k in range(n + 1)]
    return total, terms


def volume(f: UnitField, h: float, region: Optional[Ball] = None, method: str = "auto",
           pole_policy: str = "error", n_theta: Optional[int] = None) -> VolumeReport:
    """Volume of the graph of ``f`` over ``region`` (whole manifold when None).

    Grid fields use their own lattice and the discrete (lattice) derivative.
    With ``pole_policy='exclude'`` a ball of radius 2h around each pole is
    removed and the excluded contribution is recovered by Richardson
    extrapolation in the exclusion radius (linear for cone-type poles).
    """
    m = f.manifold
    n = m.dim
    if isinstance(f, GridField) and region is None:
        total, terms = _lattice_volume(f)
        return VolumeReport(total, terms[:n], f.lattice.h, {"kind": "manifold", **m.describe()})
    desc = region.describe() if region is not None else {"kind": "manifold", **m.describe()}
    poles_inside = []
    for p in f.poles:
        if region is None:
            poles_inside.append(p)
        else:
            d = m.distance(np.asarray(region.center, float), p)
            if region.r_in - 2 * h < d < region.r_out + 2 * h:
                poles_inside.append(p)
    if not poles_inside:
        total, terms = _integrate_terms(f, _region_grid(m, region, h, n_theta=n_theta), h, method)
        return VolumeReport(total, terms[:n], h, desc)
    if pole_policy != "exclude":
        raise PoleError("region contains a pole; use pole_policy='exclude'")
    if len(poles_inside) > 1:
        raise PoleError("exclusion supports one pole per region")
    pole = poles_inside[0]
    if region is None:
        outer = m.injectivity_radius() if m.is_sphere else None
        if outer is None:
            raise PoleError("pole exclusion on a torus needs an explicit ball region")
        reg = Ball(tuple(pole), outer)
    else:
        if m.distance(np.asarray(region.center, float), pole) > 1e-12 or region.r_in > 0:
            raise PoleError("pole exclusion needs the region centred on the pole")
        reg = region
    rho = 2 * h
    t1, k1 = _integrate_terms(f, _region_grid(m, reg, h, r_in=rho, n_theta=n_theta), h, method)
    t2, k2 = _integrate_terms(f, _region_grid(m, reg, h, r_in=2 * rho, n_theta=n_theta), h, method)
    total = 2 * t1 - t2
    terms = [2 * a - b for a, b in zip(k1, k2)]
    return VolumeReport(total, terms[:n], h, desc, excluded_radius=rho,
                        extra={"unextrapolated": t1, "extrapolation_shift": t1 - t2})


def component_mass(f: UnitField, i: int, h: float, region: Optional[Ball] = None,
                   method: str = "auto") -> float:
    """Integral of ||nabla xi^i|| over the region (mass of the i-vertical part of the graph)."""
    m = f.manifold
    if not 0 <= i <= m.dim:
        raise ValueError("order out of range")
    if isinstance(f, GridField) and region is None:
        return _lattice_volume(f)[1][i]
    if len(f.poles):
        for p in f.poles:
            d = m.distance(np.asarray(region.center, float), p) if region is not None else 0.0
            if region is None or region.r_in - 2 * h < d < region.r_out + 2 * h:
                raise PoleError("component_mass needs a pole-free region")
    _, terms = _integrate_terms(f, _region_grid(m, region, h), h, method)
    return terms[i]


# -- flat charts ---------------------------------------------------------------------------

def flat_polar_grid(n: int, r_in: float, r_out: float, n_radial: int, n_theta: int,
                    gauss: bool = True) -> QuadratureGrid:
    lat = sphere_lattice(n - 1, n_theta)
    if gauss:
        x, wx = np.polynomial.legendre.leggauss(n_radial)
        s = r_in + (x + 1) * (r_out - r_in) / 2
        rw = wx * (r_out - r_in) / 2 * s ** (n - 1)
    else:
        edges = np.linspace(r_in, r_out, n_radial + 1)
        s = 0.5 * (edges[1:] + edges[:-1])
        rw = np.diff(edges ** n) / n
    dirs = lat.flat_points()
    pts = s[:, None, None] * dirs[None]
    w = rw[:, None] * lat.flat_weights()[None]
    return QuadratureGrid(pts.reshape(-1, n), w.reshape(-1), (r_out - r_in) / n_radial,
                          radial=np.broadcast_to(s[:, None], w.shape).reshape(-1),
                          directions=np.broadcast_to(dirs, (n_radial,) + dirs.shape).reshape(-1, n))


def flat_box_grid(lo, hi, counts) -> QuadratureGrid:
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    sp = (hi - lo) / np.asarray(counts)
    axes = [lo[k] + (np.arange(c) + 0.5) * sp[k] for k, c in enumerate(counts)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(counts))
    return QuadratureGrid(pts, np.full(len(pts), float(np.prod(sp))), float(sp.max()))


def graph_integral(u: LocalGraph, grid: QuadratureGrid, k: int, h: Optional[float] = None) -> float:
    """Integral of ||grad u^k|| over a flat-chart grid."""
    vals = []
    for s in range(0, len(grid.points), CHUNK):
        J = graph_jacobian(u, grid.points[s:s + CHUNK], h)
        vals.append(np.sqrt(wedge_norm_sq(J, k)))
    return grid.integrate(np.concatenate(vals))


def _flat_resolution(R, h, n):
    n_rad = max(8, min(48, int(math.ceil(R / h))))
    n_theta = max(8, int(math.ceil(math.pi / (h / max(R, h)) / 4)))
    n_theta = min(n_theta, {2: 512, 3: 96}.get(n, 16))
    return n_rad, n_theta


def limiting_volume_v0(u: LocalGraph, R: float, h: float, n_theta: Optional[int] = None,
                       n_radial: Optional[int] = None, extrapolate: bool = True) -> float:
    """Top-order term  int_{B(0,R)} ||grad u^(n-1)||  in a flat chart.

    A ball of radius 2h around the origin is excluded and the result is
    extrapolated linearly to zero exclusion radius.
    """
    if R > u.radius * (1 + 1e-12):
        raise DomainError("R exceeds the chart")
    n = u.dim
    nr, nt = _flat_resolution(R, h, n)
    nr = n_radial or nr
    nt = n_theta or nt
    rho = 2 * h if extrapolate else 0.0
    if rho >= R / 2:
        raise DomainError("h too large for the ball")

    def part(r0):
        return graph_integral(u, flat_polar_grid(n, r0, R, nr, nt), n - 1)

    if not extrapolate:
        return part(0.0)
    v1 = part(rho)
    v2 = part(2 * rho)
    return 2 * v1 - v2


def manifold_v0(f: UnitField, center, R: float, h: float, method: str = "fd") -> float:
    """Riemannian top-order term over the geodesic ball B(center, R), pole excluded and extrapolated."""
    m = f.manifold
    n = m.dim
    rho = 2 * h
    n_theta = max(8, int(math.ceil(math.pi / (4 * h))))
    n_theta = min(n_theta, 48)

    def part(r0):
        n_rad = max(6, int(math.ceil((R - r0) / h)))
        g = polar_grid(m, center, r0, R, n_rad, n_theta)
        J = _jacobians(f, g.points, h, method)
        return g.integrate(np.sqrt(wedge_norm_sq(J, n - 1)))

    return 2 * part(rho) - part(2 * rho)
