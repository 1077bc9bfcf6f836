"""Cone-replacement surgery: contract a degree-zero slice, build the fence and splice.

The fence over B(0, r) is G(y) = H(y/|y|, 1 - |y|/r) for a null-homotopy H of
the boundary slice.  Comparing the top-order functional of the original graph
with that of the spliced competitor measures whether the pole can be removed
at a profit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .fields import LocalGraph, UnitField, local_graph
from .geometry import sphere_lattice
from .singularity import ResolutionError, SphereSliceMap, _as_graph, degree, slice_map
from .volume import Ball, _integrate_terms, _region_grid, flat_polar_grid, graph_integral, volume

MAX_JUMP = 2 * math.sin(math.pi / 8)


class TopologicalObstruction(ValueError):
    """The slice has nonzero degree and cannot be contracted."""


class NonContractible(RuntimeError):
    """No constructive contraction was found within the iteration budget."""


def _normalize(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _rotate_about(axis, angle, w):
    # rotation of w by ``angle`` about the unit ``axis`` (R^3 only)
    c = np.cos(angle)[..., None]
    s = np.sin(angle)[..., None]
    return w * c + np.cross(axis, w) * s + axis * np.sum(axis * w, -1, keepdims=True) * (1 - c)


def _rotate_complex(p, angle, d, w):
    """Rotate the part of w normal to d by ``angle`` toward |w_perp| J u, u = d projected to p^perp.

    J is a fixed complex structure on p^perp (even dimension).  For a
    Householder slice w = p - 2 <p, d> d the normal part lies in span(p, u),
    so J u is orthogonal to it and the result stays on the unit sphere.
    """
    k = p.shape[0]
    basis = np.linalg.qr(np.column_stack([p, np.eye(k)]))[0][:, 1:k].T
    u = d - (d @ p)[..., None] * p
    c = u @ basis.T
    Jc = np.empty_like(c)
    Jc[..., 0::2] = -c[..., 1::2]
    Jc[..., 1::2] = c[..., 0::2]
    Ju = Jc @ basis
    un = np.linalg.norm(Ju, axis=-1, keepdims=True)
    Ju = np.where(un > 1e-15, Ju / np.where(un > 1e-15, un, 1.0), 0.0)
    par = np.sum(w * d, -1, keepdims=True) * d
    perp = w - par
    pn = np.linalg.norm(perp, axis=-1, keepdims=True)
    a = np.asarray(angle)[..., None]
    return par + np.cos(a) * perp + np.sin(a) * pn * Ju


def _push(y, q, s):
    """Move y along the great circle away from q; s = 1 lands on -q."""
    cq = np.clip(np.sum(y * q, axis=-1, keepdims=True), -1.0, 1.0)
    alpha = np.arccos(cq)
    w = y - cq * q
    wn = np.linalg.norm(w, axis=-1, keepdims=True)
    w = np.where(wn > 1e-15, w / np.where(wn > 1e-15, wn, 1.0), 0.0)
    a = alpha + np.asarray(s)[..., None] * (np.pi - alpha)
    return np.cos(a) * q + np.sin(a) * w


@dataclass
class Homotopy:
    """H(d, t): S^{n-1} x [0, 1] -> S^{n-1} with H(., 0) = slice and H(., 1) = p0."""
    slice: SphereSliceMap
    p0: np.ndarray
    strategy: str
    _func: Callable = field(repr=False)
    smoothing_steps: int = 0

    def __call__(self, d, t):
        d = _normalize(np.asarray(d, dtype=float))
        t = np.broadcast_to(np.asarray(t, dtype=float), d.shape[:-1])
        if np.any((t < 0) | (t > 1)):
            raise ValueError("homotopy time outside [0, 1]")
        return _normalize(self._func(d, t))


def _gap(values, m, n_theta):
    """An omitted point of the sampled image, or None.

    A point farther than twice the largest adjacent-sample jump from every
    sample is outside the image of the piecewise interpolant.  The antipode
    of the mean value is tried first, then an epsilon-net.
    """
    V = values.reshape(-1, m + 1)
    tree = cKDTree(V)
    thresh = 2 * _jump(values)
    mean = V.mean(axis=0)
    if np.linalg.norm(mean) > 1e-12:
        q0 = -mean / np.linalg.norm(mean)
        if tree.query(q0)[0] > thresh:
            return q0
    net = sphere_lattice(m, 2 * n_theta).flat_points()
    dist, _ = tree.query(net)
    j = int(np.argmax(dist))
    return net[j] if dist[j] > thresh else None


def _jump(values):
    s = SphereSliceMap(None, 1.0, None, values)
    return s.max_jump()


def _slice_func(s: SphereSliceMap):
    return s.func if s.func is not None else s.interpolate


def _push_homotopy(s, q, t_start=0.0, before=None):
    base = before if before is not None else (lambda d, t: _slice_func(s)(d))

    def func(d, t):
        y = base(d, np.minimum(t, t_start))
        sfrac = np.clip((t - t_start) / (1 - t_start), 0, 1)
        return _push(_normalize(y), q, sfrac)

    return func


def _reflection_axis(s: SphereSliceMap):
    """If the slice is d -> p - 2 <p, d> d (Householder reflection of one vector), return p."""
    D = s.lattice.points.reshape(-1, s.dim)
    V = s.values.reshape(-1, s.dim)
    w = s.lattice.flat_weights()
    p = np.sum(w[:, None] * V, axis=0) / np.sum(w) / (1 - 2 / s.dim)
    if not np.isfinite(p).all() or np.linalg.norm(p) < 0.5:
        return None
    p = p / np.linalg.norm(p)
    model = p - 2 * (D @ p)[:, None] * D
    if np.max(np.linalg.norm(model - V, axis=-1)) < 1e-6:
        return p
    return None


def contract_homotopy(s: SphereSliceMap, max_iter: int = 1000, tau: float = 0.5,
                      max_snapshots: int = 100) -> Homotopy:
    """Null-homotopy of a degree-zero slice.

    Order of attempts: geodesic push away from an omitted value; fiberwise
    averaging (kNN smoothing + renormalization) until a value is omitted,
    then the push; for reflection-type slices on even spheres a rotation
    about the domain direction (a complex structure fixes its sense when
    m > 2).  The smoothing path is abandoned if adjacent samples separate
    by more than pi/4.
    """
    deg = degree(s)
    if deg.degree != 0:
        raise TopologicalObstruction(f"slice has degree {deg.degree}")
    m = s.lattice.m
    q = _gap(s.values, m, s.lattice.n_theta)
    if q is not None:
        return Homotopy(s, -q, "push", _push_homotopy(s, q))

    D = s.lattice.flat_points()
    shape = s.values.shape
    V = s.values.reshape(-1, m + 1).copy()
    nb = cKDTree(D).query(D, k=2 * m + 5)[1][:, 1:]
    stride = max(1, max_iter // max_snapshots)
    snaps = [V.copy()]
    ok = True
    for it in range(1, max_iter + 1):
        V = _normalize((1 - tau) * V + tau * V[nb].mean(axis=1))
        if _jump(V.reshape(shape)) > MAX_JUMP:
            ok = False
            break
        done = it % 5 == 0 and (q := _gap(V.reshape(shape), m, s.lattice.n_theta)) is not None
        if done or it % stride == 0:
            snaps.append(V.copy())
        if done:
            break
    if ok and q is not None:
        maps = [SphereSliceMap(s.center, s.radius, s.lattice, a.reshape(shape)) for a in snaps]
        exact = _slice_func(s)
        t_s = 0.5
        K = len(maps) - 1

        def smooth(d, t):
            x = np.clip(t / t_s, 0, 1) * K
            k = np.minimum(np.floor(x).astype(int), K - 1)
            frac = (x - k)[..., None]
            out = np.empty(d.shape)
            base0 = maps[0].interpolate(d)
            for kk in np.unique(k):
                sel = k == kk
                a = maps[kk].interpolate(d[sel])
                b = maps[kk + 1].interpolate(d[sel])
                out[sel] = (1 - frac[sel]) * a + frac[sel] * b - base0[sel]
            return exact(d) + out

        return Homotopy(s, -q, "smooth+push", _push_homotopy(s, q, t_s, smooth), it)

    if m == 2:
        p = _reflection_axis(s)
        if p is not None:
            exact = _slice_func(s)

            def rotate(d, t):
                return _rotate_about(d, -np.pi * t, exact(d))

            return Homotopy(s, -p, "axis-rotation", rotate)
    elif m % 2 == 0:
        p = _reflection_axis(s)
        if p is not None:
            exact = _slice_func(s)

            def rotate(d, t):
                return _rotate_complex(p, np.pi * np.asarray(t), d, exact(d))

            return Homotopy(s, -p, "axis-rotation", rotate)
    raise NonContractible("smoothing did not open a gap in the image")


class Fence:
    """G(y) = H(y/|y|, 1 - |y|/r) on the closed ball of radius r."""

    def __init__(self, homotopy: Homotopy, r: float):
        self.homotopy = homotopy
        self.r = r
        self.dim = homotopy.slice.dim

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        rad = np.linalg.norm(y, axis=-1)
        out = np.empty(y.shape)
        centre = rad < 1e-300
        out[centre] = self.homotopy.p0
        if np.any(~centre):
            yy = y[~centre]
            rr = rad[~centre]
            out[~centre] = self.homotopy(yy, np.clip(1 - rr / self.r, 0, 1))
        return out

    def as_graph(self) -> LocalGraph:
        return LocalGraph(self.__call__, self.dim, self.r, None, "fence")


def fence_field(hm: Homotopy, r: float) -> LocalGraph:
    return Fence(hm, r).as_graph()


@dataclass
class Competitor:
    original: LocalGraph
    r: float
    fence: Fence
    p0: np.ndarray

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        rad = np.linalg.norm(y, axis=-1)
        inside = rad < self.r
        out = np.empty(y.shape)
        if np.any(~inside):
            out[~inside] = self.original.func(y[~inside])
        if np.any(inside):
            out[inside] = self.fence(y[inside])
        return out

    def as_graph(self) -> LocalGraph:
        return LocalGraph(self.__call__, self.original.dim, self.original.radius, self.original.center,
                          "competitor")


def build_competitor(f, r: float, n_theta: int = 24, center=None) -> Competitor:
    """Replace the graph inside B(0, r) by the fence of its boundary slice."""
    u = _as_graph(f, center)
    s = slice_map(u, r, n_theta)
    hm = contract_homotopy(s)
    fence = Fence(hm, r)
    return Competitor(u, r, fence, hm.p0)


def _v0_ball(func_graph, r_in, r_out, h, n_theta, n_radial):
    n = func_graph.dim
    return graph_integral(func_graph, flat_polar_grid(n, r_in, r_out, n_radial, n_theta), n - 1)


def fence_v0(c: Competitor, h: float, n_theta: int = 32, n_radial: int = 32) -> float:
    return _v0_ball(c.fence.as_graph(), 0.0, c.r, h, n_theta, n_radial)


def cone_v0(u: LocalGraph, r: float, h: float, n_theta: int = 32, n_radial: int = 32) -> float:
    """Top-order term of the original graph on B(0, r), pole ball excluded and extrapolated."""
    rho = min(2 * h, r / 8)
    v1 = _v0_ball(u, rho, r, h, n_theta, n_radial)
    v2 = _v0_ball(u, 2 * rho, r, h, n_theta, n_radial)
    return 2 * v1 - v2


def surgery_gain(f, r: float, R: float, h: float, n_theta: int = 32, n_radial: int = 32,
                 center=None, competitor: Optional[Competitor] = None) -> float:
    """V0(original, B(R)) - V0(competitor, B(R)); the shared annulus r < |y| < R cancels exactly."""
    if not r < R:
        raise ValueError("need r < R")
    u = _as_graph(f, center)
    comp = competitor or build_competitor(u, r, n_theta)
    annulus = _v0_ball(u, r, R, h, n_theta, n_radial)
    original = cone_v0(u, r, h, n_theta, n_radial) + annulus
    spliced = fence_v0(comp, h, n_theta, n_radial) + annulus
    return original - spliced


@dataclass
class SurgeryScan:
    radii: list
    fence_v0: list
    cone_v0: list
    gains: list
    fit_A: float
    fit_B: float
    fit_residual: float
    fence_slope: float
    cone_slope: float
    r_star: Optional[float]
    n: int
    strategy: str

    def rows(self):
        return [(r, c, c - g, g) for r, c, g in zip(self.radii, self.cone_v0, self.gains)]


def surgery_scan(f, R: float, h: float, n_levels: int = 10, n_theta: int = 32, n_radial: int = 32,
                 center=None) -> SurgeryScan:
    """Gain curve on r = R 2^{-j}, log-log slopes and the least-squares fit B r^n - A r^{n-1}."""
    u = _as_graph(f, center)
    n = u.dim
    radii = [R * 2.0 ** -j for j in range(1, n_levels + 1)]
    fences, cones, gains = [], [], []
    strategy = ""
    for r in radii:
        comp = build_competitor(u, r, n_theta)
        strategy = comp.fence.homotopy.strategy
        hr = h * r / R
        fv = fence_v0(comp, hr, n_theta, n_radial)
        cv = cone_v0(u, r, hr, n_theta, n_radial)
        fences.append(fv)
        cones.append(cv)
        gains.append(cv - fv)
    lr = np.log(radii)
    fence_slope = float(np.polyfit(lr, np.log(np.abs(fences)), 1)[0])
    cone_slope = float(np.polyfit(lr, np.log(np.abs(cones)), 1)[0])
    rr = np.asarray(radii)
    M = np.stack([rr ** n, -rr ** (n - 1)], axis=1)
    g = np.asarray(gains)
    (B, A), *_ = np.linalg.lstsq(M, g, rcond=None)
    resid = float(np.linalg.norm(M @ [B, A] - g) / max(np.linalg.norm(g), 1e-300))
    pos = [r for r, gg in zip(radii, gains) if gg > 0]
    return SurgeryScan(radii, fences, cones, gains, float(A), float(B), resid, fence_slope,
                       cone_slope, max(pos) if pos else None, n, strategy)


# -- splicing into the manifold field -----------------------------------------------------

class SplicedField(UnitField):
    """The original field outside the geodesic ball B(x0, r) and the transported fence inside."""

    def __init__(self, f: UnitField, center, comp: Competitor):
        m = f.manifold
        self.original = f
        self.center = np.asarray(center, dtype=float)
        self.comp = comp
        self.r = comp.r
        E0 = m.frame(self.center)

        def func(x):
            x = np.asarray(x, dtype=float)
            d = m.distance(self.center, x)
            inside = d < self.r
            out = np.empty(x.shape)
            if np.any(~inside):
                out[~inside] = f.evaluate(x[~inside])
            if np.any(inside):
                xi = x[inside]
                y = m.log(self.center, xi) @ E0.T
                g = comp.fence(y) @ E0
                out[inside] = m.transport(self.center, xi, g)
            return out

        poles = [p for p in f.poles if m.distance(self.center, p) >= self.r]
        super().__init__(m, func, poles=poles, name=f.name + "-spliced")


def splice(f: UnitField, center, r: float, n_theta: int = 24) -> SplicedField:
    comp = build_competitor(local_graph(f, center), r, n_theta)
    return SplicedField(f, center, comp)


@dataclass
class FullComparison:
    r: float
    v_original: float
    v_competitor: float
    error_bar: float
    strategy: str

    @property
    def difference(self) -> float:
        return self.v_original - self.v_competitor


def full_volume_comparison(f: UnitField, r: float, h: float, n_theta: int = 24) -> FullComparison:
    """Full volume of a one-pole field and of its spliced competitor, with a refinement error bar.

    The original is integrated with pole exclusion; the competitor as the
    annulus r <= d(pole, .) <= pi R plus the fence ball.  The error bar
    combines the h vs h/2 changes of both totals.
    """
    m = f.manifold
    if len(f.poles) != 1 or not m.is_sphere:
        raise ValueError("full comparison needs a one-pole field on a sphere")
    pole = f.poles[0]
    g = splice(f, pole, r, n_theta)
    outer = m.injectivity_radius()

    def totals(hh):
        ann, _ = _integrate_terms(f, _region_grid(m, Ball(tuple(pole), outer, r), hh), hh, "fd")
        v_f = volume(f, hh, method="fd", pole_policy="exclude").total
        ball_g = volume(g, hh, Ball(tuple(pole), r), method="fd").total
        return v_f, ann + ball_g

    v1, c1 = totals(h)
    v2, c2 = totals(h / 2)
    err = math.hypot(v2 - v1, c2 - c1)
    return FullComparison(r, v2, c2, err, g.comp.fence.homotopy.strategy)
