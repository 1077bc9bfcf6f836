"""Crofton-type Monte-Carlo estimates of graph masses by projection and sheet counting.

A graph y -> (y, u(y)) in R^n x R^k is projected by a split projection
p1 x p2 : R^n x R^k -> R^{n-i} x R^i.  Averaging the multiplicity-counted
image measure over random projections and dividing by beta(n, n-i) beta(k, i)
estimates the mass of the i-vertical component.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln

from .fields import LocalGraph, UnitField, local_graph
from .geometry import DomainError


_NUDGE = 1e-9 * np.array([0.7548776662, 0.5698402910, 0.4301597090, 0.3247179572, 0.2451223338,
                          0.1850373709, 0.1396783516])


class RasterError(ValueError):
    """Target cells are finer than the sampled graph can resolve."""


def _haar_rows(rng, rows, dim):
    """First ``rows`` rows of a Haar-distributed orthogonal matrix of size dim."""
    if rows == 0:
        return np.zeros((0, dim))
    Q, R = np.linalg.qr(rng.standard_normal((dim, dim)))
    Q = Q * np.sign(np.diag(R))
    return Q.T[:rows].copy()


@dataclass
class SplitProjection:
    p1: np.ndarray   # (n - i, n)
    p2: np.ndarray   # (i, k)
    i: int

    @property
    def n(self):
        return self.p1.shape[1]

    @property
    def k(self):
        return self.p2.shape[1]

    def check(self, tol=1e-12):
        for p in (self.p1, self.p2):
            if p.shape[0] and np.max(np.abs(p @ p.T - np.eye(p.shape[0]))) > tol:
                raise ValueError("projection rows are not orthonormal")

    def __call__(self, y, u):
        return np.concatenate([y @ self.p1.T, u @ self.p2.T], axis=-1)


def sample_projection(n: int, k: int, i: int, rng) -> SplitProjection:
    """Rotation-invariant draw of p1 in O*(n, n-i) and p2 in O*(k, i)."""
    if not 0 <= i <= min(k, n):
        raise ValueError("need 0 <= i <= min(k, n)")
    rng = np.random.default_rng(rng)
    return SplitProjection(_haar_rows(rng, n - i, n), _haar_rows(rng, i, k), i)


def beta_exact(N: int, n: int) -> float:
    """Mean of |det| of the projection of a fixed n-plane onto a random n-plane in R^N."""
    if not 0 <= n <= N:
        raise ValueError("need 0 <= n <= N")
    return math.exp(gammaln((n + 1) / 2) + gammaln((N - n + 1) / 2)
                    - gammaln(0.5) - gammaln((N + 1) / 2))


@dataclass
class BetaEstimate:
    value: float
    stderr: float
    samples: int

    def __float__(self):
        return self.value


def beta_constant(N: int, n: int, samples: int, rng, plane=None) -> BetaEstimate:
    """Monte-Carlo mean of ||p_*(P)|| over random p in O*(N, n) for a reference n-plane P."""
    if n > N:
        raise ValueError("need n <= N")
    if samples < 100:
        raise ValueError("at least 100 samples are needed")
    rng = np.random.default_rng(rng)
    if plane is None:
        P = np.eye(N)[:, :n]
    else:
        P, _ = np.linalg.qr(np.asarray(plane, dtype=float))
        if P.shape != (N, n):
            raise ValueError("plane must be given by n spanning vectors in R^N")
    if n == 0:
        return BetaEstimate(1.0, 0.0, samples)
    G = rng.standard_normal((samples, N, N))
    Q, R = np.linalg.qr(G)
    Q = Q * np.sign(np.diagonal(R, axis1=-2, axis2=-1))[:, None, :]
    p = np.swapaxes(Q, -1, -2)[:, :n]
    vals = np.abs(np.linalg.det(p @ P))
    return BetaEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples)), samples)


# -- sampled graphs ------------------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple


@dataclass(frozen=True)
class Annulus:
    r_in: float
    r_out: float


@dataclass
class GraphPatch:
    """A graph sampled on a structured parameter lattice; Y (..., n) base points, U (..., k) values."""
    Y: np.ndarray
    U: np.ndarray
    h: float

    @property
    def n(self):
        return self.Y.shape[-1]

    @property
    def k(self):
        return self.U.shape[-1]

    def simplices(self):
        """Vertex arrays (S, n+1, n) and (S, n+1, k) of the Kuhn triangulation."""
        n = self.n
        counts = self.Y.shape[:-1]
        base = np.stack(np.meshgrid(*[np.arange(c - 1) for c in counts], indexing="ij"), -1)
        base = base.reshape(-1, n)
        Ys, Us = [], []
        for perm in itertools.permutations(range(n)):
            idx = [base]
            cur = base.copy()
            for ax in perm:
                cur = cur.copy()
                cur[:, ax] += 1
                idx.append(cur)
            idx = np.stack(idx, axis=1)
            t = tuple(idx[..., a] for a in range(n))
            Ys.append(self.Y[t])
            Us.append(self.U[t])
        return np.concatenate(Ys), np.concatenate(Us)

    def lipschitz(self) -> float:
        """Largest ratio |delta(y, u)| / |delta y| over lattice edges."""
        best = 0.0
        for ax in range(self.n):
            dy = np.linalg.norm(np.diff(self.Y, axis=ax), axis=-1)
            du = np.linalg.norm(np.diff(self.U, axis=ax), axis=-1)
            ok = dy > 0
            best = max(best, float(np.max(np.sqrt(dy[ok] ** 2 + du[ok] ** 2) / dy[ok])))
        return best

    def mass(self) -> float:
        """Area of the piecewise-linear graph (sum of simplex n-volumes in R^{n+k})."""
        Ys, Us = self.simplices()
        V = np.concatenate([Ys, Us], axis=-1)
        E = V[:, 1:] - V[:, :1]
        G = E @ np.swapaxes(E, -1, -2)
        return math.fsum(np.sqrt(np.clip(np.linalg.det(G), 0, None)) / math.factorial(self.n))


def graph_patch(f, region, h: float, center=None) -> GraphPatch:
    """Sample a chart graph (or a flat-torus field) on a lattice of spacing about h."""
    if isinstance(f, UnitField):
        if f.manifold.is_sphere:
            if center is None:
                raise ValueError("a centre is needed to chart a sphere field")
            f = local_graph(f, center)
        else:
            P = np.asarray(f.manifold.periods, dtype=float)
            if region is None:
                region = Box(tuple(np.zeros_like(P)), tuple(P))
            Y = _box_lattice(region, h)
            return GraphPatch(Y, f.evaluate(f.manifold.wrap(Y)), h)
    if not isinstance(f, LocalGraph):
        raise TypeError("expected a LocalGraph or UnitField")
    if isinstance(region, Annulus):
        if f.dim != 2:
            raise ValueError("annulus patches are planar")
        if region.r_in <= 0 and f.singular_at_origin:
            raise DomainError("annulus must avoid the singular origin")
        nr = max(2, int(math.ceil((region.r_out - region.r_in) / h))) + 1
        nphi = max(8, int(math.ceil(2 * math.pi * region.r_out / h))) + 1
        rho = np.linspace(region.r_in, region.r_out, nr)
        phi = np.linspace(0, 2 * math.pi, nphi)
        R, F = np.meshgrid(rho, phi, indexing="ij")
        Y = np.stack([R * np.cos(F), R * np.sin(F)], -1)
        Y[:, -1] = Y[:, 0]
    elif isinstance(region, Box):
        Y = _box_lattice(region, h)
    else:
        raise TypeError("region must be a Box or an Annulus")
    if np.max(np.linalg.norm(Y, axis=-1)) > f.radius * (1 + 1e-12):
        raise DomainError("region leaves the chart")
    return GraphPatch(Y, f.func(Y), h)


def _box_lattice(box: Box, h: float):
    lo = np.asarray(box.lo, float)
    hi = np.asarray(box.hi, float)
    axes = [np.linspace(a, b, max(2, int(math.ceil((b - a) / h))) + 1) for a, b in zip(lo, hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1)


# -- multiplicity counting -----------------------------------------------------------------

@dataclass
class MultiplicityField:
    origin: np.ndarray
    cellsize: float
    counts: np.ndarray

    def measure(self) -> float:
        return float(self.counts.sum()) * self.cellsize ** self.counts.ndim


def multiplicity_count(patch: GraphPatch, proj: SplitProjection, cellsize: float,
                       simplices=None, shift=None) -> MultiplicityField:
    """Number of graph sheets over each target cell centre.

    The sampled graph is triangulated and each simplex is projected; a cell
    counts every projected simplex containing its centre, so sheets are
    counted once each and folds are resolved at the simplex scale.
    ``shift`` (fractions of a cell) offsets the target lattice; a uniformly
    random shift makes the counted measure unbiased.
    """
    if cellsize < 2 * patch.lipschitz() * patch.h * (1 - 1e-9):
        raise RasterError("cellsize below 2 x Lipschitz bound x sampling step")
    n = patch.n
    Ys, Us = simplices if simplices is not None else patch.simplices()
    Z = proj(Ys, Us)                                   # (S, n+1, n)
    lo = Z.reshape(-1, n).min(axis=0)
    frac = np.zeros(n) if shift is None else np.asarray(shift, dtype=float)
    origin = (np.floor(lo / cellsize - frac) + frac) * cellsize
    shape = tuple(np.floor((Z.reshape(-1, n).max(axis=0) - origin) / cellsize).astype(int) + 1)
    counts = np.zeros(shape, dtype=np.int64)
    E = np.swapaxes(Z[:, 1:] - Z[:, :1], -1, -2)       # columns are edge vectors
    det = np.linalg.det(E)
    keep = np.abs(det) > 1e-14 * cellsize ** n
    if not np.any(keep):
        return MultiplicityField(origin, cellsize, counts)
    Z, E = Z[keep], E[keep]
    Einv = np.linalg.inv(E)
    cmin = np.ceil((Z.min(axis=1) - origin) / cellsize - 0.5).astype(int)
    cmax = np.floor((Z.max(axis=1) - origin) / cellsize - 0.5).astype(int)
    span = int(np.max(cmax - cmin)) + 1 if len(cmin) else 0
    for off in itertools.product(range(max(span, 0)), repeat=n):
        cell = cmin + np.asarray(off)
        ok = np.all(cell <= cmax, axis=1)
        if not np.any(ok):
            continue
        # a fixed generic nudge sends centres on shared faces to exactly one simplex
        c = origin + (cell[ok] + 0.5) * cellsize + _NUDGE[:n] * cellsize
        lam = np.einsum("sij,sj->si", Einv[ok], c - Z[ok, 0])
        inside = np.all(lam >= 0, axis=1) & (lam.sum(axis=1) <= 1)
        np.add.at(counts, tuple(cell[ok][inside].T), 1)
    return MultiplicityField(origin, cellsize, counts)


@dataclass
class CroftonEstimate:
    estimate: float
    stderr: float
    i: int
    n_projections: int
    cellsize: float
    reference: Optional[float] = None

    def __iter__(self):
        return iter((self.estimate, self.stderr))

    def csv_row(self, header: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(["i", "n_projections", "cellsize", "estimate", "stderr", "reference"])
        w.writerow([self.i, self.n_projections, repr(self.cellsize), repr(self.estimate),
                    repr(self.stderr), "" if self.reference is None else repr(self.reference)])
        return buf.getvalue()


def crofton_mass_estimate(f, region, i: int, n_projections: int, cellsize: float, rng,
                          h: Optional[float] = None, center=None, workers: int = 1,
                          reference: Optional[float] = None) -> CroftonEstimate:
    """Mean projected multiplicity measure over random split projections, normalised by beta constants.

    Each projection gets its own random raster offset, so the raster error
    averages out with the projection noise.
    """
    patch = f if isinstance(f, GraphPatch) else graph_patch(f, region, h or cellsize / 4, center)
    n, k = patch.n, patch.k
    if not 0 <= i <= min(n, k):
        raise ValueError("order out of range")
    rng = np.random.default_rng(rng)
    projs = [(sample_projection(n, k, i, rng), rng.random(n)) for _ in range(n_projections)]
    simp = patch.simplices()
    norm = beta_exact(n, n - i) * beta_exact(k, i)

    def one(ps):
        return multiplicity_count(patch, ps[0], cellsize, simp, ps[1]).measure()

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            vals = np.array(list(ex.map(one, projs)))
    else:
        vals = np.array([one(p) for p in projs])
    est = float(vals.mean() / norm)
    se = float(vals.std(ddof=1) / math.sqrt(len(vals)) / norm) if len(vals) > 1 else float("inf")
    return CroftonEstimate(est, se, i, n_projections, cellsize, reference)
