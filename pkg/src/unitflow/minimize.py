"""Projected-gradient descent of the discrete volume of a grid-sampled unit field."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .fields import GridField
from .geometry import DomainError
from .volume import elementary_symmetric


class StallError(RuntimeError):
    """Line search failed too many times in a row."""


def _normalize(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def discrete_volume(f: GridField, values=None) -> float:
    """Lattice quadrature of sqrt(sum_{k<n} e_k(J^T J)) with the lattice Jacobian."""
    J = f.lattice_jacobian(values)
    n = f.manifold.dim
    A = np.swapaxes(J, -1, -2) @ J
    e = elementary_symmetric(np.clip(np.linalg.eigvalsh(A), 0, None), n - 1)
    return math.fsum((f.lattice.weights * np.sqrt(e.sum(axis=-1))).ravel())


def _integrand_derivative(J):
    """F = sqrt(sum_{k<n} e_k(A)), A = J^T J; returns F and dF/dJ.

    de_k/dA = sum_{j<k} (-1)^j e_{k-1-j}(A) A^j, so dF/dJ = J (sum_k de_k/dA) / F.
    """
    n = J.shape[-1]
    A = np.swapaxes(J, -1, -2) @ J
    e = elementary_symmetric(np.clip(np.linalg.eigvalsh(A), 0, None), n - 1)
    F = np.sqrt(e.sum(axis=-1))
    powers = [np.broadcast_to(np.eye(n), A.shape)]
    for _ in range(n - 2):
        powers.append(powers[-1] @ A)
    M = np.zeros(A.shape)
    for k in range(1, n):
        for j in range(k):
            M = M + (-1) ** j * e[..., k - 1 - j, None, None] * powers[j]
    return F, (J @ M) / F[..., None, None]


def raw_gradient(f: GridField, values=None) -> np.ndarray:
    """Exact derivative of ``discrete_volume`` with respect to every sample (before projection)."""
    U = f.values if values is None else values
    lat = f.lattice
    n = f.manifold.dim
    J = f.lattice_jacobian(U)
    _, G = _integrand_derivative(J)
    G = G * lat.weights[..., None, None]
    out = np.zeros(U.shape)
    flat = out.reshape(-1, U.shape[-1])
    for b in range(n):
        # d J[., a, b] / d U[nb(+/-)] = +/- frames[a] / step_b
        c = np.einsum("...a,...aj->...j", G[..., :, b], lat.frames) / lat.step_length(b)[..., None]
        for sign in (+1, -1):
            idx = np.ravel_multi_index(lat.neighbours(b, sign), lat.shape)
            np.add.at(flat, idx.ravel(), sign * c.reshape(-1, U.shape[-1]))
    return out


def project(f: GridField, g, values=None) -> np.ndarray:
    """Component tangent to the manifold and to the unit fibre at each sample."""
    U = f.values if values is None else values
    g = f.manifold.project_tangent(f.lattice.points, g)
    return g - np.sum(g * U, axis=-1, keepdims=True) * U


def volume_gradient(f: GridField, h=None) -> np.ndarray:
    """Projected gradient of the discrete volume; ``h`` is fixed by the lattice and only checked."""
    if not isinstance(f, GridField):
        raise DomainError("volume_gradient needs a grid field")
    if len(f.poles):
        raise DomainError("pole-bearing fields are not descended")
    if h is not None and not math.isclose(h, f.lattice.h, rel_tol=1e-9):
        raise DomainError("h does not match the lattice spacing")
    return project(f, raw_gradient(f))


def gradient_norm(f: GridField, g) -> float:
    """L^2 norm of the gradient density g / w."""
    w = f.lattice.weights
    return math.sqrt(math.fsum((np.sum(g * g, axis=-1) / w).ravel()))


def weak_gradient_norm(f: GridField, g, n_tests: int = 20, seed: int = 0) -> float:
    """Largest |<g, phi>| over seeded smooth tangent test fields phi with unit L^2 norm.

    This is the first variation seen by smooth perturbations.  Unlike the L^2
    density norm it is insensitive to O(1/h) residuals confined to the
    coordinate axes of the S^3 lattice.
    """
    from .fields import _smooth_noise
    rng = np.random.default_rng(seed)
    pts = f.lattice.points
    w = f.lattice.weights
    m = f.manifold
    scale = 1.5 / m.radius if m.is_sphere else None
    best = 0.0
    for _ in range(n_tests):
        noise = _smooth_noise(pts, 3, rng, scale, None if m.is_sphere else m.periods)
        phi = project(f, noise)
        nrm = math.sqrt(math.fsum((np.sum(phi * phi, axis=-1) * w).ravel()))
        if nrm > 0:
            best = max(best, abs(float(np.sum(g * phi))) / nrm)
    return best


@dataclass
class DescentState:
    field: GridField
    step: float = 1.0
    iteration: int = 0
    history: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    status: str = "running"

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "volume", "grad_norm"])
        for k, (v, g) in enumerate(zip(self.history, self.grad_norms)):
            w.writerow([k, repr(v), repr(g)])
        return buf.getvalue()


ARMIJO_C = 1e-4
SHRINK = 0.5
GROW = 2.0
MAX_FAILS = 50


def _retract(f, U, g, t):
    V = f.manifold.project_tangent(f.lattice.points, U - t * g)
    return _normalize(V)


def descend(state: DescentState, max_iter: int = 500, tol: float = 1e-6, target=None,
            raise_on_stall: bool = False) -> DescentState:
    """Armijo backtracking along the projected gradient; iterates renormalized fibrewise.

    Stops when the gradient norm drops below ``tol``, when the volume is
    within ``target`` = (value, relative tolerance) of a known minimum, or
    after ``max_iter`` accepted steps.
    """
    f = state.field
    U = f.values
    vol = discrete_volume(f, U)
    if not state.history:
        state.history.append(vol)
    fails = 0
    while True:
        g = project(f, raw_gradient(f, U), U)
        gn = gradient_norm(f, g)
        g2 = float(np.sum(g * g))
        if len(state.grad_norms) < len(state.history):
            state.grad_norms.append(gn)
        if gn < tol:
            state.status = "converged"
            break
        if target is not None and abs(vol - target[0]) <= target[1] * abs(target[0]):
            state.status = "converged"
            break
        if state.iteration >= max_iter:
            state.status = "max_iter"
            break
        t = state.step
        while True:
            V = _retract(f, U, g, t)
            nv = discrete_volume(f, V)
            if nv < vol and nv <= vol - ARMIJO_C * t * g2:
                break
            fails += 1
            t *= SHRINK
            if fails >= MAX_FAILS:
                state.status = "stalled"
                state.field = f.with_values(U)
                if raise_on_stall:
                    raise StallError(f"line search failed {MAX_FAILS} times")
                return state
        fails = 0
        U, vol = V, nv
        state.iteration += 1
        state.step = t * GROW
        state.history.append(vol)
    state.field = f.with_values(U)
    return state
