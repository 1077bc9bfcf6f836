import math

import numpy as np
import pytest

from unitflow import minimize as M
from unitflow.fields import constant_field, hopf_field, make_lattice, perturb_field, sample_field
from unitflow.geometry import DomainError, sphere, torus


def _torus_field(amp=0.2, seed=1, n=8):
    m = torus((1.0, 1.0, 1.0))
    g = sample_field(constant_field(m, (0, 0, 1.0)), make_lattice(m, (n, n, n)))
    return perturb_field(g, amp, seed) if amp else g


def _hopf_grid(n, amp=0.0, seed=2):
    m = sphere(3)
    g = sample_field(hopf_field(m), make_lattice(m, (n, 2 * n)))
    return perturb_field(g, amp, seed) if amp else g


def test_constant_field_zero_gradient():
    g = M.volume_gradient(_torus_field(0))
    assert np.max(np.abs(g)) == 0


@pytest.mark.parametrize("make", [lambda: _torus_field(0.2, 3, 6), lambda: _hopf_grid(6, 0.1, 4)])
def test_gradient_matches_central_differences(make):
    f = make()
    U = f.values
    g = M.raw_gradient(f)
    rng = np.random.default_rng(0)
    for _ in range(20):
        d = rng.normal(size=U.shape)
        eps = 1e-5
        fd = (M.discrete_volume(f, U + eps * d) - M.discrete_volume(f, U - eps * d)) / (2 * eps)
        assert abs(fd - np.sum(g * d)) <= 1e-4 * abs(fd)


def test_projected_gradient_is_tangent():
    f = _hopf_grid(6, 0.1)
    g = M.volume_gradient(f)
    assert np.max(np.abs(np.sum(g * f.values, -1))) < 1e-12
    assert np.max(np.abs(np.sum(g * f.lattice.points, -1))) < 1e-12


def test_gradient_requires_grid_and_matching_h():
    with pytest.raises(DomainError):
        M.volume_gradient(hopf_field(sphere(3)))
    f = _torus_field(0)
    with pytest.raises(DomainError):
        M.volume_gradient(f, h=0.3)


def test_hopf_weak_gradient_norm_decreases():
    norms = [M.weak_gradient_norm(f, M.volume_gradient(f)) for f in (_hopf_grid(n) for n in (8, 16, 32))]
    assert norms[0] > norms[1] > norms[2]


def test_hopf_interior_gradient_density_decreases():
    # away from the two coordinate circles of the lattice the residual decays with h
    out = []
    for n in (8, 16, 32):
        f = _hopf_grid(n)
        g = M.volume_gradient(f)
        dens = np.linalg.norm(g, axis=-1) / f.lattice.weights
        out.append(dens[n // 4: 3 * n // 4].max())
    assert out[0] > out[1] > out[2]


def test_descend_from_constant_stops_immediately():
    st = M.descend(M.DescentState(_torus_field(0)), 100, 1e-8)
    assert st.iteration == 0 and st.status == "converged"


def test_descend_perturbed_torus():
    st = M.descend(M.DescentState(_torus_field(0.2, 5, 10)), 500, 1e-9, target=(1.0, 1e-3))
    assert st.status == "converged" and st.iteration < 500
    assert abs(st.history[-1] - 1.0) < 1e-3
    assert all(b < a for a, b in zip(st.history, st.history[1:]))
    assert np.max(np.abs(np.linalg.norm(st.field.values, axis=-1) - 1)) < 1e-14


def test_descend_perturbed_hopf():
    target = 4 * math.pi ** 2
    st = M.descend(M.DescentState(_hopf_grid(16, 0.3, 6)), 150, 1e-9, target=(target, 5e-3))
    assert st.history[0] > (1 + 1e-2) * target
    assert st.status == "converged"
    assert abs(st.history[-1] - target) / target < 5e-3
    assert all(b < a for a, b in zip(st.history, st.history[1:]))


def test_descend_deterministic():
    a = M.descend(M.DescentState(_torus_field(0.2, 7, 6)), 20, 1e-12)
    b = M.descend(M.DescentState(_torus_field(0.2, 7, 6)), 20, 1e-12)
    assert a.history == b.history
    assert np.array_equal(a.field.values, b.field.values)


def test_stall_report(monkeypatch):
    monkeypatch.setattr(M, "discrete_volume", lambda f, values=None: 1.0 + float(np.sum(values ** 2)) * 0)
    st = M.descend(M.DescentState(_torus_field(0.2, 8, 4)), 10, 1e-12)
    assert st.status == "stalled"
    with pytest.raises(M.StallError):
        M.descend(M.DescentState(_torus_field(0.2, 8, 4)), 10, 1e-12, raise_on_stall=True)


def test_history_csv():
    st = M.descend(M.DescentState(_torus_field(0.2, 9, 6)), 3, 1e-12)
    lines = st.history_csv().strip().splitlines()
    assert lines[0] == "iteration,volume,grad_norm" and len(lines) == len(st.history) + 1
