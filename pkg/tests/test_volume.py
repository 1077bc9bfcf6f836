import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unitflow.fields import (constant_field, hopf_field, local_graph, longitude_field, pedersen_field,
                             rotate_field, twist_field)
from unitflow.geometry import PoleError, sphere, torus
from unitflow.singularity import HCone, slice_map
from unitflow.volume import (Ball, component_mass, elementary_symmetric, flat_polar_grid,
                             graph_integral, limiting_volume_v0, volume, wedge_norm_sq, wedge_terms)

HOPF_S3 = 4 * math.pi ** 2


def _minors_sq(J, k):
    from itertools import combinations
    n = J.shape[-1]
    return sum(np.linalg.det(J[np.ix_(r, c)]) ** 2
               for r in combinations(range(J.shape[0]), k) for c in combinations(range(n), k))


def test_wedge_zero_matrix():
    assert wedge_norm_sq(np.zeros((3, 3)), 1) == 0
    assert wedge_norm_sq(np.zeros((3, 3)), 0) == 1


def test_wedge_above_dimension():
    assert wedge_norm_sq(np.eye(3), 4) == 0


def test_wedge_hopf_values():
    f = hopf_field(sphere(3))
    x = np.array([[0.5, 0.5, 0.5, 0.5]])
    J = f._jacobian(x, sphere(3).frame(x))[0]
    assert math.isclose(wedge_norm_sq(J, 1), 2.0, rel_tol=1e-12)
    assert math.isclose(wedge_norm_sq(J, 2), 1.0, rel_tol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(2, 5))
def test_wedge_matches_minor_sums(seed, n):
    J = np.random.default_rng(seed).normal(size=(n, n))
    for k in range(n + 1):
        assert math.isclose(wedge_norm_sq(J, k), _minors_sq(J, k) if k else 1.0, rel_tol=1e-8,
                            abs_tol=1e-10)


def test_elementary_symmetric_small():
    e = elementary_symmetric(np.array([1.0, 2.0, 3.0]))
    assert np.allclose(e, [1, 6, 11, 6])


def test_constant_torus_volume():
    m = torus((1.0, 2.0, 0.5))
    r = volume(constant_field(m, (1.0, 0, 0)), 1 / 64)
    assert abs(r.total - m.volume()) / m.volume() < 1e-6
    assert r.terms[1] == 0 and r.terms[2] == 0


def test_hopf_volume_and_order():
    m = sphere(3)
    f = hopf_field(m)
    errs = [abs(volume(f, math.pi / N, method="fd").total - HOPF_S3) / HOPF_S3 for N in (32, 64)]
    assert errs[1] < 1e-3
    assert errs[0] / errs[1] > 3.5
    assert abs(volume(f, 0.1, method="exact").total - HOPF_S3) / HOPF_S3 < 1e-12


def test_pedersen_s3_exceeds_hopf():
    f = pedersen_field(sphere(3))
    r = volume(f, 0.1, method="fd", pole_policy="exclude")
    assert r.total > HOPF_S3


def test_pole_requires_policy():
    with pytest.raises(PoleError):
        volume(pedersen_field(sphere(3)), 0.2)


def test_component_masses_hopf():
    f = hopf_field(sphere(3))
    assert math.isclose(component_mass(f, 0, 0.2), 2 * math.pi ** 2, rel_tol=1e-10)
    assert math.isclose(component_mass(f, 1, 0.2), math.sqrt(2) * 2 * math.pi ** 2, rel_tol=1e-10)
    assert math.isclose(component_mass(f, 2, 0.2), 2 * math.pi ** 2, rel_tol=1e-10)


def test_component_mass_constant():
    m = torus((1.0, 1.0, 1.0))
    f = constant_field(m, (0, 1.0, 0))
    assert math.isclose(component_mass(f, 0, 0.1), 1.0, rel_tol=1e-12)
    assert component_mass(f, 1, 0.1) == 0


def test_triangle_and_lower_bound_twist():
    m = torus((1.0, 1.0))
    f = twist_field(m, (2 * math.pi, 0.0))
    r = volume(f, 1 / 32)
    masses = sum(component_mass(f, i, 1 / 32) for i in range(3))
    assert m.volume() <= r.total <= masses + 1e-10


def test_isometry_invariance():
    m = sphere(3)
    Q = np.linalg.qr(np.random.default_rng(2).normal(size=(4, 4)))[0]
    a = volume(hopf_field(m), 0.2).total
    b = volume(rotate_field(hopf_field(m), Q), 0.2).total
    assert abs(a - b) < 1e-8


def test_region_ball_annulus():
    f = hopf_field(sphere(3))
    c = (1.0, 0.0, 0.0, 0.0)
    r = volume(f, 0.05, Ball(c, 1.0))
    exact = 2 * 4 * math.pi * (0.5 - math.sin(2.0) / 4)
    assert abs(r.total - exact) / exact < 1e-10


def test_report_serialization():
    r = volume(hopf_field(sphere(3)), 0.3)
    d = json.loads(r.to_json())
    assert math.isclose(d["total"], r.total)
    lines = r.csv_row(header=True).strip().splitlines()
    assert lines[0].startswith("region,h,total") and len(lines) == 2


def test_v0_constant_graph_zero():
    f = constant_field(torus((4.0, 4.0)), (1.0, 0.0))
    u = local_graph(f, np.array([2.0, 2.0]), 1.5)
    assert limiting_volume_v0(u, 1.0, 0.05) == 0


def test_v0_degree_two_cone_scaling():
    f = longitude_field(sphere(2))
    cone = HCone(slice_map(local_graph(f, f.poles[0]), 0.5, 64)).as_graph()
    prof = [limiting_volume_v0(cone, R, 0.005 * R) / R for R in (0.25, 0.5, 1.0)]
    assert max(prof) / min(prof) - 1 < 0.01


def test_v0_pedersen_profile_nondecreasing():
    f = pedersen_field(sphere(3))
    u = local_graph(f, f.poles[0])
    prof = [limiting_volume_v0(u, R, 0.01 * R, n_theta=32, n_radial=24) / R for R in (0.25, 0.5, 1.0)]
    assert all(b >= a * (1 - 1e-3) for a, b in zip(prof, prof[1:]))


def test_graph_integral_order_zero_is_area():
    f = longitude_field(sphere(2))
    u = local_graph(f, f.poles[0])
    g = flat_polar_grid(2, 0.5, 1.5, 16, 64)
    assert math.isclose(graph_integral(u, g, 0), 2 * math.pi, rel_tol=1e-12)


def test_compensated_sum_order_independent():
    f = hopf_field(sphere(3))
    a = component_mass(f, 1, 0.15)
    b = component_mass(f, 1, 0.15)
    assert a == b
