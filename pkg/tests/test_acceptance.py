"""Acceptance criteria.  Each check prints one PASS/FAIL line at its stated tolerance."""
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, random_sphere_points, zoo, zoo_points
from unitflow import crofton as C
from unitflow import minimize as M
from unitflow import surgery as S
from unitflow.fields import (constant_field, hopf_field, local_graph, longitude_field, make_lattice,
                             pedersen_field, perturb_field, sample_field, twist_field)
from unitflow.geometry import sphere, torus
from unitflow.singularity import HCone, cone_limit, degree, dilate, monotonicity_profile, slice_map
from unitflow.volume import Ball, component_mass, flat_polar_grid, graph_integral, volume

HOPF_S3 = 4 * math.pi ** 2


def report(criterion, name, ok, detail):
    line = f"[criterion {criterion}] {'PASS' if ok else 'FAIL'} {name}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


# -- 1 ------------------------------------------------------------------------------------

def test_c1_constant_torus_volume():
    t0 = time.perf_counter()
    m = torus((1.0, 2.0, 0.5))
    r = volume(constant_field(m, (0.6, 0.0, 0.8)), 1 / 64)
    dt = time.perf_counter() - t0
    err = abs(r.total - m.volume()) / m.volume()
    report(1, "Vol(T^3) at h=1/64", err < 1e-6 and dt < 10, f"rel err {err:.2e} < 1e-6, {dt:.2f} s < 10 s")


# -- 2 ------------------------------------------------------------------------------------

def test_c2_hopf_volume_and_order():
    t0 = time.perf_counter()
    f = hopf_field(sphere(3))
    Ns = (16, 32, 64)
    errs = [abs(volume(f, math.pi / N, method="fd").total - HOPF_S3) / HOPF_S3 for N in Ns]
    order = math.log2(errs[-2] / errs[-1])
    dt = time.perf_counter() - t0
    ok = errs[-1] < 1e-3 and order >= 1.8 and dt < 120
    report(2, "Hopf volume 4 pi^2", ok,
           f"rel errs {', '.join(f'{e:.2e}' for e in errs)} (h = pi/{Ns}); final < 1e-3, "
           f"order {order:.2f} >= 1.8, {dt:.1f} s < 120 s")


# -- 3 ------------------------------------------------------------------------------------

def test_c3_longitude_degree_two():
    f = longitude_field(sphere(2))
    res = [degree(slice_map(local_graph(f, f.poles[0]), r, 32)) for r in (0.05, 0.2, 0.8)]
    ok = all(d.degree == 2 and d.residual < 0.1 for d in res)
    report(3, "longitude pole degree", ok,
           f"degrees {[d.degree for d in res]} == 2, residuals max {max(d.residual for d in res):.1e} < 0.1")


def test_c3_smooth_slices_degree_zero():
    out = []
    for name, f in zoo():
        m = f.manifold
        centers = zoo_points(f, 4, seed=3, margin=0.6)
        n_theta = 8 if m.dim >= 5 else 16
        for c in centers:
            for r in (0.05, 0.3):
                out.append((name, degree(slice_map(local_graph(f, c), r, n_theta))))
    ok = all(d.degree == 0 and d.residual < 0.1 for _, d in out)
    report(3, "smooth slices degree", ok,
           f"{len(out)} slices over the zoo, all degree 0: {all(d.degree == 0 for _, d in out)}, "
           f"max residual {max(d.residual for _, d in out):.1e} < 0.1")


# -- 4 ------------------------------------------------------------------------------------

def _longitude_case():
    f = longitude_field(sphere(2))
    u = local_graph(f, f.poles[0], 2.0)
    patch = C.graph_patch(u, C.Annulus(0.5, 1.5), 0.05)
    grid = flat_polar_grid(2, 0.5, 1.5, 64, 512)
    return patch, lambda i: graph_integral(u, grid, i)


def _twist_case():
    f = twist_field(torus((1.0, 1.0)), (0.0, 4 * math.pi))
    patch = C.graph_patch(f, None, 0.02)
    return patch, lambda i: component_mass(f, i, 1 / 128)


@pytest.mark.slow
@pytest.mark.parametrize("case", ["longitude-annulus", "twist-torus"])
@pytest.mark.parametrize("i", [0, 1])
def test_c4_crofton_cross_validation(case, i):
    t0 = time.perf_counter()
    patch, ref_fn = _longitude_case() if case == "longitude-annulus" else _twist_case()
    ref = ref_fn(i)
    e = C.crofton_mass_estimate(patch, None, i, 10_000, 2 * patch.lipschitz() * patch.h, 100 + i,
                                reference=ref)
    dt = time.perf_counter() - t0
    tol = 3 * e.stderr + 0.05 * abs(ref)
    ok = abs(e.estimate - ref) <= tol and dt < 300
    report(4, f"Crofton {case} i={i}", ok,
           f"estimate {e.estimate:.4f} +/- {e.stderr:.4f} vs quadrature {ref:.4f}, "
           f"|diff| {abs(e.estimate - ref):.4f} <= 3 SE + 5% = {tol:.4f}, {dt:.0f} s < 300 s")


# -- 5 ------------------------------------------------------------------------------------

@pytest.mark.parametrize("lambdas", [None, [3.0 ** -k for k in range(9)], [0.9 * 1.7 ** -k for k in range(12)]],
                         ids=["default", "thirds", "irregular"])
def test_c5_cone_extraction(lambdas):
    f = pedersen_field(sphere(3))
    u = local_graph(f, f.poles[0])
    cl = cone_limit(u, 0.5, lambdas)
    floor = 1e-12
    dec = all(b <= a + floor for a, b in zip(cl.defects, cl.defects[1:]))
    ok = cl.converged and dec and cl.defects[-1] < 2 * cl.tolerance
    report(5, "cone_limit converges", ok,
           f"{len(cl.defects)} steps, nonincreasing (floor 1e-12): {dec}, "
           f"final defect {cl.defects[-1]:.1e} < 2 x tol {2 * cl.tolerance:.1e}")


def test_c5_profiles():
    f = pedersen_field(sphere(3))
    u = local_graph(f, f.poles[0])
    cone = cone_limit(u, 0.5).cone
    radii = [0.25, 0.5, 1.0]
    prof = [v for _, v in monotonicity_profile(cone, radii, 0.02)]
    spread = max(prof) / min(prof) - 1
    pre = [v for _, v in monotonicity_profile(u, radii, 0.02)]
    tol = 1e-3 * pre[0]
    nondec = all(b >= a - tol for a, b in zip(pre, pre[1:]))
    report(5, "cone profile constant", spread < 0.01,
           f"V0(B_R)/R = {', '.join(f'{v:.4f}' for v in prof)}; spread {spread:.1e} < 1%")
    report(5, "pre-cone profile nondecreasing", nondec,
           f"V0(B_R)/R = {', '.join(f'{v:.4f}' for v in pre)}; steps >= -{tol:.1e}")


# -- 6 ------------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def pedersen_scan():
    f = pedersen_field(sphere(3))
    u = local_graph(f, f.poles[0])
    return S.surgery_scan(u, 1.0, 0.01, n_levels=6, n_theta=24, n_radial=24)


def test_c6_fence_slope(pedersen_scan):
    sc, n = pedersen_scan, 3
    report(6, "fence slope n-1", abs(sc.fence_slope - (n - 1)) <= 0.05,
           f"log-log slope {sc.fence_slope:.3f}, target {n - 1} +/- 0.05")


def test_c6_cone_slope(pedersen_scan):
    sc, n = pedersen_scan, 3
    report(6, "cone slope n", abs(sc.cone_slope - n) <= 0.05,
           f"log-log slope {sc.cone_slope:.3f}, target {n} +/- 0.05")


def test_c6_positive_gain_radius(pedersen_scan):
    sc = pedersen_scan
    report(6, "radius with positive gain", sc.r_star is not None,
           f"r* = {sc.r_star}; gains {', '.join(f'{g:.4f}' for g in sc.gains)} at r = "
           f"{', '.join(f'{r:.4g}' for r in sc.radii)}")


def test_c6_full_volume_comparison():
    f = pedersen_field(sphere(3))
    fc = S.full_volume_comparison(f, 1.5, 0.1)
    ok = fc.difference > fc.error_bar
    report(6, "full-volume competitor on S^3", ok,
           f"V(P) {fc.v_original:.3f} - V(competitor) {fc.v_competitor:.3f} = {fc.difference:.3f} "
           f"> error bar {fc.error_bar:.3f} (r = 1.5, strategy {fc.strategy})")


# -- 7 ------------------------------------------------------------------------------------

def test_c7_torus_descent():
    m = torus((1.0, 1.0, 1.0))
    g = perturb_field(sample_field(constant_field(m, (0, 0, 1.0)), make_lattice(m, (12, 12, 12))), 0.2, 0)
    st = M.descend(M.DescentState(g), 500, 1e-9, target=(m.volume(), 1e-3))
    err = abs(st.history[-1] - m.volume()) / m.volume()
    ok = err < 1e-3 and st.iteration < 500
    report(7, "T^3 descent", ok,
           f"start {st.history[0]:.4f}, final {st.history[-1]:.5f}, rel err {err:.1e} < 1e-3 "
           f"after {st.iteration} < 500 iterations")


def test_c7_hopf_gradient_refinement():
    weak, l2 = [], []
    for N in (8, 16, 32):
        g = sample_field(hopf_field(sphere(3)), make_lattice(sphere(3), (N, 2 * N)))
        grad = M.volume_gradient(g)
        weak.append(M.weak_gradient_norm(g, grad))
        l2.append(M.gradient_norm(g, grad))
    ok = weak[0] > weak[1] > weak[2]
    report(7, "Hopf gradient norm under refinement", ok,
           f"weak norm {', '.join(f'{w:.2e}' for w in weak)} decreasing at N = 8, 16, 32 "
           f"(L2 density norm {', '.join(f'{v:.2f}' for v in l2)})")


# -- 8 ------------------------------------------------------------------------------------

def _regular_center(f):
    m = f.manifold
    if len(f.poles):
        return -f.poles[0]
    return zoo_points(f, 1, seed=7)[0]


def test_c8_invariants():
    fails = []
    for name, f in zoo():
        m = f.manifold
        x = zoo_points(f, 300, seed=1)
        v = f.evaluate(x)
        # unit norm and tangency
        if np.max(np.abs(np.linalg.norm(v, axis=1) - 1)) > 1e-12:
            fails.append(f"{name}: unit norm")
        if m.is_sphere and np.max(np.abs(np.sum(v * x, axis=1))) > 1e-12:
            fails.append(f"{name}: tangency")
        # transport isometry
        y = zoo_points(f, len(x), seed=2, margin=0.0)[: len(x)]
        if m.is_sphere:
            keep = m.distance(x, -y) > 1e-3
            x2, y2, v2 = x[keep], y[keep], v[keep]
        else:
            x2, y2, v2 = x, y, v
        w = np.random.default_rng(3).normal(size=v2.shape)
        w = m.project_tangent(x2, w)
        a, b = m.transport(x2, y2, v2), m.transport(x2, y2, w)
        if np.max(np.abs(np.sum(a * b, 1) - np.sum(v2 * w, 1))) > 1e-12:
            fails.append(f"{name}: transport isometry")
        # volume <= sum of component masses
        c = _regular_center(f)
        region = Ball(tuple(c), 1.0) if len(f.poles) else None
        h = 0.25 if m.dim >= 5 else 0.1
        vol = volume(f, h, region, method="fd").total
        masses = sum(component_mass(f, i, h, region, method="fd") for i in range(m.dim + 1))
        if not vol <= masses * (1 + 1e-12):
            fails.append(f"{name}: triangle inequality {vol} > {masses}")
        # dilation identity at lambda = 1
        u = local_graph(f, c, 0.5)
        yy = np.random.default_rng(4).uniform(-0.2, 0.2, size=(200, m.dim))
        if not np.array_equal(dilate(u, 1.0, 0.5)(yy), u(yy)):
            fails.append(f"{name}: dilation identity")
        # degree is invariant under dilation (slice radius)
        nt = 8 if m.dim >= 5 else 16
        centers = [f.poles[0]] if len(f.poles) else [c]
        for p in centers:
            up = local_graph(f, p)
            degs = {degree(slice_map(dilate(up, lam, 0.5), 0.5, nt)).degree for lam in (1.0, 0.5, 0.1)}
            if len(degs) != 1:
                fails.append(f"{name}: degree dilation {degs}")
        # splice exactness outside the surgery ball; a pole of nonzero degree is obstructed
        p = f.poles[0] if len(f.poles) else c
        if len(f.poles) and degree(slice_map(local_graph(f, p), 0.3, nt)).degree != 0:
            try:
                S.splice(f, p, 0.3, nt)
                fails.append(f"{name}: splice across a nonzero-degree pole")
            except S.TopologicalObstruction:
                pass
            p = c
        r = 0.3
        g = S.splice(f, p, r, nt)
        far = zoo_points(f, 400, seed=5, margin=0.0)
        far = far[m.distance(p, far) > r]
        if len(f.poles):
            far = far[np.all([m.distance(q, far) > 0.05 for q in f.poles], axis=0)]
        if not np.array_equal(g.evaluate(far), f.evaluate(far)):
            fails.append(f"{name}: splice exactness")
    names = ", ".join(n for n, _ in zoo())
    report(8, "invariant suites over the zoo", not fails,
           f"unit norm, transport isometry, volume <= sum of masses, dilation at 1, degree under dilation, "
           f"splice exactness on [{names}]" + (f"; failures: {fails}" if fails else ""))
