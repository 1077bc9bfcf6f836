import numpy as np
import pytest

from unitflow.fields import constant_field, hopf_field, longitude_field, pedersen_field
from unitflow.geometry import sphere, torus


def random_sphere_points(m, count, seed=0):
    x = np.random.default_rng(seed).normal(size=(count, m.ambient_dim))
    return m.radius * x / np.linalg.norm(x, axis=1, keepdims=True)


def zoo():
    """(name, field) pairs for the invariant suites."""
    return [
        ("constant", constant_field(torus((1.0, 1.0, 1.0)), (0.0, 0.0, 1.0))),
        ("hopf-s3", hopf_field(sphere(3))),
        ("hopf-s5", hopf_field(sphere(5))),
        ("pedersen-s3", pedersen_field(sphere(3))),
        ("pedersen-s5", pedersen_field(sphere(5))),
        ("longitude-s2", longitude_field(sphere(2))),
    ]


def zoo_points(f, count=500, seed=0, margin=0.05):
    m = f.manifold
    if m.is_sphere:
        x = random_sphere_points(m, count, seed)
    else:
        x = np.random.default_rng(seed).uniform(0, 1, size=(count, m.dim)) * np.asarray(m.periods)
    if len(f.poles):
        keep = np.all([m.distance(p, x) > margin for p in f.poles], axis=0)
        x = x[keep]
    return x


@pytest.fixture(params=zoo(), ids=lambda p: p[0])
def zoo_field(request):
    return request.param[1]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
