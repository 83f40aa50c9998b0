import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hpasm.mesh import build_connectivity, square_mesh

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def tag_all(vertices, triangles, tag="dirichlet"):
    """Tag every single-element edge of a triangle list."""
    count = {}
    for t in triangles:
        for k in range(3):
            i, j = int(t[(k + 1) % 3]), int(t[(k + 2) % 3])
            key = (min(i, j), max(i, j))
            count[key] = count.get(key, 0) + 1
    return {e: tag for e, c in count.items() if c == 1}


def make_mesh(vertices, triangles, tag="dirichlet"):
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    return build_connectivity(vertices, triangles, tag_all(vertices, triangles, tag))


@pytest.fixture
def two_triangles():
    """Unit square cut along a diagonal, left side Dirichlet, the rest free."""
    v = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    t = np.array([[0, 1, 2], [0, 2, 3]])
    tags = {(0, 1): "free", (1, 2): "free", (2, 3): "free", (0, 3): "dirichlet"}
    return build_connectivity(v, t, tags)


@pytest.fixture
def square8():
    """8 triangles, all boundary Dirichlet."""
    return square_mesh(1, 2)


@pytest.fixture
def square8_left():
    """8 triangles, Dirichlet on the left side only."""
    return square_mesh(1, 2, tags={"left": "dirichlet", "right": "free",
                                   "top": "free", "bottom": "free"})
