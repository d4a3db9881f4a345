import numpy as np
import pytest

from hrbfsurf.model import build_model, tune_parameters
from hrbfsurf.octree import build_octree
from hrbfsurf.pointset import normalize_to_unit_box
from hrbfsurf.sampling import sphere_points, torus_points


@pytest.fixture(scope="session")
def sphere_ps():
    return sphere_points(600, seed=1)


@pytest.fixture(scope="session")
def torus_ps():
    return torus_points(800, seed=2)


def tuned_model(ps, s=1.0, noisy_mode=False, eta_override=None):
    """Normalize, index, tune, and build; returns (normalized points, tuning, model)."""
    norm_ps, _ = normalize_to_unit_box(ps)
    idx = build_octree(norm_ps)
    tp = tune_parameters(norm_ps, idx, s, noisy_mode, eta_override)
    return norm_ps, tp, build_model(norm_ps, tp)


@pytest.fixture(scope="session")
def sphere_model(sphere_ps):
    return tuned_model(sphere_ps)


def random_unit_vectors(n, rng):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)
