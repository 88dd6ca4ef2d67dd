import numpy as np
import pytest

from qmaps.aq_space import metric_G_batch
from qmaps.manifold import parse_target
from qmaps.presets import PRESETS, boundary_problem, hedgehog, lattice, root_map, sphere_branch


def test_root_map_roots():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 2))
    for Q in (2, 3):
        W = root_map(X, Q)
        w = W[..., 0] + 1j * W[..., 1]
        z = X[:, 0] + 1j * X[:, 1]
        np.testing.assert_allclose(w ** Q, np.broadcast_to(z[:, None], w.shape), atol=1e-12)


def test_root_map_continuous_across_branch_cut():
    a = np.array([[-1.0, 1e-12]])
    b = np.array([[-1.0, -1e-12]])
    assert metric_G_batch(root_map(a), root_map(b))[0] < 1e-6


def test_hedgehog_unit_and_origin():
    X = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    H = hedgehog(X)
    np.testing.assert_allclose(np.linalg.norm(H, axis=-1), 1.0)
    np.testing.assert_allclose(H[0, 0], [1, 0, 0])


def test_sphere_branch_on_sphere_and_continuous():
    rng = np.random.default_rng(1)
    y = rng.normal(size=(200, 3))
    y /= np.linalg.norm(y, axis=1, keepdims=True)
    v = sphere_branch(y)
    np.testing.assert_allclose(np.linalg.norm(v, axis=-1), 1.0)
    eps = 1e-7
    assert metric_G_batch(sphere_branch(y), sphere_branch(y + eps)).max() < 1e-2


def test_lattice_centred():
    origin, X = lattice((5, 7), 0.5)
    np.testing.assert_allclose(X.mean(axis=(0, 1)), 0.0, atol=1e-15)
    np.testing.assert_allclose(origin, [-1.0, -1.5])


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_boundary_problem_shapes(name):
    info = PRESETS[name]
    shape = (9,) * info["N"]
    u0, free = boundary_problem(name, shape, 0.25)
    assert u0.shape == shape and u0.Q == info["Q"]
    assert u0.target.label == parse_target(info["target"]).label
    assert free.any() and not free[(0,) * info["N"]]


def test_boundary_problem_errors():
    with pytest.raises(ValueError):
        boundary_problem("nope", (9, 9), 0.25)
    with pytest.raises(ValueError):
        boundary_problem("hedgehog", (9, 9), 0.25)
    with pytest.raises(ValueError):
        boundary_problem("sqrt2", (9, 9), 0.25, parse_target("flat:3"))
    u0, _ = boundary_problem("constant", (9, 9), 0.25, parse_target("sphere:3"), Q=3)
    assert u0.Q == 3 and u0.m == 3
