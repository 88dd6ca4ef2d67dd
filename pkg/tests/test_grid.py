import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmaps.aq_space import PreconditionError
from qmaps.grid import (
    Ball,
    Box,
    EnergyProfile,
    QGridMap,
    RegionError,
    approximate_differentials,
    ball_energy_profile,
    density,
    density_field,
    dirichlet_energy,
    holder_fit,
    monotonicity_report,
    rescale,
    sample_map,
    variation_residual,
)
from qmaps.manifold import sphere
from qmaps.presets import constant_map, hedgehog, root_map


def square(fn, n, target=None, half=1.0):
    h = 2 * half / n
    return sample_map(fn, (n + 1, n + 1), h, (-half, -half), target)


def cube(fn, n, target=None, half=1.0):
    h = 2 * half / n
    return sample_map(fn, (n + 1,) * 3, h, (-half,) * 3, target)


def sqrt_map(n, half=1.0):
    return square(lambda X: root_map(X, 2), n, half=half)


def hedgehog_map(n, half=1.0):
    return cube(hedgehog, n, sphere(3), half=half)


def bump(c, R):
    c = np.asarray(c, float)

    def phi(X):
        r2 = ((X - c) ** 2).sum(-1) / R ** 2
        out = np.zeros(r2.shape)
        m = r2 < 1
        out[m] = np.exp(-1 / (1 - r2[m]))
        return out
    return phi


# QGridMap


def test_qgridmap_rejects_bad_shapes():
    with pytest.raises(ValueError):
        QGridMap(np.zeros((3, 2)), 0.1, [0, 0])
    with pytest.raises(ValueError):
        QGridMap(np.zeros((3, 3, 1, 1)), 0.1, [0, 0, 0])
    with pytest.raises(ValueError):
        QGridMap(np.zeros((3, 3, 1, 1)), 0.0, [0, 0])


def test_qgridmap_checks_manifold_constraint():
    with pytest.raises(ValueError):
        QGridMap(np.zeros((3, 3, 1, 3)), 0.1, [0, 0], sphere(3))
    u = QGridMap(np.broadcast_to([1.0, 0, 0], (3, 3, 1, 3)), 0.1, [0, 0], sphere(3))
    assert u.N == 2 and u.Q == 1 and u.m == 3


def test_values_are_read_only():
    u = sqrt_map(8)
    with pytest.raises(ValueError):
        u.values[0, 0, 0, 0] = 1.0


# energy


def test_constant_energy_zero():
    u = square(lambda X: constant_map(X, [1.0, 2.0], 3), 16)
    assert dirichlet_energy(u) == 0.0
    assert dirichlet_energy(u, Ball([0, 0], 0.5)) == 0.0


@pytest.mark.parametrize("n", [8, 16, 32])
def test_affine_energy_closed_form(n):
    a = np.array([0.7, -1.3])
    Q = 3

    def fn(X):
        s = X @ a
        return np.repeat(np.stack([s, np.zeros_like(s)], -1)[..., None, :], Q, axis=-2)
    u = square(fn, n, half=0.5)
    # each axis has n (n+1) edges of squared length Q (a_j h)^2
    h = 1.0 / n
    exact = sum(Q * (aj * h) ** 2 * n * (n + 1) for aj in a)
    assert dirichlet_energy(u) == pytest.approx(exact, rel=1e-12)
    assert abs(dirichlet_energy(u) - Q * a @ a) <= Q * (a @ a) * 2 * h


def test_sqrt_annulus_energy():
    # |Du|^2 = 1/|z| for the two sheets together, so the annulus energy is pi
    errs = []
    for n in (64, 128, 256):
        u = sqrt_map(n, half=1.05)
        e = dirichlet_energy(u, Ball([0, 0], 1.0)) - dirichlet_energy(u, Ball([0, 0], 0.5))
        errs.append(abs(e - np.pi))
    assert errs[-1] < 0.02
    assert errs[2] < errs[0]


def test_energy_additive_over_disjoint_boxes():
    u = sqrt_map(32)
    c = u.shape[0] // 2
    left = dirichlet_energy(u, Box([-1, -1], [0, 1]))
    right = dirichlet_energy(u, Box([u.h, -1], [1, 1]))
    # the two boxes miss exactly the x-edges from column c to c + 1
    crossing = float(u.edge_sq[0][c].sum())
    assert left + right + crossing == pytest.approx(dirichlet_energy(u), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_energy_translation_invariant(sx, sy):
    u = sqrt_map(12)
    v = u.with_values(u.values + np.array([sx, sy]))
    assert dirichlet_energy(v) == pytest.approx(dirichlet_energy(u), rel=1e-9, abs=1e-12)


def test_region_outside_domain():
    u = sqrt_map(8)
    with pytest.raises(RegionError):
        dirichlet_energy(u, Ball([0.5, 0], 0.8))
    with pytest.raises(RegionError):
        dirichlet_energy(u, Box([-2, -1], [0, 0]))


# profiles and density


def test_profile_constant_zero():
    u = square(lambda X: constant_map(X, [0.0, 1.0], 2), 16)
    prof = ball_energy_profile(u, [0, 0], [0.2, 0.5, 0.9])
    assert np.all(prof.raw_energy == 0) and np.all(prof.scaled_energy == 0)


def test_profile_sqrt_is_2pi_r():
    u = sqrt_map(256)
    radii = np.array([0.2, 0.4, 0.6, 0.8])
    prof = ball_energy_profile(u, [0, 0], radii)
    np.testing.assert_allclose(prof.raw_energy, 2 * np.pi * radii, rtol=0.03)
    np.testing.assert_allclose(prof.scaled_energy, prof.raw_energy)


def test_profile_hedgehog_is_8pi():
    u = hedgehog_map(64)
    prof = ball_energy_profile(u, [0, 0, 0], [0.4, 0.6, 0.9])
    np.testing.assert_allclose(prof.scaled_energy, 8 * np.pi, rtol=0.1)


def test_profile_validation():
    u = sqrt_map(16)
    with pytest.raises(RegionError):
        ball_energy_profile(u, [0, 0], [0.5, 1.5])
    with pytest.raises(ValueError):
        ball_energy_profile(u, [0, 0], [0.5, 0.3])
    with pytest.raises(ValueError):
        ball_energy_profile(u, [0, 0], [0.0, 0.3])


def test_density_examples():
    assert density(square(lambda X: constant_map(X, [1.0, 0.0], 2), 32), [0, 0]).value == 0.0
    d = density(hedgehog_map(48), [0, 0, 0])
    assert d.value == pytest.approx(8 * np.pi, rel=0.1)
    assert d.r_min >= 4 * (2 / 48) - 1e-12
    assert density(sqrt_map(128), [0, 0]).value < 0.2


def test_density_near_boundary_raises():
    u = sqrt_map(32)
    with pytest.raises(RegionError):
        density(u, [1 - 2 * u.h, 0])


def test_density_field_matches_pointwise():
    u = sqrt_map(64)
    theta, valid = density_field(u)
    rng = np.random.default_rng(1)
    idx = np.argwhere(valid)
    for i in rng.choice(len(idx), 5, replace=False):
        node = tuple(idx[i])
        y = u.coords[node]
        assert theta[node] == pytest.approx(density(u, y).value, abs=1e-9)
    assert np.all(np.isnan(theta[~valid]))


# monotonicity


def test_monotonicity_constant():
    u = square(lambda X: constant_map(X, [1.0, 1.0], 2), 32)
    rep = monotonicity_report(u, [0, 0], 0.25, 0.5)
    assert (rep.lhs, rep.rhs, rep.discrepancy) == (0.0, 0.0, 0.0)


def test_monotonicity_hedgehog_both_sides_vanish():
    u = hedgehog_map(48)
    rep = monotonicity_report(u, [0, 0, 0], 0.4, 0.8)
    assert abs(rep.rhs) <= 1e-3 * rep.energy_scale
    assert abs(rep.lhs) <= 5 * u.h * rep.energy_scale


def test_monotonicity_sqrt_converges():
    disc = []
    for n in (64, 128, 256):
        u = sqrt_map(n)
        rep = monotonicity_report(u, [0, 0], 0.25, 0.5)
        assert rep.lhs == pytest.approx(2 * np.pi * 0.25, rel=0.05)
        assert rep.rhs == pytest.approx(2 * np.pi * 0.25, rel=0.05)
        assert abs(rep.discrepancy) <= 5 * u.h * rep.energy_scale
        disc.append(abs(rep.discrepancy))
    assert disc[2] < disc[0]


def test_monotonicity_radius_order():
    u = sqrt_map(32)
    with pytest.raises(PreconditionError):
        monotonicity_report(u, [0, 0], 0.5, 0.25)
    with pytest.raises(PreconditionError):
        monotonicity_report(u, [0, 0], u.h, 0.5)


# differentials and residuals


def test_differentials_of_affine_map():
    A = np.array([[1.0, 2.0], [-0.5, 0.3]])
    u = square(lambda X: (X @ A.T)[..., None, :], 16)
    D, valid = approximate_differentials(u)
    inner = valid.copy()
    assert inner.sum() > 0
    # D[..., i, q, k] = d/dx_i of sheet q, component k
    np.testing.assert_allclose(D[inner][:, :, 0, :], np.broadcast_to(A.T, (inner.sum(), 2, 2)), atol=1e-12)


def test_residual_constant_zero():
    u = square(lambda X: constant_map(X, [0.3, 0.1], 2), 32)
    phi = bump([0, 0], 0.5)
    assert variation_residual(u, "inner", lambda X: phi(X)[..., None] * [1.0, 2.0]) == 0.0
    assert variation_residual(u, "outer", lambda X, Z: phi(X)[..., None] * Z) == 0.0


def test_inner_residual_affine_divergence_free():
    a = np.array([0.4, 1.1])
    u = square(lambda X: np.stack([X @ a, 0 * X[..., 0]], -1)[..., None, :], 64)
    # X = rot grad psi with psi a bump is divergence free; the integrand is
    # a constant matrix contracted with DX, whose integral vanishes
    psi = bump([0.1, -0.1], 0.6)
    eps = 1e-6

    def field(X):
        gx = (psi(X + [eps, 0]) - psi(X - [eps, 0])) / (2 * eps)
        gy = (psi(X + [0, eps]) - psi(X - [0, eps])) / (2 * eps)
        return np.stack([-gy, gx], -1)
    assert abs(variation_residual(u, "inner", field)) < 1e-8


def test_outer_residual_hedgehog_refines():
    phi = bump([0.1, 0.05, -0.1], 0.6)
    Y = lambda X, Z: phi(X)[..., None] * np.cross(Z, [0.0, 0.0, 1.0])  # noqa: E731
    res = [abs(variation_residual(hedgehog_map(n), "outer", Y)) for n in (16, 32)]
    assert res[1] < res[0] / 1.5


def test_residual_nonzero_for_perturbed_map():
    phi = bump([0, 0], 0.6)
    field = lambda X: phi(X)[..., None] * [0.0, 1.0]  # noqa: E731
    vals = []
    for n in (64, 128):
        base = sqrt_map(n)
        pert = base.with_values(base.values + 0.3 * phi(base.coords - [0.3, 0.2])[..., None, None] * [1.0, 0.0])
        vals.append(variation_residual(pert, "inner", field))
    assert min(abs(v) for v in vals) > 1e-3
    assert vals[1] == pytest.approx(vals[0], rel=0.2)
    with pytest.raises(ValueError):
        variation_residual(sqrt_map(16), "sideways", field)


def test_residual_field_support_checked():
    u = sqrt_map(16)
    with pytest.raises(RegionError):
        variation_residual(u, "inner", lambda X: np.ones(X.shape))


# rescale and Holder fit


def test_rescale_identity():
    u = sqrt_map(16)
    v = rescale(u, [0, 0], 1.0)
    np.testing.assert_array_equal(v.values, u.values)
    assert v.h == u.h


def test_rescale_hedgehog_homogeneous():
    u = hedgehog_map(32)
    v = rescale(u, [0, 0, 0], 2.0)
    ref = sample_map(hedgehog, u.shape, u.h / 2, (-0.5,) * 3, sphere(3))
    np.testing.assert_allclose(v.values, ref.values, atol=1e-12)


def test_rescale_energy_identity():
    u = sqrt_map(128)
    r = 0.25
    v = rescale(u, [0, 0], r, shape=(65, 65), h=u.h, origin=(-0.5, -0.5))
    # nearest-node lookup: use every node of v as a node of u
    for rho in (1.0, 1.5, 2.0):
        lhs = ball_energy_profile(v, [0, 0], [0.25 * rho]).scaled_energy[0]
        rhs = ball_energy_profile(u, [0, 0], [r * 0.25 * rho]).scaled_energy[0]
        assert lhs == pytest.approx(rhs / r, rel=3 * u.h / (r * 0.25 * rho) + 1e-9)


def test_rescale_outside_raises():
    u = sqrt_map(16)
    with pytest.raises(RegionError):
        rescale(u, [0.5, 0], 1.0, shape=(17, 17), h=2 * u.h, origin=(-1, -1))


def test_holder_fit_synthetic():
    r = np.linspace(0.1, 1.0, 8)
    prof = EnergyProfile(np.zeros(2), r, 3.0 * r, 3.0 * r)
    fit = holder_fit(prof)
    assert fit.alpha == pytest.approx(0.5, abs=1e-12)
    assert fit.fit_quality == pytest.approx(1.0)


def test_holder_fit_constant_and_zero():
    r = np.linspace(0.1, 1.0, 8)
    assert holder_fit(EnergyProfile(np.zeros(3), r, r, np.full(8, 8 * np.pi))).alpha == pytest.approx(0.0, abs=1e-12)
    z = holder_fit(EnergyProfile(np.zeros(2), r, 0 * r, 0 * r))
    assert z.trivial and z.alpha == np.inf
    with pytest.raises(ValueError):
        holder_fit(EnergyProfile(np.zeros(2), r[:3], r[:3], r[:3]))


def test_holder_fit_sqrt_profile():
    u = sqrt_map(128)
    fit = holder_fit(ball_energy_profile(u, [0, 0], np.linspace(0.1, 0.9, 9)))
    assert fit.alpha == pytest.approx(0.5, abs=0.05)
    assert fit.fit_quality > 0.98
