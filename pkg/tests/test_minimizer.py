import numpy as np
import pytest

from qmaps.grid import Ball, ball_energy_profile, dirichlet_energy, sample_map
from qmaps.manifold import parse_target
from qmaps.minimizer import (
    MinimizeConfig,
    NonConvergence,
    box_counting_dimension,
    classify_regularity,
    competitor_check,
    initialize,
    minimize,
    total_energy,
)
from qmaps.presets import boundary_problem, hedgehog


@pytest.fixture(scope="module")
def sqrt_run():
    u0, free = boundary_problem("sqrt2", (65, 65), 1 / 32)
    return u0, free, minimize(u0, free, MinimizeConfig())


@pytest.fixture(scope="module")
def hedgehog_run():
    n = 32
    u0, free = boundary_problem("hedgehog", (n + 3,) * 3, 2 / n)
    return u0, free, minimize(u0, free, MinimizeConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        MinimizeConfig(max_sweeps=0)
    with pytest.raises(ValueError):
        MinimizeConfig(energy_tol=0.0)
    with pytest.raises(ValueError):
        MinimizeConfig(sweep_order="spiral")


def test_constant_boundary_gives_constant_map():
    for tgt in ("flat:2", "sphere:3", "torus4"):
        u0, free = boundary_problem("constant", (17, 17), 1 / 8, parse_target(tgt), Q=2)
        res = minimize(u0, free)
        assert res.energy == pytest.approx(0.0, abs=1e-20)
        np.testing.assert_allclose(res.u.values, u0.values, atol=1e-9)


def test_sqrt_energy_and_history(sqrt_run):
    u0, free, res = sqrt_run
    assert res.converged
    assert np.all(np.diff(res.history) <= 0)
    e = dirichlet_energy(res.u, Ball([0, 0], 1.0))
    assert e == pytest.approx(2 * np.pi, rel=0.03)


def test_boundary_untouched(sqrt_run):
    u0, free, res = sqrt_run
    np.testing.assert_array_equal(res.u.values[~free], u0.values[~free])


def test_hedgehog_energy(hedgehog_run):
    u0, free, res = hedgehog_run
    assert res.converged and np.all(np.diff(res.history) <= 0)
    e = dirichlet_energy(res.u, Ball([0, 0, 0], 1.0))
    assert e == pytest.approx(8 * np.pi, rel=0.05)
    assert res.u.target.constraint_residual(res.u.values).max() < 1e-8


def test_manifold_constraint_every_sweep():
    u0, free = boundary_problem("hedgehog", (15, 15, 15), 1 / 6)
    seen = []

    def cb(sweep, energy):
        seen.append(energy)
    with pytest.warns(NonConvergence):
        res = minimize(u0, free, MinimizeConfig(max_sweeps=5), callback=cb)
    assert len(seen) == res.sweeps
    assert res.u.target.constraint_residual(res.u.values).max() < 1e-8


def test_deterministic():
    u0, free = boundary_problem("root3", (33, 33), 1 / 16)
    a = minimize(u0, free, MinimizeConfig(seed=3))
    b = minimize(u0, free, MinimizeConfig(seed=3))
    np.testing.assert_array_equal(a.u.values, b.u.values)
    assert a.history == b.history


def test_lexicographic_matches_red_black_energy():
    u0, free = boundary_problem("sqrt2", (33, 33), 1 / 16)
    a = minimize(u0, free, MinimizeConfig(sweep_order="lexicographic"))
    b = minimize(u0, free, MinimizeConfig())
    assert np.all(np.diff(a.history) <= 0)
    assert a.energy == pytest.approx(b.energy, rel=1e-4)


def test_relaxation_does_not_beat_discrete_limit_much():
    # the analytic root map is harmonic; relaxation lowers it only by O(h)
    u0, free = boundary_problem("sqrt2", (33, 33), 1 / 16)
    res = minimize(u0, free)
    assert res.energy <= total_energy(u0) + 1e-12
    assert res.energy >= 0.9 * total_energy(u0)


def test_nonconvergence_warns():
    u0, free = boundary_problem("sqrt2", (33, 33), 1 / 16)
    with pytest.warns(NonConvergence):
        res = minimize(u0, free, MinimizeConfig(max_sweeps=2))
    assert not res.converged and res.sweeps == 2


def test_rejects_bad_inputs():
    u0, free = boundary_problem("sqrt2", (9, 9), 0.25)
    bad = free.copy()
    bad[0, 4] = True
    with pytest.raises(ValueError):
        minimize(u0, bad)
    with pytest.raises(ValueError):
        minimize(u0, free[:-1])
    h0, hfree = boundary_problem("hedgehog", (9, 9, 9), 0.25)
    off = np.array(h0.values)
    off[0, 0, 0, 0] *= 2
    object.__setattr__(h0, "values", off)
    with pytest.raises(ValueError):
        minimize(h0, hfree)


def test_initialize_keeps_fixed_nodes():
    u0, free = boundary_problem("hedgehog", (11, 11, 11), 0.2)
    u = initialize(u0, free)
    np.testing.assert_array_equal(u.values[~free], u0.values[~free])
    assert u.target.constraint_residual(u.values).max() < 1e-8


# competitors


def test_competitor_constant_map():
    u0, free = boundary_problem("constant", (17, 17), 1 / 8)
    for fam in ("homogeneous", "glued", "relax"):
        rep = competitor_check(u0, fam, trials=4)
        assert rep.min_deficit >= 0.0


def test_competitor_hedgehog(hedgehog_run):
    _, _, res = hedgehog_run
    rep = competitor_check(res.u, "homogeneous", trials=6, seed=1, ball=Ball([0, 0, 0], 0.8))
    assert rep.passed, rep.witness


def test_competitor_sqrt_minimizer(sqrt_run):
    _, _, res = sqrt_run
    for fam in ("homogeneous", "glued", "relax"):
        rep = competitor_check(res.u, fam, trials=5, seed=2, ball=Ball([0, 0], 0.9))
        assert rep.passed, (fam, rep.witness)


def test_competitor_finds_bump(sqrt_run):
    _, free, res = sqrt_run
    X = res.u.coords
    bump = np.exp(-((X - [0.2, 0.1]) ** 2).sum(-1) / 0.01)[..., None, None] * [1.0, 0.0]
    bumped = res.u.with_values(res.u.values + bump * (np.linalg.norm(X, axis=-1) < 0.8)[..., None, None])
    rep = competitor_check(bumped, "explicit", ball=Ball([0, 0], 0.9), competitors=[res.u.values])
    assert rep.min_deficit < -rep.tolerance
    assert rep.witness["index"] == 0 and not rep.passed


def test_competitor_outside_ball_is_bug(sqrt_run):
    _, _, res = sqrt_run
    V = np.array(res.u.values)
    V[0, 0] += 1.0
    with pytest.raises(RuntimeError):
        competitor_check(res.u, "explicit", ball=Ball([0, 0], 0.5), competitors=[V])
    with pytest.raises(ValueError):
        competitor_check(res.u, "sideways", trials=1)


# classification


def test_classify_constant():
    u0, _ = boundary_problem("constant", (33, 33), 1 / 16)
    rep = classify_regularity(u0, 0.1)
    assert rep.count == 0 and rep.box_dimension is None
    with pytest.raises(ValueError):
        classify_regularity(u0, 0.0)


def test_classify_hedgehog_origin_only():
    n = 48
    u = sample_map(hedgehog, (n + 1,) * 3, 2 / n, (-1,) * 3, parse_target("sphere:3"))
    rep = classify_regularity(u, 4 * np.pi)
    assert rep.count >= 1
    assert np.abs(rep.candidates).max() <= 3 * u.h + 1e-12
    assert rep.box_dimension < 0.5


def test_classify_sqrt_minimizer(sqrt_run):
    _, _, res = sqrt_run
    assert classify_regularity(res.u, 1.0).count == 0


def test_box_counting_dimension_line_and_point():
    h = 1e-3
    t = np.linspace(0, 1, 4001)
    line = np.stack([t, 0 * t], 1)
    assert box_counting_dimension(line, h, 1.0) == pytest.approx(1.0, abs=0.15)
    assert box_counting_dimension(np.zeros((3, 2)), h, 1.0) == pytest.approx(0.0, abs=1e-12)
    assert box_counting_dimension(np.zeros((0, 2)), h, 1.0) is None


def test_scaled_profile_nondecreasing(sqrt_run):
    _, _, res = sqrt_run
    prof = ball_energy_profile(res.u, [0, 0], np.linspace(0.15, 0.95, 12))
    tol = 5 * res.u.h * prof.scaled_energy.max()
    assert np.all(np.diff(prof.scaled_energy) >= -tol)
