import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amf.field import TvMode, divergence, gradient, total_variation
from amf.rof import (RofParams, duality_gap, project_dual, rof_energy, rof_solve,
                     rof_solve_reference)

ISO, ANISO = TvMode.ISOTROPIC, TvMode.ANISOTROPIC
TIGHT = RofParams(tol=1e-10, max_iter=100000)


def test_params_validation():
    with pytest.raises(ValueError):
        RofParams(tol=0)
    with pytest.raises(ValueError):
        RofParams(max_iter=0)
    assert RofParams(mode="aniso").mode is ANISO


def test_energy_examples(rng):
    c = np.full((4, 4), 2.0)
    assert rof_energy(c, c, 3.0) == 0.0
    u0 = rng.standard_normal((5, 5))
    for mode in (ISO, ANISO):
        assert rof_energy(u0, u0, 2.5, mode) == pytest.approx(2.5 * total_variation(u0, mode))
    with pytest.raises(ValueError):
        rof_energy(u0, u0[:4], 1.0)


@pytest.mark.parametrize("mode", [ISO, ANISO])
def test_solution_beats_perturbations(rng, mode):
    u0 = rng.standard_normal((16, 16))
    res = rof_solve(u0, 0.7, RofParams(tol=1e-8, max_iter=50000, mode=mode))
    e = rof_energy(res.u, u0, 0.7, mode)
    for _ in range(20):
        v = res.u + 0.01 * rng.standard_normal(u0.shape)
        assert rof_energy(v, u0, 0.7, mode) >= e


def test_constant_input():
    c = np.full((6, 5), -1.5)
    res = rof_solve(c, 4.0)
    np.testing.assert_array_equal(res.u, c)
    assert res.converged
    ref = rof_solve_reference(c, 4.0)
    np.testing.assert_array_equal(ref.u, c)


def test_tiny_alpha_returns_input(rng):
    u0 = rng.standard_normal((12, 12))
    res = rof_solve(u0, 1e-8)
    assert np.max(np.abs(res.u - u0)) < 1e-4


@pytest.mark.parametrize("mode", [ISO, ANISO])
def test_huge_alpha_returns_mean(rng, mode):
    u0 = rng.uniform(0, 1, (10, 10))
    alpha = 10 * 10 * 1.0
    res = rof_solve(u0, alpha, RofParams(mode=mode))
    assert np.max(np.abs(res.u - u0.mean())) < 1e-3
    ref = rof_solve_reference(u0, alpha, 1e-5, RofParams(tol=1e-8, max_iter=20000, mode=mode))
    assert np.max(np.abs(ref.u - u0.mean())) < 1e-3


def test_reference_agreement_random(rng):
    u0 = rng.standard_normal((16, 16))
    fast = rof_solve(u0, 1.0)
    ref = rof_solve_reference(u0, 1.0, beta=1e-4)
    assert ref.converged
    assert abs(fast.final_energy - ref.final_energy) / ref.final_energy < 1e-3


def test_reference_agreement_step():
    u0 = np.zeros((16, 16))
    u0[:, 8:] = 10.0
    fast = rof_solve(u0, 10.0, TIGHT)
    ref = rof_solve_reference(u0, 10.0, beta=1e-4)
    assert np.max(np.abs(fast.u - ref.u)) < 1e-2
    # the step survives with contrast reduced by 2 * alpha / 128 on each side
    np.testing.assert_allclose(fast.u[:, :8], 10 * 16 / 128, atol=1e-6)
    np.testing.assert_allclose(fast.u[:, 8:], 10 - 10 * 16 / 128, atol=1e-6)


@pytest.mark.parametrize("mode", [ISO, ANISO])
def test_invariants(rng, mode):
    u0 = rng.standard_normal((12, 14))
    params = RofParams(tol=1e-12, max_iter=200000, mode=mode)
    base = rof_solve(u0, 0.8, params)
    assert base.converged
    assert base.final_energy <= rof_energy(u0, u0, 0.8, mode)
    assert abs(base.u.mean() - u0.mean()) < 1e-8
    np.testing.assert_allclose(rof_solve(u0 + 3.7, 0.8, params).u, base.u + 3.7, atol=1e-6)
    np.testing.assert_allclose(rof_solve(2.5 * u0, 2.0, params).u, 2.5 * base.u, atol=1e-6)
    p = base.dual
    if mode is ISO:
        assert np.max(np.hypot(p[0], p[1])) <= 1 + 1e-12
    else:
        assert np.max(np.abs(p)) <= 1 + 1e-12
    np.testing.assert_allclose(base.u, u0 - 0.8 * divergence(p), atol=1e-12)
    assert 0 <= duality_gap(base.u, p, 0.8, mode) <= 1e-12 * base.final_energy + 1e-12


def test_energy_tolerance_contract(rng):
    u0 = rng.standard_normal((20, 20))
    loose = rof_solve(u0, 2.0, RofParams(tol=1e-4))
    exact = rof_solve(u0, 2.0, TIGHT)
    assert loose.converged
    assert loose.final_energy - exact.final_energy <= 1e-4 * exact.final_energy


def test_nonconvergence_flag(rng):
    u0 = rng.standard_normal((16, 16))
    res = rof_solve(u0, 5.0, RofParams(tol=1e-14, max_iter=3))
    assert not res.converged
    assert res.iterations == 3
    assert np.isfinite(res.final_energy)
    assert res.final_energy == pytest.approx(rof_energy(res.u, u0, 5.0), rel=1e-9)


def test_rejects_bad_alpha(rng):
    with pytest.raises(ValueError):
        rof_solve(rng.standard_normal((3, 3)), 0.0)
    with pytest.raises(ValueError):
        rof_solve_reference(rng.standard_normal((3, 3)), 1.0, beta=0.0)


def test_project_dual():
    p = np.array([[[3.0]], [[4.0]]])
    np.testing.assert_allclose(project_dual(p, ISO)[:, 0, 0], [0.6, 0.8])
    np.testing.assert_allclose(project_dual(p, ANISO)[:, 0, 0], [1.0, 1.0])


def test_single_row_and_column(rng):
    for shape in ((1, 20), (20, 1)):
        u0 = rng.standard_normal(shape)
        res = rof_solve(u0, 0.5, TIGHT)
        ref = rof_solve_reference(u0, 0.5, 1e-5)
        assert abs(res.final_energy - ref.final_energy) <= 1e-3 * ref.final_energy


@settings(max_examples=15)
@given(st.integers(0, 10 ** 6), st.floats(0.05, 5.0), st.sampled_from([ISO, ANISO]))
def test_dual_matches_numpy_operators(seed, alpha, mode):
    u0 = np.random.default_rng(seed).standard_normal((7, 9))
    res = rof_solve(u0, alpha, RofParams(mode=mode))
    assert res.final_energy == pytest.approx(rof_energy(res.u, u0, alpha, mode), rel=1e-9)
    assert res.final_energy <= rof_energy(u0, u0, alpha, mode) + 1e-12
    g = gradient(res.u)
    assert np.isfinite(g).all()
