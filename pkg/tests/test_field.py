import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from amf.field import (TvMode, as_label_field, as_scalar_field, boundary_length, curvature,
                       divergence, gradient, total_variation)

ISO, ANISO = TvMode.ISOTROPIC, TvMode.ANISOTROPIC
shapes = st.tuples(st.integers(1, 9), st.integers(1, 9))
finite = st.floats(-100, 100, allow_nan=False)


def _inner_oracle(f, v):
    # <grad f, v> + <f, div v> by explicit loops over the difference stencil
    h, w = f.shape
    lhs = 0.0
    for i in range(h):
        for j in range(w):
            if j + 1 < w:
                lhs += (f[i, j + 1] - f[i, j]) * v[0, i, j]
            if i + 1 < h:
                lhs += (f[i + 1, j] - f[i, j]) * v[1, i, j]
    return lhs


def test_gradient_of_constant_is_zero():
    assert np.all(gradient(np.full((5, 7), 3.2)) == 0)


def test_gradient_of_ramp():
    f = np.tile(np.arange(4.0), (4, 1))
    g = gradient(f)
    np.testing.assert_array_equal(g[0][:, :3], 1.0)
    np.testing.assert_array_equal(g[0][:, 3], 0.0)
    np.testing.assert_array_equal(g[1], 0.0)


def test_adjointness_random(rng):
    f = rng.standard_normal((8, 8))
    v = rng.standard_normal((2, 8, 8))
    lhs = _inner_oracle(f, v)
    assert abs(lhs + np.sum(f * divergence(v))) < 1e-10
    assert abs(np.sum(gradient(f) * v) - lhs) < 1e-10


def test_divergence_of_zero():
    assert np.all(divergence(np.zeros((2, 4, 4))) == 0)


def test_divergence_of_ramp_gradient():
    f = np.tile(np.arange(4.0), (4, 1))
    d = divergence(gradient(f))
    # backward difference of gx = [1, 1, 1, 0]
    np.testing.assert_array_equal(d, np.tile([1.0, 0.0, 0.0, -1.0], (4, 1)))


@given(shapes.flatmap(lambda s: st.tuples(arrays(np.float64, s, elements=finite),
                                          arrays(np.float64, (2,) + s, elements=finite))))
def test_adjointness_property(fv):
    f, v = fv
    lhs = float(np.sum(gradient(f) * v))
    rhs = -float(np.sum(f * divergence(v)))
    scale = 1.0 + float(np.sum(np.abs(gradient(f) * v)))
    assert abs(lhs - rhs) <= 1e-10 * scale


def test_tv_single_pixel():
    z = np.zeros((5, 5))
    z[2, 2] = 1
    assert total_variation(z, ANISO) == 4.0
    assert total_variation(z, ISO) == pytest.approx(2 + np.sqrt(2), abs=1e-12)
    assert total_variation(np.full((3, 3), 7.0), ISO) == 0.0


@given(arrays(np.float64, (6, 5), elements=finite), st.floats(-5, 5, allow_nan=False))
def test_tv_nonnegative_and_homogeneous(f, c):
    for mode in (ISO, ANISO):
        tv = total_variation(f, mode)
        assert tv >= 0
        assert total_variation(c * f, mode) == pytest.approx(abs(c) * tv, rel=1e-9, abs=1e-9)


@given(arrays(np.int64, (6, 6), elements=st.integers(0, 4)))
def test_anisotropic_coarea(f):
    f = f.astype(np.float64)
    levels = np.unique(f)
    total = sum(total_variation((f > 0.5 * (a + b)).astype(float), ANISO) * (b - a)
                for a, b in zip(levels[:-1], levels[1:]))
    assert total_variation(f, ANISO) == pytest.approx(total, abs=1e-12)


def test_boundary_length_examples():
    assert boundary_length(np.zeros((4, 4), int), ISO) == 0
    assert boundary_length(np.ones((4, 4), int), ANISO) == 0
    z = np.zeros((5, 5), int)
    z[2, 2] = 1
    assert boundary_length(z, ANISO) == 4


@given(arrays(np.uint8, (5, 6), elements=st.integers(0, 1)))
def test_boundary_length_flip_invariant(z):
    for mode in (ISO, ANISO):
        assert boundary_length(z, mode) == pytest.approx(boundary_length(1 - z, mode), abs=1e-12)
        assert boundary_length(z, mode) == pytest.approx(total_variation(z.astype(float), mode))


def test_curvature_constant_and_ramp():
    assert np.all(curvature(np.full((6, 6), 2.0)) == 0)
    ramp = np.tile(np.arange(8.0), (8, 1))
    k = curvature(ramp)
    assert np.max(np.abs(k[1:-1, 1:-2])) < 1e-8


def test_curvature_residual_of_rof_solution(rng):
    from amf.rof import RofParams, rof_solve
    f = np.tile(np.linspace(0, 1, 16), (16, 1)) + 0.05 * rng.standard_normal((16, 16))
    res = rof_solve(f, 0.05, RofParams(tol=1e-12, max_iter=200000))
    u = res.u
    r = u - f - 0.05 * curvature(u, 1e-12)
    g = np.sqrt(np.sum(gradient(u) ** 2, axis=0))
    # smooth interior pixels whose own and neighbouring gradients are well resolved
    smooth = np.zeros_like(g, dtype=bool)
    smooth[1:-1, 1:-1] = ((g[1:-1, 1:-1] > 1e-3) & (g[:-2, 1:-1] > 1e-3)
                          & (g[1:-1, :-2] > 1e-3))
    assert smooth.sum() > 0
    assert np.max(np.abs(r[smooth])) < 1e-4


def test_validators():
    with pytest.raises(ValueError):
        as_scalar_field(np.array([1.0, np.nan]).reshape(1, 2))
    with pytest.raises(ValueError):
        as_scalar_field(np.zeros(3))
    with pytest.raises(ValueError):
        as_label_field(np.array([[0, 2]]))
    assert as_label_field(np.array([[True, False]])).dtype == np.uint8
    with pytest.raises(ValueError):
        TvMode.parse("l2")
