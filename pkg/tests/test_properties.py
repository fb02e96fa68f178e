import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from anisofrac.abp_envelope import cc_cover, concave_envelope, split_counts
from anisofrac.aniso_geometry import Anisotropy, Ellipsoid, ScalingMap, aniso_norm
from anisofrac.dirichlet_solver import assemble, comparison_check, solve
from anisofrac.gridfunc import GridFunction, box_grid
from anisofrac.kernels import KernelSpec, eval_K0
from anisofrac.nonlocal_operator import EvaluableFunction, operator_values, second_difference
from anisofrac.regularity_harness import loglog_fit

FAST = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
SLOW = settings(max_examples=10, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@st.composite
def anisotropies(draw, max_n=3):
    n = draw(st.integers(1, max_n))
    b = tuple(draw(st.lists(st.floats(0.5, 4.0), min_size=n, max_size=n)))
    frac = draw(st.floats(0.05, 0.95))
    return Anisotropy(b, frac * 4.0 / max(b))


@given(anisotropies(), st.floats(0.05, 20.0), st.integers(0, 2**32 - 1))
@FAST
def test_norm_homogeneity_and_determinant(a, r, seed):
    y = np.random.default_rng(seed).normal(size=(20, a.n))
    T = ScalingMap("T_beta", r, a)
    np.testing.assert_allclose(aniso_norm(a, T.apply(y)), r * aniso_norm(a, y), rtol=1e-12)
    assert T.det() == pytest.approx(r**a.c, rel=1e-12)


@given(anisotropies(), st.integers(0, 2**32 - 1))
@FAST
def test_reference_kernel_even_and_homogeneous(a, seed):
    y = np.random.default_rng(seed).normal(size=(20, a.n)) + 0.1
    K = eval_K0(a, y)
    np.testing.assert_array_equal(K, eval_K0(a, -y))
    Ty = ScalingMap("T_beta", 2.0, a).apply(y)
    np.testing.assert_allclose(eval_K0(a, Ty), 2.0 ** (-(a.c + a.s)) * K, rtol=1e-12)


@given(anisotropies(), st.floats(0.1, 3.0), st.integers(0, 2**32 - 1))
@FAST
def test_region_membership_matches_defining_inequalities(a, r, seed):
    P = np.random.default_rng(seed).uniform(-2, 2, (200, a.n))
    np.testing.assert_array_equal(Ellipsoid("Theta", a, r).contains(P), aniso_norm(a, P) < r)
    semi = r ** (2.0 / a.barr)
    np.testing.assert_array_equal(Ellipsoid("E", a, r).contains(P), np.sum((P / semi) ** 2, 1) < 1)


@given(arrays(float, 3, elements=st.floats(-5, 5)), st.floats(-5, 5), st.integers(0, 2**32 - 1))
@FAST
def test_second_difference_kills_affine(w, c, seed):
    rng = np.random.default_rng(seed)
    f = lambda z: c + z @ w
    x, y = rng.normal(size=3), rng.normal(size=(10, 3))
    np.testing.assert_allclose(second_difference(f, x, y), 0.0, atol=1e-12 * (1 + np.abs(w).sum()))


@given(st.floats(0.3, 2.0), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.sampled_from(
    [((2, 2), 1.0), ((1, 2), 0.5), ((1, 4), 0.9)]), st.sampled_from(["constant", "angular", "radial"]))
@SLOW
def test_pucci_sandwich_and_antisymmetry(width, x1, x2, bs, mult):
    a = Anisotropy(*bs)
    k = KernelSpec(a, 0.5, 2.0, mode="bounded", multiplier_name=mult)
    g = EvaluableFunction(lambda z: np.exp(-np.sum(z * z, -1) / width**2), M=1.0 / width**2,
                          sup_abs=1.0, far_bound=lambda t: math.exp(-t * t / width**2))
    x = np.array([x1, x2])
    v = operator_values(g, x, k)
    neg = operator_values(-g, x, k)
    assert v["minus"].value <= v["L"].value <= v["plus"].value
    assert neg["plus"].value == pytest.approx(-v["minus"].value, rel=1e-10, abs=1e-14)


@given(st.floats(-3, 3), st.integers(0, 2**32 - 1))
@SLOW
def test_solver_commutes_with_constant_shift(c, seed):
    k = KernelSpec(Anisotropy((1, 2), 0.5))
    rng = np.random.default_rng(seed)
    w = rng.normal(size=2)
    g = lambda x: np.sin(np.asarray(x) @ w)
    base = assemble(1.0, 6, g, k)
    r1 = solve(base, tol=1e-12, method="cg")
    r2 = solve(base.with_data(lambda x: g(x) + c), tol=1e-12, method="cg")
    np.testing.assert_allclose(r2.interior, r1.interior + c, atol=1e-9)
    if abs(c) > 1e-8:
        assert comparison_check(r2, r1, tol=1e-9).holds == (c > 0)


@given(st.integers(1, 60), st.integers(0, 2**32 - 1), st.sampled_from([(2, 2), (1, 4)]))
@FAST
def test_cc_cover_covers_every_point(m, seed, b):
    a = Anisotropy(b, 0.5)
    rng = np.random.default_rng(seed)
    P = rng.uniform(-1, 1, (m, 2))
    t = rng.uniform(0.01, 0.5, m)
    cov = cc_cover(P, t, lambda r: r ** (2.0 / a.barr))
    inside = np.array([R.contains_closure(P) for R in cov.rects])
    assert np.all(inside.any(axis=0))
    assert 1 <= cov.overlap <= len(cov.selected)


@given(anisotropies(), st.integers(0, 10))
@FAST
def test_split_counts_are_powers_of_two(a, d):
    c = split_counts(a, d)
    assert np.all(c >= 1)
    assert np.all(np.log2(c) == np.round(np.log2(c)))


@given(arrays(float, 41, elements=st.floats(-1, 1)))
@FAST
def test_envelope_dominates_and_is_concave_1d(v):
    o, h, shp = box_grid(3.0, 120, 1)
    vals = np.full(shp, -0.5)
    x = o[0] + h[0] * np.arange(shp[0])
    inner = np.flatnonzero(np.abs(x) < 1)
    vals[inner] = np.interp(x[inner], np.linspace(-1, 1, 41), v)
    u = GridFunction(o, h, vals, -0.5)
    env = concave_envelope(u)
    assert np.all(env.grid.values >= np.maximum(vals, 0) - 1e-12)
    assert env.concavity_defect() <= 1e-12
    if vals.max() > 0:
        assert env.grid.values.max() == pytest.approx(vals.max())


@given(st.floats(-3, 3), st.floats(0.1, 10), st.integers(3, 12))
@FAST
def test_loglog_fit_recovers_power(e, c, m):
    s = np.geomspace(1.0, 1e-3, m)
    got, ic, res = loglog_fit(s, c * s**e)
    assert got == pytest.approx(e, abs=1e-9) and res < 1e-12


@given(arrays(float, (4, 5), elements=st.floats(-1e6, 1e6)), st.floats(-10, 10))
@FAST
def test_grid_file_roundtrip(tmp_path_factory, vals, ext):
    p = tmp_path_factory.mktemp("g") / "u.anlg"
    u = GridFunction([-1.0, -2.0], [0.5, 0.25], vals, ext)
    u.write(p)
    v = GridFunction.read(p)
    np.testing.assert_array_equal(v.values, vals)
    assert v.exterior == ext
