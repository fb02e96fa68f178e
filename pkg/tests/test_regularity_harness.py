import json
import math

import numpy as np
import pytest

from anisofrac.aniso_geometry import Anisotropy, unit_ball_volume
from anisofrac.dirichlet_solver import assemble, solve
from anisofrac.errors import HypothesisViolation, InsufficientDataError
from anisofrac.gridfunc import GridFunction, box_grid
from anisofrac.kernels import KernelSpec
from anisofrac.regularity_harness import (DecayReport, de_giorgi_iteration, dipole_data,
                                          gradient_holder_fit, grid_operator_values,
                                          growth_lemma_check, halfspace_data, harnack_from_solution,
                                          harnack_ratio, holder_fit, holder_fit_both,
                                          liouville_probe, loglog_fit, point_estimate_decay,
                                          random_exterior, report_stem)


def synthetic(f, N=128, L=1.0, n=2, exterior=0.0):
    o, h, shp = box_grid(L, N, n)
    X = GridFunction(o, h, np.zeros(shp)).coords()
    return GridFunction(o, h, f(X), exterior)


def solved(k, g, N=24, L=1.0):
    op = assemble(L, N, g, k)
    rep = solve(op, tol=1e-11, method="cg")
    return op, rep


def test_loglog_fit_exact_power():
    s = np.geomspace(1, 1e-3, 7)
    e, c, res = loglog_fit(s, 3.0 * s**0.7)
    assert e == pytest.approx(0.7) and math.exp(c) == pytest.approx(3.0) and res < 1e-20
    with pytest.raises(InsufficientDataError):
        loglog_fit([1.0], [1.0])


def test_report_write_and_stem(tmp_path):
    rep = DecayReport("degiorgi", np.array([1.0, 0.5]), np.array([2.0, 1.0]), 1.0, 0.0, 0.0, True)
    stem = report_stem("degiorgi", Anisotropy((1, 2), 0.5), 7)
    assert stem == "degiorgi_b1-2_s0.5_seed7"
    rep.write(tmp_path, stem)
    assert (tmp_path / f"{stem}.csv").read_text().splitlines()[0] == "scale,value"
    js = json.loads((tmp_path / f"{stem}.json").read_text())
    assert js["passed"] is True and js["scales"] == [1.0, 0.5]


def test_de_giorgi_constant_is_degenerate():
    a = Anisotropy((2, 2), 1.0)
    rep = de_giorgi_iteration(synthetic(lambda X: np.ones(X.shape[:-1]), 32), a)
    assert "degenerate: zero oscillation" in rep.flags and not rep.passed


def test_de_giorgi_affine_rate():
    # oscillation of an affine function is proportional to the ellipsoid diameter
    a = Anisotropy((2, 2), 1.0)
    u = synthetic(lambda X: X[..., 0] - 0.5 * X[..., 1], 256)
    rep = de_giorgi_iteration(u, a, K=5)
    assert np.all(np.diff(rep.scales) < 0)
    assert rep.exponent == pytest.approx(1.0, abs=0.05)
    assert rep.passed


def test_de_giorgi_needs_four_scales():
    a = Anisotropy((2, 2), 1.0)
    with pytest.raises(InsufficientDataError):
        de_giorgi_iteration(synthetic(lambda X: X[..., 0], 6), a)


def test_de_giorgi_solved_instance():
    k = KernelSpec(Anisotropy((1, 2), 1.0))
    _, rep = solved(k, random_exterior(2, 11))
    dg = de_giorgi_iteration(rep.solution, k.a)
    assert dg.passed and dg.exponent > 0 and dg.residual < 0.1


def test_growth_trivial_examples():
    a = Anisotropy((2, 2), 1.0)
    delta = unit_ball_volume(2) / 2
    zero = synthetic(lambda X: np.zeros(X.shape[:-1]), 32, L=1.5)
    res = growth_lemma_check(zero, delta, 1.0, a=a)
    assert res.holds and res.margin == 1.0
    one = synthetic(lambda X: np.ones(X.shape[:-1]), 32, L=1.5, exterior=0.0)
    with pytest.raises(HypothesisViolation) as exc:
        growth_lemma_check(one, delta, 0.1, tau=0.5)
    assert exc.value.hypothesis == 4


def test_growth_hypothesis_failures():
    delta = 0.5
    big = synthetic(lambda X: 2.0 * np.ones(X.shape[:-1]), 16, L=1.5)
    with pytest.raises(HypothesisViolation) as exc:
        growth_lemma_check(big, delta, 0.1, tau=0.5)
    assert exc.value.hypothesis == 2
    u = synthetic(lambda X: -np.ones(X.shape[:-1]), 16, L=1.5, exterior=10.0)
    with pytest.raises(HypothesisViolation) as exc:
        growth_lemma_check(u, delta, 0.1, tau=0.5)
    assert exc.value.hypothesis == 3
    ov = np.full(u.shape, -1.0)
    with pytest.raises(HypothesisViolation) as exc:
        growth_lemma_check(u, delta, 0.1, tau=0.5, operator_values=ov)
    assert exc.value.hypothesis == 1
    with pytest.raises(ValueError):
        growth_lemma_check(u, delta, 0.1)


def test_growth_margin_monotone_on_nested_data():
    # data increasing in c: comparison makes u increase, the zero set shrink and the margin drop
    k = KernelSpec(Anisotropy((2, 2), 1.0))
    base = assemble(1.5, 24, 0.0, k)
    out = []
    for c in (0.3, 0.1, -0.1):
        g = lambda x, c=c: -0.1 + 0.9 * np.tanh(3.0 * (np.asarray(x)[..., 0] - c))
        op = base.with_data(g)
        rep = solve(op, tol=1e-11, method="cg")
        ov = grid_operator_values(op, rep)
        out.append(growth_lemma_check(rep.solution, 0.2, 0.05, tau=0.5, operator_values=ov,
                                      tol=2e-11 * op.D))
    zeros = [r.zero_measure for r in out]
    margins = [r.margin for r in out]
    assert zeros[0] > zeros[1] > zeros[2]
    assert margins[0] >= margins[1] >= margins[2] > 0


def test_growth_on_solved_halfspace_data():
    a = Anisotropy((1, 2), 0.5)
    k = KernelSpec(a)
    op, rep = solved(k, halfspace_data(2, 3), N=24, L=1.5)
    ov = grid_operator_values(op, rep)
    res = growth_lemma_check(rep.solution, unit_ball_volume(2) / 4, 0.01, a=a, operator_values=ov,
                             tol=2e-11 * op.D)
    assert res.holds and res.margin > 0


def test_harnack_unit_data():
    k = KernelSpec(Anisotropy((1, 4), 0.5))
    res, rep = harnack_ratio(1.0, k, N=12)
    assert res.ratio == pytest.approx(1.0, abs=1e-12)
    assert res.normalized == pytest.approx(1.0 / (1.0 + rep.residual), rel=1e-12)
    assert not res.flags


def test_harnack_scale_invariance():
    k = KernelSpec(Anisotropy((2, 2), 1.0))
    g = random_exterior(2, 4, nonnegative=True)
    base = assemble(1.0, 16, g, k)
    r1, _ = harnack_ratio(g, k, base=base, tol=1e-13)
    r2, _ = harnack_ratio(lambda x: 7.0 * g(x), k, base=base, tol=1e-13)
    assert r2.ratio == pytest.approx(r1.ratio, rel=1e-10)
    assert r1.ratio >= 1.0


def test_harnack_rejects_negative_data_and_flags_zero_inf():
    k = KernelSpec(Anisotropy((2, 2), 1.0))
    with pytest.raises(HypothesisViolation):
        harnack_ratio(lambda x: np.asarray(x)[..., 0], k, N=8)
    u = synthetic(lambda X: np.maximum(X[..., 0], 0.0), 16)
    res = harnack_from_solution(u, 0.0)
    assert "nonpositive infimum clamped" in res.flags and res.u_min == 0.0


def test_point_estimate_examples():
    zero = synthetic(lambda X: np.zeros(X.shape[:-1]), 16)
    assert "degenerate: u <= 0" in point_estimate_decay(zero).flags
    u = synthetic(lambda X: np.clip(1 - np.sum(X * X, -1), 0, 1), 64)
    rep = point_estimate_decay(u, thresholds=[0.25, 0.5, 0.9, 1.01, 2.0])
    assert list(rep.values[:2]) == [0.0, 0.0]
    assert np.all(np.diff(rep.values) >= 0)
    assert rep.passed and rep.exponent < 0


def test_point_estimate_solved_spike_refines():
    # data with a far-field spike: the distribution slope is stable under refinement
    k = KernelSpec(Anisotropy((2, 2), 1.0))
    g = lambda x: 20.0 * np.exp(-8.0 * np.sum((np.asarray(x) - [2.0, 0.0]) ** 2, axis=-1))
    slopes = []
    for N in (16, 32):
        _, rep = solved(k, g, N=N, L=1.5)
        res = point_estimate_decay(rep.solution, radius=1.0)
        assert res.passed
        slopes.append(res.exponent)
    assert abs(slopes[0] - slopes[1]) < 0.2 * abs(slopes[1])


def test_liouville_constant_data():
    k = KernelSpec(Anisotropy((2, 2), 1.0))
    rep = liouville_probe(k, N=8, data=lambda a, R: 3.0)
    assert "degenerate: zero oscillation" in rep.flags
    assert np.all(rep.values == 0)


def test_liouville_dipole_isotropic_refinement():
    k = KernelSpec(Anisotropy((2, 2), 1.0))
    r1 = liouville_probe(k, N=16)
    r2 = liouville_probe(k, N=24)
    assert r1.passed and r2.passed and r1.extra["monotone"]
    assert abs(r1.extra["gamma"] - r2.extra["gamma"]) < 0.2 * r2.extra["gamma"]


def test_dipole_data_is_odd_and_bounded():
    a = Anisotropy((1, 2), 0.5)
    g = dipole_data(a, 4.0)
    x = np.random.default_rng(0).normal(size=(50, 2)) * 10
    np.testing.assert_allclose(g(-x), -g(x))
    assert np.all(np.abs(g(x)) <= 1.0)


@pytest.mark.parametrize("b", [(2, 2), (1, 2), (1, 4)])
def test_holder_of_root_norm(b):
    a = Anisotropy(b, 0.5)
    u = synthetic(lambda X: np.sum(np.abs(X) ** np.array(b), -1) ** 0.25)
    rep = holder_fit(u, a)
    assert rep.exponent == pytest.approx(0.5, abs=0.05)
    an, eu, ok = holder_fit_both(u, a)
    assert ok and an.exponent >= a.b_min / 2 * eu.exponent - 0.05


def test_holder_affine_and_step():
    a = Anisotropy((2, 2), 1.0)
    rep = holder_fit(synthetic(lambda X: 2 * X[..., 0] + X[..., 1]), a)
    assert rep.exponent == 1.0 and math.isfinite(rep.extra["seminorm"])
    step = holder_fit(synthetic(lambda X: (X[..., 0] > 0.013).astype(float)), a)
    assert "fit fails: exponent near zero (discontinuity)" in step.flags and not step.passed
    const = holder_fit(synthetic(lambda X: np.full(X.shape[:-1], 2.0)), a)
    assert "degenerate: constant" in const.flags


def test_holder_fit_reproducible():
    a = Anisotropy((1, 2), 0.5)
    u = synthetic(lambda X: np.sin(3 * X[..., 0]) * np.abs(X[..., 1]) ** 0.3, 96)
    r1, r2 = holder_fit(u, a, seed=5), holder_fit(u, a, seed=5)
    assert r1.exponent == r2.exponent
    np.testing.assert_array_equal(r1.values, r2.values)


def test_gradient_holder_synthetic():
    a = Anisotropy((2, 2), 1.0)
    aff = gradient_holder_fit(synthetic(lambda X: 3 * X[..., 0] - X[..., 1]), a)
    assert "degenerate: constant" in aff.flags and aff.kind == "c1gamma"
    quad = gradient_holder_fit(synthetic(lambda X: X[..., 0] ** 2 + 2 * X[..., 1] ** 2), a)
    assert quad.exponent == pytest.approx(1.0, abs=1e-12)


def test_scaling_invariance_of_conclusions():
    k = KernelSpec(Anisotropy((1, 2), 1.0))
    g = random_exterior(2, 9)
    base = assemble(1.0, 24, g, k)
    u1 = solve(base, tol=1e-13, method="cg").solution
    u2 = solve(base.with_data(lambda x: 5.0 * g(x)), tol=1e-13, method="cg").solution
    d1, d2 = de_giorgi_iteration(u1, k.a), de_giorgi_iteration(u2, k.a)
    assert d2.exponent == pytest.approx(d1.exponent, abs=1e-10)
    h1, h2 = holder_fit(u1, k.a), holder_fit(u2, k.a)
    assert h2.exponent == pytest.approx(h1.exponent, abs=1e-10)
    assert h2.extra["seminorm"] == pytest.approx(5.0 * h1.extra["seminorm"], rel=1e-8)


def test_random_exterior_ranges():
    x = np.random.default_rng(1).normal(size=(1000, 3)) * 5
    v = random_exterior(3, 2)(x)
    assert np.all(np.abs(v) <= 1.0)
    w = random_exterior(3, 2, nonnegative=True)(x)
    np.testing.assert_allclose(w, v + 1.0)
    h = halfspace_data(3, 0)(x)
    assert np.all((h >= -1.0) & (h <= 0.8))
