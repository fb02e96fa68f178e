import math

import numpy as np
import pytest

from anisofrac.aniso_geometry import Anisotropy, ScalingMap, unit_ball_volume
from anisofrac.errors import PreconditionError, RangeError
from anisofrac.kernels import KernelSpec
from anisofrac.nonlocal_operator import (ETA, EvaluableFunction, barrier_eta, barrier_power,
                                         bump_Psi, calibrate_Psi, evaluate_L, evaluate_many,
                                         find_kappa_tau, find_p, frac_laplacian, operator_values,
                                         power_barrier_function, psi_c11_ratio, pucci,
                                         second_difference, silvestre_check)
from anisofrac.quadrature import QuadratureScheme
from oracles import dyda_second_difference_integral, richardson


def gaussian(scale=1.0):
    return EvaluableFunction(lambda x: np.exp(-np.sum(x * x, axis=-1) / scale**2),
                             M=1.0 / scale**2, sup_abs=1.0,
                             far_bound=lambda t: math.exp(-t * t / scale**2), name="gauss")


def test_second_difference_examples():
    aff = lambda z: 3.0 + z @ np.array([1.0, -2.0])
    y = np.random.default_rng(0).normal(size=(20, 2))
    np.testing.assert_allclose(second_difference(aff, np.array([0.3, 0.1]), y), 0.0, atol=1e-13)
    sq = lambda z: z[..., 0] ** 2
    yy = np.linspace(-2, 2, 9)[:, None]
    np.testing.assert_allclose(second_difference(sq, np.array([0.7]), yy), 2 * yy[:, 0] ** 2)
    # eta has Hessian -4 Id at the origin
    t = 1e-3
    d = second_difference(barrier_eta, np.zeros(2), np.array([[t, 0.0], [t, t]]))
    np.testing.assert_allclose(d, [-4 * t * t, -8 * t * t], rtol=1e-5)


def test_constant_function_gives_zero():
    k = KernelSpec(Anisotropy((1, 2), 0.5))
    u = EvaluableFunction(lambda x: 2.0 + 0 * x[..., 0], M=0.0, sup_abs=2.0)
    v = evaluate_L(u, np.array([0.2, -0.1]), k)
    # only the far-field tail of -2u(x) against the outer radius survives
    assert abs(v.shells) < 1e-12 and abs(v.near) < 1e-12
    assert abs(v.value) <= abs(v.far) + 1e-12
    assert abs(v.far) < 1e-6


def test_clamped_affine_is_small():
    k = KernelSpec(Anisotropy((2, 2), 1.0))
    R = 1e4
    u = EvaluableFunction(lambda x: np.clip(x[..., 0], -R, R), M=0.0, eta0=R / 2, sup_abs=R)
    v = evaluate_L(u, np.array([0.3, 0.2]), k)
    # the clamp only acts beyond |y| ~ R; the remainder is O(R^{1-s}) times the tail mass
    assert abs(v.value) < 1e-2


@pytest.mark.parametrize("p, s", [(2, 1.0), (4, 0.5), (4, 1.5)])
def test_one_dimensional_closed_form(p, s):
    a = Anisotropy((2,), s)
    k = KernelSpec(a)
    u = EvaluableFunction(lambda z: np.clip(1 - z[..., 0] ** 2, 0, None) ** p, M=p * (2 * p - 1),
                          sup_abs=1.0, support_radius=1.0)
    for x in (0.0, 0.4, 0.8):
        v = evaluate_L(u, np.array([x]), k)
        exact = a.q_max * dyda_second_difference_integral(np.array([x]), 1, s, p)
        assert abs(v.value - exact) <= v.error + 1e-9 * abs(exact)
        assert abs(v.value - exact) < 1e-4 * abs(exact)


def test_eta_in_1d_against_extrapolated_quadrature():
    a = Anisotropy((2,), 1.0)
    k = KernelSpec(a)
    q = QuadratureScheme()
    v1 = evaluate_L(ETA, np.zeros(1), k, q).value
    v2 = evaluate_L(ETA, np.zeros(1), k, q.refined()).value
    v3 = evaluate_L(ETA, np.zeros(1), k, q.refined(4)).value
    assert abs(v2 - v3) < 0.01 * abs(v3)
    ex = richardson(v2, v3, 4)
    # closed form for (1 - x^2)^2
    exact = a.q_max * dyda_second_difference_integral(np.zeros(1), 1, 1.0, 2)
    assert abs(ex - exact) < 1e-6 * abs(exact)
    assert abs(v1 - exact) < 0.01 * abs(exact)


@pytest.mark.parametrize("x", [[0.0, 0.0], [0.5, 0.2], [-0.3, 0.7]])
def test_isotropic_2d_closed_form(x):
    a = Anisotropy((2, 2), 1.2)
    k = KernelSpec(a)
    u = EvaluableFunction(lambda z: np.clip(1 - np.sum(z * z, -1), 0, None) ** 4, M=28.0,
                          sup_abs=1.0, support_radius=1.0)
    v = evaluate_L(u, np.array(x), k)
    exact = a.q_max * dyda_second_difference_integral(np.array(x), 2, 1.2, 4)
    assert abs(v.value - exact) <= v.error


def test_missing_declaration_and_reach():
    k = KernelSpec(Anisotropy((2,), 1.0))
    with pytest.raises(PreconditionError):
        evaluate_L(EvaluableFunction(lambda z: z[..., 0]), np.zeros(1), k)
    u = EvaluableFunction(lambda z: z[..., 0] ** 2, M=1.0, eta0=1e-6, sup_abs=1.0)
    with pytest.raises(PreconditionError):
        evaluate_L(u, np.zeros(1), k)


def test_pucci_degenerate_bounds_equal_L():
    a = Anisotropy((1, 2), 0.5)
    k = KernelSpec(a)
    vals = operator_values(gaussian(), np.array([0.2, 0.3]), k)
    assert vals["plus"].value == pytest.approx(vals["L"].value, rel=1e-13)
    assert vals["minus"].value == pytest.approx(vals["L"].value, rel=1e-13)


def test_pucci_antisymmetry_and_sandwich():
    a = Anisotropy((1, 4), 0.9)
    k = KernelSpec(a, 0.5, 2.0, mode="bounded", multiplier_name="angular")
    u = gaussian(0.7)
    x = np.array([0.1, -0.2])
    plus_neg = pucci(-u, x, k, sign="plus").value
    vals = operator_values(u, x, k)
    assert plus_neg == pytest.approx(-vals["minus"].value, rel=1e-10)
    assert vals["minus"].value <= vals["L"].value <= vals["plus"].value


def test_pucci_of_concave_cap_is_nonpositive():
    a = Anisotropy((2, 2), 1.0)
    cap = EvaluableFunction(lambda z: 1.0 - np.sum(z * z, -1), M=1.0, sup_abs=None,
                            far_bound=lambda t: 1 + t * t)
    k = KernelSpec(a, 0.5, 2.0, mode="bounded", multiplier_name="constant")
    q = QuadratureScheme(r_out=50.0)
    v = pucci(cap, np.zeros(2), k, q, sign="plus")
    assert v.value <= 0.0


def test_pucci_sign_validation():
    with pytest.raises(ValueError):
        pucci(gaussian(), np.zeros(2), KernelSpec(Anisotropy((2, 2), 1.0)), sign="up")


def test_translation_covariance():
    a = Anisotropy((1, 2), 0.8)
    k = KernelSpec(a)
    z = np.array([0.4, -0.3])
    x = np.array([0.1, 0.2])
    v0 = evaluate_L(gaussian(), x, k)
    v1 = evaluate_L(gaussian().shifted(z), x + z, k)
    assert abs(v0.value - v1.value) <= v0.error + v1.error


@pytest.mark.parametrize("r", [0.5, 2.0])
def test_scaling_covariance(r):
    # L[u o T_r](x) = r^s L[u](T_r x) for the reference kernel
    a = Anisotropy((1, 2), 0.5)
    k = KernelSpec(a)
    T = ScalingMap("T_beta", r, a)
    f = gaussian()
    g = EvaluableFunction(lambda z: f(T.apply(z)), M=float(np.max(T.factors)) ** 2, sup_abs=1.0,
                          far_bound=lambda t: math.exp(-(t * float(np.min(T.factors))) ** 2))
    x = np.array([0.3, -0.2])
    lhs = evaluate_L(g, x, k).value
    rhs = r**a.s * evaluate_L(f, T.apply(x), k).value
    assert lhs == pytest.approx(rhs, rel=0.01)


def test_evaluate_many_thread_invariant():
    k = KernelSpec(Anisotropy((2, 2), 1.0))
    pts = np.random.default_rng(0).uniform(-0.5, 0.5, (6, 2))
    r1 = evaluate_many(ETA, pts, k, threads=1)
    r4 = evaluate_many(ETA, pts, k, threads=4)
    assert [v["L"].value for v in r1] == [v["L"].value for v in r4]


def test_barrier_eta_values():
    assert barrier_eta(np.zeros(3)) == 1.0
    assert barrier_eta(np.array([1.0, 0.0])) == 0.0
    t = 1e-4
    # value and gradient vanish on the unit sphere
    assert barrier_eta(np.array([1 - t, 0.0])) < 5 * t * t
    assert barrier_eta(np.array([1 + t, 0.0])) == 0.0


@pytest.mark.parametrize("s", [1.0, 1.5, 1.9, 1.99])
def test_eta_bounded_as_s_approaches_limit(s):
    a = Anisotropy((2, 2), s)
    v = frac_laplacian(ETA, np.array([0.3, 0.2]), a)
    assert np.isfinite(v.value) and abs(v.value) < 50.0


def test_barrier_power_switch_and_symmetry():
    a = Anisotropy((2, 2), 1.0)
    p = 3.0
    assert barrier_power(a, p, np.array([0.4, 0.0])) == 2.0**p
    assert barrier_power(a, p, np.array([0.5, 0.0])) == pytest.approx(2.0**p)
    assert barrier_power(a, p, np.array([0.6, 0.0])) == pytest.approx(0.6**-p)
    th = np.linspace(0, 2 * np.pi, 7)
    P = 0.8 * np.column_stack([np.cos(th), np.sin(th)])
    np.testing.assert_allclose(barrier_power(a, p, P), 0.8**-p)


def test_find_p_isotropic():
    a = Anisotropy((2, 2), 1.0)
    cert = find_p(a, 8.0)
    assert cert.certified
    assert cert.min_lower >= 0
    assert cert.history[-1]["p"] == cert.p
    with pytest.raises(RangeError):
        find_p(a, 1.0)


def test_power_barrier_function_declares_regularity():
    a = Anisotropy((1, 2), 0.5)
    f = power_barrier_function(a, 4.0)
    for x in ([1.0, 0.0], [0.0, 2.0], [3.0, 1.0]):
        assert f.check_regularity(np.array(x), samples=128) <= 1.0 + 1e-3


def test_bump_Psi_support_and_continuity():
    a = Anisotropy((1, 2), 0.5)
    n = 2
    sc = 0.25 ** (2.0 / a.barr)
    outer = 3 * math.sqrt(n)
    e = np.array([0.6, 0.8])
    assert bump_Psi(a, (outer + 1e-9) * e * sc, 4.0, 1.0) == 0.0
    assert abs(bump_Psi(a, (outer - 1e-9) * e * sc, 4.0, 1.0)) < 1e-9
    # gradient jump across the cap boundary is O(step), so the ratio settles
    r3, r4 = psi_c11_ratio(a, 4.0, step=1e-3), psi_c11_ratio(a, 4.0, step=1e-4)
    assert np.isfinite(r4) and abs(r3 - r4) < 0.02 * r4


def test_calibrate_Psi_grid_minimum():
    a = Anisotropy((2, 2), 1.0)
    cal = calibrate_Psi(a, 2.0)
    assert cal.success
    half = 3.0 * 0.25
    ax = np.linspace(-half, half, 101)[1:-1]
    X = np.stack(np.meshgrid(ax, ax, indexing="ij"), -1).reshape(-1, 2)
    assert np.min(bump_Psi(a, X, 2.0, cal.c_tilde)) > 3.0 - 1e-2


def test_silvestre_monotone_in_tau_and_kappa():
    a = Anisotropy((2, 2), 1.0)
    d = unit_ball_volume(2) / 2
    eta_max = 10.0
    m = [silvestre_check(a, d, 0.01, t, grid=128, eta_max=eta_max).margin for t in (0.2, 0.1, 0.05)]
    assert m[0] < m[1] < m[2]
    r1 = silvestre_check(a, d, 0.02, 0.1, grid=128, eta_max=eta_max)
    r2 = silvestre_check(a, d, 0.01, 0.1, grid=128, eta_max=eta_max)
    assert r2.eta_term == pytest.approx(0.5 * r1.eta_term)
    with pytest.raises(RangeError):
        silvestre_check(a, d, 0.3, 0.1, eta_max=eta_max)


def test_find_kappa_tau_isotropic():
    a = Anisotropy((2, 2), 1.0)
    d = unit_ball_volume(2) / 2
    res = find_kappa_tau(a, d, grid=256)
    assert res.certified and res.margin > 0
    again = silvestre_check(a, d, res.kappa, res.tau, grid=512)
    assert again.margin > 0
    assert abs(again.margin - res.margin) < 0.1 * res.margin
