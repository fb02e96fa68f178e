import numpy as np
import pytest

from anisofrac.aniso_geometry import Anisotropy
from anisofrac.dirichlet_solver import (assemble, comparison_check, maximum_principle_check,
                                        pucci_grid, solve, solve_dirichlet)
from anisofrac.errors import PreconditionError, ResolutionError
from anisofrac.kernels import KernelSpec
from anisofrac.regularity_harness import random_exterior


def smooth_bump(x):
    return np.exp(-np.sum((x - 0.3) ** 2, axis=-1))


def self_convergence(k, Ns, g=smooth_bump, inner=None):
    """Max differences between consecutive resolutions on the coarse nodes."""
    sols = [solve_dirichlet(k, g, N=N, method="cg", tol=1e-12)[1].solution for N in Ns]
    out = []
    for c, f in zip(sols, sols[1:]):
        e = np.abs(c.values - f.values[tuple(slice(None, None, 2) for _ in range(c.n))])
        if inner is not None:
            e = e[np.all(np.abs(c.coords()) <= inner, axis=-1)]
        out.append(float(e.max()))
    return out


@pytest.mark.parametrize("b, s", [((2,), 1.0), ((2, 2), 1.0), ((1, 4), 0.5)])
def test_constants_are_exact(b, s):
    k = KernelSpec(Anisotropy(b, s))
    op, rep = solve_dirichlet(k, 2.5, N=8)
    assert rep.converged and rep.iterations <= 2
    assert np.max(np.abs(rep.solution.values - 2.5)) <= 1e-10
    assert np.max(np.abs(op.residual(np.full(op.interior_shape, 2.5)))) <= 1e-10 * op.D


def test_unit_data_converges_immediately():
    k = KernelSpec(Anisotropy((1, 2), 0.5))
    _, rep = solve_dirichlet(k, lambda x: np.ones(x.shape[:-1]), N=8)
    assert rep.iterations <= 2
    np.testing.assert_allclose(rep.interior, 1.0, atol=1e-12)


def test_weights_nonnegative_and_symmetric():
    k = KernelSpec(Anisotropy((1, 4), 0.6))
    op = assemble(1.0, 8, 0.0, k)
    assert op.W.min() >= 0 and op.far_weights.min() >= 0
    np.testing.assert_array_equal(op.W, np.flip(op.W))
    # row sums of the homogeneous part vanish: diagonal equals total off-diagonal mass
    assert op.D == pytest.approx(op.W.sum() + 2 * op.far_weights.sum(), rel=1e-14)


def test_reflection_symmetric_data_gives_symmetric_solution():
    k = KernelSpec(Anisotropy((2, 2), 1.0))
    g = lambda x: np.cos(2 * x[..., 0]) + x[..., 1] ** 2
    _, rep = solve_dirichlet(k, g, N=12, method="cg", tol=1e-12)
    u = rep.interior
    np.testing.assert_allclose(u, u[::-1, ::-1], atol=1e-10)


def test_weights_continuous_in_anisotropy():
    # finite difference in eps: W(2 eps) - W(0) is about twice W(eps) - W(0)
    eps = 1e-6
    W = [assemble(1.0, 8, 0.0, KernelSpec(Anisotropy((2, 2 + t), 1.0))).W for t in (0, eps, 2 * eps)]
    d1, d2 = W[1] - W[0], W[2] - W[0]
    scale = W[0].max()
    assert np.max(np.abs(d1)) < 1e-4 * scale
    assert np.max(np.abs(d2 - 2 * d1)) < 0.1 * np.max(np.abs(d1)) + 1e-12 * scale


def test_two_initial_guesses_agree():
    k = KernelSpec(Anisotropy((1, 2), 0.5))
    g = lambda x: (x[..., 0] > 5.0).astype(float)
    op = assemble(1.0, 10, g, k)
    r1 = solve(op, tol=1e-11)
    r2 = solve(op, tol=1e-11, u0=np.full(op.interior_shape, 3.0))
    assert r1.converged and r2.converged
    np.testing.assert_allclose(r1.interior, r2.interior, atol=1e-9)


def test_jacobi_and_cg_agree_and_threads_match():
    k = KernelSpec(Anisotropy((2, 2), 1.0))
    g = random_exterior(2, 3)
    op = assemble(1.0, 12, g, k)
    rj = solve(op, tol=1e-11, method="jacobi")
    rc = solve(op, tol=1e-11, method="cg")
    np.testing.assert_allclose(rj.interior, rc.interior, atol=1e-8)
    rt = solve(op, tol=1e-11, method="jacobi", threads=2)
    np.testing.assert_allclose(rj.interior, rt.interior, rtol=0, atol=1e-13)
    assert rt.iterations == rj.iterations
    with pytest.raises(ValueError):
        solve(op, method="gauss")


def test_max_iter_reports_nonconvergence():
    k = KernelSpec(Anisotropy((2,), 1.0))
    op = assemble(1.0, 16, random_exterior(1, 0), k)
    rep = solve(op, tol=1e-14, max_iter=2)
    assert not rep.converged and rep.iterations == 2


def test_comparison_shift_by_one_is_exact():
    k = KernelSpec(Anisotropy((1, 4), 0.5))
    g = random_exterior(2, 7)
    base = assemble(1.0, 10, g, k)
    r2 = solve(base, tol=1e-12, method="cg")
    r1 = solve(base.with_data(lambda x: g(x) + 1.0), tol=1e-12, method="cg")
    np.testing.assert_allclose(r1.interior, r2.interior + 1.0, atol=1e-9)
    assert comparison_check(r1, r2).holds
    same = comparison_check(r2, r2)
    assert same.holds and same.min_difference == 0.0


@pytest.mark.parametrize("seed", range(4))
def test_comparison_and_maximum_principle_random(seed):
    k = KernelSpec(Anisotropy((2, 2), 1.0))
    g2 = random_exterior(2, seed)
    bump = random_exterior(2, seed + 100, nonnegative=True)
    g1 = lambda x: g2(x) + bump(x)
    base = assemble(1.0, 10, g2, k)
    r2 = solve(base, tol=1e-12, method="cg")
    op1 = base.with_data(g1)
    r1 = solve(op1, tol=1e-12, method="cg")
    assert comparison_check(r1, r2).holds
    assert maximum_principle_check(base, r2) and maximum_principle_check(op1, r1)


def test_nonnegativity_preserved():
    k = KernelSpec(Anisotropy((1, 2), 0.5))
    _, rep = solve_dirichlet(k, random_exterior(2, 5, nonnegative=True), N=10, method="cg",
                             tol=1e-12)
    assert rep.u_min >= -1e-10


def test_comparison_rejects_mismatched_grids():
    k = KernelSpec(Anisotropy((2,), 1.0))
    _, a = solve_dirichlet(k, 0.0, N=8)
    _, b = solve_dirichlet(k, 0.0, N=16)
    with pytest.raises(PreconditionError):
        comparison_check(a, b)


def test_resolution_errors():
    k = KernelSpec(Anisotropy((2,), 1.0))
    with pytest.raises(ResolutionError):
        assemble(1.0, 2, 0.0, k)
    with pytest.raises(ResolutionError):
        assemble(1.0, 8, 0.0, k, rin_factor=2.0)


def test_self_convergence_smooth_data():
    d = self_convergence(KernelSpec(Anisotropy((2,), 1.5)), [16, 32, 64, 128])
    assert all(x / y >= 1.5 for x, y in zip(d, d[1:]))


def test_self_convergence_limited_by_boundary_layer():
    # solutions behave like dist^(s/2) at the boundary, so the global factor is 2^(s/2)
    k = KernelSpec(Anisotropy((2,), 1.0))
    d = self_convergence(k, [32, 64, 128, 256])
    for x, y in zip(d, d[1:]):
        assert abs(x / y - np.sqrt(2)) < 0.05
    inner = self_convergence(k, [32, 64, 128, 256], inner=0.5)
    assert all(x / y >= 1.5 for x, y in zip(inner, inner[1:]))


def test_solved_grid_function_is_harmonic_within_error_bars():
    # the pointwise operator of the interpolated solution vanishes within its error bar
    k = KernelSpec(Anisotropy((2, 2), 1.0))
    op, rep = solve_dirichlet(k, random_exterior(2, 1), N=16, method="cg", tol=1e-12)
    vals = pucci_grid(rep.solution, k, np.array([[0.0, 0.0], [0.25, -0.25]]), sign="plus")
    assert all(abs(v.value) <= v.error for v in vals)
