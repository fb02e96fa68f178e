"""Monotone grid discretisation of ``L u = 0`` in a box with exterior data.

For an interior node ``x`` the operator is

    L_h u(x) = sum_o W[o] U(x + o) + b(x) - D u(x)

where ``W`` is a translation-invariant stencil on grid offsets, ``U`` holds
the unknowns inside the box and samples of the exterior data ``g`` on the
surrounding nodes, ``b`` collects quadrature nodes whose reflections both
leave the stencil window (``g`` evaluated exactly there), and ``D`` is the
total weight.  ``W`` is built by scattering every shell-quadrature node
``+-y`` onto its ``2^n`` surrounding offsets with multilinear hat weights;
the near field ``||y|| < r_in`` becomes the axis second-difference stencil
with weights ``int y_i^2 K / h_i^2``.  All weights are nonnegative and sum
to ``D``, so constants are exact and the matrix is an M-matrix.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import fft as sfft
from scipy.sparse.linalg import LinearOperator, cg

from ._backend import scatter_multilinear
from .errors import PreconditionError, ResolutionError
from .gridfunc import GridFunction
from .kernels import KernelSpec
from .nonlocal_operator import EvaluableFunction, _near_field, operator_values
from .quadrature import QuadratureScheme, angular_data, polar_points, radial_rule


def _as_callable(g):
    if callable(g):
        return g
    c = float(g)
    return lambda z: np.full(np.asarray(z).shape[:-1], c)


class _Convolver:
    """Valid-mode convolution with a fixed symmetric stencil via real FFTs."""

    def __init__(self, W, ext_shape, workers=1):
        self.W = W
        self.ext_shape = tuple(ext_shape)
        self.full = tuple(sfft.next_fast_len(e + w - 1, real=True)
                          for e, w in zip(ext_shape, W.shape))
        self.Wf = sfft.rfftn(W, self.full, workers=workers)
        self.start = tuple(w - 1 for w in W.shape)
        self.workers = workers

    def __call__(self, A, out_shape):
        F = sfft.irfftn(sfft.rfftn(A, self.full, workers=self.workers) * self.Wf, self.full,
                        workers=self.workers)
        sl = tuple(slice(s, s + o) for s, o in zip(self.start, out_shape))
        return F[sl]


@dataclass
class DiscreteOperator:
    """Assembled operator on the interior nodes of ``(-L, L)^n``."""

    k: KernelSpec
    half_width: np.ndarray
    N: np.ndarray
    h: np.ndarray
    r_in: float
    pad: np.ndarray
    W: np.ndarray
    D: float
    near_weights: np.ndarray
    far_nodes: np.ndarray
    far_weights: np.ndarray
    b_far: np.ndarray
    ext: np.ndarray
    g: object
    g_range: tuple
    info: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.k.a.n

    @property
    def interior_shape(self):
        return tuple(int(v) - 1 for v in self.N)

    def interior_axes(self):
        return [-self.half_width[i] + self.h[i] * np.arange(1, self.N[i]) for i in range(self.n)]

    def interior_coords(self):
        return np.stack(np.meshgrid(*self.interior_axes(), indexing="ij"), axis=-1)

    def interior_slices(self):
        return tuple(slice(int(p), int(p) + s) for p, s in zip(self.pad, self.interior_shape))

    def convolver(self, workers=1):
        return _Convolver(self.W, self.ext.shape, workers)

    def residual(self, u_int, conv=None):
        """``L_h u`` on the interior for interior values ``u_int``."""
        conv = conv or self.convolver()
        A = self.ext.copy()
        A[self.interior_slices()] = u_int
        return conv(A, self.interior_shape) + self.b_far - self.D * u_int

    def with_data(self, g):
        """Same stencil with new exterior data."""
        gfun = _as_callable(g)
        ext, b, rng = _attach_data(self.half_width, self.N, self.h, self.pad, self.far_nodes,
                                   self.far_weights, gfun)
        return replace(self, ext=ext, b_far=b, g=gfun, g_range=rng)

    def weights_summary(self):
        return {
            "D": self.D,
            "stencil_sum": float(self.W.sum()),
            "far_sum": float(2.0 * self.far_weights.sum()),
            "min_weight": float(min(self.W.min(), self.far_weights.min(initial=0.0))),
        }


def _attach_data(L, Nv, h, pad, far_y, far_w, gfun):
    """Exterior samples on the extended grid and the far sums ``b``."""
    n = len(L)
    # exterior samples on the extended grid
    int_shape = tuple(Nv - 1)
    ext_shape = tuple(np.array(int_shape) + 2 * pad)
    axes = [-L[i] + h[i] * (np.arange(ext_shape[i]) - pad[i] + 1) for i in range(n)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    interior = np.all(np.abs(X) < L - 1e-12 * h, axis=-1)
    ext = np.where(interior, 0.0, gfun(np.where(interior[..., None], 0.0, X)))
    gvals = [ext[~interior]]

    # far contribution b(x) = sum_f w_f (g(x + y_f) + g(x - y_f))
    Xi = np.stack(np.meshgrid(*[-L[i] + h[i] * np.arange(1, Nv[i]) for i in range(n)],
                              indexing="ij"), axis=-1).reshape(-1, n)
    b = np.zeros(len(Xi))
    chunk = max(1, int(4e6 // max(far_w.size, 1)))
    gmin, gmax = float(gvals[0].min()), float(gvals[0].max())
    for i0 in range(0, len(Xi), chunk):
        Xc = Xi[i0:i0 + chunk, None, :]
        gp = gfun(Xc + far_y[None])
        gm = gfun(Xc - far_y[None])
        b[i0:i0 + chunk] = (gp + gm) @ far_w
        gmin = min(gmin, float(gp.min(initial=np.inf)), float(gm.min(initial=np.inf)))
        gmax = max(gmax, float(gp.max(initial=-np.inf)), float(gm.max(initial=-np.inf)))

    return ext, b.reshape(int_shape), (gmin, gmax)


def assemble(half_width, N, g, k, q=None, rin_factor=1.0, angular_cap=None, threads=1):
    """Assemble the discrete operator on the box ``(-L, L)^n``.

    Parameters
    ----------
    half_width : float or sequence
        Box half-widths ``L_i``.
    N : int or sequence
        Intervals per axis; interior nodes are ``-L + j h`` for ``0 < j < N``.
    g : callable or float
        Exterior data, evaluated on the nodes around the box and at far
        quadrature nodes.
    k : KernelSpec
    q : QuadratureScheme, optional
        Supplies ``shells_per_octave``, ``radial_nodes``, ``angular_nodes``
        and ``r_out``; the inner radius is set by the grid to
        ``rin_factor * min_i h_i^(b_i/2)`` so that ``E_{r_in,1}`` fits inside
        one cell.
    """
    a = k.a
    n = a.n
    q = q or QuadratureScheme()
    L = np.broadcast_to(np.asarray(half_width, dtype=float), (n,)).copy()
    Nv = np.broadcast_to(np.asarray(N, dtype=int), (n,)).copy()
    if np.any(Nv < 4):
        raise ResolutionError("need at least 4 intervals per axis")
    h = 2.0 * L / Nv
    r_in = rin_factor * float(np.min(h ** (np.asarray(a.b) / 2.0)))
    if not (0 < rin_factor <= 1.0):
        raise ResolutionError("r_in must fit inside one grid cell (rin_factor <= 1)")
    gfun = _as_callable(g)

    # stencil window: |y_i| < 2 L_i + h_i covers every interior pair
    ylim = 2.0 * L + h
    pad = np.ceil(ylim / h).astype(int) + 1
    wshape = tuple(2 * pad + 1)
    W = np.zeros(int(np.prod(wshape)))
    wshape_arr = np.array(wshape, dtype=np.intp)

    r_out = max(q.resolved_r_out(a.s), 4.0 * float(np.max(ylim ** (np.asarray(a.b) / 2.0))))
    scheme = QuadratureScheme(r_in=r_in, r_out=r_out, shells_per_octave=q.shells_per_octave,
                              radial_nodes=q.radial_nodes, angular_nodes=q.angular_nodes,
                              seed=q.seed)
    edges = scheme.shell_edges(r_out)
    rho, wr = radial_rule(edges, q.radial_nodes, a.s)
    if angular_cap is None:
        angular_cap = {1: 2, 2: 2048, 3: 96}.get(n, 64)
    hmin = float(h.min())
    far_y, far_w, far_shell = [], [], []
    lost = 0.0
    cache = {}
    barr = np.asarray(a.b)
    for kk in range(len(edges) - 1):
        window_inside = np.sum(ylim**2 / edges[kk] ** (4.0 / barr)) < 1.0
        if window_inside:
            # every node of this shell is far: g is evaluated exactly there
            mk = q.angular_nodes
        else:
            extent = max(edges[kk + 1] ** (2.0 / bb) for bb in a.b)
            mk = int(min(angular_cap, max(q.angular_nodes, 2 * math.ceil(math.pi * extent / hmin))))
        mk += mk % 2
        if mk not in cache:
            cache[mk] = angular_data(a, mk, half=True, seed=q.seed)
        ang = cache[mk]
        Y = polar_points(a, rho[kk], ang.theta).reshape(-1, n)
        w = (wr[kk][:, None] * ang.weight[None, :]).ravel() * k.ratio(Y)
        inside = np.all(np.abs(Y) < ylim, axis=1)
        if np.any(inside):
            Yi = Y[inside] / h
            wi = np.ascontiguousarray(w[inside])
            for sgn in (1.0, -1.0):
                pts = np.ascontiguousarray(sgn * Yi + pad)
                lost += scatter_multilinear(pts, wi, W, wshape_arr)
        if np.any(~inside):
            far_y.append(Y[~inside])
            far_w.append(w[~inside])
            far_shell.append(np.full(int((~inside).sum()), kk))
    if lost > 1e-12 * max(W.sum(), 1.0):
        raise ResolutionError("stencil window too small for the quadrature nodes")
    W = W.reshape(wshape)
    far_y = np.concatenate(far_y) if far_y else np.zeros((0, n))
    far_w = np.concatenate(far_w) if far_w else np.zeros(0)
    far_shell = np.concatenate(far_shell) if far_shell else np.zeros(0, dtype=int)

    # tail beyond r_out, lumped onto the outermost far shell
    ang0 = angular_data(a, q.angular_nodes, half=True, seed=q.seed)
    tail = float(ang0.weight.sum()) * r_out ** (-a.s) / a.s
    if k.mode == "reference":
        tail *= a.q_max
    else:
        tail *= float(np.mean(k.ratio(polar_points(a, np.array([r_out]), ang0.theta)[0])))
    if far_w.size:
        outer = far_shell == far_shell.max()
        if not np.any(outer):
            outer = np.ones(far_w.size, dtype=bool)
        far_w = far_w.copy()
        far_w[outer] *= 1.0 + tail / far_w[outer].sum()

    # near field: axis second differences
    center = tuple(pad)
    near_w = np.zeros(n)
    ang_near = angular_data(a, q.angular_nodes, half=True, seed=q.seed)
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        ci = _near_field(a, e, r_in, ang_near, k.ratio, ["L"], k.lam, k.Lam, a.q_max,
                         q.radial_nodes)["L"]
        near_w[i] = ci / h[i] ** 2
        for sgn in (1, -1):
            idx = list(center)
            idx[i] += sgn
            W[tuple(idx)] += near_w[i]
    W[center] = 0.0  # a node never couples to itself
    W = 0.5 * (W + np.flip(W))  # exact symmetry in floating point
    D = float(W.sum() + 2.0 * far_w.sum())

    ext, b, g_range = _attach_data(L, Nv, h, pad, far_y, far_w, gfun)
    return DiscreteOperator(
        k=k, half_width=L, N=Nv, h=h, r_in=r_in, pad=pad, W=W, D=D, near_weights=near_w,
        far_nodes=far_y, far_weights=far_w, b_far=b, ext=ext, g=gfun,
        g_range=g_range,
        info={"shells": len(edges) - 1, "r_out": r_out, "far_count": int(far_w.size),
              "stencil_shape": list(wshape)},
    )


@dataclass
class SolveReport:
    iterations: int
    residual: float
    scaled_residual: float
    converged: bool
    solution: GridFunction
    u_min: float
    u_max: float
    method: str
    seconds: float
    interior: np.ndarray = None
    shift: float = 0.0

    def to_json(self):
        return {
            "iterations": self.iterations,
            "residual": self.residual,
            "scaled_residual": self.scaled_residual,
            "converged": self.converged,
            "u_min": self.u_min,
            "u_max": self.u_max,
            "method": self.method,
            "shift": self.shift,
        }


def solve(op, tol=1e-8, max_iter=100000, method="jacobi", damping=1.0, u0=None, threads=1):
    """Solve ``L_h u = 0`` with the exterior data built into ``op``.

    The data are first shifted by a constant ``c`` (the mean exterior
    sample) so that constant data give ``u = c`` exactly.  ``method`` is
    ``"jacobi"`` (damped fixed point ``u <- (W * U + b) / D``, reads only
    the previous iterate) or ``"cg"`` (conjugate gradients on the same
    symmetric positive definite system).  Convergence means
    ``max |L_h u| <= tol * D``.
    """
    t0 = time.perf_counter()
    conv = op.convolver(threads)
    shape = op.interior_shape
    sl = op.interior_slices()
    mask = np.ones(op.ext.shape, dtype=bool)
    mask[sl] = False
    c = float(op.ext[mask].mean()) if mask.any() else 0.0
    ext0 = np.where(mask, op.ext - c, 0.0)
    rhs = conv(ext0, shape) + (op.b_far - c * 2.0 * op.far_weights.sum())
    D = op.D
    v = np.zeros(shape) if u0 is None else np.asarray(u0, dtype=float).reshape(shape) - c

    def Kv(x):
        A = np.zeros(op.ext.shape)
        A[sl] = x
        return conv(A, shape)

    it = 0
    converged = False
    if method == "jacobi":
        res = Kv(v) + rhs - D * v
        while it < max_iter:
            if np.max(np.abs(res)) <= tol * D:
                converged = True
                break
            v = v + damping * res / D
            res = Kv(v) + rhs - D * v
            it += 1
        if not converged and np.max(np.abs(res)) <= tol * D:
            converged = True
    elif method == "cg":
        size = int(np.prod(shape))
        A = LinearOperator((size, size), matvec=lambda x: D * x - Kv(x.reshape(shape)).ravel(),
                           dtype=float)
        count = [0]

        def cb(_):
            count[0] += 1

        sol, _ = cg(A, rhs.ravel(), x0=v.ravel(), rtol=0.0, atol=tol * D * 1e-2,
                    maxiter=max_iter, callback=cb)
        v = sol.reshape(shape)
        it = count[0]
        res = Kv(v) + rhs - D * v
        converged = bool(np.max(np.abs(res)) <= tol * D)
    else:
        raise ValueError(f"unknown method {method!r}")

    u_int = v + c
    full = closed_grid_values(op, u_int)
    L = op.half_width
    sol = GridFunction(-L, op.h, full, exterior=op.g)
    r = float(np.max(np.abs(res))) if res.size else 0.0
    return SolveReport(it, r, r / D, converged, sol, float(u_int.min()), float(u_int.max()),
                       method, time.perf_counter() - t0, interior=u_int, shift=c)


def closed_grid_values(op, u_int):
    """Interior values plus exterior samples on the boundary nodes."""
    n = op.n
    shape = tuple(int(v) + 1 for v in op.N)
    sl_ext = tuple(slice(int(p) - 1, int(p) - 1 + s) for p, s in zip(op.pad, shape))
    full = op.ext[sl_ext].copy()
    full[tuple(slice(1, -1) for _ in range(n))] = u_int
    return full


def solve_dirichlet(k, g, half_width=1.0, N=32, q=None, tol=1e-8, max_iter=100000,
                    method="jacobi", threads=1, base=None):
    """Assemble and solve; ``base`` reuses the stencil of an earlier operator."""
    op = base.with_data(g) if base is not None else assemble(half_width, N, g, k, q, threads=threads)
    return op, solve(op, tol=tol, max_iter=max_iter, method=method, threads=threads)


@dataclass
class ComparisonResult:
    holds: bool
    min_difference: float

    def to_json(self):
        return {"holds": self.holds, "min_difference": self.min_difference}


def comparison_check(r1, r2, tol=1e-10):
    """Discrete comparison: ``u1 >= u2 - tol`` at every interior node."""
    if r1.interior.shape != r2.interior.shape:
        raise PreconditionError("solutions live on different grids")
    d = float(np.min(r1.interior - r2.interior))
    return ComparisonResult(d >= -tol, d)


def maximum_principle_check(op, report, tol=1e-10):
    """``inf g <= u <= sup g`` over every exterior sample used by ``op``."""
    lo, hi = op.g_range
    return report.u_min >= lo - tol and report.u_max <= hi + tol


def grid_evaluable(gf, M=None):
    """Wrap a :class:`GridFunction` for the pointwise operators.

    The quadratic model uses second differences with the grid step, and
    ``M`` defaults to half the largest axis second difference over the grid.
    """
    if M is None:
        M = 0.0
        v = gf.values
        for i in range(gf.n):
            if v.shape[i] >= 3:
                d2 = np.diff(v, 2, axis=i) / gf.h[i] ** 2
                M = max(M, 0.5 * float(np.max(np.abs(d2))))
    sup = float(np.max(np.abs(gf.values)))
    ext = gf.exterior
    return EvaluableFunction(gf, M=M, eta0=math.inf, sup_abs=sup if not callable(ext) else None,
                             name="grid", hessian_step=gf.h.copy())


def pucci_grid(gf, k, points, sign="plus", q=None):
    """``M^+`` or ``M^-`` of a grid function at the given points.

    The inner radius is tied to the grid as in :func:`assemble`.
    """
    a = k.a
    q = q or QuadratureScheme()
    r_in = float(np.min(gf.h ** (np.asarray(a.b) / 2.0)))
    qq = QuadratureScheme(r_in=r_in, r_out=q.r_out, shells_per_octave=q.shells_per_octave,
                          radial_nodes=q.radial_nodes, angular_nodes=q.angular_nodes, seed=q.seed)
    u = grid_evaluable(gf)
    if callable(gf.exterior):
        u.sup_abs = float(np.max(np.abs(gf.values)))
    return [operator_values(u, x, k, qq, kinds=(sign,))[sign] for x in np.atleast_2d(points)]
