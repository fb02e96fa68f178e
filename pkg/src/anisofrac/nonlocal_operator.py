"""Principal-value evaluation of the nonlocal operator and its Pucci envelopes.

All integrals use the symmetric second difference
``delta(u, x, y) = u(x+y) + u(x-y) - 2u(x)`` so that ``L u(x) = int delta K``
needs no gradient compensator.  The integral is split into

* a near field ``||y|| < r_in`` replaced by the local quadratic model built
  from axis second differences (integrated exactly over ellipsoidal shells),
* shell quadrature on ``r_in <= ||y|| <= r_out`` (see :mod:`.quadrature`),
* a far field beyond ``r_out`` where ``delta = -2u(x)`` is exact once
  ``r_out`` covers the declared support, and bounded otherwise.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .aniso_geometry import Anisotropy, Ball, aniso_norm, unit_ball_volume
from .errors import PreconditionError, RangeError
from .kernels import KernelSpec, bathtub_infimum
from .quadrature import QuadratureScheme, angular_data, polar_points, radial_rule

OPERATORS = ("L", "plus", "minus")
NEAR_OCTAVES = 40


@dataclass
class EvaluableFunction:
    """A vectorised test function with its declared regularity.

    Parameters
    ----------
    func : callable
        Maps an array of shape ``(..., n)`` to values of shape ``(...)``.
    M : float or callable or None
        Constant with ``|u(x+y) - u(x) - p.y| <= M |y|^2`` for ``|y| < eta0``.
        A callable receives the evaluation point.  ``None`` means no
        declaration, which makes every operator evaluation fail.
    eta0 : float
        Euclidean radius of the declared quadratic bound.
    sup_abs : float, optional
        Bound on ``sup |u|``.
    support_radius : float, optional
        ``u = 0`` outside the Euclidean ball of this radius.
    far_bound : callable, optional
        ``t -> sup_{|z| >= t} |u(z)|``; refines ``sup_abs`` in far-field bounds.
    hessian_step : array_like, optional
        Per-axis steps for the second differences of the quadratic model
        (grid functions pass their spacing).
    """

    func: object
    M: object = None
    eta0: float = math.inf
    sup_abs: float | None = None
    support_radius: float | None = None
    far_bound: object = None
    name: str = ""
    hessian_step: object = None

    def __call__(self, x):
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)

    def M_at(self, x):
        if self.M is None:
            raise PreconditionError(f"no C^{{1,1}} declaration for {self.name or 'u'}")
        return float(self.M(x)) if callable(self.M) else float(self.M)

    def far(self, t):
        if self.support_radius is not None and t >= self.support_radius:
            return 0.0
        if self.far_bound is not None and t > 0:
            return float(self.far_bound(t))
        if self.sup_abs is None:
            raise PreconditionError("far-field bound needs sup_abs or far_bound")
        return float(self.sup_abs)

    def __neg__(self):
        f = self.func
        return replace(self, func=lambda z: -f(z), name=f"-{self.name}")

    def shifted(self, z):
        """``x -> u(x - z)`` with the same declarations."""
        f, z = self.func, np.asarray(z, dtype=float)
        sr = None if self.support_radius is None else self.support_radius + float(np.linalg.norm(z))
        M = self.M
        if callable(M):
            M = lambda x, M0=M: M0(np.asarray(x) - z)
        return replace(self, func=lambda x: f(x - z), support_radius=sr, M=M, far_bound=None)

    def check_regularity(self, x, samples=256, seed=0):
        """Largest ratio ``|u(x+y)-u(x)-g.y| / (M |y|^2)`` on random ``|y| < eta0``.

        ``g`` is a central-difference gradient.  Values above 1 contradict the
        declaration (up to the finite-difference error in ``g``).
        """
        x = np.asarray(x, dtype=float)
        n = x.size
        M = self.M_at(x)
        rad = min(self.eta0, 1.0)
        hstep = 1e-5 * max(rad, 1e-3)
        E = np.eye(n) * hstep
        g = (self(x + E) - self(x - E)) / (2 * hstep)
        rng = np.random.default_rng(seed)
        d = rng.standard_normal((samples, n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        t = rad * rng.random(samples)[:, None] ** (1.0 / n)
        y = d * np.maximum(t, 1e-4 * rad)
        rem = np.abs(self(x + y) - self(x) - y @ g)
        return float(np.max(rem / (M * np.sum(y * y, axis=1)))) if M > 0 else float(rem.max())


@dataclass
class OperatorValue:
    """Value with an error estimate and the contributions of each region."""

    value: float
    error: float
    shells: float = 0.0
    near: float = 0.0
    far: float = 0.0
    near_bound: float = 0.0
    detail: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "value": self.value,
            "error": self.error,
            "shells": self.shells,
            "near": self.near,
            "far": self.far,
            "near_bound": self.near_bound,
        }


def second_difference(u, x, y):
    """``u(x+y) + u(x-y) - 2u(x)``; ``y`` may carry leading batch axes."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return u(x + y) + u(x - y) - 2.0 * u(x)


def _combine(kind, delta, ratio, lam, Lam, q):
    if kind == "L":
        return ratio * delta
    pos = np.maximum(delta, 0.0)
    neg = np.maximum(-delta, 0.0)
    if kind == "plus":
        return q * (Lam * pos - lam * neg)
    return q * (lam * pos - Lam * neg)


def _bounds_of(k):
    if isinstance(k, KernelSpec):
        return k.lam, k.Lam, k.a
    lam, Lam, a = k
    return lam, Lam, a


def _r_out_for(u, x, a, q):
    """Outer radius and whether the far field is exact."""
    if u.support_radius is not None:
        S = u.support_radius + float(np.linalg.norm(x))
        r = max(S ** (bb / 2.0) for bb in a.b)
        r = max(r, 2.0 * q.r_in)
        return r, True
    return max(q.resolved_r_out(a.s), 2.0 * q.r_in), False


def _shell_sum(u, x, ux, a, ratio_fn, kinds, lam, Lam, qf, edges, p, m, seed, chunk=8):
    rho, wr = radial_rule(edges, p, a.s)
    ang = angular_data(a, m, half=True, seed=seed)
    rho = rho.ravel()
    wr = wr.ravel()
    out = {kd: 0.0 for kd in kinds}
    step = max(1, chunk * p)
    for i0 in range(0, rho.size, step):
        r = rho[i0:i0 + step]
        Y = polar_points(a, r, ang.theta)
        delta = u(x + Y) + u(x - Y) - 2.0 * ux
        W = wr[i0:i0 + step, None] * ang.weight[None, :]
        ratio = ratio_fn(Y) if "L" in kinds else None
        for kd in kinds:
            out[kd] += float(np.sum(W * _combine(kd, delta, ratio, lam, Lam, qf)))
    return out


def _hessian_diag(u, x, ux, a, r_in):
    """Richardson-extrapolated axis second derivatives and their uncertainty."""
    n = a.n
    H1 = np.empty(n)
    H2 = np.empty(n)
    for i in range(n):
        if u.hessian_step is not None:
            t = float(np.broadcast_to(u.hessian_step, (n,))[i])
        else:
            t = max(r_in ** (2.0 / a.b[i]), 1e-4)
        e = np.zeros(n)
        e[i] = t
        H1[i] = float(u(x + e) + u(x - e) - 2.0 * ux) / t**2
        H2[i] = float(u(x + 2 * e) + u(x - 2 * e) - 2.0 * ux) / (2 * t) ** 2
    return (4.0 * H1 - H2) / 3.0, np.abs(H1 - H2) / 3.0


def _near_field(a, H, r_in, ang, ratio_fn, kinds, lam, Lam, qf, p):
    """Integrate the quadratic model ``sum H_ii y_i^2`` over ``||y|| < r_in``."""
    e = 4.0 / a.barr
    lo = r_in * 2.0**-NEAR_OCTAVES
    edges = lo * 2.0 ** np.arange(NEAR_OCTAVES + 1)
    rho, wr = radial_rule(edges, p, a.s)
    rho, wr = rho.ravel(), wr.ravel()
    th2 = ang.theta**2
    P = (rho[:, None, None] ** e * th2[None, :, :]) @ H  # (R, m)
    W = wr[:, None] * ang.weight[None, :]
    Y = polar_points(a, rho, ang.theta) if "L" in kinds else None
    ratio = ratio_fn(Y) if "L" in kinds else None
    # below lo the model keeps the sign it has at lo; integrate in closed form
    Plo = (lo**e * th2) @ H
    closed = ((lo ** (e - a.s) / (e - a.s)) * th2) @ H
    out = {}
    for kd in kinds:
        val = float(np.sum(W * _combine(kd, P, ratio, lam, Lam, qf)))
        if kd == "L":
            coef = ratio[0]
        else:
            coef = _combine(kd, np.sign(Plo), None, lam, Lam, qf) * np.sign(Plo)
            coef = np.where(Plo == 0, 0.0, coef)
        val += float(np.sum(ang.weight * coef * closed))
        out[kd] = val
    return out


def operator_values(u, x, k, q=None, kinds=OPERATORS):
    """Evaluate ``L u(x)`` and the Pucci operators with one set of samples.

    Parameters
    ----------
    u : EvaluableFunction
    x : array_like, shape (n,)
    k : KernelSpec
        Supplies the anisotropy, the bounds ``(lambda, Lambda)`` and, for
        ``L``, the kernel multiplier.
    q : QuadratureScheme, optional
    kinds : sequence of {"L", "plus", "minus"}

    Returns
    -------
    dict
        Maps each requested kind to an :class:`OperatorValue`.
    """
    a = k.a
    q = q or QuadratureScheme()
    x = np.asarray(x, dtype=float).reshape(a.n)
    M = u.M_at(x)
    reach = max(q.r_in ** (2.0 / bb) for bb in a.b)
    if reach > u.eta0:
        raise PreconditionError(f"r_in reaches {reach:g} beyond eta0 = {u.eta0:g}")
    lam, Lam = k.lam, k.Lam
    qf = a.q_max
    ratio_fn = k.ratio
    ux = float(u(x))
    r_out, exact_far = _r_out_for(u, x, a, q)
    edges = q.shell_edges(r_out)
    p, m = q.radial_nodes, q.angular_nodes

    fine = _shell_sum(u, x, ux, a, ratio_fn, kinds, lam, Lam, qf, edges, p, m, q.seed)
    coarse = _shell_sum(u, x, ux, a, ratio_fn, kinds, lam, Lam, qf, edges,
                        max(2, p - 2), max(4, m // 2), q.seed)
    # the same rule on shells merged in pairs sees under-resolved shells
    merged = np.r_[edges[:-1:2], edges[-1]]
    wide = _shell_sum(u, x, ux, a, ratio_fn, kinds, lam, Lam, qf, merged, p, m, q.seed)

    ang = angular_data(a, m, half=True, seed=q.seed)
    H, H_err = _hessian_diag(u, x, ux, a, q.r_in)
    near = _near_field(a, H, q.r_in, ang, ratio_fn, kinds, lam, Lam, qf, p)

    # model error: compare the quadratic model with the true integrand on
    # the octave just outside r_in, then sum the geometric decay inward
    check_edges = np.array([q.r_in, 2.0 * q.r_in])
    true_oct = _shell_sum(u, x, ux, a, ratio_fn, kinds, lam, Lam, qf, check_edges, p, m, q.seed)
    model_oct = {}
    for kd in kinds:
        outer = _near_field(a, H, 2.0 * q.r_in, ang, ratio_fn, [kd], lam, Lam, qf, p)[kd]
        inner = _near_field(a, H, q.r_in, ang, ratio_fn, [kd], lam, Lam, qf, p)[kd]
        model_oct[kd] = outer - inner
    sigma = 8.0 / a.b_max - a.s
    decay = 1.0 / (2.0**sigma - 1.0)

    A0 = float(ang.weight.sum())
    Ai = ang.weight @ ang.theta**2
    second_moments = Ai * q.r_in ** (4.0 / a.barr - a.s) / (4.0 / a.barr - a.s)
    near_bound = 2.0 * M * Lam * qf * float(np.sum(second_moments))
    hess_err = Lam * qf * float(np.sum(H_err * second_moments))

    tail_mass = A0 * r_out ** (-a.s) / a.s
    far_vals = {}
    far_errs = {}
    for kd in kinds:
        if kd == "L":
            mean_ratio = _tail_ratio(a, k, ang, r_out, p)
            far_vals[kd] = -2.0 * ux * mean_ratio * tail_mass
        else:
            far_vals[kd] = float(_combine(kd, np.array(-2.0 * ux), None, lam, Lam, qf)) * tail_mass
        if exact_far:
            far_errs[kd] = 0.0
        else:
            t = min(r_out ** (2.0 / bb) for bb in a.b) / math.sqrt(a.n) - float(np.linalg.norm(x))
            far_errs[kd] = 2.0 * u.far(t) * Lam * qf * tail_mass

    res = {}
    for kd in kinds:
        quad_err = max(abs(fine[kd] - coarse[kd]), abs(fine[kd] - wide[kd]))
        model_err = abs(true_oct[kd] - model_oct[kd]) * decay + hess_err
        err = quad_err + model_err + far_errs[kd]
        val = fine[kd] + near[kd] + far_vals[kd]
        res[kd] = OperatorValue(
            value=val,
            error=err,
            shells=fine[kd],
            near=near[kd],
            far=far_vals[kd],
            near_bound=near_bound,
            detail={"quad_err": quad_err, "model_err": model_err,
                    "far_err": far_errs[kd], "r_out": r_out, "hessian_diag": H.tolist()},
        )
    return res


def _tail_ratio(a, k, ang, r_out, p):
    """Average of ``K/K_0`` over ``||y|| > r_out`` against ``rho^(-1-s)`` and the angular weight."""
    if k.mode == "reference" or k.multiplier is None:
        return a.q_max
    octaves = min(200, int(math.ceil(60.0 / a.s)))
    edges = r_out * 2.0 ** np.arange(octaves + 1)
    rho, wr = radial_rule(edges, p, a.s)
    rho, wr = rho.ravel(), wr.ravel()
    Y = polar_points(a, rho, ang.theta)
    tot = float(np.sum(wr[:, None] * ang.weight[None, :] * k.ratio(Y)))
    mass_num = float(wr.sum() * ang.weight.sum())
    return tot / mass_num


def evaluate_L(u, x, k, q=None):
    """``L u(x) = int delta(u, x, y) K(y) dy`` with an error estimate.

    Parameters
    ----------
    u : EvaluableFunction
        Must declare ``M`` and ``eta0`` at ``x``; ``r_in`` may not reach
        beyond ``eta0``.
    x : array_like
    k : KernelSpec
    q : QuadratureScheme, optional

    Returns
    -------
    OperatorValue
        ``error`` adds the gap between two embedded shell rules, the
        quadratic-model mismatch extrapolated into the near field and the
        far-field bound.  ``near_bound`` is the a priori bound
        ``2 M int_{||y||<r_in} |y|^2 K``.
    """
    return operator_values(u, x, k, q, kinds=("L",))["L"]


def pucci(u, x, k_bounds, q=None, sign="plus"):
    """Extremal operator ``M^+`` (``sign='plus'``) or ``M^-`` at ``x``.

    ``k_bounds`` is a :class:`KernelSpec` or a tuple ``(lam, Lam, a)``.
    """
    if sign not in ("plus", "minus"):
        raise ValueError("sign must be 'plus' or 'minus'")
    lam, Lam, a = _bounds_of(k_bounds)
    k = k_bounds if isinstance(k_bounds, KernelSpec) else KernelSpec(a, lam, Lam, mode="reference")
    return operator_values(u, x, k, q, kinds=(sign,))[sign]


def evaluate_many(u, points, k, q=None, kinds=("L",), threads=1):
    """Evaluate at many points; results are independent of ``threads``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    job = lambda x: operator_values(u, x, k, q, kinds)
    if threads <= 1:
        return [job(x) for x in points]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(job, points))


def frac_laplacian(u, x, a, q=None):
    """``(-Delta)^{beta,s} u(x) = -(1/2) q_max int delta K_0``."""
    r = evaluate_L(u, x, KernelSpec(a), q)
    return OperatorValue(-0.5 * r.value, 0.5 * r.error, -0.5 * r.shells,
                         -0.5 * r.near, -0.5 * r.far, 0.5 * r.near_bound, r.detail)


def write_operator_csv(path, points, results):
    """Rows ``x_1..x_n, value, error_estimate``."""
    points = np.atleast_2d(points)
    n = points.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(n)] + ["value", "error_estimate"])
        for x, r in zip(points, results):
            w.writerow([repr(float(v)) for v in x] + [repr(r.value), repr(r.error)])


# ---------------------------------------------------------------- barriers


def barrier_eta(x):
    """``(1 - |x|^2)^2`` inside the unit ball, zero outside."""
    x = np.asarray(x, dtype=float)
    t = 1.0 - np.sum(x * x, axis=-1)
    return np.where(t > 0, t * t, 0.0)


ETA = EvaluableFunction(barrier_eta, M=4.0, eta0=math.inf, sup_abs=1.0,
                        support_radius=1.0, name="eta")


def barrier_eta_L(x, k, q=None):
    """``L eta(x)`` for the kernel ``k``."""
    return evaluate_L(ETA, x, k, q)


def barrier_power(a, p, x, kappa=0.5, r=1.0):
    """``min(kappa^-p, |T_{beta,r}^{-1} x|^-p)``; ``kappa = 1/2, r = 1`` gives ``min(2^p, |x|^-p)``."""
    x = np.asarray(x, dtype=float)
    z = x / r ** (2.0 / a.barr)
    nz = np.sqrt(np.sum(z * z, axis=-1))
    with np.errstate(divide="ignore", over="ignore"):
        v = np.where(nz > kappa, nz ** (-p), kappa ** (-p))
    return v


def power_barrier_function(a, p, kappa=0.5, r=1.0, eta0=0.25):
    g = float(np.max(r ** (-2.0 / a.barr)))
    gmin = float(np.min(r ** (-2.0 / a.barr)))

    def M(x):
        z = np.asarray(x) / r ** (2.0 / a.barr)
        dist = max(float(np.linalg.norm(z)) - eta0 * g, kappa)
        return 0.5 * p * (p + 1.0) * dist ** (-p - 2.0) * g * g

    def far(t):
        return min(kappa ** (-p), (t * gmin) ** (-p))

    return EvaluableFunction(lambda z: barrier_power(a, p, z, kappa, r), M=M, eta0=eta0,
                             sup_abs=kappa ** (-p), far_bound=far, name=f"power_p{p:g}")


def annulus_points(a, R, r=1.0, radii=5, directions=8):
    """Points ``T_{beta,r}(t theta)`` with ``1 <= t <= R``."""
    n = a.n
    ts = np.geomspace(1.0, R, radii)
    if n == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif n == 2:
        ph = (np.arange(directions) + 0.25) * 2 * math.pi / directions
        dirs = np.column_stack([np.cos(ph), np.sin(ph)])
    else:
        rng = np.random.default_rng(0)
        dirs = rng.standard_normal((directions, n))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = (ts[:, None, None] * dirs[None, :, :]).reshape(-1, n)
    return pts * r ** (2.0 / a.barr)


def _ball_polar_rule(n, edges, p, m):
    """Euclidean polar nodes and weights on ``B_{edges[-1]}`` with radial breakpoints."""
    from .quadrature import sphere_rule

    x, w = np.polynomial.legendre.leggauss(p)
    r0, r1 = np.asarray(edges[:-1])[:, None], np.asarray(edges[1:])[:, None]
    r = (0.5 * (r1 - r0) * x + 0.5 * (r1 + r0)).ravel()
    wr = (0.5 * (r1 - r0) * w).ravel() * r ** (n - 1)
    th, ws = sphere_rule(n, m, half=False)
    return r, wr, th, ws


def _plateau_integral(a, p, x, kappa, r, split, lam, pq=10, m=256):
    """``2 q lam int (f - t)_+(z) K_0(z - x) dz`` with ``t = split^-p`` in ``z = T^{-1}`` units."""
    sc = r ** (2.0 / a.barr)
    t = split ** (-p)
    edges = [0.0, kappa, split] if kappa < split else [0.0, split]

    def run(pp, mm):
        rr, wr, th, ws = _ball_polar_rule(a.n, edges, pp, mm)
        Z = rr[:, None, None] * th[None, :, :]
        with np.errstate(over="ignore", divide="ignore"):
            prof = np.where(rr > kappa, rr ** (-p), kappa ** (-p)) - t
        prof = np.maximum(prof, 0.0)
        X = Z * sc  # back to x units; dx = det(T) dz
        kern = aniso_norm(a, X - x) ** (-(a.c + a.s))
        det = float(np.prod(sc))
        return 2.0 * a.q_max * lam * det * float(np.sum(wr[:, None] * ws[None, :] * prof[:, None] * kern))

    fine = run(pq, m)
    coarse = run(max(2, pq - 4), max(4, m // 2))
    return fine, abs(fine - coarse)


def power_barrier_lower(a, p, x, kappa=0.5, r=1.0, q=None, lam=1.0, Lam=1.0, split=0.75):
    """Certified lower bound for ``M^- f(x)`` on ``|T^{-1} x| >= 1``.

    ``f = min(f, t) + (f - t)_+`` with ``t = split^-p``.  ``M^-`` is
    superadditive and the second piece vanishes near ``x``, so its ``M^-``
    is the plain integral ``2 q lam int (f - t)_+(x + y) K_0(y) dy``,
    computed in Euclidean polar coordinates.  The first piece goes through
    the shell quadrature.  Returns ``(lower, detail)``.
    """
    x = np.asarray(x, dtype=float)
    zn = float(np.linalg.norm(x / r ** (2.0 / a.barr)))
    if zn < 1.0 - 1e-9:
        raise PreconditionError("power barrier bound needs |T^{-1} x| >= 1")
    t = split ** (-p)
    g = float(np.max(r ** (-2.0 / a.barr)))
    gmin = float(np.min(r ** (-2.0 / a.barr)))
    eta0 = 0.2

    def M(xx):
        z = np.asarray(xx) / r ** (2.0 / a.barr)
        dist = max(float(np.linalg.norm(z)) - eta0 * g, split)
        return 0.5 * p * (p + 1.0) * dist ** (-p - 2.0) * g * g

    f1 = EvaluableFunction(lambda z: np.minimum(barrier_power(a, p, z, kappa, r), t), M=M,
                           eta0=eta0, sup_abs=t,
                           far_bound=lambda s_: min(t, (s_ * gmin) ** (-p)), name="power_low")
    k = KernelSpec(a, lam, Lam)
    v1 = operator_values(f1, x, k, q, kinds=("minus",))["minus"]
    v2, e2 = _plateau_integral(a, p, x, kappa, r, split, lam)
    lower = v1.value - v1.error + v2 - e2
    return lower, {"capped": v1.value, "capped_err": v1.error, "plateau": v2, "plateau_err": e2}


@dataclass
class PowerCertificate:
    p: float
    certified: bool
    min_lower: float
    points: np.ndarray
    lower: np.ndarray
    history: list
    message: str

    def to_json(self):
        return {"p": self.p, "certified": self.certified, "min_lower_bound": self.min_lower,
                "history": self.history, "message": self.message}


def find_p(a, R, kappa=0.5, r=1.0, q=None, points=None, p0=1.0, cap=60, lam=1.0, Lam=1.0):
    """Double ``p`` until the certified lower bound of ``M^- f`` is ``>= 0`` on annulus points."""
    if not R > 1:
        raise RangeError("need R > 1")
    pts = annulus_points(a, R, r) if points is None else np.atleast_2d(points)
    p = float(p0)
    history = []
    last = None
    for _ in range(cap):
        if p * math.log2(1.0 / min(kappa, 0.75)) > 900:
            break
        low = np.array([power_barrier_lower(a, p, x, kappa, r, q, lam, Lam)[0] for x in pts])
        mn = float(np.min(low))
        history.append({"p": p, "min_lower_bound": mn})
        last = (p, low, mn)
        if mn >= 0:
            return PowerCertificate(p, True, mn, pts, low, history, "certified")
        p *= 2.0
    if last is None:
        return PowerCertificate(p, False, -math.inf, pts, np.array([]), history,
                                "no certificate found")
    p, low, mn = last
    return PowerCertificate(p, False, mn, pts, low, history, "no certificate found")


# --------------------------------------------------------------------- bump


def bump_Psi(a, x, p, c_tilde):
    """Bump built from the power barrier with a quadratic cap.

    With ``z = T_{beta,1/4}^{-1} x`` the profile is ``|z|^-p - (3 sqrt n)^-p``
    for ``1 <= |z| < 3 sqrt n``, zero beyond, and the cap
    ``1 - (3 sqrt n)^-p + p/2 - (p/2) |z|^2`` inside ``|z| < 1``, which matches
    value and gradient on ``|z| = 1``.  In ``x`` the cap is ``A - sum kappa_i x_i^2``
    with ``kappa_i = (p/2) 4^(4/b_i)``.
    """
    x = np.asarray(x, dtype=float)
    n = a.n
    z = x / 0.25 ** (2.0 / a.barr)
    t = np.sqrt(np.sum(z * z, axis=-1))
    outer = 3.0 * math.sqrt(n)
    floor_ = outer ** (-p)
    with np.errstate(divide="ignore", over="ignore"):
        mid = t ** (-p) - floor_
    cap = 1.0 - floor_ + 0.5 * p - 0.5 * p * t * t
    v = np.where(t < 1.0, cap, np.where(t < outer, mid, 0.0))
    return c_tilde * v


def psi_cap_coefficients(a, p):
    """``(A, kappa)`` of the cap ``A - sum kappa_i x_i^2`` for ``c_tilde = 1``."""
    n = a.n
    A = 1.0 - (3.0 * math.sqrt(n)) ** (-p) + 0.5 * p
    kappa = 0.5 * p / (0.25 ** (2.0 / a.barr)) ** 2
    return A, kappa


@dataclass
class PsiCalibration:
    c_tilde: float
    min_profile: float
    success: bool
    message: str
    worst_point: np.ndarray

    def to_json(self):
        return {"c_tilde": self.c_tilde, "min_profile": self.min_profile,
                "success": self.success, "message": self.message,
                "worst_point": np.asarray(self.worst_point).tolist()}


def calibrate_Psi(a, p, grid=64, target=3.0, safety=1.01):
    """Choose ``c_tilde`` so that ``Psi > target`` on cell centres of ``R_{1/4,3}``."""
    n = a.n
    half = 3.0 ** (2.0 / a.b_min) * 0.25 ** (2.0 / a.barr)
    axes = [(-1.0 + (np.arange(grid) + 0.5) * 2.0 / grid) * h for h in half]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    prof = bump_Psi(a, mesh, p, 1.0)
    i = int(np.argmin(prof))
    mn = float(prof[i])
    if mn <= 0:
        return PsiCalibration(math.inf, mn, False,
                              "R_{1/4,3} reaches outside the support: no c_tilde works",
                              mesh[i])
    return PsiCalibration(safety * target / mn, mn, True, "calibrated", mesh[i])


def psi_c11_ratio(a, p, samples=512, seed=0, step=1e-3):
    """Max of ``|grad Psi(x) - grad Psi(y)| / |x - y|`` across ``dE_{1/4,1}``.

    Gradients are central differences; pairs straddle the cap boundary.
    """
    rng = np.random.default_rng(seed)
    n = a.n
    d = rng.standard_normal((samples, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    sc = 0.25 ** (2.0 / a.barr)
    inner = d * sc * (1 - step)
    outer = d * sc * (1 + step)

    def grad(P):
        g = np.empty_like(P)
        hh = 1e-7
        for i in range(n):
            e = np.zeros(n)
            e[i] = hh
            g[:, i] = (bump_Psi(a, P + e, p, 1.0) - bump_Psi(a, P - e, p, 1.0)) / (2 * hh)
        return g

    gi, go = grad(inner), grad(outer)
    return float(np.max(np.linalg.norm(gi - go, axis=1) / np.linalg.norm(inner - outer, axis=1)))


# ---------------------------------------------------------- silvestre check


def _rho_min(a, theta, radius):
    """Solve ``|T_{beta,rho} theta| = radius`` for each direction."""
    lo = np.full(len(theta), 1e-30)
    hi = np.full(len(theta), 1e30)
    th2 = theta**2
    e = 4.0 / a.barr
    for _ in range(200):
        mid = np.sqrt(lo * hi)
        val = (mid[:, None] ** e * th2).sum(axis=1)
        big = val > radius**2
        hi = np.where(big, mid, hi)
        lo = np.where(big, lo, mid)
    return np.sqrt(lo * hi)


def silvestre_tail(a, tau, m=128, p=8, rel=1e-12):
    """``2 int_{|y| > 1/4} (|8y|^tau - 1) K_0(y) dy`` and a bound on its truncation error."""
    if not 0 < tau < a.s * a.b_min / 2.0:
        raise RangeError("tail integral needs 0 < tau < s b_min / 2")
    ang = angular_data(a, m, half=True)
    rmin = _rho_min(a, ang.theta, 0.25)
    rate = a.s - 2.0 * tau / a.b_min
    octaves = int(math.ceil(math.log2(1.0 / rel) / rate)) + 4
    x, w = np.polynomial.legendre.leggauss(p)
    ln2 = math.log(2.0)
    tot = 0.0
    top = np.empty(len(rmin))
    for j in range(octaves):
        t = ln2 * (j + 0.5 * (x + 1.0))
        wt = 0.5 * ln2 * w
        rho = rmin[None, :] * np.exp(t)[:, None]  # (p, m)
        Y = (rho[..., None] ** (2.0 / a.barr)) * ang.theta[None, :, :]
        ny = np.sqrt(np.sum(Y * Y, axis=-1))
        g = (8.0 * ny) ** tau - 1.0
        tot += float(np.sum(wt[:, None] * rho ** (-a.s) * g * ang.weight[None, :]))
    top = rmin * 2.0**octaves
    # beyond top: |y| <= sqrt(n) max(rho^(2/b_i)), so |8y|^tau <= (8 sqrt n)^tau rho^(2 tau/b_min)
    big = np.maximum(top ** (2.0 / a.b_min), top ** (2.0 / a.b_max))
    expo = 2.0 * tau / a.b_min
    bound = ((8.0 * math.sqrt(a.n)) ** tau * np.where(top >= 1, top ** (expo - a.s) / rate,
                                                        big ** tau * top ** (-a.s) / rate))
    tail = float(np.sum(ang.weight * bound))
    return 2.0 * tot, 2.0 * tail


@dataclass
class SilvestreResult:
    kappa: float
    tau: float
    delta: float
    lhs: float
    rhs: float
    margin: float
    eta_term: float
    tail_term: float
    certified: bool
    message: str = ""
    history: list = field(default_factory=list)

    def to_json(self):
        return {k: getattr(self, k) for k in
                ("kappa", "tau", "delta", "lhs", "rhs", "margin", "eta_term", "tail_term",
                 "certified", "message", "history")}


def _eta_frac_max(a, q, points):
    vals = [frac_laplacian(ETA, x, a, q) for x in points]
    return max(v.value + v.error for v in vals)


def b34_points(n, count, seed=0):
    """Deterministic quasi-random points of ``B_{3/4}`` (origin included)."""
    pts = Ball(n, 0.75).sample(max(count - 1, 1), seed=seed, batch_log2=10)
    return np.vstack([np.zeros((1, n)), pts])[:count]


def silvestre_check(a, delta, kappa, tau, grid=256, q=None, points=50, eta_max=None):
    """Both sides of the Silvestre inequality at fixed ``(kappa, tau)``.

    ``lhs`` is an upper bound: ``kappa`` times the largest
    ``(-Delta)^{beta,s} eta + error`` over points of ``B_{3/4}``, plus the
    tail term with its truncation bound.  ``rhs`` is half the bathtub
    infimum of ``K_0`` at measure ``delta`` on a ``grid``-per-axis mesh.
    """
    if not 0 < kappa < 0.25:
        raise RangeError("need 0 < kappa < 1/4")
    if not tau > 0:
        raise RangeError("need tau > 0")
    if not 0 < delta < Ball(a.n, 2.0).volume():
        raise RangeError("need 0 < delta < |B_2|")
    if eta_max is None:
        eta_max = _eta_frac_max(a, q, b34_points(a.n, points))
    tail, tail_err = silvestre_tail(a, tau)
    bt = bathtub_infimum(a, delta, grid=grid)
    lhs = kappa * eta_max + tail + tail_err
    rhs = 0.5 * bt.value
    return SilvestreResult(kappa, tau, delta, lhs, rhs, rhs - lhs, kappa * eta_max,
                           tail + tail_err, rhs - lhs > 0)


def find_kappa_tau(a, delta, grid=256, q=None, points=50, cap=60):
    """Halve ``kappa`` (from 1/8) and ``tau`` (from ``s b_min / 4``) until the margin is positive."""
    eta_max = _eta_frac_max(a, q, b34_points(a.n, points))
    kappa, tau = 0.125, a.s * a.b_min / 4.0
    hist = []
    res = None
    for _ in range(cap):
        res = silvestre_check(a, delta, kappa, tau, grid, q, points, eta_max=eta_max)
        hist.append({"kappa": kappa, "tau": tau, "margin": res.margin})
        if res.certified:
            res.history = hist
            res.message = "certified"
            return res
        kappa *= 0.5
        tau *= 0.5
    res.history = hist
    res.message = "no certificate found"
    return res
