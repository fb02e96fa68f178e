"""Measurable experiments for the regularity statements.

Each routine turns a qualitative statement (oscillation decay, growth
lemma, Harnack quotient, distribution decay, Liouville, Hoelder and
gradient-Hoelder exponents) into numbers on solved grid functions.  Fits
are ordinary least squares in log-log coordinates and report
``residual = 1 - R^2``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .aniso_geometry import Ellipsoid, aniso_norm
from .dirichlet_solver import assemble, solve
from .errors import HypothesisViolation, InsufficientDataError
from .nonlocal_operator import find_kappa_tau
from .gridfunc import GridFunction


@dataclass
class DecayReport:
    """Pairs ``(scale_k, value_k)`` with a log-log fit.

    ``scales`` are strictly decreasing.  ``exponent`` is the fitted slope of
    ``log value`` against ``log scale`` (after any documented cap) and
    ``passed`` compares it with ``threshold`` in the direction given by
    ``sign`` (``+1``: exponent > threshold, ``-1``: exponent < threshold).
    """

    kind: str
    scales: np.ndarray
    values: np.ndarray
    exponent: float
    intercept: float
    residual: float
    passed: bool
    threshold: float = 0.0
    sign: int = 1
    flags: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "kind": self.kind,
            "scales": [float(v) for v in self.scales],
            "values": [float(v) for v in self.values],
            "exponent": _num(self.exponent),
            "intercept": _num(self.intercept),
            "residual": _num(self.residual),
            "passed": bool(self.passed),
            "threshold": self.threshold,
            "sign": self.sign,
            "flags": list(self.flags),
            "extra": {k: _num(v) if isinstance(v, float) else v for k, v in self.extra.items()},
        }

    def write(self, outdir, stem):
        """Write ``<stem>.csv`` (scales/values) and ``<stem>.json``."""
        import os

        with open(os.path.join(outdir, stem + ".csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scale", "value"])
            for sc, v in zip(self.scales, self.values):
                w.writerow([repr(float(sc)), repr(float(v))])
        with open(os.path.join(outdir, stem + ".json"), "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else repr(v)


def report_stem(kind, a, seed):
    b = "-".join(f"{v:g}" for v in a.b)
    return f"{kind}_b{b}_s{a.s:g}_seed{seed}"


def loglog_fit(scales, values):
    """Least squares ``log v = e log s + c``; returns ``(e, c, 1 - R^2)``."""
    x, y = np.log(np.asarray(scales, float)), np.log(np.asarray(values, float))
    if len(x) < 2:
        raise InsufficientDataError("need at least two positive values to fit")
    e, c = np.polyfit(x, y, 1)
    ss = float(np.sum((y - y.mean()) ** 2))
    res = float(np.sum((y - (e * x + c)) ** 2))
    # constant data: the spread is rounding noise and the fit is exact
    flat = ss <= 1e-24 * (1.0 + float(np.sum(y * y)))
    return float(e), float(c), (0.0 if flat else res / ss)


def _sorted_desc(scales, values):
    o = np.argsort(-np.asarray(scales, float), kind="stable")
    return np.asarray(scales, float)[o], np.asarray(values, float)[o]


# ---------------------------------------------------------------- De Giorgi


def de_giorgi_iteration(u, a, x0=None, r0=None, K=None, min_scales=4, residual_tol=0.1):
    """Oscillation of ``u`` over ``E^max_{r_k,1}(x0)`` with ``r_k = r0 2^-k``.

    ``c_k`` and ``d_k`` are the min and max over grid nodes in the ellipsoid.
    ``r0`` defaults to the largest radius whose ellipsoid fits in the grid
    box.  Scales stop when the ellipsoid holds fewer than
    two nodes (or after ``K`` scales).  Passes when the fitted exponent is
    positive with ``residual < residual_tol``.
    """
    x0 = np.zeros(a.n) if x0 is None else np.asarray(x0, float)
    X = u.coords().reshape(-1, a.n)
    V = u.values.reshape(-1)
    if r0 is None:
        half = np.minimum(x0 - u.origin, u.upper - x0)
        r0 = float(np.min(half ** (a.barr / a.b_max)))
    scales, c, d = [], [], []
    k = 0
    while K is None or k < K:
        r = r0 * 2.0**-k
        ins = Ellipsoid("Emax", a, r, 1.0, x0).contains(X)
        if ins.sum() < 2:
            break
        scales.append(r)
        c.append(float(V[ins].min()))
        d.append(float(V[ins].max()))
        k += 1
    osc = np.array(d) - np.array(c)
    scales = np.array(scales)
    extra = {"c": c, "d": d, "r0": r0}
    if len(osc) and np.all(osc <= 0):
        return DecayReport("degiorgi", scales, osc, math.nan, math.nan, math.nan, False,
                           flags=["degenerate: zero oscillation"], extra=extra)
    use = osc > 0
    if use.sum() < min_scales:
        raise InsufficientDataError(f"only {int(use.sum())} usable scales (need {min_scales})")
    e, ic, res = loglog_fit(scales[use], osc[use])
    return DecayReport("degiorgi", scales, osc, e, ic, res, bool(e > 0 and res < residual_tol),
                       extra=extra)


# ------------------------------------------------------------- growth lemma


@dataclass
class GrowthResult:
    holds: bool
    margin: float
    mu: float
    zero_measure: float
    hypotheses: dict

    def to_json(self):
        return dict(self.__dict__)


def _ball_nodes(u, radius, center=None):
    X = u.coords()
    c = np.zeros(u.n) if center is None else center
    return np.sum((X - c) ** 2, axis=-1) < radius**2


def growth_lemma_check(u, delta, mu, tau=None, a=None, operator_values=None, tol=1e-9,
                       probe_radii=None):
    """Growth-lemma hypotheses and conclusion on a grid function.

    Parameters
    ----------
    u : GridFunction
        Grid covering ``B_1``; its exterior rule supplies values far away.
    operator_values : ndarray, optional
        ``L u`` at the nodes of ``u`` (NaN where unknown).  Hypothesis 1,
        ``(-Delta)u <= 0`` i.e. ``L u >= 0``, is checked where provided.
    tau : float, optional
        Exponent of the tail bound ``u(x) <= 2|2x|^tau - 1`` off ``B_1``.
        Defaults to the certified ``tau*`` of :func:`find_kappa_tau` for the
        anisotropy ``a`` and this ``delta``.

    Raises
    ------
    HypothesisViolation
        Naming the first hypothesis (1-4) that fails.
    """
    if tau is None:
        if a is None:
            raise ValueError("tau or the anisotropy a is required")
        tau = find_kappa_tau(a, delta).tau
    X = u.coords()
    V = u.values
    r = np.sqrt(np.sum(X * X, axis=-1))
    in1 = r < 1.0
    hyp = {}
    if operator_values is not None:
        ov = np.asarray(operator_values, float)
        sel = in1 & np.isfinite(ov)
        worst = float(ov[sel].min()) if sel.any() else 0.0
        hyp["1_subsolution"] = worst >= -tol
        if not hyp["1_subsolution"]:
            raise HypothesisViolation(1, f"L u = {worst:.3e} < 0 in B_1")
    else:
        hyp["1_subsolution"] = None
    top = float(V[in1].max()) if in1.any() else -math.inf
    hyp["2_bounded"] = top <= 1.0 + tol
    if not hyp["2_bounded"]:
        raise HypothesisViolation(2, f"max u on B_1 = {top:.6g} > 1")
    out = ~in1
    tail = 2.0 * np.abs(2.0 * r[out]) ** tau - 1.0
    ok = bool(np.all(V[out] <= tail + tol))
    # the exterior rule on a ladder of radii
    probe_radii = probe_radii or [1.5, 2.0, 4.0, 16.0, 256.0]
    if u.n == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        phi = np.linspace(0, 2 * math.pi, 33)[:-1]
        dirs = np.zeros((32, u.n))
        dirs[:, 0], dirs[:, 1] = np.cos(phi), np.sin(phi)
    for R in probe_radii:
        P = R * dirs
        P = P[~u.inside(P)]
        if len(P):
            ok &= bool(np.all(u(P) <= 2.0 * (2.0 * R) ** tau - 1.0 + tol))
    hyp["3_tail"] = ok
    if not ok:
        raise HypothesisViolation(3, "tail bound 2|2x|^tau - 1 exceeded outside B_1")
    cell = float(np.prod(u.h))
    zero = float(np.sum(in1 & (V <= 0.0))) * cell
    hyp["4_zero_set"] = zero > delta
    if not hyp["4_zero_set"]:
        raise HypothesisViolation(4, f"|{{u <= 0}} cap B_1| = {zero:.4g} <= delta = {delta:.4g}")
    half = r < 0.5
    m = float(V[half].max())
    margin = 1.0 - m
    return GrowthResult(bool(m <= 1.0 - mu), margin, mu, zero, hyp)


# ----------------------------------------------------------------- Harnack


@dataclass
class HarnackResult:
    ratio: float
    normalized: float
    u_max: float
    u_min: float
    u_center: float
    C0: float
    flags: list

    def to_json(self):
        return {k: (_num(v) if isinstance(v, float) else v) for k, v in self.__dict__.items()}


def harnack_from_solution(u, C0, tol=1e-12):
    """``sup/inf`` of ``u`` over nodes of ``B_{1/2}`` and ``u_max / (u(0) + C0)``."""
    sel = _ball_nodes(u, 0.5)
    vals = u.values[sel]
    hi, lo = float(vals.max()), float(vals.min())
    flags = []
    if lo <= 0:
        flags.append("nonpositive infimum clamped")
        lo_c = tol
    else:
        lo_c = lo
    u0 = float(u(np.zeros((1, u.n)))[0])
    denom = u0 + C0
    norm = hi / denom if denom > 0 else math.inf
    return HarnackResult(hi / lo_c, norm, hi, lo, u0, C0, flags)


def harnack_ratio(g, k, half_width=1.0, N=32, base=None, method="cg", tol=1e-10):
    """Solve with nonnegative data ``g`` and measure the Harnack quotients.

    ``C0`` is the recorded residual ``max |L_h u|`` of the discrete solve.
    """
    op = base.with_data(g) if base is not None else assemble(half_width, N, g, k)
    if op.g_range[0] < 0:
        raise HypothesisViolation("g >= 0", f"min g = {op.g_range[0]:.3g}")
    rep = solve(op, tol=tol, method=method)
    return harnack_from_solution(rep.solution, rep.residual), rep


# ---------------------------------------------------------- point estimates


def point_estimate_decay(u, thresholds=None, radius=1.0, normalize=None):
    """Distribution ``|{u >= t} cap B_radius|`` over a ladder of thresholds.

    ``normalize`` divides ``u`` first (e.g. by ``u(0) + C0``).  The default
    ladder is 16 geometric values from ``max(max u / 64, min u)`` to
    ``max u`` over the ball.  Passes
    when the fitted slope against ``t`` is negative.
    """
    V = u.values if normalize is None else u.values / normalize
    sel = _ball_nodes(u, radius)
    vals = V[sel]
    cell = float(np.prod(u.h))
    top = float(vals.max()) if vals.size else 0.0
    if top <= 0:
        t = np.asarray(thresholds if thresholds is not None else [1.0], float)
        return DecayReport("pointwise", *_sorted_desc(t, np.zeros(len(t))), math.nan, math.nan,
                           math.nan, False, sign=-1, flags=["degenerate: u <= 0"])
    if thresholds is None:
        # below min u every threshold measures the whole ball, which only flattens the fit
        low = max(top / 64.0, float(vals.min()))
        thresholds = np.geomspace(low, top, 16)
    t = np.asarray(thresholds, float)
    meas = np.array([float(np.sum(vals >= ti)) * cell for ti in t])
    t, meas = _sorted_desc(t, meas)
    use = meas > 0
    if use.sum() < 2:
        return DecayReport("pointwise", t, meas, math.nan, math.nan, math.nan, False, sign=-1,
                           flags=["degenerate: fewer than two nonzero measures"])
    e, c, res = loglog_fit(t[use], meas[use])
    return DecayReport("pointwise", t, meas, e, c, res, bool(e < 0), sign=-1)


# ---------------------------------------------------------------- Liouville


def dipole_data(a, R, amplitude=1.0, sharpness=2.0):
    """Bounded odd data ``A tanh(k x_1 / R^{2/b_1})``, scale-invariant in ``R``."""
    w = R ** (2.0 / a.barr[0])
    return lambda x: amplitude * np.tanh(sharpness * np.asarray(x)[..., 0] / w)


def _osc_on_ball(u, radius=1.0, m=33):
    n = u.n
    ax = np.linspace(-radius, radius, m)
    P = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), axis=-1).reshape(-1, n)
    P = P[np.sum(P * P, axis=1) <= radius**2]
    v = u(P)
    return float(v.max() - v.min())


def liouville_probe(k, R_ladder=(2.0, 4.0, 8.0, 16.0), N=32, data=None, method="cg", tol=1e-10):
    """``osc_{B_1} u_R`` for solutions in the boxes ``|x_i| < R^{2/b_i}``.

    ``data(a, R)`` returns the exterior data for radius ``R`` (default
    :func:`dipole_data`).  Passes when the oscillation decreases strictly
    along the ladder and the fitted ``osc ~ R^{-gamma}`` has ``gamma > 0``.
    """
    a = k.a
    data = data or dipole_data
    osc = []
    for R in R_ladder:
        L = R ** (2.0 / a.barr)
        op = assemble(L, N, data(a, R), k)
        rep = solve(op, tol=tol, method=method)
        osc.append(_osc_on_ball(rep.solution))
    R = np.asarray(R_ladder, float)
    Rs, os_ = _sorted_desc(R, osc)
    inc = np.argsort(R)
    o_inc = np.asarray(osc)[inc]
    if np.all(o_inc == 0):
        return DecayReport("liouville", Rs, os_, math.nan, math.nan, math.nan, True, sign=-1,
                           flags=["degenerate: zero oscillation"])
    monotone = bool(np.all(np.diff(o_inc) < 0))
    e, c, res = loglog_fit(Rs[os_ > 0], os_[os_ > 0])
    return DecayReport("liouville", Rs, os_, e, c, res, bool(monotone and e < 0), sign=-1,
                       extra={"gamma": -e, "monotone": monotone})


# ------------------------------------------------------------------ Hoelder


def _offsets(shape_in, max_offsets, seed):
    n = len(shape_in)
    lim = [max(1, s // 2) for s in shape_in]
    grids = np.stack(np.meshgrid(*[np.arange(-l, l + 1) for l in lim], indexing="ij"), -1)
    O = grids.reshape(-1, n)
    # one of each +-o pair, zero excluded
    first = np.argmax(O != 0, axis=1)
    keep = np.any(O != 0, axis=1) & (O[np.arange(len(O)), first] > 0)
    O = O[keep]
    if len(O) > max_offsets:
        # keep every short offset, subsample the rest
        L = np.max(np.abs(O), axis=1)
        short = O[L <= 2]
        rest = O[L > 2]
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(rest), max_offsets - len(short), replace=False)
        O = np.vstack([short, rest[np.sort(pick)]])
    return O


def holder_fit(u, a, region=0.5, metric="aniso", bins=10, max_offsets=1500, quantile=1.0,
               seed=0, cap=1.0, zero_tol=0.05):
    """Hoelder exponent of a grid function on the ball ``B_region``.

    For every node offset ``o`` (all short offsets plus a seeded subsample)
    the largest ``|u(x + o) - u(x)|`` over node pairs inside the ball is
    recorded against the distance of ``o`` (anisotropic norm or Euclidean).
    Distances are grouped in log bins, the envelope of each bin is its
    largest value (or the given ``quantile`` over pairs), and the exponent is
    the log-log slope of the envelope, capped at ``cap``.  The seminorm is
    ``max |du| / dist^gamma`` over all recorded offsets.
    """
    V = u.values
    n = u.n
    ins = _ball_nodes(u, region)
    idx = np.argwhere(ins)
    lo, hi = idx.min(0), idx.max(0) + 1
    sub = tuple(slice(l, h) for l, h in zip(lo, hi))
    Vs, Ms = V[sub], ins[sub]
    O = _offsets(Vs.shape, max_offsets, seed)
    dist, env = [], []
    pairs = 0
    for o in O:
        s1 = tuple(slice(max(0, -oi), Vs.shape[i] - max(0, oi)) for i, oi in enumerate(o))
        s2 = tuple(slice(max(0, oi), Vs.shape[i] - max(0, -oi)) for i, oi in enumerate(o))
        m = Ms[s1] & Ms[s2]
        if not m.any():
            continue
        dv = np.abs(Vs[s2] - Vs[s1])[m]
        pairs += dv.size
        y = o * u.h
        d = float(aniso_norm(a, y)) if metric == "aniso" else float(np.linalg.norm(y))
        dist.append(d)
        env.append(float(np.quantile(dv, quantile)) if quantile < 1.0 else float(dv.max()))
    dist, env = np.array(dist), np.array(env)
    extra = {"metric": metric, "pairs": pairs, "offsets": len(dist)}
    if env.size == 0 or env.max() <= 1e-14 * max(1.0, float(np.abs(V).max())):
        return DecayReport("holder", np.array([]), np.array([]), math.nan, math.nan, math.nan,
                           False, flags=["degenerate: constant"], extra=extra)
    edges = np.geomspace(dist.min(), dist.max() * (1 + 1e-12), bins + 1)
    which = np.clip(np.searchsorted(edges, dist, side="right") - 1, 0, bins - 1)
    bs, bv = [], []
    for j in range(bins):
        sel = which == j
        if sel.any() and env[sel].max() > 0:
            k = np.argmax(env[sel])
            bs.append(dist[sel][k])
            bv.append(env[sel][k])
    scales, values = _sorted_desc(bs, bv)
    e, c, res = loglog_fit(scales, values)
    gamma = min(e, cap)
    flags = []
    if gamma < zero_tol:
        flags.append("fit fails: exponent near zero (discontinuity)")
    semi = float(np.max(env / dist**gamma)) if gamma > 0 else float(env.max())
    extra.update({"raw_slope": e, "seminorm": semi})
    return DecayReport("holder", scales, values, gamma, c, res, bool(gamma >= zero_tol),
                       threshold=zero_tol, flags=flags, extra=extra)


def holder_fit_both(u, a, region=0.5, **kw):
    """Anisotropic and Euclidean fits plus the exponent-conversion check."""
    an = holder_fit(u, a, region, "aniso", **kw)
    eu = holder_fit(u, a, region, "euclidean", **kw)
    ok = None
    if math.isfinite(an.exponent) and math.isfinite(eu.exponent):
        ok = an.exponent >= a.b_min / 2.0 * eu.exponent - 0.05
    return an, eu, ok


def gradient_holder_fit(u, a, region=0.5, **kw):
    """Hoelder fit of the central-difference gradient; the smallest component exponent."""
    reps = []
    for i in range(u.n):
        g = np.gradient(u.values, u.h[i], axis=i, edge_order=2)
        reps.append(holder_fit(GridFunction(u.origin, u.h, g, 0.0), a, region, **kw))
    live = [r for r in reps if "degenerate: constant" not in r.flags]
    if not live:
        out = reps[0]
        out.kind = "c1gamma"
        return out
    best = min(live, key=lambda r: r.exponent)
    best.kind = "c1gamma"
    best.extra["components"] = [_num(r.exponent) for r in reps]
    return best


# ----------------------------------------------------------------- ensembles


def random_exterior(n, seed, nonnegative=False, terms=4, scale=1.0):
    """Seeded bounded smooth data ``sum_j c_j cos(w_j . x + p_j)``.

    Values lie in ``[-1, 1]`` (``[0, 2]`` when ``nonnegative``); frequencies
    are at most ``scale`` so the data vary on unit length.
    """
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(terms, n)) * scale / math.sqrt(n)
    p = rng.uniform(0, 2 * math.pi, terms)
    c = rng.uniform(-1, 1, terms)
    c /= np.sum(np.abs(c))

    def g(x):
        x = np.asarray(x, float)
        v = np.tensordot(np.cos(x @ w.T + p), c, axes=([-1], [0]))
        return v + 1.0 if nonnegative else v

    return g


def halfspace_data(n, seed, sharpness=3.0, low=-1.0, high=0.8):
    """Seeded data ``<= 0`` on a half space through a point near the origin.

    ``g = m + w tanh(k (e . x - c))`` with a random unit direction ``e``,
    offset ``c`` in ``[0, 0.3]`` and range ``(low, high)``; it satisfies the
    growth-lemma tail bound for every ``tau > 0`` and makes ``{u <= 0}``
    cover roughly half of ``B_1``.
    """
    rng = np.random.default_rng(seed)
    e = rng.normal(size=n)
    e /= np.linalg.norm(e)
    c = rng.uniform(0.0, 0.3)
    mid, half = 0.5 * (high + low), 0.5 * (high - low)

    def g(x):
        return mid + half * np.tanh(sharpness * (np.asarray(x, float) @ e - c))

    return g


def grid_operator_values(op, report):
    """``L_h u`` of a solve on the closed grid (NaN on boundary nodes)."""
    full = np.full(report.solution.shape, np.nan)
    full[tuple(slice(1, -1) for _ in range(op.n))] = op.residual(report.interior)
    return full
