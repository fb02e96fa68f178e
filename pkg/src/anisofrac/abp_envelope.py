"""Concave envelopes, contact sets and the rectangle constructions built on them.

The envelope of a grid function ``u`` (nonpositive outside ``B_1``) is the
smallest concave function above ``u^+`` on ``B_3`` and zero outside.  It is
the upper convex hull of the lifted cloud ``{(x_i, u^+(x_i))}`` together with
zeros on ``dB_3`` (a polygon/point set on the sphere of radius 3), so it is
piecewise linear and stored as its facet planes.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .aniso_geometry import AnisoRect, Ellipsoid, frak_C, rect_R_tilde, unit_ball_volume
from .errors import PreconditionError
from .gridfunc import GridFunction, write_mask
from .quadrature import sphere_rule

OUTER_RADIUS = 3.0


# ------------------------------------------------------------------ envelope


def _ring_points(n, count):
    if n == 1:
        return np.array([[-OUTER_RADIUS], [OUTER_RADIUS]])
    if n == 2:
        phi = 2.0 * math.pi * np.arange(count) / count
        return OUTER_RADIUS * np.column_stack([np.cos(phi), np.sin(phi)])
    th, _ = sphere_rule(n, max(8, int(math.sqrt(count))))
    return OUTER_RADIUS * th


def _smooth_curvature(values, h):
    """Largest axis second difference over nodes whose neighbours are all positive."""
    pos = values > 0
    best = 0.0
    for i in range(values.ndim):
        if values.shape[i] < 3:
            continue
        sl = lambda a, b: tuple(slice(a, b) if d == i else slice(None) for d in range(values.ndim))
        ok = pos[sl(0, -2)] & pos[sl(1, -1)] & pos[sl(2, None)]
        if np.any(ok):
            d2 = np.diff(values, 2, axis=i) / h[i] ** 2
            best = max(best, float(np.max(np.abs(d2[ok]))))
    return best


def _check_support(u, tol):
    X = u.coords()
    r = np.sqrt(np.sum(X * X, axis=-1))
    bad = (r >= 1.0) & (u.values > tol)
    if np.any(bad):
        idx = np.unravel_index(np.argmax(np.where(bad, u.values, -np.inf)), bad.shape)
        raise PreconditionError(f"u > 0 outside B_1 at node {X[idx].tolist()}")
    ext = u.exterior
    if callable(ext):
        # probe a shell just outside the box
        lo, hi = u.origin, u.upper
        th, _ = sphere_rule(u.n, 64) if u.n > 1 else (np.array([[1.0], [-1.0]]), None)
        radii = np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi))) * np.array([1.01, 1.5, 3.0])
        pts = (radii[:, None, None] * th[None]).reshape(-1, u.n)
        pts = pts[~u.inside(pts)]
        if len(pts) and np.max(u.exterior_values(pts)) > tol:
            raise PreconditionError("exterior rule of u is positive somewhere")
    elif float(ext) > tol:
        raise PreconditionError("constant exterior value of u is positive")


@dataclass
class ConcaveEnvelope:
    """Piecewise-linear concave envelope on the grid of ``u``.

    Attributes
    ----------
    grid : GridFunction
        Envelope values on the nodes of ``u`` (zero outside ``B_3``).
    gradient : ndarray
        Supergradient per node, shape ``grid.shape + (n,)``; at hull
        vertices the mean of the adjacent facet gradients.
    contact : ndarray of bool
        Nodes in ``B_1`` with ``Gamma - u <= contact_tol``.
    planes : ndarray
        ``(F, n + 1)`` rows ``(g, c)`` of the facet planes ``g.x + c``.
    simplices : ndarray
        ``(F, n + 1, n)`` projected facet vertices.
    vertex_facets : dict
        Hull vertex coordinates (as tuples) mapped to their facet indices.
    """

    grid: GridFunction
    gradient: np.ndarray
    contact: np.ndarray
    contact_tol: float
    planes: np.ndarray
    simplices: np.ndarray
    vertex_facets: dict
    u: GridFunction

    @property
    def n(self):
        return self.grid.n

    @property
    def flat(self):
        return len(self.simplices) == 0

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        shp = pts.shape[:-1]
        flat = pts.reshape(-1, self.n)
        out = np.zeros(len(flat))
        if not self.flat:
            ins = np.sum(flat * flat, axis=1) < OUTER_RADIUS**2
            g, c = self.planes[:, :-1], self.planes[:, -1]
            idx = np.flatnonzero(ins)
            for i0 in range(0, len(idx), 4096):
                sel = idx[i0:i0 + 4096]
                out[sel] = np.min(flat[sel] @ g.T + c, axis=1)
            np.maximum(out, 0.0, out=out)
        return out.reshape(shp)

    def contact_points(self):
        return self.grid.coords()[self.contact]

    def facets_meeting(self, lo, hi):
        """Indices of facets whose projection meets the closed box ``[lo, hi]``."""
        if self.flat:
            return np.zeros(0, dtype=int)
        S = self.simplices
        smin, smax = S.min(axis=1), S.max(axis=1)
        eps = 1e-12
        hit = np.all((smin <= hi + eps) & (smax >= lo - eps), axis=1)
        if self.n == 2:
            # separating axes along the triangle edge normals
            idx = np.flatnonzero(hit)
            T = S[idx]
            corners = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [lo[0], hi[1]], [hi[0], hi[1]]])
            for e in range(3):
                d = T[:, (e + 1) % 3] - T[:, e]
                nrm = np.column_stack([-d[:, 1], d[:, 0]])
                tp = np.einsum("fk,fvk->fv", nrm, T)
                bp = nrm @ corners.T
                sep = (tp.max(1) < bp.min(1) - eps) | (tp.min(1) > bp.max(1) + eps)
                hit[idx[sep]] = False
        return np.flatnonzero(hit)

    def gradient_image_measure(self, lo, hi):
        """Measure of the convex hull of facet gradients over the closed box."""
        idx = self.facets_meeting(np.asarray(lo, float), np.asarray(hi, float))
        return _hull_measure(self.planes[idx, :-1])

    def contact_gradient_measure(self):
        """``|grad Gamma(Sigma)|`` as the sum of vertex subdifferentials in ``B_1``."""
        total = 0.0
        for v, fac in self.vertex_facets.items():
            if np.sum(np.square(v)) <= 1.0 + 1e-12:
                total += _hull_measure(self.planes[list(fac), :-1])
        return total

    def concavity_defect(self):
        """Largest positive axis second difference over stencils inside ``B_3``."""
        v = self.grid.values
        X = self.grid.coords()
        ins = np.sum(X * X, axis=-1) < OUTER_RADIUS**2
        worst = 0.0
        for i in range(self.n):
            if v.shape[i] >= 3:
                sl = lambda a, b: tuple(slice(a, b) if d == i else slice(None) for d in range(self.n))
                ok = ins[sl(0, -2)] & ins[sl(1, -1)] & ins[sl(2, None)]
                d2 = np.diff(v, 2, axis=i)[ok]
                worst = max(worst, float(np.max(d2, initial=0.0)))
        return worst

    def to_json(self):
        return {
            "contact_tol": self.contact_tol,
            "contact_count": int(self.contact.sum()),
            "facets": int(len(self.simplices)),
            "sup_u_plus": float(np.max(self.u.values, initial=0.0)),
            "concavity_defect": self.concavity_defect(),
        }


def _hull_measure(G):
    """Lebesgue measure of the convex hull of the rows of ``G``."""
    if len(G) < 2:
        return 0.0
    n = G.shape[1]
    if n == 1:
        return float(G.max() - G.min())
    G = np.unique(np.round(G, 14), axis=0)
    if len(G) < n + 1:
        return 0.0
    try:
        return float(ConvexHull(G).volume)
    except QhullError:
        return 0.0


def concave_envelope(u, contact_tol=None, ring=None, require_support=True):
    """Concave envelope of ``u^+`` over ``B_3`` on the nodes of ``u``.

    Parameters
    ----------
    u : GridFunction
        Must be ``<= 0`` outside ``B_1`` (nodes and exterior rule) unless
        ``require_support`` is false.
    contact_tol : float, optional
        Defaults to ``2 ||D^2 u|| h^2`` with the second differences taken
        where ``u`` is positive on a full axis stencil (so isolated spikes
        do not inflate it), floored at ``1e-12 (1 + sup u^+)``.
    ring : int, optional
        Number of zero points placed on ``dB_3`` (n >= 2).
    """
    n = u.n
    up = np.maximum(u.values, 0.0)
    scale = 1.0 + float(up.max(initial=0.0))
    floor_tol = 1e-12 * scale
    if require_support:
        _check_support(u, floor_tol)
    if contact_tol is None:
        contact_tol = max(2.0 * _smooth_curvature(u.values, u.h) * float(np.max(u.h)) ** 2, floor_tol)

    X = u.coords()
    r2 = np.sum(X * X, axis=-1)
    in3 = r2 < OUTER_RADIUS**2
    in1 = r2 <= 1.0 + 1e-12
    shape = u.shape

    # values within the floor tolerance of zero are treated as zero so the hull never sees
    # a numerically flat lifted cloud
    pos = (up > floor_tol) & in3
    if not np.any(pos):
        values = np.zeros(shape)
        grad = np.zeros(shape + (n,))
        contact = in1 & (np.abs(u.values) <= contact_tol)
        return ConcaveEnvelope(GridFunction(u.origin, u.h, values, 0.0), grad, contact,
                               contact_tol, np.zeros((1, n + 1)), np.zeros((0, n + 1, n)), {}, u)

    ring = ring or max(256, 8 * max(shape))
    R = _ring_points(n, ring)
    P = np.vstack([X[pos], R])
    Z = np.concatenate([up[pos], np.zeros(len(R))])
    try:
        hull = ConvexHull(np.column_stack([P, Z]))
    except QhullError:
        hull = ConvexHull(np.column_stack([P, Z]), qhull_options="QJ")
    eq = hull.equations
    upper = eq[:, n] > 1e-12
    eq = eq[upper]
    simp = hull.simplices[upper]
    grads = -eq[:, :n] / eq[:, n:n + 1]
    const = -eq[:, n + 1] / eq[:, n]
    planes = np.column_stack([grads, const])
    simplices = P[simp]

    vf = {}
    for f, verts in enumerate(simp):
        for v in verts:
            vf.setdefault(tuple(P[v]), []).append(f)

    flatX = X.reshape(-1, n)
    vals = np.zeros(len(flatX))
    grad = np.zeros((len(flatX), n))
    idx = np.flatnonzero(in3.ravel())
    for i0 in range(0, len(idx), 4096):
        sel = idx[i0:i0 + 4096]
        Pv = flatX[sel] @ grads.T + const
        j = np.argmin(Pv, axis=1)
        vals[sel] = Pv[np.arange(len(sel)), j]
        grad[sel] = grads[j]
    # at hull vertices use the mean of the distinct adjacent facet gradients,
    # which lies in the subdifferential and respects symmetries of the data
    npos = int(pos.sum())
    pos_flat = np.flatnonzero(pos.ravel())
    for v in np.unique(simp.ravel()):
        if v < npos:
            fac = np.unique(np.round(grads[vf[tuple(P[v])]], 12), axis=0)
            grad[pos_flat[v]] = fac.mean(axis=0)
    vals = np.maximum(vals, 0.0).reshape(shape)
    grad = grad.reshape(shape + (n,))
    contact = in1 & (vals - u.values <= contact_tol)
    return ConcaveEnvelope(GridFunction(u.origin, u.h, vals, 0.0), grad, contact, contact_tol,
                           planes, simplices, vf, u)


# --------------------------------------------------------------- detachment


def _lattice(lo, hi, m):
    """Midpoint lattice with ``m`` points per axis in the box ``[lo, hi]``."""
    axes = [lo[i] + (hi[i] - lo[i]) * (np.arange(m) + 0.5) / m for i in range(len(lo))]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))


def ring_radius(a, rho0, frak_c, k):
    """``r_k = rho0 2^{-1/q_min} 2^{-C b_min k / 2}``."""
    return rho0 * 2.0 ** (-1.0 / a.q_min) * 2.0 ** (-frak_c * a.b_min * k / 2.0)


@dataclass
class DetachmentResult:
    radii: list
    measures: list
    ring_measures: list
    thresholds: list
    first_k: int | None

    def to_json(self):
        return {
            "radii": self.radii,
            "measures": self.measures,
            "ring_measures": self.ring_measures,
            "thresholds": self.thresholds,
            "first_k": self.first_k,
        }


def detachment_sets(u, env, x, M, a, rho0=1.0, frak_c=None, K=None, f_x=None, C0=1.0, m=64):
    """Measures of ``W_k(x)`` on the rings ``E_{r_k,1} minus E_{r_{k+1},1}``.

    ``W_k`` is the part of the ring where ``u(x + y)`` lies below the plane
    ``u(x) + <y, grad Gamma(x)>`` by more than ``M (q_min/q_max) r_k^{4/b_min}``.
    Each ring is measured by an ``m^n`` midpoint lattice on its bounding
    box.  ``K`` defaults to the number of rings whose smallest half-width is
    at least one grid step.  ``first_k`` is the first ring with
    ``|W_k| <= C0 f(x)/M |ring_k|`` (``None`` without ``f_x``).
    """
    x = np.asarray(x, dtype=float)
    C = frak_C(a).value if frak_c is None else frak_c
    ux = float(u(x[None])[0])
    gx = env.gradient[tuple(np.round((x - u.origin) / u.h).astype(int))]
    ratio = a.q_min / a.q_max
    if K is None:
        K = 1
        while np.all(ring_radius(a, rho0, C, K + 1) ** (2.0 / a.barr) >= u.h):
            K += 1
    out = DetachmentResult([], [], [], [], None)
    for k in range(K):
        rk, rk1 = ring_radius(a, rho0, C, k), ring_radius(a, rho0, C, k + 1)
        outer, inner = Ellipsoid("E", a, rk), Ellipsoid("E", a, rk1)
        lo, hi = outer.bounding_box()
        Y = _lattice(lo, hi, m)
        cell = float(np.prod((hi - lo) / m))
        Y = Y[outer.contains(Y) & ~inner.contains(Y)]
        thr = M * ratio * rk ** (4.0 / a.b_min)
        below = u(x + Y) < ux + Y @ gx - thr
        meas = float(below.sum()) * cell
        ring_meas = outer.volume() - inner.volume()
        out.radii.append(rk)
        out.measures.append(meas)
        out.ring_measures.append(ring_meas)
        out.thresholds.append(thr)
        if out.first_k is None and f_x is not None and meas <= C0 * f_x / M * ring_meas:
            out.first_k = k
    return out


# ------------------------------------------------------------ rectangle family


def dilation_constant(frak_c):
    """Dilation ``C`` with ``E_{r,1}(x_0) in C R~`` for the generation containing ``x_0``."""
    return 2.0**frak_c + 2.0 ** (-frak_c) / 2.0


@dataclass
class RectRecord:
    rect: AnisoRect
    generation: int
    companion: AnisoRect
    contact_nodes: int
    f_max: float
    grad_measure: float
    grad_bound: float
    detach_fraction: float
    prop5: bool
    prop6: bool

    @property
    def diameter(self):
        return self.rect.diameter()

    @property
    def companion_diameter(self):
        return self.companion.diameter()

    def to_json(self):
        return {
            "rect": self.rect.to_json(),
            "generation": self.generation,
            "diameter": self.diameter,
            "companion": self.companion.to_json(),
            "companion_diameter": self.companion_diameter,
            "contact": self.contact_nodes > 0,
            "contact_nodes": self.contact_nodes,
            "f_max": self.f_max,
            "grad_measure": self.grad_measure,
            "grad_bound": self.grad_bound,
            "detach_fraction": self.detach_fraction,
            "prop5": self.prop5,
            "prop6": self.prop6,
        }


@dataclass
class RectangleFamily:
    records: list
    properties: dict
    terminated: bool
    depth: int
    constants: dict
    realized: dict
    message: str = ""
    offending: list = field(default_factory=list)

    @property
    def certified(self):
        return self.terminated and all(self.properties.values())

    def to_json(self):
        return {
            "format": "anisofrac.rectangle_family/1",
            "terminated": self.terminated,
            "certified": self.certified,
            "depth": self.depth,
            "message": self.message,
            "properties": self.properties,
            "constants": self.constants,
            "realized": self.realized,
            "rectangles": [r.to_json() for r in self.records],
            "offending": [r.to_json() for r in self.offending],
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _as_grid(f, like):
    if isinstance(f, GridFunction):
        return f
    return GridFunction(like.origin, like.h, np.full(like.shape, float(f)), float(f))


def _max_on(fg, rect, m=5):
    lo, hi = rect.bounding_box()
    pts = _lattice(lo, hi, m)
    pts = np.vstack([pts, lo[None], hi[None]])
    best = float(np.max(fg(pts)))
    X = fg.coords().reshape(-1, fg.n)
    ins = rect.contains_closure(X)
    if np.any(ins):
        best = max(best, float(np.max(fg.values.reshape(-1)[ins])))
    return best


def _disjoint(rects, tol=1e-12):
    if len(rects) < 2:
        return True
    C = np.array([r.center for r in rects])
    W = np.array([r.half_widths for r in rects])
    for i in range(len(rects) - 1):
        gap = np.abs(C[i + 1:] - C[i]) - (W[i + 1:] + W[i])
        if np.any(np.all(gap < -tol * (1.0 + W[i]), axis=1)):
            return False
    return True


def abp_rectangle_family(u, f, k, env=None, rho0=1.0, frak_c=None, C_grad=1.0, C_detach=1.0,
                         varsigma=0.05, max_depth=8, lattice=8, threads=1):
    """Recursive rectangle family over the contact set of ``u``.

    Tiles of ``B_1`` with edges ``(rho0 2^{-1/q_min})^{2/b_i} / 2^C`` are kept
    when their closure holds a contact node.  A tile of generation ``j``
    is tested for

    * (5) ``|grad Gamma(closure R)| <= C_grad (max_{R~} f^+)^n |R~|``,
    * (6) ``|{y in D R~ : u >= Gamma - C_detach (max_{R~} f) d~^2}| >= varsigma |R~|``,

    with ``R~`` the companion rectangle of generation ``j`` and ``D`` from
    :func:`dilation_constant`.  Failing tiles split every edge by ``2^C``.
    The measure in (6) uses a ``lattice^n`` midpoint rule on ``D R~``.
    Splitting past ``max_depth`` returns ``terminated=False`` with the
    offending rectangles.
    """
    a = k.a
    n = a.n
    C = frak_C(a).value if frak_c is None else frak_c
    env = env or concave_envelope(u)
    fg = _as_grid(f, u)
    r0 = rho0 * 2.0 ** (-1.0 / a.q_min)
    edge0 = r0 ** (2.0 / a.barr) / 2.0**C
    dil = dilation_constant(C)
    cpts = env.contact_points()

    def record(rect, gen):
        lo, hi = rect.bounding_box()
        ins = np.all((cpts >= lo - 1e-12) & (cpts <= hi + 1e-12), axis=1)
        comp = rect_R_tilde(a, r0, gen, C, rect.center)
        fmax = _max_on(fg, comp)
        gm = env.gradient_image_measure(lo, hi)
        bound = C_grad * max(fmax, 0.0) ** n * comp.volume()
        big = comp.dilate(dil)
        blo, bhi = big.bounding_box()
        Y = _lattice(blo, bhi, lattice)
        thr = C_detach * fmax * comp.diameter() ** 2
        good = u(Y) >= env(Y) - thr
        frac = float(good.mean()) * big.volume() / comp.volume()
        return RectRecord(rect, gen, comp, int(ins.sum()), fmax, gm, bound, frac,
                          gm <= bound * (1.0 + 1e-12), frac >= varsigma)

    # initial tiling of [-1, 1]^n aligned with the origin
    axes = []
    for i in range(n):
        j0, j1 = math.floor(-1.0 / edge0[i]), math.ceil(1.0 / edge0[i])
        axes.append(edge0[i] * (np.arange(j0, j1) + 0.5))
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    tiles = _keep_touching([AnisoRect(c, edge0 / 2.0) for c in centers], cpts)

    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    mapper = pool.map if pool else map
    accepted, offending = [], []
    gen, depth = 0, 0
    try:
        while tiles:
            depth = gen
            recs = list(mapper(lambda t: record(t, gen), tiles))
            fails = [r for r in recs if not (r.prop5 and r.prop6)]
            accepted += [r for r in recs if r.prop5 and r.prop6]
            if not fails:
                break
            if gen + 1 > max_depth:
                offending = fails
                break
            kids = []
            parts = 2**C
            for r in fails:
                w = r.rect.half_widths / parts
                lo = r.rect.center - r.rect.half_widths
                grid = [lo[i] + w[i] * (2 * np.arange(parts) + 1) for i in range(n)]
                cc = np.stack(np.meshgrid(*grid, indexing="ij"), axis=-1).reshape(-1, n)
                kids += _keep_touching([AnisoRect(c, w) for c in cc], cpts)
            tiles = kids
            gen += 1
    finally:
        if pool:
            pool.shutdown()

    final = accepted + offending
    rects = [r.rect for r in final]
    covered = np.zeros(len(cpts), dtype=bool)
    for r in rects:
        covered |= r.contains_closure(cpts)
    dmax = math.sqrt(float(np.sum(r0 ** (4.0 / a.barr))))
    props = {
        "1_disjoint": _disjoint(rects),
        "2_cover": bool(np.all(covered)),
        "3_contact": all(r.contact_nodes > 0 for r in final),
        "4_diameter": all(r.diameter <= dmax * (1.0 + 1e-12) for r in final),
        "5_gradient": all(r.prop5 for r in final),
        "6_detachment": all(r.prop6 for r in final),
    }
    ratios = [r.grad_measure / r.grad_bound * C_grad for r in final if r.grad_bound > 0]
    realized = {
        "grad_constant": max(ratios, default=0.0),
        "varsigma": min((r.detach_fraction for r in final), default=math.inf),
        "rectangles": len(final),
    }
    consts = {"rho0": rho0, "frak_c": C, "r0": r0, "dilation": dil, "C_grad": C_grad,
              "C_detach": C_detach, "varsigma": varsigma, "max_depth": max_depth}
    msg = "" if not offending else "non-terminating at resolution"
    return RectangleFamily(final, props, not offending, depth, consts, realized, msg, offending)


def _keep_touching(rects, cpts):
    if len(cpts) == 0:
        return []
    return [r for r in rects if np.any(r.contains_closure(cpts))]


def pucci_rhs(u, k, env=None, max_points=16, q=None):
    """``f = max(0, -(M^+ u - err))`` at up to ``max_points`` contact nodes.

    Returns ``(points, f_values, values, errors)``; the contact nodes are
    taken with a deterministic stride.
    """
    from .dirichlet_solver import pucci_grid

    env = env or concave_envelope(u)
    pts = env.contact_points()
    if len(pts) > max_points:
        pts = pts[np.linspace(0, len(pts) - 1, max_points).round().astype(int)]
    res = pucci_grid(u, k, pts, sign="plus", q=q)
    vals = np.array([r.value for r in res])
    errs = np.array([r.error for r in res])
    return pts, np.maximum(0.0, -(vals - errs)), vals, errs


# ------------------------------------------------------------ volume check


@dataclass
class VolumeCheck:
    sup_u: float
    contact_gradient_measure: float
    classical_lower: float
    cover_gradient_sum: float
    grad_constant: float
    overlap: int
    union_measure: float
    constant: float
    holds: bool
    links: dict

    def to_json(self):
        return dict(self.__dict__)


def volume_consistency(u, env, f, a, rho0=1.0, frak_c=None, max_points=64, lattice=256, C0=1.0):
    """Check ``C (sup u)^n <= |union_x E_{r(x),1}(x)|`` with a constant from the data.

    ``r(x)`` is the first detachment radius at each contact node (the last
    computed one when none qualifies).  The constant is
    ``|B_1| 4^{-n} / (G f_max^n N)`` where ``G`` is the largest observed ratio
    ``|grad Gamma(E_{r,1/4}(x))| / (f(x)^n |E_{r,1/4}(x)|)`` over a covering
    subfamily and ``N`` its pointwise overlap.  Every link of the chain
    ``|B_1| (sup/4)^n <= |grad Gamma(Sigma)| <= sum_cover ... <= N G f^n |union|``
    is reported.
    """
    n = a.n
    C = frak_C(a).value if frak_c is None else frak_c
    fg = _as_grid(f, u)
    sup_u = float(np.max(u.values, initial=0.0))
    pts = env.contact_points()
    if sup_u <= 0 or len(pts) == 0:
        return VolumeCheck(sup_u, 0.0, 0.0, 0.0, 0.0, 0, 0.0, 0.0, True, {})
    if len(pts) > max_points:
        pts = pts[np.linspace(0, len(pts) - 1, max_points).round().astype(int)]
    fx = np.maximum(fg(pts), 0.0)
    radii = np.empty(len(pts))
    for i, x in enumerate(pts):
        M = max(float(fx[i]), 1e-300)
        d = detachment_sets(u, env, x, M, a, rho0, C, f_x=float(fx[i]), C0=C0, m=32)
        radii[i] = d.radii[d.first_k if d.first_k is not None else -1]

    # Covering subfamily of E_{r,1/4}(x) via rectangles inscribed in them
    hw = lambda t: 2.0 * (t ** (2.0 / a.barr) / 4.0) / math.sqrt(n) * (1.0 - 1e-9)
    cov = cc_cover(pts, radii, hw)
    sel = cov.selected
    quarter = [Ellipsoid("E", a, radii[i], 0.25, pts[i]) for i in sel]
    G = 0.0
    cover_sum = 0.0
    for i, E in zip(sel, quarter):
        lo, hi = E.bounding_box()
        gm = env.gradient_image_measure(lo, hi)
        cover_sum += gm
        if fx[i] > 0:
            G = max(G, gm / (fx[i] ** n * E.volume()))
    big = [Ellipsoid("E", a, radii[i], 1.0, pts[i]) for i in range(len(pts))]
    lo = np.min([E.bounding_box()[0] for E in big], axis=0)
    hi = np.max([E.bounding_box()[1] for E in big], axis=0)
    m = lattice if n <= 2 else 48
    Y = _lattice(lo, hi, m)
    cell = float(np.prod((hi - lo) / m))
    inside = np.zeros(len(Y), dtype=bool)
    for E in big:
        inside |= E.contains(Y)
    union = float(inside.sum()) * cell
    count = np.zeros(len(Y), dtype=int)
    for E in quarter:
        count += E.contains(Y)
    overlap = max(1, int(count.max(initial=0)))
    fmax = float(np.max(fx))
    const = unit_ball_volume(n) * 4.0**-n / (G * fmax**n * overlap) if G > 0 else math.inf
    grad_sigma = env.contact_gradient_measure()
    classical = unit_ball_volume(n) * (sup_u / 4.0) ** n
    links = {
        "classical": classical <= grad_sigma * (1.0 + 1e-9),
        "cover": grad_sigma <= cover_sum * (1.0 + 1e-9),
        "ratio": cover_sum <= G * fmax**n * sum(E.volume() for E in quarter) * (1.0 + 1e-9),
    }
    holds = const * sup_u**n <= union
    return VolumeCheck(sup_u, grad_sigma, classical, cover_sum, G, overlap, union, const,
                       bool(holds), links)


# ------------------------------------------------------------------ covering


@dataclass
class Cover:
    selected: list
    rects: list
    overlap: int

    def to_json(self):
        return {
            "selected": [int(i) for i in self.selected],
            "rects": [r.to_json() for r in self.rects],
            "overlap": self.overlap,
        }


def cc_cover(points, t, growth):
    """Greedy cover by axis-parallel rectangles centred at the points.

    ``growth(t)`` returns the edge lengths for parameter ``t`` (array of
    shape ``(n,)``).  The uncovered point with the largest parameter is
    selected until every point lies in a selected rectangle; ``overlap`` is
    the largest number of selected rectangles containing any point.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), (len(P),))
    order = np.argsort(-t, kind="stable")
    covered = np.zeros(len(P), dtype=bool)
    count = np.zeros(len(P), dtype=int)
    selected, rects = [], []
    for i in order:
        if covered[i]:
            continue
        R = AnisoRect(P[i], np.asarray(growth(t[i]), dtype=float) / 2.0)
        inside = R.contains(P)
        inside[i] = True
        covered |= inside
        count += inside
        selected.append(int(i))
        rects.append(R)
    return Cover(selected, rects, int(count.max(initial=0)))


# --------------------------------------------------------- Calderon-Zygmund


@dataclass
class CZNode:
    lo: np.ndarray
    hi: np.ndarray
    depth: int
    fraction: float
    parent: "CZNode | None" = None

    @property
    def rect(self):
        return AnisoRect((self.lo + self.hi) / 2.0, (self.hi - self.lo) / 2.0)

    def to_json(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist(), "depth": self.depth,
                "fraction": self.fraction}


@dataclass
class CZResult:
    selected: list
    predecessors: list
    nodes_visited: int

    def to_json(self):
        return {
            "selected": [s.to_json() for s in self.selected],
            "predecessors": [p.to_json() if p is not None else None for p in self.predecessors],
            "nodes_visited": self.nodes_visited,
        }


def split_counts(a, depth):
    """Pieces per axis when going from ``depth`` to ``depth + 1``.

    The edge at depth ``d`` is ``2^{-floor(2d/b_i)}``, which equals the
    ratio ``2^{-2/b_i}`` per generation whenever ``2/b_i`` is an integer
    and partitions exactly otherwise.
    """
    b = a.barr
    return (2 ** (np.floor(2 * (depth + 1) / b) - np.floor(2 * depth / b))).astype(int)


def cz_decompose(mask, a, threshold, max_depth=12):
    """Anisotropic Calderon-Zygmund selection on ``Q_1 = (-1/2, 1/2)^n``.

    ``mask`` is a :class:`GridFunction` of 0/1 values whose nodes are cell
    centres in ``Q_1``; the fraction of a node rectangle is the mean of the
    mask over the nodes in its half-open box ``[lo, hi)``.  A rectangle is selected when its
    fraction exceeds ``threshold`` (its parent's did not, or it is the
    root); otherwise it is split and the search continues until a
    rectangle holds at most one node per axis.
    """
    n = a.n
    vals = np.asarray(mask.values, dtype=float)
    axes = mask.axes()
    S = vals
    for i in range(n):
        S = np.cumsum(S, axis=i)
    S = np.pad(S, [(1, 0)] * n)

    def box_sum(ix):
        total = 0.0
        for corner in range(2**n):
            sel, sign = [], 1
            for i in range(n):
                if corner >> i & 1:
                    sel.append(ix[i][1])
                else:
                    sel.append(ix[i][0])
                    sign = -sign
            total += sign * S[tuple(sel)]
        return total

    def stats(lo, hi):
        ix = [(int(np.searchsorted(axes[i], lo[i], "left")),
               int(np.searchsorted(axes[i], hi[i], "left"))) for i in range(n)]
        cnt = int(np.prod([max(0, j1 - j0) for j0, j1 in ix]))
        if cnt == 0:
            return 0.0, ix, 0
        return box_sum(ix) / cnt, ix, cnt

    root_lo, root_hi = -0.5 * np.ones(n), 0.5 * np.ones(n)
    selected, preds = [], []
    frac, ix, _ = stats(root_lo, root_hi)
    root = CZNode(root_lo, root_hi, 0, frac)
    stack = [root]
    visited = 0
    while stack:
        node = stack.pop()
        visited += 1
        if node.fraction > threshold:
            selected.append(node)
            preds.append(node.parent)
            continue
        if node.depth >= max_depth:
            continue
        _, ix, _ = stats(node.lo, node.hi)
        if all(j1 - j0 <= 1 for j0, j1 in ix):
            continue
        parts = split_counts(a, node.depth)
        w = (node.hi - node.lo) / parts
        for idx in np.ndindex(*parts):
            lo = node.lo + w * np.array(idx)
            hi = lo + w
            fr, _, cnt = stats(lo, hi)
            if cnt:
                stack.append(CZNode(lo, hi, node.depth + 1, fr, node))
    return CZResult(selected, preds, visited)


def write_contact_mask(path, env):
    write_mask(path, env.contact, env.grid.origin, env.grid.h)
