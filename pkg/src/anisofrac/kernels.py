"""Jump kernels with two-sided anisotropic bounds.

The normalisation constant of the reference operator is fixed to
``q_max``, so the reference kernel is ``q_max / ||y||^(c+s)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .aniso_geometry import Anisotropy, Ball, aniso_norm
from .errors import DomainError, PreconditionError, RangeError, ResolutionError
from .quadrature import sphere_rule

MODES = ("reference", "bounded", "truncated")


# Named symmetric multipliers usable from JSON configs.  Each maps
# (y, lam, Lam) to values in [lam, Lam] and is even in y.
def _mult_constant(y, lam, Lam, value=None):
    v = 0.5 * (lam + Lam) if value is None else value
    return np.full(y.shape[:-1], float(v))


def _mult_angular(y, lam, Lam, freq=3):
    r2 = np.sum(y * y, axis=-1)
    x1 = np.where(r2 > 0, y[..., 0] ** 2 / np.where(r2 > 0, r2, 1.0), 0.5)
    return lam + (Lam - lam) * 0.5 * (1.0 + np.cos(freq * math.pi * x1))


def _mult_radial(y, lam, Lam, period=0.5):
    r = np.sqrt(np.sum(y * y, axis=-1))
    return lam + (Lam - lam) * 0.5 * (1.0 + np.sin(2 * math.pi * r / period))


MULTIPLIERS = {
    "constant": _mult_constant,
    "angular": _mult_angular,
    "radial": _mult_radial,
}


def eval_K0(a, y):
    """Reference profile ``||y||^-(c+s)``; raises :class:`DomainError` at 0."""
    nrm = aniso_norm(a, y)
    if np.any(nrm == 0):
        raise DomainError("K_0 is singular at y = 0")
    return nrm ** (-(a.c + a.s))


def tail_constant(a):
    """``T`` with ``int_{||y|| > R} K_0 = T R^-s / s``; equals ``c |Theta_1|``."""
    return a.c * a.theta_unit_volume()


@dataclass(frozen=True)
class KernelSpec:
    """Symmetric kernel ``K = q_max * m(y) * K_0`` with ``lam <= m <= Lam``.

    ``mode`` selects the multiplier: ``reference`` uses ``m = 1``,
    ``bounded`` uses the callable (or named) ``multiplier``, and
    ``truncated`` additionally sets ``K = 0`` for ``||y|| >= truncation``.
    The truncated kernel is ``K_1 + K_2`` with ``K_1`` the untruncated
    bounded kernel and ``K_2 = -K_1`` outside the truncation radius, whose
    L1 norm is reported by :meth:`perturbation_l1`.
    """

    a: Anisotropy
    lam: float = 1.0
    Lam: float = 1.0
    mode: str = "reference"
    multiplier: object = None
    multiplier_name: str | None = None
    multiplier_args: dict = field(default_factory=dict)
    truncation: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown kernel mode {self.mode!r}")
        if not (0 < self.lam <= self.Lam):
            raise RangeError("need 0 < lambda <= Lambda")
        if self.mode == "truncated" and not (self.truncation and self.truncation > 0):
            raise PreconditionError("truncated mode needs a positive truncation radius")
        if self.multiplier_name is not None:
            if self.multiplier_name not in MULTIPLIERS:
                raise ValueError(f"unknown multiplier {self.multiplier_name!r}")
            fn = MULTIPLIERS[self.multiplier_name]
            args = dict(self.multiplier_args)
            object.__setattr__(
                self, "multiplier", lambda y: fn(y, self.lam, self.Lam, **args)
            )
        if self.mode != "reference" and self.multiplier is not None:
            self._validate_multiplier()

    def _validate_multiplier(self, count=4096, seed=7):
        rng = np.random.default_rng(seed)
        y = rng.standard_normal((count, self.a.n)) * rng.exponential(1.0, (count, 1))
        m = np.asarray(self.multiplier(y), dtype=float)
        mm = np.asarray(self.multiplier(-y), dtype=float)
        tol = 1e-12 * self.Lam
        if np.any(m < self.lam - tol) or np.any(m > self.Lam + tol):
            raise RangeError("multiplier leaves [lambda, Lambda]")
        if np.any(np.abs(m - mm) > tol):
            raise RangeError("multiplier is not even in y")

    @property
    def prefactor(self):
        """Normalisation ``C_{beta,s}``, fixed to ``q_max``."""
        return self.a.q_max

    def ratio(self, y):
        """``K(y) / K_0(y)``: the multiplier times the normalisation."""
        y = np.asarray(y, dtype=float)
        q = self.prefactor
        if self.mode == "reference" or self.multiplier is None:
            m = np.ones(y.shape[:-1])
        else:
            m = np.asarray(self.multiplier(y), dtype=float)
        out = q * m
        if self.mode == "truncated":
            out = np.where(aniso_norm(self.a, y) < self.truncation, out, 0.0)
        return out

    def eval(self, y):
        """Kernel value; raises :class:`DomainError` at the origin."""
        return self.ratio(y) * eval_K0(self.a, y)

    __call__ = eval

    def bounds(self):
        """Multipliers ``(lam q_max, Lam q_max)`` of the two-sided bound."""
        return self.lam * self.prefactor, self.Lam * self.prefactor

    def perturbation_l1(self):
        """L1 norm of the integrable part removed by truncation (0 otherwise)."""
        if self.mode != "truncated":
            return 0.0
        R = self.truncation
        return self.Lam * self.prefactor * tail_constant(self.a) * R ** (-self.a.s) / self.a.s

    def to_json(self):
        out = {
            "b": list(self.a.b),
            "s": self.a.s,
            "lambda": self.lam,
            "Lambda": self.Lam,
            "mode": self.mode,
        }
        if self.multiplier_name is not None:
            out["multiplier"] = self.multiplier_name
            if self.multiplier_args:
                out["multiplier_args"] = dict(self.multiplier_args)
        if self.truncation is not None:
            out["truncation"] = self.truncation
        return out

    @classmethod
    def from_json(cls, obj):
        allowed = {"b", "s", "lambda", "Lambda", "mode", "multiplier",
                   "multiplier_args", "truncation"}
        unknown = set(obj) - allowed
        if unknown:
            raise ValueError(f"unknown kernel keys: {sorted(unknown)}")
        mode = obj.get("mode", "reference")
        name = obj.get("multiplier")
        if mode != "reference" and name is None:
            name = "constant"
        return cls(
            Anisotropy(tuple(obj["b"]), obj["s"]),
            lam=obj.get("lambda", 1.0),
            Lam=obj.get("Lambda", 1.0),
            mode=mode,
            multiplier_name=name if mode != "reference" else None,
            multiplier_args=obj.get("multiplier_args", {}),
            truncation=obj.get("truncation"),
        )


# ---------------------------------------------------------------- bathtub


@dataclass
class BathtubResult:
    value: float
    mask: np.ndarray
    measure: float
    cell_volume: float
    singular_excluded: bool


def _b2_cells(n, grid):
    h = 4.0 / grid
    c = -2.0 + h * (np.arange(grid) + 0.5)
    mesh = np.stack(np.meshgrid(*([c] * n), indexing="ij"), axis=-1)
    inside = np.sum(mesh**2, axis=-1) < 4.0
    return mesh, inside, h


def bathtub_infimum(a, delta, grid=256, kernel_values=None):
    """Minimal integral of ``K_0`` over subsets of ``B_2`` of measure ``delta``.

    Cells of a uniform grid of ``[-2, 2]^n`` whose centres lie in ``B_2`` are
    sorted by kernel value and accumulated from the smallest until their
    measure reaches ``delta`` (the last cell is taken fractionally).  Cells
    touching the origin are never selected.

    Parameters
    ----------
    a : Anisotropy
    delta : float
        Target measure, ``0 < delta < |B_2|``.
    grid : int
        Cells per axis (even, so no centre sits at the origin).
    kernel_values : callable, optional
        Replacement for ``K_0`` evaluated at cell centres, used to test the
        bathtub logic on simple profiles.

    Returns
    -------
    BathtubResult
    """
    n = a.n
    if not 0 < delta < Ball(n, 2.0).volume():
        raise RangeError("need 0 < delta < |B_2|")
    mesh, inside, h = _b2_cells(n, grid)
    vol = h**n
    touching = np.all(np.abs(mesh) < h, axis=-1)
    cand = inside & ~touching
    pts = mesh[cand]
    vals = kernel_values(pts) if kernel_values is not None else eval_K0(a, pts)
    if delta < vol:
        raise ResolutionError(f"cell volume {vol:g} exceeds delta {delta:g}")
    available = cand.sum() * vol
    singular = False
    target = delta
    if delta > available:
        singular = True
        target = available
    order = np.argsort(vals, kind="stable")
    full = int(math.floor(target / vol + 1e-12))
    full = min(full, len(order))
    value = float(np.sum(vals[order[:full]])) * vol
    frac = target / vol - full
    if frac > 1e-12 and full < len(order):
        value += frac * vals[order[full]] * vol
    sel = np.zeros(len(pts), dtype=bool)
    sel[order[: full + (1 if frac > 1e-12 and full < len(order) else 0)]] = True
    mask = np.zeros(inside.shape, dtype=bool)
    mask[cand] = sel
    return BathtubResult(value, mask, target, vol, singular)


# ------------------------------------------------------- translation modulus


@dataclass
class TranslationModulus:
    value: float
    tail_bound: float
    r_far: float


def translation_modulus(k, h, tau0=1.0, grid=1, r_far=1e24):
    """Integral of ``|K(y) - K(y-h)| / |h|`` over ``|y| > tau0``.

    Euclidean polar quadrature on geometric shells out to ``r_far``; the
    remainder is bounded by ``(2/|h|) int_{|z| > r_far - |h|} K``.
    ``grid`` is a refinement level: shells per octave, Gauss nodes and
    angular nodes all scale with it.
    """
    a = k.a
    h = np.asarray(h, dtype=float)
    hn = float(np.linalg.norm(h))
    if not 0 < hn < tau0 / 2.0:
        raise PreconditionError("need 0 < |h| < tau0/2")
    n = a.n
    spo = 2 * grid
    p = 4 + 2 * grid
    m = 48 * grid
    octaves = math.log2(r_far / tau0)
    K = int(math.ceil(octaves * spo))
    edges = tau0 * (r_far / tau0) ** (np.arange(K + 1) / K)
    x, w = np.polynomial.legendre.leggauss(p)
    t0 = np.log(edges[:-1])[:, None]
    t1 = np.log(edges[1:])[:, None]
    t = (0.5 * (t1 - t0) * x + 0.5 * (t1 + t0)).ravel()
    wt = (0.5 * (t1 - t0) * w).ravel()
    r = np.exp(t)
    wr = wt * r**n
    th, ws = sphere_rule(n, m, half=False)
    total = 0.0
    for i in range(len(r)):
        y = r[i] * th
        diff = np.abs(k.eval(y) - k.eval(y - h))
        total += wr[i] * float(diff @ ws)
    total /= hn
    # tail: |z| >= R' forces max|z_i| >= R'/sqrt(n), so ||z|| >= t
    Rp = r_far - hn
    tt = (Rp / math.sqrt(n)) ** (a.b_min / 2.0) if Rp / math.sqrt(n) >= 1 else 1.0
    tail = 2.0 / hn * k.Lam * k.prefactor * tail_constant(a) * tt ** (-a.s) / a.s
    return TranslationModulus(total, tail, r_far)
