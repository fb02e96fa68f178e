"""Anisotropic norm, ellipsoids, rectangles and scaling maps.

Every set here is open: membership uses strict inequalities, so boundary
points are classified as outside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.stats import qmc

from .errors import RangeError

DEFAULT_SEED = 20240607


def abs_pow(x, b):
    """Return ``|x|**b`` elementwise.

    Integer exponents use repeated multiplication, other exponents use
    ``exp(b log|x|)`` with ``0**b = 0``.
    """
    x = np.abs(np.asarray(x, dtype=float))
    if float(b).is_integer() and 0 < b <= 64:
        k = int(b)
        out = np.ones_like(x)
        base = x.copy()
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out
    with np.errstate(divide="ignore"):
        logx = np.log(x)
    return np.where(x > 0, np.exp(b * logx), 0.0)


def unit_ball_volume(n):
    """Lebesgue measure of the Euclidean unit ball in dimension n."""
    return math.exp(0.5 * n * math.log(math.pi) - math.lgamma(0.5 * n + 1.0))


@dataclass(frozen=True)
class Anisotropy:
    """Homogeneity exponents ``b`` and order ``s`` with derived exponents.

    Construction rejects ``s`` outside ``(0, 4/b_max)``.
    """

    b: tuple
    s: float

    def __post_init__(self):
        b = tuple(float(v) for v in np.atleast_1d(self.b))
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "s", float(self.s))
        if len(b) < 1:
            raise RangeError("need at least one direction")
        if any(not math.isfinite(v) or v <= 0 for v in b):
            raise RangeError(f"exponents must be positive, got {b}")
        if not (0.0 < self.s < 4.0 / max(b)):
            raise RangeError(
                f"order s={self.s} outside (0, 4/b_max) = (0, {4.0 / max(b)})"
            )

    @property
    def n(self):
        return len(self.b)

    @property
    def barr(self):
        return np.asarray(self.b)

    @property
    def c(self):
        return sum(2.0 / v for v in self.b)

    @property
    def b_min(self):
        return min(self.b)

    @property
    def b_max(self):
        return max(self.b)

    @property
    def q_max(self):
        return 4.0 / self.b_max - self.s

    @property
    def q_min(self):
        return 4.0 / self.b_min - self.s

    def theta_unit_volume(self):
        """Measure of the anisotropic unit ball ``{sum |y_i|^b_i < 1}``."""
        inv = [1.0 / v for v in self.b]
        return math.exp(
            self.n * math.log(2.0)
            + sum(math.lgamma(1.0 + t) for t in inv)
            - math.lgamma(1.0 + sum(inv))
        )

    def to_json(self):
        return {"b": list(self.b), "s": self.s}

    @classmethod
    def from_json(cls, obj):
        unknown = set(obj) - {"b", "s"}
        if unknown:
            raise ValueError(f"unknown anisotropy keys: {sorted(unknown)}")
        return cls(tuple(obj["b"]), obj["s"])


def derived_exponents(b, s):
    """Build an :class:`Anisotropy`, raising :class:`RangeError` if invalid."""
    return Anisotropy(tuple(b), s)


def aniso_norm(a, y):
    """Anisotropic norm ``(sum |y_i|^b_i)^(1/2)`` along the last axis."""
    y = np.asarray(y, dtype=float)
    total = np.zeros(y.shape[:-1])
    for i, bi in enumerate(a.b):
        total = total + abs_pow(y[..., i], bi)
    return np.sqrt(total)


# ---------------------------------------------------------------- scalings


@dataclass(frozen=True)
class ScalingMap:
    """Diagonal scaling ``T_beta``, ``T_max`` or ``T_j`` of radius ``r``."""

    kind: str
    r: float
    a: Anisotropy
    j: int = 0

    def __post_init__(self):
        if self.kind not in ("T_beta", "T_max", "T_j"):
            raise ValueError(f"unknown scaling kind {self.kind!r}")
        if not self.r > 0:
            raise RangeError("scaling radius must be positive")

    @property
    def exponents(self):
        b = self.a.barr
        if self.kind == "T_beta":
            return 2.0 / b
        if self.kind == "T_max":
            return self.a.b_max / b
        e = b[self.j] / b
        e[self.j] = 1.0
        return e

    @property
    def factors(self):
        return self.r ** self.exponents

    def det(self):
        return float(np.prod(self.factors))

    def apply(self, y):
        return np.asarray(y, dtype=float) * self.factors

    def inverse(self, y):
        return np.asarray(y, dtype=float) / self.factors


def scale_apply(m, y):
    """Apply the scaling map ``m`` to points ``y``."""
    return m.apply(y)


# ----------------------------------------------------------------- regions


class Region:
    """Open region with membership test and bounding box."""

    n: int

    def contains(self, pts):
        raise NotImplementedError

    def bounding_box(self):
        """Return ``(lo, hi)`` arrays enclosing the region."""
        raise NotImplementedError

    def volume(self):
        raise NotImplementedError

    def sample(self, count, seed=DEFAULT_SEED, batch_log2=16):
        """Return ``count`` scrambled-Sobol points of the region.

        Points are drawn in the bounding box in power-of-two batches and
        those outside the region are rejected.
        """
        lo, hi = self.bounding_box()
        engine = qmc.Sobol(d=self.n, scramble=True, seed=seed)
        out = []
        have = 0
        while have < count:
            u = engine.random(2**batch_log2)
            pts = lo + u * (hi - lo)
            pts = pts[self.contains(pts)]
            out.append(pts)
            have += len(pts)
        return np.concatenate(out)[:count]


@dataclass(frozen=True, eq=False)
class Ellipsoid(Region):
    """Sets ``E_{r,l}(x)``, ``E^max_{r,l}(x)`` and ``Theta_r(x)``."""

    kind: str
    a: Anisotropy
    r: float
    l: float = 1.0
    center: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.kind not in ("E", "Emax", "Theta"):
            raise ValueError(f"unknown ellipsoid kind {self.kind!r}")
        c = np.zeros(self.a.n) if self.center is None else self.center
        object.__setattr__(self, "center", np.asarray(c, dtype=float))

    @property
    def n(self):
        return self.a.n

    def _denominators(self):
        b = self.a.barr
        if self.kind == "E":
            return self.r ** (4.0 / b)
        return self.r ** (2.0 * self.a.b_max / b)

    def gauge(self, pts):
        """Quantity compared against ``l**2`` (or ``r**2`` for Theta)."""
        d = np.asarray(pts, dtype=float) - self.center
        if self.kind == "Theta":
            return aniso_norm(self.a, d) ** 2
        return np.sum(d * d / self._denominators(), axis=-1)

    def contains(self, pts):
        if self.kind == "Theta":
            return self.gauge(pts) < self.r**2
        return self.gauge(pts) < self.l**2

    def half_widths(self):
        if self.kind == "Theta":
            return self.r ** (2.0 / self.a.barr)
        return self.l * np.sqrt(self._denominators())

    def bounding_box(self):
        w = self.half_widths()
        return self.center - w, self.center + w

    def volume(self):
        if self.kind == "Theta":
            return self.r**self.a.c * self.a.theta_unit_volume()
        return float(np.prod(self.half_widths())) * unit_ball_volume(self.n)


@dataclass(frozen=True, eq=False)
class Ball(Region):
    """Euclidean ball ``B_r(x)``."""

    n: int
    r: float
    center: np.ndarray = field(default=None)

    def __post_init__(self):
        c = np.zeros(self.n) if self.center is None else self.center
        object.__setattr__(self, "center", np.asarray(c, dtype=float))

    def contains(self, pts):
        d = np.asarray(pts, dtype=float) - self.center
        return np.sum(d * d, axis=-1) < self.r**2

    def bounding_box(self):
        return self.center - self.r, self.center + self.r

    def volume(self):
        return self.r**self.n * unit_ball_volume(self.n)


@dataclass(frozen=True, eq=False)
class AnisoRect(Region):
    """Open axis-aligned rectangle ``{|y_i - x_i| < l_i}``."""

    center: np.ndarray
    half_widths: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(
            self, "half_widths", np.asarray(self.half_widths, dtype=float)
        )

    @property
    def n(self):
        return len(self.center)

    def contains(self, pts):
        d = np.abs(np.asarray(pts, dtype=float) - self.center)
        return np.all(d < self.half_widths, axis=-1)

    def contains_closure(self, pts):
        d = np.abs(np.asarray(pts, dtype=float) - self.center)
        return np.all(d <= self.half_widths, axis=-1)

    def bounding_box(self):
        return self.center - self.half_widths, self.center + self.half_widths

    def volume(self):
        return float(np.prod(2.0 * self.half_widths))

    def diameter(self):
        return float(2.0 * np.sqrt(np.sum(self.half_widths**2)))

    def dilate(self, factor):
        return AnisoRect(self.center, factor * self.half_widths)

    def to_json(self):
        return {
            "center": self.center.tolist(),
            "half_widths": self.half_widths.tolist(),
        }


@dataclass(frozen=True, eq=False)
class MappedRegion(Region):
    """Image ``T(A)`` of a region under a scaling map."""

    base: Region
    scaling: ScalingMap

    @property
    def n(self):
        return self.base.n

    def contains(self, pts):
        return self.base.contains(self.scaling.inverse(pts))

    def bounding_box(self):
        lo, hi = self.base.bounding_box()
        f = self.scaling.factors
        return lo * f, hi * f

    def volume(self):
        return self.base.volume() * self.scaling.det()

    def sample(self, count, seed=DEFAULT_SEED, batch_log2=16):
        return self.scaling.apply(self.base.sample(count, seed, batch_log2))


def rect_R(a, r, l, center=None):
    """Rectangle ``R_{r,l}(x)`` with half-widths ``l^(2/b_min) r^(2/b_i)``."""
    c = np.zeros(a.n) if center is None else center
    return AnisoRect(c, l ** (2.0 / a.b_min) * r ** (2.0 / a.barr))


def rect_R_box(a, r, k, frak_c, center=None):
    """Largest rectangle ``R(x)`` allowed at generation ``k``."""
    c = np.zeros(a.n) if center is None else center
    return AnisoRect(c, 2.0 ** (-frak_c * (k + 1)) * r ** (2.0 / a.barr))


def rect_R_tilde(a, r, k, frak_c, center=None):
    """Companion rectangle with half-widths ``[2^(-C b_min k/2) r]^(2/b_i)``."""
    c = np.zeros(a.n) if center is None else center
    rk = 2.0 ** (-frak_c * a.b_min * k / 2.0) * r
    return AnisoRect(c, rk ** (2.0 / a.barr))


# ------------------------------------------------------------ certificates


@dataclass
class InclusionCertificate:
    holds_on_samples: bool
    samples: int
    violations: int
    witness: np.ndarray | None = None

    def to_json(self):
        return {
            "holds_on_samples": self.holds_on_samples,
            "samples": self.samples,
            "violations": self.violations,
            "witness": None if self.witness is None else self.witness.tolist(),
        }


def inclusion_check(A, B, samples=2**16, seed=DEFAULT_SEED):
    """Test ``A ⊂ B`` on quasi-random points of ``A``.

    Returns an :class:`InclusionCertificate`; when a sample of ``A`` falls
    outside ``B`` the first such point is returned as a witness.
    """
    chunk = 2**18
    violations = 0
    witness = None
    pts = A.sample(samples, seed=seed)
    for start in range(0, len(pts), chunk):
        block = pts[start : start + chunk]
        bad = ~B.contains(block)
        nbad = int(bad.sum())
        if nbad and witness is None:
            witness = block[np.argmax(bad)]
        violations += nbad
    return InclusionCertificate(violations == 0, len(pts), violations, witness)


@dataclass
class FrakC:
    """Smallest admissible geometric constant and its binding condition."""

    value: int
    binding: list
    per_condition: dict

    def to_json(self):
        return {
            "value": self.value,
            "binding": self.binding,
            "per_condition": self.per_condition,
        }


def _frak_c_conditions(a):
    n = a.n
    return {
        # Theta_{r sqrt n} inside E_{r C, 1}; homogeneous in r so r = 1
        "theta_in_E": lambda C: (
            Ellipsoid("Theta", a, math.sqrt(n)),
            Ellipsoid("E", a, float(C)),
        ),
        # E_{2^-C r, 1} inside E_{r, 1/4}
        "dyadic_quarter": lambda C: (
            Ellipsoid("E", a, 2.0**-C),
            Ellipsoid("E", a, 1.0, 0.25),
        ),
        # E_{l r, 1} inside E_{r, 1/2} with l = 2^{-C b_min/2}
        "shell_half": lambda C: (
            Ellipsoid("E", a, 2.0 ** (-C * a.b_min / 2.0)),
            Ellipsoid("E", a, 1.0, 0.5),
        ),
    }


def frak_C(a, samples=2**16, seed=DEFAULT_SEED, max_value=64):
    """Smallest natural number satisfying every inclusion that uses it.

    Each condition is tested for ``C = 1, 2, ...`` with
    :func:`inclusion_check`; the result is the largest of the per-condition
    minima and ``binding`` lists the conditions attaining it.
    """
    minima = {}
    for name, make in _frak_c_conditions(a).items():
        for C in range(1, max_value + 1):
            A, B = make(C)
            if inclusion_check(A, B, samples, seed).holds_on_samples:
                minima[name] = C
                break
        else:
            raise RangeError(f"no constant up to {max_value} satisfies {name}")
    value = max(minima.values())
    binding = sorted(k for k, v in minima.items() if v == value)
    return FrakC(value, binding, minima)


def shell_decomposition(a, r0, K):
    """Shells ``E_{r_k,1} minus E_{r_{k+1},1}`` with ``r_k = r0 2^-k``.

    Returns a list of ``(outer, inner, measure)`` tuples.
    """
    if not r0 > 0 or K < 1:
        raise RangeError("need r0 > 0 and K >= 1")
    out = []
    for k in range(K):
        outer = Ellipsoid("E", a, r0 * 2.0**-k)
        inner = Ellipsoid("E", a, r0 * 2.0 ** -(k + 1))
        out.append((outer, inner, outer.volume() - inner.volume()))
    return out


def topology_radii(a, r):
    """Radii ``(r1, r2)`` with ``B_r1 ⊆ Theta_r ⊆ B_r2``."""
    b = a.barr
    r2 = float(np.sqrt(np.sum(r ** (4.0 / b))))
    # |y| < t forces |y_i| < t, so sum t^b_i <= r^2 is enough
    g = lambda t: float(np.sum(t**b)) - r * r
    hi = 1.0
    while g(hi) < 0:
        hi *= 2.0
    r1 = brentq(g, 0.0, hi, xtol=1e-15, rtol=1e-14) * (1.0 - 1e-12)
    return r1, r2


def ball_theta_radii(a, rho):
    """Radii ``(t1, t2)`` with ``Theta_t1 ⊆ B_rho ⊆ Theta_t2``."""
    b = a.barr
    # Theta_t inside B_rho iff sum t^{4/b_i} <= rho^2
    g = lambda t: float(np.sum(t ** (4.0 / b))) - rho * rho
    hi = 1.0
    while g(hi) < 0:
        hi *= 2.0
    t1 = brentq(g, 0.0, hi, xtol=1e-15, rtol=1e-14) * (1.0 - 1e-12)
    t2 = float(np.sqrt(np.sum(rho**b))) * (1.0 + 1e-12)
    return t1, t2


def fundamental_relations(a, r=0.7, l=0.6, x=None, frak_c=None):
    """Pairs ``(name, A, B)`` encoding the six basic relations as inclusions.

    ``r`` and ``l`` must lie in ``(0, 1)``; ``l_big = 1/l`` is used where a
    parameter at least one is required.
    """
    n = a.n
    x = np.zeros(n) if x is None else np.asarray(x, dtype=float)
    C = frak_C(a).value if frak_c is None else frak_c
    E = lambda rr, ll=1.0: Ellipsoid("E", a, rr, ll, x)
    Em = lambda rr, ll=1.0: Ellipsoid("Emax", a, rr, ll, x)
    theta = Ellipsoid("Theta", a, r * math.sqrt(n), 1.0, x)
    cmax = n ** (a.b_max / 4.0)
    k = 1
    rel = [
        ("1a: E_{r,1} in Theta_{r sqrt n}", E(r), theta),
        ("1a: Theta_{r sqrt n} in E_{rC,1}", theta, E(r * C)),
        ("1b: E_{2^-C r,1} in E_{r,1/4}", E(2.0**-C * r), E(r, 0.25)),
        (
            "2: R in R~",
            rect_R_box(a, r, k, C, x),
            rect_R_tilde(a, r, k, C, x),
        ),
        ("2: R_{r,l} in E_{rl cmax,1}", rect_R(a, r, l, x), E(r * l * cmax)),
        ("3: Emax_{r/2,1} in Emax_{r,1/2}", Em(r / 2.0), Em(r, 0.5)),
        ("3: Emax_{r,L} in Emax_{rL,1}", Em(r, 1.0 / l), Em(r / l)),
    ]
    r1, r2 = topology_radii(a, r)
    t1, t2 = ball_theta_radii(a, r)
    th = Ellipsoid("Theta", a, r, 1.0, x)
    rel += [
        ("4: B_r' in Theta_r", Ball(n, r1, x), th),
        ("4: Theta_r in B_r''", th, Ball(n, r2, x)),
        ("4: Theta_t' in B_r", Ellipsoid("Theta", a, t1, 1.0, x), Ball(n, r, x)),
        ("4: B_r in Theta_t''", Ball(n, r, x), Ellipsoid("Theta", a, t2, 1.0, x)),
    ]
    # the scaling identities are stated for sets centred at the origin
    T = ScalingMap("T_beta", r, a)
    Tm = ScalingMap("T_max", r, a)
    ball = Ball(n, l)
    E0 = Ellipsoid("E", a, r, l)
    Em0 = Ellipsoid("Emax", a, r, l)
    rel += [
        ("5: T_beta(B_l) in E_{r,l}", MappedRegion(ball, T), E0),
        ("5: E_{r,l} in T_beta(B_l)", E0, MappedRegion(ball, T)),
        ("5: T_max(B_l) in Emax_{r,l}", MappedRegion(ball, Tm), Em0),
        ("5: Emax_{r,l} in T_max(B_l)", Em0, MappedRegion(ball, Tm)),
    ]
    return rel


RELATION_GROUPS = ("1a", "1b", "2", "3", "4", "5")
