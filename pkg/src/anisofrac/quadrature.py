"""Shell quadrature in anisotropic polar coordinates.

Points are written ``y = T_{beta,rho} theta`` with ``theta`` on the
Euclidean unit sphere, so the shells ``rho in [r_k, r_{k+1}]`` are the
ellipsoidal annuli ``E_{r_{k+1},1} minus E_{r_k,1}``.  The volume element is

    dy = rho^(c-1) J(theta) drho dsigma(theta),   J = sum_i (2/b_i) theta_i^2,

and the reference kernel becomes ``rho^(-c-s) N(theta)^(-c-s)`` with
``N = ||theta||``, so against ``K_0`` the radial weight is ``rho^(-1-s)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .aniso_geometry import aniso_norm

SPHERE_AREA = lambda n: 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


def sphere_rule(n, m, half=False, seed=0):
    """Nodes and weights on the unit sphere ``S^{n-1}``.

    ``m`` is the azimuthal resolution.  With ``half=True`` only one of each
    antipodal pair is kept (weights doubled), which is exact for even
    integrands.  Dimensions above three use scrambled Sobol points.
    """
    if n == 1:
        th = np.array([[1.0]]) if half else np.array([[1.0], [-1.0]])
        w = np.array([2.0]) if half else np.ones(2)
        return th, w
    if n == 2:
        k = m // 2 if half else m
        span = math.pi if half else 2.0 * math.pi
        phi = (np.arange(k) + 0.5) * span / k
        dup = 2.0 if half else 1.0
        return np.column_stack([np.cos(phi), np.sin(phi)]), np.full(k, dup * 2 * math.pi / m)
    if n == 3:
        nz = max(2, m // 2)
        z, wz = np.polynomial.legendre.leggauss(nz)
        k = m // 2 if half else m
        span = math.pi if half else 2.0 * math.pi
        phi = (np.arange(k) + 0.5) * span / k
        Z, P = np.meshgrid(z, phi, indexing="ij")
        WZ = np.broadcast_to(wz[:, None], Z.shape)
        rxy = np.sqrt(1.0 - Z**2)
        th = np.column_stack([(rxy * np.cos(P)).ravel(), (rxy * np.sin(P)).ravel(), Z.ravel()])
        dup = 2.0 if half else 1.0
        return th, (WZ * (dup * 2 * math.pi / m)).ravel()
    count = 2 ** int(math.ceil(math.log2(max(m, 2) ** (n - 1))))
    u = qmc.Sobol(d=n, scramble=True, seed=seed).random(count)
    g = ndtri(np.clip(u, 1e-12, 1 - 1e-12))
    th = g / np.linalg.norm(g, axis=1, keepdims=True)
    return th, np.full(count, SPHERE_AREA(n) / count)


@dataclass(frozen=True)
class QuadratureScheme:
    """Shell quadrature parameters.

    Shells are geometric in the ellipsoidal radius between ``r_in`` and
    ``r_out`` with ``shells_per_octave`` shells per factor two; each shell
    carries ``radial_nodes`` Gauss-Legendre nodes in ``log rho`` and every
    radius is paired with an ``angular_nodes``-point sphere rule.
    """

    r_in: float = 1e-3
    r_out: float | None = None
    shells_per_octave: int = 1
    radial_nodes: int = 6
    angular_nodes: int = 64
    seed: int = 0

    @property
    def shell_count(self):
        return self.shell_edges(1e8).size - 1

    def resolved_r_out(self, s, tail_rel=1e-8):
        """Outer radius, defaulting to ``rho`` with ``rho^-s/s < tail_rel``."""
        if self.r_out is not None:
            return self.r_out
        return max(4.0, (1.0 / (s * tail_rel)) ** (1.0 / s))

    def shell_edges(self, r_out):
        octaves = math.log2(r_out / self.r_in)
        K = max(1, int(math.ceil(octaves * self.shells_per_octave)))
        return self.r_in * (r_out / self.r_in) ** (np.arange(K + 1) / K)

    def refined(self, factor=2):
        """Scheme with every resolution parameter multiplied by ``factor``."""
        return QuadratureScheme(
            r_in=self.r_in / factor**2,
            r_out=self.r_out,
            shells_per_octave=self.shells_per_octave * factor,
            radial_nodes=self.radial_nodes,
            angular_nodes=self.angular_nodes * factor,
            seed=self.seed,
        )

    def to_json(self):
        return {
            "r_in": self.r_in,
            "r_out": self.r_out,
            "shells_per_octave": self.shells_per_octave,
            "radial_nodes": self.radial_nodes,
            "angular_nodes": self.angular_nodes,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj):
        unknown = set(obj) - set(cls().to_json())
        if unknown:
            raise ValueError(f"unknown quadrature keys: {sorted(unknown)}")
        return cls(**obj)


def radial_rule(edges, p, s):
    """Nodes ``rho`` and weights for ``int rho^(-1-s) g(rho) drho`` per shell.

    Returns arrays of shape ``(K, p)``.
    """
    x, w = np.polynomial.legendre.leggauss(p)
    t0 = np.log(edges[:-1])[:, None]
    t1 = np.log(edges[1:])[:, None]
    t = 0.5 * (t1 - t0) * x + 0.5 * (t1 + t0)
    wt = 0.5 * (t1 - t0) * w
    return np.exp(t), wt * np.exp(-s * t)


@dataclass
class AngularData:
    theta: np.ndarray
    weight: np.ndarray  # sigma-weight * J * N^(-c-s)
    J: np.ndarray
    N: np.ndarray


def angular_data(a, m, half=True, seed=0, power=None):
    """Sphere rule with the Jacobian and kernel angular factor folded in."""
    th, w = sphere_rule(a.n, m, half=half, seed=seed)
    J = th**2 @ (2.0 / a.barr)
    N = aniso_norm(a, th)
    p = a.c + a.s if power is None else power
    return AngularData(th, w * J * N ** (-p), J, N)


def polar_points(a, rho, theta):
    """``T_{beta,rho} theta`` for every pair, shape ``rho.shape + theta.shape``."""
    f = np.asarray(rho)[..., None, None] ** (2.0 / a.barr)
    return f * theta


def moment_integrals(a, ang):
    """``A_0 = int J N^(-c-s)`` and ``A_i = int theta_i^2 J N^(-c-s)``."""
    return float(ang.weight.sum()), ang.weight @ ang.theta**2
