"""Grid functions on axis-aligned boxes and their binary/CSV formats.

Binary layout (all little-endian)::

    b"ANLG"            magic
    u16 version        currently 1
    u16 n              number of axes
    u64 dims[n]        nodes per axis
    f64 origin[n]      coordinates of node (0, ..., 0)
    f64 spacing[n]     node spacing per axis
    f64 exterior       constant exterior value (NaN when not constant)
    f64 values[...]    C-ordered node values
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass

import numpy as np

from ._backend import interp_multilinear

MAGIC = b"ANLG"
FORMAT_VERSION = 1


@dataclass
class GridFunction:
    """Node values ``values[i]`` at ``origin + i * h`` plus an exterior rule.

    ``exterior`` is a constant or a callable on arrays of shape ``(..., n)``
    giving values outside the closed box spanned by the nodes.
    """

    origin: np.ndarray
    h: np.ndarray
    values: np.ndarray
    exterior: object = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n = self.values.ndim
        self.origin = np.broadcast_to(np.asarray(self.origin, dtype=float), (n,)).copy()
        self.h = np.broadcast_to(np.asarray(self.h, dtype=float), (n,)).copy()
        if np.any(self.h <= 0):
            raise ValueError("spacing must be positive")

    @property
    def n(self):
        return self.values.ndim

    @property
    def shape(self):
        return self.values.shape

    @property
    def upper(self):
        return self.origin + self.h * (np.array(self.shape) - 1)

    def axes(self):
        return [self.origin[i] + self.h[i] * np.arange(self.shape[i]) for i in range(self.n)]

    def coords(self):
        """Node coordinates, shape ``values.shape + (n,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def exterior_values(self, pts):
        pts = np.asarray(pts, dtype=float)
        if callable(self.exterior):
            return np.asarray(self.exterior(pts), dtype=float)
        return np.full(pts.shape[:-1], float(self.exterior))

    def inside(self, pts):
        pts = np.asarray(pts, dtype=float)
        tol = 1e-12 * self.h
        return np.all((pts >= self.origin - tol) & (pts <= self.upper + tol), axis=-1)

    def __call__(self, pts):
        """Multilinear interpolation inside the box, exterior rule outside."""
        pts = np.asarray(pts, dtype=float)
        shp = pts.shape[:-1]
        flat = pts.reshape(-1, self.n)
        out = np.empty(len(flat))
        ins = self.inside(flat)
        if np.any(ins):
            idx = np.ascontiguousarray((flat[ins] - self.origin) / self.h)
            out[ins] = interp_multilinear(np.ascontiguousarray(self.values.ravel()),
                                          np.array(self.shape, dtype=np.intp), idx)
        if np.any(~ins):
            out[~ins] = self.exterior_values(flat[~ins])
        return out.reshape(shp)

    def scaled(self, t, shift=0.0):
        ext = self.exterior
        if callable(ext):
            ext = lambda z, e=ext: t * e(z) + shift
        else:
            ext = t * float(ext) + shift
        return GridFunction(self.origin, self.h, t * self.values + shift, ext)

    # ------------------------------------------------------------- formats

    def write(self, path):
        ext = math.nan if callable(self.exterior) else float(self.exterior)
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<HH", FORMAT_VERSION, self.n))
            fh.write(np.asarray(self.shape, dtype="<u8").tobytes())
            fh.write(self.origin.astype("<f8").tobytes())
            fh.write(self.h.astype("<f8").tobytes())
            fh.write(struct.pack("<d", ext))
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def read(cls, path):
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:4] != MAGIC:
            raise ValueError("not an ANLG grid file")
        version, n = struct.unpack_from("<HH", data, 4)
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported ANLG version {version}")
        off = 8
        dims = np.frombuffer(data, dtype="<u8", count=n, offset=off).astype(int)
        off += 8 * n
        origin = np.frombuffer(data, dtype="<f8", count=n, offset=off).copy()
        off += 8 * n
        h = np.frombuffer(data, dtype="<f8", count=n, offset=off).copy()
        off += 8 * n
        (ext,) = struct.unpack_from("<d", data, off)
        off += 8
        count = int(np.prod(dims))
        vals = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(dims).copy()
        if off + 8 * count != len(data):
            raise ValueError("ANLG payload size mismatch")
        return cls(origin, h, vals, 0.0 if math.isnan(ext) else ext)

    def write_slice_csv(self, path, axis=0, fixed=None):
        """Write the line along ``axis`` through node index ``fixed`` (centre by default)."""
        idx = [s // 2 for s in self.shape] if fixed is None else list(fixed)
        sl = tuple(slice(None) if d == axis else idx[d] for d in range(self.n))
        line = self.values[sl]
        coord = self.axes()[axis]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{axis + 1}", "value"])
            for c, v in zip(coord, line):
                w.writerow([repr(float(c)), repr(float(v))])


def write_mask(path, mask, origin, h):
    """Dense bitmap with the ANLG header (values are 0/1 bytes, version 1)."""
    mask = np.asarray(mask, dtype=bool)
    n = mask.ndim
    with open(path, "wb") as fh:
        fh.write(b"ANLM")
        fh.write(struct.pack("<HH", FORMAT_VERSION, n))
        fh.write(np.asarray(mask.shape, dtype="<u8").tobytes())
        fh.write(np.broadcast_to(np.asarray(origin, float), (n,)).astype("<f8").tobytes())
        fh.write(np.broadcast_to(np.asarray(h, float), (n,)).astype("<f8").tobytes())
        fh.write(mask.astype(np.uint8).tobytes())


def read_mask(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != b"ANLM":
        raise ValueError("not an ANLG mask file")
    version, n = struct.unpack_from("<HH", data, 4)
    off = 8
    dims = np.frombuffer(data, dtype="<u8", count=n, offset=off).astype(int)
    off += 8 * n
    origin = np.frombuffer(data, dtype="<f8", count=n, offset=off).copy()
    off += 8 * n
    h = np.frombuffer(data, dtype="<f8", count=n, offset=off).copy()
    off += 8 * n
    mask = np.frombuffer(data, dtype=np.uint8, count=int(np.prod(dims)), offset=off)
    return mask.reshape(dims).astype(bool), origin, h


def box_grid(half_width, N, n):
    """Closed grid of ``[-L, L]^n`` with ``N`` intervals per axis."""
    L = np.broadcast_to(np.asarray(half_width, dtype=float), (n,))
    N = np.broadcast_to(np.asarray(N, dtype=int), (n,))
    h = 2.0 * L / N
    return -L, h, tuple(int(k) + 1 for k in N)
