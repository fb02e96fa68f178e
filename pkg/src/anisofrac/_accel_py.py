"""Pure numpy versions of the compiled grid kernels (same signatures)."""

import itertools

import numpy as np


def _corners(n):
    return np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.intp)


def scatter_multilinear(pts, w, out, shape):
    pts = np.asarray(pts, dtype=float)
    w = np.asarray(w, dtype=float)
    shape = np.asarray(shape, dtype=np.intp)
    n = pts.shape[1]
    base = np.floor(pts)
    frac = pts - base
    base = base.astype(np.intp)
    # a point sitting exactly on the last node is still representable
    on_edge = (base == shape - 1) & (frac == 0.0)
    ok = np.all(((base >= 0) & (base + 1 < shape)) | on_edge, axis=1)
    lost = float(w[~ok].sum())
    base, frac, w = base[ok], frac[ok], w[ok]
    strides = np.ones(n, dtype=np.intp)
    for d in range(n - 2, -1, -1):
        strides[d] = strides[d + 1] * shape[d + 1]
    for corner in _corners(n):
        acc = w * np.prod(np.where(corner, frac, 1.0 - frac), axis=1)
        idx = (base + corner) @ strides
        keep = acc != 0.0
        np.add.at(out, idx[keep], acc[keep])
    return lost


def interp_multilinear(values, shape, pts):
    values = np.asarray(values, dtype=float)
    shape = np.asarray(shape, dtype=np.intp)
    pts = np.asarray(pts, dtype=float)
    n = pts.shape[1]
    t = np.clip(pts, 0.0, shape - 1)
    base = np.floor(t).astype(np.intp)
    base = np.minimum(base, np.maximum(shape - 2, 0))
    frac = t - base
    strides = np.ones(n, dtype=np.intp)
    for d in range(n - 2, -1, -1):
        strides[d] = strides[d + 1] * shape[d + 1]
    res = np.zeros(len(pts))
    single = shape == 1
    for corner in _corners(n):
        if np.any(corner.astype(bool) & single):
            continue
        acc = np.prod(np.where(corner, frac, 1.0 - frac), axis=1)
        idx = (base + corner) @ strides
        res += acc * values[idx]
    return res
