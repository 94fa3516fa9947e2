"""Hot numeric loops, compiled with numba when available.

Every kernel exists twice: a ``*_numpy`` reference written with vectorised
numpy/scipy, and a ``*_numba`` version compiled with ``@njit``.  The public
names at the bottom of the module are bound to one of the two at import time.

Set ``ASYMSEG_NUMBA=0`` in the environment to force the numpy path (useful for
debugging and for the benchmark in ``benchmarks/bench_kernels.py``).
"""

import os

import numpy as np
from scipy import ndimage

try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("ASYMSEG_NUMBA", "1").lower() not in ("0", "false", "no", "off")
BACKEND = "numba" if USE_NUMBA else "numpy"

# backward half of the 26-neighbourhood in raster (x, y, z) order
_BACK_OFFSETS = np.array(
    [(dx, dy, dz)
     for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
     if (dx, dy, dz) < (0, 0, 0)],
    dtype=np.int64,
)


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------

def stencil_forward_numpy(vol, kernel, bias):
    """Logits of a 3x3x3 multi-channel correlation with zero padding."""
    nc, nx, ny, nz = vol.shape
    padded = np.zeros((nc, nx + 2, ny + 2, nz + 2))
    padded[:, 1:-1, 1:-1, 1:-1] = vol
    out = np.full((nx, ny, nz), float(bias))
    for c in range(nc):
        for a in range(3):
            for b in range(3):
                for d in range(3):
                    w = kernel[c, a, b, d]
                    if w != 0.0:
                        out += w * padded[c, a:a + nx, b:b + ny, d:d + nz]
    return out


def stencil_grad_numpy(vol, dz):
    """Gradient of sum(dz * logits) with respect to the 3x3x3 kernel."""
    nc, nx, ny, nz = vol.shape
    padded = np.zeros((nc, nx + 2, ny + 2, nz + 2))
    padded[:, 1:-1, 1:-1, 1:-1] = vol
    grad = np.zeros((nc, 3, 3, 3))
    for c in range(nc):
        for a in range(3):
            for b in range(3):
                for d in range(3):
                    grad[c, a, b, d] = np.sum(dz * padded[c, a:a + nx, b:b + ny, d:d + nz])
    return grad


def accumulate_votes_numpy(num, den, pred, weight, corner):
    """Add ``weight*pred`` and ``weight`` into the accumulators at ``corner``."""
    x, y, z = corner
    s0, s1, s2 = pred.shape
    num[x:x + s0, y:y + s1, z:z + s2] += weight * pred
    den[x:x + s0, y:y + s1, z:z + s2] += weight


def label_components_numpy(mask):
    """26-connected labels numbered by first encounter in raster order."""
    labels, count = ndimage.label(mask, structure=np.ones((3, 3, 3), dtype=bool))
    if count == 0:
        return labels.astype(np.int64), 0
    flat = labels.ravel()
    nz = flat[flat > 0]
    _, first = np.unique(nz, return_index=True)
    order = np.argsort(first)
    remap = np.zeros(count + 1, dtype=np.int64)
    remap[np.unique(nz)[order]] = np.arange(1, count + 1)
    return remap[labels], int(count)


def nearest_distances_numpy(src, dst, block=2048):
    """Euclidean distance from each row of ``src`` to its nearest row of ``dst``."""
    out = np.empty(len(src))
    for i in range(0, len(src), block):
        chunk = src[i:i + block]
        d2 = ((chunk[:, None, :] - dst[None, :, :]) ** 2).sum(axis=2)
        out[i:i + block] = np.sqrt(d2.min(axis=1))
    return out


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def stencil_forward_numba(vol, kernel, bias):
        nc, nx, ny, nz = vol.shape
        out = np.full((nx, ny, nz), bias)
        for x in range(nx):
            for y in range(ny):
                for z in range(nz):
                    acc = 0.0
                    for c in range(nc):
                        for a in range(3):
                            xi = x + a - 1
                            if xi < 0 or xi >= nx:
                                continue
                            for b in range(3):
                                yi = y + b - 1
                                if yi < 0 or yi >= ny:
                                    continue
                                for d in range(3):
                                    zi = z + d - 1
                                    if zi < 0 or zi >= nz:
                                        continue
                                    acc += kernel[c, a, b, d] * vol[c, xi, yi, zi]
                    out[x, y, z] += acc
        return out

    @njit(cache=True)
    def stencil_grad_numba(vol, dz):
        nc, nx, ny, nz = vol.shape
        grad = np.zeros((nc, 3, 3, 3))
        for x in range(nx):
            for y in range(ny):
                for z in range(nz):
                    g = dz[x, y, z]
                    if g == 0.0:
                        continue
                    for c in range(nc):
                        for a in range(3):
                            xi = x + a - 1
                            if xi < 0 or xi >= nx:
                                continue
                            for b in range(3):
                                yi = y + b - 1
                                if yi < 0 or yi >= ny:
                                    continue
                                for d in range(3):
                                    zi = z + d - 1
                                    if zi < 0 or zi >= nz:
                                        continue
                                    grad[c, a, b, d] += g * vol[c, xi, yi, zi]
        return grad

    @njit(cache=True)
    def _accumulate_votes_nb(num, den, pred, weight, x0, y0, z0):
        s0, s1, s2 = pred.shape
        for i in range(s0):
            for j in range(s1):
                for k in range(s2):
                    w = weight[i, j, k]
                    num[x0 + i, y0 + j, z0 + k] += w * pred[i, j, k]
                    den[x0 + i, y0 + j, z0 + k] += w

    def accumulate_votes_numba(num, den, pred, weight, corner):
        _accumulate_votes_nb(num, den, pred, weight, int(corner[0]), int(corner[1]), int(corner[2]))

    @njit(cache=True)
    def _find(parent, i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            nxt = parent[i]
            parent[i] = root
            i = nxt
        return root

    @njit(cache=True)
    def _label_nb(mask, offsets):
        nx, ny, nz = mask.shape
        n = nx * ny * nz
        parent = np.arange(n)
        for x in range(nx):
            for y in range(ny):
                for z in range(nz):
                    if not mask[x, y, z]:
                        continue
                    i = (x * ny + y) * nz + z
                    for o in range(offsets.shape[0]):
                        xi = x + offsets[o, 0]
                        yi = y + offsets[o, 1]
                        zi = z + offsets[o, 2]
                        if xi < 0 or yi < 0 or zi < 0 or xi >= nx or yi >= ny or zi >= nz:
                            continue
                        if not mask[xi, yi, zi]:
                            continue
                        ra = _find(parent, i)
                        rb = _find(parent, (xi * ny + yi) * nz + zi)
                        if ra != rb:
                            if ra < rb:
                                parent[rb] = ra
                            else:
                                parent[ra] = rb
        labels = np.zeros((nx, ny, nz), dtype=np.int64)
        new_id = np.zeros(n, dtype=np.int64)
        count = 0
        for x in range(nx):
            for y in range(ny):
                for z in range(nz):
                    if not mask[x, y, z]:
                        continue
                    r = _find(parent, (x * ny + y) * nz + z)
                    if new_id[r] == 0:
                        count += 1
                        new_id[r] = count
                    labels[x, y, z] = new_id[r]
        return labels, count

    def label_components_numba(mask):
        labels, count = _label_nb(np.ascontiguousarray(mask, dtype=np.bool_), _BACK_OFFSETS)
        return labels, int(count)

    @njit(cache=True)
    def nearest_distances_numba(src, dst):
        out = np.empty(src.shape[0])
        for i in range(src.shape[0]):
            best = np.inf
            for j in range(dst.shape[0]):
                d0 = src[i, 0] - dst[j, 0]
                d1 = src[i, 1] - dst[j, 1]
                d2 = src[i, 2] - dst[j, 2]
                d = d0 * d0 + d1 * d1 + d2 * d2
                if d < best:
                    best = d
            out[i] = np.sqrt(best)
        return out


def set_threads(n):
    """Cap numba's worker pool; a no-op on the numpy path."""
    if USE_NUMBA and n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


if USE_NUMBA:
    stencil_forward = stencil_forward_numba
    stencil_grad = stencil_grad_numba
    accumulate_votes = accumulate_votes_numba
    label_components = label_components_numba
    nearest_distances = nearest_distances_numba
else:
    stencil_forward = stencil_forward_numpy
    stencil_grad = stencil_grad_numpy
    accumulate_votes = accumulate_votes_numpy
    label_components = label_components_numpy
    nearest_distances = nearest_distances_numpy
