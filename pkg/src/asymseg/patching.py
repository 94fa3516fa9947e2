"""Overlapping patch grids, patch extraction and 180 degree augmentations."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .volume import as_array

# id -> spatial axes (of x, y, z) that get reversed; a 180 degree turn about
# one axis reverses the other two
AUGMENTATIONS = ((), (1, 2), (0, 2), (0, 1))
AUGMENTATION_NAMES = ("identity", "rot180_x", "rot180_y", "rot180_z")


class SelectionError(ValueError):
    """Not enough patches satisfy the lesion-voxel rule."""


@dataclass(frozen=True)
class PatchGrid:
    """Patch centres on a per-axis lattice.

    ``layout="lattice"`` puts centres at 0, t, ..., L (both padded borders
    included); ``layout="tiles"`` is the non-overlapping tiling with centres at
    S/2 + k*S.
    """

    volume_dims: tuple
    patch_size: int
    stride: int
    padded_dims: tuple
    axis_centers: tuple
    layout: str = "lattice"
    augmentations: tuple = AUGMENTATION_NAMES

    @property
    def counts(self):
        return tuple(len(c) for c in self.axis_centers)

    @property
    def n_centers(self):
        return int(np.prod(self.counts))

    @property
    def n_patches(self):
        """Patch predictions over all augmentations."""
        return self.n_centers * len(self.augmentations)

    def centers(self):
        return [tuple(int(v) for v in c) for c in itertools.product(*self.axis_centers)]

    def on_lattice(self, center):
        return len(center) == 3 and all(int(c) in set(ax.tolist()) for c, ax in zip(center, self.axis_centers))

    def corner(self, center):
        """Lowest voxel index covered by the patch at ``center``."""
        h = self.patch_size // 2
        return tuple(int(c) - h for c in center)


def build_grid(dims, patch_size, overlap_fraction=0.5, layout="lattice"):
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise ValueError(f"dims must be three positive ints, got {dims}")
    S = int(patch_size)
    if S <= 0:
        raise ValueError(f"patch size must be positive, got {patch_size}")
    if not 0.0 <= overlap_fraction < 1.0:
        raise ValueError(f"overlap fraction must lie in [0, 1), got {overlap_fraction}")
    t = int(round(S * (1.0 - overlap_fraction)))
    if t <= 0:
        raise ValueError(f"stride rounds to zero for S={S}, overlap={overlap_fraction}")
    padded = tuple(-(-d // t) * t for d in dims)
    if any(S > 2 * L for L in padded):
        raise ValueError(f"patch size {S} exceeds twice a padded axis {padded}")
    if layout == "lattice":
        centers = tuple(np.arange(0, L + 1, t) for L in padded)
    elif layout == "tiles":
        if t != S:
            raise ValueError("tiling layout requires zero overlap (stride == patch size)")
        centers = tuple(np.arange(S // 2, L, S) for L in padded)
    else:
        raise ValueError(f"unknown layout {layout!r}")
    return PatchGrid(dims, S, t, padded, tuple(c.astype(np.int64) for c in centers), layout)


def augment(cube, augmentation_id):
    """Apply augmentation to the last three (spatial) axes; each is an involution."""
    axes = AUGMENTATIONS[augmentation_id]
    if not axes:
        return cube
    off = cube.ndim - 3
    return np.flip(cube, axis=tuple(a + off for a in axes))


inverse_augment = augment


@dataclass(frozen=True)
class Patch:
    center: tuple
    size: int
    augmentation_id: int
    data: np.ndarray

    @property
    def extent(self):
        h = self.size // 2
        return tuple((c - h, c - h + self.size) for c in self.center)


def crop(arr, corner, size):
    """Copy a ``size``-cube at ``corner`` from the last three axes, zero-filling outside."""
    lead = arr.shape[:-3]
    out = np.zeros(lead + (size,) * 3, dtype=arr.dtype)
    src, dst = [], []
    for lo, n in zip(corner, arr.shape[-3:]):
        a, b = max(lo, 0), min(lo + size, n)
        if a >= b:
            return out
        src.append(slice(a, b))
        dst.append(slice(a - lo, b - lo))
    out[(Ellipsis, *dst)] = arr[(Ellipsis, *src)]
    return out


def extract_patch(v, center, grid, augmentation_id=0):
    """Augmented patch cube (C, S, S, S) (or (S, S, S) for 3D input) at a lattice centre."""
    if not 0 <= augmentation_id < len(AUGMENTATIONS):
        raise ValueError(f"augmentation id must be 0..3, got {augmentation_id}")
    center = tuple(int(c) for c in center)
    if not grid.on_lattice(center):
        raise ValueError(f"center {center} is not on the patch lattice")
    arr = as_array(v)
    cube = crop(arr, grid.corner(center), grid.patch_size)
    return Patch(center, grid.patch_size, augmentation_id, np.ascontiguousarray(augment(cube, augmentation_id)))


def lesion_counts(g, grid):
    """Ground-truth lesion voxels inside each patch, in ``grid.centers()`` order."""
    g = as_array(g).astype(np.int64)
    S = grid.patch_size
    # summed-volume table over a zero-padded copy covering every patch
    h = S // 2
    pad = [(h + S, h + S)] * 3
    sat = np.pad(g, pad).cumsum(0).cumsum(1).cumsum(2)
    sat = np.pad(sat, [(1, 0)] * 3)
    out = []
    for c in grid.centers():
        lo = [ci - h + h + S for ci in c]
        hi = [x + S for x in lo]
        x0, y0, z0 = lo
        x1, y1, z1 = hi
        out.append(int(sat[x1, y1, z1] - sat[x0, y1, z1] - sat[x1, y0, z1] - sat[x1, y1, z0]
                       + sat[x0, y0, z1] + sat[x0, y1, z0] + sat[x1, y0, z0] - sat[x0, y0, z0]))
    return np.array(out, dtype=np.int64)


def select_training_patches(g, grid, min_lesion_voxels=10, per_image_quota=1, rng_seed=0):
    """Draw ``per_image_quota`` distinct centres whose patch holds enough lesion."""
    counts = lesion_counts(g, grid)
    centers = grid.centers()
    qualifying = [c for c, n in zip(centers, counts) if n >= min_lesion_voxels]
    if per_image_quota > len(qualifying):
        raise SelectionError(
            f"need {per_image_quota} patches with >= {min_lesion_voxels} lesion voxels, "
            f"found {len(qualifying)} (short by {per_image_quota - len(qualifying)})")
    rng = np.random.default_rng(rng_seed)
    idx = rng.choice(len(qualifying), size=per_image_quota, replace=False)
    return [qualifying[i] for i in idx]
