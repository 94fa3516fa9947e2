"""Fusion of per-patch probability cubes into one full-volume map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .patching import inverse_augment
from .volume import ProbabilityMap

MODES = ("tiling", "uniform", "spline")


@dataclass(frozen=True)
class FusionSpec:
    mode: str = "spline"
    patch_size: int = 32
    stride: int = 16

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown fusion mode {self.mode!r}; expected one of {MODES}")
        if self.patch_size <= 0 or self.stride <= 0:
            raise ValueError("patch size and stride must be positive")
        if self.mode == "tiling" and self.stride != self.patch_size:
            raise ValueError("tiling fusion requires stride == patch size")

    @classmethod
    def for_grid(cls, grid, mode):
        return cls(mode, grid.patch_size, grid.stride)


@dataclass(frozen=True)
class WeightKernel:
    profile: np.ndarray  # 1D weights along one axis
    weights: np.ndarray  # separable S^3 product

    @property
    def size(self):
        return self.profile.size


def spline_profile(S):
    """Quadratic bump 1 - (2u/S)^2 sampled at voxel-centre offsets u."""
    if S < 2 or S % 2:
        raise ValueError(f"spline kernel needs an even size >= 2, got {S}")
    u = np.arange(S) - S / 2 + 0.5
    return 1.0 - (2.0 * u / S) ** 2


def spline_kernel(S):
    w = spline_profile(S)
    return WeightKernel(w, w[:, None, None] * w[None, :, None] * w[None, None, :])


def _weights(spec):
    S = spec.patch_size
    if spec.mode == "spline":
        return spline_kernel(S).weights
    return np.ones((S, S, S))


def fuse(patches, dims, spec):
    """Weighted soft vote of ``(center, augmentation_id, cube)`` predictions.

    Cubes are given in their augmented frame; the inverse transform is applied
    here before accumulation.  Voxels outside ``dims`` (padding) are dropped.
    """
    dims = tuple(int(d) for d in dims)
    S = spec.patch_size
    h = S // 2
    weight = _weights(spec)
    patches = list(patches)
    if not patches:
        raise ValueError("no patch predictions to fuse")
    corners = np.array([[int(c) - h for c in center] for center, _, _ in patches])
    lo = np.minimum(corners.min(axis=0), 0)
    hi = np.maximum(corners.max(axis=0) + S, dims)
    num = np.zeros(tuple(hi - lo))
    den = np.zeros(tuple(hi - lo))
    for (center, aug, cube), corner in zip(patches, corners):
        cube = np.asarray(cube, dtype=np.float64)
        if cube.shape != (S, S, S):
            raise ValueError(f"prediction cube has shape {cube.shape}, expected {(S, S, S)}")
        cube = np.ascontiguousarray(inverse_augment(cube, aug))
        _kernels.accumulate_votes(num, den, cube, weight, tuple(corner - lo))
    sl = tuple(slice(-a, -a + d) for a, d in zip(lo, dims))
    num, den = num[sl], den[sl]
    if np.any(den <= 0.0):
        raise AssertionError("voxel received no positive-weight vote; grid does not cover the volume")
    return ProbabilityMap(np.clip(num / den, 0.0, 1.0))


def vote_counts(grid, n_augmentations=4):
    """How many patch predictions reach each voxel of ``grid.volume_dims``."""
    S = grid.patch_size
    counts = []
    for centers, n in zip(grid.axis_centers, grid.volume_dims):
        v = np.arange(n)
        lo = centers[:, None] - S // 2
        counts.append(((v >= lo) & (v < lo + S)).sum(axis=0))
    cx, cy, cz = counts
    return n_augmentations * cx[:, None, None] * cy[None, :, None] * cz[None, None, :]
