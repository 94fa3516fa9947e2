"""Synthetic multi-channel volumes with ellipsoidal lesions.

Randomness comes exclusively from ``numpy.random.Generator(PCG64(seed))``
(``numpy.random.default_rng``), so a spec and seed fully determine the output
bytes for a given numpy release.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .volume import Mask, Volume

# lesion voxels per 128x224x256 image (min / mean / max of the reference cohort)
_REFERENCE_VOXELS = 128 * 224 * 256
PRESET_LOADS = {"low": 647, "medium": 15_500, "high": 51_870}

PRESETS = {
    "low": dict(lesion_fraction=PRESET_LOADS["low"] / _REFERENCE_VOXELS,
                lesion_count=(1, 4), lesion_radius=(1.0, 2.0)),
    "medium": dict(lesion_fraction=PRESET_LOADS["medium"] / _REFERENCE_VOXELS,
                   lesion_count=(2, 10), lesion_radius=(1.5, 4.0)),
    "high": dict(lesion_fraction=PRESET_LOADS["high"] / _REFERENCE_VOXELS,
                 lesion_count=(4, 30), lesion_radius=(2.0, 6.0)),
}

MAX_ATTEMPTS = 200


class SynthesisError(ValueError):
    """Lesion layout could not satisfy the requested load."""


@dataclass(frozen=True)
class SynthSpec:
    dims: tuple = (48, 48, 48)
    channels: int = 2
    lesion_count: tuple = (2, 10)
    lesion_radius: tuple = (1.5, 4.0)
    lesion_fraction: float = PRESET_LOADS["medium"] / _REFERENCE_VOXELS
    intensity_shift: tuple = (1.0, 0.6)
    noise_sigma: float = 0.8
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "lesion_count", tuple(int(n) for n in self.lesion_count))
        object.__setattr__(self, "lesion_radius", tuple(float(r) for r in self.lesion_radius))
        shift = self.intensity_shift
        if np.isscalar(shift):
            shift = (shift,) * self.channels
        object.__setattr__(self, "intensity_shift", tuple(float(s) for s in shift))
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError(f"dims must be three positive ints, got {self.dims}")
        if self.channels < 1 or len(self.intensity_shift) != self.channels:
            raise ValueError("need one intensity shift per channel")
        lo, hi = self.lesion_count
        if not 1 <= lo <= hi:
            raise ValueError(f"bad lesion count range {self.lesion_count}")
        rlo, rhi = self.lesion_radius
        if not 0 < rlo <= rhi:
            raise ValueError(f"bad lesion radius range {self.lesion_radius}")
        if not 0 < self.lesion_fraction < 1:
            raise ValueError(f"lesion fraction must lie in (0, 1), got {self.lesion_fraction}")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")

    @property
    def target_voxels(self):
        return self.lesion_fraction * int(np.prod(self.dims))


def preset(name, **overrides):
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}")
    return replace(SynthSpec(**PRESETS[name]), **overrides)


def _background(rng, dims, n_waves=4):
    """Zero-centred smooth field: a sum of low-frequency cosines."""
    axes = [np.arange(d) / d for d in dims]
    field_ = np.zeros(dims)
    for _ in range(n_waves):
        k = rng.uniform(0.3, 1.5, size=3)
        phase = rng.uniform(0, 2 * np.pi, size=3)
        amp = rng.uniform(0.03, 0.08)
        field_ = field_ + amp * (np.cos(2 * np.pi * k[0] * axes[0] + phase[0])[:, None, None]
                                 * np.cos(2 * np.pi * k[1] * axes[1] + phase[1])[None, :, None]
                                 * np.cos(2 * np.pi * k[2] * axes[2] + phase[2])[None, None, :])
    return field_


def _ellipsoid(dims, center, radii):
    """Boolean mask of voxels whose integer coordinates fall inside the ellipsoid."""
    grids = np.ogrid[tuple(slice(0, d) for d in dims)]
    r2 = sum(((x - c) / r) ** 2 for x, c, r in zip(grids, center, radii))
    return r2 <= 1.0


def _layout(rng, spec):
    dims = spec.dims
    target = spec.target_voxels
    lo_n, hi_n = spec.lesion_count
    rlo, rhi = spec.lesion_radius
    mask = np.zeros(dims, dtype=bool)
    # a lesion may not touch another one, even diagonally
    forbidden = np.zeros(dims, dtype=bool)
    n = 0
    for _ in range(20 * hi_n):
        if n >= hi_n or (n >= lo_n and mask.sum() >= target):
            break
        radii = rng.uniform(rlo, rhi, size=3)
        margin = np.ceil(radii).astype(int)
        if np.any(2 * margin + 1 > np.asarray(dims)):
            continue
        center = [rng.integers(m, d - m) for m, d in zip(margin, dims)]
        blob = _ellipsoid(dims, center, radii)
        if not blob.any() or (blob & forbidden).any():
            continue
        if mask.sum() + blob.sum() > 1.5 * target:
            continue
        mask |= blob
        grown = np.pad(blob, 1)
        dil = np.zeros_like(grown)
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    dil |= np.roll(grown, (dx, dy, dz), axis=(0, 1, 2))
        forbidden |= dil[1:-1, 1:-1, 1:-1]
        n += 1
    return mask, n


def generate(spec):
    """Return ``(Volume, Mask)``; lesion load within +-50% of the target."""
    rng = np.random.default_rng(spec.rng_seed)
    target = spec.target_voxels
    for _ in range(MAX_ATTEMPTS):
        mask, n = _layout(rng, spec)
        k = int(mask.sum())
        if spec.lesion_count[0] <= n and 0.5 * target <= k <= 1.5 * target:
            break
    else:
        raise SynthesisError(
            f"could not place {spec.lesion_count} lesions with radii {spec.lesion_radius} "
            f"totalling {target:.0f} +- 50% voxels in {spec.dims}")
    data = np.empty((spec.channels, *spec.dims))
    for c in range(spec.channels):
        img = _background(rng, spec.dims)
        img[mask] += spec.intensity_shift[c]
        if spec.noise_sigma > 0:
            img += rng.normal(0.0, spec.noise_sigma, size=spec.dims)
        data[c] = img
    return Volume(data.astype(np.float32)), Mask(mask)


def generate_dataset(spec, n_images):
    """``n_images`` volumes from consecutive seeds starting at ``spec.rng_seed``."""
    return [generate(replace(spec, rng_seed=spec.rng_seed + i)) for i in range(n_images)]
