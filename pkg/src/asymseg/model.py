"""A 3x3x3 convolutional logistic segmenter trained with Adam on patches.

The model is deliberately tiny (27 weights per channel plus a bias) so that
every gradient can be checked against finite differences and a full training
run takes seconds on one core.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from . import _kernels
from .fusion import FusionSpec, fuse
from .losses import LossSpec, loss_with_grad
from .patching import build_grid, extract_patch, select_training_patches
from .volume import ProbabilityMap, as_array


@dataclass(frozen=True, eq=False)
class StencilModel:
    kernel: np.ndarray  # (C, 3, 3, 3)
    bias: float = 0.0

    def __post_init__(self):
        k = np.array(self.kernel, dtype=np.float64)
        if k.ndim != 4 or k.shape[1:] != (3, 3, 3):
            raise ValueError(f"kernel must be (C, 3, 3, 3), got {k.shape}")
        if not np.all(np.isfinite(k)) or not np.isfinite(self.bias):
            raise ValueError("model parameters must be finite")
        k.setflags(write=False)
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def channels(self):
        return self.kernel.shape[0]

    @classmethod
    def zeros(cls, channels):
        return cls(np.zeros((channels, 3, 3, 3)), 0.0)

    @classmethod
    def from_params(cls, theta, channels):
        theta = np.asarray(theta, dtype=np.float64)
        return cls(theta[:-1].reshape(channels, 3, 3, 3), theta[-1])

    def params(self):
        """Flat parameter vector: kernel entries then bias."""
        return np.concatenate([self.kernel.ravel(), [self.bias]])

    def __eq__(self, other):
        if not isinstance(other, StencilModel):
            return NotImplemented
        return self.params().tobytes() == other.params().tobytes()


@dataclass(frozen=True)
class TrainConfig:
    loss: LossSpec = field(default_factory=LossSpec)
    learning_rate: float = 5e-4
    lr_decay: float = 0.95
    lr_interval: int = 500
    lr_growth_every: int = 16_000
    lr_growth: int = 2
    steps: int = 500
    patch_size: int = 32
    overlap: float = 0.5
    quota: int = 4
    min_lesion_voxels: int = 10
    rng_seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    init_scale: float = 0.05

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr decay must lie in (0, 1]")
        if self.lr_interval < 1 or self.steps < 0 or self.quota < 1:
            raise ValueError("lr interval, steps and quota must be positive")


class LogRow(NamedTuple):
    step: int
    lr: float
    loss: float


def learning_rate(step, cfg):
    """Step-decayed rate; the decay interval doubles every ``lr_growth_every`` steps."""
    decays = 0
    start, interval = 0, cfg.lr_interval
    while True:
        end = start + cfg.lr_growth_every
        if step < end:
            decays += (step - start) // interval
            break
        decays += cfg.lr_growth_every // interval
        start, interval = end, interval * cfg.lr_growth
    return cfg.learning_rate * cfg.lr_decay ** decays


def _image(v):
    arr = as_array(v, np.float64)
    return arr[None] if arr.ndim == 3 else arr


def forward(m, v):
    vol = _image(v)
    if vol.shape[0] != m.channels:
        raise ValueError(f"model expects {m.channels} channels, volume has {vol.shape[0]}")
    logits = _kernels.stencil_forward(np.ascontiguousarray(vol), m.kernel, m.bias)
    return ProbabilityMap(expit(logits))


def backward(m, v, g, loss):
    """Loss value and its gradients with respect to kernel and bias."""
    vol = np.ascontiguousarray(_image(v))
    p = forward(m, vol).data
    res = loss_with_grad(loss, p, g)
    dz = res.gradient * p * (1.0 - p)
    return res.value, _kernels.stencil_grad(vol, np.ascontiguousarray(dz)), float(dz.sum())


def _selected_patches(v_set, cfg, rng):
    per_image = []
    for v, g in v_set:
        grid = build_grid(as_array(g).shape, cfg.patch_size, cfg.overlap)
        seed = int(rng.integers(2**63))
        centers = select_training_patches(g, grid, cfg.min_lesion_voxels, cfg.quota, seed)
        per_image.append((v, g, grid, centers))
    return per_image


def train(v_set, cfg, log=None):
    """Fit a model with Adam, one patch per step, cycling images round-robin.

    If ``log`` is a list, one :class:`LogRow` per step is appended to it.
    """
    v_set = list(v_set)
    if not v_set:
        raise ValueError("empty training set")
    channels = _image(v_set[0][0]).shape[0]
    rng = np.random.default_rng(cfg.rng_seed)
    theta = np.concatenate([rng.uniform(-cfg.init_scale, cfg.init_scale, size=channels * 27), [0.0]])
    pool = _selected_patches(v_set, cfg, rng)
    mom = np.zeros_like(theta)
    vel = np.zeros_like(theta)
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    for step in range(cfg.steps):
        v, g, grid, centers = pool[step % len(pool)]
        center = centers[(step // len(pool)) % len(centers)]
        aug = int(rng.integers(4))
        x = extract_patch(v, center, grid, aug).data
        y = extract_patch(g, center, grid, aug).data
        model = StencilModel.from_params(theta, channels)
        value, dk, db = backward(model, x, y, cfg.loss)
        grad = np.concatenate([dk.ravel(), [db]])
        lr = learning_rate(step, cfg)
        mom = b1 * mom + (1 - b1) * grad
        vel = b2 * vel + (1 - b2) * grad * grad
        mhat = mom / (1 - b1 ** (step + 1))
        vhat = vel / (1 - b2 ** (step + 1))
        theta = theta - lr * mhat / (np.sqrt(vhat) + cfg.adam_eps)
        if log is not None:
            log.append(LogRow(step, lr, float(value)))
    return StencilModel.from_params(theta, channels)


def predict(m, v, grid, fusion, n_augmentations=None):
    """Patch-wise forward passes fused into a full-volume probability map.

    Tiling defaults to the identity augmentation only; the other modes use all
    four transforms.
    """
    vol = _image(v)
    if tuple(vol.shape[1:]) != tuple(grid.volume_dims):
        raise ValueError(f"grid built for {grid.volume_dims}, volume is {vol.shape[1:]}")
    if n_augmentations is None:
        n_augmentations = 1 if fusion.mode == "tiling" else 4
    preds = []
    for center in grid.centers():
        for aug in range(n_augmentations):
            patch = extract_patch(vol, center, grid, aug)
            preds.append((center, aug, forward(m, patch.data).data))
    return fuse(preds, grid.volume_dims, fusion)


def predict_volume(m, v, patch_size, overlap, mode):
    """Convenience wrapper building the grid and fusion spec for ``mode``."""
    dims = _image(v).shape[1:]
    layout = "tiles" if mode == "tiling" else "lattice"
    grid = build_grid(dims, patch_size, 0.0 if mode == "tiling" else overlap, layout)
    return predict(m, v, grid, FusionSpec.for_grid(grid, mode))


# ---------------------------------------------------------------------------
# checkpoints and logs
# ---------------------------------------------------------------------------

def save_checkpoint(m, path):
    header = {"channels": m.channels, "stencil": 3, "bias": m.bias}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(m.kernel.astype("<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        raw = fh.read()
    if header.get("stencil") != 3:
        raise ValueError(f"{path}: unsupported stencil {header.get('stencil')!r}")
    c = int(header["channels"])
    if len(raw) != 27 * c * 8:
        raise ValueError(f"{path}: expected {27 * c} kernel weights, found {len(raw) // 8}")
    kernel = np.frombuffer(raw, dtype="<f8").reshape(c, 3, 3, 3)
    return StencilModel(kernel, float(header["bias"]))


def write_log(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("step", "lr", "loss"))
        for r in rows:
            w.writerow((r.step, repr(r.lr), repr(r.loss)))

