"""Similarity and focal losses on a single lesion-probability map.

All functions take the lesion probability ``p`` and binary ground truth ``g``
as arrays of identical shape (containers from :mod:`asymseg.volume` are
accepted too) and return gradients with respect to ``p``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import as_array

FOCAL_EPS = 1e-7

KINDS = ("f_beta", "gdl", "focal")


@dataclass(frozen=True)
class LossSpec:
    kind: str = "f_beta"
    beta: float = 1.0
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {KINDS}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")

    @property
    def fn_weight(self):
        """Weight on false negatives once the index is normalised by (1 + beta^2)."""
        b2 = self.beta ** 2
        return b2 / (1.0 + b2)

    @property
    def fp_weight(self):
        return 1.0 / (1.0 + self.beta ** 2)


@dataclass(frozen=True)
class LossResult:
    value: float
    gradient: np.ndarray


def _pair(p, g):
    p = as_array(p, np.float64)
    g = as_array(g, np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: prediction {p.shape} vs ground truth {g.shape}")
    return p, g


def _soft_counts(p, g):
    tp = np.sum(p * g)
    fn = np.sum((1.0 - p) * g)
    fp = np.sum(p * (1.0 - g))
    return tp, fn, fp


def _fbeta_parts(p, g, beta):
    b2 = beta * beta
    tp, fn, fp = _soft_counts(p, g)
    num = (1.0 + b2) * tp
    den = num + b2 * fn + fp
    if den <= 0.0:
        raise ValueError("F-beta undefined: both prediction and ground truth are empty")
    return num, den


def f_beta_score(p, g, beta):
    """Soft F-beta index; ``beta=1`` is the soft Dice coefficient."""
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    p, g = _pair(p, g)
    num, den = _fbeta_parts(p, g, beta)
    return num / den


def dice_score(p, g):
    """Soft Dice, 2 sum(pg) / (sum(p) + sum(g))."""
    p, g = _pair(p, g)
    den = p.sum() + g.sum()
    if den <= 0.0:
        raise ValueError("Dice undefined: both prediction and ground truth are empty")
    return 2.0 * np.sum(p * g) / den


def f_beta_loss_with_grad(p, g, beta):
    """Loss ``1 - F_beta`` and its exact gradient.

    The denominator has unit derivative in every p_j, so the quotient rule
    gives dF/dp_j = ((1+b^2) g_j D - N) / D^2: (1+b^2)(b^2 |G| + FP)/D^2 on
    lesion voxels and -N/D^2 on background voxels.
    """
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    p, g = _pair(p, g)
    num, den = _fbeta_parts(p, g, beta)
    dscore = ((1.0 + beta * beta) * g * den - num) / (den * den)
    return LossResult(1.0 - num / den, -dscore)


def gdl_loss_with_grad(p, g):
    """Two-class generalised Dice loss with 1/volume^2 class weights."""
    p, g = _pair(p, g)
    n_les = g.sum()
    n_bg = g.size - n_les
    if n_les == 0 or n_bg == 0:
        raise ValueError("generalised Dice needs both lesion and background voxels in g")
    w1 = 1.0 / n_les ** 2
    w0 = 1.0 / n_bg ** 2
    q, h = 1.0 - p, 1.0 - g
    num = w1 * np.sum(p * g) + w0 * np.sum(q * h)
    den = w1 * np.sum(p + g) + w0 * np.sum(q + h)
    dnum = w1 * g - w0 * h
    dden = w1 - w0
    grad = -2.0 * (dnum * den - num * dden) / (den * den)
    return LossResult(1.0 - 2.0 * num / den, grad)


def focal_loss_with_grad(p, g, alpha=0.25, gamma=2.0):
    """Mean binary focal loss; ``p`` is clamped to [eps, 1-eps] first."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if gamma < 0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    p, g = _pair(p, g)
    pc = np.clip(p, FOCAL_EPS, 1.0 - FOCAL_EPS)
    pos = g > 0.5
    pt = np.where(pos, pc, 1.0 - pc)
    at = np.where(pos, alpha, 1.0 - alpha)
    log_pt = np.log(pt)
    mod = (1.0 - pt) ** gamma
    n = p.size
    value = float(np.sum(-at * mod * log_pt) / n)
    if gamma == 0:
        dmod = np.zeros_like(pt)
    else:
        dmod = gamma * (1.0 - pt) ** (gamma - 1.0)
    dpt = at * (dmod * log_pt - mod / pt)
    grad = np.where(pos, dpt, -dpt) / n
    # clamped voxels sit on a flat piece of the loss
    grad[(p < FOCAL_EPS) | (p > 1.0 - FOCAL_EPS)] = 0.0
    return LossResult(value, grad)


def loss_with_grad(spec, p, g):
    """Dispatch on ``spec.kind``."""
    if spec.kind == "f_beta":
        return f_beta_loss_with_grad(p, g, spec.beta)
    if spec.kind == "gdl":
        return gdl_loss_with_grad(p, g)
    return focal_loss_with_grad(p, g, spec.alpha, spec.gamma)


def loss_value(spec, p, g):
    return loss_with_grad(spec, p, g).value
