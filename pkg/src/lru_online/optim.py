"""Losses, Adam, global-norm clipping and the L2 anchor regularizer.

Gradients and parameters are "trees": lists (one entry per layer) of dicts
mapping block name -> real ndarray, mirroring LruNetwork.parameters().
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, TrainingError

Tree = list  # list[dict[str, np.ndarray]]


# ---------------------------------------------------------------- tree utils

def tree_map(fn, *trees: Tree) -> Tree:
    return [{k: fn(*(t[i][k] for t in trees)) for k in trees[0][i]}
            for i in range(len(trees[0]))]


def tree_zeros_like(tree: Tree) -> Tree:
    return tree_map(np.zeros_like, tree)


def tree_copy(tree: Tree) -> Tree:
    return tree_map(np.copy, tree)


def tree_add(a: Tree, b: Tree) -> Tree:
    return tree_map(np.add, a, b)


def tree_sub(a: Tree, b: Tree) -> Tree:
    return tree_map(np.subtract, a, b)


def tree_scale(tree: Tree, s: float) -> Tree:
    return tree_map(lambda x: x * s, tree)


def tree_sq_norm(tree: Tree) -> float:
    return float(sum(np.sum(blk * blk) for layer in tree for blk in layer.values()))


def tree_norm(tree: Tree) -> float:
    return float(np.sqrt(tree_sq_norm(tree)))


def tree_all_finite(tree: Tree) -> bool:
    return all(np.all(np.isfinite(blk)) for layer in tree for blk in layer.values())


# --------------------------------------------------------------------- loss

def huber_values(residual: np.ndarray, delta: float = 1.0) -> np.ndarray:
    """Elementwise Huber: 0.5 r^2 inside |r| <= delta, linear outside."""
    if delta <= 0:
        raise ConfigurationError(f"huber delta must be > 0, got {delta}")
    r = np.asarray(residual, dtype=np.float64)
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))


def huber(residual: np.ndarray, delta: float = 1.0) -> float:
    """Mean Huber loss over all residual entries."""
    return float(np.mean(huber_values(residual, delta)))


def huber_grad(residual: np.ndarray, delta: float = 1.0) -> np.ndarray:
    """d mean-Huber / d residual (elementwise psi / count)."""
    if delta <= 0:
        raise ConfigurationError(f"huber delta must be > 0, got {delta}")
    r = np.asarray(residual, dtype=np.float64)
    psi = np.clip(r, -delta, delta)
    return psi / r.size


# ----------------------------------------------------------------- clipping

def clip_global_norm(grads: Tree, max_norm: float | None) -> Tree:
    """Scale all blocks by max_norm/g when the global L2 norm g exceeds
    max_norm; None disables clipping."""
    if max_norm is None:
        return grads
    if max_norm <= 0:
        raise ConfigurationError(f"max_norm must be > 0, got {max_norm}")
    g = tree_norm(grads)
    if g <= max_norm:
        return grads
    return tree_scale(grads, max_norm / g)


# --------------------------------------------------------------------- adam

@dataclass
class AdamState:
    m: Tree
    v: Tree
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, theta: Tree, lr: float = 1e-3, beta1: float = 0.9,
             beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(m=tree_zeros_like(theta), v=tree_zeros_like(theta),
                   t=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(theta: Tree, grads: Tree, state: AdamState) -> tuple[Tree, AdamState]:
    """Bias-corrected Adam update; returns new parameters and state."""
    if not tree_all_finite(grads):
        raise TrainingError("non-finite gradient passed to adam_step")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    m = tree_map(lambda mm, g: b1 * mm + (1 - b1) * g, state.m, grads)
    v = tree_map(lambda vv, g: b2 * vv + (1 - b2) * g * g, state.v, grads)
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    lr, eps = state.lr, state.eps

    def upd(th, mm, vv):
        return th - lr * (mm / c1) / (np.sqrt(vv / c2) + eps)

    theta_new = tree_map(upd, theta, m, v)
    return theta_new, AdamState(m=m, v=v, t=t, lr=lr, beta1=b1, beta2=b2, eps=eps)


# ------------------------------------------------------------------- anchor

@dataclass
class AnchorConfig:
    """Pull toward a pretrained parameter snapshot: R = lambda_reg * ||theta_pre - theta||_2.

    The unsquared norm is used (constant-magnitude pull), with subgradient
    zero at theta == theta_pre. squared=True switches to the conventional
    squared penalty lambda_reg * ||theta_pre - theta||_2^2.
    """
    theta_pre: Tree = field(default_factory=list)
    lambda_reg: float = 0.0
    squared: bool = False

    def __post_init__(self):
        if self.lambda_reg < 0:
            raise ConfigurationError(
                f"lambda_reg must be >= 0, got {self.lambda_reg}")


def anchor_gradient(theta: Tree, anchor: AnchorConfig) -> Tree:
    """Gradient of the anchor penalty w.r.t. theta."""
    diff = tree_sub(theta, anchor.theta_pre)
    if anchor.lambda_reg == 0.0:
        return tree_zeros_like(theta)
    if anchor.squared:
        return tree_scale(diff, 2.0 * anchor.lambda_reg)
    nrm = tree_norm(diff)
    if nrm == 0.0:
        return tree_zeros_like(theta)
    return tree_scale(diff, anchor.lambda_reg / nrm)
