"""Adam with parameter groups, and global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


class NumericalError(RuntimeError):
    pass


@dataclass
class OptimizerState:
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: OptimizerState, lr: float) -> None:
    """One bias-corrected Adam update, in place.

    ``state.step`` must already count this step (the caller increments it once
    per optimizer step, shared across groups).
    """
    t = state.step
    if t < 1:
        raise ValueError("state.step must be incremented before adam_step")
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter {name!r}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data = p.data - (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


class Adam:
    """Adam over named parameter groups, each with its own learning rate."""

    def __init__(self, groups: dict[str, tuple[list[tuple[str, Tensor]], float]],
                 betas=(0.9, 0.98), eps: float = 1e-9):
        self.groups = groups
        self.state = OptimizerState(beta1=betas[0], beta2=betas[1], eps=eps)

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, p) for params, _ in self.groups.values() for n, p in params if p.requires_grad]

    def zero_grad(self) -> None:
        for params, _ in self.groups.values():
            for _, p in params:
                p.grad = None

    def step(self) -> None:
        self.state.step += 1
        for params, lr in self.groups.values():
            live = {n: p for n, p in params if p.requires_grad and p.grad is not None}
            adam_step(live, {n: p.grad for n, p in live.items()}, self.state, lr)


def clip_grad_norm(params: list[Tensor], max_norm: float) -> float:
    """Rescale gradients so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    grads = [p.grad for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads)))
    if not np.isfinite(total):
        raise NumericalError("non-finite gradient norm")
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad = (p.grad.astype(np.float64) * scale).astype(p.grad.dtype)
    return total
