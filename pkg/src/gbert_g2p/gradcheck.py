"""Central finite-difference gradient checks for the autodiff engine.

Checks run in float64: the function is evaluated on float64 leaves, the
analytic gradient comes from ``backward`` and the numeric one from
``(f(x+h) - f(x-h)) / 2h``. Relative error per element is

    |a - n| / max(|a|, |n|, floor)

The absolute ``floor`` (1e-6, the size of the O(h^2) truncation term) only
matters for gradients that are structurally zero, such as the key-projection
bias, which a row-wise softmax ignores. Elements whose stencil flips the sign
of any relu input are not differentiable along that direction at step ``h``;
they are skipped and counted rather than compared.

The three-point stencil's truncation error is relative to the third
derivative, not to the gradient, so small gradients next to large curvature
(common behind a layer norm) can miss the tolerance although the analytic
value is right. Elements above ``refine_tol`` are therefore re-measured with
the five-point central stencil at the same ``h``, whose error is O(h^4); the
number re-measured is reported.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor, record_relu_patterns


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    worst_index: tuple
    analytic: float
    numeric: float
    checked: int
    skipped_kinks: int
    refined: int = 0

    def ok(self, tol: float) -> bool:
        return self.max_rel_error < tol and self.checked > 0


def relative_error(a: np.ndarray, n: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def _same(p: list[np.ndarray], q: list[np.ndarray]) -> bool:
    return len(p) == len(q) and all(np.array_equal(a, b) for a, b in zip(p, q))


STENCILS = {
    3: ((1.0, 0.5), (-1.0, -0.5)),
    5: ((2.0, -1 / 12), (1.0, 8 / 12), (-1.0, -8 / 12), (-2.0, 1 / 12)),
}


def numeric_grad(f: Callable[[], Tensor], x: np.ndarray, h: float = 1e-3, points: int = 3,
                 indices: Sequence[int] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Central differences of scalar ``f`` w.r.t. ``x`` (perturbed in place, then restored).

    Only the flat ``indices`` are measured when given; the rest stay zero.
    Returns the gradient and a boolean map of elements whose stencil crossed a relu kink.
    """
    base: list[np.ndarray] = []
    with record_relu_patterns(base):
        f()
    g = np.zeros(x.shape, dtype=np.float64)
    kinked = np.zeros(x.shape, dtype=bool)
    flat = x.reshape(-1)
    if not np.shares_memory(flat, x):
        raise ValueError("leaf data must be contiguous")
    for i in range(flat.size) if indices is None else indices:
        old = flat[i]
        total = 0.0
        for offset, weight in STENCILS[points]:
            flat[i] = old + offset * h
            seen: list[np.ndarray] = []
            with record_relu_patterns(seen):
                total += weight * float(f().data)
            kinked.flat[i] |= not _same(seen, base)
        flat[i] = old
        g.flat[i] = total / h
    return g, kinked


def check_gradients(loss_fn: Callable[[], Tensor], leaves: Sequence[tuple[str, Tensor]], h: float = 1e-3,
                    floor: float = 1e-6, refine_tol: float | None = 1e-3) -> list[GradCheckResult]:
    """Compare ``backward`` against central differences for every leaf.

    ``loss_fn`` must rebuild the graph from the current leaf values and
    return a scalar; leaves must hold float64 data.
    """
    for _, t in leaves:
        if t.data.dtype != np.float64:
            raise TypeError("gradient checks need float64 leaves")
        t.grad = None
    loss_fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for _, t in leaves]

    results = []
    for (name, t), a in zip(leaves, analytic):
        n, kinked = numeric_grad(loss_fn, t.data, h)
        rel = np.where(kinked, 0.0, relative_error(a, n, floor))
        redo = np.flatnonzero(rel >= refine_tol) if refine_tol is not None else np.array([], dtype=int)
        if redo.size:
            n5, k5 = numeric_grad(loss_fn, t.data, h, points=5, indices=redo)
            n.flat[redo] = n5.flat[redo]
            kinked.flat[redo] |= k5.flat[redo]
            rel = np.where(kinked, 0.0, relative_error(a, n, floor))
        i = np.unravel_index(int(np.argmax(rel)), rel.shape)
        results.append(GradCheckResult(name, float(rel[i]), tuple(int(k) for k in i), float(a[i]), float(n[i]),
                                       int((~kinked).sum()), int(kinked.sum()), int(redo.size)))
    return results
