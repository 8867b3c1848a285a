"""Shared numerical primitives: stable softmax and layer norm on plain arrays,
inverted dropout, the Adam optimizer, and a central-difference gradient checker.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor

MODES = ("train", "eval")


def check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


def softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-subtracted softmax; outputs are positive and sum to 1 along `axis`."""
    v = np.asarray(v)
    if not np.all(np.isfinite(v)):
        raise ValueError("softmax input must be finite")
    shifted = v - v.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """(x - mean) / sqrt(var + eps) * gamma + beta over the last axis, var with 1/d."""
    x = np.asarray(x)
    if x.shape[-1] != np.shape(gamma)[-1] or x.shape[-1] != np.shape(beta)[-1]:
        raise ValueError("gamma/beta width must match the normalized axis")
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def dropout(x: Tensor, p: float, mode: str, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: train mode zeroes entries with probability p and
    rescales survivors by 1/(1-p); eval mode is the identity."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    check_mode(mode)
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an explicit rng")
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype)
    return x * (keep / x.data.dtype.type(1.0 - p))


@dataclass
class AdamState:
    """Adam moment accumulators; shapes mirror the parameter list."""

    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: list[np.ndarray], lr: float = 0.001) -> AdamState:
    return AdamState(
        step=0,
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        lr=lr,
    )


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: AdamState
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns fresh parameter and state values."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state lengths do not match")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.m[i].shape:
            raise ValueError(f"shape mismatch at parameter {i}: {p.shape} vs {g.shape}")
    t = state.step + 1
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        mhat = m / (1.0 - state.beta1**t)
        vhat = v / (1.0 - state.beta2**t)
        new_p.append(p - state.lr * mhat / (np.sqrt(vhat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(t, new_m, new_v, state.lr, state.beta1, state.beta2, state.eps)


@dataclass
class GradReport:
    """Finite-difference validation result, per parameter tensor."""

    per_param: dict[str, float]
    max_error: float
    threshold: float
    passed: bool

    def summary(self) -> str:
        lines = [f"{'parameter':<24} {'max rel err':>12}"]
        for name, err in self.per_param.items():
            lines.append(f"{name:<24} {err:>12.3e}")
        lines.append(f"{'OVERALL':<24} {self.max_error:>12.3e}  -> {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def grad_check(
    loss_fn,
    params: list[tuple[str, Tensor]],
    eps: float = 1e-4,
    threshold: float = 1e-4,
    max_coords_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradReport:
    """Compare analytic gradients of `loss_fn` against central differences.

    `loss_fn` takes no arguments, reads the given parameter tensors, and
    returns a scalar Tensor; it must be deterministic (dropout in eval mode)
    and should run in float64.  Relative error per coordinate is
    |a - n| / max(|a|, |n|, 1e-8).
    """
    base1 = float(loss_fn().data)
    base2 = float(loss_fn().data)
    if base1 != base2:
        raise ValueError("loss function is not deterministic; run dropout in eval mode")

    for _, t in params:
        t.grad = None
    out = loss_fn()
    out.backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for name, t in params}

    per_param: dict[str, float] = {}
    for name, t in params:
        flat = t.data.flat  # writes through regardless of memory layout
        ana = analytic[name].reshape(-1)
        n_coords = t.data.size
        if max_coords_per_tensor is not None and n_coords > max_coords_per_tensor:
            if rng is None:
                raise ValueError("coordinate sampling needs an explicit rng")
            coords = rng.choice(n_coords, size=max_coords_per_tensor, replace=False)
        else:
            coords = range(n_coords)
        worst = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            lp = float(loss_fn().data)
            flat[i] = orig - eps
            lm = float(loss_fn().data)
            flat[i] = orig
            numeric = (lp - lm) / (2.0 * eps)
            rel = abs(ana[i] - numeric) / max(abs(ana[i]), abs(numeric), 1e-8)
            worst = max(worst, rel)
        per_param[name] = worst
    max_error = max(per_param.values()) if per_param else 0.0
    return GradReport(per_param, max_error, threshold, max_error <= threshold)
