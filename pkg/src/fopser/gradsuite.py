"""Canonical finite-difference validation of the full backward pass, run on
a tiny configuration in float64 so central differences are meaningful.

Central differences estimate a derivative only where the loss is smooth
within the eps-neighborhood, so the check instance is selected (by a fixed,
deterministic scan) to keep every ReLU pre-activation well clear of its
kink; weights are drawn wider than the training init so attention gradients
are not vanishingly small relative to truncation error.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .model import (
    FopConfig,
    FopParams,
    causal_mask,
    embed_inputs,
    fop_loss,
    init_fop_params,
    masked_multi_head_attention,
)
from .numerics import GradReport, grad_check
from .transfer import finetune_loss, init_head

TINY_CONFIG = FopConfig(d_feat=6, d_model=8, n_heads=2, d_ff=11, n_layers=2, dropout_p=0.2, max_len=64)

_CHECK_INIT_STD = 0.3


def _min_relu_margin(F: np.ndarray, params: FopParams, cfg: FopConfig) -> float:
    """Smallest |pre-ReLU activation| over all layers of one eval forward."""
    h = embed_inputs(F, params, cfg, "eval")
    mask = causal_mask(F.shape[0])
    margin = np.inf
    for layer in params.layers:
        attn = masked_multi_head_attention(h, layer, mask, cfg, "eval")
        a = ad.layer_norm(h + attn, layer.ln1_gamma, layer.ln1_beta)
        pre = (a @ layer.w1) + layer.b1
        margin = min(margin, float(np.abs(pre.data).min()))
        h = ad.layer_norm(a + pre.relu() @ layer.w2 + layer.b2, layer.ln2_gamma, layer.ln2_beta)
    return margin


def _conditioned_instance(cfg: FopConfig, T: int, eps: float, seed: int):
    """First (deterministic) instance whose ReLU margins exceed 50*eps."""
    for trial in range(seed, seed + 256):
        rng = np.random.default_rng(trial)
        F = rng.normal(0.0, 1.0, (T, cfg.d_feat))
        params = init_fop_params(cfg, rng, dtype=np.float64, init_std=_CHECK_INIT_STD)
        params_ce = init_fop_params(cfg, rng, dtype=np.float64, init_std=_CHECK_INIT_STD)
        head = init_head(cfg, rng, dtype=np.float64, init_std=_CHECK_INIT_STD)
        margin = min(_min_relu_margin(F, params, cfg), _min_relu_margin(F, params_ce, cfg))
        if margin > 50.0 * eps:
            return F, params, params_ce, head
    raise RuntimeError("no well-conditioned gradient-check instance found")


def tiny_grad_reports(
    eps: float = 1e-4, threshold: float = 1e-4, T: int = 5, seed: int = 0
) -> list[tuple[str, GradReport]]:
    """Gradient reports for the prediction loss and the fine-tuning loss,
    every parameter tensor checked coordinate by coordinate."""
    cfg = TINY_CONFIG
    F, params, params_ce, head = _conditioned_instance(cfg, T, eps, seed)

    pred_report = grad_check(
        lambda: fop_loss(F, params, cfg, "eval"),
        params.named_tensors(),
        eps=eps,
        threshold=threshold,
    )
    ce_report = grad_check(
        lambda: finetune_loss(F, "happy", params_ce, head, cfg, "eval"),
        params_ce.named_tensors() + head.named_tensors(),
        eps=eps,
        threshold=threshold,
    )
    return [
        ("next-frame prediction loss", pred_report),
        ("fine-tuning cross-entropy", ce_report),
    ]
