"""The future-observation-prediction network: sinusoidal input embedding,
a stack of causally masked multi-head self-attention layers (post-norm,
residual), and a next-frame regression head trained with MSE.

Position t predicts frame t+1; the last position's prediction has no target
and is excluded from the loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .features import FeatureSequence
from .numerics import check_mode, dropout

INIT_STD = 0.02


@dataclass(frozen=True)
class FopConfig:
    """Architecture hyperparameters of the prediction network."""

    d_feat: int = 80
    d_model: int = 256
    n_heads: int = 4
    d_ff: int = 513
    n_layers: int = 2
    dropout_p: float = 0.2
    max_len: int = 2000

    def __post_init__(self):
        if min(self.d_feat, self.d_model, self.n_heads, self.d_ff, self.n_layers, self.max_len) < 1:
            raise ValueError("all dimensions must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


def add_compat_config(**overrides) -> FopConfig:
    """Configuration preset with d_model == d_feat so additive hypercolumns are defined."""
    base = dict(d_feat=80, d_model=80, n_heads=4, d_ff=160)
    base.update(overrides)
    return FopConfig(**base)


@dataclass
class LayerParams:
    """One attention layer: Q/K/V/out projections, feed-forward, two layer norms."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor


@dataclass
class FopParams:
    """All trainable parameters: embedding, L attention layers, prediction head."""

    w_e: Tensor
    layers: list[LayerParams]
    w_out: Tensor
    b_out: Tensor

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = [("w_e", self.w_e)]
        for i, layer in enumerate(self.layers):
            for name in ("w_q", "w_k", "w_v", "w_o", "w1", "b1", "w2", "b2",
                         "ln1_gamma", "ln1_beta", "ln2_gamma", "ln2_beta"):
                out.append((f"layers.{i}.{name}", getattr(layer, name)))
        out.append(("w_out", self.w_out))
        out.append(("b_out", self.b_out))
        return out

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]

    @property
    def dtype(self):
        return self.w_e.data.dtype


def init_fop_params(cfg: FopConfig, rng: np.random.Generator, dtype=np.float32, init_std: float = INIT_STD) -> FopParams:
    """Weights ~ N(0, init_std^2) (0.02 by default), biases 0, layer-norm gamma=1 / beta=0."""

    def weight(*shape):
        return Tensor(rng.normal(0.0, init_std, shape).astype(dtype), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def ones(*shape):
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

    layers = [
        LayerParams(
            w_q=weight(cfg.d_model, cfg.d_model),
            w_k=weight(cfg.d_model, cfg.d_model),
            w_v=weight(cfg.d_model, cfg.d_model),
            w_o=weight(cfg.d_model, cfg.d_model),
            w1=weight(cfg.d_model, cfg.d_ff),
            b1=zeros(cfg.d_ff),
            w2=weight(cfg.d_ff, cfg.d_model),
            b2=zeros(cfg.d_model),
            ln1_gamma=ones(cfg.d_model),
            ln1_beta=zeros(cfg.d_model),
            ln2_gamma=ones(cfg.d_model),
            ln2_beta=zeros(cfg.d_model),
        )
        for _ in range(cfg.n_layers)
    ]
    return FopParams(w_e=weight(cfg.d_feat, cfg.d_model), layers=layers,
                     w_out=weight(cfg.d_model, cfg.d_feat), b_out=zeros(cfg.d_feat))


@dataclass
class LayerActivations:
    """Hidden states h_0..h_L of one forward pass, plus the mode it ran in."""

    hs: list[Tensor]
    mode: str

    @property
    def last(self) -> Tensor:
        return self.hs[-1]

    @property
    def n_layers(self) -> int:
        return len(self.hs) - 1

    def arrays(self) -> list[np.ndarray]:
        return [h.data for h in self.hs]


def positional_encoding(T: int, d_model: int) -> np.ndarray:
    """Sinusoidal table: even columns sin(pos/10000^(2i/d)), odd columns the cosine."""
    if T < 1 or d_model < 2:
        raise ValueError("need T >= 1 and d_model >= 2")
    pos = np.arange(T, dtype=np.float64)[:, None]
    even = np.arange(0, d_model, 2, dtype=np.float64)
    angles = pos / np.power(10000.0, even / d_model)
    pe = np.zeros((T, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : d_model // 2])
    return pe


def causal_mask(T: int) -> np.ndarray:
    """T x T boolean matrix; entry (q, k) is True iff k <= q."""
    return np.tril(np.ones((T, T), dtype=bool))


def _as_frames(F) -> np.ndarray:
    return F.frames if isinstance(F, FeatureSequence) else np.asarray(F)


def embed_inputs(
    F,
    params: FopParams,
    cfg: FopConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    add_positions: bool = True,
) -> Tensor:
    """h_0[t] = W_e f_t + PE[t], followed by dropout in train mode.

    `add_positions=False` drops the positional table (test hook).
    """
    check_mode(mode)
    frames = _as_frames(F)
    T = frames.shape[0]
    if T > cfg.max_len:
        raise ValueError(f"sequence of {T} frames exceeds max_len={cfg.max_len}")
    if frames.shape[1] != cfg.d_feat:
        raise ValueError(f"feature width {frames.shape[1]} != d_feat={cfg.d_feat}")
    dtype = params.dtype
    h = Tensor(frames.astype(dtype, copy=False)) @ params.w_e
    if add_positions:
        h = h + Tensor(positional_encoding(T, cfg.d_model).astype(dtype))
    return dropout(h, cfg.dropout_p, mode, rng)


def masked_multi_head_attention(
    h: Tensor,
    layer: LayerParams,
    mask: np.ndarray,
    cfg: FopConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Scaled dot-product attention per head under `mask`, heads concatenated,
    then the output projection.  Masked scores are set to -inf before softmax;
    attention weights are dropped out in train mode."""
    check_mode(mode)
    T = h.shape[0]
    H, dh = cfg.n_heads, cfg.d_head
    if mask.shape != (T, T):
        raise ValueError(f"mask shape {mask.shape} does not match T={T}")
    # (T, d_model) -> (H, T, dh)
    q = (h @ layer.w_q).reshape(T, H, dh).transpose((1, 0, 2))
    k = (h @ layer.w_k).reshape(T, H, dh).transpose((1, 0, 2))
    v = (h @ layer.w_v).reshape(T, H, dh).transpose((1, 0, 2))
    scores = (q @ k.transpose((0, 2, 1))) * (1.0 / np.sqrt(dh))
    scores = ad.masked_fill(scores, mask[None, :, :], -np.inf)
    weights = ad.softmax(scores, axis=-1)
    weights = dropout(weights, cfg.dropout_p, mode, rng)
    ctx = (weights @ v).transpose((1, 0, 2)).reshape(T, cfg.d_model)
    return ctx @ layer.w_o


def attention_layer(
    h_in: Tensor,
    layer: LayerParams,
    mask: np.ndarray,
    cfg: FopConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Post-norm block: LayerNorm(x + Drop(MHA(x))), then LayerNorm(a + Drop(FF(a)))."""
    attn = masked_multi_head_attention(h_in, layer, mask, cfg, mode, rng)
    a = ad.layer_norm(h_in + dropout(attn, cfg.dropout_p, mode, rng), layer.ln1_gamma, layer.ln1_beta)
    ff = ((a @ layer.w1) + layer.b1).relu() @ layer.w2 + layer.b2
    return ad.layer_norm(a + dropout(ff, cfg.dropout_p, mode, rng), layer.ln2_gamma, layer.ln2_beta)


def fop_forward(
    F,
    params: FopParams,
    cfg: FopConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, LayerActivations]:
    """Full forward pass: returns per-position next-frame predictions (T x d_feat)
    and the activations h_0..h_L."""
    h = embed_inputs(F, params, cfg, mode, rng)
    hs = [h]
    mask = causal_mask(h.shape[0])
    for layer in params.layers:
        h = attention_layer(h, layer, mask, cfg, mode, rng)
        hs.append(h)
    predictions = h @ params.w_out + params.b_out
    return predictions, LayerActivations(hs, mode)


def fop_loss(
    F,
    params: FopParams,
    cfg: FopConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Mean squared error between predictions at positions 1..T-1 and frames 2..T.

    Scalar Tensor; call `.backward()` on it to populate parameter gradients.
    """
    frames = _as_frames(F)
    if frames.shape[0] < 2:
        raise ValueError(f"need at least 2 frames for a prediction target, got {frames.shape[0]}")
    predictions, _ = fop_forward(frames, params, cfg, mode, rng)
    targets = Tensor(frames[1:].astype(params.dtype, copy=False))
    diff = predictions[:-1] - targets
    return (diff * diff).mean()
