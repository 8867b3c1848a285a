"""Knowledge transfer out of the pre-trained prediction model: fine-tuning
through global average pooling plus an emotion projection, hypercolumn
feature fusion (add / concat), and the linear downstream classifiers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import EMOTIONS
from .model import INIT_STD, FopConfig, FopParams, LayerActivations, _as_frames, fop_forward
from .numerics import check_mode, softmax

N_CLASSES = len(EMOTIONS)


@dataclass
class FinetuneHead:
    """Projection from the pooled last-layer state to the four emotion logits."""

    w_y: Tensor
    bias: Tensor

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        return [("head.w_y", self.w_y), ("head.bias", self.bias)]

    def tensors(self) -> list[Tensor]:
        return [self.w_y, self.bias]


def init_head(cfg: FopConfig, rng: np.random.Generator, dtype=np.float32, init_std: float = INIT_STD) -> FinetuneHead:
    return FinetuneHead(
        w_y=Tensor(rng.normal(0.0, init_std, (cfg.d_model, N_CLASSES)).astype(dtype), requires_grad=True),
        bias=Tensor(np.zeros(N_CLASSES, dtype=dtype), requires_grad=True),
    )


def finetune_logits(
    F,
    fop_params: FopParams,
    head: FinetuneHead,
    cfg: FopConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> Tensor:
    """GAP(h_L) @ W_y + bias; gradients reach every model parameter in train mode."""
    check_mode(mode)
    _, acts = fop_forward(F, fop_params, cfg, mode, rng)
    pooled = acts.last.mean(axis=0)  # (d_model,)
    return (pooled.reshape(1, -1) @ head.w_y).reshape(N_CLASSES) + head.bias


def finetune_probs(
    F,
    fop_params: FopParams,
    head: FinetuneHead,
    cfg: FopConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Class distribution over the four emotions (positive, sums to 1)."""
    return ad.softmax(finetune_logits(F, fop_params, head, cfg, mode, rng), axis=-1)


def finetune_loss(
    F,
    label: str,
    fop_params: FopParams,
    head: FinetuneHead,
    cfg: FopConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Cross-entropy of the predicted distribution against one emotion label."""
    idx = EMOTIONS.index(label)
    logp = ad.log_softmax(finetune_logits(F, fop_params, head, cfg, mode, rng), axis=-1)
    return -logp[idx : idx + 1].reshape(())


@dataclass(frozen=True)
class HypercolumnFeature:
    """A per-frame representation plus its time-mean pooled vector."""

    kind: str
    frames: np.ndarray
    pooled: np.ndarray


def _acts_arrays(acts: LayerActivations) -> list[np.ndarray]:
    return acts.arrays()


def hypercolumn_add(F, acts: LayerActivations) -> HypercolumnFeature:
    """Elementwise sum of the input frames and every attention layer's output.

    Only defined when the model width equals the feature width; the stock
    256-wide configuration against 80-dim features is rejected.
    """
    frames = _as_frames(F)
    hs = _acts_arrays(acts)[1:]  # h_1..h_L; h_0 is the embedding, not a layer output
    if not hs:
        raise ValueError("additive hypercolumn needs at least one attention layer")
    if frames.shape[1] != hs[0].shape[1]:
        raise ValueError(
            f"additive hypercolumn requires d_model == d_feat, got d_feat={frames.shape[1]} "
            f"and d_model={hs[0].shape[1]}; train with the add-compat configuration"
        )
    for h in hs:
        if h.shape[0] != frames.shape[0]:
            raise ValueError("frame counts differ between input and activations")
    fused = frames.astype(np.float32).copy()
    for h in hs:
        fused = fused + h.astype(np.float32)
    return HypercolumnFeature("add", fused, fused.mean(axis=0))


def hypercolumn_concat(F, acts: LayerActivations) -> HypercolumnFeature:
    """Per-frame concatenation (F, h_1, ..., h_L); width d_feat + L*d_model."""
    frames = _as_frames(F)
    hs = _acts_arrays(acts)[1:]
    for h in hs:
        if h.shape[0] != frames.shape[0]:
            raise ValueError("frame counts differ between input and activations")
    fused = np.concatenate([frames.astype(np.float32)] + [h.astype(np.float32) for h in hs], axis=1)
    return HypercolumnFeature("concat", fused, fused.mean(axis=0))


FEATURE_KINDS = ("F", "h1", "h2", "add", "concat")


def extract_feature(F, fop_params: FopParams, cfg: FopConfig, kind: str) -> HypercolumnFeature:
    """Bottleneck features from the pre-trained model, eval mode (deterministic).

    `kind` is "F" (the input itself, the no-model baseline), "h<l>" for a
    single layer's output, "add", or "concat".
    """
    frames = _as_frames(F)
    if kind == "F":
        out = frames.astype(np.float32)
        return HypercolumnFeature("F", out, out.mean(axis=0))
    _, acts = fop_forward(frames, fop_params, cfg, mode="eval", rng=None)
    if kind.startswith("h") and kind[1:].isdigit():
        l = int(kind[1:])
        if not 1 <= l <= acts.n_layers:
            raise ValueError(f"layer index {l} out of range 1..{acts.n_layers}")
        out = acts.hs[l].data.astype(np.float32)
        return HypercolumnFeature(kind, out, out.mean(axis=0))
    if kind == "add":
        return hypercolumn_add(frames, acts)
    if kind == "concat":
        return hypercolumn_concat(frames, acts)
    raise ValueError(f"unknown feature kind {kind!r}; expected one of {FEATURE_KINDS}")


@dataclass(frozen=True)
class ClassifierConfig:
    """Training settings for the linear downstream classifiers."""

    lr: float = 0.1
    max_epochs: int = 2000
    l2: float = 1e-3
    tol: float = 1e-6  # stop when the loss improves by less than this

    def __post_init__(self):
        if self.lr <= 0 or self.max_epochs < 1 or self.l2 < 0 or self.tol < 0:
            raise ValueError("invalid classifier configuration")


@dataclass
class LinearClassifier:
    """Linear 4-class scorer: softmax regression or one-vs-rest hinge SVM."""

    kind: str  # "softmax" | "svm"
    weights: np.ndarray  # (d, 4)
    bias: np.ndarray  # (4,)
    config: ClassifierConfig


def _check_training_set(X: np.ndarray, y_idx: np.ndarray) -> None:
    if X.shape[0] != y_idx.shape[0]:
        raise ValueError("feature/label counts differ")
    if X.shape[0] < N_CLASSES:
        raise ValueError(f"need at least {N_CLASSES} training vectors, got {X.shape[0]}")
    present = set(y_idx.tolist())
    missing = [EMOTIONS[i] for i in range(N_CLASSES) if i not in present]
    if missing:
        raise ValueError(f"training set is missing classes: {missing}")


def _train_softmax(X: np.ndarray, y_idx: np.ndarray, cfg: ClassifierConfig) -> tuple[np.ndarray, np.ndarray]:
    n, d = X.shape
    W = np.zeros((d, N_CLASSES))
    b = np.zeros(N_CLASSES)
    onehot = np.eye(N_CLASSES)[y_idx]
    prev = np.inf
    for _ in range(cfg.max_epochs):
        probs = softmax(X @ W + b, axis=-1)
        loss = -np.mean(np.log(probs[np.arange(n), y_idx] + 1e-12)) + 0.5 * cfg.l2 * np.sum(W * W)
        delta = probs - onehot
        W -= cfg.lr * (X.T @ delta / n + cfg.l2 * W)
        b -= cfg.lr * delta.mean(axis=0)
        if abs(prev - loss) < cfg.tol:
            break
        prev = loss
    return W, b


def _train_svm(
    X: np.ndarray, y_idx: np.ndarray, cfg: ClassifierConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """One-vs-rest hinge loss with L2, plain SGD over shuffled samples."""
    n, d = X.shape
    W = np.zeros((d, N_CLASSES))
    b = np.zeros(N_CLASSES)
    signs = np.where(np.arange(N_CLASSES)[None, :] == y_idx[:, None], 1.0, -1.0)  # (n, 4)
    epochs = min(cfg.max_epochs, 200)
    for _ in range(epochs):
        for i in rng.permutation(n):
            x = X[i]
            margins = signs[i] * (x @ W + b)
            active = margins < 1.0  # hinge subgradient
            W -= cfg.lr * (cfg.l2 * W - np.outer(x, signs[i] * active))
            b += cfg.lr * signs[i] * active
    return W, b


def train_classifier(
    X,
    y,
    kind: str = "softmax",
    cfg: ClassifierConfig | None = None,
    rng: np.random.Generator | None = None,
) -> LinearClassifier:
    """Fit a linear classifier on pooled feature vectors (callers z-normalize X
    with train-set statistics first).  Deterministic given the rng."""
    cfg = cfg or ClassifierConfig()
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D matrix of pooled vectors")
    y_idx = np.asarray([EMOTIONS.index(label) for label in y])
    _check_training_set(X, y_idx)
    if kind == "softmax":
        W, b = _train_softmax(X, y_idx, cfg)
    elif kind == "svm":
        W, b = _train_svm(X, y_idx, cfg, rng or np.random.default_rng(0))
    else:
        raise ValueError(f"unknown classifier kind {kind!r}; expected softmax or svm")
    return LinearClassifier(kind, W, b, cfg)


def classify(clf: LinearClassifier, x) -> tuple[str, np.ndarray]:
    """Predicted label and the 4-vector of scores; ties break to the lowest index."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (clf.weights.shape[0],):
        raise ValueError(f"feature of shape {x.shape} does not match classifier dim {clf.weights.shape[0]}")
    scores = x @ clf.weights + clf.bias
    if clf.kind == "softmax":
        scores = softmax(scores, axis=-1)
    return EMOTIONS[int(np.argmax(scores))], scores
