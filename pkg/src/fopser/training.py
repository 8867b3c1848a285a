"""Training loops and evaluation protocol: pre-training with early stopping,
fine-tuning (optionally from a checkpoint), repeat-based evaluation with
derived seeds, and the speaker-overlap guard.

Mini-batches average per-utterance losses; utterances are shuffled each
epoch, bucketed by length, and batch order is reshuffled, so no padding is
ever introduced and nothing can leak into the loss.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import zero_grads
from .checkpoint import Checkpoint
from .corpus import EMOTIONS, CorpusManifest, read_wav
from .features import FeatureSequence, FrameConfig, NormStats, apply_norm, fit_norm, log_mel
from .metrics import EvalResult, score_predictions, weighted_accuracy
from .model import FopConfig, FopParams, fop_loss, init_fop_params
from .numerics import adam_init, adam_step
from .transfer import FinetuneHead, finetune_loss, finetune_probs, init_head


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings shared by pre-training and fine-tuning."""

    lr: float = 0.001
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    val_fraction: float = 0.1
    seed: int = 0
    dropout_p: float = 0.2
    repeats: int = 1

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")
        if self.patience < 1 or self.max_epochs < 1 or self.batch_size < 1 or self.repeats < 1:
            raise ValueError("patience, max_epochs, batch_size and repeats must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")


def corpus_features(manifest: CorpusManifest, frame_cfg: FrameConfig | None = None) -> dict[str, FeatureSequence]:
    """Read every utterance's WAV and extract raw log-mel features.

    All utterances must share one sample rate (resampling is out of scope);
    the frame configuration defaults to the corpus rate with standard values.
    """
    feats: dict[str, FeatureSequence] = {}
    cfg = frame_cfg
    for u in manifest:
        wav = read_wav(u.audio_path)
        if cfg is None:
            cfg = FrameConfig(sample_rate=wav.sample_rate)
        if wav.sample_rate != cfg.sample_rate:
            raise ValueError(
                f"utterance {u.id!r} has sample rate {wav.sample_rate}, expected {cfg.sample_rate} "
                "(resampling is not performed)"
            )
        feats[u.id] = log_mel(wav, cfg)
    return feats


def split_validation(
    manifest: CorpusManifest, fraction: float, rng: np.random.Generator
) -> tuple[CorpusManifest, CorpusManifest]:
    """Split off roughly `fraction` of utterances for validation, drawing
    round-robin across speakers (speaker-stratified).  With a single
    utterance the validation side is empty."""
    n = len(manifest)
    if n < 2:
        return manifest, CorpusManifest(())
    n_val = min(max(1, int(fraction * n)), n - 1)
    by_speaker: dict[str, list] = {}
    for u in manifest:
        by_speaker.setdefault(u.speaker_id, []).append(u)
    queues = []
    for speaker in manifest.speakers():
        utts = by_speaker[speaker]
        order = rng.permutation(len(utts))
        queues.append([utts[i] for i in order])
    val_ids = set()
    qi = 0
    while len(val_ids) < n_val:
        if queues[qi % len(queues)]:
            val_ids.add(queues[qi % len(queues)].pop().id)
        qi += 1
    train = tuple(u for u in manifest if u.id not in val_ids)
    val = tuple(u for u in manifest if u.id in val_ids)
    return CorpusManifest(train), CorpusManifest(val)


def _length_bucketed_batches(ids: list[str], lengths: dict[str, int], batch_size: int, rng: np.random.Generator):
    """Shuffle, stable-sort by length, chunk, then shuffle batch order."""
    order = rng.permutation(len(ids))
    by_len = sorted(order, key=lambda i: lengths[ids[i]])
    batches = [by_len[i : i + batch_size] for i in range(0, len(by_len), batch_size)]
    batch_order = rng.permutation(len(batches))
    return [[ids[i] for i in batches[b]] for b in batch_order]


def _snapshot(tensors) -> list[np.ndarray]:
    return [t.data.copy() for t in tensors]


def _restore(tensors, datas) -> None:
    for t, d in zip(tensors, datas):
        t.data = d.copy()


def _optimizer_step(tensors, state):
    grads = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    new_data, state = adam_step([t.data for t in tensors], grads, state)
    for t, d in zip(tensors, new_data):
        t.data = d
    return state


def _segments(frames: np.ndarray, max_len: int) -> list[np.ndarray]:
    """Split a feature matrix into consecutive chunks of at most max_len frames,
    keeping only chunks long enough to contain a prediction target."""
    chunks = [frames[i : i + max_len] for i in range(0, frames.shape[0], max_len)]
    return [c for c in chunks if c.shape[0] >= 2]


def pretrain(
    manifest: CorpusManifest,
    fop_cfg: FopConfig | None = None,
    train_cfg: TrainConfig | None = None,
    frame_cfg: FrameConfig | None = None,
) -> Checkpoint:
    """Unsupervised next-frame pre-training with Adam and early stopping on
    validation prediction loss; returns the best-validation checkpoint.

    Utterances longer than max_len are chunked (never silently truncated);
    utterances too short to yield a prediction target (fewer than 2 frames)
    are dropped.  It is an error if nothing trainable remains.
    """
    fop_cfg = fop_cfg or FopConfig()
    train_cfg = train_cfg or TrainConfig()
    if len(manifest) == 0:
        raise ValueError("cannot pre-train on an empty corpus")
    raw = corpus_features(manifest, frame_cfg)
    usable = tuple(u for u in manifest if raw[u.id].n_frames >= 2)
    if not usable:
        raise ValueError("all utterances are shorter than 2 frames; nothing to predict")
    usable_m = CorpusManifest(usable)

    rng = np.random.default_rng(train_cfg.seed)
    cfg = replace(fop_cfg, dropout_p=train_cfg.dropout_p)
    train_m, val_m = split_validation(usable_m, train_cfg.val_fraction, rng)
    stats = fit_norm([raw[u.id] for u in train_m])
    feats = {}
    for u in usable_m:
        for j, chunk in enumerate(_segments(apply_norm(raw[u.id], stats).frames, cfg.max_len)):
            feats[f"{u.id}#{j}"] = chunk
    if not feats:
        raise ValueError(f"max_len={cfg.max_len} leaves no chunk with a prediction target")
    lengths = {key: f.shape[0] for key, f in feats.items()}

    def keys_of(utts):
        return [k for u in utts for k in lengths if k.rpartition("#")[0] == u.id]

    params = init_fop_params(cfg, rng)
    tensors = params.tensors()
    state = adam_init([t.data for t in tensors], lr=train_cfg.lr)

    def mean_loss(utts) -> float:
        return float(np.mean([fop_loss(feats[k], params, cfg, "eval").item() for k in keys_of(utts)]))

    train_ids = keys_of(train_m)
    initial_train_loss = mean_loss(train_m)
    best_monitor = np.inf
    best_snapshot = _snapshot(tensors)
    best_epoch = 0
    bad_epochs = 0
    epochs_run = 0
    monitor = initial_train_loss
    for epoch in range(1, train_cfg.max_epochs + 1):
        for batch in _length_bucketed_batches(train_ids, lengths, train_cfg.batch_size, rng):
            zero_grads(tensors)
            total = None
            for uid in batch:
                loss = fop_loss(feats[uid], params, cfg, "train", rng)
                total = loss if total is None else total + loss
            (total / len(batch)).backward()
            state = _optimizer_step(tensors, state)
        epochs_run = epoch
        monitor = mean_loss(val_m) if len(val_m) else mean_loss(train_m)
        if monitor < best_monitor:
            best_monitor = monitor
            best_snapshot = _snapshot(tensors)
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= train_cfg.patience:
                break
    final_train_loss = mean_loss(train_m)  # end of the run, before the best-epoch restore
    _restore(tensors, best_snapshot)
    provenance = {
        "task": "pretrain",
        "seed": str(train_cfg.seed),
        "epochs_run": str(epochs_run),
        "best_epoch": str(best_epoch),
        "initial_train_loss": repr(initial_train_loss),
        "final_train_loss": repr(final_train_loss),
        "best_val_loss": repr(float(best_monitor)),
        "final_val_loss": repr(float(monitor)),
    }
    return Checkpoint(fop_cfg=cfg, params=params, norm_stats=stats, head=None, provenance=provenance)


def _clone_params(params: FopParams) -> FopParams:
    from .model import LayerParams
    from .autodiff import Tensor

    def c(t):
        return Tensor(t.data.copy(), requires_grad=True)

    layers = [
        LayerParams(**{f: c(getattr(layer, f)) for f in (
            "w_q", "w_k", "w_v", "w_o", "w1", "b1", "w2", "b2",
            "ln1_gamma", "ln1_beta", "ln2_gamma", "ln2_beta")})
        for layer in params.layers
    ]
    return FopParams(w_e=c(params.w_e), layers=layers, w_out=c(params.w_out), b_out=c(params.b_out))


def finetune(
    manifest: CorpusManifest,
    train_cfg: TrainConfig | None = None,
    init: Checkpoint | None = None,
    fop_cfg: FopConfig | None = None,
    freeze_body: bool = False,
    frame_cfg: FrameConfig | None = None,
) -> Checkpoint:
    """Supervised emotion training of the whole model plus a fresh projection
    head; cross-entropy with Adam, early stopping on validation weighted
    accuracy (ties broken by validation cross-entropy).

    With `init` the body starts from the checkpoint (and reuses its feature
    normalization); without it the body is freshly initialized and the
    normalization is fitted on the fine-tuning training split.
    """
    train_cfg = train_cfg or TrainConfig()
    if len(manifest) == 0:
        raise ValueError("cannot fine-tune on an empty corpus")
    if not manifest.labeled:
        raise ValueError("fine-tuning needs a fully labeled corpus")

    rng = np.random.default_rng(train_cfg.seed)
    if init is not None:
        cfg = replace(init.fop_cfg, dropout_p=train_cfg.dropout_p)
        params = _clone_params(init.params)
        stats: NormStats | None = init.norm_stats
    else:
        cfg = replace(fop_cfg or FopConfig(), dropout_p=train_cfg.dropout_p)
        params = init_fop_params(cfg, rng)
        stats = None
    head = init_head(cfg, rng)

    raw = corpus_features(manifest, frame_cfg)
    train_m, val_m = split_validation(manifest, train_cfg.val_fraction, rng)
    if stats is None:
        stats = fit_norm([raw[u.id] for u in train_m])
    feats = {u.id: apply_norm(raw[u.id], stats) for u in manifest}
    lengths = {uid: f.n_frames for uid, f in feats.items()}

    body = params.tensors()
    if freeze_body:
        for t in body:
            t.requires_grad = False
        trainable = head.tensors()
    else:
        trainable = body + head.tensors()
    state = adam_init([t.data for t in trainable], lr=train_cfg.lr)

    def mean_ce(utts) -> float:
        return float(np.mean([finetune_loss(feats[u.id], u.label, params, head, cfg, "eval").item() for u in utts]))

    def val_scores(utts) -> tuple[float, float]:
        if not len(utts):
            return -np.inf, np.inf
        preds = [predict_one(feats[u.id], params, head, cfg) for u in utts]
        return weighted_accuracy(preds, [u.label for u in utts]), mean_ce(utts)

    train_ids = [u.id for u in train_m]
    labels = {u.id: u.label for u in manifest}
    initial_train_ce = mean_ce(train_m)
    best_wa, best_ce = -np.inf, np.inf
    best_snapshot = _snapshot(trainable)
    best_epoch = 0
    bad_epochs = 0
    epochs_run = 0
    for epoch in range(1, train_cfg.max_epochs + 1):
        for batch in _length_bucketed_batches(train_ids, lengths, train_cfg.batch_size, rng):
            zero_grads(trainable)
            total = None
            for uid in batch:
                loss = finetune_loss(feats[uid], labels[uid], params, head, cfg, "train", rng)
                total = loss if total is None else total + loss
            (total / len(batch)).backward()
            state = _optimizer_step(trainable, state)
        epochs_run = epoch
        wa, ce = val_scores(val_m if len(val_m) else train_m)
        if wa > best_wa or (wa == best_wa and ce < best_ce):
            best_wa, best_ce = wa, ce
            best_snapshot = _snapshot(trainable)
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= train_cfg.patience:
                break
    _restore(trainable, best_snapshot)
    if freeze_body:
        for t in body:
            t.requires_grad = True
    provenance = {
        "task": "finetune",
        "seed": str(train_cfg.seed),
        "epochs_run": str(epochs_run),
        "best_epoch": str(best_epoch),
        "initial_train_ce": repr(initial_train_ce),
        "final_train_ce": repr(mean_ce(train_m)),
        "best_val_wa": repr(float(best_wa)),
        "pretrained": str(int(init is not None)),
        "freeze_body": str(int(freeze_body)),
    }
    return Checkpoint(fop_cfg=cfg, params=params, norm_stats=stats, head=head, provenance=provenance)


def predict_one(F, params: FopParams, head: FinetuneHead, cfg: FopConfig) -> str:
    """Argmax emotion for one (already normalized) feature sequence."""
    probs = finetune_probs(F, params, head, cfg, "eval").data
    return EMOTIONS[int(np.argmax(probs))]


def predict_labels(ckpt: Checkpoint, manifest: CorpusManifest, frame_cfg: FrameConfig | None = None) -> list[str]:
    """Classify every utterance of a manifest with a fine-tuned checkpoint."""
    if ckpt.head is None:
        raise ValueError("checkpoint has no fine-tuning head; run finetune first")
    raw = corpus_features(manifest, frame_cfg)
    return [
        predict_one(apply_norm(raw[u.id], ckpt.norm_stats), ckpt.params, ckpt.head, ckpt.fop_cfg)
        for u in manifest
    ]


def check_speaker_disjoint(train: CorpusManifest, test: CorpusManifest) -> None:
    overlap = set(train.speakers()) & set(test.speakers())
    if overlap:
        raise ValueError(f"speaker overlap between train and test: {sorted(overlap)}")


def evaluate(
    fit_predict,
    train_manifest: CorpusManifest,
    test_manifest: CorpusManifest,
    repeats: int = 1,
    base_seed: int = 0,
) -> EvalResult:
    """Run `fit_predict(train_manifest, test_manifest, seed)` once per repeat
    with derived seeds base_seed + i and aggregate WA/UA over repeats.

    Refuses to run if the test corpus is unlabeled or shares speakers with
    the training corpus."""
    if not test_manifest.labeled:
        raise ValueError("evaluation needs a labeled test corpus")
    check_speaker_disjoint(train_manifest, test_manifest)
    truth = [u.label for u in test_manifest]
    was, uas, seeds = [], [], []
    confusion = None
    for i in range(repeats):
        seed = base_seed + i
        preds = fit_predict(train_manifest, test_manifest, seed)
        wa, ua, confusion = score_predictions(preds, truth)
        was.append(wa)
        uas.append(ua)
        seeds.append(seed)
    return EvalResult(was, uas, confusion, seeds)


def finetune_fit_predict(
    train_cfg: TrainConfig,
    init: Checkpoint | None = None,
    fop_cfg: FopConfig | None = None,
    freeze_body: bool = False,
    frame_cfg: FrameConfig | None = None,
):
    """Evaluation pipeline: fine-tune on the training manifest, predict the test set."""

    def fit_predict(train_m, test_m, seed):
        cfg = replace(train_cfg, seed=seed)
        ckpt = finetune(train_m, cfg, init=init, fop_cfg=fop_cfg, freeze_body=freeze_body, frame_cfg=frame_cfg)
        return predict_labels(ckpt, test_m, frame_cfg)

    return fit_predict


def _fit_vector_norm(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    std = np.maximum(X.std(axis=0), 1e-8)
    return mean, std


def pooled_features(
    manifest: CorpusManifest,
    kind: str,
    ckpt: Checkpoint | None,
    frame_cfg: FrameConfig | None = None,
) -> np.ndarray:
    """Pooled hypercolumn features for every utterance, in manifest order.

    Kind "F" needs no checkpoint; the other kinds run the checkpoint's model
    in eval mode on features normalized with the checkpoint's statistics."""
    from .transfer import extract_feature

    raw = corpus_features(manifest, frame_cfg)
    rows = []
    for u in manifest:
        if kind == "F":
            rows.append(extract_feature(raw[u.id], None, None, "F").pooled)
        else:
            if ckpt is None:
                raise ValueError(f"feature kind {kind!r} needs a pre-trained checkpoint")
            f = apply_norm(raw[u.id], ckpt.norm_stats)
            rows.append(extract_feature(f, ckpt.params, ckpt.fop_cfg, kind).pooled)
    return np.stack(rows)


def classifier_fit_predict(
    kind: str,
    clf_kind: str = "softmax",
    ckpt: Checkpoint | None = None,
    pretrain_on: CorpusManifest | None = None,
    fop_cfg: FopConfig | None = None,
    pretrain_cfg: TrainConfig | None = None,
    clf_cfg=None,
    frame_cfg: FrameConfig | None = None,
):
    """Evaluation pipeline: extract pooled features, z-normalize them with
    train-set statistics, train a linear classifier, predict the test set.

    Either pass a fixed `ckpt`, or pass `pretrain_on` to pre-train a model
    per repeat with the repeat's derived seed."""
    from .transfer import classify, train_classifier

    def fit_predict(train_m, test_m, seed):
        model_ckpt = ckpt
        if pretrain_on is not None:
            model_ckpt = pretrain(pretrain_on, fop_cfg, replace(pretrain_cfg or TrainConfig(), seed=seed), frame_cfg)
        X_train = pooled_features(train_m, kind, model_ckpt, frame_cfg)
        X_test = pooled_features(test_m, kind, model_ckpt, frame_cfg)
        mean, std = _fit_vector_norm(X_train)
        clf = train_classifier(
            (X_train - mean) / std,
            [u.label for u in train_m],
            kind=clf_kind,
            cfg=clf_cfg,
            rng=np.random.default_rng(seed),
        )
        return [classify(clf, x)[0] for x in (X_test - mean) / std]

    return fit_predict


def write_summary(items, path: str | os.PathLike) -> None:
    """Write one `key=value` per line (machine-readable metric summary)."""
    if isinstance(items, dict):
        items = list(items.items())
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in items:
            fh.write(f"{k}={v}\n")
