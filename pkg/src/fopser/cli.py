"""Command-line interface binding the library together.

Subcommands: synth, featurize, pretrain, finetune, extract, train-clf,
eval, gradcheck.  Every subcommand accepts ``--seed`` and ``--config FILE``
(UTF-8 ``key = value`` lines; explicit flags override the file).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import (
    ClassifierConfig,
    CorpusManifest,
    FopConfig,
    FrameConfig,
    SynthSpec,
    TrainConfig,
    add_compat_config,
    classifier_fit_predict,
    evaluate,
    finetune,
    finetune_fit_predict,
    kfold_by_session,
    load_checkpoint,
    load_manifest,
    pooled_features,
    pretrain,
    save_checkpoint,
    split_speaker_independent,
    synth_corpus,
    train_classifier,
    write_features,
    write_manifest,
    write_summary,
)
from .corpus import read_wav
from .features import FeatureSequence, log_mel

_MODEL_OPTS = [
    ("d_feat", int, 80), ("d_model", int, 256), ("n_heads", int, 4),
    ("d_ff", int, 513), ("n_layers", int, 2), ("max_len", int, 2000),
]
_TRAIN_OPTS = [
    ("lr", float, 0.001), ("batch_size", int, 32), ("max_epochs", int, 100),
    ("patience", int, 5), ("val_fraction", float, 0.1), ("dropout", float, 0.2),
]
_FRAME_OPTS = [
    ("win_ms", float, 25.0), ("hop_ms", float, 10.0), ("n_fft", int, 512),
    ("n_mels", int, 80), ("fmin", float, 0.0), ("fmax", float, None),
]


def _add_opts(parser: argparse.ArgumentParser, opts) -> None:
    for name, typ, default in opts:
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ, default=None,
                            help=f"(default {default})")


def _parse_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise SystemExit(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            k, v = line.split("=", 1)
            values[k.strip().replace("-", "_")] = v.strip()
    return values


def _resolve(args, opts) -> dict:
    """Merge precedence: explicit CLI flag > config file > built-in default."""
    fileconf = _parse_config_file(args.config) if args.config else {}
    known = {name for name, _, _ in opts}
    for key in fileconf:
        if key not in known and key != "seed":
            raise SystemExit(f"unknown config key {key!r} for this subcommand")
    out = {}
    for name, typ, default in opts:
        cli = getattr(args, name, None)
        if cli is not None:
            out[name] = cli
        elif name in fileconf:
            raw = fileconf[name]
            out[name] = (raw.lower() in ("1", "true", "yes")) if typ is bool else typ(raw)
        else:
            out[name] = default
    if args.seed is None and "seed" in fileconf:
        args.seed = int(fileconf["seed"])
    return out


def _seed(args) -> int:
    return args.seed if args.seed is not None else 0


def _frame_cfg(vals, sample_rate: int) -> FrameConfig:
    return FrameConfig(sample_rate=sample_rate, win_ms=vals["win_ms"], hop_ms=vals["hop_ms"],
                       n_fft=vals["n_fft"], n_mels=vals["n_mels"], fmin=vals["fmin"], fmax=vals["fmax"])


def _fop_cfg(vals, dropout: float, compat: bool) -> FopConfig:
    if compat:
        return add_compat_config(n_layers=vals["n_layers"], max_len=vals["max_len"], dropout_p=dropout)
    return FopConfig(d_feat=vals["d_feat"], d_model=vals["d_model"], n_heads=vals["n_heads"],
                     d_ff=vals["d_ff"], n_layers=vals["n_layers"], dropout_p=dropout,
                     max_len=vals["max_len"])


def _train_cfg(vals, seed: int, repeats: int = 1) -> TrainConfig:
    return TrainConfig(lr=vals["lr"], batch_size=vals["batch_size"], max_epochs=vals["max_epochs"],
                       patience=vals["patience"], val_fraction=vals["val_fraction"], seed=seed,
                       dropout_p=vals["dropout"], repeats=repeats)


def _cmd_synth(args) -> int:
    vals = _resolve(args, [("speakers", int, 8), ("utts", int, 10), ("duration", float, 0.5),
                           ("rate", int, 16000)])
    spec = SynthSpec(n_speakers=vals["speakers"], utterances_per_speaker=vals["utts"],
                     duration_s=vals["duration"], sample_rate=vals["rate"], seed=_seed(args))
    manifest = synth_corpus(spec, args.out)
    manifest_path = os.path.join(args.out, "manifest.csv")
    write_manifest(manifest, manifest_path)
    print(f"wrote {len(manifest)} utterances ({vals['speakers']} speakers) to {args.out}")
    print(f"manifest: {manifest_path}")
    return 0


def _cmd_featurize(args) -> int:
    vals = _resolve(args, _FRAME_OPTS)
    manifest = load_manifest(args.manifest)
    os.makedirs(args.out, exist_ok=True)
    cfg = None
    for u in manifest:
        wav = read_wav(u.audio_path)
        if cfg is None:
            cfg = _frame_cfg(vals, wav.sample_rate)
        feats = log_mel(wav, cfg)
        write_features(feats, os.path.join(args.out, f"{u.id}.fopf"))
    print(f"featurized {len(manifest)} utterances -> {args.out} "
          f"({cfg.n_mels} mels, {cfg.win_ms:g} ms window, {cfg.hop_ms:g} ms hop)")
    return 0


def _cmd_pretrain(args) -> int:
    vals = _resolve(args, _MODEL_OPTS + _TRAIN_OPTS)
    manifest = load_manifest(args.manifest)
    fop_cfg = _fop_cfg(vals, vals["dropout"], args.hypercolumn_add_compat)
    ckpt = pretrain(manifest, fop_cfg, _train_cfg(vals, _seed(args)))
    save_checkpoint(ckpt, args.out)
    p = ckpt.provenance
    print(f"pre-trained on {len(manifest)} utterances for {p['epochs_run']} epochs "
          f"(best epoch {p['best_epoch']})")
    print(f"train loss {float(p['initial_train_loss']):.4f} -> {float(p['final_train_loss']):.4f}, "
          f"best val loss {float(p['best_val_loss']):.4f}")
    print(f"checkpoint: {args.out}")
    return 0


def _cmd_finetune(args) -> int:
    vals = _resolve(args, _MODEL_OPTS + _TRAIN_OPTS)
    manifest = load_manifest(args.manifest)
    init = None if args.init == "none" else load_checkpoint(args.init)
    fop_cfg = None if init is not None else _fop_cfg(vals, vals["dropout"], False)
    ckpt = finetune(manifest, _train_cfg(vals, _seed(args)), init=init, fop_cfg=fop_cfg,
                    freeze_body=bool(args.freeze_body))
    save_checkpoint(ckpt, args.out)
    p = ckpt.provenance
    print(f"fine-tuned ({'pre-trained init' if init else 'from scratch'}) for {p['epochs_run']} epochs; "
          f"best val WA {float(p['best_val_wa']):.4f}")
    print(f"checkpoint: {args.out}")
    return 0


def _cmd_extract(args) -> int:
    manifest = load_manifest(args.manifest)
    ckpt = load_checkpoint(args.ckpt) if args.ckpt else None
    os.makedirs(args.out, exist_ok=True)
    pooled = pooled_features(manifest, args.kind, ckpt)
    for u, vec in zip(manifest, pooled):
        write_features(FeatureSequence(vec[None, :].astype(np.float32)),
                       os.path.join(args.out, f"{u.id}.fopf"))
    print(f"extracted pooled {args.kind} features ({pooled.shape[1]} dims) "
          f"for {len(manifest)} utterances -> {args.out}")
    return 0


def _cmd_train_clf(args) -> int:
    vals = _resolve(args, [("clf_lr", float, None), ("clf_epochs", int, None), ("clf_l2", float, None)])
    manifest = load_manifest(args.manifest)
    if not manifest.labeled:
        raise SystemExit("train-clf needs a fully labeled manifest")
    ckpt = load_checkpoint(args.ckpt) if args.ckpt else None
    X = pooled_features(manifest, args.kind, ckpt)
    mean, std = X.mean(axis=0), np.maximum(X.std(axis=0), 1e-8)
    labels = [u.label for u in manifest]
    defaults = ClassifierConfig()
    cfg = ClassifierConfig(lr=vals["clf_lr"] or defaults.lr,
                           max_epochs=vals["clf_epochs"] or defaults.max_epochs,
                           l2=defaults.l2 if vals["clf_l2"] is None else vals["clf_l2"])
    clf = train_classifier((X - mean) / std, labels, kind=args.clf, cfg=cfg,
                           rng=np.random.default_rng(_seed(args)))
    from .transfer import classify

    preds = [classify(clf, x)[0] for x in (X - mean) / std]
    acc = float(np.mean([p == t for p, t in zip(preds, labels)]))
    np.savez(args.out, kind=np.array(clf.kind), feature_kind=np.array(args.kind),
             weights=clf.weights, bias=clf.bias, mean=mean, std=std)
    print(f"trained {args.clf} classifier on pooled {args.kind} features; train WA {acc:.4f}")
    print(f"classifier: {args.out}")
    return 0


def _split_for_eval(manifest: CorpusManifest, args) -> list[tuple[str, CorpusManifest, CorpusManifest]]:
    if args.kfold:
        scheme, _, k = args.kfold.partition(":")
        if scheme != "sessions" or not k.isdigit():
            raise SystemExit(f"--kfold expects 'sessions:K', got {args.kfold!r}")
        folds = kfold_by_session(manifest, int(k))
        return [(f"fold{i}", train, test) for i, (train, test) in enumerate(folds)]
    n = args.test_speakers if args.test_speakers is not None else 2
    train, test = split_speaker_independent(manifest, n)
    return [("holdout", train, test)]


def _cmd_eval(args) -> int:
    vals = _resolve(args, _MODEL_OPTS + _TRAIN_OPTS)
    manifest = load_manifest(args.manifest)
    seed = _seed(args)
    repeats = args.repeats
    if args.pipeline == "finetune":
        init = None
        if args.init and args.init != "none":
            init = load_checkpoint(args.init)
        fop_cfg = None if init is not None else _fop_cfg(vals, vals["dropout"], False)
        fit_predict = finetune_fit_predict(_train_cfg(vals, seed, repeats), init=init, fop_cfg=fop_cfg,
                                           freeze_body=bool(args.freeze_body))
    else:
        ckpt = load_checkpoint(args.ckpt) if args.ckpt else None
        pretrain_on = load_manifest(args.pretrain_manifest) if args.pretrain_manifest else None
        fit_predict = classifier_fit_predict(
            args.kind, args.clf, ckpt=ckpt, pretrain_on=pretrain_on,
            fop_cfg=_fop_cfg(vals, vals["dropout"], False) if pretrain_on is not None else None,
            pretrain_cfg=_train_cfg(vals, seed) if pretrain_on is not None else None)

    items: list[tuple[str, str]] = [("pipeline", args.pipeline), ("seed", str(seed)),
                                    ("repeats", str(repeats))]
    fold_means = []
    for name, train_m, test_m in _split_for_eval(manifest, args):
        result = evaluate(fit_predict, train_m, test_m, repeats=repeats, base_seed=seed)
        print(f"== {name}: train {len(train_m)} / test {len(test_m)} utterances ==")
        print(result.table())
        print()
        prefix = "" if name == "holdout" else f"{name}_"
        items.extend((f"{prefix}{k}", v) for k, v in result.summary_items() if prefix or k != "repeats")
        fold_means.append(result.wa_mean)
    if len(fold_means) > 1:
        items.append(("cross_validation_wa_mean", f"{float(np.mean(fold_means)):.6f}"))
        print(f"cross-validation WA mean over {len(fold_means)} folds: {float(np.mean(fold_means)):.4f}")
    if args.summary:
        write_summary(items, args.summary)
        print(f"summary: {args.summary}")
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradsuite import tiny_grad_reports

    eps = args.eps if args.eps is not None else 1e-4
    threshold = args.threshold if args.threshold is not None else 1e-4
    ok = True
    for title, report in tiny_grad_reports(eps=eps, threshold=threshold):
        print(f"-- {title} --")
        print(report.summary())
        print()
        ok = ok and report.passed
    print("gradcheck:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fopser", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def new(name, helptext):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--seed", type=int, default=None, help="global RNG seed (default 0)")
        p.add_argument("--config", default=None, help="key = value config file; flags override it")
        return p

    p = new("synth", "generate a deterministic synthetic labeled corpus")
    p.add_argument("--out", required=True, help="output directory for WAVs and manifest.csv")
    _add_opts(p, [("speakers", int, 8), ("utts", int, 10), ("duration", float, 0.5), ("rate", int, 16000)])
    p.set_defaults(fn=_cmd_synth)

    p = new("featurize", "extract log-mel features to FOPF files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory for .fopf files")
    _add_opts(p, _FRAME_OPTS)
    p.set_defaults(fn=_cmd_featurize)

    p = new("pretrain", "unsupervised next-frame pre-training")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--hypercolumn-add-compat", action="store_true",
                   help="train at d_model=80 so additive hypercolumns are defined")
    _add_opts(p, _MODEL_OPTS + _TRAIN_OPTS)
    p.set_defaults(fn=_cmd_pretrain)

    p = new("finetune", "supervised emotion fine-tuning")
    p.add_argument("--manifest", required=True)
    p.add_argument("--init", required=True, help="checkpoint path, or 'none' for a fresh model")
    p.add_argument("--out", required=True)
    p.add_argument("--freeze-body", action="store_true", help="train only the projection head")
    _add_opts(p, _MODEL_OPTS + _TRAIN_OPTS)
    p.set_defaults(fn=_cmd_finetune)

    p = new("extract", "export pooled bottleneck features as FOPF files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt", default=None, help="pre-trained checkpoint (not needed for --kind F)")
    p.add_argument("--kind", required=True, choices=["F", "h1", "h2", "add", "concat"])
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_extract)

    p = new("train-clf", "train a linear classifier on pooled features")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--kind", required=True, choices=["F", "h1", "h2", "add", "concat"])
    p.add_argument("--clf", required=True, choices=["softmax", "svm"])
    p.add_argument("--out", required=True, help="output .npz classifier path")
    _add_opts(p, [("clf_lr", float, None), ("clf_epochs", int, None), ("clf_l2", float, None)])
    p.set_defaults(fn=_cmd_train_clf)

    p = new("eval", "repeat-based evaluation with derived seeds")
    p.add_argument("--manifest", required=True)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--test-speakers", type=int, default=None,
                   help="hold out the first N speakers as the test set (default 2)")
    p.add_argument("--kfold", default=None, help="'sessions:K' for session-level cross-validation")
    p.add_argument("--pipeline", choices=["finetune", "classifier"], default="finetune")
    p.add_argument("--init", default="none", help="finetune pipeline: checkpoint path or 'none'")
    p.add_argument("--freeze-body", action="store_true")
    p.add_argument("--ckpt", default=None, help="classifier pipeline: fixed pre-trained checkpoint")
    p.add_argument("--pretrain-manifest", default=None,
                   help="classifier pipeline: pre-train per repeat on this corpus")
    p.add_argument("--kind", default="F", choices=["F", "h1", "h2", "add", "concat"])
    p.add_argument("--clf", default="softmax", choices=["softmax", "svm"])
    p.add_argument("--summary", default=None, help="write key=value metrics here")
    _add_opts(p, _MODEL_OPTS + _TRAIN_OPTS)
    p.set_defaults(fn=_cmd_eval)

    p = new("gradcheck", "finite-difference validation of all gradients")
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(fn=_cmd_gradcheck)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
