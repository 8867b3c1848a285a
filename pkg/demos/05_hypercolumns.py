# Transfer path two: freeze the pre-trained model and read out per-frame
# representations at several depths. Fusing them (add for equal widths,
# concat in general) feeds compact linear classifiers.
#
# Run:  python demos/05_hypercolumns.py   (~1 min on a laptop CPU)

import tempfile

from fopser import (
    CorpusManifest,
    SynthSpec,
    TrainConfig,
    add_compat_config,
    classifier_fit_predict,
    evaluate,
    extract_feature,
    pretrain,
    split_speaker_independent,
    synth_corpus,
)
from fopser.corpus import read_wav, relabel
from fopser.features import FrameConfig, apply_norm, log_mel

workdir = tempfile.mkdtemp(prefix="fopser_demo_")
spec = SynthSpec(n_speakers=8, utterances_per_speaker=8, duration_s=0.4, sample_rate=16000, seed=5)
manifest = synth_corpus(spec, workdir)
train_side, test_m = split_speaker_independent(manifest, 2)
labeled = CorpusManifest(train_side.utterances[:28])
unlabeled = relabel(CorpusManifest(train_side.utterances[28:]), drop_labels=True)

# The additive fusion needs d_model == d_feat, so pre-train the 80-wide preset.
fop_cfg = add_compat_config(n_layers=2)
ckpt = pretrain(unlabeled, fop_cfg, TrainConfig(max_epochs=25, patience=5, batch_size=8, seed=1))
print(f"pre-trained compat model: d_model={ckpt.fop_cfg.d_model} (= d_feat)")

# Per-frame features at every depth for one utterance.
wav = read_wav(test_m.utterances[0].audio_path)
F = apply_norm(log_mel(wav, FrameConfig(sample_rate=16000)), ckpt.norm_stats)
for kind in ("F", "h1", "h2", "add", "concat"):
    feat = extract_feature(F, ckpt.params, ckpt.fop_cfg, kind)
    print(f"  kind {kind:6s} -> frames {feat.frames.shape}, pooled {feat.pooled.shape}")

# A small feature x classifier grid on pooled vectors (mean over time).
print("\nfeature x classifier grid, WA on the held-out speakers:")
print(f"{'feature':>8} {'softmax':>9} {'svm':>9}")
for kind in ("F", "h1", "h2", "add", "concat"):
    row = []
    for clf in ("softmax", "svm"):
        fit_predict = classifier_fit_predict(kind, clf, ckpt=ckpt)
        result = evaluate(fit_predict, labeled, test_m, repeats=1, base_seed=0)
        row.append(result.wa_mean)
    print(f"{kind:>8} {row[0]:>9.3f} {row[1]:>9.3f}")
