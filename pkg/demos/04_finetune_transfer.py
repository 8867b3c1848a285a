# Transfer path one: replace the prediction head with global average pooling
# plus an emotion projection and fine-tune the whole model. Compares the
# pre-trained arm against training the same architecture from scratch.
#
# Run:  python demos/04_finetune_transfer.py   (~2 min on a laptop CPU)

import tempfile
from dataclasses import replace

from fopser import (
    CorpusManifest,
    FopConfig,
    SynthSpec,
    TrainConfig,
    evaluate,
    finetune,
    predict_labels,
    pretrain,
    split_speaker_independent,
    synth_corpus,
)
from fopser.corpus import relabel

workdir = tempfile.mkdtemp(prefix="fopser_demo_")
spec = SynthSpec(n_speakers=8, utterances_per_speaker=10, duration_s=0.4, sample_rate=16000, seed=21)
manifest = synth_corpus(spec, workdir)

# Speakers 1-2 are never trained on; of the rest, 32 labeled utterances feed
# fine-tuning and the remainder pre-train without labels.
train_side, test_m = split_speaker_independent(manifest, 2)
labeled = CorpusManifest(train_side.utterances[:32])
unlabeled = relabel(CorpusManifest(train_side.utterances[32:]), drop_labels=True)
print(f"labeled {len(labeled)} / unlabeled {len(unlabeled)} / test {len(test_m)}")

fop_cfg = FopConfig(d_feat=80, d_model=32, n_heads=4, d_ff=64, n_layers=2, max_len=256)
pre_cfg = TrainConfig(max_epochs=30, patience=5, batch_size=8)
ft_cfg = TrainConfig(max_epochs=40, patience=8, batch_size=8)


def warm(train_m, test, seed):
    ckpt = pretrain(unlabeled, fop_cfg, replace(pre_cfg, seed=seed))
    tuned = finetune(train_m, replace(ft_cfg, seed=seed), init=ckpt)
    return predict_labels(tuned, test)


def cold(train_m, test, seed):
    tuned = finetune(train_m, replace(ft_cfg, seed=seed), init=None, fop_cfg=fop_cfg)
    return predict_labels(tuned, test)


# Each repeat retrains with a derived seed; the guard refuses speaker overlap.
warm_result = evaluate(warm, labeled, test_m, repeats=3, base_seed=0)
cold_result = evaluate(cold, labeled, test_m, repeats=3, base_seed=0)

print("\npre-trained fine-tuning:")
print(warm_result.table())
print("\nfrom-scratch fine-tuning:")
print(cold_result.table())
print(f"\nmean WA: pre-trained {warm_result.wa_mean:.3f} vs scratch {cold_result.wa_mean:.3f}")
