import numpy as np
import pytest

from fopser.checkpoint import save_checkpoint
from fopser.corpus import CorpusManifest, SynthSpec, Utterance, synth_corpus
from fopser.features import FrameConfig
from fopser.model import FopConfig
from fopser.training import (
    TrainConfig,
    corpus_features,
    evaluate,
    finetune,
    finetune_fit_predict,
    predict_labels,
    pretrain,
    split_validation,
    write_summary,
)

SMALL_FOP = FopConfig(d_feat=80, d_model=16, n_heads=4, d_ff=24, n_layers=2, max_len=256)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    spec = SynthSpec(n_speakers=4, utterances_per_speaker=4, duration_s=0.25, seed=3)
    return synth_corpus(spec, out)


def test_corpus_features_consistent_rate(corpus, tmp_path):
    feats = corpus_features(corpus)
    assert len(feats) == len(corpus)
    assert all(f.n_dims == 80 for f in feats.values())
    with pytest.raises(ValueError, match="sample rate"):
        corpus_features(corpus, FrameConfig(sample_rate=8000))


def test_split_validation_stratified_and_seeded():
    utts = tuple(
        Utterance(f"u{s}_{i}", f"/x/u{s}_{i}.wav", f"spk{s}", "ses1", "angry")
        for s in range(4)
        for i in range(5)
    )
    m = CorpusManifest(utts)
    train, val = split_validation(m, 0.2, np.random.default_rng(0))
    assert len(val) == 4
    assert len(train) == 16
    assert set(val.speakers()) == set(m.speakers())  # one utterance per speaker
    train2, val2 = split_validation(m, 0.2, np.random.default_rng(0))
    assert [u.id for u in val2] == [u.id for u in val]
    _, val3 = split_validation(m, 0.2, np.random.default_rng(1))
    assert [u.id for u in val3] != [u.id for u in val]


def test_split_validation_single_utterance_keeps_train():
    m = CorpusManifest((Utterance("u0", "/x/u0.wav", "spk1", "ses1", None),))
    train, val = split_validation(m, 0.5, np.random.default_rng(0))
    assert len(train) == 1
    assert len(val) == 0


def test_pretrain_deterministic_bitwise(corpus, tmp_path):
    tc = TrainConfig(max_epochs=2, patience=5, batch_size=8, seed=11)
    c1 = pretrain(corpus, SMALL_FOP, tc)
    c2 = pretrain(corpus, SMALL_FOP, tc)
    p1, p2 = tmp_path / "a.fopc", tmp_path / "b.fopc"
    save_checkpoint(c1, p1)
    save_checkpoint(c2, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_pretrain_best_checkpoint_rule(corpus):
    tc = TrainConfig(max_epochs=6, patience=6, batch_size=8, seed=5)
    ckpt = pretrain(corpus, SMALL_FOP, tc)
    prov = ckpt.provenance
    assert float(prov["best_val_loss"]) <= float(prov["final_val_loss"]) + 1e-12
    assert int(prov["epochs_run"]) <= tc.max_epochs
    assert int(prov["epochs_run"]) - int(prov["best_epoch"]) <= tc.patience


def test_pretrain_rejects_empty_and_short(tmp_path, corpus):
    with pytest.raises(ValueError, match="empty"):
        pretrain(CorpusManifest(()), SMALL_FOP, TrainConfig(max_epochs=1))
    # all utterances shorter than 2 frames: impossible with real WAVs of this
    # corpus, so synthesize a manifest whose audio is one window long
    import fopser.corpus as fc

    wav = fc.Waveform(np.zeros(420, dtype=np.float32), 16000)  # 26 ms -> 1 frame
    path = tmp_path / "tiny.wav"
    fc.write_wav(wav, path)
    m = CorpusManifest((Utterance("t", str(path), "spk1", "ses1", None),))
    with pytest.raises(ValueError, match="shorter than 2 frames"):
        pretrain(m, SMALL_FOP, TrainConfig(max_epochs=1))


def test_pretrain_chunks_long_utterances(corpus):
    # max_len far below the ~23 frames per utterance: training must chunk,
    # not error and not truncate
    chunked_cfg = FopConfig(d_feat=80, d_model=16, n_heads=4, d_ff=24, n_layers=2, max_len=8)
    tc = TrainConfig(max_epochs=1, patience=1, batch_size=8, seed=0)
    ckpt = pretrain(corpus, chunked_cfg, tc)
    assert ckpt.fop_cfg.max_len == 8
    assert float(ckpt.provenance["final_train_loss"]) > 0.0


def test_finetune_requires_labels(corpus):
    unlabeled = CorpusManifest(tuple(Utterance(u.id, u.audio_path, u.speaker_id, u.session_id, None) for u in corpus))
    with pytest.raises(ValueError, match="labeled"):
        finetune(unlabeled, TrainConfig(max_epochs=1))


def test_finetune_head_shape_both_arms(corpus):
    tc = TrainConfig(max_epochs=1, patience=1, batch_size=8, seed=0)
    scratch = finetune(corpus, tc, init=None, fop_cfg=SMALL_FOP)
    assert scratch.head.w_y.data.shape == (16, 4)
    pre = pretrain(corpus, SMALL_FOP, TrainConfig(max_epochs=1, batch_size=8, seed=0))
    warm = finetune(corpus, tc, init=pre)
    assert warm.head.w_y.data.shape == (16, 4)
    assert warm.provenance["pretrained"] == "1"
    # warm start reuses the checkpoint's normalization
    np.testing.assert_array_equal(warm.norm_stats.mean, pre.norm_stats.mean)


def test_finetune_freeze_body_only_trains_head(corpus):
    tc = TrainConfig(max_epochs=2, patience=5, batch_size=8, seed=1)
    pre = pretrain(corpus, SMALL_FOP, TrainConfig(max_epochs=1, batch_size=8, seed=1))
    tuned = finetune(corpus, tc, init=pre, freeze_body=True)
    for (_, a), (_, b) in zip(pre.params.named_tensors(), tuned.params.named_tensors()):
        np.testing.assert_array_equal(a.data, b.data)  # body untouched
    assert tuned.provenance["freeze_body"] == "1"


def test_finetune_early_stopping_bound(corpus):
    tc = TrainConfig(max_epochs=50, patience=2, batch_size=8, seed=2)
    ckpt = finetune(corpus, tc, init=None, fop_cfg=SMALL_FOP)
    prov = ckpt.provenance
    assert int(prov["epochs_run"]) <= 50
    assert int(prov["epochs_run"]) - int(prov["best_epoch"]) <= 2


def test_predict_labels_requires_head(corpus):
    pre = pretrain(corpus, SMALL_FOP, TrainConfig(max_epochs=1, batch_size=8))
    with pytest.raises(ValueError, match="head"):
        predict_labels(pre, corpus)


def test_evaluate_guards(corpus):
    train = CorpusManifest(tuple(u for u in corpus if u.speaker_id != "spk01"))
    test = CorpusManifest(tuple(u for u in corpus if u.speaker_id == "spk01"))
    with pytest.raises(ValueError, match="overlap"):
        evaluate(lambda a, b, s: [], corpus, test)
    unlabeled_test = CorpusManifest(
        tuple(Utterance(u.id, u.audio_path, u.speaker_id, u.session_id, None) for u in test)
    )
    with pytest.raises(ValueError, match="labeled"):
        evaluate(lambda a, b, s: [], train, unlabeled_test)


def test_evaluate_repeats_and_derived_seeds(corpus):
    train = CorpusManifest(tuple(u for u in corpus if u.speaker_id != "spk01"))
    test = CorpusManifest(tuple(u for u in corpus if u.speaker_id == "spk01"))
    seen = []

    def fake_fit_predict(train_m, test_m, seed):
        seen.append(seed)
        rng = np.random.default_rng(seed)
        from fopser.corpus import EMOTIONS

        return [EMOTIONS[i] for i in rng.integers(0, 4, len(test_m))]

    r1 = evaluate(fake_fit_predict, train, test, repeats=3, base_seed=10)
    assert seen == [10, 11, 12]
    assert r1.repeats == 3
    assert r1.confusion.sum() == len(test)
    r2 = evaluate(fake_fit_predict, train, test, repeats=3, base_seed=10)
    assert r1.wa_per_repeat == r2.wa_per_repeat  # reproducible end to end


def test_evaluate_single_repeat_degenerate(corpus):
    train = CorpusManifest(tuple(u for u in corpus if u.speaker_id != "spk01"))
    test = CorpusManifest(tuple(u for u in corpus if u.speaker_id == "spk01"))
    result = evaluate(lambda a, b, s: [u.label for u in b], train, test, repeats=1)
    assert result.wa_mean == 1.0
    assert result.wa_std == 0.0


def test_finetune_pipeline_end_to_end(corpus):
    train = CorpusManifest(tuple(u for u in corpus if u.speaker_id != "spk01"))
    test = CorpusManifest(tuple(u for u in corpus if u.speaker_id == "spk01"))
    tc = TrainConfig(max_epochs=2, patience=5, batch_size=8)
    result = evaluate(finetune_fit_predict(tc, fop_cfg=SMALL_FOP), train, test, repeats=2, base_seed=0)
    assert result.repeats == 2
    assert all(0.0 <= wa <= 1.0 for wa in result.wa_per_repeat)


def test_write_summary(tmp_path):
    path = tmp_path / "s.txt"
    write_summary([("wa_mean", "0.9"), ("note", "x")], path)
    assert path.read_text() == "wa_mean=0.9\nnote=x\n"
