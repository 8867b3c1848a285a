import os
import wave

import numpy as np
import pytest

from fopser.corpus import (
    EMOTIONS,
    CorpusManifest,
    SynthSpec,
    Utterance,
    Waveform,
    kfold_by_session,
    load_manifest,
    read_wav,
    split_speaker_independent,
    synth_corpus,
    synth_utterance,
    write_manifest,
    write_wav,
)
from fopser.errors import CorpusError


def _write_csv(path, rows, header="id,path,speaker,session,label"):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(row + "\n")


def _manifest(entries):
    """entries: (id, speaker, session, label) tuples."""
    return CorpusManifest(tuple(Utterance(i, f"/tmp/{i}.wav", s, ses, lab) for i, s, ses, lab in entries))


# -- load_manifest ------------------------------------------------------------


def test_load_manifest_empty_corpus(tmp_path):
    path = tmp_path / "m.csv"
    _write_csv(path, [])
    with pytest.raises(CorpusError, match="empty corpus"):
        load_manifest(path)


def test_load_manifest_two_labeled_rows(tmp_path):
    path = tmp_path / "m.csv"
    _write_csv(path, ["u1,a.wav,spk1,ses1,angry", "u2,b.wav,spk1,ses1,sad"])
    m = load_manifest(path)
    assert len(m) == 2
    assert m.labeled
    assert [u.label for u in m] == ["angry", "sad"]
    assert m.utterances[0].audio_path == str(tmp_path / "a.wav")


def test_load_manifest_missing_label_unlabels_corpus(tmp_path):
    path = tmp_path / "m.csv"
    _write_csv(path, ["u1,a.wav,spk1,ses1,angry", "u2,b.wav,spk1,ses1,"])
    m = load_manifest(path)
    assert not m.labeled
    assert m.utterances[1].label is None


def test_load_manifest_malformed_row(tmp_path):
    path = tmp_path / "m.csv"
    _write_csv(path, ["u1,a.wav,spk1,ses1"])
    with pytest.raises(CorpusError, match="columns"):
        load_manifest(path)


def test_load_manifest_duplicate_id(tmp_path):
    path = tmp_path / "m.csv"
    _write_csv(path, ["u1,a.wav,spk1,ses1,angry", "u1,b.wav,spk2,ses1,sad"])
    with pytest.raises(CorpusError, match="duplicate"):
        load_manifest(path)


def test_load_manifest_unknown_label(tmp_path):
    path = tmp_path / "m.csv"
    _write_csv(path, ["u1,a.wav,spk1,ses1,bored"])
    with pytest.raises(CorpusError, match="unknown label"):
        load_manifest(path)


def test_load_manifest_missing_file(tmp_path):
    with pytest.raises(CorpusError, match="not found"):
        load_manifest(tmp_path / "nope.csv")


def test_load_manifest_bad_header(tmp_path):
    path = tmp_path / "m.csv"
    _write_csv(path, ["u1,a.wav,spk1,ses1,angry"], header="id,file,speaker,session,label")
    with pytest.raises(CorpusError, match="header"):
        load_manifest(path)


def test_manifest_round_trip(tmp_path):
    m = _manifest([("u1", "spk1", "ses1", "angry"), ("u2", "spk2", "ses1", None)])
    path = tmp_path / "m.csv"
    write_manifest(m, path)
    # round-trip compares everything except path resolution, which is absolute
    m2 = load_manifest(path)
    assert [(u.id, u.speaker_id, u.session_id, u.label) for u in m2] == [
        (u.id, u.speaker_id, u.session_id, u.label) for u in m
    ]
    # a manifest written next to its audio resolves back to the same absolute paths
    m3 = _manifest([("x", "spk1", "ses1", "happy")])
    m3 = CorpusManifest((Utterance("x", str(tmp_path / "x.wav"), "spk1", "ses1", "happy"),))
    write_manifest(m3, path)
    assert load_manifest(path).utterances[0].audio_path == str(tmp_path / "x.wav")


# -- WAV I/O -------------------------------------------------------------------


def test_read_wav_zeros(tmp_path):
    path = tmp_path / "z.wav"
    write_wav(Waveform(np.zeros(16000, dtype=np.float32), 16000), path)
    w = read_wav(path)
    assert w.sample_rate == 16000
    assert w.samples.shape == (16000,)
    assert np.all(w.samples == 0.0)


def test_read_wav_scaling_extremes(tmp_path):
    path = tmp_path / "s.wav"
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(8000)
        wf.writeframes(np.array([32767, -32768], dtype="<i2").tobytes())
    w = read_wav(path)
    assert w.samples[0] == pytest.approx(32767 / 32768)
    assert w.samples[1] == -1.0


def test_read_wav_rejects_stereo_and_wide_samples(tmp_path):
    stereo = tmp_path / "st.wav"
    with wave.open(str(stereo), "wb") as wf:
        wf.setnchannels(2)
        wf.setsampwidth(2)
        wf.setframerate(8000)
        wf.writeframes(np.zeros(64, dtype="<i2").tobytes())
    with pytest.raises(CorpusError, match="mono"):
        read_wav(stereo)
    wide = tmp_path / "w.wav"
    with wave.open(str(wide), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(4)
        wf.setframerate(8000)
        wf.writeframes(np.zeros(64, dtype="<i4").tobytes())
    with pytest.raises(CorpusError, match="16-bit"):
        read_wav(wide)


def test_read_wav_truncated(tmp_path):
    path = tmp_path / "t.wav"
    write_wav(Waveform(np.zeros(1000, dtype=np.float32), 8000), path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 500])
    with pytest.raises(CorpusError):
        read_wav(path)


def test_wav_round_trip_is_exact_for_quantized_values(tmp_path):
    rng = np.random.default_rng(3)
    quantized = rng.integers(-32768, 32768, size=500).astype(np.float64) / 32768.0
    path = tmp_path / "q.wav"
    write_wav(Waveform(quantized.astype(np.float32), 16000), path)
    back = read_wav(path)
    np.testing.assert_array_equal(back.samples, quantized.astype(np.float32))


# -- synthetic corpus ----------------------------------------------------------


def test_synth_corpus_deterministic_bytes(tmp_path):
    spec = SynthSpec(n_speakers=2, utterances_per_speaker=4, duration_s=0.2, seed=7)
    m1 = synth_corpus(spec, tmp_path / "a")
    m2 = synth_corpus(spec, tmp_path / "b")
    assert len(m1) == len(m2) == 8
    for u1, u2 in zip(m1, m2):
        assert open(u1.audio_path, "rb").read() == open(u2.audio_path, "rb").read()


def test_synth_corpus_counts_and_label_cycle(tmp_path):
    spec = SynthSpec(n_speakers=2, utterances_per_speaker=4, duration_s=0.2, seed=7)
    m = synth_corpus(spec, tmp_path)
    assert len(m) == 8
    for cls in EMOTIONS:
        assert sum(u.label == cls for u in m) == 2
    # speakers pair into sessions
    assert m.sessions() == ["ses01"]
    assert m.speakers() == ["spk01", "spk02"]


def test_synth_corpus_unwritable_directory(tmp_path):
    locked = tmp_path / "locked"
    locked.mkdir()
    locked.chmod(0o500)
    try:
        spec = SynthSpec(n_speakers=1, utterances_per_speaker=1, duration_s=0.1)
        if os.access(locked, os.W_OK):  # running as root bypasses permissions
            pytest.skip("permissions not enforced for this user")
        with pytest.raises(CorpusError, match="writable|create"):
            synth_corpus(spec, locked / "sub")
    finally:
        locked.chmod(0o700)


def test_synth_corpus_seeds_differ():
    spec_a = SynthSpec(n_speakers=1, utterances_per_speaker=1, duration_s=0.2, seed=1)
    spec_b = SynthSpec(n_speakers=1, utterances_per_speaker=1, duration_s=0.2, seed=2)
    _, wav_a = synth_utterance(spec_a, 0, 0)
    _, wav_b = synth_utterance(spec_b, 0, 0)
    assert not np.array_equal(wav_a.samples[:100], wav_b.samples[:100])


# -- splits ---------------------------------------------------------------------


def test_split_speaker_independent_first_speakers():
    m = _manifest([(f"u{i}", f"spk{1 + i % 4}", "ses1", "angry") for i in range(12)])
    train, test = split_speaker_independent(m, 2)
    assert set(test.speakers()) == {"spk1", "spk2"}
    assert set(train.speakers()) == {"spk3", "spk4"}


def test_split_speaker_independent_rejects_all_speakers():
    m = _manifest([("u1", "spk1", "ses1", None), ("u2", "spk2", "ses1", None)])
    with pytest.raises(CorpusError):
        split_speaker_independent(m, 2)


def test_split_partition_property():
    rng = np.random.default_rng(11)
    for _ in range(20):
        n_spk = int(rng.integers(2, 6))
        utts = [(f"u{i}", f"spk{rng.integers(1, n_spk + 1)}", "ses1", None) for i in range(int(rng.integers(5, 30)))]
        m = _manifest(utts)
        n_test = int(rng.integers(1, len(m.speakers())))
        train, test = split_speaker_independent(m, n_test)
        assert len(train) + len(test) == len(m)
        assert set(u.id for u in train).isdisjoint(u.id for u in test)
        assert set(train.speakers()).isdisjoint(test.speakers())


def test_kfold_by_session_one_session_per_fold():
    m = _manifest([(f"u{i}", f"spk{i % 10}", f"ses{1 + i % 5}", None) for i in range(30)])
    folds = kfold_by_session(m, 5)
    assert len(folds) == 5
    for _, test in folds:
        assert len(test.sessions()) == 1
    tested = [test.sessions()[0] for _, test in folds]
    assert sorted(tested) == sorted(m.sessions())


def test_kfold_rejects_k1_and_too_few_sessions():
    m = _manifest([("u1", "spk1", "ses1", None), ("u2", "spk2", "ses2", None)])
    with pytest.raises(CorpusError):
        kfold_by_session(m, 1)
    with pytest.raises(CorpusError):
        kfold_by_session(m, 3)


def test_kfold_partition_property():
    m = _manifest([(f"u{i}", f"spk{i % 7}", f"ses{1 + i % 7}", None) for i in range(40)])
    folds = kfold_by_session(m, 3)
    all_test_ids = [u.id for _, test in folds for u in test]
    assert sorted(all_test_ids) == sorted(u.id for u in m)  # disjoint cover
    for train, test in folds:
        assert len(train) + len(test) == len(m)
        assert set(u.id for u in train).isdisjoint(all for all in (u.id for u in test))


# -- type invariants -------------------------------------------------------------


def test_utterance_rejects_empty_speaker_or_session():
    with pytest.raises(CorpusError):
        Utterance("u1", "a.wav", "", "ses1")
    with pytest.raises(CorpusError):
        Utterance("u1", "a.wav", "spk1", "")


def test_manifest_rejects_duplicate_ids():
    with pytest.raises(CorpusError):
        _manifest([("u1", "spk1", "ses1", None), ("u1", "spk2", "ses1", None)])


def test_waveform_invariants():
    with pytest.raises(CorpusError):
        Waveform(np.array([]), 16000)
    with pytest.raises(CorpusError):
        Waveform(np.array([np.nan]), 16000)
    with pytest.raises(CorpusError):
        Waveform(np.zeros(4), 0)


def test_synth_spec_invariants():
    with pytest.raises(CorpusError):
        SynthSpec(n_speakers=0, utterances_per_speaker=1)
    with pytest.raises(CorpusError):
        SynthSpec(n_speakers=1, utterances_per_speaker=1, duration_s=0.0)
