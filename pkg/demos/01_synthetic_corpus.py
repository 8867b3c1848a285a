# Build a deterministic synthetic labeled speech corpus and slice it the two
# ways the evaluation protocol needs: a speaker-independent holdout and a
# session-level k-fold.
#
# Run:  python demos/01_synthetic_corpus.py

import tempfile

from fopser import SynthSpec, kfold_by_session, read_wav, split_speaker_independent, synth_corpus

workdir = tempfile.mkdtemp(prefix="fopser_demo_")

# Ten speakers pair into five sessions; labels cycle angry/happy/sad/neutral.
# Identical (spec, seed) regenerates byte-identical WAV files.
spec = SynthSpec(n_speakers=10, utterances_per_speaker=4, duration_s=0.4, sample_rate=16000, seed=7)
manifest = synth_corpus(spec, workdir)

print(f"wrote {len(manifest)} utterances under {workdir}")
print(f"speakers: {manifest.speakers()}")
print(f"sessions: {manifest.sessions()}")
print(f"fully labeled: {manifest.labeled}")

wav = read_wav(manifest.utterances[0].audio_path)
print(f"\nfirst utterance: {manifest.utterances[0].id}, label={manifest.utterances[0].label}")
print(f"  {wav.samples.size} samples at {wav.sample_rate} Hz, peak {abs(wav.samples).max():.3f}")

# Speaker-independent split: the first two speakers become the test set and
# never appear in training (no speaker-identity leakage).
train, test = split_speaker_independent(manifest, 2)
print(f"\nholdout: train {len(train)} utterances / test {len(test)} utterances")
print(f"  test speakers: {test.speakers()}")
assert not set(train.speakers()) & set(test.speakers())

# Session-level five-fold: each session's utterances are tested exactly once.
folds = kfold_by_session(manifest, 5)
print("\nsession 5-fold:")
for i, (ftrain, ftest) in enumerate(folds):
    print(f"  fold {i}: test session {ftest.sessions()[0]}, {len(ftrain)}/{len(ftest)} train/test")
