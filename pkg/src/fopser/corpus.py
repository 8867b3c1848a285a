"""Corpus handling: CSV manifests, PCM-16 WAV I/O, synthetic labeled audio,
and speaker/session-aware splits.

The manifest is a plain CSV with header ``id,path,speaker,session,label``
(label may be empty).  Paths are stored relative to the manifest's directory
on disk and resolved to absolute paths in memory.
"""

from __future__ import annotations

import csv
import os
import wave
from dataclasses import dataclass, replace

import numpy as np

from .errors import CorpusError

EMOTIONS = ("angry", "happy", "sad", "neutral")

_MANIFEST_HEADER = ["id", "path", "speaker", "session", "label"]

# int16 full scale used for WAV encode/decode
_PCM_SCALE = 32768.0


@dataclass(frozen=True)
class Utterance:
    """One speech recording with speaker/session identity and an optional label."""

    id: str
    audio_path: str
    speaker_id: str
    session_id: str
    label: str | None = None

    def __post_init__(self):
        if not self.speaker_id or not self.session_id:
            raise CorpusError(f"utterance {self.id!r}: speaker and session must be non-empty")
        if self.label is not None and self.label not in EMOTIONS:
            raise CorpusError(f"utterance {self.id!r}: unknown label {self.label!r}")


@dataclass(frozen=True)
class CorpusManifest:
    """An ordered collection of utterances; ids are unique within a manifest."""

    utterances: tuple[Utterance, ...]

    def __post_init__(self):
        seen = set()
        for u in self.utterances:
            if u.id in seen:
                raise CorpusError(f"duplicate utterance id {u.id!r}")
            seen.add(u.id)

    @property
    def labeled(self) -> bool:
        """True iff every utterance carries a label."""
        return all(u.label is not None for u in self.utterances)

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def speakers(self) -> list[str]:
        """Distinct speaker ids in order of first appearance."""
        return list(dict.fromkeys(u.speaker_id for u in self.utterances))

    def sessions(self) -> list[str]:
        """Distinct session ids in order of first appearance."""
        return list(dict.fromkeys(u.session_id for u in self.utterances))


@dataclass(frozen=True)
class Waveform:
    """Mono audio: float samples in [-1, 1] at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise CorpusError("waveform must be a non-empty 1-D sample array")
        if not np.all(np.isfinite(self.samples)):
            raise CorpusError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise CorpusError("sample rate must be positive")


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a deterministic synthetic labeled corpus."""

    n_speakers: int
    utterances_per_speaker: int
    duration_s: float = 0.5
    sample_rate: int = 16000
    seed: int = 0

    def __post_init__(self):
        if self.n_speakers < 1 or self.utterances_per_speaker < 1:
            raise CorpusError("speaker and utterance counts must be >= 1")
        if self.duration_s <= 0:
            raise CorpusError("duration_s must be positive")


def load_manifest(path: str | os.PathLike) -> CorpusManifest:
    """Load a CSV manifest; relative audio paths resolve against its directory."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise CorpusError(f"manifest not found: {path}")
    base = os.path.dirname(os.path.abspath(path))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CorpusError(f"{path}: missing header row") from None
        if header != _MANIFEST_HEADER:
            raise CorpusError(f"{path}: bad header {header!r}, expected {_MANIFEST_HEADER!r}")
        utts = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(_MANIFEST_HEADER):
                raise CorpusError(f"{path}:{lineno}: expected {len(_MANIFEST_HEADER)} columns, got {len(row)}")
            uid, rel, speaker, session, label = (c.strip() for c in row)
            audio = rel if os.path.isabs(rel) else os.path.normpath(os.path.join(base, rel))
            utts.append(Utterance(uid, audio, speaker, session, label or None))
    if not utts:
        raise CorpusError(f"{path}: empty corpus (no data rows)")
    return CorpusManifest(tuple(utts))


def write_manifest(manifest: CorpusManifest, path: str | os.PathLike) -> None:
    """Write a manifest as CSV; audio paths are stored relative to `path`'s directory."""
    path = os.fspath(path)
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_MANIFEST_HEADER)
        for u in manifest:
            rel = os.path.relpath(u.audio_path, base)
            writer.writerow([u.id, rel, u.speaker_id, u.session_id, u.label or ""])


def read_wav(path: str | os.PathLike) -> Waveform:
    """Read a RIFF/WAVE file (PCM 16-bit mono only); samples scaled by 1/32768."""
    path = os.fspath(path)
    try:
        with wave.open(path, "rb") as wf:
            if wf.getcomptype() != "NONE":
                raise CorpusError(f"{path}: only uncompressed PCM is supported")
            if wf.getnchannels() != 1:
                raise CorpusError(f"{path}: expected mono, got {wf.getnchannels()} channels")
            if wf.getsampwidth() != 2:
                raise CorpusError(f"{path}: expected 16-bit samples, got {8 * wf.getsampwidth()}-bit")
            rate = wf.getframerate()
            n = wf.getnframes()
            raw = wf.readframes(n)
    except (wave.Error, EOFError) as exc:
        raise CorpusError(f"{path}: not a readable WAV file ({exc})") from exc
    if len(raw) != 2 * n:
        raise CorpusError(f"{path}: truncated payload ({len(raw)} bytes for {n} frames)")
    if n == 0:
        raise CorpusError(f"{path}: no samples")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / np.float32(_PCM_SCALE)
    return Waveform(samples, rate)


def write_wav(w: Waveform, path: str | os.PathLike) -> None:
    """Write a mono PCM-16 WAV; float samples are clipped to the int16 range."""
    pcm = np.clip(np.round(np.asarray(w.samples, dtype=np.float64) * _PCM_SCALE), -32768, 32767)
    with wave.open(os.fspath(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(w.sample_rate)
        wf.writeframes(pcm.astype("<i2").tobytes())


def _class_signal(label: str, t: np.ndarray, pitch_scale: float, duration: float) -> np.ndarray:
    """Per-class carrier: classes differ in spectro-temporal dynamics, not loudness."""
    if label == "angry":
        # square-ish carrier with a fast 8 Hz amplitude tremor
        carrier = np.sign(np.sin(2 * np.pi * 220.0 * pitch_scale * t))
        return carrier * (0.55 + 0.45 * np.sin(2 * np.pi * 8.0 * t))
    if label == "happy":
        # rising chirp, 300 -> 900 Hz over the utterance
        f0, f1 = 300.0 * pitch_scale, 900.0 * pitch_scale
        phase = 2 * np.pi * (f0 * t + (f1 - f0) * t * t / (2.0 * duration))
        return np.sin(phase)
    if label == "sad":
        # low slow sine with a 2 Hz tremor
        return np.sin(2 * np.pi * 150.0 * pitch_scale * t) * (0.75 + 0.25 * np.sin(2 * np.pi * 2.0 * t))
    # neutral: fixed tone
    return np.sin(2 * np.pi * 440.0 * pitch_scale * t)


def synth_utterance(spec: SynthSpec, speaker_idx: int, utterance_idx: int) -> tuple[str, Waveform]:
    """Deterministically render one labeled utterance of the synthetic corpus."""
    label = EMOTIONS[utterance_idx % len(EMOTIONS)]
    n = int(round(spec.duration_s * spec.sample_rate))
    t = np.arange(n, dtype=np.float64) / spec.sample_rate
    # fixed per-speaker pitch offset within +/-10%
    spk_rng = np.random.default_rng([spec.seed, 7, speaker_idx])
    pitch_scale = 1.0 + spk_rng.uniform(-0.10, 0.10)
    clean = _class_signal(label, t, pitch_scale, spec.duration_s)
    clean = 0.5 * clean / np.max(np.abs(clean))
    # additive Gaussian noise at 20 dB SNR
    utt_rng = np.random.default_rng([spec.seed, 11, speaker_idx, utterance_idx])
    noise_rms = np.sqrt(np.mean(clean**2)) / 10.0
    samples = np.clip(clean + utt_rng.normal(0.0, noise_rms, n), -1.0, 1.0)
    return label, Waveform(samples.astype(np.float32), spec.sample_rate)


def synth_corpus(spec: SynthSpec, out_dir: str | os.PathLike) -> CorpusManifest:
    """Generate WAV files for a synthetic corpus under `out_dir` and return its manifest.

    Labels cycle through the four emotion classes per speaker; speakers are
    paired into sessions (two per session).  Output bytes are a pure function
    of (spec, seed).
    """
    out_dir = os.path.abspath(os.fspath(out_dir))
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise CorpusError(f"cannot create output directory {out_dir}: {exc}") from exc
    if not os.access(out_dir, os.W_OK):
        raise CorpusError(f"output directory not writable: {out_dir}")
    utts = []
    for s in range(spec.n_speakers):
        speaker = f"spk{s + 1:02d}"
        session = f"ses{s // 2 + 1:02d}"
        for u in range(spec.utterances_per_speaker):
            label, wav = synth_utterance(spec, s, u)
            uid = f"{speaker}_u{u:03d}"
            path = os.path.join(out_dir, f"{uid}.wav")
            write_wav(wav, path)
            utts.append(Utterance(uid, path, speaker, session, label))
    return CorpusManifest(tuple(utts))


def split_speaker_independent(m: CorpusManifest, n_test_speakers: int) -> tuple[CorpusManifest, CorpusManifest]:
    """Hold out all utterances of the first `n_test_speakers` distinct speakers as the test set."""
    speakers = m.speakers()
    if not 1 <= n_test_speakers < len(speakers):
        raise CorpusError(
            f"need 1 <= n_test_speakers < {len(speakers)} distinct speakers, got {n_test_speakers}"
        )
    test_set = set(speakers[:n_test_speakers])
    train = tuple(u for u in m if u.speaker_id not in test_set)
    test = tuple(u for u in m if u.speaker_id in test_set)
    return CorpusManifest(train), CorpusManifest(test)


def kfold_by_session(m: CorpusManifest, k: int) -> list[tuple[CorpusManifest, CorpusManifest]]:
    """Session-level k-fold: each session's utterances appear in exactly one test fold.

    Sessions (in first-appearance order) are dealt round-robin over the k folds.
    """
    if k < 2:
        raise CorpusError(f"k must be >= 2, got {k}")
    sessions = m.sessions()
    if len(sessions) < k:
        raise CorpusError(f"need at least {k} distinct sessions, got {len(sessions)}")
    fold_of = {ses: i % k for i, ses in enumerate(sessions)}
    folds = []
    for fold in range(k):
        test = tuple(u for u in m if fold_of[u.session_id] == fold)
        train = tuple(u for u in m if fold_of[u.session_id] != fold)
        folds.append((CorpusManifest(train), CorpusManifest(test)))
    return folds


def relabel(m: CorpusManifest, drop_labels: bool) -> CorpusManifest:
    """Return a copy with labels removed (for pre-training corpora)."""
    if not drop_labels:
        return m
    return CorpusManifest(tuple(replace(u, label=None) for u in m))
