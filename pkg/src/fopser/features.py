"""DSP frontend: framed STFT, HTK-mel filterbank, 80-dim log-mel features,
per-dimension normalization, and the FOPF feature-file format.

FOPF layout (all integers little-endian): magic ``FOPF``, u32 version=1,
u32 n_frames, u32 n_mels, then n_frames*n_mels float32 values, time-major.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .corpus import Waveform
from .errors import FormatError

FOPF_MAGIC = b"FOPF"
FOPF_VERSION = 1

_STD_EPS = 1e-8


@dataclass(frozen=True)
class FrameConfig:
    """Framing and filterbank parameters for log-mel extraction."""

    sample_rate: int
    win_ms: float = 25.0
    hop_ms: float = 10.0
    n_fft: int = 512
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float | None = None  # defaults to sample_rate / 2
    log_floor: float = 1e-6

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.win_length < 1 or self.hop_length < 1:
            raise ValueError("window and hop must be at least one sample")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if self.n_fft < self.win_length:
            raise ValueError(f"n_fft={self.n_fft} smaller than window of {self.win_length} samples")
        if not 0 <= self.fmin < self.fmax_hz <= self.sample_rate / 2:
            raise ValueError(f"need 0 <= fmin < fmax <= sample_rate/2, got [{self.fmin}, {self.fmax_hz}]")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    @property
    def win_length(self) -> int:
        return int(round(self.sample_rate * self.win_ms / 1000.0))

    @property
    def hop_length(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))

    @property
    def fmax_hz(self) -> float:
        return self.sample_rate / 2.0 if self.fmax is None else self.fmax


@dataclass(frozen=True)
class FeatureSequence:
    """T x n_mels matrix of log-mel frames, row t = frame at timestep t."""

    frames: np.ndarray
    frame_config: FrameConfig | None = None

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError("frames must be a non-empty 2-D matrix")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("frames contain non-finite values")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_dims(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class NormStats:
    """Per-dimension mean/std, fitted on the training partition only."""

    mean: np.ndarray
    std: np.ndarray


def hz_to_mel(f):
    """HTK mel scale: mel(f) = 2595 * log10(1 + f/700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def frame_count(n_samples: int, cfg: FrameConfig) -> int:
    """T = 1 + floor((len - win) / hop); requires at least one full window."""
    if n_samples < cfg.win_length:
        raise ValueError(f"waveform of {n_samples} samples is shorter than one {cfg.win_length}-sample window")
    return 1 + (n_samples - cfg.win_length) // cfg.hop_length


def stft_magnitude(w: Waveform, cfg: FrameConfig) -> np.ndarray:
    """Hann-windowed magnitude spectra, T x (n_fft/2 + 1), first frame at sample 0."""
    if w.sample_rate != cfg.sample_rate:
        raise ValueError(f"waveform rate {w.sample_rate} != config rate {cfg.sample_rate}")
    x = np.asarray(w.samples, dtype=np.float64)
    win, hop = cfg.win_length, cfg.hop_length
    T = frame_count(x.size, cfg)
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[:: hop][:T]
    # periodic Hann
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)
    return np.abs(np.fft.rfft(frames * window, n=cfg.n_fft, axis=1))


def mel_filterbank(cfg: FrameConfig) -> np.ndarray:
    """Triangular filters on the HTK mel scale, n_mels x (n_fft/2 + 1).

    Centers are equally spaced in mel between fmin and fmax; every row is
    non-negative with a strictly positive sum.
    """
    n_bins = cfg.n_fft // 2 + 1
    mel_pts = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax_hz), cfg.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    if np.any(np.diff(hz_pts) <= 0):
        raise ValueError(f"degenerate mel band: [{cfg.fmin}, {cfg.fmax_hz}] Hz too narrow for {cfg.n_mels} filters")
    bin_freqs = np.arange(n_bins, dtype=np.float64) * cfg.sample_rate / cfg.n_fft
    left, center, right = hz_pts[:-2, None], hz_pts[1:-1, None], hz_pts[2:, None]
    rising = (bin_freqs[None, :] - left) / (center - left)
    falling = (right - bin_freqs[None, :]) / (right - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    if np.any(fb.sum(axis=1) <= 0):
        raise ValueError(f"degenerate mel band: some filters cover no FFT bin (n_fft={cfg.n_fft})")
    return fb


def log_mel(w: Waveform, cfg: FrameConfig) -> FeatureSequence:
    """log(filterbank @ magnitude + log_floor), one row per frame, float32."""
    mag = stft_magnitude(w, cfg)
    mel = mag @ mel_filterbank(cfg).T
    return FeatureSequence(np.log(mel + cfg.log_floor).astype(np.float32), cfg)


def fit_norm(train: list[FeatureSequence]) -> NormStats:
    """Per-dimension mean/std pooled over all frames of the training sequences."""
    if not train:
        raise ValueError("cannot fit normalization on an empty sequence list")
    pooled = np.concatenate([f.frames for f in train], axis=0).astype(np.float64)
    if pooled.shape[0] < 2:
        raise ValueError("need at least 2 total frames to fit normalization")
    mean = pooled.mean(axis=0)
    std = np.maximum(pooled.std(axis=0), _STD_EPS)
    return NormStats(mean.astype(np.float32), std.astype(np.float32))


def apply_norm(f: FeatureSequence, stats: NormStats) -> FeatureSequence:
    """(x - mean) / std per dimension."""
    if stats.mean.shape[0] != f.n_dims:
        raise ValueError(f"stats of width {stats.mean.shape[0]} do not match features of width {f.n_dims}")
    frames = (f.frames.astype(np.float64) - stats.mean) / stats.std
    return FeatureSequence(frames.astype(np.float32), f.frame_config)


def write_features(f: FeatureSequence, path: str | os.PathLike) -> None:
    """Write a FOPF file (lossless float32 round-trip)."""
    frames = np.ascontiguousarray(f.frames, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(FOPF_MAGIC)
        fh.write(struct.pack("<III", FOPF_VERSION, frames.shape[0], frames.shape[1]))
        fh.write(frames.tobytes())


def read_features(path: str | os.PathLike) -> FeatureSequence:
    """Read a FOPF file; the frame configuration is not persisted by the format."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated header ({len(blob)} bytes)")
    if blob[:4] != FOPF_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {FOPF_MAGIC!r}")
    version, n_frames, n_mels = struct.unpack("<III", blob[4:16])
    if version != FOPF_VERSION:
        raise FormatError(f"{path}: unsupported version {version}, expected {FOPF_VERSION}")
    expected = 4 * n_frames * n_mels
    payload = blob[16:]
    if len(payload) != expected:
        raise FormatError(f"{path}: truncated payload ({len(payload)} bytes, header promises {expected})")
    frames = np.frombuffer(payload, dtype="<f4").reshape(n_frames, n_mels).copy()
    return FeatureSequence(frames)
