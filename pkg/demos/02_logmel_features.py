# The DSP frontend: Hann-windowed STFT, HTK-mel triangular filterbank, and the
# 80-dimensional log-mel features every later stage consumes, plus the FOPF
# feature-file round trip.
#
# Run:  python demos/02_logmel_features.py

import os
import tempfile

import numpy as np

from fopser import (
    FrameConfig,
    Waveform,
    apply_norm,
    fit_norm,
    log_mel,
    mel_filterbank,
    read_features,
    stft_magnitude,
    write_features,
)

cfg = FrameConfig(sample_rate=16000)  # 25 ms window, 10 ms hop, 512 FFT, 80 mels
print(f"window {cfg.win_length} samples, hop {cfg.hop_length}, {cfg.n_mels} mel bins")

# A one-second A4 tone with a little noise.
t = np.arange(16000) / 16000
rng = np.random.default_rng(0)
x = 0.4 * np.sin(2 * np.pi * 440.0 * t) + rng.normal(0, 0.01, t.size)
wav = Waveform(np.clip(x, -1, 1).astype(np.float32), 16000)

mag = stft_magnitude(wav, cfg)
print(f"\nSTFT magnitude: {mag.shape} (frames x bins)")  # 98 x 257 for 1 s
peak_bin = int(np.median(mag.argmax(axis=1)))
print(f"median peak bin {peak_bin} -> {peak_bin * cfg.sample_rate / cfg.n_fft:.0f} Hz (tone at 440 Hz)")

fb = mel_filterbank(cfg)
print(f"\nfilterbank: {fb.shape}, all rows nonnegative with positive sums")
print(f"row sums range [{fb.sum(axis=1).min():.3f}, {fb.sum(axis=1).max():.3f}]")

feats = log_mel(wav, cfg)
print(f"\nlog-mel features: {feats.frames.shape}, dtype {feats.frames.dtype}")
hot = int(feats.frames.mean(axis=0).argmax())
print(f"most energetic mel band: {hot} (of 80)")

# Normalization statistics come from the training partition only.
stats = fit_norm([feats])
normed = apply_norm(feats, stats)
print(f"after z-norm: pooled mean {normed.frames.mean():.2e}, std {normed.frames.std():.4f}")

# FOPF files round-trip float32 losslessly.
path = os.path.join(tempfile.mkdtemp(prefix="fopser_demo_"), "tone.fopf")
write_features(feats, path)
back = read_features(path)
print(f"\nFOPF round trip bitwise equal: {np.array_equal(back.frames, feats.frames)}")
