"""Log-mel spectrogram with delta and delta-delta channels.

The default chain turns a 10 s, 44.1 kHz clip into a 128 x 423 x 3 feature
map: Hamming frames of 2048 samples at 50% overlap, power spectrum, a
128-band triangular mel filterbank, natural log, then first and second
order regression deltas stacked along the channel axis.
"""

from __future__ import annotations

import struct
from functools import lru_cache
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .augment import apply_spectrum_correction
from .corpus import AudioClip

WINDOW_LENGTH = 2048
HOP_LENGTH = 1024
N_MELS = 128
TARGET_WIDTH = 423
LOG_FLOOR = 1e-10
DELTA_WIDTH = 2

FEAT_MAGIC = b"FEAT"
FEAT_VERSION = 1


def hamming(n: int) -> np.ndarray:
    """Symmetric Hamming window, w[k] = 0.54 - 0.46 cos(2 pi k / (n - 1))."""
    if n == 1:
        return np.ones(1)
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def frame_signal(clip: AudioClip, window_length: int = WINDOW_LENGTH,
                 hop: int = HOP_LENGTH) -> np.ndarray:
    """Slice a clip into Hamming-windowed frames, shape (frames, window_length)."""
    x = np.asarray(clip.samples if isinstance(clip, AudioClip) else clip, dtype=np.float64)
    if hop < 1:
        raise ValueError("hop must be at least 1")
    if x.shape[0] < window_length:
        raise ValueError(
            f"clip shorter than window ({x.shape[0]} < {window_length} samples)")
    n_frames = (x.shape[0] - window_length) // hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(x, window_length)[::hop][:n_frames]
    return frames * hamming(window_length)


def power_spectrum(frames: np.ndarray) -> np.ndarray:
    """|DFT|^2 of each windowed frame, returned as (bins, frames)."""
    frames = np.atleast_2d(frames)
    spec = np.fft.rfft(frames, axis=1)
    return (spec.real ** 2 + spec.imag ** 2).T


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def _mel_filterbank(n_mels: int, fft_size: int, sample_rate: int) -> np.ndarray:
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.max(axis=1) <= 0.0)
    if empty.size:
        raise ValueError(
            f"{n_mels} mel bands are too narrow for a {fft_size}-point FFT at "
            f"{sample_rate} Hz: band {int(empty[0])} covers no frequency bin")
    fb.setflags(write=False)
    return fb


def mel_filterbank(n_mels: int = N_MELS, fft_size: int = WINDOW_LENGTH,
                   sample_rate: int = 44100) -> np.ndarray:
    """Triangular filters with centres uniform on the mel scale, shape (n_mels, fft_size // 2 + 1).

    Filter ``i`` rises from edge ``i`` to edge ``i + 1`` and falls to edge
    ``i + 2``; the ``n_mels + 2`` edges are equally spaced in mel between 0 Hz
    and Nyquist. The returned array is shared and read-only.
    """
    return _mel_filterbank(int(n_mels), int(fft_size), int(sample_rate))


def log_mel(spec: np.ndarray, fb: np.ndarray) -> np.ndarray:
    return np.log(fb @ spec + LOG_FLOOR)


def _delta(c: np.ndarray, width: int = DELTA_WIDTH) -> np.ndarray:
    n_frames = c.shape[1]
    padded = np.pad(c, ((0, 0), (width, width)), mode="edge")
    out = np.zeros_like(c, dtype=np.float64)
    for n in range(1, width + 1):
        out += n * (padded[:, width + n:width + n + n_frames]
                    - padded[:, width - n:width - n + n_frames])
    return out / (2.0 * sum(n * n for n in range(1, width + 1)))


def deltas(lms: np.ndarray, width: int = DELTA_WIDTH) -> Tuple[np.ndarray, np.ndarray]:
    """Regression deltas along the frame axis with edge replication."""
    lms = np.asarray(lms, dtype=np.float64)
    if lms.shape[1] < 2 * width + 1:
        raise ValueError(f"need at least {2 * width + 1} frames for deltas, got {lms.shape[1]}")
    d = _delta(lms, width)
    return d, _delta(d, width)


def assemble_feature(lms: np.ndarray, delta: np.ndarray, delta_delta: np.ndarray,
                     target_width: int = TARGET_WIDTH) -> np.ndarray:
    """Stack the three channels and crop or pad the frame axis to ``target_width``.

    Excess frames are cropped symmetrically (the extra odd frame comes off the
    end); short inputs are padded by repeating the last frame.
    """
    if not (lms.shape == delta.shape == delta_delta.shape):
        raise ValueError(
            f"channel shapes differ: {lms.shape}, {delta.shape}, {delta_delta.shape}")
    stacked = np.stack([lms, delta, delta_delta], axis=-1)
    width = stacked.shape[1]
    if width > target_width:
        start = (width - target_width) // 2
        stacked = stacked[:, start:start + target_width]
    elif width < target_width:
        tail = np.repeat(stacked[:, -1:], target_width - width, axis=1)
        stacked = np.concatenate([stacked, tail], axis=1)
    return np.ascontiguousarray(stacked)


def spectrogram(clip: AudioClip, window_length: int = WINDOW_LENGTH,
                hop: int = HOP_LENGTH) -> np.ndarray:
    return power_spectrum(frame_signal(clip, window_length, hop))


def feature_from_spectrogram(spec: np.ndarray, sample_rate: int, n_mels: int = N_MELS,
                             target_width: int = TARGET_WIDTH) -> np.ndarray:
    fft_size = 2 * (spec.shape[0] - 1)
    lms = log_mel(spec, mel_filterbank(n_mels, fft_size, sample_rate))
    d, dd = deltas(lms)
    return assemble_feature(lms, d, dd, target_width)


def extract_feature(clip: AudioClip, n_mels: int = N_MELS, target_width: int = TARGET_WIDTH,
                    correction: Optional[np.ndarray] = None) -> np.ndarray:
    """Full clip-to-feature chain; ``correction`` optionally rescales spectrum magnitudes per bin."""
    spec = spectrogram(clip)
    if correction is not None:
        spec = apply_spectrum_correction(spec, correction)
    return feature_from_spectrogram(spec, clip.sample_rate, n_mels, target_width)


def write_feature(path, feature: np.ndarray) -> None:
    feature = np.asarray(feature)
    if feature.ndim != 3:
        raise ValueError(f"feature map must be rank 3, got shape {feature.shape}")
    header = FEAT_MAGIC + struct.pack("<4I", FEAT_VERSION, *feature.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(feature, dtype="<f4").tobytes())


def read_feature(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != FEAT_MAGIC:
        raise ValueError(f"{path}: not a FEAT file")
    version, h, w, c = struct.unpack_from("<4I", data, 4)
    if version != FEAT_VERSION:
        raise ValueError(f"{path}: unsupported FEAT version {version}")
    payload = np.frombuffer(data, dtype="<f4", offset=20)
    if payload.size != h * w * c:
        raise ValueError(f"{path}: payload holds {payload.size} values, header says {h * w * c}")
    return payload.reshape(h, w, c).astype(np.float32)
