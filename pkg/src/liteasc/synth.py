"""Synthetic tone corpora for smoke tests and demos."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import SCENES, AudioClip, CorpusManifest, Record, save_manifest, write_wav

GATE_RATES_HZ = (0.0, 3.0, 6.0, 10.0, 15.0)
LOW_BAND_HZ = (250.0, 2000.0)
HIGH_BAND_HZ = (4500.0, 15000.0)


def class_frequency(label: int) -> float:
    """Classes 0-4 sit below ~2 kHz (low mel half), classes 5-9 above 4.5 kHz."""
    lo, hi = LOW_BAND_HZ if label < 5 else HIGH_BAND_HZ
    return lo * (hi / lo) ** ((label % 5) / 4)


def tone_clip(label: int, rng: np.random.Generator, duration: float = 0.75,
              sample_rate: int = 44100, noise: float = 1e-3) -> AudioClip:
    """Class-specific sine over faint noise, square-gated at a class-specific rate.

    Phase, level, gate phase and a +-2% detune are drawn from ``rng``.
    """
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    freq = class_frequency(label) * rng.uniform(0.98, 1.02)
    amp = rng.uniform(0.2, 0.5)
    x = amp * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
    rate = GATE_RATES_HZ[label % 5]
    if rate:
        x *= 0.5 * (1.0 + np.sign(np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))))
    x += noise * rng.standard_normal(n)
    return AudioClip(np.clip(x, -1.0, 32767 / 32768), sample_rate)


def write_tone_corpus(out_dir, per_class: int = 8, seed: int = 0, duration: float = 0.75,
                      devices: Sequence[str] = ("a",), sample_rate: int = 44100) -> CorpusManifest:
    """Write ``per_class`` clips for each scene plus ``manifest.tsv`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for label, scene in enumerate(SCENES):
        for k in range(per_class):
            device = devices[k % len(devices)]
            name = f"{scene}-{k:03d}-{device}.wav"
            write_wav(out / name, tone_clip(label, rng, duration, sample_rate))
            records.append(Record(name, scene, device, "synth"))
    manifest = CorpusManifest(records, out.resolve())
    save_manifest(out / "manifest.tsv", manifest)
    return manifest
