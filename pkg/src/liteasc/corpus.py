"""WAV ingestion and TSV corpus manifests."""

from __future__ import annotations

import os
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional

import numpy as np

SCENES = (
    "airport",
    "bus",
    "metro",
    "metro_station",
    "park",
    "public_square",
    "shopping_mall",
    "street_pedestrian",
    "street_traffic",
    "tram",
)
SCENE_INDEX = {name: i for i, name in enumerate(SCENES)}

PCM_SCALE = 32768.0


class WavError(ValueError):
    """Base class for unsupported or malformed WAV input."""


class NotPCMError(WavError):
    pass


class ChannelCountError(WavError):
    pass


class BitDepthError(WavError):
    pass


class ManifestError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioClip holds mono samples only")
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioClip samples must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def read_wav(path) -> AudioClip:
    """Decode a mono 16-bit PCM WAV file to samples in [-1, 1)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such WAV file: {path}")
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        msg = str(exc)
        if msg.startswith("unknown format"):
            raise NotPCMError(f"{path}: not PCM encoded ({msg})") from exc
        raise WavError(f"{path}: {msg}") from exc
    except EOFError as exc:
        raise WavError(f"{path}: truncated RIFF header") from exc
    if channels != 1:
        raise ChannelCountError(f"{path}: expected 1 channel, found {channels}")
    if width != 2:
        raise BitDepthError(f"{path}: expected 16-bit samples, found {8 * width}-bit")
    ints = np.frombuffer(raw, dtype="<i2")
    if ints.size == 0:
        raise WavError(f"{path}: empty data chunk")
    return AudioClip(ints.astype(np.float64) / PCM_SCALE, rate)


def encode_pcm16(samples: np.ndarray) -> np.ndarray:
    """Quantize unit-range samples to little-endian int16 (clipped, rounded)."""
    scaled = np.rint(np.asarray(samples, dtype=np.float64) * PCM_SCALE)
    return np.clip(scaled, -32768, 32767).astype("<i2")


def write_wav(path, clip: AudioClip) -> None:
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(encode_pcm16(clip.samples).tobytes())


@dataclass(frozen=True)
class Record:
    path: str
    scene: str
    device: str
    city: str
    # Augmentation provenance; empty for original recordings.
    source: str = ""

    @property
    def label(self) -> int:
        return SCENE_INDEX[self.scene]


@dataclass
class CorpusManifest:
    records: List[Record] = field(default_factory=list)
    root: Optional[Path] = None

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def resolve(self, record: Record) -> Path:
        """Absolute location of a record's file; relative paths hang off the manifest directory."""
        p = Path(record.path)
        if p.is_absolute() or self.root is None:
            return p
        return self.root / p

    def devices(self) -> List[str]:
        return sorted({r.device for r in self.records})


def _check_record(fields: List[str], lineno: int) -> Record:
    if len(fields) not in (4, 5):
        raise ManifestError(f"expected 4 tab-separated columns, found {len(fields)}", lineno)
    path, scene, device, city = fields[:4]
    source = fields[4] if len(fields) == 5 else ""
    if not path:
        raise ManifestError("empty path", lineno)
    if scene not in SCENE_INDEX:
        raise ManifestError(f"unknown scene label {scene!r}", lineno)
    if not device:
        raise ManifestError("empty device id", lineno)
    return Record(path, scene, device, city, source)


def parse_manifest(text: str, root: Optional[Path] = None) -> CorpusManifest:
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if lineno == 1 and line.startswith("filename"):
            continue
        records.append(_check_record(line.split("\t"), lineno))
    return CorpusManifest(records, root)


def load_manifest(path) -> CorpusManifest:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return parse_manifest(text, root=path.parent.resolve())


def format_manifest(records: Iterable[Record], header: bool = True) -> str:
    lines = []
    records = list(records)
    tagged = any(r.source for r in records)
    if header:
        cols = ["filename", "scene_label", "source_label", "identifier"]
        lines.append("\t".join(cols + (["augmentation"] if tagged else [])))
    for r in records:
        cols = [r.path, r.scene, r.device, r.city]
        if tagged:
            cols.append(r.source)
        lines.append("\t".join(cols))
    return "\n".join(lines) + ("\n" if lines else "")


def save_manifest(path, manifest: CorpusManifest, header: bool = True) -> None:
    Path(path).write_text(format_manifest(manifest.records, header), encoding="utf-8")


def relpath(target, start) -> str:
    return os.path.relpath(str(target), str(start))
