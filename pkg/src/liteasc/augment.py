"""Mix-up, spectrum correction, pitch shift and same-scene audio mixing."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import AudioClip

CORRECTION_FLOOR = 1e-10
TECHNIQUES = ("mixup", "speccorr", "pitch", "audiomix", "all")


@dataclass
class AugmentConfig:
    alpha: float = 0.4
    n_pairs: int = 150
    pitch_factors: Tuple[float, ...] = (0.90, 0.95, 1.05, 1.10)
    audiomix_range: Tuple[float, float] = (0.4, 0.6)
    reference_devices: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.n_pairs < 1:
            raise ValueError("n_pairs must be at least 1")
        if any(f <= 0 for f in self.pitch_factors):
            raise ValueError("pitch factors must be positive")
        low, high = self.audiomix_range
        if not 0.0 <= low <= high <= 1.0:
            raise ValueError(f"audiomix range must satisfy 0 <= low <= high <= 1, got {self.audiomix_range}")


@dataclass(frozen=True)
class DeviceResponse:
    device: str
    response: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.response, dtype=np.float64)
        if r.ndim != 1 or np.any(r < 0) or not np.all(np.isfinite(r)):
            raise ValueError("device response must be a finite non-negative vector")
        object.__setattr__(self, "response", r)


# -- mix-up -------------------------------------------------------------------

def sample_beta(alpha: float, rng: np.random.Generator) -> float:
    """Draw from Beta(alpha, alpha) as g1 / (g1 + g2) with g ~ Gamma(alpha, 1)."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    while True:
        g1, g2 = rng.standard_gamma(alpha, size=2)
        total = g1 + g2
        # Tiny alpha can underflow both draws or round the ratio onto the boundary.
        if total > 0:
            lam = g1 / total
            if 0.0 < lam < 1.0:
                return float(lam)


def mixup_batches(xi, yi, xj, yj, alpha: float = 0.4,
                  rng: Optional[np.random.Generator] = None,
                  lam: Optional[float] = None):
    """Blend two whole batches with one shared weight.

    Returns ``(x_mixed, y_mixed, lam)``. Passing ``lam`` bypasses the Beta
    draw; otherwise ``rng`` is required.
    """
    xi, xj = np.asarray(xi), np.asarray(xj)
    yi, yj = np.asarray(yi), np.asarray(yj)
    if xi.shape != xj.shape:
        raise ValueError(f"batch shapes differ: {xi.shape} vs {xj.shape}")
    if yi.shape != yj.shape:
        raise ValueError(f"label shapes differ: {yi.shape} vs {yj.shape}")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if lam is None:
        if rng is None:
            raise ValueError("either rng or lam must be given")
        lam = sample_beta(alpha, rng)
    if lam == 1.0:
        return xi.copy(), yi.copy(), 1.0
    if lam == 0.0:
        return xj.copy(), yj.copy(), 0.0
    x = lam * xi + (1.0 - lam) * xj
    y = lam * yi + (1.0 - lam) * yj
    return x.astype(xi.dtype, copy=False), y, float(lam)


# -- spectrum correction --------------------------------------------------------

def estimate_device_response(spectra: Sequence[np.ndarray], n_pairs: int = 150,
                             device: str = "") -> DeviceResponse:
    """Mean magnitude per frequency bin over the first ``n_pairs`` power spectrograms."""
    if len(spectra) < n_pairs:
        raise ValueError(f"need {n_pairs} spectrograms for device {device!r}, got {len(spectra)}")
    total = None
    for spec in spectra[:n_pairs]:
        per_clip = np.sqrt(np.asarray(spec, dtype=np.float64)).mean(axis=1)
        total = per_clip if total is None else total + per_clip
    return DeviceResponse(device, total / n_pairs)


def reference_response(responses: Sequence[DeviceResponse]) -> DeviceResponse:
    if not responses:
        raise ValueError("reference needs at least one device response")
    stacked = np.stack([r.response for r in responses])
    return DeviceResponse("reference", stacked.mean(axis=0))


def correction_coefficient(reference: DeviceResponse, device: DeviceResponse) -> np.ndarray:
    ref, dev = reference.response, device.response
    if ref.shape != dev.shape:
        raise ValueError(f"response lengths differ: {ref.shape[0]} vs {dev.shape[0]}")
    return ref / np.maximum(dev, CORRECTION_FLOOR)


def apply_spectrum_correction(spec: np.ndarray, coefficient: np.ndarray) -> np.ndarray:
    """Scale magnitudes per bin by ``coefficient``; power bins scale by its square."""
    spec = np.asarray(spec)
    coefficient = np.asarray(coefficient, dtype=np.float64)
    if coefficient.shape != (spec.shape[0],):
        raise ValueError(f"coefficient length {coefficient.shape} does not match {spec.shape[0]} bins")
    return spec * (coefficient ** 2)[:, None]


def device_corrections(spectra_by_device: Dict[str, Sequence[np.ndarray]], n_pairs: int,
                       reference_devices: Optional[Sequence[str]] = None) -> Dict[str, np.ndarray]:
    """Correction vector per device towards the mean response of ``reference_devices``."""
    responses = {dev: estimate_device_response(specs, n_pairs, dev)
                 for dev, specs in spectra_by_device.items()}
    chosen = sorted(responses) if reference_devices is None else list(reference_devices)
    missing = [d for d in chosen if d not in responses]
    if missing:
        raise ValueError(f"reference devices without data: {missing}")
    ref = reference_response([responses[d] for d in chosen])
    return {dev: correction_coefficient(ref, resp) for dev, resp in responses.items()}


# -- time-domain augmentations --------------------------------------------------

def pitch_shift(clip: AudioClip, factor: float) -> AudioClip:
    """Resample by linear interpolation at positions ``i * factor``, keeping the original length."""
    if factor <= 0:
        raise ValueError(f"pitch factor must be positive, got {factor}")
    x = clip.samples
    n = x.shape[0]
    if factor == 1.0:
        return AudioClip(x.copy(), clip.sample_rate)
    n_valid = int(np.floor((n - 1) / factor)) + 1
    positions = np.arange(min(n_valid, n)) * factor
    out = np.interp(positions, np.arange(n), x)
    if out.shape[0] < n:
        out = np.concatenate([out, np.full(n - out.shape[0], out[-1])])
    return AudioClip(out, clip.sample_rate)


def audio_mix(a: AudioClip, b: AudioClip, label_a: str, label_b: str,
              rng: Optional[np.random.Generator] = None,
              mix_range: Tuple[float, float] = (0.4, 0.6),
              weight: Optional[float] = None) -> AudioClip:
    """Convex blend of two recordings of the same scene."""
    if label_a != label_b:
        raise ValueError(f"audio-mix needs clips of one scene, got {label_a!r} and {label_b!r}")
    if len(a) != len(b):
        raise ValueError(f"clip lengths differ: {len(a)} vs {len(b)}")
    if a.sample_rate != b.sample_rate:
        raise ValueError(f"sample rates differ: {a.sample_rate} vs {b.sample_rate}")
    if weight is None:
        if rng is None:
            raise ValueError("either rng or weight must be given")
        weight = rng.uniform(*mix_range)
    return AudioClip(weight * a.samples + (1.0 - weight) * b.samples, a.sample_rate)


# -- augmentation plan files --------------------------------------------------

@dataclass
class PlanStep:
    technique: str
    params: Dict[str, str] = field(default_factory=dict)


def parse_plan(text: str) -> List[PlanStep]:
    """Parse ``technique<TAB>key=value,...`` lines; ``#`` starts a comment."""
    steps = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 1)
        technique = parts[0].lower()
        if technique not in TECHNIQUES:
            raise ValueError(f"plan line {lineno}: unknown technique {technique!r}")
        params = {}
        if len(parts) == 2:
            for item in parts[1].split(","):
                item = item.strip()
                if not item:
                    continue
                if "=" not in item:
                    raise ValueError(f"plan line {lineno}: expected key=value, got {item!r}")
                key, value = item.split("=", 1)
                params[key.strip()] = value.strip()
        steps.append(PlanStep(technique, params))
    return steps


def expand_plan(steps: Sequence[PlanStep]) -> List[PlanStep]:
    """Replace ``all`` with one step per technique, sharing its parameters."""
    out = []
    for step in steps:
        if step.technique == "all":
            out.extend(PlanStep(t, dict(step.params)) for t in TECHNIQUES[:-1])
        else:
            out.append(step)
    return out
