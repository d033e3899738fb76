import math
import struct

import numpy as np
import pytest

import oracles
from liteasc.corpus import AudioClip
from liteasc.features import (
    LOG_FLOOR,
    assemble_feature,
    deltas,
    extract_feature,
    frame_signal,
    hamming,
    hz_to_mel,
    log_mel,
    mel_filterbank,
    mel_to_hz,
    power_spectrum,
    read_feature,
    write_feature,
)


def _clip(n, seed=0, rate=44100):
    return AudioClip(np.random.default_rng(seed).uniform(-0.5, 0.5, n), rate)


def test_frame_count_ten_seconds():
    assert frame_signal(_clip(441000)).shape == (429, 2048)


def test_single_frame_boundary():
    assert frame_signal(_clip(2048)).shape == (1, 2048)


def test_short_clip_rejected():
    with pytest.raises(ValueError, match="shorter than window"):
        frame_signal(_clip(2047))


def test_frames_are_windowed():
    clip = _clip(4096, seed=3)
    frames = frame_signal(clip)
    n = np.arange(2048)
    w = 0.54 - 0.46 * np.cos(2 * np.pi * n / 2047)
    assert np.allclose(frames[1], clip.samples[1024:3072] * w, rtol=0, atol=1e-15)
    assert hamming(2048)[0] == pytest.approx(0.08)


def test_zero_frame_power():
    assert np.all(power_spectrum(np.zeros((1, 2048))) == 0.0)


def test_power_matches_brute_force_dft():
    frame = np.random.default_rng(1).normal(size=64)
    ours = power_spectrum(frame[None])[:, 0]
    assert np.allclose(ours, oracles.dft_power(frame), rtol=1e-10, atol=1e-10)


def test_cosine_peaks_at_its_bin():
    n = np.arange(2048)
    frame = np.cos(2 * np.pi * 10 * n / 2048) * hamming(2048)
    spec = power_spectrum(frame[None])[:, 0]
    assert spec.shape == (1025,)
    assert int(np.argmax(spec)) == 10
    # bins around the peak against a literal DFT sum
    for k in (9, 10, 11):
        re = sum(frame[t] * math.cos(2 * math.pi * k * t / 2048) for t in range(2048))
        im = sum(frame[t] * math.sin(2 * math.pi * k * t / 2048) for t in range(2048))
        assert spec[k] == pytest.approx(re * re + im * im, rel=1e-9)


def test_parseval():
    frame = frame_signal(_clip(2048, seed=5))[0]
    spec = power_spectrum(frame[None])[:, 0]
    # bins 1..N/2-1 stand for their mirrored twins too
    total = spec[0] + spec[-1] + 2 * spec[1:-1].sum()
    assert total == pytest.approx(2048 * np.sum(frame ** 2), rel=1e-6)


def test_mel_of_700():
    assert float(hz_to_mel(700.0)) == pytest.approx(781.17, abs=5e-3)
    assert float(mel_to_hz(hz_to_mel(1234.5))) == pytest.approx(1234.5, rel=1e-12)


def test_filterbank_rows():
    fb = mel_filterbank()
    assert fb.shape == (128, 1025)
    assert np.all(fb >= 0)
    assert np.all(fb.max(axis=1) > 0)
    assert np.all(fb.max(axis=1) <= 1.0)
    assert not fb.flags.writeable


def test_filterbank_partition_between_centres():
    fb = mel_filterbank()
    edges = 700.0 * (10 ** (np.linspace(0, 2595 * math.log10(1 + 22050 / 700), 130) / 2595) - 1)
    freqs = np.arange(1025) * 44100 / 2048
    checked = 0
    for i in range(127):
        lo, hi = edges[i + 1], edges[i + 2]
        for k in np.flatnonzero((freqs >= lo) & (freqs <= hi)):
            f = freqs[k]
            falling = (hi - f) / (hi - lo)
            rising = (f - lo) / (hi - lo)
            assert fb[i, k] == pytest.approx(falling, abs=1e-12)
            assert fb[i + 1, k] == pytest.approx(rising, abs=1e-12)
            assert fb[i, k] + fb[i + 1, k] == pytest.approx(1.0, abs=1e-12)
            checked += 1
    assert checked > 500


def test_filterbank_too_fine_for_fft():
    with pytest.raises(ValueError, match="too narrow"):
        mel_filterbank(256, 256, 8000)


def test_log_mel_floor():
    fb = mel_filterbank()
    out = log_mel(np.zeros((1025, 7)), fb)
    assert out.shape == (128, 7)
    assert np.all(out == np.log(LOG_FLOOR))
    assert out[0, 0] == pytest.approx(-23.0259, abs=1e-4)


def test_log_mel_scale_shift():
    fb = mel_filterbank()
    spec = np.random.default_rng(2).uniform(1.0, 5.0, (1025, 9))
    diff = log_mel(10 * spec, fb) - log_mel(spec, fb)
    assert np.allclose(diff, math.log(10), atol=1e-9)


def test_deltas_constant_is_zero():
    d, dd = deltas(np.full((4, 12), 3.25))
    assert np.all(d == 0) and np.all(dd == 0)


def test_deltas_linear_slope():
    s = 0.7
    lms = np.tile(s * np.arange(20.0), (3, 1))
    d, _ = deltas(lms)
    assert np.allclose(d[:, 2:-2], s, rtol=0, atol=1e-12)


def test_deltas_match_loop_oracle():
    lms = np.random.default_rng(4).normal(size=(128, 20))
    d, dd = deltas(lms)
    ref_d = oracles.delta(lms)
    assert np.allclose(d, ref_d, rtol=0, atol=1e-13)
    assert np.allclose(dd, oracles.delta(ref_d), rtol=0, atol=1e-13)


def test_deltas_need_five_frames():
    with pytest.raises(ValueError):
        deltas(np.zeros((2, 4)))


def _numbered(width):
    base = np.tile(np.arange(width, dtype=float), (2, 1))
    return base, base + 1000, base + 2000


def test_assemble_crop():
    out = assemble_feature(*_numbered(429), target_width=423)
    assert out.shape == (2, 423, 3)
    assert out[0, 0, 0] == 3 and out[0, -1, 0] == 425
    assert out[0, 0, 1] == 1003 and out[0, 0, 2] == 2003


def test_assemble_exact_fit():
    parts = _numbered(423)
    out = assemble_feature(*parts, target_width=423)
    assert np.array_equal(out[..., 0], parts[0])


def test_assemble_pad():
    out = assemble_feature(*_numbered(420), target_width=423)
    assert out[0, 419:, 0].tolist() == [419, 419, 419, 419]


def test_assemble_shape_mismatch():
    with pytest.raises(ValueError):
        assemble_feature(np.zeros((2, 5)), np.zeros((2, 5)), np.zeros((2, 6)))


def test_ten_second_feature_end_to_end(tmp_path):
    clip = _clip(441000, seed=9)
    feat = extract_feature(clip)
    assert feat.shape == (128, 423, 3)
    assert np.all(np.isfinite(feat))
    again = extract_feature(AudioClip(clip.samples.copy(), 44100))
    assert feat.tobytes() == again.tobytes()


def test_silence_stays_finite():
    feat = extract_feature(AudioClip(np.zeros(44100), 44100), target_width=40)
    assert np.all(np.isfinite(feat))


def test_feat_file_layout(tmp_path):
    feat = np.random.default_rng(0).normal(size=(4, 5, 3)).astype(np.float32)
    path = tmp_path / "x.feat"
    write_feature(path, feat)
    raw = path.read_bytes()
    assert raw[:4] == b"FEAT"
    assert struct.unpack_from("<4I", raw, 4) == (1, 4, 5, 3)
    assert len(raw) == 20 + feat.size * 4
    assert np.array_equal(read_feature(path), feat)


def test_feat_bad_magic(tmp_path):
    path = tmp_path / "bad.feat"
    path.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(ValueError):
        read_feature(path)
