import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kwscl.audio_io import AudioClip, AudioError, synth_noise, synth_sine
from kwscl import dsp


def direct_power(frame, n_fft=512):
    """O(N^2) DFT of the zero-padded frame, bins 0..n_fft/2."""
    x = np.zeros(n_fft)
    x[: len(frame)] = frame
    n = np.arange(n_fft)
    k = np.arange(n_fft // 2 + 1)[:, None]
    re = (x * np.cos(2 * np.pi * k * n / n_fft)).sum(axis=1)
    im = -(x * np.sin(2 * np.pi * k * n / n_fft)).sum(axis=1)
    return (re ** 2 + im ** 2) / n_fft


def dct_matrix(n):
    k = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    c = np.sqrt(2.0 / n) * np.cos(np.pi * k * (2 * m + 1) / (2 * n))
    c[0] /= np.sqrt(2.0)
    return c


def test_power_spectrum_matches_direct_dft(rng):
    frames = rng.standard_normal((100, dsp.FRAME_LEN)) * dsp.hamming()
    fast = dsp.power_spectrum(frames)
    assert fast.shape == (100, 257)
    for f, p in zip(frames, fast):
        ref = direct_power(f)
        assert np.max(np.abs(p - ref) / np.maximum(np.abs(ref), 1e-12 * ref.max())) < 1e-6


@pytest.mark.parametrize("n,expected", [(16000, 98), (400, 1), (559, 1), (560, 2), (8000, 48)])
def test_frame_count(n, expected):
    assert dsp.num_frames(n) == expected
    assert dsp.mfcc(AudioClip(np.zeros(n))).shape == (expected, 40)


def test_one_second_gives_98_by_40():
    assert dsp.mfcc(synth_sine(440.0, 1.0)).shape == (98, 40)


def test_short_clip_rejected():
    with pytest.raises(AudioError):
        dsp.mfcc(AudioClip(np.zeros(399)))


def test_wrong_rate_rejected():
    with pytest.raises(AudioError):
        dsp.mfcc(AudioClip(np.zeros(8000), sample_rate=8000))


def test_silence_is_constant_floor():
    feats = dsp.mfcc(AudioClip(np.zeros(16000)))
    assert np.all(feats == feats[0])
    # constant log-mel vector: only the DC term of the orthonormal DCT survives
    assert feats[0, 0] == pytest.approx(np.sqrt(dsp.N_MELS) * np.log(dsp.LOG_FLOOR), rel=1e-12)
    assert np.allclose(feats[0, 1:], 0.0, atol=1e-9)


def test_mfcc_matches_independent_pipeline():
    clip = synth_noise(0.5, 0.3, seed=5)
    x = clip.samples
    emph = np.concatenate([[x[0]], x[1:] - 0.97 * x[:-1]])
    w = 0.54 - 0.46 * np.cos(2 * np.pi * np.arange(400) / 399)
    t = 1 + (len(x) - 400) // 160
    frames = np.stack([emph[i * 160: i * 160 + 400] * w for i in range(t)])
    power = np.stack([direct_power(f) for f in frames])
    logmel = np.log(np.maximum(power @ dsp.mel_filterbank().weights.T, 1e-10))
    ref = logmel @ dct_matrix(64).T[:, :40]
    assert np.allclose(dsp.mfcc(clip), ref, rtol=1e-7, atol=1e-7)


def test_dct_round_trip(rng):
    from scipy.fft import dct, idct
    v = rng.standard_normal(64)
    assert np.allclose(idct(dct(v, norm="ortho"), norm="ortho"), v, atol=1e-6)
    c = dct_matrix(64)
    assert np.allclose(c @ c.T, np.eye(64), atol=1e-12)


def test_filterbank_geometry():
    fb = dsp.mel_filterbank()
    w = fb.weights
    assert w.shape == (64, 257)
    assert np.all(w >= 0) and np.all(w <= 1.0 + 1e-12)
    freqs = np.arange(257) * 16000 / 512
    assert not np.any(w[:, freqs < dsp.F_MIN - 1e-9])
    assert not np.any(w[:, freqs > dsp.F_MAX + 1e-9])
    peaks = freqs[np.argmax(w, axis=1)]
    assert np.all(np.diff(peaks) >= 0)
    assert np.all(w.sum(axis=1) > 0)


def test_mel_scale_anchor():
    assert dsp.hz_to_mel(1000.0) == pytest.approx(1000.0, abs=0.05)
    assert dsp.hz_to_mel(0.0) == 0.0


@given(st.floats(min_value=0.0, max_value=8000.0))
def test_mel_round_trip(f):
    assert dsp.mel_to_hz(dsp.hz_to_mel(f)) == pytest.approx(f, abs=1e-7)


@given(st.floats(min_value=0.05, max_value=0.95), st.floats(min_value=100, max_value=7000))
@settings(max_examples=20, deadline=None)
def test_pure_tone_energy_in_matching_band(amp, freq):
    clip = synth_sine(freq, 0.2, amplitude=amp)
    frames = dsp.frame_and_window(clip)
    mel = dsp.mel_filterbank().apply(dsp.power_spectrum(frames)).mean(axis=0)
    centers = dsp.mel_to_hz(np.linspace(dsp.hz_to_mel(20), dsp.hz_to_mel(7600), 66))[1:-1]
    assert abs(centers[np.argmax(mel)] - freq) < 2.5 * np.max(np.diff(centers))


def test_normalize_switch(rng):
    clip = synth_noise(1.0, 0.2, seed=2)
    f = dsp.mfcc(clip, normalize=True)
    assert np.allclose(f.mean(axis=0), 0.0, atol=1e-8)
    assert not np.allclose(dsp.mfcc(clip), f)


def test_feature_file_round_trip(tmp_path, rng):
    feats = rng.standard_normal((98, 40)).astype(np.float32)
    p = tmp_path / "a.kwsf"
    dsp.save_features(p, feats)
    raw = p.read_bytes()
    assert raw[:4] == b"KWSF"
    assert len(raw) == dsp._HEADER.size + 98 * 40 * 4
    assert np.array_equal(dsp.load_features(p), feats)


def test_feature_file_rejects_garbage(tmp_path):
    p = tmp_path / "bad.kwsf"
    p.write_bytes(b"nope" + bytes(40))
    with pytest.raises(ValueError):
        dsp.load_features(p)
    p.write_bytes(b"KW")
    with pytest.raises(ValueError):
        dsp.load_features(p)


def test_export_csv(tmp_path):
    p = tmp_path / "f.csv"
    dsp.export_csv(p, np.ones((3, 40)))
    lines = p.read_text().splitlines()
    assert len(lines) == 4 and lines[0].startswith("frame,c0")
