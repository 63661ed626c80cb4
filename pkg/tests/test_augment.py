import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kwscl import augment as aug
from kwscl.audio_io import AudioClip, AudioError, save_wav, synth_noise, synth_sine


def measured_snr(m):
    return 10 * math.log10(np.mean(m.clean_part ** 2) / np.mean(m.noise_part ** 2))


def test_snr_fidelity_200_cases():
    rng = np.random.default_rng(0)
    for case in range(200):
        snr = float(aug.SNR_LEVELS[case % 4])
        clean = synth_sine(rng.uniform(100, 4000), rng.uniform(0.3, 1.0),
                           amplitude=rng.uniform(0.05, 0.9), phase=rng.uniform(0, 6))
        noise = synth_noise(rng.uniform(0.2, 2.0), rng.uniform(0.01, 0.5), seed=case)
        m = aug.mix_at_snr_detailed(clean, noise, snr, seed=case)
        assert abs(measured_snr(m) - snr) <= 0.1
        out = m.clip.samples
        assert np.max(np.abs(out)) <= 1.0 + 1e-12
        assert np.allclose(out, m.gain * (m.clean_part + m.noise_part))


def test_loud_mix_is_rescaled_not_clipped():
    clean = synth_sine(300.0, 0.5, amplitude=0.99)
    m = aug.mix_at_snr_detailed(clean, synth_noise(0.5, 0.5, seed=1), 10.0, seed=2)
    assert m.gain < 1.0
    assert np.max(np.abs(m.clip.samples)) == pytest.approx(1.0)
    assert measured_snr(m) == pytest.approx(10.0, abs=1e-9)


def test_infinite_snr_returns_clean():
    clean = synth_sine(300.0, 0.2)
    out = aug.mix_at_snr(clean, synth_noise(0.2, seed=1), math.inf, seed=0)
    assert np.array_equal(out.samples, clean.samples)


def test_silent_inputs_rejected():
    with pytest.raises(AudioError):
        aug.mix_at_snr(AudioClip(np.zeros(100)), synth_noise(0.1), 10.0, 0)
    with pytest.raises(AudioError):
        aug.mix_at_snr(synth_sine(100.0, 0.1), AudioClip(np.zeros(100)), 10.0, 0)


def test_rate_mismatch():
    with pytest.raises(AudioError):
        aug.mix_at_snr(synth_sine(100.0, 0.1), synth_noise(0.1, sample_rate=8000), 10.0, 0)


def test_short_noise_is_tiled():
    m = aug.mix_at_snr_detailed(synth_sine(200.0, 1.0), synth_noise(0.05, seed=9), 15.0, 3)
    assert len(m.clip) == 16000
    assert measured_snr(m) == pytest.approx(15.0, abs=1e-9)


def test_mix_is_deterministic_in_seed():
    clean, noise = synth_sine(200.0, 0.5), synth_noise(2.0, seed=1)
    a = aug.mix_at_snr(clean, noise, 20.0, 5).samples
    assert np.array_equal(a, aug.mix_at_snr(clean, noise, 20.0, 5).samples)
    assert not np.array_equal(a, aug.mix_at_snr(clean, noise, 20.0, 6).samples)


def dominant_freq(x, sr=16000):
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    return np.argmax(spec) * sr / len(x)


@pytest.mark.parametrize("semis", [-2.0, -1.0, 1.0, 2.0])
def test_pitch_shift_moves_tone(semis):
    clip = synth_sine(440.0, 1.0)
    out = aug.pitch_shift(clip, semis)
    assert len(out) == len(clip)
    expected = 440.0 * 2 ** (semis / 12)
    n = 12000 if semis > 0 else 16000
    assert abs(dominant_freq(out.samples[:n]) - expected) < 3.0


def test_pitch_shift_bounds():
    clip = synth_sine(440.0, 0.1)
    assert aug.pitch_shift(clip, 0.0) is clip
    with pytest.raises(ValueError):
        aug.pitch_shift(clip, 13.0)


@given(st.integers(min_value=-1500, max_value=1500))
@settings(max_examples=50, deadline=None)
def test_time_shift_is_non_circular(k):
    x = np.arange(1, 1601, dtype=float) / 1600
    out = aug.time_shift(AudioClip(x), k / 16000).samples
    assert len(out) == len(x)
    if k >= 0:
        assert np.all(out[:k] == 0) and np.array_equal(out[k:], x[:len(x) - k])
    else:
        assert np.all(out[k:] == 0) and np.array_equal(out[:k], x[-k:])


def test_time_shift_too_long():
    with pytest.raises(ValueError):
        aug.time_shift(synth_sine(100.0, 0.1), 0.1)


def test_spec_validation_and_round_trip(tmp_path):
    with pytest.raises(ValueError):
        aug.AugmentSpec("reverb")
    with pytest.raises(ValueError):
        aug.AugmentSpec("noise", noise_id="car")
    rng = np.random.default_rng(0)
    specs = [aug.sample_spec(rng, i, ["car", "cafe"]) for i in range(50)]
    assert {s.kind for s in specs} == set(aug.KINDS)
    for s in specs:
        if s.kind == "noise":
            assert s.snr_db in aug.SNR_LEVELS
        elif s.kind == "pitch":
            assert abs(s.semitones) <= aug.MAX_SEMITONES
        else:
            assert abs(s.seconds) <= aug.MAX_SHIFT_S
    aug.write_plan(tmp_path / "plan.jsonl", specs)
    assert aug.read_plan(tmp_path / "plan.jsonl") == specs


def test_sample_spec_without_noise():
    rng = np.random.default_rng(1)
    assert all(aug.sample_spec(rng, i, []).kind != "noise" for i in range(30))


def test_noise_bank_from_dir(tmp_path):
    (tmp_path / "car").mkdir()
    (tmp_path / "empty").mkdir()
    save_wav(tmp_path / "car" / "a.wav", synth_noise(0.2, seed=1, sample_rate=8000))
    bank = aug.NoiseBank.from_dir(tmp_path)
    assert bank.ids == ["car"] and "car" in bank
    assert bank.pick("car", 0).sample_rate == 16000
    with pytest.raises(KeyError):
        bank.pick("babble", 0)
    with pytest.raises(AudioError):
        aug.NoiseBank.from_dir(tmp_path / "missing")


def test_apply_dispatch(tiny_bank):
    clip = synth_sine(300.0, 1.0)
    cat = tiny_bank.ids[0]
    noisy = aug.apply(clip, aug.AugmentSpec("noise", seed=1, noise_id=cat, snr_db=10.0), tiny_bank)
    assert not np.array_equal(noisy.samples, clip.samples)
    with pytest.raises(ValueError):
        aug.apply(clip, aug.AugmentSpec("noise", seed=1, noise_id=cat, snr_db=10.0))
    silent = AudioClip(np.zeros(16000))
    assert aug.apply(silent, aug.AugmentSpec("noise", noise_id=cat, snr_db=10.0), tiny_bank) is silent
    shifted = aug.apply(clip, aug.AugmentSpec("time_shift", seconds=0.01))
    assert np.all(shifted.samples[:160] == 0)
