import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile

from emotts import dsp
from emotts.errors import EmptyAfterTrim, MissingFile, RateMismatch, UndecodableAudio

from conftest import tone, two_tone


class TestLoadAudio:
    def test_identity_resample(self, tmp_path, cfg):
        x = tone(440.0).astype(np.float32)
        path = tmp_path / "t.wav"
        wavfile.write(path, 22050, x)
        buf = dsp.load_audio(path, cfg)
        assert len(buf.samples) == 22050
        np.testing.assert_allclose(buf.samples, x, atol=1e-7)

    def test_resample_44100_preserves_tone(self, tmp_path, cfg):
        t = np.arange(44100) / 44100
        x = (0.5 * np.sin(2 * np.pi * 440.0 * t)).astype(np.float32)
        path = tmp_path / "t44.wav"
        wavfile.write(path, 44100, x)
        buf = dsp.load_audio(path, cfg)
        assert abs(len(buf.samples) - 22050) <= 1
        spectrum = np.abs(np.fft.rfft(buf.samples))
        freqs = np.fft.rfftfreq(len(buf.samples), 1 / 22050)
        peak = freqs[spectrum.argmax()]
        assert abs(peak - 440.0) <= 5.0

    def test_missing_file(self, tmp_path, cfg):
        with pytest.raises(MissingFile):
            dsp.load_audio(tmp_path / "nope.wav", cfg)

    def test_undecodable(self, tmp_path, cfg):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"definitely not a wav file")
        with pytest.raises(UndecodableAudio):
            dsp.load_audio(path, cfg)

    def test_stereo_downmix(self, tmp_path, cfg):
        x = tone(440.0).astype(np.float32)
        stereo = np.stack([(x * 32767).astype(np.int16),
                           (x * 16384).astype(np.int16)], axis=1)
        path = tmp_path / "st.wav"
        wavfile.write(path, 22050, stereo)
        buf = dsp.load_audio(path, cfg)
        assert buf.samples.ndim == 1
        assert abs(np.abs(buf.samples).max() - 0.375) < 0.01

    def test_pcm16_round_trip(self, tmp_path, cfg):
        buf = dsp.AudioBuffer(tone(300.0, 0.5), 22050)
        path = tmp_path / "rt.wav"
        dsp.save_audio(buf, path)
        back = dsp.load_audio(path, cfg)
        assert len(back.samples) == len(buf.samples)
        np.testing.assert_allclose(back.samples, buf.samples, atol=1.0 / 32767)


class TestTrimSilence:
    def test_all_zeros_raises(self, cfg):
        with pytest.raises(EmptyAfterTrim):
            dsp.trim_silence(dsp.AudioBuffer(np.zeros(22050), 22050), cfg.top_db, cfg.hop)

    def test_onset_recovery(self, cfg):
        # oracle: frame-RMS scan of the constructed signal localizes the cut
        silence = np.zeros(11025)
        x = np.concatenate([silence, tone(440.0, 1.0, amplitude=0.9), silence])
        trimmed = dsp.trim_silence(dsp.AudioBuffer(x, 22050), cfg.top_db, cfg.hop)
        onset = next(s for s in range(len(x))
                     if np.array_equal(x[s:s + len(trimmed.samples)], trimmed.samples))
        assert abs(onset - 11025) <= cfg.hop
        assert abs(len(trimmed.samples) - 22050) <= 2 * cfg.hop

    def test_full_scale_tone_unchanged(self, cfg):
        x = tone(440.0, 0.73, amplitude=0.9)
        trimmed = dsp.trim_silence(dsp.AudioBuffer(x, 22050), cfg.top_db, cfg.hop)
        assert len(trimmed.samples) == len(x)
        np.testing.assert_array_equal(trimmed.samples, x)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_idempotent(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(500, 30000))
        x = np.zeros(n)
        start, length = int(rng.integers(0, n // 2)), int(rng.integers(1, n // 2))
        x[start:start + length] = 0.8 * np.sin(np.arange(min(length, n - start)) * 0.2)
        if np.abs(x).max() == 0:
            return
        once = dsp.trim_silence(dsp.AudioBuffer(x, 22050), 20.0, 276)
        twice = dsp.trim_silence(once, 20.0, 276)
        np.testing.assert_array_equal(once.samples, twice.samples)


class TestExtractFeatures:
    def test_silence_normalizes_to_zero(self, cfg):
        mel, lin = dsp.extract_features(dsp.AudioBuffer(np.zeros(22050), 22050), cfg)
        assert mel.frames.min() == mel.frames.max() == 0.0
        assert lin.frames.min() == lin.frames.max() == 0.0

    @pytest.mark.parametrize("n_samples", [276, 277, 1000, 22050, 44100])
    def test_frame_count_rule(self, cfg, n_samples, rng):
        x = rng.uniform(-0.1, 0.1, n_samples)
        mel, lin = dsp.extract_features(dsp.AudioBuffer(x, 22050), cfg)
        t_raw = n_samples // cfg.hop + 1
        assert mel.frames.shape == (math.ceil(t_raw / cfg.reduction), cfg.n_mels)
        assert lin.frames.shape[0] == cfg.reduction * mel.frames.shape[0]
        assert lin.frames.shape[1] == cfg.lin_bins

    def test_ranges_and_pairing(self, cfg):
        mel, lin = dsp.extract_features(dsp.AudioBuffer(two_tone(), 22050), cfg)
        for frames in (mel.frames, lin.frames):
            assert frames.min() >= 0.0 and frames.max() <= 1.0
        assert lin.frames.shape[0] == cfg.reduction * mel.frames.shape[0]
        assert mel.hop_effective == cfg.reduction * cfg.hop

    def test_trailing_zeros_invariance(self, cfg, rng):
        # signal fades to zero (as trimmed audio does), so pre-emphasis has no
        # boundary impulse and existing frames stay bit-identical
        x = rng.uniform(-0.3, 0.3, 10000)
        x[-200:] *= np.linspace(1.0, 0.0, 200)
        base = dsp.extract_features(dsp.AudioBuffer(x, 22050), cfg)[1].frames
        padded = dsp.extract_features(
            dsp.AudioBuffer(np.concatenate([x, np.zeros(cfg.hop - 1)]), 22050), cfg)[1].frames
        t_real = len(x) // cfg.hop + 1  # frames present in both analyses
        np.testing.assert_array_equal(base[:t_real], padded[:t_real])
        assert abs(padded.shape[0] - base.shape[0]) <= cfg.reduction

    def test_normalization_monotone(self, cfg, rng):
        x = rng.uniform(-0.2, 0.2, 8000)
        quiet = dsp.extract_features(dsp.AudioBuffer(x, 22050), cfg)
        loud = dsp.extract_features(dsp.AudioBuffer(np.clip(x * 3, -1, 1), 22050), cfg)
        for a, b in [(quiet[0].frames, loud[0].frames), (quiet[1].frames, loud[1].frames)]:
            assert (b - a).min() >= -1e-6

    def test_rate_mismatch(self, cfg):
        with pytest.raises(RateMismatch):
            dsp.extract_features(dsp.AudioBuffer(np.zeros(100), 16000), cfg)


class TestInvertSpectrogram:
    def test_floor_spectrogram_is_silent(self, cfg):
        spec = dsp.LinSpectrogram(np.zeros((40, cfg.lin_bins), dtype=np.float32))
        out = dsp.invert_spectrogram(spec, cfg)
        assert np.abs(out.samples).max() < 1e-3
        assert out.rate == cfg.sample_rate

    def test_round_trip_convergence(self, cfg):
        # fidelity oracle runs the inversion path at sharpening 1.0: the
        # exponent is a deliberate contrast boost, not a reconstruction target
        rt_cfg = replace(cfg, sharpening=1.0)
        _, lin = dsp.extract_features(dsp.AudioBuffer(two_tone(), 22050), rt_cfg)
        mag = dsp.normalized_db_to_amplitude(lin.frames, rt_cfg) ** rt_cfg.sharpening
        wav = dsp.griffin_lim(mag, rt_cfg, 60)
        assert dsp.spectral_convergence(wav, mag, rt_cfg) < 0.1

    def test_gl_zero_iterations_is_zero_phase_istft(self, cfg):
        mag = np.abs(dsp.stft(two_tone(), cfg))
        np.testing.assert_array_equal(
            dsp.griffin_lim(mag, cfg, 0), dsp.istft(mag.astype(np.complex128), cfg))

    def test_gl_error_non_increasing(self, cfg):
        mag = np.abs(dsp.stft(two_tone(), cfg))
        errors = [dsp.spectral_convergence(dsp.griffin_lim(mag, cfg, n), mag, cfg)
                  for n in (0, 10, 30, 60)]
        assert all(a >= b - 1e-9 for a, b in zip(errors, errors[1:])), errors
        assert errors[-1] < 0.1

    def test_output_clipped(self, cfg):
        spec = dsp.LinSpectrogram(np.ones((24, cfg.lin_bins), dtype=np.float32))
        out = dsp.invert_spectrogram(spec, cfg)
        assert np.abs(out.samples).max() <= 1.0


class TestConfig:
    def test_kv_round_trip(self, tmp_path):
        cfg = dsp.SpectroConfig(sample_rate=16000, top_db=30.0, n_mels=40)
        path = tmp_path / "spectro.cfg"
        cfg.save(path)
        assert dsp.SpectroConfig.load(path) == cfg

    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            dsp.SpectroConfig(hop=2049)
        with pytest.raises(ValueError):
            dsp.SpectroConfig(top_db=0.0)
        with pytest.raises(ValueError):
            dsp.SpectroConfig(reduction=0)
