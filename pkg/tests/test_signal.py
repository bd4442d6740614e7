"""Tests for the time-frequency frontend."""

import math

import numpy as np
import pytest

from latentse.signal import (
    ComplexSpectrogram,
    LpsFeatures,
    Mask,
    StftConfig,
    TooShortError,
    Waveform,
    apply_mask,
    ideal_ratio_mask,
    istft,
    lps,
    read_wav,
    reconstruct_from_lps,
    resample,
    stft,
    write_wav,
)

FS = 16000
CFG = StftConfig()


def si_sdr_db(reference, estimate):
    """Local oracle: scale-invariant SDR in dB (plain formula)."""
    reference = np.asarray(reference, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    alpha = np.dot(estimate, reference) / np.dot(reference, reference)
    target = alpha * reference
    residual = estimate - target
    return 10.0 * np.log10(np.sum(target**2) / np.sum(residual**2))


def harmonic_signal(n, f0=210.0, num_harmonics=8):
    t = np.arange(n) / FS
    x = np.zeros(n)
    for k in range(1, num_harmonics + 1):
        x += np.sin(2 * np.pi * k * f0 * t) / k
    x /= np.max(np.abs(x))
    return 0.2 * x


class TestStft:
    def test_zero_input_gives_zero_spectrogram(self):
        s = stft(Waveform(np.zeros(1024)))
        assert s.values.shape == (3, 257)
        np.testing.assert_array_equal(s.values, 0)

    def test_frame_count(self):
        n = 5000
        s = stft(Waveform(np.zeros(n)))
        assert s.num_frames == 1 + (n - CFG.frame_len) // CFG.hop

    def test_bin_centred_sinusoid_concentrates(self):
        # 1 kHz at fs 16 kHz with a 512-point transform sits exactly on
        # bin 32; the periodic Hann window spreads it only to bins 31-33.
        t = np.arange(4096) / FS
        s = stft(Waveform(np.sin(2 * np.pi * 1000.0 * t)))
        power = np.abs(s.values) ** 2
        frac = power[:, 31:34].sum(axis=1) / power.sum(axis=1)
        assert np.all(frac >= 0.99)

    def test_too_short_input_rejected(self):
        with pytest.raises(TooShortError):
            stft(Waveform(np.zeros(CFG.frame_len - 1)))

    def test_parseval_per_frame(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(3000)
        s = stft(Waveform(x))
        win = CFG.window_values()
        for i in range(s.num_frames):
            frame = x[i * CFG.hop : i * CFG.hop + CFG.frame_len] * win
            mag2 = np.abs(s.values[i]) ** 2
            spec_energy = (mag2[0] + 2 * mag2[1:-1].sum() + mag2[-1]) / CFG.fft_size
            np.testing.assert_allclose(spec_energy, np.sum(frame**2), rtol=1e-6)


class TestIstft:
    def test_zero_spectrogram_gives_silence(self):
        w = istft(ComplexSpectrogram(np.zeros((4, 257), dtype=complex)))
        np.testing.assert_array_equal(w.samples, 0)

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_round_trip_interior(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1, 1, 6 * CFG.frame_len)
        y = istft(stft(Waveform(x))).samples
        lo, hi = CFG.frame_len, len(y) - CFG.frame_len
        assert np.max(np.abs(y[lo:hi] - x[lo:hi])) < 1e-6

    def test_single_bin_spectrogram_is_sinusoid(self):
        # Bin 32 advances exactly 16 cycles per hop, so a constant complex
        # amplitude per frame synthesizes a continuous 1 kHz tone.
        values = np.zeros((20, 257), dtype=complex)
        values[:, 32] = 10.0
        w = istft(ComplexSpectrogram(values)).samples
        interior = w[512 : 512 + 2048]
        spec = np.abs(np.fft.rfft(interior)) ** 2
        # 1 kHz falls on bin 128 of a 2048-point transform.
        assert spec[124:133].sum() / spec.sum() >= 0.99


class TestLps:
    def test_unit_magnitude_is_zero(self):
        s = ComplexSpectrogram(np.ones((2, 257), dtype=complex))
        np.testing.assert_allclose(lps(s).values, 0.0, atol=1e-15)

    def test_magnitude_e_gives_two(self):
        s = ComplexSpectrogram(np.full((1, 257), math.e, dtype=complex))
        np.testing.assert_allclose(lps(s).values, 2.0, rtol=1e-12)

    def test_zero_entry_floors(self):
        s = ComplexSpectrogram(np.zeros((1, 257), dtype=complex))
        np.testing.assert_allclose(lps(s, 1e-12).values, math.log(1e-12), rtol=1e-12)
        assert math.isclose(math.log(1e-12), -27.631021115928547)

    def test_inverts_magnitude_above_floor(self):
        rng = np.random.default_rng(7)
        mags = rng.uniform(0.1, 3.0, (4, 257))
        s = ComplexSpectrogram(mags * np.exp(1j * rng.uniform(0, 2 * np.pi, mags.shape)))
        np.testing.assert_allclose(np.exp(0.5 * lps(s).values), mags, rtol=1e-12)

    def test_rejects_bad_floor(self):
        s = ComplexSpectrogram(np.ones((1, 257), dtype=complex))
        with pytest.raises(ValueError):
            lps(s, 0.0)


class TestReconstructFromLps:
    def test_self_consistency(self):
        x = harmonic_signal(5 * CFG.frame_len)
        s = stft(Waveform(x))
        y = reconstruct_from_lps(lps(s), s).samples
        lo, hi = CFG.frame_len, len(y) - CFG.frame_len
        assert np.max(np.abs(y[lo:hi] - x[lo:hi])) < 1e-5

    def test_floored_lps_is_near_silent(self):
        s = stft(Waveform(harmonic_signal(2048)))
        floored = LpsFeatures(np.full_like(s.values, math.log(1e-12), dtype=float))
        w = reconstruct_from_lps(floored, s)
        assert w.rms() < 1e-5

    def test_oracle_magnitude_with_noisy_phase(self):
        # Clean magnitude combined with the mixture phase at 0 dB SNR is a
        # strong oracle baseline; it should stay comfortably above 5 dB.
        rng = np.random.default_rng(11)
        clean = harmonic_signal(8000)
        noise = rng.standard_normal(8000)
        noise *= np.sqrt(np.sum(clean**2) / np.sum(noise**2))
        noisy = Waveform(clean + noise)
        noisy_spec = stft(noisy)
        est = reconstruct_from_lps(lps(stft(Waveform(clean))), noisy_spec).samples
        lo, hi = CFG.frame_len, len(est) - CFG.frame_len
        assert si_sdr_db(clean[lo:hi], est[lo:hi]) >= 5.0

    def test_shape_mismatch_rejected(self):
        s = stft(Waveform(np.ones(2048)))
        bad = LpsFeatures(np.zeros((1, 257)))
        with pytest.raises(ValueError):
            reconstruct_from_lps(bad, s)


class TestIdealRatioMask:
    def test_equal_powers_give_sqrt_half(self):
        feats = LpsFeatures(np.full((3, 257), -1.7))
        m = ideal_ratio_mask(feats, feats, exponent=0.5)
        np.testing.assert_allclose(m.values, math.sqrt(0.5), rtol=1e-12)

    def test_no_noise_limit(self):
        speech = LpsFeatures(np.zeros((2, 257)))
        noise = LpsFeatures(np.full((2, 257), math.log(1e-12)))
        assert np.all(ideal_ratio_mask(speech, noise).values > 0.999999)

    def test_no_speech_limit(self):
        speech = LpsFeatures(np.full((2, 257), math.log(1e-12)))
        noise = LpsFeatures(np.zeros((2, 257)))
        assert np.all(ideal_ratio_mask(speech, noise).values < 1e-5)

    def test_bounds_random(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a = LpsFeatures(rng.uniform(-30, 5, (4, 257)))
            b = LpsFeatures(rng.uniform(-30, 5, (4, 257)))
            m = ideal_ratio_mask(a, b, exponent=rng.uniform(0.2, 2.0)).values
            assert np.all(m >= 0.0) and np.all(m <= 1.0)


class TestApplyMask:
    def test_ones_mask_is_identity(self):
        s = stft(Waveform(harmonic_signal(3000)))
        out = apply_mask(Mask(np.ones_like(s.values, dtype=float)), s)
        np.testing.assert_array_equal(out.values, s.values)

    def test_zero_mask_silences(self):
        s = stft(Waveform(harmonic_signal(3000)))
        out = apply_mask(Mask(np.zeros_like(s.values, dtype=float)), s)
        np.testing.assert_array_equal(out.values, 0)

    def test_oracle_irm_improves_si_sdr(self):
        # Mask built from the true speech and noise LPS at 0 dB SNR must
        # lift SI-SDR by at least 10 dB over the unprocessed mixture.
        rng = np.random.default_rng(5)
        clean = harmonic_signal(16000)
        noise = rng.standard_normal(16000)
        noise *= np.sqrt(np.sum(clean**2) / np.sum(noise**2))
        noisy = clean + noise
        noisy_spec = stft(Waveform(noisy))
        m = ideal_ratio_mask(lps(stft(Waveform(clean))), lps(stft(Waveform(noise))))
        est = istft(apply_mask(m, noisy_spec)).samples
        lo, hi = CFG.frame_len, len(est) - CFG.frame_len
        gain = si_sdr_db(clean[lo:hi], est[lo:hi]) - si_sdr_db(
            clean[lo:hi], noisy[lo:hi]
        )
        assert gain >= 10.0


class TestWavIO:
    def test_round_trip_quantization(self, tmp_path):
        rng = np.random.default_rng(9)
        w = Waveform(rng.uniform(-0.9, 0.9, 4000))
        path = tmp_path / "x.wav"
        write_wav(path, w)
        back = read_wav(path)
        assert back.sample_rate == FS
        assert np.max(np.abs(back.samples - w.samples)) <= 1.0 / 32768.0

    def test_rejects_stereo(self, tmp_path):
        import wave as wave_mod

        path = tmp_path / "stereo.wav"
        with wave_mod.open(str(path), "wb") as f:
            f.setnchannels(2)
            f.setsampwidth(2)
            f.setframerate(FS)
            f.writeframes(b"\x00\x00" * 200)
        with pytest.raises(ValueError, match="mono"):
            read_wav(path)

    def test_rejects_rate_mismatch(self, tmp_path):
        path = tmp_path / "slow.wav"
        write_wav(path, Waveform(np.zeros(100), sample_rate=8000))
        with pytest.raises(ValueError, match="sample rate"):
            read_wav(path, expect_rate=16000)
        assert read_wav(path, expect_rate=None).sample_rate == 8000

    def test_resample_changes_rate(self):
        w = Waveform(np.sin(2 * np.pi * 440 * np.arange(8000) / FS))
        out = resample(w, 10000)
        assert out.sample_rate == 10000
        assert abs(len(out) - 5000) <= 1


class TestValidation:
    def test_waveform_rejects_nan(self):
        with pytest.raises(ValueError):
            Waveform(np.array([0.0, np.nan]))

    def test_stft_config_rejects_bad_hop(self):
        with pytest.raises(ValueError):
            StftConfig(frame_len=512, hop=0)

    def test_default_config_has_257_bins(self):
        assert CFG.bins == 257
