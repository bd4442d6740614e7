"""Tests for SI-SDR, STOI, and report aggregation."""

import numpy as np
import pytest

from latentse.data import mix_at_snr, synthesize_noise, synthesize_speech
from latentse.metrics import (
    EvalRecord,
    ReportRow,
    aggregate,
    format_report,
    si_sdr,
    stoi,
)
from latentse.signal import Waveform


class TestSiSdr:
    def setup_method(self):
        self.rng = np.random.default_rng(0)
        self.ref = self.rng.standard_normal(4000)

    def test_perfect_estimate_hits_cap(self):
        assert si_sdr(self.ref, self.ref) == 100.0

    def test_scaled_and_negated_estimates_hit_cap(self):
        assert si_sdr(self.ref, 2.0 * self.ref) == 100.0
        assert si_sdr(self.ref, -self.ref) == 100.0

    def test_scale_invariance_exact(self):
        est = self.ref + 0.3 * self.rng.standard_normal(4000)
        base = si_sdr(self.ref, est)
        assert si_sdr(self.ref, 2.0 * est) == base
        assert si_sdr(self.ref, -est) == base
        assert si_sdr(self.ref, 0.125 * est) == base

    def test_orthogonal_noise_closed_form(self):
        # Gram-Schmidt an exactly orthogonal disturbance, then the value
        # must match 10 log10(P_ref / P_noise).
        noise = self.rng.standard_normal(4000)
        noise -= (np.dot(noise, self.ref) / np.dot(self.ref, self.ref)) * self.ref
        for power_ratio in (1.0, 0.1, 10.0):
            scaled = noise * np.sqrt(
                power_ratio * np.dot(self.ref, self.ref) / np.dot(noise, noise)
            )
            expected = 10.0 * np.log10(np.dot(self.ref, self.ref) / np.dot(scaled, scaled))
            assert abs(si_sdr(self.ref, self.ref + scaled) - expected) < 1e-9

    def test_equal_power_orthogonal_noise_is_zero_db(self):
        noise = self.rng.standard_normal(4000)
        noise -= (np.dot(noise, self.ref) / np.dot(self.ref, self.ref)) * self.ref
        noise *= np.sqrt(np.dot(self.ref, self.ref) / np.dot(noise, noise))
        assert abs(si_sdr(self.ref, self.ref + noise)) < 1e-9

    def test_silent_reference_rejected(self):
        with pytest.raises(ValueError, match="silent"):
            si_sdr(np.zeros(100), np.ones(100))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            si_sdr(np.ones(10), np.ones(11))

    def test_accepts_waveforms(self):
        w = Waveform(self.ref)
        assert si_sdr(w, w) == 100.0


@pytest.fixture(scope="module")
def speech():
    return synthesize_speech(11, 2.0)


class TestStoi:

    def test_self_similarity(self, speech):
        assert stoi(speech, speech) >= 0.99

    def test_monotone_over_snr(self, speech):
        noise = synthesize_noise(12, 2.0, "babble")
        scores = []
        for snr in (10.0, 5.0, 0.0, -5.0):
            noisy, _ = mix_at_snr(speech, noise, snr)
            scores.append(stoi(speech, noisy))
        assert all(a >= b for a, b in zip(scores, scores[1:])), scores

    def test_white_noise_scores_low(self, speech):
        noise = synthesize_noise(13, 2.0, "white")
        assert stoi(speech, noise) < 0.3

    def test_range(self, speech):
        noise = synthesize_noise(14, 2.0, "pink")
        noisy, _ = mix_at_snr(speech, noise, -10.0)
        assert 0.0 <= stoi(speech, noisy) <= 1.0

    def test_silent_padding_position_is_irrelevant(self, speech):
        noise = synthesize_noise(15, 2.0, "babble")
        noisy, _ = mix_at_snr(speech, noise, 0.0)
        pad = np.zeros(1280)
        front = stoi(Waveform(np.concatenate([pad, speech.samples])),
                     Waveform(np.concatenate([pad, noisy.samples])))
        back = stoi(Waveform(np.concatenate([speech.samples, pad])),
                    Waveform(np.concatenate([noisy.samples, pad])))
        assert abs(front - back) < 0.02

    def test_too_short_rejected(self):
        short = synthesize_speech(16, 0.5)
        clipped = Waveform(short.samples[:2400])
        with pytest.raises(ValueError, match="frames"):
            stoi(clipped, clipped)

    def test_length_mismatch_rejected(self, speech):
        with pytest.raises(ValueError):
            stoi(speech, Waveform(speech.samples[:-10]))


class TestAggregate:
    def test_single_record_has_zero_ci(self):
        rows = aggregate([EvalRecord("u0", 0.0, 5.0, 0.8, "M")])
        assert all(r.ci95 == 0.0 for r in rows)
        si_row = next(r for r in rows if r.metric == "si_sdr_db")
        assert si_row.mean == 5.0 and si_row.count == 1

    def test_identical_records_have_zero_ci(self):
        recs = [EvalRecord("u", 0.0, 5.0, 0.8, "M") for _ in range(2)]
        rows = aggregate(recs)
        for r in rows:
            assert r.ci95 == pytest.approx(0.0)
            assert r.count == 2

    def test_groups_by_snr_and_mode(self):
        recs = [
            EvalRecord("a", 0.0, 5.0, 0.8, "M"),
            EvalRecord("b", 0.0, 6.0, 0.7, "M"),
            EvalRecord("c", 5.0, 9.0, 0.9, "M"),
            EvalRecord("d", 0.0, 1.0, 0.5, "noisy"),
        ]
        rows = aggregate(recs)
        keys = {(r.snr_db, r.mode) for r in rows}
        assert keys == {(0.0, "M"), (5.0, "M"), (0.0, "noisy")}

    def test_ci_coverage_oracle(self):
        # Statistical oracle: over 100 resampled trials of 100 draws from
        # a known normal, the true mean must fall inside the 95% CI at
        # least 90 times.
        rng = np.random.default_rng(21)
        true_mean, sigma = 5.0, 2.0
        hits = 0
        for trial in range(100):
            values = rng.normal(true_mean, sigma, size=100)
            recs = [EvalRecord(f"u{i}", 0.0, v, 0.5, "M") for i, v in enumerate(values)]
            row = next(r for r in aggregate(recs) if r.metric == "si_sdr_db")
            if abs(row.mean - true_mean) <= row.ci95:
                hits += 1
        assert hits >= 90

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate([])

    def test_report_formatting(self):
        rows = [ReportRow(0.0, "M", "si_sdr_db", 3, 5.0, 0.4)]
        text = format_report(rows)
        assert "si_sdr_db" in text and "5.000" in text

    def test_record_validates_stoi_range(self):
        with pytest.raises(ValueError):
            EvalRecord("u", 0.0, 5.0, 1.2, "M")
