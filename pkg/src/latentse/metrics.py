"""Objective evaluation: scale-invariant SDR, short-time objective
intelligibility, and per-condition aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .signal import Waveform, resample

SI_SDR_CAP_DB = 100.0

# Intelligibility pipeline constants: 10 kHz analysis rate, 256-sample
# frames with 50% overlap, 15 one-third-octave bands from 150 Hz, 30-frame
# (384 ms) comparison segments, 40 dB silent-frame range, -15 dB clip.
_STOI_FS = 10000
_STOI_FRAME = 256
_STOI_HOP = 128
_STOI_FFT = 512
_STOI_BANDS = 15
_STOI_MIN_FREQ = 150.0
_STOI_SEG = 30
_STOI_DYN_RANGE_DB = 40.0
_STOI_BETA_DB = -15.0


@dataclass
class EvalRecord:
    utt_id: str
    snr_db: float
    si_sdr_db: float
    stoi: float
    mode: str

    def __post_init__(self):
        if not 0.0 <= self.stoi <= 1.0:
            raise ValueError("stoi must lie in [0, 1]")


def _as_samples(w) -> np.ndarray:
    if isinstance(w, Waveform):
        return w.samples
    return np.asarray(w, dtype=np.float64)


def si_sdr(reference, estimate, cap_db: float = SI_SDR_CAP_DB) -> float:
    """Scale-invariant signal-to-distortion ratio in dB.

    The estimate is projected onto the reference; the ratio of projected
    power to residual power is capped so perfect reconstruction stays
    finite.
    """
    ref = _as_samples(reference)
    est = _as_samples(estimate)
    if ref.shape != est.shape:
        raise ValueError("reference and estimate lengths differ")
    ref_power = float(np.dot(ref, ref))
    if ref_power <= 0:
        raise ValueError("reference is silent")
    alpha = float(np.dot(est, ref)) / ref_power
    target = alpha * ref
    residual = est - target
    num = float(np.dot(target, target))
    den = float(np.dot(residual, residual))
    if den == 0.0 or num / den > 10.0 ** (cap_db / 10.0):
        return cap_db
    return 10.0 * math.log10(num / den)


def _third_octave_bands(n_fft: int, fs: int):
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / fs)
    centers = _STOI_MIN_FREQ * 2.0 ** (np.arange(_STOI_BANDS) / 3.0)
    matrix = np.zeros((_STOI_BANDS, freqs.size))
    for j, c in enumerate(centers):
        lo, hi = c * 2.0 ** (-1.0 / 6.0), c * 2.0 ** (1.0 / 6.0)
        matrix[j, (freqs >= lo) & (freqs < hi)] = 1.0
    return matrix


def _frames(x: np.ndarray) -> np.ndarray:
    n = 1 + (len(x) - _STOI_FRAME) // _STOI_HOP
    if n < 1:
        raise ValueError("input too short for intelligibility analysis")
    idx = np.arange(_STOI_FRAME)[None, :] + _STOI_HOP * np.arange(n)[:, None]
    win = np.hanning(_STOI_FRAME + 2)[1:-1]
    return x[idx] * win


def stoi(reference, estimate) -> float:
    """Short-time objective intelligibility in [0, 1].

    Both signals are resampled to 10 kHz; frames where the reference is
    more than 40 dB below its loudest frame are discarded; band envelopes
    over one-third-octave bands are compared by normalized, clipped
    correlation over 384 ms segments.
    """
    ref = reference if isinstance(reference, Waveform) else Waveform(_as_samples(reference))
    est = estimate if isinstance(estimate, Waveform) else Waveform(_as_samples(estimate), ref.sample_rate)
    if len(ref) != len(est):
        raise ValueError("reference and estimate lengths differ")
    ref10 = resample(ref, _STOI_FS).samples
    est10 = resample(est, _STOI_FS).samples

    ref_frames = _frames(ref10)
    est_frames = _frames(est10)
    energies = np.sum(ref_frames**2, axis=1)
    peak = energies.max()
    if peak <= 0:
        raise ValueError("reference is silent")
    keep = energies > peak * 10.0 ** (-_STOI_DYN_RANGE_DB / 10.0)
    ref_frames = ref_frames[keep]
    est_frames = est_frames[keep]
    if ref_frames.shape[0] < _STOI_SEG:
        raise ValueError(
            f"need at least {_STOI_SEG} active frames (384 ms of speech), "
            f"got {ref_frames.shape[0]}"
        )

    bands = _third_octave_bands(_STOI_FFT, _STOI_FS)
    ref_spec = np.abs(np.fft.rfft(ref_frames, n=_STOI_FFT, axis=1)) ** 2
    est_spec = np.abs(np.fft.rfft(est_frames, n=_STOI_FFT, axis=1)) ** 2
    x = np.sqrt(ref_spec @ bands.T)  # (frames, bands)
    y = np.sqrt(est_spec @ bands.T)

    clip_gain = 10.0 ** (-_STOI_BETA_DB / 20.0)
    eps = np.finfo(np.float64).eps
    correlations = []
    for m in range(_STOI_SEG - 1, x.shape[0]):
        seg_x = x[m - _STOI_SEG + 1 : m + 1]  # (30, bands)
        seg_y = y[m - _STOI_SEG + 1 : m + 1]
        scale = np.linalg.norm(seg_x, axis=0) / (np.linalg.norm(seg_y, axis=0) + eps)
        seg_y = np.minimum(seg_y * scale, seg_x * (1.0 + clip_gain))
        cx = seg_x - seg_x.mean(axis=0)
        cy = seg_y - seg_y.mean(axis=0)
        denom = np.linalg.norm(cx, axis=0) * np.linalg.norm(cy, axis=0) + eps
        correlations.append((cx * cy).sum(axis=0) / denom)
    value = float(np.mean(correlations))
    return min(max(value, 0.0), 1.0)


@dataclass
class ReportRow:
    snr_db: float
    mode: str
    metric: str
    count: int
    mean: float
    ci95: float


def aggregate(records: list[EvalRecord]) -> list[ReportRow]:
    """Per-(SNR bucket, mode) means with normal-approximation 95%
    confidence intervals, for both metrics."""
    if not records:
        raise ValueError("no evaluation records to aggregate")
    buckets: dict[tuple[float, str], list[EvalRecord]] = {}
    for r in records:
        buckets.setdefault((r.snr_db, r.mode), []).append(r)
    rows = []
    for (snr_db, mode), group in sorted(buckets.items()):
        for metric, values in (
            ("si_sdr_db", [g.si_sdr_db for g in group]),
            ("stoi", [g.stoi for g in group]),
        ):
            arr = np.asarray(values)
            ci = 1.96 * arr.std(ddof=1) / math.sqrt(len(arr)) if len(arr) > 1 else 0.0
            rows.append(ReportRow(snr_db=snr_db, mode=mode, metric=metric,
                                  count=len(arr), mean=float(arr.mean()), ci95=float(ci)))
    return rows


def format_report(rows: list[ReportRow]) -> str:
    header = f"{'SNR (dB)':>9}  {'mode':>6}  {'metric':>9}  {'n':>4}  {'mean':>8}  {'95% CI':>8}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r.snr_db:>9.1f}  {r.mode:>6}  {r.metric:>9}  {r.count:>4d}  "
            f"{r.mean:>8.3f}  {r.ci95:>8.3f}"
        )
    return "\n".join(lines)
