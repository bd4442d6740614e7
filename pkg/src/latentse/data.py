"""Synthetic corpus: speech-like and noise signals, SNR-controlled mixing,
and manifest-backed corpus generation.

Every generator is a pure function of its seed, so corpora regenerate
bit-identically from a config. Mixtures store their clean and noise
components, which paired training requires.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .signal import DEFAULT_SAMPLE_RATE, Waveform, read_wav, write_wav

TARGET_RMS = 0.05
SNR_RANGE_DB = (-10.0, 15.0)
NOISE_KINDS = ("white", "pink", "babble")

# Energy threshold (relative to the loudest frame) below which a clean
# frame is treated as silence when measuring mixing SNR.
ACTIVE_RANGE_DB = 40.0
ACTIVE_FRAME = 512


@dataclass(frozen=True)
class MixSpec:
    """Provenance of one mixture: component ids, target SNR, applied gain."""

    clean_id: str
    noise_id: str
    snr_db: float
    gain: float
    seed: int


@dataclass
class ManifestRecord:
    split: str
    utt_id: str
    noisy_path: str
    clean_path: str
    noise_path: str
    spec: MixSpec


@dataclass
class Manifest:
    records: list[ManifestRecord] = field(default_factory=list)

    def split(self, name: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == name]

    def save(self, path):
        with open(path, "w") as f:
            for r in self.records:
                row = asdict(r)
                row["spec"] = asdict(r.spec)
                f.write(json.dumps(row) + "\n")

    @classmethod
    def load(cls, path) -> "Manifest":
        records = []
        with open(path) as f:
            for line in f:
                row = json.loads(line)
                spec = MixSpec(**row.pop("spec"))
                records.append(ManifestRecord(spec=spec, **row))
        return cls(records)

    def validate_files(self):
        for r in self.records:
            for p in (r.noisy_path, r.clean_path, r.noise_path):
                if not Path(p).exists():
                    raise FileNotFoundError(p)


def _formant_envelope(rng: np.random.Generator):
    centers = np.array([
        rng.uniform(300.0, 900.0),
        rng.uniform(1000.0, 2200.0),
        rng.uniform(2400.0, 3400.0),
    ])
    widths = np.array([90.0, 130.0, 180.0])
    gains = np.array([1.0, 0.63, 0.35])

    def env(freq):
        freq = np.asarray(freq, dtype=float)
        resonances = (gains[:, None] / (1.0 + ((freq - centers[:, None]) / widths[:, None]) ** 2)).sum(axis=0)
        tilt = 1.0 / (1.0 + freq / 700.0)  # source rolloff
        return (resonances + 0.05) * tilt

    return env


def synthesize_speech(seed: int, duration_s: float,
                      sample_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Speech-like signal: harmonic source with a drifting fundamental,
    formant-shaped harmonic amplitudes, syllabic amplitude modulation, and
    silence gaps covering 5-40% of the duration."""
    if duration_s < 0.5:
        raise ValueError("duration must be at least 0.5 s")
    rng = np.random.default_rng(seed)
    n_total = int(round(duration_s * sample_rate))
    env = _formant_envelope(rng)

    while True:
        # Voiced/silence plan; replanned (deterministically) in the rare
        # case the silence fraction lands outside the 5-40% window.
        plan = []
        filled = 0
        while filled < n_total:
            voiced = int(rng.uniform(0.15, 0.40) * sample_rate)
            gap = int(rng.uniform(0.03, 0.12) * sample_rate)
            plan.append(("voiced", min(voiced, n_total - filled)))
            filled += voiced
            if filled < n_total:
                plan.append(("silence", min(gap, n_total - filled)))
                filled += gap
        silence_frac = sum(n for kind, n in plan if kind == "silence") / n_total
        if 0.05 <= silence_frac <= 0.40:
            break

    out = np.zeros(n_total)
    pos = 0
    for kind, length in plan:
        if kind == "voiced" and length > 0:
            t = np.arange(length) / sample_rate
            f0 = np.linspace(rng.uniform(80.0, 300.0), rng.uniform(80.0, 300.0), length)
            phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate
            max_harmonic = max(1, int((0.45 * sample_rate) // f0.max()))
            seg = np.zeros(length)
            mean_f0 = float(f0.mean())
            harmonics = np.arange(1, max_harmonic + 1)
            amps = env(harmonics * mean_f0)
            for k, amp in zip(harmonics, amps):
                seg += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
            am_rate = rng.uniform(2.0, 8.0)
            seg *= 0.55 + 0.45 * np.sin(2 * np.pi * am_rate * t + rng.uniform(0, 2 * np.pi))
            ramp = min(length // 4, int(0.008 * sample_rate))
            if ramp > 0:
                fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
                seg[:ramp] *= fade
                seg[-ramp:] *= fade[::-1]
            out[pos : pos + length] = seg
        pos += length

    out *= TARGET_RMS / max(np.sqrt(np.mean(out**2)), 1e-12)
    return Waveform(out, sample_rate)


def synthesize_noise(seed: int, duration_s: float, kind: str = "white",
                     sample_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Noise of a given colour, RMS-normalized; deterministic per seed."""
    if kind not in NOISE_KINDS:
        raise ValueError(f"unknown noise kind {kind!r}; choose from {NOISE_KINDS}")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    white = rng.standard_normal(n)
    if kind == "white":
        out = white
    elif kind == "pink":
        spec = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
        scale = np.zeros_like(freqs)
        scale[1:] = 1.0 / np.sqrt(freqs[1:])
        out = np.fft.irfft(spec * scale, n=n)
    else:  # babble: speech-band shaping plus slow envelope modulation
        spec = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
        shape = 1.0 / np.sqrt(1.0 + (freqs / 500.0) ** 2)
        base = np.fft.irfft(spec * shape, n=n)
        mod_rate = rng.uniform(3.0, 6.0)
        t = np.arange(n) / sample_rate
        envelope = 1.0 + 0.6 * np.sin(2 * np.pi * mod_rate * t + rng.uniform(0, 2 * np.pi))
        envelope += 0.4 * np.sin(2 * np.pi * mod_rate * 1.7 * t + rng.uniform(0, 2 * np.pi))
        out = base * np.maximum(envelope, 0.05)
    out = out * (TARGET_RMS / np.sqrt(np.mean(out**2)))
    return Waveform(out, sample_rate)


def _active_mask(samples: np.ndarray) -> np.ndarray:
    """Per-sample mask of frames whose energy is within ACTIVE_RANGE_DB of
    the loudest frame."""
    n_frames = len(samples) // ACTIVE_FRAME
    if n_frames == 0:
        return np.ones(len(samples), dtype=bool)
    framed = samples[: n_frames * ACTIVE_FRAME].reshape(n_frames, ACTIVE_FRAME)
    energies = (framed**2).sum(axis=1)
    peak = energies.max()
    if peak <= 0:
        raise ValueError("clean signal is silent")
    keep = energies > peak * 10.0 ** (-ACTIVE_RANGE_DB / 10.0)
    mask = np.zeros(len(samples), dtype=bool)
    mask[: n_frames * ACTIVE_FRAME] = np.repeat(keep, ACTIVE_FRAME)
    return mask


def measure_snr_db(clean: np.ndarray, noise: np.ndarray) -> float:
    """SNR over frames where the clean signal is active."""
    mask = _active_mask(clean)
    p_clean = float(np.mean(clean[mask] ** 2))
    p_noise = float(np.mean(noise[mask] ** 2))
    return 10.0 * np.log10(p_clean / p_noise)


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float,
               clean_id: str = "", noise_id: str = "", seed: int = 0
               ) -> tuple[Waveform, MixSpec]:
    """noisy = clean + g * noise with g chosen so the SNR measured on
    active-clean frames equals snr_db exactly. The target is clamped to
    the supported range; noise is looped/cropped to the clean length."""
    snr_db = float(np.clip(snr_db, *SNR_RANGE_DB))
    if clean.sample_rate != noise.sample_rate:
        raise ValueError("sample-rate mismatch between clean and noise")
    samples = noise.samples
    if len(samples) < len(clean):
        reps = int(np.ceil(len(clean) / len(samples)))
        samples = np.tile(samples, reps)
    samples = samples[: len(clean)]

    mask = _active_mask(clean.samples)
    p_clean = float(np.mean(clean.samples[mask] ** 2))
    if p_clean <= 0:
        raise ValueError("clean signal is silent")
    p_noise = float(np.mean(samples[mask] ** 2))
    gain = float(np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0))))
    noisy = Waveform(clean.samples + gain * samples, clean.sample_rate)
    spec = MixSpec(clean_id=clean_id, noise_id=noise_id, snr_db=snr_db,
                   gain=gain, seed=seed)
    return noisy, spec


@dataclass
class CorpusConfig:
    """Desk-scale corpus sizing; defaults give the standard toy corpus."""

    counts: dict[str, int] = field(default_factory=lambda: {"train": 200, "val": 40, "test": 20})
    duration_s: float = 2.0
    seed: int = 0
    train_snr_range: tuple[float, float] = (-5.0, 10.0)
    test_snr_db: float = 0.0
    noise_kinds: tuple[str, ...] = NOISE_KINDS
    sample_rate: int = DEFAULT_SAMPLE_RATE


# Disjoint seed blocks per split so no waveform can repeat across splits.
_SPLIT_OFFSETS = {"train": 0, "val": 1_000_000, "test": 2_000_000}
_NOISE_SEED_BASE = 10_000_000


def build_corpus(cfg: CorpusConfig, out_dir) -> Manifest:
    """Generate WAVs for every (clean, noise, noisy) triple plus the
    manifest. Regenerating with the same config reproduces identical
    files."""
    out_dir = Path(out_dir)
    manifest = Manifest()
    for split, count in cfg.counts.items():
        split_dir = out_dir / split
        split_dir.mkdir(parents=True, exist_ok=True)
        split_rng = np.random.default_rng(cfg.seed + _SPLIT_OFFSETS[split] + 777)
        for i in range(count):
            clean_seed = cfg.seed + _SPLIT_OFFSETS[split] + i
            noise_seed = cfg.seed + _NOISE_SEED_BASE + _SPLIT_OFFSETS[split] + i
            kind = cfg.noise_kinds[int(split_rng.integers(len(cfg.noise_kinds)))]
            if split == "test":
                snr = cfg.test_snr_db
            else:
                snr = float(split_rng.uniform(*cfg.train_snr_range))
            clean = synthesize_speech(clean_seed, cfg.duration_s, cfg.sample_rate)
            noise = synthesize_noise(noise_seed, cfg.duration_s, kind, cfg.sample_rate)
            utt_id = f"{split}_{i:04d}"
            noisy, spec = mix_at_snr(
                clean, noise, snr,
                clean_id=f"speech-{clean_seed}", noise_id=f"{kind}-{noise_seed}",
                seed=clean_seed,
            )
            # The stored noise component is the scaled noise actually in
            # the mixture, so y = x + d holds for the stored triple.
            scaled_noise = Waveform(noisy.samples - clean.samples, cfg.sample_rate)
            paths = {}
            for tag, wav in (("clean", clean), ("noise", scaled_noise), ("noisy", noisy)):
                p = split_dir / f"{utt_id}_{tag}.wav"
                write_wav(p, wav)
                paths[tag] = str(p)
            manifest.records.append(ManifestRecord(
                split=split, utt_id=utt_id, noisy_path=paths["noisy"],
                clean_path=paths["clean"], noise_path=paths["noise"], spec=spec,
            ))
    manifest.save(out_dir / "manifest.jsonl")
    return manifest


def load_triple(record: ManifestRecord) -> tuple[Waveform, Waveform, Waveform]:
    """(noisy, clean, noise) waveforms for one manifest record."""
    return (read_wav(record.noisy_path), read_wav(record.clean_path),
            read_wav(record.noise_path))
