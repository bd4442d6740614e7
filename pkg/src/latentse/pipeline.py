"""End-to-end training and enhancement.

Stage 1a/1b pre-train the clean-speech and noise autoencoders; stage 1c
trains the mixture encoder against the frozen posteriors; stage 2 freezes
every encoder and refines the two decoders adversarially. Enhancement
runs the mixture encoder on noisy features, decodes the posterior means
(no sampling anywhere), and resynthesizes either directly from the
decoded speech log-power spectrum or through a ratio mask.

Features are standardized per frequency bin with statistics gathered from
the training split; the affine transform is stored in the checkpoint and
inverted before resynthesis.
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import models
from .autodiff import Adam, Tensor, engine
from .data import Manifest, ManifestRecord, load_triple
from .metrics import EvalRecord, si_sdr, stoi
from .models import (
    CLEAN_DEC,
    CLEAN_ENC,
    DISC_NOISE,
    DISC_SPEECH,
    MIX_DEC,
    MIX_ENC,
    ModelBundle,
    NOISE_DEC,
    NOISE_ENC,
    decode,
    discriminate,
    encode,
    mix_encode,
    mix_decoder_spec,
    reparameterize,
    scaled_specs,
)
from .objectives import (
    ObjectiveConfig,
    beta_pvae_loss,
    lsgan_discriminator_loss,
    lsgan_generator_loss,
    pvae_loss,
    vae_loss,
)
from .signal import (
    ComplexSpectrogram,
    LpsFeatures,
    StftConfig,
    TooShortError,
    Waveform,
    apply_mask,
    ideal_ratio_mask,
    istft,
    lps,
    reconstruct_from_lps,
    stft,
)

CHECKPOINT_MAGIC = b"LTSE"
CHECKPOINT_VERSION = 1

ENHANCE_MODES = ("L", "M")
_STAGE_SEEDS = {"cvae": 101, "nvae": 202, "nsvae": 303, "gan": 404}


class CheckpointError(RuntimeError):
    """Corrupt, truncated, or incompatible checkpoint file."""


@dataclass
class TrainConfig:
    """Every knob of the training pipeline.

    The defaults follow the full-scale recipe (batch 128, learning rate
    0.001, 64-frame segments); toy_train_config() shrinks widths and
    budgets to desk scale.
    """

    scale: str = "full"
    hidden: int = 512
    latent_dim: int = 128
    batch_size: int = 128
    learning_rate: float = 0.001
    epochs_per_stage: int = 10
    segment_frames: int = 64
    seed: int = 0
    precision: str = "float32"
    grad_clip: float | None = None
    patience: int = 5
    use_mix_decoder: bool = False
    normalize_features: bool = True
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs_per_stage < 1 or self.segment_frames < 1:
            raise ValueError("counts must be >= 1")
        if self.learning_rate < 0:
            # 0 is allowed and makes every stage a no-op on parameters,
            # which the tests rely on.
            raise ValueError("learning_rate must be non-negative")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be float32 or float64")

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def toy_train_config(**overrides) -> TrainConfig:
    """Desk-scale preset: 64-wide networks, 16-dim latents, 62-frame
    segments (two per 2 s utterance), three epochs per stage."""
    base = dict(scale="toy", hidden=64, latent_dim=16, batch_size=16,
                epochs_per_stage=3, segment_frames=62)
    base.update(overrides)
    return TrainConfig(**base)


def init_bundle(cfg: TrainConfig) -> ModelBundle:
    specs = scaled_specs(hidden=cfg.hidden, latent=cfg.latent_dim)
    if cfg.use_mix_decoder:
        specs[MIX_DEC] = mix_decoder_spec(hidden=cfg.hidden, latent=cfg.latent_dim)
    return ModelBundle.create(specs, seed=cfg.seed, dtype=cfg.dtype)


# -- feature preparation -------------------------------------------------------


@dataclass
class FeatureNorm:
    """Per-bin affine standardization of LPS features."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def invert(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


def utterance_lps(wave: Waveform, stft_cfg: StftConfig | None = None) -> np.ndarray:
    cfg = stft_cfg or StftConfig()
    return lps(stft(wave, cfg)).values


def segment_features(values: np.ndarray, segment_frames: int) -> np.ndarray:
    """Split (frames, bins) into fixed windows, dropping the partial tail."""
    n = values.shape[0] // segment_frames
    if n == 0:
        return np.zeros((0, segment_frames, values.shape[1]), dtype=values.dtype)
    return values[: n * segment_frames].reshape(n, segment_frames, values.shape[1])


def paired_segments(records: list[ManifestRecord], segment_frames: int):
    """Aligned (noisy, clean, noise) feature segments for every record."""
    ys, xs, ds = [], [], []
    for record in records:
        noisy, clean, noise = load_triple(record)
        ys.append(segment_features(utterance_lps(noisy), segment_frames))
        xs.append(segment_features(utterance_lps(clean), segment_frames))
        ds.append(segment_features(utterance_lps(noise), segment_frames))
    if not ys:
        raise ValueError("empty corpus")
    return np.concatenate(ys), np.concatenate(xs), np.concatenate(ds)


def fit_feature_norm(*segment_arrays: np.ndarray) -> FeatureNorm:
    stacked = np.concatenate([a.reshape(-1, a.shape[-1]) for a in segment_arrays])
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), 1e-3)
    return FeatureNorm(mean=mean, std=std)


# -- stage reporting ------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train: dict[str, float]
    val: dict[str, float]
    seconds: float


@dataclass
class StageReport:
    stage: str
    config_hash: str
    epochs: list[EpochRecord] = field(default_factory=list)

    def term_curve(self, term: str, split: str = "train") -> list[float]:
        return [getattr(e, split)[term] for e in self.epochs]

    def save(self, path):
        with open(path, "w") as f:
            for e in self.epochs:
                row = {"stage": self.stage, "config_hash": self.config_hash, **asdict(e)}
                f.write(json.dumps(row) + "\n")


class _TermAverager:
    def __init__(self):
        self.sums: dict[str, float] = {}
        self.count = 0

    def add(self, terms: dict[str, float]):
        for k, v in terms.items():
            self.sums[k] = self.sums.get(k, 0.0) + v
        self.count += 1

    def mean(self) -> dict[str, float]:
        if self.count == 0:
            return {}
        return {k: v / self.count for k, v in self.sums.items()}


def _check_finite(value: float, stage: str, epoch: int, batch: int):
    if not np.isfinite(value):
        raise RuntimeError(
            f"non-finite loss in stage {stage!r} at epoch {epoch}, batch {batch}"
        )


def _clip_gradients(params, max_norm: float | None):
    if max_norm is None:
        return
    total = 0.0
    grads = [p.grad for p in params if p.grad is not None]
    for g in grads:
        total += float(np.sum(g.astype(np.float64) ** 2))
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _to_batch(segments: np.ndarray, idx: np.ndarray, dtype) -> Tensor:
    # (n, T, F) -> time-major (T, B, F)
    return Tensor(np.ascontiguousarray(segments[idx].transpose(1, 0, 2), dtype=dtype))


def _norm_segments(segs: np.ndarray, norm: FeatureNorm | None) -> np.ndarray:
    return norm.apply(segs) if norm is not None else segs


# -- training stages ------------------------------------------------------------


def _train_loop(stage, bundle, cfg, batch_fn, val_fn, epochs=None):
    """Shared epoch/batch skeleton: batch_fn performs one update and
    returns term values; val_fn scores the validation data."""
    report = StageReport(stage=stage, config_hash=cfg.config_hash())
    best_val = np.inf
    stale = 0
    epochs = epochs or cfg.epochs_per_stage
    for epoch in range(1, epochs + 1):
        started = time.perf_counter()
        averager = _TermAverager()
        for b, terms in enumerate(batch_fn(epoch)):
            _check_finite(terms["total"], stage, epoch, b)
            averager.add(terms)
        val_terms = val_fn()
        record = EpochRecord(epoch=epoch, train=averager.mean(), val=val_terms,
                             seconds=time.perf_counter() - started)
        report.epochs.append(record)
        bundle.progress = {"stage": stage, "epoch": epoch,
                           "step": bundle.progress.get("step", 0)}
        val_total = val_terms.get("total", np.inf)
        if val_total < best_val - 1e-9:
            best_val, stale = val_total, 0
        else:
            stale += 1
            if cfg.patience and stale >= cfg.patience:
                break
    return report


def train_vae(bundle: ModelBundle, manifest: Manifest, which: str,
              cfg: TrainConfig, norm: FeatureNorm | None = None) -> StageReport:
    """Pre-train one autoencoder (which='clean' or 'noise') on its own
    signal kind with the reconstruction-plus-KL objective."""
    if which not in ("clean", "noise"):
        raise ValueError("which must be 'clean' or 'noise'")
    enc_role, dec_role = ((CLEAN_ENC, CLEAN_DEC) if which == "clean"
                          else (NOISE_ENC, NOISE_DEC))
    stage = "cvae" if which == "clean" else "nvae"
    train_y, train_x, train_d = paired_segments(manifest.split("train"), cfg.segment_frames)
    val_y, val_x, val_d = paired_segments(manifest.split("val"), cfg.segment_frames)
    segs = train_x if which == "clean" else train_d
    val_segs = val_x if which == "clean" else val_d
    segs = _norm_segments(segs, norm)
    val_segs = _norm_segments(val_segs, norm)

    params = bundle.parameters([enc_role, dec_role])
    bundle.set_trainable([enc_role, dec_role], True)
    opt = Adam(params, learning_rate=cfg.learning_rate)
    rng = np.random.default_rng([cfg.seed, _STAGE_SEEDS[stage]])

    def run_batch(x: Tensor, update: bool) -> dict[str, float]:
        posterior = encode(bundle, enc_role, x)
        loss = vae_loss(posterior, lambda z: decode(bundle, dec_role, z), x,
                        cfg.objective, rng)
        if update:
            opt.zero_grad()
            loss.total.backward()
            _clip_gradients(params, cfg.grad_clip)
            opt.step()
            bundle.progress["step"] = bundle.progress.get("step", 0) + 1
        return {"total": loss.value, **loss.terms}

    def batch_fn(epoch):
        for idx in _batches(len(segs), cfg.batch_size, rng):
            yield run_batch(_to_batch(segs, idx, cfg.dtype), update=True)

    def val_fn():
        averager = _TermAverager()
        with engine.frozen(params):
            for start in range(0, len(val_segs), cfg.batch_size):
                idx = np.arange(start, min(start + cfg.batch_size, len(val_segs)))
                averager.add(run_batch(_to_batch(val_segs, idx, cfg.dtype), update=False))
        return averager.mean()

    return _train_loop(stage, bundle, cfg, batch_fn, val_fn)


def train_nsvae(bundle: ModelBundle, manifest: Manifest, cfg: TrainConfig,
                norm: FeatureNorm | None = None) -> StageReport:
    """Train the mixture encoder to match the frozen clean/noise
    posteriors; only mixture-side parameters change."""
    train_y, train_x, train_d = paired_segments(manifest.split("train"), cfg.segment_frames)
    val_y, val_x, val_d = paired_segments(manifest.split("val"), cfg.segment_frames)
    train_y, train_x, train_d = (_norm_segments(a, norm) for a in (train_y, train_x, train_d))
    val_y, val_x, val_d = (_norm_segments(a, norm) for a in (val_y, val_x, val_d))

    roles = [MIX_ENC] + ([MIX_DEC] if cfg.use_mix_decoder else [])
    if cfg.use_mix_decoder and MIX_DEC not in bundle.nets:
        raise ValueError("config requests the joint decoder but the bundle lacks it")
    params = bundle.parameters(roles)
    bundle.set_trainable([CLEAN_ENC, NOISE_ENC, CLEAN_DEC, NOISE_DEC], False)
    bundle.set_trainable(roles, True)
    opt = Adam(params, learning_rate=cfg.learning_rate)
    rng = np.random.default_rng([cfg.seed, _STAGE_SEEDS["nsvae"]])

    def run_batch(y, x, d, update: bool) -> dict[str, float]:
        speech_target = encode(bundle, CLEAN_ENC, x)
        noise_target = encode(bundle, NOISE_ENC, d)
        p_x, p_d = mix_encode(bundle, y)
        if cfg.use_mix_decoder:
            loss = pvae_loss(p_x, p_d, speech_target, noise_target,
                             lambda z: decode(bundle, MIX_DEC, z), y,
                             cfg.objective, rng)
        else:
            loss = beta_pvae_loss(p_x, p_d, speech_target, noise_target,
                                  cfg.objective, rng)
        if update:
            opt.zero_grad()
            loss.total.backward()
            _clip_gradients(params, cfg.grad_clip)
            opt.step()
            bundle.progress["step"] = bundle.progress.get("step", 0) + 1
        return {"total": loss.value, **loss.terms}

    def batch_fn(epoch):
        for idx in _batches(len(train_y), cfg.batch_size, rng):
            yield run_batch(
                _to_batch(train_y, idx, cfg.dtype),
                _to_batch(train_x, idx, cfg.dtype),
                _to_batch(train_d, idx, cfg.dtype), update=True)

    def val_fn():
        averager = _TermAverager()
        with engine.frozen(params):
            for start in range(0, len(val_y), cfg.batch_size):
                idx = np.arange(start, min(start + cfg.batch_size, len(val_y)))
                averager.add(run_batch(
                    _to_batch(val_y, idx, cfg.dtype),
                    _to_batch(val_x, idx, cfg.dtype),
                    _to_batch(val_d, idx, cfg.dtype), update=False))
        return averager.mean()

    try:
        return _train_loop("nsvae", bundle, cfg, batch_fn, val_fn)
    finally:
        bundle.set_trainable(bundle.roles(), True)


def train_adversarial(bundle: ModelBundle, manifest: Manifest, cfg: TrainConfig,
                      norm: FeatureNorm | None = None) -> StageReport:
    """Refine the decoders with least-squares adversarial training; all
    encoders stay frozen. Each batch takes one discriminator step on
    detached decoder outputs, then one generator step against the updated
    discriminators."""
    for role in (DISC_SPEECH, DISC_NOISE):
        if role not in bundle.nets:
            raise ValueError(f"bundle lacks discriminator {role!r}")
    train_y, train_x, train_d = paired_segments(manifest.split("train"), cfg.segment_frames)
    val_y, val_x, val_d = paired_segments(manifest.split("val"), cfg.segment_frames)
    train_y, train_x, train_d = (_norm_segments(a, norm) for a in (train_y, train_x, train_d))
    val_y, val_x, val_d = (_norm_segments(a, norm) for a in (val_y, val_x, val_d))

    gen_params = bundle.parameters([CLEAN_DEC, NOISE_DEC])
    disc_params = bundle.parameters([DISC_SPEECH, DISC_NOISE])
    encoder_roles = [MIX_ENC, CLEAN_ENC, NOISE_ENC]
    bundle.set_trainable(encoder_roles, False)
    bundle.set_trainable([CLEAN_DEC, NOISE_DEC, DISC_SPEECH, DISC_NOISE], True)
    gen_opt = Adam(gen_params, learning_rate=cfg.learning_rate)
    disc_opt = Adam(disc_params, learning_rate=cfg.learning_rate)
    rng = np.random.default_rng([cfg.seed, _STAGE_SEEDS["gan"]])

    disc_speech_fn = lambda feats: discriminate(bundle, DISC_SPEECH, feats)
    disc_noise_fn = lambda feats: discriminate(bundle, DISC_NOISE, feats)

    def run_batch(y, x, d, update: bool) -> dict[str, float]:
        p_x, p_d = mix_encode(bundle, y)
        z_x = reparameterize(p_x, rng.standard_normal(p_x.mean.shape).astype(cfg.dtype))
        z_d = reparameterize(p_d, rng.standard_normal(p_d.mean.shape).astype(cfg.dtype))
        decoded_x = decode(bundle, CLEAN_DEC, z_x)
        decoded_d = decode(bundle, NOISE_DEC, z_d)

        disc_loss = (lsgan_discriminator_loss(disc_speech_fn, decoded_x.mean, x)
                     + lsgan_discriminator_loss(disc_noise_fn, decoded_d.mean, d))
        if update:
            disc_opt.zero_grad()
            disc_loss.backward()
            _clip_gradients(disc_params, cfg.grad_clip)
            disc_opt.step()

        gen_speech = lsgan_generator_loss(
            disc_speech_fn, bundle.parameters([DISC_SPEECH]), decoded_x, x, cfg.objective)
        gen_noise = lsgan_generator_loss(
            disc_noise_fn, bundle.parameters([DISC_NOISE]), decoded_d, d, cfg.objective)
        gen_total = gen_speech.total + gen_noise.total
        if update:
            gen_opt.zero_grad()
            gen_total.backward()
            _clip_gradients(gen_params, cfg.grad_clip)
            gen_opt.step()
            bundle.progress["step"] = bundle.progress.get("step", 0) + 1
        return {
            "total": gen_total.item() + disc_loss.item(),
            "gen": gen_total.item(),
            "disc": disc_loss.item(),
            "adv": gen_speech.terms["adv"] + gen_noise.terms["adv"],
            "recon": gen_speech.terms["recon"] + gen_noise.terms["recon"],
        }

    def batch_fn(epoch):
        for idx in _batches(len(train_y), cfg.batch_size, rng):
            yield run_batch(
                _to_batch(train_y, idx, cfg.dtype),
                _to_batch(train_x, idx, cfg.dtype),
                _to_batch(train_d, idx, cfg.dtype), update=True)

    def val_fn():
        averager = _TermAverager()
        with engine.frozen(gen_params + disc_params):
            for start in range(0, len(val_y), cfg.batch_size):
                idx = np.arange(start, min(start + cfg.batch_size, len(val_y)))
                averager.add(run_batch(
                    _to_batch(val_y, idx, cfg.dtype),
                    _to_batch(val_x, idx, cfg.dtype),
                    _to_batch(val_d, idx, cfg.dtype), update=False))
        return averager.mean()

    try:
        return _train_loop("gan", bundle, cfg, batch_fn, val_fn)
    finally:
        bundle.set_trainable(bundle.roles(), True)


# -- enhancement ----------------------------------------------------------------


def _pad_for_analysis(wave: Waveform, cfg: StftConfig) -> Waveform:
    """Zero-pad both ends so every original sample is an interior sample
    of the overlap-add reconstruction."""
    if len(wave) < cfg.frame_len:
        raise TooShortError(
            f"need at least {cfg.frame_len} samples, got {len(wave)}")
    return Waveform(np.pad(wave.samples, (cfg.frame_len, cfg.frame_len)),
                    wave.sample_rate)


def _crop_after_synthesis(wave: Waveform, cfg: StftConfig, out_len: int,
                          sample_rate: int) -> Waveform:
    samples = wave.samples[cfg.frame_len : cfg.frame_len + out_len]
    if len(samples) < out_len:
        samples = np.pad(samples, (0, out_len - len(samples)))
    return Waveform(samples, sample_rate)


def decode_spectra(bundle: ModelBundle, noisy: Waveform,
                   norm: FeatureNorm | None = None,
                   stft_cfg: StftConfig | None = None
                   ) -> tuple[LpsFeatures, LpsFeatures, ComplexSpectrogram]:
    """Decoded speech/noise log-power spectra for a noisy utterance
    (edge-padded for analysis), plus its spectrogram. Uses posterior means
    only and builds no graph."""
    for role in (MIX_ENC, CLEAN_DEC, NOISE_DEC):
        if role not in bundle.nets:
            raise ValueError(f"bundle lacks {role!r}; not a trained enhancer")
    cfg = stft_cfg or StftConfig()
    noisy_spec = stft(_pad_for_analysis(noisy, cfg), cfg)
    feats = lps(noisy_spec).values
    if norm is not None:
        feats = norm.apply(feats)
    feats = feats[:, None, :].astype(bundle.dtype)

    with engine.frozen(bundle.parameters()):
        p_speech, p_noise = mix_encode(bundle, feats)
        speech_out = decode(bundle, CLEAN_DEC, p_speech.mean)
        noise_out = decode(bundle, NOISE_DEC, p_noise.mean)
    speech_lps = speech_out.mean.data[:, 0, :].astype(np.float64)
    noise_lps = noise_out.mean.data[:, 0, :].astype(np.float64)
    if norm is not None:
        speech_lps = norm.invert(speech_lps)
        noise_lps = norm.invert(noise_lps)
    return LpsFeatures(speech_lps, cfg), LpsFeatures(noise_lps, cfg), noisy_spec


def enhance(bundle: ModelBundle, noisy: Waveform, mode: str = "M",
            norm: FeatureNorm | None = None,
            stft_cfg: StftConfig | None = None,
            debug_force_mask: np.ndarray | None = None
            ) -> tuple[Waveform, Waveform]:
    """Estimate (speech, noise) waveforms from a noisy mixture.

    Posterior means feed the decoders directly: enhancement consumes no
    randomness. Mode 'L' rebuilds the waveform from the decoded speech
    spectrum with the noisy phase; mode 'M' applies a ratio mask built
    from the decoded speech and noise spectra to the noisy spectrogram.
    """
    if mode not in ENHANCE_MODES:
        raise ValueError(f"mode must be one of {ENHANCE_MODES}, got {mode!r}")
    speech_feats, noise_feats, noisy_spec = decode_spectra(bundle, noisy, norm, stft_cfg)

    if mode == "L":
        speech_wave = reconstruct_from_lps(speech_feats, noisy_spec)
        noise_wave = reconstruct_from_lps(noise_feats, noisy_spec)
    else:
        if debug_force_mask is not None:
            from .signal import Mask

            speech_mask = Mask(debug_force_mask)
            noise_mask = Mask(1.0 - debug_force_mask)
        else:
            speech_mask = ideal_ratio_mask(speech_feats, noise_feats)
            noise_mask = ideal_ratio_mask(noise_feats, speech_feats)
        speech_wave = istft(apply_mask(speech_mask, noisy_spec))
        noise_wave = istft(apply_mask(noise_mask, noisy_spec))

    cfg = noisy_spec.config
    return (_crop_after_synthesis(speech_wave, cfg, len(noisy), noisy.sample_rate),
            _crop_after_synthesis(noise_wave, cfg, len(noisy), noisy.sample_rate))


def evaluate(bundle: ModelBundle | None, manifest: Manifest, mode: str,
             split: str = "test", norm: FeatureNorm | None = None
             ) -> list[EvalRecord]:
    """Score a split: mode 'noisy' is the unprocessed baseline, 'oracle'
    masks with the true component spectra, 'L'/'M' run the model."""
    records = []
    for record in manifest.split(split):
        noisy, clean, noise = load_triple(record)
        if mode == "noisy":
            estimate = noisy
        elif mode == "oracle":
            cfg = StftConfig()
            noisy_spec = stft(_pad_for_analysis(noisy, cfg), cfg)
            mask = ideal_ratio_mask(lps(stft(_pad_for_analysis(clean, cfg), cfg)),
                                    lps(stft(_pad_for_analysis(noise, cfg), cfg)))
            est = istft(apply_mask(mask, noisy_spec))
            estimate = _crop_after_synthesis(est, cfg, len(noisy), noisy.sample_rate)
        elif mode in ENHANCE_MODES:
            if bundle is None:
                raise ValueError("model modes require a trained bundle")
            estimate, _ = enhance(bundle, noisy, mode=mode, norm=norm)
        else:
            raise ValueError(f"unknown evaluation mode {mode!r}")
        records.append(EvalRecord(
            utt_id=record.utt_id,
            snr_db=record.spec.snr_db,
            si_sdr_db=si_sdr(clean, estimate),
            stoi=stoi(clean, estimate),
            mode=mode,
        ))
    return records


# -- checkpoint format ----------------------------------------------------------
#
# magic "LTSE" | u32 version | u64 header length | header JSON (utf-8) |
# parameter blocks, little-endian float32, in header declaration order.


def save_checkpoint(bundle: ModelBundle, path, norm: FeatureNorm | None = None,
                    seed: int | None = None) -> None:
    blocks = [(name, np.ascontiguousarray(p.data, dtype="<f4"))
              for name, p in bundle.named_parameters()]
    header = {
        "format_version": CHECKPOINT_VERSION,
        "latent_dim": bundle.latent_dim,
        "feat_dim": bundle.feat_dim,
        "progress": bundle.progress,
        "seed": seed,
        "specs": {role: asdict(spec) for role, spec in sorted(bundle.specs.items())},
        "blocks": [{"name": n, "shape": list(a.shape)} for n, a in blocks],
        "feature_norm": None if norm is None else {
            "mean": norm.mean.astype(float).tolist(),
            "std": norm.std.astype(float).tolist(),
        },
    }
    payload = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(payload)))
        f.write(payload)
        for _, arr in blocks:
            f.write(arr.tobytes())


def load_checkpoint(path) -> tuple[ModelBundle, FeatureNorm | None]:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )
    (header_len,) = struct.unpack_from("<Q", raw, 8)
    header_end = 16 + header_len
    if len(raw) < header_end:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16:header_end].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc

    specs = {role: models.NetworkSpec(**spec_dict)
             for role, spec_dict in header["specs"].items()}
    bundle = ModelBundle.create(specs, seed=0, dtype=np.float32)
    bundle.progress = header.get("progress", bundle.progress)
    named = dict(bundle.named_parameters())
    offset = header_end
    for block in header["blocks"]:
        name, shape = block["name"], tuple(block["shape"])
        if name not in named:
            raise CheckpointError(f"{path}: unknown parameter block {name!r}")
        param = named[name]
        if param.data.shape != shape:
            raise CheckpointError(
                f"{path}: shape mismatch for block {name!r}: file has {shape}, "
                f"model expects {param.data.shape}"
            )
        nbytes = int(np.prod(shape)) * 4
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated at block {name!r}")
        param.data = np.frombuffer(raw[offset : offset + nbytes], dtype="<f4").reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    norm = None
    if header.get("feature_norm"):
        norm = FeatureNorm(
            mean=np.asarray(header["feature_norm"]["mean"], dtype=np.float64),
            std=np.asarray(header["feature_norm"]["std"], dtype=np.float64),
        )
    return bundle, norm


def run_full_training(manifest: Manifest, cfg: TrainConfig
                      ) -> tuple[ModelBundle, FeatureNorm | None, dict[str, StageReport]]:
    """All stages in order on one manifest; returns the trained bundle,
    the feature normalizer, and the per-stage reports."""
    bundle = init_bundle(cfg)
    norm = None
    if cfg.normalize_features:
        train_y, train_x, train_d = paired_segments(
            manifest.split("train"), cfg.segment_frames)
        norm = fit_feature_norm(train_y, train_x, train_d)
    reports = {
        "cvae": train_vae(bundle, manifest, "clean", cfg, norm),
        "nvae": train_vae(bundle, manifest, "noise", cfg, norm),
    }
    reports["nsvae"] = train_nsvae(bundle, manifest, cfg, norm)
    reports["gan"] = train_adversarial(bundle, manifest, cfg, norm)
    return bundle, norm, reports
