"""Tests for training stages, checkpointing, and enhancement.

These use a micro corpus (a few short utterances, 16-wide networks) so
the whole module stays fast; the full toy-scale run lives in the
acceptance suite.
"""

import numpy as np
import pytest

from latentse.data import CorpusConfig, build_corpus
from latentse.models import (
    CLEAN_DEC,
    CLEAN_ENC,
    DISC_NOISE,
    DISC_SPEECH,
    MIX_ENC,
    NOISE_DEC,
    NOISE_ENC,
    ModelBundle,
    scaled_specs,
)
from latentse.pipeline import (
    CheckpointError,
    FeatureNorm,
    TrainConfig,
    decode_spectra,
    enhance,
    evaluate,
    fit_feature_norm,
    init_bundle,
    load_checkpoint,
    paired_segments,
    save_checkpoint,
    segment_features,
    toy_train_config,
    train_adversarial,
    train_nsvae,
    train_vae,
    utterance_lps,
)
from latentse.signal import StftConfig, TooShortError, Waveform, istft, stft


def micro_cfg(**overrides):
    base = dict(scale="toy", hidden=16, latent_dim=4, batch_size=4,
                epochs_per_stage=2, segment_frames=24, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def micro_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("micro_corpus")
    cfg = CorpusConfig(counts={"train": 6, "val": 2, "test": 2},
                       duration_s=0.8, seed=1)
    manifest = build_corpus(cfg, root)
    return manifest


@pytest.fixture(scope="module")
def micro_norm(micro_corpus):
    y, x, d = paired_segments(micro_corpus.split("train"), 24)
    return fit_feature_norm(y, x, d)


class TestFeaturePrep:
    def test_segment_shapes(self, micro_corpus):
        rec = micro_corpus.split("train")[0]
        from latentse.data import load_triple

        noisy, _, _ = load_triple(rec)
        feats = utterance_lps(noisy)
        segs = segment_features(feats, 24)
        assert segs.shape[1:] == (24, 257)
        assert segs.shape[0] == feats.shape[0] // 24

    def test_norm_round_trip(self, micro_norm):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(5, 257))
        np.testing.assert_allclose(micro_norm.invert(micro_norm.apply(x)), x, rtol=1e-12)

    def test_paired_segments_aligned(self, micro_corpus):
        y, x, d = paired_segments(micro_corpus.split("train"), 24)
        assert y.shape == x.shape == d.shape


class TestTrainVae:
    def test_zero_learning_rate_is_identity(self, micro_corpus):
        cfg = micro_cfg(learning_rate=0.0, epochs_per_stage=1)
        bundle = init_bundle(cfg)
        before = bundle.param_hash()
        report = train_vae(bundle, micro_corpus, "clean", cfg)
        assert bundle.param_hash() == before
        assert len(report.epochs) == 1
        assert report.epochs[0].train["total"] > 0

    def test_loss_halves_over_training(self, micro_corpus):
        # Raw (unnormalized) features start far from the network's reach,
        # so the reconstruction loss must fall well below half of the
        # epoch-1 mean within twenty epochs.
        cfg = micro_cfg(epochs_per_stage=20, normalize_features=False, patience=0)
        bundle = init_bundle(cfg)
        report = train_vae(bundle, micro_corpus, "clean", cfg)
        curve = report.term_curve("total")
        assert curve[-1] <= 0.5 * curve[0], curve

    def test_identical_seeds_identical_losses(self, micro_corpus):
        cfg = micro_cfg(precision="float64")
        r1 = train_vae(init_bundle(cfg), micro_corpus, "noise", cfg)
        r2 = train_vae(init_bundle(cfg), micro_corpus, "noise", cfg)
        assert r1.term_curve("total") == r2.term_curve("total")
        assert r1.term_curve("total", "val") == r2.term_curve("total", "val")

    def test_rejects_unknown_component(self, micro_corpus):
        with pytest.raises(ValueError):
            train_vae(init_bundle(micro_cfg()), micro_corpus, "mixture", micro_cfg())


class TestTrainNsvae:
    def test_frozen_roles_unchanged(self, micro_corpus, micro_norm):
        cfg = micro_cfg()
        bundle = init_bundle(cfg)
        train_vae(bundle, micro_corpus, "clean", cfg, micro_norm)
        train_vae(bundle, micro_corpus, "noise", cfg, micro_norm)
        frozen_roles = [CLEAN_ENC, CLEAN_DEC, NOISE_ENC, NOISE_DEC,
                        DISC_SPEECH, DISC_NOISE]
        before = bundle.param_hash(frozen_roles)
        mix_before = bundle.param_hash([MIX_ENC])
        report = train_nsvae(bundle, micro_corpus, cfg, micro_norm)
        assert bundle.param_hash(frozen_roles) == before
        assert bundle.param_hash([MIX_ENC]) != mix_before
        assert len(report.epochs) == cfg.epochs_per_stage

    def test_zero_learning_rate_is_identity(self, micro_corpus):
        cfg = micro_cfg(learning_rate=0.0, epochs_per_stage=1)
        bundle = init_bundle(cfg)
        before = bundle.param_hash()
        train_nsvae(bundle, micro_corpus, cfg)
        assert bundle.param_hash() == before

    def test_supervision_term_decreases(self, micro_corpus, micro_norm):
        cfg = micro_cfg(epochs_per_stage=6)
        bundle = init_bundle(cfg)
        train_vae(bundle, micro_corpus, "clean", cfg, micro_norm)
        train_vae(bundle, micro_corpus, "noise", cfg, micro_norm)
        report = train_nsvae(bundle, micro_corpus, cfg, micro_norm)
        curve = report.term_curve("kl_x")
        assert curve[-1] < curve[0]

    def test_mix_decoder_requires_role(self, micro_corpus):
        cfg = micro_cfg(use_mix_decoder=True)
        bundle = ModelBundle.create(scaled_specs(hidden=16, latent=4), seed=0)
        with pytest.raises(ValueError, match="joint decoder"):
            train_nsvae(bundle, micro_corpus, cfg)

    def test_mix_decoder_path_trains(self, micro_corpus, micro_norm):
        cfg = micro_cfg(use_mix_decoder=True, epochs_per_stage=1)
        bundle = init_bundle(cfg)
        report = train_nsvae(bundle, micro_corpus, cfg, micro_norm)
        assert "recon" in report.epochs[0].train


@pytest.fixture(scope="module")
def staged(micro_corpus, micro_norm):
    cfg = micro_cfg(epochs_per_stage=3)
    bundle = init_bundle(cfg)
    train_vae(bundle, micro_corpus, "clean", cfg, micro_norm)
    train_vae(bundle, micro_corpus, "noise", cfg, micro_norm)
    train_nsvae(bundle, micro_corpus, cfg, micro_norm)
    return bundle, cfg


@pytest.fixture(scope="module")
def trained(micro_corpus, micro_norm):
    cfg = micro_cfg()
    bundle = init_bundle(cfg)
    train_vae(bundle, micro_corpus, "clean", cfg, micro_norm)
    train_vae(bundle, micro_corpus, "noise", cfg, micro_norm)
    train_nsvae(bundle, micro_corpus, cfg, micro_norm)
    return bundle


@pytest.fixture(scope="module")
def noisy(micro_corpus):
    from latentse.data import load_triple

    return load_triple(micro_corpus.split("test")[0])[0]


class TestTrainAdversarial:
    def test_encoders_frozen_and_disc_improves(self, staged, micro_corpus, micro_norm):
        bundle, cfg = staged
        encoder_hash = bundle.param_hash([CLEAN_ENC, NOISE_ENC, MIX_ENC])
        decoder_hash = bundle.param_hash([CLEAN_DEC, NOISE_DEC])
        report = train_adversarial(bundle, micro_corpus, cfg, micro_norm)
        assert bundle.param_hash([CLEAN_ENC, NOISE_ENC, MIX_ENC]) == encoder_hash
        assert bundle.param_hash([CLEAN_DEC, NOISE_DEC]) != decoder_hash
        disc_curve = report.term_curve("disc")
        assert all(np.isfinite(v) for v in disc_curve)
        assert disc_curve[-1] < disc_curve[0]

    def test_missing_discriminator_rejected(self, micro_corpus):
        cfg = micro_cfg()
        specs = scaled_specs(hidden=16, latent=4)
        del specs[DISC_SPEECH]
        bundle = ModelBundle.create(specs, seed=0)
        with pytest.raises(ValueError, match="discriminator"):
            train_adversarial(bundle, micro_corpus, cfg)


class TestEnhance:
    def test_all_ones_debug_mask_is_stft_round_trip(self, trained, noisy, micro_norm):
        # Analysis pads the waveform, so every original sample is interior
        # and the identity mask reproduces the input everywhere.
        frames = StftConfig().num_frames(len(noisy) + 2 * 512)
        ones = np.ones((frames, 257))
        out, _ = enhance(trained, noisy, mode="M", norm=micro_norm,
                         debug_force_mask=ones)
        assert np.max(np.abs(out.samples - noisy.samples)) < 1e-5

    def test_deterministic_and_consumes_no_randomness(self, trained, noisy, micro_norm):
        state_before = np.random.get_state()[1].copy()
        a, an = enhance(trained, noisy, mode="M", norm=micro_norm)
        b, bn = enhance(trained, noisy, mode="M", norm=micro_norm)
        np.testing.assert_array_equal(a.samples, b.samples)
        np.testing.assert_array_equal(an.samples, bn.samples)
        np.testing.assert_array_equal(np.random.get_state()[1], state_before)

    def test_mode_m_never_amplifies_bins(self, trained, noisy, micro_norm):
        speech_feats, noise_feats, noisy_spec = decode_spectra(
            trained, noisy, micro_norm)
        from latentse.signal import apply_mask, ideal_ratio_mask

        mask = ideal_ratio_mask(speech_feats, noise_feats)
        masked = apply_mask(mask, noisy_spec)
        assert np.all(np.abs(masked.values) <= np.abs(noisy_spec.values) + 1e-12)

    def test_mode_l_output_lengths(self, trained, noisy, micro_norm):
        speech, noise_est = enhance(trained, noisy, mode="L", norm=micro_norm)
        assert len(speech) == len(noisy) == len(noise_est)

    def test_invalid_mode(self, trained, noisy):
        with pytest.raises(ValueError, match="mode"):
            enhance(trained, noisy, mode="X")

    def test_too_short_input(self, trained):
        with pytest.raises(TooShortError):
            enhance(trained, Waveform(np.zeros(100)))

    def test_incomplete_bundle_rejected(self, noisy):
        specs = scaled_specs(hidden=16, latent=4)
        del specs[MIX_ENC]
        bundle = ModelBundle.create(specs, seed=0)
        with pytest.raises(ValueError, match="mix_enc"):
            enhance(bundle, noisy)

    def test_evaluate_modes(self, trained, micro_corpus, micro_norm):
        noisy_records = evaluate(None, micro_corpus, "noisy")
        oracle_records = evaluate(None, micro_corpus, "oracle")
        model_records = evaluate(trained, micro_corpus, "M", norm=micro_norm)
        assert len(noisy_records) == len(oracle_records) == len(model_records) == 2
        mean = lambda rs: np.mean([r.si_sdr_db for r in rs])
        assert mean(oracle_records) > mean(noisy_records)

    def test_evaluate_requires_bundle_for_model_modes(self, micro_corpus):
        with pytest.raises(ValueError, match="bundle"):
            evaluate(None, micro_corpus, "M")


class TestCheckpoint:
    @pytest.fixture()
    def bundle(self):
        cfg = micro_cfg()
        return init_bundle(cfg)

    def test_round_trip_is_byte_identical(self, bundle, tmp_path):
        norm = FeatureNorm(mean=np.linspace(-5, 1, 257), std=np.full(257, 2.0))
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(bundle, p1, norm=norm, seed=3)
        loaded, norm2 = load_checkpoint(p1)
        save_checkpoint(loaded, p2, norm=norm2, seed=3)
        assert p1.read_bytes() == p2.read_bytes()
        np.testing.assert_array_equal(norm2.mean, norm.mean)

    def test_round_trip_preserves_inference(self, bundle, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(bundle, path)
        loaded, _ = load_checkpoint(path)
        from latentse.models import encode

        feats = np.random.default_rng(0).normal(size=(3, 1, 257)).astype(np.float32)
        a = encode(bundle, CLEAN_ENC, feats)
        b = encode(loaded, CLEAN_ENC, feats)
        np.testing.assert_array_equal(a.mean.data, b.mean.data)
        np.testing.assert_array_equal(a.log_var.data, b.log_var.data)

    def test_truncated_file_rejected(self, bundle, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(bundle, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 100])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        path.write_bytes(b"WHAT" + b"\x00" * 100)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_version_mismatch_rejected(self, bundle, tmp_path):
        import struct

        path = tmp_path / "m.ckpt"
        save_checkpoint(bundle, path)
        blob = bytearray(path.read_bytes())
        blob[4:8] = struct.pack("<I", 99)
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_shape_mismatch_names_block(self, bundle, tmp_path):
        # Doctor the header so one block disagrees with the spec table.
        import json
        import struct

        path = tmp_path / "m.ckpt"
        save_checkpoint(bundle, path)
        blob = path.read_bytes()
        (header_len,) = struct.unpack_from("<Q", blob, 8)
        header = json.loads(blob[16 : 16 + header_len].decode())
        header["blocks"][0]["shape"] = [3, 3]
        payload = json.dumps(header, sort_keys=True).encode()
        doctored = blob[:8] + struct.pack("<Q", len(payload)) + payload + blob[16 + header_len :]
        path.write_bytes(doctored)
        with pytest.raises(CheckpointError, match="clean_enc/pre0.weights"):
            load_checkpoint(path)


class TestToyConfig:
    def test_preset_values(self):
        cfg = toy_train_config()
        assert cfg.hidden == 64 and cfg.latent_dim == 16
        assert cfg.epochs_per_stage == 3 and cfg.segment_frames == 62
        assert cfg.learning_rate == 0.001

    def test_full_default_values(self):
        cfg = TrainConfig()
        assert cfg.batch_size == 128 and cfg.hidden == 512 and cfg.latent_dim == 128

    def test_hash_changes_with_config(self):
        assert TrainConfig().config_hash() != TrainConfig(seed=1).config_hash()
