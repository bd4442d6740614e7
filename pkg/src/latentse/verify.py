"""Gradient verification across every layer type and every loss.

Runs at 64-bit precision on tiny network widths; each check compares the
engine's gradients against central finite differences.
"""

from __future__ import annotations

import numpy as np

from .autodiff import DenseLayer, GradCheckReport, GruLayer, Tensor, engine, gradient_check
from .models import (
    CLEAN_DEC,
    CLEAN_ENC,
    DISC_SPEECH,
    MIX_ENC,
    NOISE_ENC,
    ModelBundle,
    decode,
    discriminate,
    encode,
    mix_encode,
    reparameterize,
    scaled_specs,
)
from .objectives import (
    ObjectiveConfig,
    beta_pvae_loss,
    lsgan_discriminator_loss,
    lsgan_generator_loss,
    vae_loss,
)

TINY = dict(hidden=6, latent=3, feat=9)


def _tiny_bundle(seed: int) -> ModelBundle:
    return ModelBundle.create(scaled_specs(**TINY), seed=seed, dtype=np.float64)


def _check_dense_gru_stack(seed: int, tolerance: float) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    dense = DenseLayer(5, 4, "relu", rng=rng, dtype=np.float64)
    gru = GruLayer(4, 4, rng=rng, dtype=np.float64)
    heads = [DenseLayer(4, 2, act, rng=rng, dtype=np.float64)
             for act in ("linear", "sigmoid", "tanh")]
    x = Tensor(rng.normal(size=(3, 2, 5)))

    def fn():
        h = gru(dense(x))
        total = None
        for head in heads:
            term = engine.square(head(h)).mean()
            total = term if total is None else total + term
        return total

    params = [(f"dense.{n}", p) for n, p in dense.named_parameters()]
    params += [(f"gru.{n}", p) for n, p in gru.named_parameters()]
    for i, head in enumerate(heads):
        params += [(f"head{i}.{n}", p) for n, p in head.named_parameters()]
    return gradient_check(fn, params, tolerance=tolerance)


def _check_vae_loss(seed: int, tolerance: float) -> GradCheckReport:
    bundle = _tiny_bundle(seed)
    rng = np.random.default_rng(seed + 1)
    x = rng.normal(size=(2, 1, TINY["feat"]))
    noise = rng.standard_normal((2, 1, TINY["latent"]))
    cfg = ObjectiveConfig(beta=1.3)

    def fn():
        posterior = encode(bundle, CLEAN_ENC, x)
        class _FixedRng:
            def standard_normal(self, shape):
                return noise

        return vae_loss(posterior, lambda z: decode(bundle, CLEAN_DEC, z), x,
                        cfg, _FixedRng()).total

    return gradient_check(fn, bundle.named_parameters([CLEAN_ENC, CLEAN_DEC]),
                          tolerance=tolerance)


def _check_beta_pvae_loss(seed: int, tolerance: float) -> GradCheckReport:
    bundle = _tiny_bundle(seed)
    rng = np.random.default_rng(seed + 2)
    x = rng.normal(size=(2, 1, TINY["feat"]))
    d = rng.normal(size=(2, 1, TINY["feat"]))
    y = x + d
    cfg = ObjectiveConfig()

    def fn():
        p_x, p_d = mix_encode(bundle, y)
        return beta_pvae_loss(
            p_x, p_d, encode(bundle, CLEAN_ENC, x), encode(bundle, NOISE_ENC, d),
            cfg, rng,
        ).total

    return gradient_check(fn, bundle.named_parameters([MIX_ENC]), tolerance=tolerance)


def _check_lsgan_losses(seed: int, tolerance: float) -> GradCheckReport:
    bundle = _tiny_bundle(seed)
    rng = np.random.default_rng(seed + 3)
    z = rng.normal(size=(2, 1, TINY["latent"]))
    real = rng.normal(size=(2, 1, TINY["feat"]))
    disc_fn = lambda feats: discriminate(bundle, DISC_SPEECH, feats)
    cfg = ObjectiveConfig()

    def gen_fn():
        decoded = decode(bundle, CLEAN_DEC, z)
        return lsgan_generator_loss(
            disc_fn, bundle.parameters([DISC_SPEECH]), decoded, real, cfg).total

    gen_report = gradient_check(fn=gen_fn, params=bundle.named_parameters([CLEAN_DEC]),
                                tolerance=tolerance)

    def disc_loss_fn():
        decoded = decode(bundle, CLEAN_DEC, z)
        return lsgan_discriminator_loss(disc_fn, decoded.mean, real)

    disc_report = gradient_check(fn=disc_loss_fn,
                                 params=bundle.named_parameters([DISC_SPEECH]),
                                 tolerance=tolerance)
    return GradCheckReport(gen_report.checks + disc_report.checks, tolerance)


def _check_reparameterize(seed: int, tolerance: float) -> GradCheckReport:
    rng = np.random.default_rng(seed + 4)
    from .models import DiagGaussian

    mean = Tensor(rng.normal(size=5), requires_grad=True)
    log_var = Tensor(rng.uniform(-1, 1, 5), requires_grad=True)
    noise = rng.standard_normal(5)

    def fn():
        z = reparameterize(DiagGaussian(mean, log_var), noise)
        return engine.square(z).sum()

    return gradient_check(fn, [("mean", mean), ("log_var", log_var)],
                          tolerance=tolerance)


CHECKS = {
    "dense_gru_stack": _check_dense_gru_stack,
    "reparameterize": _check_reparameterize,
    "vae_loss": _check_vae_loss,
    "beta_pvae_loss": _check_beta_pvae_loss,
    "lsgan_losses": _check_lsgan_losses,
}


def gradient_suite(seeds=range(10), tolerance: float = 1e-4):
    """Run every check over every seed; returns (name, seed, report)."""
    results = []
    for name, check in CHECKS.items():
        for seed in seeds:
            results.append((name, seed, check(seed, tolerance)))
    return results
