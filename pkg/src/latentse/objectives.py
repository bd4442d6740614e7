"""Differentiable training objectives.

Closed-form Gaussian quantities (KL divergence, expected log-density,
log-likelihood) sum over the latent/feature axis and average over frames
and batch. Latent-space expectations are evaluated in closed form by
default; a Monte-Carlo mode with shared reparameterized draws is kept for
verification. Supervision targets entering the latent-matching loss are
always detached, so gradients reach only the mixture encoder; the
adversarial losses likewise freeze the parameters that their equations
hold fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, engine
from .autodiff.engine import frozen
from .models import DiagGaussian, reparameterize

LN_TWO_PI = math.log(2.0 * math.pi)

TERM_NAMES = ("kl_x", "kl_d", "reg_x", "reg_d", "recon", "adv")


@dataclass
class ObjectiveConfig:
    """Loss weighting and estimation knobs.

    beta scales the KL term of the plain autoencoder loss; term_weights
    (default 1 everywhere) scale the named terms of the composite losses;
    mc_samples controls sampled expectations.
    """

    beta: float = 1.0
    term_weights: dict[str, float] = field(default_factory=dict)
    mc_samples: int = 1
    closed_form_latent_terms: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise ValueError("beta must be finite and >= 0")
        for name, w in self.term_weights.items():
            if name not in TERM_NAMES:
                raise ValueError(f"unknown loss term {name!r}")
            if not (np.isfinite(w) and w >= 0):
                raise ValueError(f"weight for {name!r} must be finite and >= 0")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")

    def weight(self, name: str) -> float:
        return float(self.term_weights.get(name, 1.0))


@dataclass
class LossBreakdown:
    """Scalar loss with its named, unweighted term values.

    total carries the graph; terms/weights are detached floats satisfying
    total == sum(weights[k] * terms[k]) up to rounding.
    """

    total: Tensor
    terms: dict[str, float]
    weights: dict[str, float]

    @property
    def value(self) -> float:
        return self.total.item()


def _combine(parts: dict[str, tuple[float, Tensor]]) -> LossBreakdown:
    total = None
    terms, weights = {}, {}
    for name, (w, term) in parts.items():
        terms[name] = term.item()
        weights[name] = w
        piece = term * w
        total = piece if total is None else total + piece
    return LossBreakdown(total=total, terms=terms, weights=weights)


def _reduce(t: Tensor) -> Tensor:
    """Sum over the trailing axis, average over any leading axes."""
    return t.sum(axis=-1).mean()


def _check_dims(a: DiagGaussian, b: DiagGaussian):
    if a.mean.shape != b.mean.shape:
        raise ValueError(f"dimension mismatch: {a.mean.shape} vs {b.mean.shape}")


def _standard_like(g: DiagGaussian) -> DiagGaussian:
    zeros = np.zeros(g.mean.shape, dtype=g.mean.dtype)
    return DiagGaussian(Tensor(zeros), Tensor(zeros.copy()))


def kl_diag(p: DiagGaussian, q: DiagGaussian) -> Tensor:
    """KL(p || q) for diagonal Gaussians, closed form, always >= 0."""
    _check_dims(p, q)
    var_p = engine.exp(p.log_var)
    diff = p.mean - q.mean
    inv_var_q = engine.exp(-q.log_var)
    expr = (q.log_var - p.log_var) + (var_p + engine.square(diff)) * inv_var_q - 1.0
    return _reduce(expr) * 0.5


def gauss_cross_entropy(p: DiagGaussian, q: DiagGaussian) -> Tensor:
    """E_{z ~ p}[log q(z)] in closed form (negative cross-entropy)."""
    _check_dims(p, q)
    var_p = engine.exp(p.log_var)
    diff = p.mean - q.mean
    inv_var_q = engine.exp(-q.log_var)
    expr = LN_TWO_PI + q.log_var + (var_p + engine.square(diff)) * inv_var_q
    return _reduce(expr) * -0.5


def gauss_loglik(x, g: DiagGaussian) -> Tensor:
    """log density of x under g, summed over bins, averaged over frames."""
    x_t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=g.mean.dtype))
    if x_t.shape != g.mean.shape:
        raise ValueError(f"dimension mismatch: {x_t.shape} vs {g.mean.shape}")
    diff = x_t - g.mean
    expr = LN_TWO_PI + g.log_var + engine.square(diff) * engine.exp(-g.log_var)
    return _reduce(expr) * -0.5


def _draw(rng: np.random.Generator, g: DiagGaussian) -> Tensor:
    noise = rng.standard_normal(g.mean.shape).astype(g.mean.dtype)
    return reparameterize(g, noise)


def _mc_mean(samples: list[Tensor]) -> Tensor:
    acc = samples[0]
    for s in samples[1:]:
        acc = acc + s
    return acc * (1.0 / len(samples))


def vae_loss(posterior: DiagGaussian, decoder_fn, x, cfg: ObjectiveConfig,
             rng: np.random.Generator, kl_name: str = "kl_x") -> LossBreakdown:
    """beta * KL(posterior || N(0, I)) plus the negative reconstruction
    log-likelihood, the latter estimated with mc_samples reparameterized
    draws through decoder_fn."""
    prior = _standard_like(posterior)
    kl = kl_diag(posterior, prior)
    recons = []
    for _ in range(cfg.mc_samples):
        z = _draw(rng, posterior)
        recons.append(gauss_loglik(x, decoder_fn(z)))
    recon = -_mc_mean(recons)
    return _combine({
        kl_name: (cfg.beta * cfg.weight(kl_name), kl),
        "recon": (cfg.weight("recon"), recon),
    })


def _latent_match_terms(p: DiagGaussian, target: DiagGaussian,
                        cfg: ObjectiveConfig, rng: np.random.Generator):
    """KL-to-target plus the log-ratio regularizer against the unit prior.

    Closed form by default; in MC mode both terms share the same draws
    from p, which preserves the closed-form total sample by sample.
    """
    target = target.detach()
    prior = _standard_like(p)
    if cfg.closed_form_latent_terms:
        kl = kl_diag(p, target)
        reg = gauss_cross_entropy(p, target) - gauss_cross_entropy(p, prior)
        return kl, reg
    kls, regs = [], []
    for _ in range(cfg.mc_samples):
        z = _draw(rng, p)
        lp_p = gauss_loglik(z, p)
        lp_t = gauss_loglik(z, target)
        lp_prior = gauss_loglik(z, prior)
        kls.append(lp_p - lp_t)
        regs.append(lp_t - lp_prior)
    return _mc_mean(kls), _mc_mean(regs)


def beta_pvae_loss(noisy_speech: DiagGaussian, noisy_noise: DiagGaussian,
                   speech_target: DiagGaussian, noise_target: DiagGaussian,
                   cfg: ObjectiveConfig, rng: np.random.Generator) -> LossBreakdown:
    """Latent supervision loss for the mixture encoder.

    Per branch: KL(p(z|noisy) || target posterior) plus the expected
    log-ratio of target to unit prior under p(z|noisy). Targets are
    frozen; with unit weights the exact total telescopes to the KL
    against the unit prior.
    """
    kl_x, reg_x = _latent_match_terms(noisy_speech, speech_target, cfg, rng)
    kl_d, reg_d = _latent_match_terms(noisy_noise, noise_target, cfg, rng)
    return _combine({
        "kl_x": (cfg.weight("kl_x"), kl_x),
        "reg_x": (cfg.weight("reg_x"), reg_x),
        "kl_d": (cfg.weight("kl_d"), kl_d),
        "reg_d": (cfg.weight("reg_d"), reg_d),
    })


def pvae_loss(noisy_speech: DiagGaussian, noisy_noise: DiagGaussian,
              speech_target: DiagGaussian, noise_target: DiagGaussian,
              joint_decoder_fn, y, cfg: ObjectiveConfig,
              rng: np.random.Generator) -> LossBreakdown:
    """beta_pvae_loss plus a noisy-reconstruction term through a joint
    decoder over the concatenated sampled latents."""
    if joint_decoder_fn is None:
        raise ValueError("pvae_loss requires a joint decoder (mix_dec role)")
    base = beta_pvae_loss(noisy_speech, noisy_noise, speech_target,
                          noise_target, cfg, rng)
    recons = []
    for _ in range(cfg.mc_samples):
        z = engine.concat([_draw(rng, noisy_speech), _draw(rng, noisy_noise)], axis=-1)
        recons.append(gauss_loglik(y, joint_decoder_fn(z)))
    recon = -_mc_mean(recons)
    w_recon = cfg.weight("recon")
    total = base.total + recon * w_recon
    terms = dict(base.terms, recon=recon.item())
    weights = dict(base.weights, recon=w_recon)
    return LossBreakdown(total=total, terms=terms, weights=weights)


def lsgan_generator_loss(disc_fn, disc_params, decoded: DiagGaussian, target,
                         cfg: ObjectiveConfig) -> LossBreakdown:
    """Least-squares generator objective plus the retained reconstruction
    term; discriminator parameters are frozen for the duration."""
    with frozen(disc_params):
        score = disc_fn(decoded.mean)
    adv = engine.square(score - 1.0).mean()
    recon = -gauss_loglik(target, decoded)
    return _combine({
        "adv": (cfg.weight("adv"), adv),
        "recon": (cfg.weight("recon"), recon),
    })


def lsgan_discriminator_loss(disc_fn, generated, real) -> Tensor:
    """Least-squares discriminator objective: push generated frames to 0
    and real frames to 1. The generated input is detached, so generator
    parameters receive no gradient."""
    gen_t = generated.detach() if isinstance(generated, Tensor) else Tensor(np.asarray(generated))
    real_t = real if isinstance(real, Tensor) else Tensor(np.asarray(real, dtype=gen_t.dtype))
    if gen_t.data.size == 0 or real_t.data.size == 0:
        raise ValueError("discriminator loss requires nonempty batches")
    fake_score = disc_fn(gen_t)
    real_score = disc_fn(real_t)
    return engine.square(fake_score).mean() + engine.square(real_score - 1.0).mean()
