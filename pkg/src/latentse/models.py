"""Networks for the two-stage enhancer.

Seven recurrent networks share one template (FC stack, GRU, FC stack,
linear output heads): encoders for clean speech, noise, and the noisy
mixture, decoders for speech and noise, and one discriminator per signal
kind. The mixture encoder carries four heads because it predicts the
speech and noise posteriors jointly; an optional mixture decoder can be
added when a joint reconstruction term is wanted.

Variance-like heads are interpreted as log-variance: the table of layer
shapes gives them linear activations, and exponentiation keeps the
variance positive without constraining the head.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .autodiff import DenseLayer, GruLayer, Tensor, engine

CLEAN_ENC = "clean_enc"
CLEAN_DEC = "clean_dec"
NOISE_ENC = "noise_enc"
NOISE_DEC = "noise_dec"
MIX_ENC = "mix_enc"
MIX_DEC = "mix_dec"
DISC_SPEECH = "disc_speech"
DISC_NOISE = "disc_noise"

ROLE_ORDER = (
    CLEAN_ENC, CLEAN_DEC, NOISE_ENC, NOISE_DEC, MIX_ENC, MIX_DEC,
    DISC_SPEECH, DISC_NOISE,
)
ENCODER_ROLES = (CLEAN_ENC, NOISE_ENC)
DECODER_ROLES = (CLEAN_DEC, NOISE_DEC, MIX_DEC)
DISCRIMINATOR_ROLES = (DISC_SPEECH, DISC_NOISE)

FEAT_DIM = 257


@dataclass
class DiagGaussian:
    """Diagonal Gaussian as mean and log-variance tensors of equal shape."""

    mean: Tensor
    log_var: Tensor

    def __post_init__(self):
        if self.mean.shape != self.log_var.shape:
            raise ValueError(
                f"mean shape {self.mean.shape} != log_var shape {self.log_var.shape}"
            )

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    def detach(self) -> "DiagGaussian":
        return DiagGaussian(self.mean.detach(), self.log_var.detach())


def standard_gaussian(shape, dtype=np.float64) -> DiagGaussian:
    zeros = np.zeros(shape, dtype=dtype)
    return DiagGaussian(Tensor(zeros), Tensor(zeros.copy()))


@dataclass(frozen=True)
class NetworkSpec:
    """Layer widths for one network; every entry of pre_fc/post_fc is one
    fully-connected layer with that output width."""

    role: str
    input_dim: int
    pre_fc: tuple[int, ...]
    gru: int
    post_fc: tuple[int, ...]
    heads: int
    head_dim: int
    fc_activation: str = "relu"
    head_activation: str = "linear"

    def __post_init__(self):
        if self.role not in ROLE_ORDER:
            raise ValueError(f"unknown role {self.role!r}")
        widths = (self.input_dim, *self.pre_fc, self.gru, *self.post_fc,
                  self.heads, self.head_dim)
        if any(w < 1 for w in widths):
            raise ValueError("all widths and counts must be >= 1")


def scaled_specs(hidden: int, latent: int, feat: int = FEAT_DIM) -> dict[str, NetworkSpec]:
    """Spec set preserving the full-scale shape relationships.

    hidden=512, latent=128 reproduces the full-scale table; the toy
    preset shrinks hidden and latent while keeping the feature width.
    """
    enc = dict(input_dim=feat, pre_fc=(feat, hidden, hidden), gru=hidden,
               post_fc=(), heads=2, head_dim=latent)
    dec = dict(input_dim=latent, pre_fc=(latent,), gru=hidden,
               post_fc=(hidden, hidden), heads=2, head_dim=feat)
    disc = dict(input_dim=feat, pre_fc=(feat, hidden), gru=hidden // 2,
                post_fc=(hidden,), heads=1, head_dim=1)
    return {
        CLEAN_ENC: NetworkSpec(role=CLEAN_ENC, **enc),
        CLEAN_DEC: NetworkSpec(role=CLEAN_DEC, **dec),
        NOISE_ENC: NetworkSpec(role=NOISE_ENC, **enc),
        NOISE_DEC: NetworkSpec(role=NOISE_DEC, **dec),
        MIX_ENC: NetworkSpec(role=MIX_ENC, input_dim=feat,
                             pre_fc=(feat, hidden, hidden), gru=hidden,
                             post_fc=(hidden,), heads=4, head_dim=latent),
        DISC_SPEECH: NetworkSpec(role=DISC_SPEECH, **disc),
        DISC_NOISE: NetworkSpec(role=DISC_NOISE, **disc),
    }


def mix_decoder_spec(hidden: int, latent: int, feat: int = FEAT_DIM) -> NetworkSpec:
    """Optional joint decoder fed the concatenated speech/noise latents."""
    return NetworkSpec(role=MIX_DEC, input_dim=2 * latent, pre_fc=(2 * latent,),
                       gru=hidden, post_fc=(hidden, hidden), heads=2, head_dim=feat)


def full_scale_specs(feat: int = FEAT_DIM) -> dict[str, NetworkSpec]:
    return scaled_specs(hidden=512, latent=128, feat=feat)


def toy_specs(feat: int = FEAT_DIM) -> dict[str, NetworkSpec]:
    return scaled_specs(hidden=64, latent=16, feat=feat)


class RecurrentNet:
    """FC stack, one GRU layer, FC stack, then linear heads."""

    def __init__(self, spec: NetworkSpec, *, rng: np.random.Generator, dtype=np.float32):
        self.spec = spec
        self.pre = []
        width = spec.input_dim
        for w in spec.pre_fc:
            self.pre.append(DenseLayer(width, w, spec.fc_activation, rng=rng, dtype=dtype))
            width = w
        self.gru = GruLayer(width, spec.gru, rng=rng, dtype=dtype)
        width = spec.gru
        self.post = []
        for w in spec.post_fc:
            self.post.append(DenseLayer(width, w, spec.fc_activation, rng=rng, dtype=dtype))
            width = w
        self.heads = [
            DenseLayer(width, spec.head_dim, spec.head_activation, rng=rng, dtype=dtype)
            for _ in range(spec.heads)
        ]

    def __call__(self, x: Tensor) -> list[Tensor]:
        if x.data.ndim != 3 or x.shape[-1] != self.spec.input_dim:
            raise ValueError(
                f"{self.spec.role}: expected (T, B, {self.spec.input_dim}), got {x.shape}"
            )
        h = x
        for layer in self.pre:
            h = layer(h)
        h = self.gru(h)
        for layer in self.post:
            h = layer(h)
        return [head(h) for head in self.heads]

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_parameters(self):
        named = []
        for i, layer in enumerate(self.pre):
            named += [(f"pre{i}.{n}", p) for n, p in layer.named_parameters()]
        named += [(f"gru.{n}", p) for n, p in self.gru.named_parameters()]
        for i, layer in enumerate(self.post):
            named += [(f"post{i}.{n}", p) for n, p in layer.named_parameters()]
        for i, layer in enumerate(self.heads):
            named += [(f"head{i}.{n}", p) for n, p in layer.named_parameters()]
        return named


@dataclass
class ModelBundle:
    """All parameterized networks plus the dimensions they share."""

    specs: dict[str, NetworkSpec]
    nets: dict[str, RecurrentNet]
    latent_dim: int
    feat_dim: int
    dtype: object = np.float32
    progress: dict = field(default_factory=lambda: {"stage": "init", "epoch": 0, "step": 0})

    @classmethod
    def create(cls, specs: dict[str, NetworkSpec], seed: int = 0,
               dtype=np.float32) -> "ModelBundle":
        rng = np.random.default_rng(seed)
        nets = {}
        for role in ROLE_ORDER:
            if role in specs:
                nets[role] = RecurrentNet(specs[role], rng=rng, dtype=dtype)
        latent = specs[CLEAN_ENC].head_dim
        feat = specs[CLEAN_ENC].input_dim
        return cls(specs=dict(specs), nets=nets, latent_dim=latent,
                   feat_dim=feat, dtype=dtype)

    def roles(self):
        return [r for r in ROLE_ORDER if r in self.nets]

    def parameters(self, roles=None):
        roles = self.roles() if roles is None else roles
        params = []
        for role in roles:
            params += self.nets[role].parameters()
        return params

    def named_parameters(self, roles=None):
        roles = self.roles() if roles is None else roles
        named = []
        for role in roles:
            named += [(f"{role}/{n}", p) for n, p in self.nets[role].named_parameters()]
        return named

    def set_trainable(self, roles, trainable: bool = True):
        for p in self.parameters(roles):
            p.requires_grad = trainable

    def param_hash(self, roles=None) -> str:
        digest = hashlib.sha256()
        for name, p in self.named_parameters(roles):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(p.data).tobytes())
        return digest.hexdigest()


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def encode(bundle: ModelBundle, role: str, feats) -> DiagGaussian:
    """Per-frame latent posterior from the clean or noise encoder."""
    if role not in ENCODER_ROLES:
        raise ValueError(f"encode() takes roles {ENCODER_ROLES}, got {role!r}")
    mean, log_var = bundle.nets[role](_as_tensor(feats, bundle.dtype))
    return DiagGaussian(mean, log_var)


def mix_encode(bundle: ModelBundle, feats) -> tuple[DiagGaussian, DiagGaussian]:
    """Speech and noise latent posteriors inferred jointly from noisy
    features; head order is (speech mean, speech log-var, noise mean,
    noise log-var) and is part of the checkpoint contract."""
    heads = bundle.nets[MIX_ENC](_as_tensor(feats, bundle.dtype))
    return DiagGaussian(heads[0], heads[1]), DiagGaussian(heads[2], heads[3])


def decode(bundle: ModelBundle, role: str, z) -> DiagGaussian:
    """Per-frame Gaussian over feature bins from a latent sequence."""
    if role not in DECODER_ROLES:
        raise ValueError(f"decode() takes roles {DECODER_ROLES}, got {role!r}")
    mean, log_var = bundle.nets[role](_as_tensor(z, bundle.dtype))
    return DiagGaussian(mean, log_var)


def discriminate(bundle: ModelBundle, role: str, feats) -> Tensor:
    """One unbounded score per sequence: per-frame scores mean-pooled
    over time."""
    if role not in DISCRIMINATOR_ROLES:
        raise ValueError(
            f"discriminate() takes roles {DISCRIMINATOR_ROLES}, got {role!r}"
        )
    (scores,) = bundle.nets[role](_as_tensor(feats, bundle.dtype))
    pooled = scores.mean(axis=0)  # (B, 1)
    return pooled.reshape(pooled.shape[0])


def reparameterize(g: DiagGaussian, noise) -> Tensor:
    """z = mean + exp(log_var / 2) * noise, differentiable in both
    Gaussian parameters."""
    noise_t = noise if isinstance(noise, Tensor) else Tensor(
        np.asarray(noise, dtype=g.mean.dtype)
    )
    if noise_t.shape != g.mean.shape:
        raise ValueError(f"noise shape {noise_t.shape} != mean shape {g.mean.shape}")
    return g.mean + engine.exp(g.log_var * 0.5) * noise_t
