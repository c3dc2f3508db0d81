"""Encoder, decoder, priors and loss assembly for the VAE variants.

Three variants share one encoder/decoder layout (single tanh hidden layer):

``standard``
    code ``z`` of width m, prior N(0, I).
``sdm_dct`` / ``sdm_identity``
    code ``a`` of width k, latent ``z = D a``, prior N(0, diag(gamma)) with
    gamma refreshed in closed form from the current posterior before every
    gradient step.

The decoder outputs per-bin variances of a zero-mean circular complex
Gaussian over STFT coefficients, i.e. an estimate of the power spectrogram.
Losses are negative single-sample ELBOs, summed over bins/codes and averaged
over the batch.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .dictionary import Dictionary, apply, build_dct, build_identity

HIDDEN = 128
INPUT_FLOOR = 1e-8

VARIANTS = ("standard", "sdm_dct", "sdm_identity")
ENCODER_NAMES = ("W1", "b1", "W_mu", "b_mu", "W_logvar", "b_logvar")
DECODER_NAMES = ("V1", "c1", "V_logvar", "c_logvar")


@dataclass
class ModelParams:
    """Amortised network weights; weights are (out x in), biases 1 x out.

    ``input_shift``/``input_scale`` are fixed (never trained) per-bin
    statistics applied to the encoder's log-power input; the defaults leave
    it untouched.
    """

    tensors: dict[str, Tensor]
    input_shift: np.ndarray | None = None
    input_scale: np.ndarray | None = None

    def __post_init__(self):
        n = self.n_bins
        self.input_shift = np.zeros((1, n)) if self.input_shift is None else np.asarray(self.input_shift, float).reshape(1, n)
        self.input_scale = np.ones((1, n)) if self.input_scale is None else np.asarray(self.input_scale, float).reshape(1, n)
        if np.any(self.input_scale <= 0):
            raise ValueError("input_scale must be strictly positive")

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    def items(self):
        return self.tensors.items()

    @property
    def n_bins(self) -> int:
        return self["W1"].shape[1]

    @property
    def code_dim(self) -> int:
        return self["W_mu"].shape[0]

    @property
    def latent_dim(self) -> int:
        return self["V1"].shape[1]

    @property
    def hidden(self) -> int:
        return self["W1"].shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams({k: Tensor(t.data, requires_grad=True) for k, t in self.items()},
                           self.input_shift.copy(), self.input_scale.copy())

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.numpy() for k, t in self.items()}


def log_input(s: np.ndarray) -> np.ndarray:
    return np.log(s + INPUT_FLOOR)


def fit_input_normalization(params: ModelParams, frames: np.ndarray, min_scale: float = 1e-3) -> None:
    """Set per-bin mean/std of the log-power encoder input from training frames."""
    x = log_input(np.asarray(frames, dtype=np.float64))
    params.input_shift = x.mean(axis=0, keepdims=True)
    params.input_scale = np.maximum(x.std(axis=0, keepdims=True), min_scale)


def init_params(n_bins: int, code_dim: int, latent_dim: int, rng: np.random.Generator,
                hidden: int = HIDDEN) -> ModelParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases."""

    def weight(rows, cols):
        bound = 1.0 / np.sqrt(cols)
        return Tensor(rng.uniform(-bound, bound, size=(rows, cols)), requires_grad=True)

    def bias(cols):
        return Tensor(np.zeros((1, cols)), requires_grad=True)

    return ModelParams({
        "W1": weight(hidden, n_bins), "b1": bias(hidden),
        "W_mu": weight(code_dim, hidden), "b_mu": bias(code_dim),
        "W_logvar": weight(code_dim, hidden), "b_logvar": bias(code_dim),
        "V1": weight(hidden, latent_dim), "c1": bias(hidden),
        "V_logvar": weight(n_bins, hidden), "c_logvar": bias(n_bins),
    })


@dataclass
class GaussianPosterior:
    mu: Tensor
    logvar: Tensor

    @classmethod
    def from_moments(cls, mu, sigma) -> "GaussianPosterior":
        sigma = np.asarray(sigma, dtype=np.float64)
        if np.any(sigma <= 0):
            raise ValueError("posterior sigma must be strictly positive")
        return cls(Tensor(mu), Tensor(2.0 * np.log(sigma)))

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(0.5 * self.logvar.data)

    @property
    def var(self) -> np.ndarray:
        return np.exp(self.logvar.data)


def _layer(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    return ad.add(ad.matmul(x, ad.transpose(W)), b)


def _finite(t: Tensor, layer: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise FloatingPointError(f"non-finite activations in layer {layer!r}")
    return t


def encode(params: ModelParams, s) -> GaussianPosterior:
    """Posterior over codes from power frames ``s`` (batch x n).

    The encoder sees log(s + 1e-8), shifted and scaled by the fixed per-bin
    input statistics of ``params``.
    """
    s = np.asarray(s.data if isinstance(s, Tensor) else s, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] != params.n_bins:
        raise DimensionError(f"expected frames of width {params.n_bins}, got shape {s.shape}")
    if np.any(s < 0):
        raise ValueError("power spectrogram input must be non-negative")
    x = Tensor((log_input(s) - params.input_shift) / params.input_scale)
    h = _finite(ad.tanh(_layer(x, params["W1"], params["b1"])), "encoder.hidden")
    mu = _finite(_layer(h, params["W_mu"], params["b_mu"]), "encoder.mu")
    logvar = _finite(_layer(h, params["W_logvar"], params["b_logvar"]), "encoder.logvar")
    return GaussianPosterior(mu, logvar)


def reparameterize(post: GaussianPosterior, eps) -> Tensor:
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != post.mu.shape:
        raise DimensionError(f"eps shape {eps.shape} does not match posterior {post.mu.shape}")
    sigma = ad.exp(ad.mul(post.logvar, 0.5))
    return ad.add(post.mu, ad.mul(sigma, Tensor(eps)))


def decode(params: ModelParams, z) -> Tensor:
    """Per-bin variances (batch x n) from latents ``z`` (batch x m)."""
    z = ad.as_tensor(z)
    if z.shape[1] != params.latent_dim:
        raise DimensionError(f"decoder expects latents of width {params.latent_dim}, got {z.shape[1]}")
    g = _finite(ad.tanh(_layer(z, params["V1"], params["c1"])), "decoder.hidden")
    logvar = _finite(_layer(g, params["V_logvar"], params["c_logvar"]), "decoder.logvar")
    return _finite(ad.exp(logvar), "decoder.var")


def recon_loglik(s, var: Tensor) -> Tensor:
    """-sum(log var + s / var): complex-Gaussian log-likelihood of power ``s``, constants dropped."""
    var = ad.as_tensor(var)
    s = np.asarray(s, dtype=np.float64)
    if s.shape != var.shape:
        raise DimensionError(f"spectrogram {s.shape} and variance {var.shape} differ in shape")
    if np.any(var.data <= 0):
        raise ad.DomainError("decoder variance must be strictly positive")
    terms = ad.add(ad.log(var), ad.div(Tensor(s), var))
    return ad.mul(ad.reduce_sum(terms), -1.0)


def kl_diag_gauss(post: GaussianPosterior, gamma) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, gamma)) summed over all entries; gamma is a constant."""
    gamma = np.asarray(gamma.data if isinstance(gamma, Tensor) else gamma, dtype=np.float64)
    if gamma.shape != post.mu.shape:
        raise DimensionError(f"gamma shape {gamma.shape} does not match posterior {post.mu.shape}")
    if np.any(gamma <= 0):
        raise ad.DomainError("prior variances gamma must be strictly positive")
    second_moment = ad.add(ad.exp(post.logvar), ad.square(post.mu))
    terms = ad.sub(ad.add(ad.sub(Tensor(np.log(gamma)), post.logvar), ad.div(second_moment, Tensor(gamma))), 1.0)
    return ad.mul(ad.reduce_sum(terms), 0.5)


def kl_standard_normal(post: GaussianPosterior) -> Tensor:
    second_moment = ad.add(ad.exp(post.logvar), ad.square(post.mu))
    terms = ad.sub(ad.sub(second_moment, post.logvar), 1.0)
    return ad.mul(ad.reduce_sum(terms), 0.5)


def update_gamma(post: GaussianPosterior) -> np.ndarray:
    """Closed-form prior variances gamma = mu^2 + sigma^2 (detached from the graph)."""
    return post.mu.data**2 + post.var


@dataclass
class LossTerms:
    loss: Tensor
    recon: float  # negative log-likelihood, batch mean
    kl: float  # batch mean

    def __iter__(self):
        return iter((self.loss, self.recon, self.kl))


def _assemble(neg_loglik: Tensor, kl: Tensor, batch: int) -> LossTerms:
    loss = ad.mul(ad.add(neg_loglik, kl), 1.0 / batch)
    return LossTerms(loss, neg_loglik.item() / batch, kl.item() / batch)


def loss_sdm_terms(params: ModelParams, dictionary: Dictionary, s, eps) -> LossTerms:
    post = encode(params, s)
    gamma = update_gamma(post)
    a = reparameterize(post, eps)
    var = decode(params, apply(dictionary, a))
    return _assemble(ad.mul(recon_loglik(s, var), -1.0), kl_diag_gauss(post, gamma), len(s))


def loss_standard_terms(params: ModelParams, s, eps) -> LossTerms:
    post = encode(params, s)
    z = reparameterize(post, eps)
    var = decode(params, z)
    return _assemble(ad.mul(recon_loglik(s, var), -1.0), kl_standard_normal(post), len(s))


def loss_sdm(params: ModelParams, dictionary: Dictionary, s, eps) -> Tensor:
    return loss_sdm_terms(params, dictionary, s, eps).loss


def loss_standard_vae(params: ModelParams, s, eps) -> Tensor:
    return loss_standard_terms(params, s, eps).loss


# ---------------------------------------------------------------- bundled model


@dataclass
class VAEModel:
    params: ModelParams
    variant: str
    dictionary: Dictionary | None = None
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant == "standard":
            if self.dictionary is not None:
                raise ValueError("the standard VAE takes no dictionary")
        else:
            if self.dictionary is None:
                raise ValueError(f"variant {self.variant} needs a dictionary")
            if self.dictionary.k != self.params.code_dim or self.dictionary.m != self.params.latent_dim:
                raise DimensionError(
                    f"dictionary {self.dictionary.m}x{self.dictionary.k} does not fit code width "
                    f"{self.params.code_dim} and latent width {self.params.latent_dim}")

    def loss_terms(self, s, eps) -> LossTerms:
        if self.variant == "standard":
            return loss_standard_terms(self.params, s, eps)
        return loss_sdm_terms(self.params, self.dictionary, s, eps)

    @property
    def code_dim(self) -> int:
        return self.params.code_dim

    def posterior_mean(self, s) -> np.ndarray:
        return encode(self.params, s).mu.numpy()

    def reconstruct(self, s) -> tuple[np.ndarray, np.ndarray]:
        """Decode the posterior mean; returns (power estimate, code means)."""
        mu = encode(self.params, s).mu
        z = mu if self.dictionary is None else apply(self.dictionary, mu)
        return decode(self.params, z).numpy(), mu.numpy()

    def with_params(self, params: ModelParams) -> "VAEModel":
        return VAEModel(params, self.variant, self.dictionary, dict(self.config))


def make_dictionary(variant: str, m: int, k: int) -> Dictionary | None:
    if variant == "standard":
        return None
    if variant == "sdm_identity":
        if k != m:
            raise ValueError(f"identity dictionary needs k == m, got m={m}, k={k}")
        return build_identity(m)
    if variant == "sdm_dct":
        return build_dct(m, k)
    raise ValueError(f"unknown variant {variant!r}")


def build_model(variant: str, m: int, k: int | None = None, n_bins: int = 513, seed: int = 0,
                hidden: int = HIDDEN, rng: np.random.Generator | None = None) -> VAEModel:
    k = m if k is None else k
    dictionary = make_dictionary(variant, m, k)
    code_dim = m if dictionary is None else dictionary.k
    rng = np.random.default_rng(seed) if rng is None else rng
    params = init_params(n_bins, code_dim, m, rng, hidden)
    cfg = {"variant": variant, "m": m, "k": k, "n_bins": n_bins, "hidden": hidden}
    return VAEModel(params, variant, dictionary, cfg)


# ---------------------------------------------------------------- checkpoints
#
# Layout (all integers little-endian):
#   8 bytes   magic b"SDMVAE01"
#   4 bytes   uint32 header length H
#   H bytes   UTF-8 JSON {"config": {...}, "tensors": [{"name", "shape"}, ...]}
#   rest      float64 little-endian data, tensors in header order, row-major

MAGIC = b"SDMVAE01"


def save_checkpoint(path, model: VAEModel, extra: dict | None = None) -> None:
    arrays = {n: t.data for n, t in model.params.items()}
    arrays["input_shift"] = model.params.input_shift
    arrays["input_scale"] = model.params.input_scale
    config = dict(model.config)
    if extra:
        config.update(extra)
    header = {"config": config,
              "tensors": [{"name": n, "shape": list(a.shape)} for n, a in arrays.items()]}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    offset = 12 + hlen
    arrays = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += 8 * count
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes after tensor data")
    return header["config"], arrays


def load_checkpoint(path) -> VAEModel:
    config, arrays = read_checkpoint(path)
    model = build_model(config["variant"], config["m"], config["k"], config["n_bins"], hidden=config["hidden"])
    for name, t in model.params.items():
        if name not in arrays:
            raise ValueError(f"{path}: missing tensor {name!r}")
        if arrays[name].shape != t.shape:
            raise DimensionError(f"{path}: tensor {name!r} has shape {arrays[name].shape}, config implies {t.shape}")
        t.assign(arrays[name])
    if "input_shift" in arrays:
        model.params.input_shift = arrays["input_shift"].reshape(1, -1)
        model.params.input_scale = arrays["input_scale"].reshape(1, -1)
    model.config = config
    return model
