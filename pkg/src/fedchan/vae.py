"""Conditional VAE path model.

The encoder maps ``paths || condition`` (125 values) to the mean and
log-variance of a 20-dim latent; the decoder maps ``z || condition`` (25
values) to a per-dimension Gaussian over the 120 scaled path parameters.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .synth import COND_DIM, MAX_PATH_LOSS, PATH_DIM, PL_COLUMNS, CityDataset, FeatureScaler

LATENT_DIM = 20
LOGVAR_CLAMP = 10.0
LOG_2PI = np.log(2.0 * np.pi)
ENCODER_SPECS = nn.dense_stack(PATH_DIM + COND_DIM, [200, 80], 2 * LATENT_DIM)
DECODER_SPECS = nn.dense_stack(LATENT_DIM + COND_DIM, [80, 200], 2 * PATH_DIM)
VAE_DEFAULTS = nn.TrainConfig(learning_rate=1e-4, epochs=5, batch_size=100)


@dataclass
class VaeParams:
    encoder: nn.ModelWeights
    decoder: nn.ModelWeights

    def __post_init__(self):
        enc_in, enc_out = self.encoder.input_dim, self.encoder.output_dim
        dec_in, dec_out = self.decoder.input_dim, self.decoder.output_dim
        if enc_out % 2 or dec_out % 2:
            raise nn.ShapeError("encoder and decoder outputs must split into (mean, log-variance)")
        latent, path = enc_out // 2, dec_out // 2
        if enc_in - path != dec_in - latent or enc_in - path < 0:
            raise nn.ShapeError(
                f"encoder {enc_in}->{enc_out} and decoder {dec_in}->{dec_out} disagree on the condition width")

    @property
    def latent_dim(self) -> int:
        return self.encoder.output_dim // 2

    @property
    def path_dim(self) -> int:
        return self.decoder.output_dim // 2

    @property
    def cond_dim(self) -> int:
        return self.decoder.input_dim - self.latent_dim

    def parts(self) -> dict[str, nn.ModelWeights]:
        return {"encoder": self.encoder, "decoder": self.decoder}

    def copy(self) -> "VaeParams":
        return VaeParams(self.encoder.copy(), self.decoder.copy())

    @classmethod
    def from_parts(cls, parts) -> "VaeParams":
        return cls(parts["encoder"], parts["decoder"])


def init_vae(rng: np.random.Generator, encoder_specs=ENCODER_SPECS, decoder_specs=DECODER_SPECS) -> VaeParams:
    return VaeParams(nn.init_weights(encoder_specs, rng), nn.init_weights(decoder_specs, rng))


def _join(a, b):
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] != b.shape[0]:
        raise nn.ShapeError(f"batch sizes differ: {a.shape[0]} vs {b.shape[0]}")
    return np.hstack([a, b])


def _check_width(x, n, what):
    if np.shape(x)[-1] != n:
        raise nn.ShapeError(f"{what} has width {np.shape(x)[-1]}, expected {n}")


def split_stats(out: np.ndarray, clamp: bool = True) -> tuple[np.ndarray, np.ndarray]:
    half = out.shape[-1] // 2
    mu, logvar = out[..., :half], out[..., half:]
    if clamp:
        logvar = np.clip(logvar, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    return mu, logvar


def encode(params: VaeParams, path_vec, condition):
    _check_width(path_vec, params.path_dim, "path vector")
    _check_width(condition, params.cond_dim, "condition")
    single = np.ndim(path_vec) == 1
    out = nn.forward(params.encoder, None, _join(path_vec, condition))
    mu, logvar = split_stats(out, clamp=False)
    return (mu[0], logvar[0]) if single else (mu, logvar)


def reparameterize(mu, logvar, noise):
    return np.asarray(mu) + np.exp(0.5 * np.asarray(logvar)) * np.asarray(noise)


def decode(params: VaeParams, z, condition):
    _check_width(z, params.latent_dim, "latent")
    _check_width(condition, params.cond_dim, "condition")
    single = np.ndim(z) == 1
    out = nn.forward(params.decoder, None, _join(z, condition))
    mu, logvar = split_stats(out)
    return (mu[0], logvar[0]) if single else (mu, logvar)


def gaussian_nll(x, mu, logvar):
    """Per-row negative log-likelihood of ``x`` under N(mu, exp(logvar))."""
    r = x - mu
    return 0.5 * np.sum(logvar + r * r * np.exp(-logvar) + LOG_2PI, axis=-1)


@dataclass
class VaeLoss:
    total: float
    reconstruction: float
    kl: float


def vae_loss_and_grad(params: VaeParams, x: np.ndarray, u: np.ndarray, noise: np.ndarray,
                      need_grad: bool = True) -> tuple[VaeLoss, VaeParams | None]:
    """Batch-mean negative ELBO with reparameterization noise supplied by the caller."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    if len(x) == 0:
        raise ValueError("empty batch")
    n = len(x)
    enc = nn.forward_cached(params.encoder, _join(x, u))
    mu, logvar = split_stats(enc.outputs[-1], clamp=False)
    std = np.exp(0.5 * logvar)
    z = mu + std * noise
    dec = nn.forward_cached(params.decoder, _join(z, u))
    raw = dec.outputs[-1]
    out_mu, out_logvar = split_stats(raw)
    recon = gaussian_nll(x, out_mu, out_logvar)
    kl = nn.gaussian_kl(mu, logvar)
    loss = VaeLoss(float(np.mean(recon + kl)), float(np.mean(recon)), float(np.mean(kl)))
    if not need_grad:
        return loss, None

    inv_var = np.exp(-out_logvar)
    r = x - out_mu
    g_out = np.empty_like(raw)
    half = params.path_dim
    g_out[:, :half] = -r * inv_var
    g_lv = 0.5 * (1.0 - r * r * inv_var)
    # clamped log-variances pass no gradient
    g_lv[np.abs(raw[:, half:]) > LOGVAR_CLAMP] = 0.0
    g_out[:, half:] = g_lv
    g_out /= n
    g_dec, g_dec_in = nn.backward(params.decoder, dec, g_out, input_grad=True)
    g_z = g_dec_in[:, :params.latent_dim]

    g_enc_out = np.empty((n, 2 * params.latent_dim))
    g_enc_out[:, :params.latent_dim] = g_z + mu / n
    g_enc_out[:, params.latent_dim:] = g_z * 0.5 * std * noise + 0.5 * np.expm1(logvar) / n
    g_enc, _ = nn.backward(params.encoder, enc, g_enc_out)
    return loss, VaeParams(g_enc, g_dec)


def vae_loss(params: VaeParams, batch: tuple[np.ndarray, np.ndarray], rng: np.random.Generator) -> float:
    x, u = batch
    noise = rng.standard_normal((len(np.atleast_2d(x)), params.latent_dim))
    return vae_loss_and_grad(params, x, u, noise, need_grad=False)[0].total


@dataclass
class PathData:
    """Scaled training arrays for a path model: paths ``x`` and conditions ``u``."""
    x: np.ndarray
    u: np.ndarray

    def __len__(self):
        return len(self.x)


def path_data(dataset: CityDataset, scaler: FeatureScaler) -> PathData:
    """Scale the linked records; rows are put in a canonical order so that
    training does not depend on how the records were listed."""
    linked = dataset.linked()
    x = scaler.scale_paths(linked.paths)
    u = scaler.scale_conditions(linked.conditions)
    order = np.lexsort(np.hstack([u, x]).T[::-1])
    return PathData(np.ascontiguousarray(x[order]), np.ascontiguousarray(u[order]))


@dataclass
class TrainLog:
    losses: list[float] = field(default_factory=list)
    steps: int = 0
    d_steps: int = 0
    g_steps: int = 0

    @property
    def mean_loss(self) -> float:
        return float(np.mean(self.losses)) if self.losses else float("nan")


def train_local_vae(params: VaeParams, data: PathData, cfg: nn.TrainConfig = VAE_DEFAULTS,
                    rng: np.random.Generator | None = None) -> tuple[VaeParams, TrainLog]:
    """``cfg.epochs`` epochs of minibatch updates on a copy of ``params``.

    ``losses`` holds one mean minibatch loss per epoch.
    """
    if len(data) == 0:
        raise ValueError("empty training split")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    params = params.copy()
    opt_e = nn.Optimizer(params.encoder, cfg.optimizer, cfg.learning_rate)
    opt_d = nn.Optimizer(params.decoder, cfg.optimizer, cfg.learning_rate)
    log = TrainLog()
    for _ in range(cfg.epochs):
        epoch = []
        for idx in nn.minibatches(len(data), cfg.batch_size, rng):
            noise = rng.standard_normal((len(idx), params.latent_dim))
            loss, grads = vae_loss_and_grad(params, data.x[idx], data.u[idx], noise)
            opt_e.step(params.encoder, grads.encoder)
            opt_d.step(params.decoder, grads.decoder)
            epoch.append(loss.total)
            log.steps += 1
        if not np.isfinite(epoch).all():
            raise nn.TrainingError("VAE loss is not finite")
        log.losses.append(float(np.mean(epoch)))
    return params, log


def sample_scaled(mu, logvar, rng):
    return mu + np.exp(0.5 * logvar) * rng.standard_normal(mu.shape)


def to_path_vectors(scaled: np.ndarray, scaler: FeatureScaler | None) -> np.ndarray:
    out = scaled if scaler is None else scaler.unscale_paths(scaled)
    out = np.array(out, dtype=np.float64)
    if out.shape[-1] == PATH_DIM:
        out[..., PL_COLUMNS] = np.minimum(out[..., PL_COLUMNS], MAX_PATH_LOSS)
    return out


def sample_paths_vae(params: VaeParams, conditions, rng: np.random.Generator,
                     scaler: FeatureScaler | None = None, scaled_conditions: bool = True) -> np.ndarray:
    """Draw path vectors: z ~ N(0, I), decode, sample, unscale, clamp at 200 dB.

    ``conditions`` are scaled unless ``scaled_conditions`` is false.
    """
    u = np.asarray(conditions, dtype=np.float64)
    single = u.ndim == 1
    u = np.atleast_2d(u)
    if not scaled_conditions:
        u = scaler.scale_conditions(u)
    z = rng.standard_normal((len(u), params.latent_dim))
    mu, logvar = decode(params, z, u)
    out = to_path_vectors(sample_scaled(mu, logvar, rng), scaler)
    return out[0] if single else out


def vae_sampler(params: VaeParams, scaler: FeatureScaler):
    def sampler(conditions, rng):
        return sample_paths_vae(params, conditions, rng, scaler)
    return sampler
