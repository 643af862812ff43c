"""Conditional GAN path model.

The generator maps ``noise || condition`` to a per-dimension Gaussian over
the scaled path vector (same 240-wide output as the VAE decoder); a fake
sample is ``mu + exp(logvar / 2) * eps``.  The discriminator scores
``paths || condition`` with a single sigmoid unit.

Generator updates use the non-saturating loss ``-log D(fake)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .synth import COND_DIM, PATH_DIM, FeatureScaler
from .vae import LOGVAR_CLAMP, PathData, TrainLog, sample_scaled, split_stats, to_path_vectors

NOISE_DIM = 20
GENERATOR_SPECS = nn.dense_stack(NOISE_DIM + COND_DIM, [280, 560, 1120], 2 * PATH_DIM)
DISCRIMINATOR_SPECS = nn.dense_stack(PATH_DIM + COND_DIM, [1120, 560, 280], 1, output_activation="sigmoid")
GAN_DEFAULTS = nn.TrainConfig(learning_rate=1e-4, epochs=5, batch_size=100)
_LOG_FLOOR = -np.log(nn.PROB_FLOOR)


@dataclass
class GanParams:
    generator: nn.ModelWeights
    discriminator: nn.ModelWeights

    def __post_init__(self):
        g_out = self.generator.output_dim
        if g_out % 2:
            raise nn.ShapeError("generator output must split into (mean, log-variance)")
        if self.discriminator.output_dim != 1 or self.discriminator.specs[-1].activation != "sigmoid":
            raise nn.ShapeError("discriminator must end in a single sigmoid unit")
        if self.cond_dim < 0 or self.noise_dim <= 0:
            raise nn.ShapeError("generator and discriminator disagree on the condition width")

    @property
    def path_dim(self) -> int:
        return self.generator.output_dim // 2

    @property
    def cond_dim(self) -> int:
        return self.discriminator.input_dim - self.path_dim

    @property
    def noise_dim(self) -> int:
        return self.generator.input_dim - self.cond_dim

    def parts(self) -> dict[str, nn.ModelWeights]:
        return {"generator": self.generator, "discriminator": self.discriminator}

    def copy(self) -> "GanParams":
        return GanParams(self.generator.copy(), self.discriminator.copy())

    @classmethod
    def from_parts(cls, parts) -> "GanParams":
        return cls(parts["generator"], parts["discriminator"])


def init_gan(rng: np.random.Generator, generator_specs=GENERATOR_SPECS,
             discriminator_specs=DISCRIMINATOR_SPECS) -> GanParams:
    return GanParams(nn.init_weights(generator_specs, rng), nn.init_weights(discriminator_specs, rng))


def _join(a, b):
    return np.hstack([np.atleast_2d(a), np.atleast_2d(b)])


def generator_forward(G: nn.ModelWeights, z, condition):
    """(out_mu, out_logvar) for noise ``z`` and a scaled condition."""
    single = np.ndim(z) == 1
    x = _join(np.asarray(z, dtype=np.float64), np.asarray(condition, dtype=np.float64))
    if x.shape[1] != G.input_dim:
        raise nn.ShapeError(f"generator expects {G.input_dim} inputs (noise + condition), got {x.shape[1]}")
    mu, logvar = split_stats(nn.forward(G, None, x))
    return (mu[0], logvar[0]) if single else (mu, logvar)


def discriminator_forward(D: nn.ModelWeights, path, condition):
    single = np.ndim(path) == 1
    x = _join(np.asarray(path, dtype=np.float64), np.asarray(condition, dtype=np.float64))
    if x.shape[1] != D.input_dim:
        raise nn.ShapeError(f"discriminator expects {D.input_dim} inputs (path + condition), got {x.shape[1]}")
    # saturated sigmoids round to 0 or 1; keep the probability strictly inside
    p = np.clip(nn.forward(D, None, x)[:, 0], nn.PROB_FLOOR, 1.0 - nn.PROB_FLOOR)
    return float(p[0]) if single else p


def _softplus(a):
    return np.logaddexp(0.0, a)


def _neg_log_d(logits):
    """-log D with D = sigmoid(logits), capped at -log(1e-12)."""
    return np.minimum(_softplus(-logits), _LOG_FLOOR)


def _neg_log_1m_d(logits):
    return np.minimum(_softplus(logits), _LOG_FLOOR)


def _generate(G, z, u, eps):
    cache = nn.forward_cached(G, _join(z, u))
    raw = cache.outputs[-1]
    mu, logvar = split_stats(raw)
    std = np.exp(0.5 * logvar)
    return cache, raw, std, mu + std * eps


def _generator_backward(params, g_cache, raw, std, eps, g_fake):
    """Chain d(loss)/d(fake) through the sampling step into generator gradients."""
    half = params.path_dim
    g_out = np.empty_like(raw)
    g_out[:, :half] = g_fake
    g_lv = g_fake * 0.5 * std * eps
    g_lv[np.abs(raw[:, half:]) > LOGVAR_CLAMP] = 0.0
    g_out[:, half:] = g_lv
    grads, _ = nn.backward(params.generator, g_cache, g_out)
    return grads


def gan_losses(params: GanParams, x, u, z, eps=None) -> tuple[float, float]:
    """(loss_D, loss_G) for a real batch ``(x, u)`` and generator noise ``(z, eps)``.

    ``eps`` drives the output sampling; ``None`` uses the generator mean.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if len(x) == 0 or len(z) == 0:
        raise ValueError("empty batch")
    if len(x) != len(z):
        raise ValueError("real and noise batches differ in size")
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    eps = np.zeros((len(z), params.path_dim)) if eps is None else eps
    _, _, _, fake = _generate(params.generator, z, u, eps)
    real_logits = nn.forward_cached(params.discriminator, _join(x, u)).logits[:, 0]
    fake_logits = nn.forward_cached(params.discriminator, _join(fake, u)).logits[:, 0]
    loss_d = float(np.mean(_neg_log_d(real_logits)) + np.mean(_neg_log_1m_d(fake_logits)))
    loss_g = float(np.mean(_neg_log_d(fake_logits)))
    return loss_d, loss_g


def discriminator_grad(params: GanParams, x, u, fake) -> tuple[float, nn.ModelWeights]:
    """loss_D and its gradient w.r.t. the discriminator (generator output held fixed)."""
    n = len(x)
    cache = nn.forward_cached(params.discriminator, np.vstack([_join(x, u), _join(fake, u)]))
    logits = cache.logits[:, 0]
    loss = float(np.mean(_neg_log_d(logits[:n])) + np.mean(_neg_log_1m_d(logits[n:])))
    d = cache.outputs[-1][:, 0]
    # d/da softplus(-a) = d - 1 ; d/da softplus(a) = d
    g = np.concatenate([d[:n] - 1.0, d[n:]]) / n
    grads, _ = nn.backward(params.discriminator, cache, g[:, None], wrt_logits=True)
    return loss, grads


def generator_grad(params: GanParams, u, z, eps, g_state=None) -> tuple[float, nn.ModelWeights]:
    """loss_G = -mean log D(fake) and its gradient w.r.t. the generator.

    ``g_state`` reuses a generator forward pass ``(cache, raw, std, fake)``.
    """
    g_cache, raw, std, fake = g_state or _generate(params.generator, z, u, eps)
    n = len(fake)
    cache = nn.forward_cached(params.discriminator, _join(fake, u))
    logits = cache.logits[:, 0]
    loss = float(np.mean(_neg_log_d(logits)))
    g = (cache.outputs[-1][:, 0] - 1.0) / n
    _, g_in = nn.backward(params.discriminator, cache, g[:, None], wrt_logits=True,
                          param_grads=False, input_grad=True)
    grads = _generator_backward(params, g_cache, raw, std, eps, g_in[:, :params.path_dim])
    return loss, grads


def train_local_gan(params: GanParams, data: PathData, cfg: nn.TrainConfig = GAN_DEFAULTS,
                    rng: np.random.Generator | None = None) -> tuple[GanParams, TrainLog]:
    """Alternate one discriminator step and one generator step per minibatch.

    ``losses`` holds the mean ``loss_D + loss_G`` per epoch.
    """
    if len(data) == 0:
        raise ValueError("empty training split")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    params = params.copy()
    opt_d = nn.Optimizer(params.discriminator, cfg.optimizer, cfg.learning_rate)
    opt_g = nn.Optimizer(params.generator, cfg.optimizer, cfg.learning_rate)
    log = TrainLog()
    for _ in range(cfg.epochs):
        epoch = []
        for idx in nn.minibatches(len(data), cfg.batch_size, rng):
            x, u = data.x[idx], data.u[idx]
            z = rng.standard_normal((len(idx), params.noise_dim))
            eps = rng.standard_normal((len(idx), params.path_dim))
            g_state = _generate(params.generator, z, u, eps)
            loss_d, grads_d = discriminator_grad(params, x, u, g_state[3])
            opt_d.step(params.discriminator, grads_d)
            log.d_steps += 1
            # generator output is unchanged by the D step, so its forward pass is reused
            loss_g, grads_g = generator_grad(params, u, z, eps, g_state)
            opt_g.step(params.generator, grads_g)
            log.g_steps += 1
            epoch.append(loss_d + loss_g)
            log.steps += 1
        if not np.isfinite(epoch).all():
            raise nn.TrainingError("GAN loss is not finite")
        log.losses.append(float(np.mean(epoch)))
    return params, log


def sample_paths_gan(G: nn.ModelWeights | GanParams, conditions, rng: np.random.Generator,
                     scaler: FeatureScaler | None = None, scaled_conditions: bool = True) -> np.ndarray:
    """Noise -> generator -> per-dimension Gaussian sample -> unscale -> 200 dB clamp."""
    if isinstance(G, GanParams):
        G = G.generator
    u = np.asarray(conditions, dtype=np.float64)
    single = u.ndim == 1
    u = np.atleast_2d(u)
    if not scaled_conditions:
        u = scaler.scale_conditions(u)
    z = rng.standard_normal((len(u), G.input_dim - u.shape[1]))
    mu, logvar = generator_forward(G, z, u)
    out = to_path_vectors(sample_scaled(mu, logvar, rng), scaler)
    return out[0] if single else out


def gan_sampler(params: GanParams | nn.ModelWeights, scaler: FeatureScaler):
    def sampler(conditions, rng):
        return sample_paths_gan(params, conditions, rng, scaler)
    return sampler
