"""First-stage link-state classifier (NoLink / LOS / NLOS).

Trained per city on the 5-value link condition and never federated.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .synth import COND_DIM, CityDataset, FeatureScaler, fit_scaler

LINK_SPECS = nn.dense_stack(COND_DIM, [25, 10], 3, output_activation="softmax")
LINK_DEFAULTS = nn.TrainConfig(learning_rate=1e-3, epochs=30, batch_size=100)


@dataclass
class LinkModel:
    weights: nn.ModelWeights
    scaler: FeatureScaler
    losses: list[float] = field(default_factory=list)

    def predict(self, conditions: np.ndarray) -> np.ndarray:
        return predict_link_state(self, conditions)

    def save(self, path):
        meta = {"scaler": self.scaler.to_dict()}
        return nn.save_weights(path, "link", {"link": self.weights}, meta)

    @classmethod
    def load(cls, path) -> "LinkModel":
        _, nets, meta = nn.load_weights(path)
        return cls(nets["link"], FeatureScaler.from_dict(meta["scaler"]))


def _mean_ce(weights, x, y):
    probs = nn.forward_cached(weights, x).output
    return float(-np.mean(np.log(np.maximum(probs[np.arange(len(y)), y], nn.PROB_FLOOR))))


def train_link_model(train: CityDataset, cfg: nn.TrainConfig = LINK_DEFAULTS,
                     scaler: FeatureScaler | None = None) -> LinkModel:
    """Minibatch cross-entropy training; ``losses[0]`` is the loss before any step."""
    if len(train) == 0:
        raise ValueError("empty training set")
    present = np.unique(train.states)
    if len(present) < 3:
        raise ValueError(f"link model needs all three states, training set has {present.tolist()}")
    scaler = scaler or fit_scaler(train)
    x = scaler.scale_conditions(train.conditions)
    y = np.asarray(train.states)
    rng = np.random.default_rng(cfg.seed)
    weights = nn.init_weights(LINK_SPECS, rng)
    opt = nn.Optimizer(weights, cfg.optimizer, cfg.learning_rate)
    losses = [_mean_ce(weights, x, y)]
    for _ in range(cfg.epochs):
        for idx in nn.minibatches(len(y), cfg.batch_size, rng):
            cache = nn.forward_cached(weights, x[idx])
            # softmax + cross-entropy gradient w.r.t. logits
            g = cache.outputs[-1].copy()
            g[np.arange(len(idx)), y[idx]] -= 1.0
            grads, _ = nn.backward(weights, cache, g / len(idx), wrt_logits=True)
            opt.step(weights, grads)
        losses.append(_mean_ce(weights, x, y))
    if not np.all(np.isfinite(losses)):
        raise nn.TrainingError("link-model loss diverged")
    return LinkModel(weights, scaler, losses)


def predict_link_state(model: LinkModel, conditions: np.ndarray) -> np.ndarray:
    """(NoLink, LOS, NLOS) probabilities for one condition or a batch."""
    c = np.asarray(conditions, dtype=np.float64)
    if c.shape[-1] != COND_DIM:
        raise nn.ShapeError(f"condition has {c.shape[-1]} values, expected {COND_DIM}")
    return nn.forward(model.weights, None, model.scaler.scale_conditions(c))


def accuracy(model: LinkModel, dataset: CityDataset) -> float:
    pred = predict_link_state(model, dataset.conditions).argmax(axis=1)
    return float(np.mean(pred == dataset.states))
