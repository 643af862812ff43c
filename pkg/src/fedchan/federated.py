"""Federated averaging of the generative path models.

Every round the server broadcasts the global parameters, each city client
trains a private copy for ``local_epochs`` with a fresh optimizer, and the
server replaces the global model with the sample-count weighted average of
the returned parameters (encoder/decoder or generator/discriminator averaged
separately).  Optionally every payload goes through an exchange directory::

    <dir>/round_<t>/client_<id>.fcw
    <dir>/round_<t>/global.fcw
"""
from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import gan, nn, vae
from .vae import PathData, TrainLog

MODEL_KINDS = ("vae", "gan")


class ProtocolError(ValueError):
    """A weight payload does not match what the receiver expects."""


class ClientError(RuntimeError):
    def __init__(self, client_id: str, cause: BaseException):
        super().__init__(f"client {client_id}: {cause}")
        self.client_id = client_id


@dataclass
class ModelKind:
    name: str
    init: Callable
    train: Callable
    params_type: type


KINDS = {
    "vae": ModelKind("vae", vae.init_vae, vae.train_local_vae, vae.VaeParams),
    "gan": ModelKind("gan", gan.init_gan, gan.train_local_gan, gan.GanParams),
}


def model_kind(name: str) -> ModelKind:
    try:
        return KINDS[name]
    except KeyError:
        raise ValueError(f"model_kind must be one of {MODEL_KINDS}, got {name!r}") from None


@dataclass
class ClientHandle:
    city_id: str
    data: PathData
    seed: int
    link_model: object = None

    def __post_init__(self):
        if len(self.data) == 0:
            raise ValueError(f"client {self.city_id} has no training records")

    @property
    def n_samples(self) -> int:
        return len(self.data)


@dataclass
class FedConfig:
    rounds: int = 100
    local_epochs: int = 5
    batch_size: int = 100
    learning_rate: float = 1e-4
    model_kind: str = "vae"
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        model_kind(self.model_kind)
        if self.rounds < 0 or self.local_epochs < 0:
            raise ValueError("rounds and local_epochs must be non-negative")

    def local_config(self, seed: int) -> nn.TrainConfig:
        return nn.TrainConfig(self.learning_rate, self.local_epochs, self.batch_size, seed)


def pairwise_sum(terms: Sequence[np.ndarray]) -> np.ndarray:
    """Sum in a fixed tree order so the result depends only on the term order."""
    terms = list(terms)
    while len(terms) > 1:
        nxt = [terms[i] + terms[i + 1] for i in range(0, len(terms) - 1, 2)]
        if len(terms) % 2:
            nxt.append(terms[-1])
        terms = nxt
    return terms[0].copy()


def aggregate_weighted(updates: Sequence[np.ndarray], counts: Sequence[int]) -> np.ndarray:
    """``sum_k (n_k / n) * updates[k]``."""
    if len(updates) == 0 or len(updates) != len(counts):
        raise ValueError("need one count per update and at least one update")
    updates = [np.asarray(u, dtype=np.float64) for u in updates]
    n0 = updates[0].shape
    for k, u in enumerate(updates):
        if u.shape != n0:
            raise ValueError(f"update {k} has shape {u.shape}, expected {n0}")
    if any(c <= 0 for c in counts):
        raise ValueError("sample counts must be positive")
    total = math.fsum(counts)
    if total <= 0:
        raise ValueError("total sample count is zero")
    return pairwise_sum([(c / total) * u for c, u in zip(counts, updates)])


def aggregate_params(updates: Sequence, counts: Sequence[int]):
    """Average each component network (encoder/decoder or G/D) on its own."""
    first = updates[0]
    parts = {}
    for name, w in first.parts().items():
        flat = aggregate_weighted([u.parts()[name].flat for u in updates], counts)
        parts[name] = nn.ModelWeights(w.specs, flat)
    return type(first).from_parts(parts)


def params_checksum(params) -> str:
    return nn.checksum(*(w.flat for w in params.parts().values()))


def round_seed(client_seed: int, round_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([client_seed, round_index]))


def local_update(kind: ModelKind, params, client: ClientHandle, cfg: FedConfig, round_index: int):
    """One client's contribution to round ``round_index``."""
    local_cfg = cfg.local_config(client.seed)
    return kind.train(params, client.data, local_cfg, round_seed(client.seed, round_index))


# -- exchange payloads -------------------------------------------------------

@dataclass
class Payload:
    params: object
    round: int
    client_id: str
    n_samples: int


def write_payload(path, kind: str, payload: Payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"round": payload.round, "client_id": payload.client_id, "n_samples": payload.n_samples,
            "model_kind": kind}
    return nn.save_weights(path, kind, payload.params.parts(), meta)


def read_payload(path, kind: str, expected_round: int, like=None) -> Payload:
    """Load and validate a payload: magic, model kind, round number and layer shapes."""
    try:
        name, nets, meta = nn.load_weights(path)
    except nn.ShapeError as exc:
        raise ProtocolError(f"{path}: {exc}") from None
    if name != kind or meta.get("model_kind") != kind:
        raise ProtocolError(f"{path}: payload holds {name!r}, expected {kind!r}")
    if meta.get("round") != expected_round:
        raise ProtocolError(f"{path}: payload is for round {meta.get('round')}, expected {expected_round}")
    if like is not None:
        for part, w in like.parts().items():
            if part not in nets or nets[part].specs != w.specs:
                raise ProtocolError(f"{path}: network {part!r} does not match the expected layer shapes")
    params = KINDS[kind].params_type.from_parts(nets)
    return Payload(params, meta["round"], str(meta["client_id"]), int(meta["n_samples"]))


# -- rounds ------------------------------------------------------------------

@dataclass
class ClientRound:
    client_id: str
    losses: list[float]
    n_samples: int

    @property
    def mean_loss(self) -> float:
        return float(np.mean(self.losses)) if self.losses else float("nan")


@dataclass
class RoundRecord:
    round: int
    clients: list[ClientRound]
    checksum: str
    wall_time: float


@dataclass
class RoundHistory:
    rounds: list[RoundRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.rounds)

    def checksums(self) -> list[str]:
        return [r.checksum for r in self.rounds]

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["round", "client", "mean_local_loss", "checksum"])
            for r in self.rounds:
                for c in r.clients:
                    w.writerow([r.round, c.client_id, repr(c.mean_loss), r.checksum])
        return path


def fed_round(global_params, clients: Sequence[ClientHandle], cfg: FedConfig, round_index: int = 0,
              exchange_dir=None):
    """Broadcast, train locally on every client, aggregate.  Returns ``(params, RoundRecord)``."""
    kind = model_kind(cfg.model_kind)
    t0 = time.perf_counter()
    if exchange_dir is not None:
        rdir = Path(exchange_dir) / f"round_{round_index}"
        write_payload(rdir / "global.fcw", kind.name, Payload(global_params, round_index, "server", 0))
        global_params = read_payload(rdir / "global.fcw", kind.name, round_index, global_params).params

    def run(client):
        try:
            return local_update(kind, global_params, client, cfg, round_index)
        except Exception as exc:
            raise ClientError(client.city_id, exc) from exc

    if cfg.workers > 1 and len(clients) > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(run, clients))
    else:
        results = [run(c) for c in clients]

    updates = [params for params, _ in results]
    counts = [c.n_samples for c in clients]
    if exchange_dir is not None:
        received = []
        for c, p in zip(clients, updates):
            path = write_payload(rdir / f"client_{c.city_id}.fcw", kind.name,
                                 Payload(p, round_index, c.city_id, c.n_samples))
            received.append(read_payload(path, kind.name, round_index, global_params))
        updates = [r.params for r in received]
        counts = [r.n_samples for r in received]
    new_global = aggregate_params(updates, counts)
    record = RoundRecord(round_index,
                         [ClientRound(c.city_id, log.losses, c.n_samples) for c, (_, log) in zip(clients, results)],
                         params_checksum(new_global), time.perf_counter() - t0)
    return new_global, record


def init_global(cfg: FedConfig):
    return model_kind(cfg.model_kind).init(np.random.default_rng(cfg.seed))


def run_federation(cfg: FedConfig, clients: Sequence[ClientHandle], init_params=None, exchange_dir=None,
                   on_round: Callable[[RoundRecord], None] | None = None):
    """Run ``cfg.rounds`` rounds; returns ``(final params, RoundHistory)``."""
    if not clients:
        raise ValueError("federation needs at least one client")
    params = init_global(cfg) if init_params is None else init_params
    history = RoundHistory()
    for t in range(cfg.rounds):
        params, record = fed_round(params, clients, cfg, t, exchange_dir)
        history.rounds.append(record)
        if on_round is not None:
            on_round(record)
    if exchange_dir is not None:
        d = Path(exchange_dir)
        d.mkdir(parents=True, exist_ok=True)
        history.write_csv(d / "history.csv")
    return params, history


def train_standalone(kind_name: str, params, data: PathData, epochs: int, cfg: FedConfig, seed: int):
    """Train one model on one city for ``epochs`` epochs.

    Epochs run in blocks of ``cfg.local_epochs`` with a fresh optimizer and
    the same per-block seed stream a federated client would use, so a
    single-client federation reproduces this run exactly.  Returns
    ``(params, list of per-block checksums, list of TrainLog)``.
    """
    kind = model_kind(kind_name)
    block = max(cfg.local_epochs, 1)
    checksums, logs = [], []
    done, t = 0, 0
    while done < epochs:
        n = min(block, epochs - done)
        local = replace(cfg.local_config(seed), epochs=n)
        params, log = kind.train(params, data, local, round_seed(seed, t))
        checksums.append(params_checksum(params))
        logs.append(log)
        done += n
        t += 1
    return params, checksums, logs
