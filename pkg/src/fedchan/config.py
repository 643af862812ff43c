"""Experiment configuration: one INI file, CLI flags on top.

Example::

    [experiment]
    cities = alpha, bravo, charlie
    links_per_city = 5000
    test_fraction = 0.2
    seed = 0
    standalone_epochs = 500

    [link]
    epochs = 30

    [federation]
    rounds = 100
    local_epochs = 5

    [city.alpha]
    shadow_sigma = 0.0
"""
from __future__ import annotations

import configparser
import zlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .federated import FedConfig
from .nn import TrainConfig
from .synth import DEFAULT_PROFILES, PAPER_LINKS, CityProfile

DESK_LINKS = 5000


def derive_seed(seed: int, *keys) -> int:
    """Stable 64-bit seed from a root seed and string/int keys."""
    words = [int(seed)] + [zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in keys]
    return int(np.random.SeedSequence(words).generate_state(1, np.uint64)[0])


@dataclass
class ExperimentConfig:
    profiles: dict[str, CityProfile] = field(default_factory=lambda: dict(DEFAULT_PROFILES))
    links: dict[str, int] = field(default_factory=lambda: {c: DESK_LINKS for c in DEFAULT_PROFILES})
    test_fraction: float = 0.2
    link: TrainConfig = field(default_factory=lambda: TrainConfig(1e-3, 30, 100))
    fed: FedConfig = field(default_factory=FedConfig)
    standalone_epochs: int = 500
    out: Path = Path("results")
    seed: int = 0
    exchange: bool = False

    def __post_init__(self):
        missing = [c for c in self.links if c not in self.profiles]
        if missing:
            raise ValueError(f"no profile for cities {missing}")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")

    @property
    def cities(self) -> list[str]:
        return list(self.links)

    def paper_scale(self) -> "ExperimentConfig":
        links = {c: PAPER_LINKS.get(c, n) for c, n in self.links.items()}
        return replace(self, links=links)


_PROFILE_FIELDS = {f.name: f.type for f in fields(CityProfile)}


def _coerce(name, raw):
    if name == "hard_states":
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if name == "seed":
        return int(raw)
    return float(raw)


def load_config(path=None, *, seed: int | None = None, out=None, paper_scale: bool = False) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file {path} not found")
        cp.read(path)
    exp = cp["experiment"] if cp.has_section("experiment") else {}
    cities = [c.strip() for c in exp.get("cities", ",".join(DEFAULT_PROFILES)).split(",") if c.strip()]

    profiles = dict(DEFAULT_PROFILES)
    for c in cities:
        sec = f"city.{c}"
        base = profiles.get(c)
        overrides = {k: _coerce(k, v) for k, v in cp[sec].items() if k in _PROFILE_FIELDS} if cp.has_section(sec) else {}
        if base is None:
            if not overrides:
                raise ValueError(f"city {c!r} has no default profile and no [{sec}] section")
            profiles[c] = CityProfile(city_id=c, **overrides)
        else:
            profiles[c] = replace(base, **overrides)

    n_links = int(exp.get("links_per_city", DESK_LINKS))
    links = {c: n_links for c in cities}
    root_seed = int(exp.get("seed", 0)) if seed is None else seed

    lk = cp["link"] if cp.has_section("link") else {}
    link = TrainConfig(float(lk.get("learning_rate", 1e-3)), int(lk.get("epochs", 30)),
                       int(lk.get("batch_size", 100)), derive_seed(root_seed, "link"))
    fd = cp["federation"] if cp.has_section("federation") else {}
    fed = FedConfig(rounds=int(fd.get("rounds", 100)), local_epochs=int(fd.get("local_epochs", 5)),
                    batch_size=int(fd.get("batch_size", 100)), learning_rate=float(fd.get("learning_rate", 1e-4)),
                    seed=derive_seed(root_seed, "federation"), workers=int(fd.get("workers", 1)))
    cfg = ExperimentConfig(
        profiles=profiles, links=links,
        test_fraction=float(exp.get("test_fraction", 0.2)),
        link=link, fed=fed,
        standalone_epochs=int(exp.get("standalone_epochs", 500)),
        out=Path(out if out is not None else exp.get("out", "results")),
        seed=root_seed,
        exchange=exp.get("exchange", "false").strip().lower() in ("1", "true", "yes", "on"),
    )
    return cfg.paper_scale() if paper_scale else cfg
