"""Parametric stand-in for a ray-traced UAV air-to-ground link dataset.

Each city is described by a :class:`CityProfile`.  Link state follows a
closed-form distance/height model and the strongest path follows a dual-slope
log-distance law, so every statistic of the generated data has a known ground
truth.

Per-link layout (120 values): 20 paths x (path loss dB, delay ns, AoA azimuth,
AoA elevation, AoD azimuth, AoD elevation), angles in degrees.  Unused path
slots and whole no-link records hold the 200 dB sentinel with zero delay and
angles.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

N_PATHS = 20
N_PARAMS = 6
PATH_DIM = N_PATHS * N_PARAMS
COND_DIM = 5
MAX_PATH_LOSS = 200.0
FREQUENCY_GHZ = 28.0
LIGHT_M_PER_NS = 0.299792458
HEIGHTS = (30.0, 60.0, 90.0, 120.0)
GNB_HEIGHT = {"terrestrial": 10.0, "aerial": 25.0}
GNB_TYPES = ("terrestrial", "aerial")
PARAM_NAMES = ("pl", "delay", "aoa_az", "aoa_el", "aod_az", "aod_el")
PL_COLUMNS = np.arange(0, PATH_DIM, N_PARAMS)
SHARD_SIZE = 1000

NOLINK, LOS, NLOS = 0, 1, 2
STATE_NAMES = ("NoLink", "LOS", "NLOS")

COLUMNS = ["city", "gnb_type", "dx", "dy", "dz", "state"] + [
    f"p{i + 1:02d}_{p}" for i in range(N_PATHS) for p in PARAM_NAMES]


def fspl_intercept(frequency_ghz: float = FREQUENCY_GHZ) -> float:
    """Free-space path loss at 1 m, in dB."""
    return 20.0 * math.log10(4.0 * math.pi * frequency_ghz * 1e9 / 299792458.0)


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class CityProfile:
    city_id: str
    pl0: float
    slope1: float
    slope2: float
    d_break: float
    shadow_sigma: float
    los_decay: float
    nolink_range: float
    seed: int = 0
    nlos_offset: float = 10.0
    # UAVs are placed uniformly in [-extent, extent]^2 around the gNB
    extent: float = 0.0
    # aerial gNBs are up-tilted, so their LOS probability decays slower
    aerial_los_factor: float = 0.6
    # hard_states picks the most likely state instead of sampling it
    hard_states: bool = False

    def __post_init__(self):
        if not self.slope2 > self.slope1 > 0:
            raise ValueError("profile needs slope2 > slope1 > 0")
        if self.shadow_sigma < 0:
            raise ValueError("shadow_sigma must be >= 0")
        if self.d_break <= 0 or self.nolink_range <= 0 or self.los_decay < 0:
            raise ValueError("d_break and nolink_range must be positive, los_decay non-negative")

    @property
    def area_extent(self) -> float:
        return self.extent if self.extent > 0 else 1.1 * self.nolink_range


DEFAULT_PROFILES = {
    "alpha": CityProfile("alpha", pl0=fspl_intercept() + 2.0, slope1=2.1, slope2=2.6, d_break=120.0,
                         shadow_sigma=5.0, los_decay=1 / 220, nolink_range=380.0, seed=11, nlos_offset=14.0),
    "bravo": CityProfile("bravo", pl0=fspl_intercept(), slope1=2.0, slope2=2.2, d_break=180.0,
                         shadow_sigma=3.5, los_decay=1 / 330, nolink_range=460.0, seed=22, nlos_offset=9.0),
    "charlie": CityProfile("charlie", pl0=fspl_intercept() + 4.0, slope1=2.3, slope2=3.0, d_break=90.0,
                           shadow_sigma=4.5, los_decay=1 / 160, nolink_range=320.0, seed=33, nlos_offset=17.0),
}
PAPER_CITY = {"alpha": "Beijing", "bravo": "London", "charlie": "Boston"}
PAPER_LINKS = {"alpha": 36000, "bravo": 25800, "charlie": 23000}


def make_condition(dx: float, dy: float, dz: float, gnb_type: str) -> np.ndarray:
    if gnb_type not in GNB_TYPES:
        raise ValueError(f"unknown gNB type {gnb_type!r}")
    return np.array([dx, dy, dz, gnb_type == "terrestrial", gnb_type == "aerial"], dtype=np.float64)


def state_probabilities(profile: CityProfile, conditions: np.ndarray) -> np.ndarray:
    """``(n, 3)`` probabilities of (NoLink, LOS, NLOS) for each condition row."""
    c = np.atleast_2d(np.asarray(conditions, dtype=np.float64))
    d2 = np.hypot(c[:, 0], c[:, 1])
    height = np.maximum(c[:, 2], 0.0)
    # LOS decays faster for low UAVs and terrestrial gNBs
    f = 1.0 / (1.0 + height / 60.0)
    f = np.where(c[:, 4] > 0.5, profile.aerial_los_factor * f, f)
    p_los_given_link = np.exp(-d2 * profile.los_decay * f)
    r = profile.nolink_range
    t = np.clip((d2 - 0.5 * r) / (1.5 * r), 0.0, 1.0)
    p_nolink = t * t * (3.0 - 2.0 * t)
    p_los = (1.0 - p_nolink) * p_los_given_link
    p_nlos = 1.0 - p_nolink - p_los
    return np.stack([p_nolink, p_los, np.maximum(p_nlos, 0.0)], axis=1)


def _draw_states(profile, conditions, rng):
    probs = state_probabilities(profile, conditions)
    if profile.hard_states:
        return probs.argmax(axis=1)
    u = rng.random(len(probs))
    cum = np.cumsum(probs, axis=1)
    return np.minimum((u[:, None] >= cum).sum(axis=1), 2)


def sample_link_state(profile: CityProfile, condition: np.ndarray, rng: np.random.Generator) -> int:
    c = np.asarray(condition, dtype=np.float64)
    if np.linalg.norm(c[:3]) == 0:
        raise ValueError("UAV and gNB positions coincide")
    return int(_draw_states(profile, c[None, :], rng)[0])


def strongest_path_loss(profile: CityProfile, distance: np.ndarray, nlos: np.ndarray) -> np.ndarray:
    """Noise-free dual-slope loss of the strongest path (before the 200 dB clamp)."""
    d = np.maximum(np.asarray(distance, dtype=np.float64), 1.0)
    pl = profile.pl0 + 10.0 * profile.slope1 * np.log10(d)
    pl = pl + np.where(d > profile.d_break, 10.0 * profile.slope2 * np.log10(d / profile.d_break), 0.0)
    return pl + np.where(nlos, profile.nlos_offset, 0.0)


def _wrap_azimuth(a):
    return (a + 180.0) % 360.0 - 180.0


def _sample_paths_batch(profile, conditions, states, rng):
    n = len(conditions)
    out = np.zeros((n, N_PATHS, N_PARAMS))
    out[:, :, 0] = MAX_PATH_LOSS
    if n == 0:
        return out.reshape(n, PATH_DIM)
    dx, dy, dz = conditions[:, 0], conditions[:, 1], conditions[:, 2]
    d2 = np.hypot(dx, dy)
    d3 = np.maximum(np.hypot(d2, dz), 1.0)
    nlos = states == NLOS

    shadow = rng.normal(0.0, 1.0, n) * profile.shadow_sigma
    pl_first = strongest_path_loss(profile, d3, nlos) + shadow
    n_paths = np.where(nlos, rng.integers(4, 17, n), rng.integers(10, 21, n))
    # ordered excess losses; LOS links get an extra gap behind the direct ray
    increments = rng.exponential(2.5, (n, N_PATHS))
    increments[:, 0] = 0.0
    increments[:, 1] += np.where(nlos, 1.0, 6.0)
    pl = pl_first[:, None] + np.cumsum(increments, axis=1)

    base_delay = d3 / LIGHT_M_PER_NS + np.where(nlos, rng.exponential(20.0, n), 0.0)
    delay_inc = rng.exponential(15.0, (n, N_PATHS))
    delay_inc[:, 0] = 0.0
    delay = base_delay[:, None] + np.cumsum(delay_inc, axis=1)

    aoa_az = np.degrees(np.arctan2(dy, dx))
    aoa_el = np.degrees(np.arctan2(dz, d2))
    spread = np.where(nlos, 10.0, 0.0)[:, None]
    jitter = rng.normal(0.0, 1.0, (n, N_PATHS, 4))
    jitter[:, 1:, :] *= 30.0
    jitter[:, :1, :] *= spread[:, :, None]
    angles = np.stack([
        _wrap_azimuth(aoa_az[:, None] + jitter[..., 0]),
        np.clip(aoa_el[:, None] + jitter[..., 1], -90.0, 90.0),
        _wrap_azimuth(aoa_az[:, None] + 180.0 + jitter[..., 2]),
        np.clip(-aoa_el[:, None] + jitter[..., 3], -90.0, 90.0),
    ], axis=-1)

    used = np.arange(N_PATHS)[None, :] < n_paths[:, None]
    out[:, :, 0] = np.where(used, np.minimum(pl, MAX_PATH_LOSS), MAX_PATH_LOSS)
    out[:, :, 1] = np.where(used, delay, 0.0)
    out[:, :, 2:] = np.where(used[..., None], angles, 0.0)
    no_link = states == NOLINK
    out[no_link] = 0.0
    out[no_link, :, 0] = MAX_PATH_LOSS
    return out.reshape(n, PATH_DIM)


def sample_paths(profile: CityProfile, condition: np.ndarray, state: int, rng: np.random.Generator) -> np.ndarray:
    """One 120-value path vector for a LOS or NLOS link."""
    if state == NOLINK:
        raise ValueError("no-link records carry no paths; emit the sentinel vector instead")
    if state not in (LOS, NLOS):
        raise ValueError(f"unknown link state {state}")
    c = np.asarray(condition, dtype=np.float64)[None, :]
    return _sample_paths_batch(profile, c, np.array([state]), rng)[0]


def sentinel_paths() -> np.ndarray:
    v = np.zeros((N_PATHS, N_PARAMS))
    v[:, 0] = MAX_PATH_LOSS
    return v.reshape(PATH_DIM)


@dataclass
class LinkRecord:
    condition: np.ndarray
    state: int
    paths: np.ndarray

    @property
    def gnb_type(self) -> str:
        return "aerial" if self.condition[4] > 0.5 else "terrestrial"


@dataclass
class CityDataset:
    """Link records of one city, stored column-wise.

    Records ``[:n_train]`` form the training part, the rest the test part.
    """
    profile: CityProfile
    conditions: np.ndarray
    states: np.ndarray
    paths: np.ndarray
    n_train: int = -1
    n_test: int = 0

    def __post_init__(self):
        n = len(self.states)
        if self.n_train < 0:
            self.n_train = n - self.n_test
        if self.conditions.shape != (n, COND_DIM) or self.paths.shape != (n, PATH_DIM):
            raise DatasetError("conditions/paths/states lengths disagree")
        if self.n_train + self.n_test != n:
            raise DatasetError("n_train + n_test must equal the record count")

    def __len__(self):
        return len(self.states)

    def __iter__(self) -> Iterator[LinkRecord]:
        for c, s, p in zip(self.conditions, self.states, self.paths):
            yield LinkRecord(c, int(s), p)

    @property
    def records(self) -> list[LinkRecord]:
        return list(self)

    @property
    def city(self) -> str:
        return self.profile.city_id

    def subset(self, idx, n_train=None, n_test=0) -> "CityDataset":
        idx = np.asarray(idx)
        n = len(idx) if idx.dtype != bool else int(idx.sum())
        return CityDataset(self.profile, self.conditions[idx], self.states[idx], self.paths[idx],
                           n - n_test if n_train is None else n_train, n_test)

    def train(self) -> "CityDataset":
        return self.subset(np.arange(self.n_train))

    def test(self) -> "CityDataset":
        return self.subset(np.arange(self.n_train, len(self)), n_train=0, n_test=self.n_test)

    def linked(self) -> "CityDataset":
        """Records that carry paths (state != NoLink)."""
        return self.subset(np.flatnonzero(self.states != NOLINK))

    def strongest_path_loss(self) -> np.ndarray:
        return self.paths[:, PL_COLUMNS].min(axis=1)


def _shard(profile, start, count, heights, seed, shard_index):
    rng = np.random.default_rng(np.random.SeedSequence([seed, shard_index]))
    ext = profile.area_extent
    dx = rng.uniform(-ext, ext, count)
    dy = rng.uniform(-ext, ext, count)
    h = np.asarray(heights, dtype=np.float64)[rng.integers(0, len(heights), count)]
    aerial = rng.random(count) < 0.5
    dz = h - np.where(aerial, GNB_HEIGHT["aerial"], GNB_HEIGHT["terrestrial"])
    cond = np.column_stack([dx, dy, dz, ~aerial, aerial]).astype(np.float64)
    states = _draw_states(profile, cond, rng)
    paths = _sample_paths_batch(profile, cond, states, rng)
    return cond, states, paths


def generate_city(profile: CityProfile, n_links: int, heights: Sequence[float] = HEIGHTS,
                  seed: int | None = None, workers: int = 1) -> CityDataset:
    """Generate ``n_links`` records, deterministically from ``seed`` (default ``profile.seed``).

    Records are produced in shards of 1000, each from its own stream derived
    from ``(seed, shard index)``, so the result does not depend on ``workers``.
    """
    if n_links <= 0:
        raise ValueError("n_links must be positive")
    if len(heights) == 0:
        raise ValueError("empty height set")
    seed = profile.seed if seed is None else seed
    jobs = [(profile, s, min(SHARD_SIZE, n_links - s), heights, seed, i)
            for i, s in enumerate(range(0, n_links, SHARD_SIZE))]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda a: _shard(*a), jobs))
    else:
        parts = [_shard(*a) for a in jobs]
    cond = np.concatenate([p[0] for p in parts])
    states = np.concatenate([p[1] for p in parts]).astype(np.int64)
    paths = np.concatenate([p[2] for p in parts])
    return CityDataset(profile, cond, states, paths)


def split_train_test(dataset: CityDataset, test_fraction: float,
                     rng: np.random.Generator) -> tuple[CityDataset, CityDataset]:
    """Stratified split by link state.

    The test part has ``round(fraction * n)`` records; per-state quotas are
    allotted by largest remainder, so each state is within one record of
    its proportional share.
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    counts = np.array([np.sum(dataset.states == s) for s in (NOLINK, LOS, NLOS)])
    share = test_fraction * counts
    quota = np.floor(share).astype(int)
    extra = int(round(test_fraction * counts.sum())) - quota.sum()
    # ties go to the lower state code (stable sort)
    quota[np.argsort(-(share - quota), kind="stable")[:extra]] += 1
    train_idx, test_idx = [], []
    for s, k in zip((NOLINK, LOS, NLOS), quota):
        idx = np.flatnonzero(dataset.states == s)
        idx = idx[rng.permutation(len(idx))]
        test_idx.append(idx[:k])
        train_idx.append(idx[k:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    return dataset.subset(train_idx), dataset.subset(test_idx, n_train=0, n_test=len(test_idx))


def combine_split(train: CityDataset, test: CityDataset) -> CityDataset:
    return CityDataset(train.profile, np.concatenate([train.conditions, test.conditions]),
                       np.concatenate([train.states, test.states]),
                       np.concatenate([train.paths, test.paths]), len(train), len(test))


# -- scaling ---------------------------------------------------------------

@dataclass
class FeatureScaler:
    """Per-dimension min/max map of ``condition || paths`` onto [-1, 1]."""
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        if np.any(self.hi < self.lo):
            raise ValueError("scaler max below min")

    def _cols(self, x, cols):
        x = np.asarray(x, dtype=np.float64)
        sl = slice(None) if cols is None else cols
        return x, self.lo[sl], self.hi[sl]

    def apply(self, x, cols: slice | None = None) -> np.ndarray:
        x, lo, hi = self._cols(x, cols)
        span = hi - lo
        safe = np.where(span > 0, span, 1.0)
        # this form hits -1 and 1 exactly at the fitted bounds
        return np.where(span > 0, 2.0 * ((x - lo) / safe) - 1.0, 0.0)

    def invert(self, y, cols: slice | None = None) -> np.ndarray:
        y, lo, hi = self._cols(y, cols)
        span = hi - lo
        return np.where(span > 0, lo + (y + 1.0) / 2.0 * span, lo)

    # convenience views on the two blocks
    def scale_conditions(self, c):
        return self.apply(c, slice(0, COND_DIM))

    def scale_paths(self, p):
        return self.apply(p, slice(COND_DIM, None))

    def unscale_paths(self, y):
        return self.invert(y, slice(COND_DIM, None))

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d) -> "FeatureScaler":
        return cls(np.array(d["lo"]), np.array(d["hi"]))


def fit_scaler(train) -> FeatureScaler:
    """Fit on a :class:`CityDataset` or an ``(n, 125)`` array."""
    if isinstance(train, CityDataset):
        x = np.hstack([train.conditions, train.paths])
    else:
        x = np.asarray(train, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("cannot fit a scaler on zero records")
    return FeatureScaler(x.min(axis=0), x.max(axis=0))


def merge_scalers(scalers: Sequence[FeatureScaler]) -> FeatureScaler:
    """Union of per-client ranges; only bounds leave the clients."""
    return FeatureScaler(np.min([s.lo for s in scalers], axis=0), np.max([s.hi for s in scalers], axis=0))


# -- CSV -------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def write_dataset(dataset: CityDataset, path, extra_meta: dict | None = None) -> Path:
    path = Path(path)
    lines = [",".join(COLUMNS)]
    city = dataset.city
    for c, s, p in zip(dataset.conditions, dataset.states, dataset.paths):
        gnb = "aerial" if c[4] > 0.5 else "terrestrial"
        lines.append(",".join([city, gnb, _fmt(c[0]), _fmt(c[1]), _fmt(c[2]), str(int(s))]
                              + [_fmt(v) for v in p]))
    path.write_text("\n".join(lines) + "\n")
    meta = {f.name: getattr(dataset.profile, f.name) for f in fields(CityProfile)}
    meta.update(n_links=len(dataset), n_train=dataset.n_train, n_test=dataset.n_test,
                frequency_ghz=FREQUENCY_GHZ)
    meta.update(extra_meta or {})
    path.with_suffix(".meta").write_text("".join(f"{k}={v}\n" for k, v in meta.items()))
    return path


def _read_meta(path: Path) -> dict:
    meta = {}
    for line in path.read_text().splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            meta[k.strip()] = v.strip()
    return meta


def _profile_from_meta(meta: dict, city: str) -> CityProfile:
    kw = {}
    for f in fields(CityProfile):
        if f.name not in meta:
            continue
        raw = meta[f.name]
        if f.name == "city_id":
            kw[f.name] = raw
        elif f.name == "hard_states":
            kw[f.name] = raw == "True"
        elif f.name == "seed":
            kw[f.name] = int(raw)
        else:
            kw[f.name] = float(raw)
    if "city_id" not in kw:
        base = DEFAULT_PROFILES.get(city)
        if base is None:
            raise DatasetError(f"no metadata and no default profile for city {city!r}")
        return replace(base, **kw)
    return CityProfile(**kw)


def read_dataset(path) -> CityDataset:
    path = Path(path)
    text = path.read_text()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].split(",") != COLUMNS:
        raise DatasetError(f"{path}:1: unexpected header")
    n = len(lines) - 1
    cond = np.empty((n, COND_DIM))
    states = np.empty(n, dtype=np.int64)
    paths = np.empty((n, PATH_DIM))
    city = None
    for i, line in enumerate(lines[1:]):
        lineno = i + 2
        parts = line.split(",")
        if len(parts) != len(COLUMNS):
            raise DatasetError(f"{path}:{lineno}: expected {len(COLUMNS)} fields, got {len(parts)}")
        try:
            if parts[1] not in GNB_TYPES:
                raise ValueError(f"unknown gnb_type {parts[1]!r}")
            cond[i] = make_condition(float(parts[2]), float(parts[3]), float(parts[4]), parts[1])
            states[i] = int(parts[5])
            if states[i] not in (NOLINK, LOS, NLOS):
                raise ValueError(f"unknown state {states[i]}")
            paths[i] = [float(v) for v in parts[6:]]
        except ValueError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from None
        city = city or parts[0]
    meta_path = path.with_suffix(".meta")
    meta = _read_meta(meta_path) if meta_path.exists() else {}
    profile = _profile_from_meta(meta, city or path.stem)
    n_test = int(meta.get("n_test", 0))
    return CityDataset(profile, cond, states, paths, n - n_test, n_test)


def profile_dict(profile: CityProfile) -> dict:
    return asdict(profile)
