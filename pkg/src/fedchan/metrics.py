"""Distribution distances between generated and held-out path losses."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .synth import MAX_PATH_LOSS, NOLINK, PL_COLUMNS, CityDataset, FeatureScaler

KL_BINS = 100
KL_EPS = 1e-10
METHODS = ("VAE", "GAN", "FL-VAE", "FL-GAN")

# published distances for the three ray-traced cities; annotation only
PAPER_TABLE = {
    ("Beijing", "VAE"): (1.91, 13.92),
    ("Beijing", "GAN"): (3.08, 13.09),
    ("Beijing", "FL-VAE"): (1.63, 13.55),
    ("Beijing", "FL-GAN"): (1.51, 12.47),
    ("Boston", "VAE"): (2.35, 12.48),
    ("Boston", "GAN"): (1.66, 11.63),
    ("Boston", "FL-VAE"): (2.29, 12.05),
    ("Boston", "FL-GAN"): (1.25, 11.33),
    ("London", "VAE"): (1.70, 14.03),
    ("London", "GAN"): (3.29, 12.86),
    ("London", "FL-VAE"): (1.69, 13.95),
    ("London", "FL-GAN"): (1.25, 12.50),
}


def _samples(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("empty sample set")
    return x


@dataclass
class EmpiricalDistribution:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.sort(_samples(self.values))

    def cdf(self, x) -> np.ndarray:
        return np.searchsorted(self.values, x, side="right") / self.values.size


def empirical_cdf(samples) -> list[tuple[float, float]]:
    """Distinct values with the right-continuous CDF evaluated at each."""
    values, counts = np.unique(_samples(samples), return_counts=True)
    cum = np.cumsum(counts) / counts.sum()
    cum[-1] = 1.0
    return list(zip(values.tolist(), cum.tolist()))


def kl_divergence_hist(p_samples, q_samples, n_bins: int = KL_BINS, eps: float = KL_EPS) -> float:
    """KL(p || q) between histograms on shared uniform bins over the union range."""
    p = _samples(p_samples)
    q = _samples(q_samples)
    lo = min(p.min(), q.min())
    hi = max(p.max(), q.max())
    if hi == lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, n_bins + 1)
    hp = np.histogram(p, edges)[0] / p.size + eps
    hq = np.histogram(q, edges)[0] / q.size + eps
    hp /= hp.sum()
    hq /= hq.sum()
    return float(max(np.sum(hp * np.log(hp / hq)), 0.0))


def wasserstein1(a_samples, b_samples) -> float:
    """1-D Wasserstein-1 distance: integral of |F_a^-1(u) - F_b^-1(u)| over u."""
    a = np.sort(_samples(a_samples))
    b = np.sort(_samples(b_samples))
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    # common refinement of the two piecewise-constant quantile functions
    n, m = a.size, b.size
    cuts = np.union1d(np.arange(1, n) / n, np.arange(1, m) / m)
    knots = np.concatenate([[0.0], cuts, [1.0]])
    mid = (knots[:-1] + knots[1:]) / 2
    qa = a[np.minimum((mid * n).astype(int), n - 1)]
    qb = b[np.minimum((mid * m).astype(int), m - 1)]
    return float(np.sum(np.diff(knots) * np.abs(qa - qb)))


def strongest_path_loss(paths: np.ndarray) -> np.ndarray:
    return np.asarray(paths)[:, PL_COLUMNS].min(axis=1)


@dataclass
class MetricsRow:
    city: str
    method: str
    kl: float
    wasserstein: float
    n_samples: int = 0
    link_accuracy: float | None = None
    generated: np.ndarray | None = field(default=None, repr=False)
    reference: np.ndarray | None = field(default=None, repr=False)


@dataclass
class MetricsReport:
    rows: list[MetricsRow] = field(default_factory=list)

    def add(self, row: MetricsRow):
        self.rows.append(row)

    def get(self, city, method) -> MetricsRow | None:
        for r in self.rows:
            if r.city == city and r.method == method:
                return r
        return None


Sampler = Callable[[np.ndarray, np.random.Generator], np.ndarray]


def evaluate_model(sampler: Sampler, link_model, test: CityDataset, scaler: FeatureScaler,
                   rng: np.random.Generator, city: str | None = None, method: str = "") -> MetricsRow:
    """Generate one path vector per linked test record and compare strongest-path losses.

    ``sampler(scaled_conditions, rng)`` returns unscaled ``(n, 120)`` path
    vectors.  ``link_model`` is optional and only used to report its test
    accuracy alongside the distances.
    """
    linked = test.states != NOLINK
    if not linked.any():
        raise ValueError("no linked records in the test split")
    cond = test.conditions[linked]
    generated = strongest_path_loss(sampler(scaler.scale_conditions(cond), rng))
    reference = strongest_path_loss(test.paths[linked])
    acc = None
    if link_model is not None:
        from .linkmodel import accuracy
        acc = accuracy(link_model, test)
    return MetricsRow(city or test.city, method, kl_divergence_hist(reference, generated),
                      wasserstein1(reference, generated), int(linked.sum()), acc, generated, reference)


def replay_sampler(test: CityDataset) -> Sampler:
    """Sampler that returns the linked test paths themselves, in order."""
    paths = test.paths[test.states != NOLINK]

    def sampler(conditions, rng):
        return paths[:len(conditions)].copy()
    return sampler


# -- files -------------------------------------------------------------------

def emit_cdf_csv(dists: dict[str, Sequence[float] | EmpiricalDistribution], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "value_db", "cdf"])
        for label in dists:
            d = dists[label]
            values = d.values if isinstance(d, EmpiricalDistribution) else d
            for v, c in empirical_cdf(values):
                w.writerow([label, repr(v), repr(c)])
    return path


def read_cdf_csv(path) -> dict[str, list[tuple[float, float]]]:
    out: dict[str, list[tuple[float, float]]] = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["label"], []).append((float(row["value_db"]), float(row["cdf"])))
    return out


def emit_report(report: MetricsReport, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["city", "method", "kl", "wasserstein"])
        for r in report.rows:
            w.writerow([r.city, r.method, repr(r.kl), repr(r.wasserstein)])
    return path


def read_report(path) -> MetricsReport:
    rep = MetricsReport()
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            rep.add(MetricsRow(row["city"], row["method"], float(row["kl"]), float(row["wasserstein"])))
    return rep


def cdf_is_valid(samples) -> bool:
    """Monotone, ends at 1, support at or below the 200 dB ceiling."""
    pts = empirical_cdf(samples)
    v = np.array([p[0] for p in pts])
    c = np.array([p[1] for p in pts])
    return bool(np.all(np.diff(c) > 0) and c[-1] == 1.0 and v.max() <= MAX_PATH_LOSS)
