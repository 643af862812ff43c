"""
Comparing path-loss distributions
=================================

The two figures of merit are a histogram KL divergence (100 shared bins,
small epsilon smoothing) and the 1-D Wasserstein-1 distance between
empirical distributions.
"""
import numpy as np

from fedchan import metrics

rng = np.random.default_rng(0)
p = rng.normal(0.0, 1.0, 50_000)

# unit shift of a unit Gaussian: KL = 1/2, W1 = 1
q = rng.normal(1.0, 1.0, 50_000)
print("shift:  KL", round(metrics.kl_divergence_hist(p, q), 3), " W1", round(metrics.wasserstein1(p, q), 3))

# KL is not symmetric, W1 is
q = rng.normal(0.0, 2.0, 50_000)
print("scale:  KL(p||q)", round(metrics.kl_divergence_hist(p, q), 3),
      " KL(q||p)", round(metrics.kl_divergence_hist(q, p), 3),
      " W1", round(metrics.wasserstein1(p, q), 3), round(metrics.wasserstein1(q, p), 3))

# W1 is the area between the two CDFs; for equal sizes it is the mean gap of sorted samples
a, b = rng.normal(size=7), rng.normal(size=7)
print("sorted-gap W1", np.mean(np.abs(np.sort(a) - np.sort(b))), "library", metrics.wasserstein1(a, b))

# the empirical CDF as (value, fraction <= value) points
print(metrics.empirical_cdf([120.0, 101.5, 133.2, 101.5]))
