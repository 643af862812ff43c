"""Federated generative channel modeling for UAV air-to-ground mmWave links.

Synthetic per-city link datasets, a link-state classifier, conditional VAE
and GAN path models on a small numpy dense-network engine, federated
averaging across cities, and distribution distances for evaluation.
"""
from . import federated, gan, linkmodel, metrics, nn, synth, vae

__version__ = "0.1.0"

__all__ = ["federated", "gan", "linkmodel", "metrics", "nn", "synth", "vae"]
