"""Differentially private score-model training and Hamiltonian MCMC
synthesis for labeled data.

The pieces: a small autodiff engine (`autodiff`), the score network and
label embedding (`scoremodel`), the randomized-response mechanism, ledger,
and auditor (`privacy`), the training loop (`training`), the sampler
(`sampler`), and datasets/metrics/CLI plumbing (`harness`).
"""

from . import autodiff, privacy, sampler, scoremodel, training

__all__ = ["autodiff", "privacy", "sampler", "scoremodel", "training", "harness"]
__version__ = "0.1.0"
