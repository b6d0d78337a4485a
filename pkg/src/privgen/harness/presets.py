"""Canned experiment grids for the ablation studies.

Each preset returns a list of (label, RunConfig) pairs over a seed list;
callers run them through run_pipeline and compare seed-averaged metrics.
"""

from __future__ import annotations

from dataclasses import replace

from .config import RunConfig


def epsilon_sweep(seeds=(0, 1, 2, 3, 4), epsilons=(10.0, 1.0), **overrides):
    base = RunConfig(**overrides) if overrides else RunConfig()
    return [
        (f"eps={eps:g}", replace(base, epsilon=eps, seed=seed))
        for eps in epsilons
        for seed in seeds
    ]


def k_sweep(seeds=(0, 1, 2, 3, 4), ks=(5, 20), epsilon=10.0, **overrides):
    base = RunConfig(**overrides) if overrides else RunConfig()
    return [
        (f"k={k}", replace(base, epsilon=epsilon, k=k, seed=seed))
        for k in ks
        for seed in seeds
    ]


def kinetic_sweep(seeds=(0, 1, 2),
                  kinetics=("gaussian", "rayleigh(0.5)", "uniform(-1,1)"),
                  **overrides):
    # fewer, longer trajectories per refresh average out the directional
    # bias of the non-Gaussian momentum distributions
    defaults = dict(outer_iterations=60, leapfrog_steps=150)
    defaults.update(overrides)
    base = RunConfig(**defaults)
    return [
        (f"kinetic={kin}", replace(base, kinetic=kin, seed=seed))
        for kin in kinetics
        for seed in seeds
    ]


def step_size_sweep(seeds=(0, 1, 2), lambda0s=(4e-3, 1e-3, 2.5e-4), **overrides):
    base = RunConfig(**overrides) if overrides else RunConfig()
    return [
        (f"lambda0={lam:g}", replace(base, lambda0=lam, seed=seed))
        for lam in lambda0s
        for seed in seeds
    ]
