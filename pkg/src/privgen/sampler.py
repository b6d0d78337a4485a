"""Hamiltonian-dynamics MCMC driven by a score function.

Leapfrog integration with the score as the (negated-potential) force:

    p <- p + (lam/2) s(u);   u <- u + lam p;   p <- p + (lam/2) s(u')

targets exp(-(Q(u) + |p|^2/2)) when s = -grad Q = grad log density. The
outer loop refreshes momentum every iteration and shrinks the step size
quadratically, lam(m) = lam0 (M/m)^2, so early iterations explore and late
ones settle; an optional Metropolis correction accepts a block of leapfrog
steps with probability min(1, exp(-dH)).

Chains are embarrassingly parallel and are stepped as one (n_chains, dim)
state matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import scoremodel as sm

__all__ = [
    "KineticSpec",
    "SamplerConfig",
    "HamiltonianState",
    "ChainStats",
    "SamplerDivergence",
    "step_size",
    "refresh_momentum",
    "leapfrog",
    "metropolis_accept",
    "estimate_delta_potential_path",
    "sample_chains",
    "run_chain",
]

_KINETIC_NAMES = ("gaussian", "rayleigh", "uniform")


class SamplerDivergence(RuntimeError):
    """Chain state went non-finite; carries (outer, inner) step indices."""

    def __init__(self, outer, inner):
        self.outer = outer
        self.inner = inner
        super().__init__(f"divergent state at outer iteration {outer}, leapfrog step {inner}")


@dataclass(frozen=True)
class KineticSpec:
    """Distribution used to refresh momentum; the gradient model stays p."""

    name: str = "gaussian"
    params: tuple = ()

    def __post_init__(self):
        if self.name not in _KINETIC_NAMES:
            raise ValueError(f"kinetic distribution must be one of {_KINETIC_NAMES}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.name == "rayleigh" and len(self.params) != 1:
            raise ValueError("rayleigh takes one scale parameter")
        if self.name == "uniform":
            if len(self.params) != 2 or self.params[0] >= self.params[1]:
                raise ValueError("uniform takes bounds (a, b) with a < b")

    @classmethod
    def parse(cls, text: str) -> "KineticSpec":
        text = text.strip()
        if "(" not in text:
            return cls(name=text)
        name, _, rest = text.partition("(")
        args = tuple(float(a) for a in rest.rstrip(")").split(",") if a.strip())
        return cls(name=name.strip(), params=args)


@dataclass(frozen=True)
class SamplerConfig:
    lambda0: float = 1e-3
    outer_iterations: int = 30  # M
    leapfrog_steps: int = 10  # N
    kinetic: KineticSpec = KineticSpec()
    metropolis: str = "off"  # off | exact_energy | path_integral
    energy_fn: object = None  # potential oracle for exact_energy mode
    path_steps: int = 64
    n_chains: int = 1
    init_lo: object = -1.0  # scalar or per-coordinate array
    init_hi: object = 1.0
    max_step_multiplier: float | None = None  # clamp (M/m)^2; off by default
    seed: int = 0

    def __post_init__(self):
        if self.lambda0 <= 0:
            raise ValueError("base step size must be positive")
        if self.outer_iterations < 1 or self.leapfrog_steps < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.metropolis not in ("off", "exact_energy", "path_integral"):
            raise ValueError("metropolis must be off, exact_energy, or path_integral")
        if self.metropolis == "exact_energy" and self.energy_fn is None:
            raise ValueError("exact_energy mode needs an energy_fn oracle")
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")


@dataclass
class HamiltonianState:
    """Position, momentum, and the current outer iteration index."""

    u: np.ndarray
    p: np.ndarray
    m: int = 0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.u.shape != self.p.shape:
            raise ValueError("position and momentum dimensions differ")


@dataclass
class ChainStats:
    accepted: int = 0
    rejected: int = 0
    estimator_warnings: int = 0


def step_size(m: int, cfg: SamplerConfig) -> float:
    """Quadratic decay lam0 (M/m)^2; m is 1-indexed and ends at lam0."""
    big_m = cfg.outer_iterations
    if not 1 <= m <= big_m:
        raise ValueError(f"outer index m={m} outside 1..{big_m}")
    mult = (big_m / m) ** 2
    if cfg.max_step_multiplier is not None:
        mult = min(mult, cfg.max_step_multiplier)
    return cfg.lambda0 * mult


def refresh_momentum(dim: int, kinetic: KineticSpec, rng) -> np.ndarray:
    """i.i.d. momentum coordinates from the configured distribution."""
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    return _refresh((dim,), kinetic, rng)


def _refresh(shape, kinetic: KineticSpec, rng):
    if kinetic.name == "gaussian":
        return rng.standard_normal(shape)
    if kinetic.name == "rayleigh":
        return rng.rayleigh(kinetic.params[0], size=shape)
    lo, hi = kinetic.params
    return rng.uniform(lo, hi, size=shape)


def leapfrog(state: HamiltonianState, score_fn, lam: float) -> HamiltonianState:
    """One time-reversible step: half kick, drift, half kick."""
    if lam <= 0:
        raise ValueError("step size must be positive")
    p_half = state.p + 0.5 * lam * score_fn(state.u)
    u_new = state.u + lam * p_half
    p_new = p_half + 0.5 * lam * score_fn(u_new)
    if not (np.isfinite(u_new).all() and np.isfinite(p_new).all()):
        raise SamplerDivergence(state.m, 1)
    return HamiltonianState(u=u_new, p=p_new, m=state.m)


def metropolis_accept(old: HamiltonianState, new: HamiltonianState, energy_estimator, rng,
                      stats: ChainStats | None = None) -> bool:
    """Accept with probability min(1, exp(-dH)); estimator failure rejects."""
    try:
        dh = float(energy_estimator(old, new))
    except Exception:
        if stats is not None:
            stats.estimator_warnings += 1
            stats.rejected += 1
        return False
    accept = dh <= 0 or rng.random() < np.exp(-dh)
    if stats is not None:
        if accept:
            stats.accepted += 1
        else:
            stats.rejected += 1
    return bool(accept)


def estimate_delta_potential_path(score_fn, u_old, u_new, steps: int) -> float:
    """Potential change Q(u_new) - Q(u_old) as minus the line integral of the
    score along the straight segment, midpoint rule."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    u_old = np.asarray(u_old, dtype=np.float64)
    u_new = np.asarray(u_new, dtype=np.float64)
    delta = (u_new - u_old) / steps
    ts = (np.arange(steps) + 0.5) / steps
    mids = u_old[None, :] + ts[:, None] * (u_new - u_old)[None, :]
    s = np.asarray(score_fn(mids), dtype=np.float64)
    return float(-np.sum(s @ delta))


def exact_energy_estimator(q_fn):
    """dH from a potential oracle plus the quadratic kinetic term."""

    def estimator(old: HamiltonianState, new: HamiltonianState) -> float:
        dq = float(np.sum(q_fn(new.u)) - np.sum(q_fn(old.u)))
        dk = 0.5 * float(np.sum(new.p**2) - np.sum(old.p**2))
        return dq + dk

    return estimator


def path_integral_estimator(score_fn, steps: int):
    def estimator(old: HamiltonianState, new: HamiltonianState) -> float:
        dq = estimate_delta_potential_path(score_fn, old.u, new.u, steps)
        dk = 0.5 * float(np.sum(new.p**2) - np.sum(old.p**2))
        return dq + dk

    return estimator


def _accept_mask(cfg: SamplerConfig, score_fn, u0, p0, u1, p1, rng):
    """Per-chain joint (u, p) acceptance decisions for a block of steps."""
    nc = u0.shape[0]
    if cfg.metropolis == "exact_energy":
        dq = np.asarray(cfg.energy_fn(u1), dtype=np.float64) - np.asarray(
            cfg.energy_fn(u0), dtype=np.float64
        )
    else:  # path_integral, vectorized over chains
        steps = cfg.path_steps
        ts = (np.arange(steps) + 0.5) / steps
        seg = u1 - u0
        mids = u0[:, None, :] + ts[None, :, None] * seg[:, None, :]
        flat = mids.reshape(nc * steps, -1)
        s = np.asarray(score_fn(flat), dtype=np.float64).reshape(nc, steps, -1)
        dq = -np.einsum("cts,cs->c", s, seg / steps)
    dk = 0.5 * (np.sum(p1**2, axis=1) - np.sum(p0**2, axis=1))
    dh = dq + dk
    return (dh <= 0) | (rng.random(nc) < np.exp(-np.maximum(dh, 0.0)))


def sample_chains(score_fn, dim: int, cfg: SamplerConfig, rng=None,
                  stats: ChainStats | None = None, trajectory_every: int = 0):
    """Endpoints of n_chains independent chains as an (n_chains, dim) matrix.

    With trajectory_every = t > 0, also returns the thinned trajectory of
    positions recorded after every t-th outer iteration.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    nc = cfg.n_chains
    lo = np.broadcast_to(np.asarray(cfg.init_lo, dtype=np.float64), (dim,))
    hi = np.broadcast_to(np.asarray(cfg.init_hi, dtype=np.float64), (dim,))
    u = lo + (hi - lo) * rng.random((nc, dim))
    snapshots = []
    for m in range(1, cfg.outer_iterations + 1):
        p = _refresh((nc, dim), cfg.kinetic, rng)
        lam = step_size(m, cfg)
        u_start, p_start = u, p
        for n in range(1, cfg.leapfrog_steps + 1):
            p_half = p + 0.5 * lam * score_fn(u)
            u = u + lam * p_half
            p = p_half + 0.5 * lam * score_fn(u)
            if not (np.isfinite(u).all() and np.isfinite(p).all()):
                raise SamplerDivergence(m, n)
        if cfg.metropolis != "off":
            accept = _accept_mask(cfg, score_fn, u_start, p_start, u, p, rng)
            u = np.where(accept[:, None], u, u_start)
            if stats is not None:
                stats.accepted += int(accept.sum())
                stats.rejected += int(nc - accept.sum())
        elif stats is not None:
            stats.accepted += nc
        if trajectory_every and m % trajectory_every == 0:
            snapshots.append(u.copy())
    if trajectory_every:
        return u, np.stack(snapshots) if snapshots else np.empty((0, nc, dim))
    return u


def run_chain(params: sm.Params, embedding: sm.EmbeddingMatrix | None, cfg: SamplerConfig,
              dim: int, rng=None):
    """Sample with the trained score network and wrap endpoints as
    embedded samples (labels recoverable through the embedding matrix)."""
    in_dim = params.layers[0][0].shape[1]
    if in_dim != dim:
        raise ValueError(f"model expects dimension {in_dim}, sampler asked for {dim}")
    endpoints = sample_chains(lambda u: sm.score(params, u), dim, cfg, rng)
    embed_dim = embedding.embed_dim if embedding is not None else 0
    return [
        sm.EmbeddedSample(u=row, feature_dim=dim - embed_dim, embed_dim=embed_dim)
        for row in endpoints
    ]
