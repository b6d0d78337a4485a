"""Mini-batch training of the score network with randomized-response
projection vectors.

Each iteration draws a batch, embeds labels, samples Gaussian projection
vectors v, perturbs each through its top-k cosine neighborhood to get v_r,
and descends the objective

    mean_i [ v_r_i . (J_s(u_i) v_r_i) + 0.5 (v_i . s(u_i))^2 ]

where s is the network output and J_s its Jacobian in u. The perturbed
vector enters only the directional-curvature term; the raw private score of
the data never appears, so the loss is computable from {u, v, v_r} alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import privacy as pv
from . import scoremodel as sm

__all__ = [
    "TrainConfig",
    "ProjectionTriple",
    "DivergenceError",
    "sample_projections",
    "make_triples",
    "ssm_rr_loss",
    "loss_and_grad",
    "train",
]


class DivergenceError(RuntimeError):
    """Training or evaluation produced a non-finite value."""

    def __init__(self, message, iteration=None):
        self.iteration = iteration
        super().__init__(message)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    iterations: int = 1000
    learning_rate: float = 1e-4
    rr: pv.RRConfig | None = None  # None trains without perturbation
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.rr is not None and self.batch_size < self.rr.k:
            raise ValueError(
                f"batch size {self.batch_size} is smaller than neighborhood size k={self.rr.k}"
            )


@dataclass(frozen=True)
class ProjectionTriple:
    """A projection vector, its perturbed counterpart, and the neighborhood."""

    v: np.ndarray
    v_r: np.ndarray
    neighborhood: pv.Neighborhood | None = None


def sample_projections(b: int, dim: int, rng) -> np.ndarray:
    """b independent standard-normal projection vectors, one per row."""
    if b < 1:
        raise ValueError("need at least one projection vector")
    return rng.standard_normal((b, dim))


def make_triples(vs: np.ndarray, rr: pv.RRConfig | None, rng, ledger=None):
    """Perturb each row of vs through its own top-k neighborhood."""
    vs = np.asarray(vs, dtype=np.float64)
    if rr is None:
        return [ProjectionTriple(v=v, v_r=v) for v in vs]
    neighborhoods = pv.topk_neighborhoods(vs, rr.k)
    triples = []
    for i, nbhd in enumerate(neighborhoods):
        chosen = pv.rr_perturb(i, nbhd, rr, rng)
        triples.append(ProjectionTriple(v=vs[i], v_r=vs[chosen], neighborhood=nbhd))
    if ledger is not None:
        ledger.record_invocations(len(triples))
    return triples


def _stack_triples(triples):
    v = np.stack([np.asarray(t.v, dtype=np.float64) for t in triples])
    v_r = np.stack([np.asarray(t.v_r, dtype=np.float64) for t in triples])
    return v, v_r


def _loss_terms(layers, activation, u, v, v_r):
    """Batch loss from {u, v, v_r}; layers may be arrays or tape values."""
    h = sm.apply_net(layers, activation, ad.Dual(u, v_r))
    s, jvr = h.primal, h.tangent
    curvature = ad.rowdot(v_r, jvr)
    proj = ad.rowdot(v, s)
    per_sample = curvature + 0.5 * (proj * proj)
    n = u.shape[0]
    return ad.vsum(per_sample) * (1.0 / n)


def ssm_rr_loss(params: sm.Params, u_batch, triples) -> float:
    """Objective value for a batch; reduces to plain sliced score matching
    when every triple has v_r == v."""
    u = np.asarray(u_batch, dtype=np.float64)
    if len(triples) != u.shape[0]:
        raise ValueError("batch and triples lengths differ")
    v, v_r = _stack_triples(triples)
    if v.shape != u.shape:
        raise ValueError("projection vectors must match the sample dimension")
    out = float(ad.value_of(_loss_terms(params.layers, params.activation, u, v, v_r)))
    if not np.isfinite(out):
        raise DivergenceError("non-finite loss value")
    return out


def loss_and_grad(params: sm.Params, u, v, v_r):
    """Loss plus its gradient w.r.t. every parameter tensor (one reverse sweep)."""
    tape = ad.Tape()
    layer_vars = [
        (tape.leaf(w), tape.leaf(b)) for w, b in params.layers
    ]
    out = _loss_terms(layer_vars, params.activation, u, v, v_r)
    loss = float(out.value)
    flat_vars = [t for pair in layer_vars for t in pair]
    grads = tape.gradients(out, flat_vars)
    return loss, grads


class _Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, tensors, grads):
        return [t - self.lr * g for t, g in zip(tensors, grads)]


class _Adam:
    def __init__(self, lr, beta1, beta2, eps, shapes):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, tensors, grads):
        self.t += 1
        out = []
        b1, b2 = self.beta1, self.beta2
        for i, (x, g) in enumerate(zip(tensors, grads)):
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1**self.t)
            vhat = self.v[i] / (1 - b2**self.t)
            out.append(x - self.lr * mhat / (np.sqrt(vhat) + self.eps))
        return out


def _make_optimizer(cfg: TrainConfig, shapes):
    if cfg.optimizer == "sgd":
        return _Sgd(cfg.learning_rate)
    return _Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps, shapes)


def _as_features_labels(dataset):
    if isinstance(dataset, tuple):
        x, y = dataset
    else:
        x, y = dataset.features, dataset.labels
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("dataset features must be a nonempty (n, d) matrix")
    y = None if y is None else np.asarray(y)
    return x, y


def train(dataset, embedding: sm.EmbeddingMatrix | None, spec: sm.MLPSpec, cfg: TrainConfig,
          checkpoint_cb=None, init: sm.Params | None = None):
    """Run the full training loop.

    Returns (params, ledger, loss_trace). The three random streams (batch
    selection, projection sampling, response mechanism) are split from
    cfg.seed, so a run without perturbation consumes identical batch and
    projection draws as a perturbed run with the same seed. Pass ``init``
    to resume from a checkpoint instead of the seeded initialization.
    """
    x, y = _as_features_labels(dataset)
    if embedding is not None:
        if y is None:
            raise ValueError("labeled embedding requested but dataset has no labels")
        if y.min() < 0 or y.max() >= embedding.n_classes:
            raise ValueError("dataset labels out of range for the embedding matrix")
        dim = x.shape[1] + embedding.embed_dim
    else:
        dim = x.shape[1]
    if spec.input_dim != dim:
        raise ValueError(f"model expects dimension {spec.input_dim}, data embeds to {dim}")

    ss = np.random.SeedSequence(cfg.seed)
    rng_batch, rng_proj, rng_rr = (np.random.default_rng(s) for s in ss.spawn(3))

    params = sm.init_params(spec) if init is None else init
    if [t.shape for t in params.tensors()] != [t.shape for t in sm.init_params(spec).tensors()]:
        raise ValueError("initial parameters do not match the model spec")
    optimizer = _make_optimizer(cfg, [t.shape for t in params.tensors()])
    ledger = pv.PrivacyLedger(epsilon=cfg.rr.epsilon if cfg.rr is not None else float("inf"))
    n = x.shape[0]
    trace = np.zeros(cfg.iterations)

    for t in range(cfg.iterations):
        idx = rng_batch.integers(0, n, size=cfg.batch_size)
        if embedding is not None:
            u = sm.embed_batch(x[idx], y[idx], embedding)
        else:
            u = x[idx]
        vs = sample_projections(cfg.batch_size, dim, rng_proj)
        triples = make_triples(vs, cfg.rr, rng_rr, ledger)
        v, v_r = _stack_triples(triples)
        try:
            loss, grads = loss_and_grad(params, u, v, v_r)
        except ad.NonFiniteError as exc:
            raise DivergenceError(f"training diverged at iteration {t + 1}: {exc}", iteration=t + 1)
        if not np.isfinite(loss):
            raise DivergenceError(f"training diverged at iteration {t + 1}", iteration=t + 1)
        params = params.replace_tensors(optimizer.step(params.tensors(), grads))
        trace[t] = loss
        if checkpoint_cb is not None:
            checkpoint_cb(t + 1, params)
    return params, ledger, trace
