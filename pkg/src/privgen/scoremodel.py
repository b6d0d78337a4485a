"""Score network: an MLP mapping a point to an estimate of grad log density,
plus the fixed label-embedding scheme that lets generated points carry a
recoverable class label.

A sample is represented as u = concat(features, E[label]) where E is a fixed
(never trained) embedding matrix. De-embedding picks the class whose
embedding row has the largest inner product with the tail of u, so labels
survive the approximate samples produced by MCMC.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

_MAGIC = b"DPPM"
_PARAMS_VERSION = 1
_ACTIVATIONS = ("tanh", "softplus")


@dataclass(frozen=True)
class MLPSpec:
    """Architecture of the score network. Output dimension equals input."""

    input_dim: int
    hidden_dims: tuple = ()
    activation: str = "tanh"
    output_dim: int = None
    seed: int = 0

    def __post_init__(self):
        if self.output_dim is None:
            object.__setattr__(self, "output_dim", self.input_dim)
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden dims must be positive")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}")
        if self.output_dim != self.input_dim:
            raise ValueError("a score network must have output_dim == input_dim")

    @property
    def layer_dims(self):
        return (self.input_dim,) + self.hidden_dims + (self.output_dim,)


@dataclass(frozen=True)
class Params:
    """Per-layer (weight, bias) pairs; immutable during inference."""

    layers: tuple  # of (W, b) ndarray pairs
    activation: str = "tanh"

    def __post_init__(self):
        for w, b in self.layers:
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError("parameters must be finite")

    def tensors(self):
        out = []
        for w, b in self.layers:
            out.append(w)
            out.append(b)
        return out

    def flat(self):
        return np.concatenate([t.ravel() for t in self.tensors()])

    @property
    def n_params(self):
        return sum(t.size for t in self.tensors())

    def replace_tensors(self, tensors):
        layers = tuple(
            (tensors[2 * i], tensors[2 * i + 1]) for i in range(len(self.layers))
        )
        return Params(layers=layers, activation=self.activation)

    @classmethod
    def from_flat(cls, spec: MLPSpec, vec):
        vec = np.asarray(vec, dtype=np.float64)
        dims = spec.layer_dims
        layers = []
        k = 0
        for i in range(len(dims) - 1):
            w = vec[k : k + dims[i + 1] * dims[i]].reshape(dims[i + 1], dims[i])
            k += w.size
            b = vec[k : k + dims[i + 1]]
            k += b.size
            layers.append((w, b))
        if k != vec.size:
            raise ValueError("flat vector does not match spec shapes")
        return cls(layers=tuple(layers), activation=spec.activation)


def init_params(spec: MLPSpec) -> Params:
    """Zero-mean weights scaled by 1/sqrt(fan_in), zero biases, seeded."""
    rng = np.random.default_rng(spec.seed)
    dims = spec.layer_dims
    layers = []
    for i in range(len(dims) - 1):
        w = rng.normal(size=(dims[i + 1], dims[i])) / np.sqrt(dims[i])
        b = np.zeros(dims[i + 1])
        layers.append((w, b))
    return Params(layers=tuple(layers), activation=spec.activation)


def _activation_fn(name):
    return ad.tanh if name == "tanh" else ad.softplus


def apply_net(layers, activation, x):
    """Run the network on x: a single sample (d,) or a batch (n, d).

    Works identically for ndarray, Dual, and tape-valued layers or inputs,
    so the same forward pass serves inference, directional derivatives, and
    parameter gradients.
    """
    act = _activation_fn(activation)
    h = x
    for li, (w, b) in enumerate(layers):
        h = ad.affine(h, w, b)
        if li < len(layers) - 1:
            h = act(h)
    return h


def score(params: Params, u) -> np.ndarray:
    """Network output at u; approximates the gradient of log density."""
    u = np.asarray(u, dtype=np.float64)
    in_dim = params.layers[0][0].shape[1]
    if u.shape[-1] != in_dim:
        raise ValueError(f"expected points of dimension {in_dim}, got {u.shape[-1]}")
    out = ad.value_of(apply_net(params.layers, params.activation, u))
    if not np.isfinite(out).all():
        raise ad.NonFiniteError(-1, "score")
    return out


def score_jvp(params: Params, u, v):
    """Score at u together with its Jacobian applied to direction v."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError("u and v must have equal shapes")
    return ad.jvp(lambda t: apply_net(params.layers, params.activation, t), u, v)


# ---------------------------------------------------------------------------
# label embedding


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Fixed class-embedding rows; one row per class, never trained."""

    matrix: np.ndarray
    seed: int = 0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        object.__setattr__(self, "matrix", m)
        if m.ndim != 2:
            raise ValueError("embedding matrix must be 2-D")
        gram = m @ m.T
        if not np.array_equal(np.argmax(gram, axis=1), np.arange(m.shape[0])):
            raise ValueError(
                "embedding rows are not self-consistent under max inner product; "
                "use a different seed"
            )

    @property
    def n_classes(self):
        return self.matrix.shape[0]

    @property
    def embed_dim(self):
        return self.matrix.shape[1]

    def min_row_gap(self):
        """Smallest pairwise Euclidean distance between rows."""
        m = self.matrix
        d2 = np.sum((m[:, None, :] - m[None, :, :]) ** 2, axis=-1)
        d2[np.diag_indices_from(d2)] = np.inf
        return float(np.sqrt(d2.min()))


def make_embedding(n_classes: int, embed_dim: int = 8, seed: int = 0) -> EmbeddingMatrix:
    """Seeded Gaussian directions, rescaled to a common row norm sqrt(embed_dim).

    Equal norms make max inner product equivalent to nearest row, so the
    self-consistency invariant holds for every seed and any tail perturbation
    smaller than half the minimum row gap cannot flip a label.
    """
    if n_classes < 1 or embed_dim < 1:
        raise ValueError("n_classes and embed_dim must be positive")
    rng = np.random.default_rng(seed)
    rows = rng.normal(size=(n_classes, embed_dim))
    rows *= np.sqrt(embed_dim) / np.linalg.norm(rows, axis=1, keepdims=True)
    return EmbeddingMatrix(matrix=rows, seed=seed)


@dataclass(frozen=True)
class EmbeddedSample:
    """concat(features, embedding row); the unit the model and sampler see."""

    u: np.ndarray
    feature_dim: int
    embed_dim: int

    @property
    def features(self):
        return self.u[: self.feature_dim]

    @property
    def tail(self):
        return self.u[self.feature_dim :]


def embed(x, y: int, e: EmbeddingMatrix) -> EmbeddedSample:
    x = np.asarray(x, dtype=np.float64).ravel()
    if not 0 <= int(y) < e.n_classes:
        raise ValueError(f"label {y} out of range for {e.n_classes} classes")
    u = np.concatenate([x, e.matrix[int(y)]])
    return EmbeddedSample(u=u, feature_dim=x.size, embed_dim=e.embed_dim)


def embed_batch(x: np.ndarray, y: np.ndarray, e: EmbeddingMatrix) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if y.min() < 0 or y.max() >= e.n_classes:
        raise ValueError("labels out of range")
    return np.hstack([x, e.matrix[y.astype(int)]])


def unembed(u, e: EmbeddingMatrix):
    """Split u back into features and the nearest class by inner product.

    Ties go to the smallest class index; a nearest class is always returned.
    """
    if isinstance(u, EmbeddedSample):
        u = u.u
    u = np.asarray(u, dtype=np.float64)
    x = u[: u.size - e.embed_dim]
    tail = u[u.size - e.embed_dim :]
    y = int(np.argmax(e.matrix @ tail))
    return x, y


def unembed_batch(us: np.ndarray, e: EmbeddingMatrix):
    us = np.asarray(us, dtype=np.float64)
    x = us[:, : us.shape[1] - e.embed_dim]
    tails = us[:, us.shape[1] - e.embed_dim :]
    ys = np.argmax(tails @ e.matrix.T, axis=1)
    return x, ys


# ---------------------------------------------------------------------------
# serialization: magic "DPPM", version u32, spec fields, f32 layer tensors

def save_params(path, params: Params, spec: MLPSpec):
    act_code = _ACTIVATIONS.index(spec.activation)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _PARAMS_VERSION))
        fh.write(struct.pack("<IIIq", spec.input_dim, spec.output_dim, act_code, spec.seed))
        fh.write(struct.pack("<I", len(spec.hidden_dims)))
        for h in spec.hidden_dims:
            fh.write(struct.pack("<I", h))
        for w, b in params.layers:
            fh.write(np.asarray(w, dtype="<f4").tobytes(order="C"))
            fh.write(np.asarray(b, dtype="<f4").tobytes(order="C"))


def load_params(path):
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a model parameter file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _PARAMS_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        input_dim, output_dim, act_code, seed = struct.unpack("<IIIq", fh.read(20))
        (n_hidden,) = struct.unpack("<I", fh.read(4))
        hidden = struct.unpack(f"<{n_hidden}I", fh.read(4 * n_hidden)) if n_hidden else ()
        spec = MLPSpec(
            input_dim=input_dim,
            hidden_dims=tuple(hidden),
            activation=_ACTIVATIONS[act_code],
            output_dim=output_dim,
            seed=seed,
        )
        dims = spec.layer_dims
        layers = []
        for i in range(len(dims) - 1):
            w = np.frombuffer(fh.read(4 * dims[i + 1] * dims[i]), dtype="<f4")
            w = w.reshape(dims[i + 1], dims[i]).astype(np.float64)
            b = np.frombuffer(fh.read(4 * dims[i + 1]), dtype="<f4").astype(np.float64)
            layers.append((w, b))
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after parameter payload")
    return Params(layers=tuple(layers), activation=spec.activation), spec
