"""Randomized response over projection-vector neighborhoods, the pure-epsilon
privacy ledger, and an empirical auditor for the mechanism's ratio bound.

The mechanism keeps a projection vector with probability
p = e^eps / (e^eps + k - 1) and otherwise returns a uniform draw from the
other k - 1 members of its top-k cosine neighborhood, so the worst-case
output-probability ratio between two inputs sharing a candidate set is
exactly e^eps. delta is identically zero.

The generator passed around here is seeded and splittable for
reproducibility; a deployment claiming privacy in production must substitute
a cryptographically secure randomness source.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import beta as _beta_dist

__all__ = [
    "RRConfig",
    "Neighborhood",
    "PrivacyLedger",
    "keep_probability",
    "switch_probability",
    "cosine_distance",
    "topk_neighborhood",
    "topk_neighborhoods",
    "rr_perturb",
    "rr_perturb_many",
    "AuditResult",
    "audit_ratio",
    "ledger_report",
]

# one-sided tail mass of a 3-sigma normal bound, used for audit intervals
_THREE_SIGMA_TAIL = 0.0013498980316300933


@dataclass(frozen=True)
class RRConfig:
    """Privacy budget and neighborhood size for the response mechanism."""

    epsilon: float
    k: int

    def __post_init__(self):
        if not (self.epsilon >= 0.0 and math.isfinite(self.epsilon)):
            raise ValueError("epsilon must be a finite nonnegative real")
        if int(self.k) != self.k or self.k < 2:
            raise ValueError("k must be an integer >= 2")
        object.__setattr__(self, "k", int(self.k))


def keep_probability(cfg: RRConfig) -> float:
    """e^eps / (e^eps + k - 1), computed in an overflow-safe form."""
    # 1 / (1 + (k-1) e^-eps) never overflows for eps >= 0
    return 1.0 / (1.0 + (cfg.k - 1) * math.exp(-cfg.epsilon))


def switch_probability(cfg: RRConfig) -> float:
    """Probability of each of the k - 1 alternatives."""
    return (1.0 - keep_probability(cfg)) / (cfg.k - 1)


@dataclass(frozen=True)
class Neighborhood:
    """The k candidate indices for one center, center listed first."""

    center_index: int
    member_indices: tuple

    def __post_init__(self):
        members = tuple(int(i) for i in self.member_indices)
        object.__setattr__(self, "member_indices", members)
        if len(set(members)) != len(members):
            raise ValueError("neighborhood members must be distinct")
        if not members or members[0] != self.center_index:
            raise ValueError("center must be the first member")

    @property
    def k(self):
        return len(self.member_indices)

    @property
    def alternatives(self):
        return self.member_indices[1:]


def cosine_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine distance undefined for zero-norm vectors")
    return float(1.0 - np.dot(a, b) / (na * nb))


def _cosine_distance_matrix(batch: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(batch, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("batch contains a zero-norm vector")
    unit = batch / norms[:, None]
    return 1.0 - unit @ unit.T


def topk_neighborhood(i: int, batch, k: int) -> Neighborhood:
    """The k batch vectors with the smallest cosine distance to vector i.

    The center is always included; remaining slots are filled by increasing
    distance with ties broken toward the smaller batch index.
    """
    batch = np.asarray(batch, dtype=np.float64)
    b = batch.shape[0]
    if k > b:
        raise ValueError(f"neighborhood size k={k} exceeds batch size {b}")
    if not 0 <= i < b:
        raise ValueError("center index out of range")
    dists = _cosine_distance_matrix(batch)[i]
    order = np.lexsort((np.arange(b), dists))
    others = [int(j) for j in order if j != i]
    return Neighborhood(center_index=int(i), member_indices=(int(i), *others[: k - 1]))


def topk_neighborhoods(batch, k: int):
    """Neighborhoods for every center in one pass over the distance matrix.

    A stable argsort along each row orders by distance with ties broken
    toward the smaller batch index, matching topk_neighborhood exactly.
    """
    batch = np.asarray(batch, dtype=np.float64)
    b = batch.shape[0]
    if k > b:
        raise ValueError(f"neighborhood size k={k} exceeds batch size {b}")
    dists = _cosine_distance_matrix(batch)
    order = np.argsort(dists, axis=1, kind="stable")
    out = []
    for i in range(b):
        row = order[i]
        others = row[row != i][: k - 1]
        out.append(Neighborhood(center_index=i, member_indices=(i, *(int(j) for j in others))))
    return out


def rr_perturb(i: int, neighborhood: Neighborhood, cfg: RRConfig, rng) -> int:
    """One mechanism invocation: keep i w.p. p, else uniform alternative."""
    if neighborhood.center_index != i:
        raise ValueError("neighborhood is not centered on i")
    if neighborhood.k != cfg.k:
        raise ValueError("neighborhood size does not match configured k")
    if rng.random() < keep_probability(cfg):
        return i
    return neighborhood.alternatives[rng.integers(0, cfg.k - 1)]


def rr_perturb_many(i: int, neighborhood: Neighborhood, cfg: RRConfig, rng, n: int) -> np.ndarray:
    """Vectorized draws of the same mechanism; same distribution as rr_perturb."""
    if neighborhood.center_index != i:
        raise ValueError("neighborhood is not centered on i")
    if neighborhood.k != cfg.k:
        raise ValueError("neighborhood size does not match configured k")
    keep = rng.random(n) < keep_probability(cfg)
    out = np.full(n, i, dtype=np.int64)
    n_switch = int((~keep).sum())
    if n_switch:
        alts = np.asarray(neighborhood.alternatives, dtype=np.int64)
        out[~keep] = alts[rng.integers(0, cfg.k - 1, size=n_switch)]
    return out


# ---------------------------------------------------------------------------
# ledger


@dataclass
class PrivacyLedger:
    """Pure budget accounting: epsilon fixed at configuration, delta = 0.

    Per-example draws compose in parallel over disjoint inputs, so the
    reported budget does not grow with the invocation count of one run, and
    post-processing (sampling, classifier training) leaves it unchanged.
    """

    epsilon: float
    delta: float = 0.0
    mechanism_invocations: int = 0
    postprocessing: list = field(default_factory=list)

    def __post_init__(self):
        if self.delta != 0.0:
            raise ValueError("this mechanism is pure: delta must be 0")

    def record_invocations(self, n: int):
        self.mechanism_invocations += int(n)

    def register_postprocess(self, label: str):
        self.postprocessing.append(str(label))


def ledger_report(ledger: PrivacyLedger):
    """(epsilon, delta) for the completed run; delta is always 0."""
    return (ledger.epsilon, 0.0)


# ---------------------------------------------------------------------------
# empirical audit


@dataclass(frozen=True)
class AuditResult:
    epsilon: float
    k: int
    trials: int
    max_ratio: float
    bound: float
    passed: bool

    def line(self) -> str:
        return (
            f"epsilon={self.epsilon:g} k={self.k} trials={self.trials} "
            f"max_ratio={self.max_ratio:.6g} bound={self.bound:.6g} "
            f"pass={str(self.passed).lower()}"
        )


def _proportion_bounds(count: int, n: int):
    """Clopper-Pearson interval at one-sided 3-sigma coverage per side."""
    if count == 0:
        lo = 0.0
    else:
        lo = float(_beta_dist.ppf(_THREE_SIGMA_TAIL, count, n - count + 1))
    if count == n:
        hi = 1.0
    else:
        hi = float(_beta_dist.ppf(1.0 - _THREE_SIGMA_TAIL, count + 1, n - count))
    return lo, hi


def _default_mechanism(cfg: RRConfig):
    def draw_counts(center: int, members, n: int, rng) -> np.ndarray:
        nbhd = Neighborhood(center_index=center, member_indices=(center, *[m for m in members if m != center]))
        outs = rr_perturb_many(center, nbhd, cfg, rng, n)
        return np.bincount(outs, minlength=len(members))

    return draw_counts


def audit_ratio(cfg: RRConfig, trials: int, rng=None, mechanism=None):
    """Empirical check of the e^eps output-ratio bound on a k-candidate instance.

    Runs `trials` invocations per candidate center over a shared candidate
    set, estimates P[o | center] for every output o, and flags a violation
    when a 3-sigma lower bound on one probability exceeds e^eps times the
    3-sigma upper bound on another. The reported max ratio is the largest
    finite observed ratio.
    """
    if trials < 10**4:
        raise ValueError("audit needs at least 1e4 trials per center")
    if rng is None:
        rng = np.random.default_rng(0)
    draw = mechanism if mechanism is not None else _default_mechanism(cfg)
    k = cfg.k
    members = tuple(range(k))
    counts = np.zeros((k, k), dtype=np.int64)  # [center, output]
    for c in range(k):
        counts[c] = draw(c, members, trials, rng)

    bound = math.exp(cfg.epsilon)
    phat = counts / trials
    max_ratio = 0.0
    passed = True
    for o in range(k):
        col = phat[:, o]
        pos = col > 0
        if pos.any():
            finite = col[pos]
            max_ratio = max(max_ratio, float(finite.max() / finite.min()))
        for ci in range(k):
            lo_i, _ = _proportion_bounds(int(counts[ci, o]), trials)
            for cj in range(k):
                if ci == cj:
                    continue
                _, hi_j = _proportion_bounds(int(counts[cj, o]), trials)
                if lo_i > bound * hi_j:
                    passed = False
    return AuditResult(
        epsilon=cfg.epsilon,
        k=k,
        trials=trials,
        max_ratio=max_ratio,
        bound=bound,
        passed=passed,
    )
