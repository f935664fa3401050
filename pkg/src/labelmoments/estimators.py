"""Accuracy estimation from labeled or unlabeled source outputs.

The unlabeled route solves, for each source i and a pair (j, k) of distinct
other sources,

    a_i^(j,k) = sqrt(| M_ij * M_ik / M_jk |),

where M is the pairwise agreement matrix E[s_i s_j]; under conditional
independence given Y this equals E[s_i Y] exactly.  Aggregation over the
C(m-1, 2) candidate pairs is ``single`` (one uniformly random pair, the
variant the theory analyzes), ``mean`` (the experimental baseline), or
``median`` (the misspecification correction).  Signs are taken positive
throughout: sources are assumed better than random on average.

Labeled data estimates E[s_i Y] directly.  The two can be combined linearly
or through a positive-part James-Stein rule that picks the weight from the
labeled estimator's covariance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from pathlib import Path

import numpy as np

from .data import SourceMatrix
from .errors import (
    ContractError,
    DegenerateTripletError,
    EstimationError,
    NumericalError,
)

DEGENERATE_FLOOR = 1e-6


# ---------------------------------------------------------------------------
# Sufficient statistics
# ---------------------------------------------------------------------------


@lru_cache(maxsize=8)
def _state_stats(m: int) -> dict:
    """Per-state sign products for moment computation from joint-state counts."""
    size = 1 << (m + 1)
    idx = np.arange(size, dtype=np.int64)
    signs = np.empty((size, m))
    for i in range(m):
        signs[:, i] = 2.0 * ((idx >> i) & 1) - 1.0
    sy = (2.0 * ((idx >> m) & 1) - 1.0)[:, None]
    pairs = list(combinations(range(m), 2))
    ss = np.empty((size, len(pairs)))
    for c, (i, j) in enumerate(pairs):
        ss[:, c] = signs[:, i] * signs[:, j]
    return {"signs": signs, "signs_y": signs * sy, "pair_products": ss, "pairs": pairs}


@dataclass(frozen=True)
class SampleMoments:
    """First and second empirical moments of a sample; all estimators run on these."""

    n: int
    means: np.ndarray              # empirical E[s_i]
    pair: np.ndarray               # empirical E[s_i s_j], unit diagonal
    acc: np.ndarray | None = None  # empirical E[s_i y] when labels were present

    @property
    def m(self) -> int:
        return self.means.size

    @classmethod
    def from_source_matrix(cls, data: SourceMatrix) -> "SampleMoments":
        x = data.values.astype(np.float64)
        n = data.n
        pair = (x.T @ x) / n
        np.fill_diagonal(pair, 1.0)
        acc = None
        if data.has_labels:
            acc = (x * data.labels[:, None].astype(np.float64)).mean(axis=0)
        return cls(n, x.mean(axis=0), pair, acc)

    @classmethod
    def from_state_counts(cls, counts: np.ndarray, m: int) -> "SampleMoments":
        stats = _state_stats(m)
        n = counts.sum()
        means = (counts @ stats["signs"]) / n
        flat = (counts @ stats["pair_products"]) / n
        pair = np.eye(m)
        for c, (i, j) in enumerate(stats["pairs"]):
            pair[i, j] = pair[j, i] = flat[c]
        acc = (counts @ stats["signs_y"]) / n
        return cls(int(n), means, pair, acc)

    def labeled_covariance(self) -> np.ndarray:
        """Sample covariance (ddof=1) of the per-row vectors s * y."""
        if self.acc is None:
            raise ContractError("labeled covariance requires labels")
        if self.n < 2:
            raise ContractError("labeled covariance requires at least two rows")
        return (self.pair - np.outer(self.acc, self.acc)) * (self.n / (self.n - 1))


def pairwise_agreement(data: SourceMatrix | np.ndarray) -> np.ndarray:
    """Empirical pairwise agreement matrix E[s_i s_j] with a unit diagonal."""
    if isinstance(data, SourceMatrix):
        return SampleMoments.from_source_matrix(data).pair
    return SampleMoments.from_source_matrix(SourceMatrix(np.asarray(data))).pair


# ---------------------------------------------------------------------------
# Estimates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AccuracyEstimate:
    """An m-vector of estimated E[s_i Y] values, clipped to [-1, 1]."""

    values: np.ndarray
    method: str
    aggregation: str | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.clip(np.asarray(self.values, dtype=np.float64), -1.0, 1.0)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def m(self) -> int:
        return self.values.size

    def to_dict(self) -> dict:
        return {
            "values": [float(v) for v in self.values],
            "method": self.method,
            "aggregation": self.aggregation,
            "metadata": _jsonable(self.metadata),
        }

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def from_dict(cls, doc: dict) -> "AccuracyEstimate":
        return cls(
            np.asarray(doc["values"], dtype=np.float64),
            doc.get("method", "unknown"),
            doc.get("aggregation"),
            doc.get("metadata", {}),
        )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


# ---------------------------------------------------------------------------
# Labeled estimation
# ---------------------------------------------------------------------------


def estimate_labeled(data: SourceMatrix) -> AccuracyEstimate:
    """Direct moment estimate: the mean of s_i * y over rows, unbiased."""
    labels = data.require_labels()
    if data.n < 1:
        raise ContractError("at least one row required")
    acc = (data.values.astype(np.float64) * labels[:, None]).mean(axis=0)
    return AccuracyEstimate(acc, method="labeled")


def labeled_from_moments(moments: SampleMoments) -> AccuracyEstimate:
    if moments.acc is None:
        raise ContractError("moments carry no label statistics")
    return AccuracyEstimate(moments.acc, method="labeled")


# ---------------------------------------------------------------------------
# Triplet estimation
# ---------------------------------------------------------------------------


def triplet_accuracy(pair_moments: np.ndarray, i: int, j: int, k: int) -> float:
    """One raw triplet solve for source i using witnesses j and k."""
    if len({i, j, k}) != 3:
        raise ContractError("triplet indices must be distinct")
    denom = pair_moments[j, k]
    if abs(denom) < DEGENERATE_FLOOR:
        raise DegenerateTripletError(
            f"agreement moment M[{j},{k}]={denom:.2e} below floor {DEGENERATE_FLOOR}"
        )
    val = np.sqrt(abs(pair_moments[i, j] * pair_moments[i, k] / denom))
    return float(np.clip(val, 0.0, 1.0))


@lru_cache(maxsize=64)
def _pair_table(m: int, known_edges: frozenset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Witness-pair index arrays (m, C(m-1,2)) and the known-edge exclusion mask."""
    npairs = (m - 1) * (m - 2) // 2
    jj = np.empty((m, npairs), dtype=np.int64)
    kk = np.empty((m, npairs), dtype=np.int64)
    allowed = np.ones((m, npairs), dtype=bool)

    def is_edge(a, b):
        return (min(a, b), max(a, b)) in known_edges

    for i in range(m):
        others = [o for o in range(m) if o != i]
        for c, (j, k) in enumerate(combinations(others, 2)):
            jj[i, c], kk[i, c] = j, k
            if is_edge(i, j) or is_edge(i, k) or is_edge(j, k):
                allowed[i, c] = False
    return jj, kk, allowed


def _normalize_edges(known_edges) -> frozenset:
    return frozenset((min(int(i), int(j)), max(int(i), int(j))) for i, j in known_edges)


def triplet_census(
    pair_moments: np.ndarray, known_edges=()
) -> tuple[np.ndarray, np.ndarray]:
    """All triplet values (m, C(m-1,2)) and their validity mask.

    Invalid columns are degenerate denominators or pairs touching a known
    dependency (partial-recovery mode).
    """
    pair_moments = np.asarray(pair_moments, dtype=np.float64)
    m = pair_moments.shape[0]
    if m < 3:
        raise ContractError("triplet estimation requires at least three sources")
    jj, kk, allowed = _pair_table(m, _normalize_edges(known_edges))
    rows = np.arange(m)[:, None]
    denom = pair_moments[jj, kk]
    valid = allowed & (np.abs(denom) >= DEGENERATE_FLOOR)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.sqrt(np.abs(pair_moments[rows, jj] * pair_moments[rows, kk] / denom))
    vals = np.clip(np.where(valid, vals, np.nan), 0.0, 1.0)
    return vals, valid


def _lower_median(vals: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Row-wise lower median of the valid entries (deterministic for even counts)."""
    counts = valid.sum(axis=1)
    filled = np.where(valid, vals, np.inf)
    order = np.sort(filled, axis=1)
    return order[np.arange(vals.shape[0]), (counts - 1) // 2]


def estimate_triplet_from_moments(
    pair_moments: np.ndarray,
    aggregation: str = "mean",
    seed=None,
    known_edges=(),
) -> AccuracyEstimate:
    """Triplet estimates for every source from a pairwise agreement matrix."""
    vals, valid = triplet_census(pair_moments, known_edges)
    m, npairs = vals.shape
    counts = valid.sum(axis=1)
    if (counts == 0).any():
        bad = int(np.argmin(counts))
        raise EstimationError(f"no usable triplet for source {bad}")
    if aggregation == "mean":
        est = np.nansum(np.where(valid, vals, 0.0), axis=1) / counts
    elif aggregation == "median":
        est = _lower_median(vals, valid)
    elif aggregation == "single":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        est = np.empty(m)
        for i in range(m):
            est[i] = vals[i, rng.choice(np.flatnonzero(valid[i]))]
    else:
        raise ContractError(f"unknown aggregation '{aggregation}'")
    meta = {
        "skipped": [int(npairs - c) for c in counts],
        "census_size": int(npairs),
    }
    if known_edges:
        meta["known_edges"] = sorted(_normalize_edges(known_edges))
    return AccuracyEstimate(est, method="triplet", aggregation=aggregation, metadata=meta)


def estimate_triplet(
    data: SourceMatrix,
    aggregation: str = "mean",
    seed=None,
    known_edges=(),
) -> AccuracyEstimate:
    """Triplet estimates from raw unlabeled source outputs."""
    if data.n < 1:
        raise ContractError("at least one row required")
    moments = SampleMoments.from_source_matrix(data)
    return estimate_triplet_from_moments(moments.pair, aggregation, seed, known_edges)


# ---------------------------------------------------------------------------
# Combination rules
# ---------------------------------------------------------------------------


def combine_linear(
    a_unlabeled: AccuracyEstimate, a_labeled: AccuracyEstimate, alpha: float
) -> AccuracyEstimate:
    """Componentwise convex combination: alpha on the unlabeled estimate."""
    if not 0.0 <= alpha <= 1.0:
        raise ContractError("alpha must lie in [0, 1]")
    if a_unlabeled.m != a_labeled.m:
        raise ContractError("estimates must cover the same sources")
    vals = alpha * a_unlabeled.values + (1.0 - alpha) * a_labeled.values
    return AccuracyEstimate(
        vals, method="combined-linear", metadata={"alpha": float(alpha)}
    )


def green_strawderman_alpha(
    diff: np.ndarray, sigma: np.ndarray, r: float
) -> float:
    """min(r / ||diff||_{sigma^-1}, 1); the weight the shrinkage rule realizes."""
    try:
        quad = float(diff @ np.linalg.solve(sigma, diff))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"covariance solve failed: {exc}") from exc
    if quad < 0:
        raise NumericalError("covariance is not positive definite")
    norm = np.sqrt(quad)
    if norm == 0.0:
        return 1.0
    return min(r / norm, 1.0)


def combine_green_strawderman(
    a_unlabeled: AccuracyEstimate,
    labeled: SourceMatrix | SampleMoments,
    r: float | None = None,
    ridge: float = 1e-8,
) -> AccuracyEstimate:
    """Positive-part shrinkage of the labeled estimate toward the unlabeled one.

    The labeled estimator's covariance is the sample covariance of the rows
    s * y divided by the row count, ridge-regularized by ``ridge`` times its
    mean diagonal.  The result equals the linear combination at
    alpha = min(r / ||a_L - a_U||_{cov^-1}, 1), reported in the metadata.
    ``r`` defaults to m - 2, the midpoint of the admissible range
    [0, 2(m - 2)] (which requires m >= 3).
    """
    moments = (
        labeled
        if isinstance(labeled, SampleMoments)
        else SampleMoments.from_source_matrix(labeled)
    )
    m = a_unlabeled.m
    if m < 3:
        raise ContractError("the shrinkage rule requires at least three sources")
    if moments.m != m:
        raise ContractError("estimates must cover the same sources")
    if r is None:
        r = float(m - 2)
    if not 0.0 <= r <= 2.0 * (m - 2):
        raise ContractError(f"r must lie in [0, {2 * (m - 2)}]")
    a_labeled = labeled_from_moments(moments)
    sigma = moments.labeled_covariance() / moments.n
    scale = np.trace(sigma) / m
    if scale <= 0.0:
        raise NumericalError("labeled covariance is identically zero")
    sigma = sigma + ridge * scale * np.eye(m)
    alpha = green_strawderman_alpha(a_labeled.values - a_unlabeled.values, sigma, r)
    out = combine_linear(a_unlabeled, a_labeled, alpha)
    return AccuracyEstimate(
        out.values,
        method="combined-green-strawderman",
        metadata={"alpha": float(alpha), "r": float(r), "ridge": float(ridge)},
    )


# ---------------------------------------------------------------------------
# Class-conditional ("quadratic") triplets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassConditionalEstimate:
    """Per-source 2x2 matrices of Pr(s_i = +-1 | Y = +-1).

    ``mu[i]`` has rows indexed by the source value (+1 then -1) and columns by
    the label (+1 then -1); each column sums to one.
    """

    mu: np.ndarray
    class_balance: float
    metadata: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.mu.shape[0]

    @property
    def cond_pos(self) -> np.ndarray:
        """Pr(s_i = 1 | Y = 1)."""
        return self.mu[:, 0, 0]

    @property
    def cond_neg(self) -> np.ndarray:
        """Pr(s_i = 1 | Y = -1)."""
        return self.mu[:, 0, 1]

    def implied_accuracies(self) -> np.ndarray:
        p = self.class_balance
        return 2.0 * (p * self.cond_pos + (1 - p) * (1.0 - self.cond_neg)) - 1.0

    def to_dict(self) -> dict:
        return {
            "mu": [[list(map(float, row)) for row in mat] for mat in self.mu],
            "class_balance": float(self.class_balance),
            "metadata": _jsonable(self.metadata),
        }

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def from_dict(cls, doc: dict) -> "ClassConditionalEstimate":
        return cls(
            np.asarray(doc["mu"], dtype=np.float64),
            float(doc["class_balance"]),
            doc.get("metadata", {}),
        )


def _quadratic_roots(qa: float, qb: float, qc: float) -> list[float]:
    if abs(qa) < 1e-14:
        if abs(qb) < 1e-14:
            return []
        return [-qc / qb]
    disc = qb * qb - 4.0 * qa * qc
    if disc < 0:
        return []
    root = np.sqrt(disc)
    return [(-qb + root) / (2 * qa), (-qb - root) / (2 * qa)]


def _solve_class_conditional_triplet(
    q: np.ndarray, c: np.ndarray, d: float, i: int, j: int, k: int, prob_tol: float
) -> tuple[float | None, bool]:
    """Recover Pr(s_i = 1 | Y = 1) from one triplet of positive-vote overlaps.

    ``q[a, b]`` is Pr(s_a = 1, s_b = 1) / Pr(Y = -1) and ``c[a]`` is
    Pr(s_a = 1) / Pr(Y = -1); d is the class-balance odds.  Eliminating the
    i and k unknowns from the three pair equations leaves a quadratic in
    source j's parameter; each real root back-substitutes into candidate
    probabilities for all three sources.  Returns (value, tiebreak_applied);
    value is None when no root yields probabilities within ``prob_tol`` of
    [0, 1].
    """
    big_a = d + d * d
    u0, u1 = q[i, j] - c[i] * c[j], c[i] * d
    v0, v1 = q[j, k] - c[j] * c[k], c[k] * d
    d0, d1 = -c[j] * d, big_a
    w = c[i] * c[k] - q[i, k]
    qa = big_a * u1 * v1 - c[k] * d * u1 * d1 - c[i] * d * v1 * d1 + w * d1 * d1
    qb = (
        big_a * (u0 * v1 + u1 * v0)
        - c[k] * d * (u0 * d1 + u1 * d0)
        - c[i] * d * (v0 * d1 + v1 * d0)
        + 2.0 * w * d0 * d1
    )
    qc = big_a * u0 * v0 - c[k] * d * u0 * d0 - c[i] * d * v0 * d0 + w * d0 * d0

    candidates = []
    for beta in _quadratic_roots(qa, qb, qc):
        denom = d0 + d1 * beta
        if abs(denom) < 1e-12:
            continue
        alpha = (u0 + u1 * beta) / denom
        gamma = (v0 + v1 * beta) / denom
        probs = [
            alpha, beta, gamma,
            c[i] - d * alpha, c[j] - d * beta, c[k] - d * gamma,
        ]
        if all(-prob_tol <= p <= 1.0 + prob_tol for p in probs):
            candidates.append(alpha)
    if not candidates:
        return None, False
    if len(candidates) == 1:
        return float(np.clip(candidates[0], 0.0, 1.0)), False
    # Both roots give valid probability systems: prefer the better-than-random
    # source (implied accuracy >= 0.5 in probability units).
    p = d / (1.0 + d)
    accs = [p * a + (1 - p) * (1.0 - (c[i] - d * a)) for a in candidates]
    pick = int(np.argmax(accs))
    return float(np.clip(candidates[pick], 0.0, 1.0)), True


def estimate_quadratic_triplet_from_moments(
    moments: SampleMoments,
    class_balance: float,
    aggregation: str = "mean",
    seed=None,
    prob_tol: float = 1e-6,
) -> ClassConditionalEstimate:
    if not 0.0 < class_balance < 1.0:
        raise ContractError("class balance must lie in (0, 1)")
    m = moments.m
    if m < 3:
        raise ContractError("triplet estimation requires at least three sources")
    p = class_balance
    d = p / (1.0 - p)
    pos = (1.0 + moments.means) / 2.0
    q = (1.0 + moments.pair + moments.means[:, None] + moments.means[None, :]) / 4.0
    q = q / (1.0 - p)
    c = pos / (1.0 - p)

    jj, kk, _ = _pair_table(m, frozenset())
    npairs = jj.shape[1]
    vals = np.full((m, npairs), np.nan)
    tiebreaks = 0
    for i in range(m):
        for col in range(npairs):
            val, tie = _solve_class_conditional_triplet(
                q, c, d, i, int(jj[i, col]), int(kk[i, col]), prob_tol
            )
            if val is not None:
                vals[i, col] = val
            tiebreaks += int(tie)
    valid = ~np.isnan(vals)
    counts = valid.sum(axis=1)
    if (counts == 0).any():
        bad = int(np.argmin(counts))
        raise EstimationError(f"no usable class-conditional triplet for source {bad}")
    if aggregation == "mean":
        alpha = np.nansum(np.where(valid, vals, 0.0), axis=1) / counts
    elif aggregation == "median":
        alpha = _lower_median(vals, valid)
    elif aggregation == "single":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        alpha = np.empty(m)
        for i in range(m):
            alpha[i] = vals[i, rng.choice(np.flatnonzero(valid[i]))]
    else:
        raise ContractError(f"unknown aggregation '{aggregation}'")

    alpha = np.clip(alpha, 0.0, 1.0)
    alpha_neg = np.clip((pos - p * alpha) / (1.0 - p), 0.0, 1.0)
    mu = np.empty((m, 2, 2))
    mu[:, 0, 0], mu[:, 1, 0] = alpha, 1.0 - alpha
    mu[:, 0, 1], mu[:, 1, 1] = alpha_neg, 1.0 - alpha_neg
    meta = {
        "aggregation": aggregation,
        "skipped": [int(npairs - cnt) for cnt in counts],
        "census_size": int(npairs),
        "tiebreaks": int(tiebreaks),
    }
    return ClassConditionalEstimate(mu, class_balance, meta)


def estimate_quadratic_triplet(
    data: SourceMatrix,
    class_balance: float,
    aggregation: str = "mean",
    seed=None,
) -> ClassConditionalEstimate:
    """Class-conditional accuracy recovery via the quadratic triplet system."""
    if data.n < 1:
        raise ContractError("at least one row required")
    moments = SampleMoments.from_source_matrix(data)
    return estimate_quadratic_triplet_from_moments(
        moments, class_balance, aggregation, seed
    )
