"""Naive-Bayes label model: soft labels from per-source conditionals.

The posterior on a row of source outputs s is

    q(Y = 1 | s) = prod_i q(s_i | Y = 1) * Pr(Y = 1) / denominator(s)

with two denominator modes:

* ``empirical``: a fitted configuration distribution over the 2**m source
  patterns.  This is the form the generalization-error decomposition is an
  exact identity for; the value is not normalized in finite samples and may
  exceed one.
* ``normalized``: the sum of the two class numerators, always a proper
  probability.  The practical mode for producing labels.

Accuracy-parameterized models use the symmetric conditionals
q(s_i = 1 | Y = 1) = q(s_i = -1 | Y = -1) = (1 + a_i) / 2; class-conditional
models supply both columns explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import SourceMatrix
from .errors import ContractError, UnseenConfigurationError
from .estimators import AccuracyEstimate, ClassConditionalEstimate
from .ising import IsingModel
from .states import check_capacity, config_bits, config_index

ACCURACY_CLAMP = 1e-6   # estimates pulled inside [-1 + c, 1 - c] before use
LOSS_FLOOR = 1e-12      # probability floor applied inside cross_entropy only


def empirical_config_dist(
    data: SourceMatrix, laplace: float | None = None
) -> np.ndarray:
    """Configuration distribution over all 2**m source patterns.

    ``laplace=None`` gives plain frequencies (zero mass on unseen patterns);
    ``laplace=k`` gives (count + k) / (n + k * 2**m), which has full support.
    """
    check_capacity(data.m)
    counts = data.config_counts()
    if laplace is None:
        return counts / data.n
    if laplace <= 0:
        raise ContractError("laplace pseudocount must be positive")
    return (counts + laplace) / (data.n + laplace * counts.size)


def config_dist_from_model(model: IsingModel) -> np.ndarray:
    """The exact source-configuration marginal of a ground-truth model."""
    return model.lambda_marginal()


def smooth_config_dist(
    counts: np.ndarray, n: float, laplace: float | None
) -> np.ndarray:
    """Smoothing applied to raw configuration counts (the counts-based path)."""
    if laplace is None:
        return counts / n
    return (counts + laplace) / (n + laplace * counts.size)


@dataclass(frozen=True)
class LabelModel:
    """Immutable fitted inference model; see the module docstring for modes."""

    cond_pos: np.ndarray            # q(s_i = 1 | Y = 1)
    cond_neg: np.ndarray            # q(s_i = 1 | Y = -1)
    class_balance: float
    mode: str = "normalized"
    config_dist: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("normalized", "empirical"):
            raise ContractError(f"unknown inference mode '{self.mode}'")
        if not 0.0 < self.class_balance < 1.0:
            raise ContractError("class balance must lie in (0, 1)")
        lo = ACCURACY_CLAMP / 2.0
        for name in ("cond_pos", "cond_neg"):
            arr = np.clip(np.asarray(getattr(self, name), dtype=np.float64), lo, 1.0 - lo)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.cond_pos.shape != self.cond_neg.shape or self.cond_pos.ndim != 1:
            raise ContractError("conditional vectors must be equal-length 1-d arrays")
        if self.mode == "empirical":
            if self.config_dist is None:
                raise ContractError("empirical mode requires a configuration distribution")
            dist = np.asarray(self.config_dist, dtype=np.float64)
            if dist.size != 1 << self.m:
                raise ContractError("configuration distribution has the wrong size")
            dist.setflags(write=False)
            object.__setattr__(self, "config_dist", dist)

    @property
    def m(self) -> int:
        return self.cond_pos.size

    @classmethod
    def from_accuracies(
        cls,
        accuracies,
        class_balance: float,
        mode: str = "normalized",
        config_dist: np.ndarray | None = None,
        metadata: dict | None = None,
    ) -> "LabelModel":
        if isinstance(accuracies, AccuracyEstimate):
            meta = {"method": accuracies.method, "aggregation": accuracies.aggregation}
            acc = accuracies.values
        else:
            meta = {}
            acc = np.asarray(accuracies, dtype=np.float64)
        acc = np.clip(acc, -1.0 + ACCURACY_CLAMP, 1.0 - ACCURACY_CLAMP)
        meta.update(metadata or {})
        return cls(
            (1.0 + acc) / 2.0,
            (1.0 - acc) / 2.0,
            class_balance,
            mode,
            config_dist,
            meta,
        )

    @classmethod
    def from_class_conditional(
        cls,
        estimate: ClassConditionalEstimate,
        mode: str = "normalized",
        config_dist: np.ndarray | None = None,
        metadata: dict | None = None,
    ) -> "LabelModel":
        meta = {"method": "quadratic-triplet"}
        meta.update(metadata or {})
        return cls(
            estimate.cond_pos.copy(),
            estimate.cond_neg.copy(),
            estimate.class_balance,
            mode,
            config_dist,
            meta,
        )

    # -- log-space cores ---------------------------------------------------

    def _log_numerators(self, bits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Row log numerators for Y=+1 and Y=-1; bits is an (n, m) 0/1 array."""
        lw_pos = (
            bits @ np.log(self.cond_pos)
            + (1.0 - bits) @ np.log1p(-self.cond_pos)
            + np.log(self.class_balance)
        )
        lw_neg = (
            bits @ np.log(self.cond_neg)
            + (1.0 - bits) @ np.log1p(-self.cond_neg)
            + np.log1p(-self.class_balance)
        )
        return lw_pos, lw_neg

    def log_posteriors(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(log q(Y=1|row), log q(Y=-1|row)) without any probability floor."""
        values = np.asarray(values)
        if values.ndim == 1:
            values = values[None, :]
        bits = (values > 0).astype(np.float64)
        lw_pos, lw_neg = self._log_numerators(bits)
        if self.mode == "normalized":
            denom = np.logaddexp(lw_pos, lw_neg)
        else:
            dist = self.config_dist[config_index(values)]
            if np.any(dist <= 0.0):
                bad = int(np.flatnonzero(dist <= 0.0)[0])
                raise UnseenConfigurationError(
                    f"row {bad} has a configuration with zero estimated probability; "
                    "use smoothing or normalized mode"
                )
            denom = np.log(dist)
        return lw_pos - denom, lw_neg - denom

    def log_posterior_table(self) -> tuple[np.ndarray, np.ndarray]:
        """Log posteriors for every one of the 2**m configurations, in index order."""
        check_capacity(self.m)
        bits = config_bits(self.m)
        lw_pos, lw_neg = self._log_numerators(bits)
        if self.mode == "normalized":
            denom = np.logaddexp(lw_pos, lw_neg)
        else:
            if np.any(self.config_dist <= 0.0):
                raise UnseenConfigurationError(
                    "configuration distribution lacks full support"
                )
            denom = np.log(self.config_dist)
        return lw_pos - denom, lw_neg - denom


def posterior(model: LabelModel, rows: SourceMatrix | np.ndarray) -> np.ndarray:
    """q(Y = 1 | row) per row; may exceed 1 in empirical mode (reported as-is)."""
    values = rows.values if isinstance(rows, SourceMatrix) else np.asarray(rows)
    lp_pos, _ = model.log_posteriors(values)
    return np.exp(lp_pos)


def soft_labels(model: LabelModel, rows: SourceMatrix | np.ndarray) -> np.ndarray:
    """2 q(Y=1|row) - 1, in [-1, 1] for normalized mode."""
    return 2.0 * posterior(model, rows) - 1.0


def cross_entropy(
    model: LabelModel, data: SourceMatrix, floor: float = LOSS_FLOOR
) -> float:
    """Mean cross-entropy of the model's posteriors against the labels.

    Posterior probabilities are floored at ``floor`` before the log so the
    loss stays finite; values above one (possible in empirical mode) are kept
    as-is for decomposition fidelity.
    """
    labels = data.require_labels()
    lp_pos, lp_neg = model.log_posteriors(data.values)
    if floor > 0.0:
        lp_pos = np.maximum(lp_pos, np.log(floor))
        lp_neg = np.maximum(lp_neg, np.log(floor))
    picked = np.where(labels > 0, lp_pos, lp_neg)
    return float(-picked.mean())


def classification_scores(
    model: LabelModel, data: SourceMatrix, threshold: float = 0.5
) -> dict:
    """Precision/recall/F1 on the +1 class at the given posterior threshold."""
    labels = data.require_labels()
    pred = posterior(model, data) >= threshold
    actual = labels > 0
    tp = int(np.sum(pred & actual))
    fp = int(np.sum(pred & ~actual))
    fn = int(np.sum(~pred & actual))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    degenerate = precision + recall == 0.0
    f1 = 0.0 if degenerate else 2.0 * precision * recall / (precision + recall)
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "degenerate": degenerate,
    }


def f1_score(model: LabelModel, data: SourceMatrix, threshold: float = 0.5) -> float:
    return classification_scores(model, data, threshold)["f1"]
