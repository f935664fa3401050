"""Exact error decomposition and theoretical bound evaluation.

For a fitted empirical-denominator label model and an enumerable ground
truth, the expected cross-entropy loss splits exactly into four terms:

    loss = irreducible - sampling_noise + inference_bias + estimation_error

* irreducible: H(Y | sources) of the ground truth;
* sampling_noise: KL(true config marginal || fitted config distribution);
* inference_bias: the sum over dependency edges of I(s_i; s_j | Y), the
  cost of product-form inference that no amount of data removes;
* estimation_error: the per-source expected KL between true and fitted
  source-given-label conditionals.

The identity is algebraic, holds per fitted model (no expectation over
datasets needed), and requires only that the fitted configuration
distribution has full support.  It doubles as the package's central
correctness oracle: every term is computed by a different route and the
residual against an independently enumerated expected loss must vanish.

Bound evaluators drop the o(1/n) remainder terms; reports record that.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, IdentityUndefinedError, NumericalError
from .ising import (
    IsingModel,
    ModelDiagnostics,
    _pair_conditional_mi,
    diagnostics,
    sample_state_counts,
)
from .estimators import SampleMoments, estimate_triplet_from_moments
from .label_model import ACCURACY_CLAMP, LabelModel


# ---------------------------------------------------------------------------
# Exact decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecompositionReport:
    irreducible: float
    sampling_noise: float
    inference_bias: float
    estimation_error: float
    total: float
    expected_loss: float
    residual: float

    def to_dict(self) -> dict:
        return {
            "H_cond": self.irreducible,
            "noise": self.sampling_noise,
            "B_I": self.inference_bias,
            "param_est_error": self.estimation_error,
            "total": self.total,
            "independent_loss": self.expected_loss,
            "residual": self.residual,
        }

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def _entropy_terms(model: IsingModel) -> tuple[float, np.ndarray]:
    joint = model.joint
    p_lambda = model.lambda_marginal()
    h_cond = -float(np.dot(joint, np.log(joint))) + float(
        np.dot(p_lambda, np.log(p_lambda))
    )
    return h_cond, p_lambda


def _inference_bias(model: IsingModel) -> float:
    return float(sum(_pair_conditional_mi(model, i, j) for i, j, _ in model.edges))


def _source_conditionals(model: IsingModel) -> tuple[np.ndarray, np.ndarray]:
    """True Pr(s_i = 1 | Y = +-1) for every source, from the joint table."""
    blocks = model.conditional_configs()  # rows: Y=-1, Y=+1
    m = model.m
    idx = np.arange(1 << m, dtype=np.int64)
    out = np.empty((2, m))
    for i in range(m):
        mask = ((idx >> i) & 1).astype(np.float64)
        out[0, i] = float(np.dot(blocks[1], mask))  # Y = +1
        out[1, i] = float(np.dot(blocks[0], mask))  # Y = -1
    return out[0], out[1]


def _binary_kl(p: float, q: float) -> float:
    return p * math.log(p / q) + (1.0 - p) * math.log((1.0 - p) / (1.0 - q))


def expected_loss_by_enumeration(model: IsingModel, fitted: LabelModel) -> float:
    """E over the true joint of the cross-entropy loss, no probability floor."""
    if fitted.m != model.m:
        raise ContractError("fitted model and ground truth disagree on m")
    lp_pos, lp_neg = fitted.log_posterior_table()
    blocks = model.joint.reshape(2, -1)  # row 0: Y=-1, row 1: Y=+1
    return float(-(np.dot(blocks[1], lp_pos) + np.dot(blocks[0], lp_neg)))


def decompose(model: IsingModel, fitted: LabelModel) -> DecompositionReport:
    """Exact four-term decomposition of the fitted model's expected loss.

    Requires empirical-denominator mode with a full-support configuration
    distribution; every term is enumerated under the ground truth.
    """
    if fitted.mode != "empirical":
        raise ContractError("the decomposition applies to empirical-denominator mode")
    if fitted.m != model.m:
        raise ContractError("fitted model and ground truth disagree on m")
    if np.any(fitted.config_dist <= 0.0):
        raise IdentityUndefinedError(
            "fitted configuration distribution has zero-mass patterns; "
            "both sides of the identity are infinite"
        )
    h_cond, p_lambda = _entropy_terms(model)
    noise = float(np.dot(p_lambda, np.log(p_lambda) - np.log(fitted.config_dist)))
    bias = _inference_bias(model)
    true_pos, true_neg = _source_conditionals(model)
    p = model.class_balance()
    est = 0.0
    for i in range(model.m):
        est += p * _binary_kl(true_pos[i], float(fitted.cond_pos[i]))
        est += (1.0 - p) * _binary_kl(true_neg[i], float(fitted.cond_neg[i]))
    total = h_cond - noise + bias + est
    loss = expected_loss_by_enumeration(model, fitted)
    return DecompositionReport(
        irreducible=h_cond,
        sampling_noise=noise,
        inference_bias=bias,
        estimation_error=est,
        total=total,
        expected_loss=loss,
        residual=abs(total - loss),
    )


def exact_generalization_error(
    model: IsingModel, fitted: LabelModel
) -> tuple[float, float]:
    """(expected loss, excess over H(Y|sources)) by enumeration."""
    h_cond, _ = _entropy_terms(model)
    loss = expected_loss_by_enumeration(model, fitted)
    return loss, loss - h_cond


# ---------------------------------------------------------------------------
# Fast excess evaluation for accuracy-parameterized fits
# ---------------------------------------------------------------------------


def accuracy_excess(
    true_accuracies: np.ndarray, inference_bias: float, estimates: np.ndarray
) -> np.ndarray:
    """Excess loss of symmetric accuracy fits under an exact-denominator model.

    Equals ``exact_generalization_error`` for a LabelModel built from the
    estimates in empirical mode with the true configuration marginal as the
    denominator, by the decomposition identity (noise term is then zero):

        excess = inference_bias + sum_i E_Y KL(true cond_i || fitted cond_i).

    ``estimates`` may be a batch with shape (..., m); estimates are clamped
    exactly as LabelModel does before the KL.
    """
    a = np.asarray(true_accuracies, dtype=np.float64)
    est = np.clip(
        np.asarray(estimates, dtype=np.float64),
        -1.0 + ACCURACY_CLAMP,
        1.0 - ACCURACY_CLAMP,
    )
    tp, tq = (1.0 + a) / 2.0, (1.0 - a) / 2.0
    fp, fq = (1.0 + est) / 2.0, (1.0 - est) / 2.0
    kl = tp * (np.log(tp) - np.log(fp)) + tq * (np.log(tq) - np.log(fq))
    return inference_bias + kl.sum(axis=-1)


# ---------------------------------------------------------------------------
# Bound evaluators
# ---------------------------------------------------------------------------


def _require_bound_inputs(diag: ModelDiagnostics) -> tuple[float, float, float]:
    b = diag.min_pair_moment
    a_min = diag.min_accuracy
    a_bar = diag.max_mean_triplet
    if not (b > 0.0 and a_min > 0.0):
        raise NumericalError("bound constants require strictly positive moments")
    if not a_bar < 1.0:
        raise NumericalError(
            "degenerate bound constants: the mean triplet value reaches 1"
        )
    return b, a_min, a_bar


def bound_constants(diag: ModelDiagnostics) -> dict:
    """The four source-quality constants of the unlabeled excess-error bound."""
    b, a_min, a_bar = _require_bound_inputs(diag)
    b2, am2 = b * b, a_min * a_min
    slack = 1.0 - a_bar * a_bar
    tail = 1.0 / b2**2 + 2.0 / b2
    c1 = 2.0 / (b2 * am2) * (1.0 + 1.0 / (slack * b2 * am2))
    c2 = math.sqrt(3.0 * (1.0 - b2) / b2 * tail) / (slack * b2 * am2)
    c3 = 3.0 * (1.0 - b2) / (slack**2 * b2**2 * am2) * tail
    c4 = 3.0 * (1.0 - b2) / (8.0 * b2 * slack) * tail
    return {"c1": c1, "c2": c2, "c3": c3, "c4": c4}


def bound_labeled(diag: ModelDiagnostics, n_labeled: int) -> float:
    """Upper bound on labeled-fit excess: m / (2 n) + inference bias."""
    if n_labeled < 1:
        raise ContractError("sample size must be at least 1")
    return diag.m / (2.0 * n_labeled) + diag.inference_bias


def bound_unlabeled(
    diag: ModelDiagnostics, n_unlabeled: int, d: int | None = None
) -> dict:
    """Upper bound on unlabeled-fit excess, with its constants and components.

    Returns a dict with c1..c4, the misspecification component ``B_est``,
    and the total bound.  The o(1/n) remainder is dropped.
    """
    if n_unlabeled < 1:
        raise ContractError("sample size must be at least 1")
    if d is None:
        d = diag.edge_count
    consts = bound_constants(diag)
    eps_max = diag.gap_max
    m, n = diag.m, n_unlabeled
    b_est = eps_max * (
        consts["c1"] * d / m
        + consts["c2"] / math.sqrt(n)
        + consts["c3"] * d / (m * n)
    )
    bound = b_est + consts["c4"] * m / n + diag.inference_bias
    return {
        **consts,
        "B_est": b_est,
        "B_I": diag.inference_bias,
        "bound": bound,
        "o_terms_dropped": True,
    }


def bound_lower_unlabeled(diag: ModelDiagnostics, d: int | None = None) -> float:
    """Asymptotic lower bound on uncorrected unlabeled-fit excess."""
    if d is None:
        d = diag.edge_count
    if d < 0:
        raise ContractError("d must be nonnegative")
    if d == 0:
        return diag.inference_bias
    m = diag.m
    eps_min = diag.gap_min
    b4 = diag.min_pair_moment**4
    first = ((m - 2 * d) * d * d * eps_min * eps_min * b4) / (
        2.0 * (m - 1) ** 2 * (m - 2) ** 2
    )
    return first + diag.inference_bias


def median_correction_constant(diag: ModelDiagnostics) -> float:
    """c_rho = 1 / (2 (1 - max_i a_i^2)) from the corrected-fit bound."""
    return 1.0 / (2.0 * (1.0 - diag.max_accuracy**2))


@dataclass(frozen=True)
class MedianMseResult:
    rho: float                   # max over sources of mean squared error
    bound: float                 # c_rho * m * rho + inference bias
    c_rho: float
    applicable: bool             # consistency conditions m > 5, d < (m-1)(m-2)/4
    n_unlabeled: int
    trials: int
    per_source_mse: np.ndarray = field(repr=False, default=None)


def median_mse(
    model: IsingModel,
    n_unlabeled: int,
    trials: int = 200,
    seed: int = 0,
    diag: ModelDiagnostics | None = None,
) -> MedianMseResult:
    """Monte-Carlo maximum MSE of the median-corrected estimator, plus its bound.

    The consistency conditions (m > 5, d below a quarter of the triplet
    count) are reported; when violated the MSE is still estimated.
    """
    if trials < 30:
        raise ContractError("at least 30 trials required")
    if diag is None:
        diag = diagnostics(model)
    m = model.m
    sq = np.zeros(m)
    for t in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 887, t]))
        counts = sample_state_counts(model, n_unlabeled, rng)
        moments = SampleMoments.from_state_counts(counts, m)
        est = estimate_triplet_from_moments(moments.pair, "median")
        sq += (est.values - diag.accuracies) ** 2
    per_source = sq / trials
    rho = float(per_source.max())
    c_rho = median_correction_constant(diag)
    applicable = m > 5 and model.edge_count < (m - 1) * (m - 2) / 4.0
    return MedianMseResult(
        rho=rho,
        bound=c_rho * m * rho + diag.inference_bias,
        c_rho=c_rho,
        applicable=applicable,
        n_unlabeled=n_unlabeled,
        trials=trials,
        per_source_mse=per_source,
    )


# ---------------------------------------------------------------------------
# Consolidated report
# ---------------------------------------------------------------------------


def bound_report(
    diag: ModelDiagnostics,
    n_labeled: int | None = None,
    n_unlabeled: int | None = None,
    d: int | None = None,
    rho: float | None = None,
) -> dict:
    """All bound quantities in one JSON-ready dict (paper-symbol field names)."""
    if d is None:
        d = diag.edge_count
    out: dict = {
        "inputs": {
            "m": diag.m,
            "d": d,
            "n_U": n_unlabeled,
            "n_L": n_labeled,
            "eps_max": diag.gap_max,
            "eps_min": diag.gap_min,
            "a_min": diag.min_accuracy,
            "b_min": diag.min_pair_moment,
            "a_bar_max": diag.max_mean_triplet,
            "rho": rho,
        },
        "B_I": diag.inference_bias,
        "c_rho": median_correction_constant(diag),
        "lower_bound_unlabeled": bound_lower_unlabeled(diag, d),
        "o_terms_dropped": True,
    }
    out.update(bound_constants(diag))
    if n_labeled is not None:
        out["R_L_bound"] = bound_labeled(diag, n_labeled)
    if n_unlabeled is not None:
        ub = bound_unlabeled(diag, n_unlabeled, d)
        out["B_est"] = ub["B_est"]
        out["R_U_bound"] = ub["bound"]
        if rho is not None:
            out["R_M_bound"] = out["c_rho"] * diag.m * rho + diag.inference_bias
    return out
