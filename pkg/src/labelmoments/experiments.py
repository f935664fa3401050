"""Monte-Carlo experiment harness: excess-error curves, data value ratios,
and combined-estimator sweeps on synthetic ground truths.

Evaluation protocol: a fitted accuracy vector is scored by its exact excess
generalization error under the true model with the true configuration
marginal as the inference denominator.  That choice zeroes the observable
sampling-noise term of the decomposition, so the measured excess is exactly

    inference_bias + per-source conditional KL(truth || fit),

which is what the scaling theory bounds.  Every trial draws fresh
multinomial state counts; all randomness derives from a root seed through
per-(purpose, n, trial) seed sequences, so results are reproducible and
independent of execution order or worker count.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .analysis import accuracy_excess, median_correction_constant, bound_constants
from .errors import ContractError, EstimationError, LabelMomentsError, NumericalError
from .estimators import (
    SampleMoments,
    estimate_triplet_from_moments,
    green_strawderman_alpha,
)
from .ising import IsingModel, ModelDiagnostics, calibrate, diagnostics
from .manifest import config_hash

# Default synthetic roster: ten sources with accuracies drawn once, uniformly
# from [.55, .75]; dependencies pair sources in index order with a fixed
# misspecification gap per edge.
DEFAULT_ACCURACIES = (
    0.6893, 0.6072, 0.5954, 0.6603, 0.6939,
    0.6346, 0.7462, 0.6870, 0.6462, 0.6284,
)
DEFAULT_EDGE_GAP = 0.1
DEFAULT_CURVE_GRID = (250, 500, 1000, 2000, 4000)
ESTIMATOR_NAMES = ("labeled", "triplet-mean", "triplet-median", "triplet-single")


def edge_layout(d: int, m: int | None = None) -> tuple[tuple[int, int], ...]:
    """Dependent pairs (0,1), (2,3), ... for the first d edges."""
    m = m if m is not None else 2 * d
    if 2 * d > m:
        raise ContractError(f"cannot place {d} disjoint edges among {m} sources")
    return tuple((2 * k, 2 * k + 1) for k in range(d))


@dataclass(frozen=True)
class SyntheticModelSpec:
    """Calibration targets defining a synthetic ground truth."""

    accuracies: tuple = DEFAULT_ACCURACIES
    d: int = 0
    edge_gap: float = DEFAULT_EDGE_GAP
    class_balance: float = 0.5

    def build(self) -> IsingModel:
        return calibrate(
            list(self.accuracies),
            edge_layout(self.d, len(self.accuracies)),
            self.edge_gap,
            self.class_balance,
        )

    def to_dict(self) -> dict:
        return {
            "accuracies": list(self.accuracies),
            "d": self.d,
            "edge_gap": self.edge_gap,
            "class_balance": self.class_balance,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticModelSpec":
        return cls(
            tuple(doc.get("accuracies", DEFAULT_ACCURACIES)),
            int(doc.get("d", 0)),
            float(doc.get("edge_gap", DEFAULT_EDGE_GAP)),
            float(doc.get("class_balance", 0.5)),
        )


@dataclass(frozen=True)
class ExperimentConfig:
    model: SyntheticModelSpec = SyntheticModelSpec()
    estimators: tuple = ("labeled", "triplet-mean", "triplet-median")
    n_grid: tuple = DEFAULT_CURVE_GRID
    trials: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ContractError("trials must be at least 1")
        if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ContractError("n grid must be strictly increasing")
        for name in self.estimators:
            if name not in ESTIMATOR_NAMES:
                raise ContractError(f"unknown estimator '{name}'")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["model"] = self.model.to_dict()
        doc["estimators"] = list(self.estimators)
        doc["n_grid"] = list(self.n_grid)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        return cls(
            SyntheticModelSpec.from_dict(doc.get("model", {})),
            tuple(doc.get("estimators", ("labeled", "triplet-mean", "triplet-median"))),
            tuple(doc.get("n_grid", DEFAULT_CURVE_GRID)),
            int(doc.get("trials", 1000)),
            int(doc.get("seed", 0)),
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def hash(self) -> str:
        return config_hash(self.to_dict())


# ---------------------------------------------------------------------------
# Trial engine
# ---------------------------------------------------------------------------


def _stream(label: str) -> int:
    return zlib.crc32(label.encode())


def trial_rng(seed: int, label: str, n: int, trial: int) -> np.random.Generator:
    """Per-trial generator derived from the root seed by counter."""
    return np.random.default_rng(
        np.random.SeedSequence([seed % (1 << 63), _stream(label), n, trial])
    )


@dataclass(frozen=True)
class ExcessResult:
    estimator: str
    n: int
    mean: float
    stderr: float
    trials: int
    failures: int


class TrialEngine:
    """Shared per-model state for Monte-Carlo excess evaluation."""

    def __init__(self, model: IsingModel, diag: ModelDiagnostics | None = None):
        self.model = model
        self.diag = diag if diag is not None else diagnostics(model)
        self.m = model.m

    def fit(self, estimator: str, moments: SampleMoments, rng) -> np.ndarray:
        if estimator == "labeled":
            return moments.acc
        if estimator.startswith("triplet-"):
            agg = estimator.split("-", 1)[1]
            return estimate_triplet_from_moments(moments.pair, agg, seed=rng).values
        raise ContractError(f"unknown estimator '{estimator}'")

    def excess(self, estimates: np.ndarray) -> np.ndarray:
        return accuracy_excess(
            self.diag.accuracies, self.diag.inference_bias, estimates
        )

    def excess_series(
        self, estimator: str, n: int, trials: int, seed: int
    ) -> tuple[np.ndarray, int]:
        """Per-trial exact excess values; failed fits are skipped and counted."""
        out = []
        failures = 0
        for t in range(trials):
            rng = trial_rng(seed, f"excess:{estimator}", n, t)
            counts = rng.multinomial(n, self.model.joint).astype(np.float64)
            moments = SampleMoments.from_state_counts(counts, self.m)
            try:
                est = self.fit(estimator, moments, rng)
            except LabelMomentsError:
                failures += 1
                continue
            out.append(float(self.excess(est)))
        return np.asarray(out), failures


def expected_excess_error(
    model: IsingModel,
    estimator: str,
    n: int,
    trials: int = 1000,
    seed: int = 0,
    engine: TrialEngine | None = None,
) -> ExcessResult:
    """Mean exact excess over fresh samples of size n, with its standard error."""
    if n < 1:
        raise ContractError("sample size must be at least 1")
    engine = engine if engine is not None else TrialEngine(model)
    series, failures = engine.excess_series(estimator, n, trials, seed)
    if series.size == 0:
        raise EstimationError(f"every trial failed for estimator '{estimator}'")
    stderr = float(series.std(ddof=1) / np.sqrt(series.size)) if series.size > 1 else 0.0
    return ExcessResult(estimator, n, float(series.mean()), stderr, series.size, failures)


# ---------------------------------------------------------------------------
# Data value ratio
# ---------------------------------------------------------------------------


def labeled_search_grid() -> list[int]:
    """Candidate labeled sizes: 10..100 by 1, then ..1000 by 2, then ..5000 by 10."""
    return (
        list(range(10, 101))
        + list(range(102, 1001, 2))
        + list(range(1010, 5001, 10))
    )


@dataclass(frozen=True)
class DvrResult:
    n_unlabeled: int
    estimator: str
    target_excess: float
    matched_n_labeled: int | None
    value_ratio: float
    lower_bounded: bool
    trace: tuple = field(default=())  # evaluated (n_labeled, mean, stderr) points


def data_value_ratio(
    model: IsingModel,
    n_unlabeled: int,
    estimator: str = "triplet-mean",
    trials: int = 1000,
    seed: int = 0,
    grid: list[int] | None = None,
    engine: TrialEngine | None = None,
) -> DvrResult:
    """n_U over the least labeled size whose mean excess matches n_U unlabeled.

    The labeled grid is scanned by bisection under the monotone-in-mean
    assumption; every evaluated point is deterministic in (seed, n), so the
    minimal qualifying point has, by construction, a failing predecessor.
    Comparisons use Monte-Carlo means without confidence gating; standard
    errors are recorded in the trace for downstream gating.
    """
    engine = engine if engine is not None else TrialEngine(model)
    grid = list(grid) if grid is not None else labeled_search_grid()
    target = expected_excess_error(model, estimator, n_unlabeled, trials, seed, engine)

    cache: dict[int, ExcessResult] = {}

    def labeled_mean(n_l: int) -> float:
        if n_l not in cache:
            cache[n_l] = expected_excess_error(
                model, "labeled", n_l, trials, seed, engine
            )
        return cache[n_l].mean

    matched: int | None
    lower_bounded = False
    if labeled_mean(grid[0]) <= target.mean:
        matched = grid[0]
    elif labeled_mean(grid[-1]) > target.mean:
        matched, lower_bounded = None, True
    else:
        lo, hi = 0, len(grid) - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if labeled_mean(grid[mid]) <= target.mean:
                hi = mid
            else:
                lo = mid
        matched = grid[hi]
    ratio = n_unlabeled / (matched if matched is not None else grid[-1])
    trace = tuple(
        (n, cache[n].mean, cache[n].stderr) for n in sorted(cache)
    )
    return DvrResult(
        n_unlabeled, estimator, target.mean, matched, ratio, lower_bounded, trace
    )


def approx_data_value_ratio(
    diag: ModelDiagnostics,
    setting: str,
    n_unlabeled: int,
    d: int | None = None,
    rho: float | None = None,
) -> float:
    """Closed-form data-value-ratio approximation from the excess bounds."""
    if d is None:
        d = diag.edge_count
    c = bound_constants(diag)
    m = diag.m
    if setting == "well-specified":
        return 2.0 * c["c4"]
    if setting == "misspecified":
        return (
            2.0
            * diag.gap_max
            * (
                c["c1"] * d * n_unlabeled / m
                + c["c2"] * np.sqrt(n_unlabeled) / m
                + c["c3"] * d / m**2
            )
            + 2.0 * c["c4"]
        )
    if setting == "corrected":
        if rho is None:
            raise ContractError("the corrected setting needs a median MSE estimate")
        return 2.0 * n_unlabeled * median_correction_constant(diag) * rho
    raise ContractError(f"unknown setting '{setting}'")


# ---------------------------------------------------------------------------
# Combined-estimator sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CombinedSweepRow:
    n_labeled: int
    n_unlabeled: int
    excess_labeled: float
    stderr_labeled: float
    excess_unlabeled: float
    stderr_unlabeled: float
    best_alpha: float
    excess_best: float
    stderr_best: float
    gs_alpha_mean: float
    excess_gs: float
    stderr_gs: float
    trials: int
    failures: int


def combined_sweep(
    model: IsingModel,
    n_unlabeled: int,
    n_labeled_grid,
    estimator: str = "triplet-mean",
    trials: int = 1000,
    seed: int = 0,
    alpha_step: float = 0.01,
    shrink_r: float | None = None,
    engine: TrialEngine | None = None,
) -> list[CombinedSweepRow]:
    """Excess error of linear combinations across a labeled-size grid.

    Per labeled size: the grid-optimal weight is the alpha (unlabeled weight,
    scanned at ``alpha_step``) minimizing the trial-averaged excess; the
    shrinkage rule picks its own per-trial weight from the labeled
    covariance.  Alpha 0 is labeled-only and alpha 1 unlabeled-only, so those
    columns come from the same sweep.
    """
    engine = engine if engine is not None else TrialEngine(model)
    m = engine.m
    alphas = np.arange(0.0, 1.0 + alpha_step / 2, alpha_step)
    if shrink_r is None:
        shrink_r = float(m - 2)
    rows = []
    for n_l in n_labeled_grid:
        per_alpha = np.zeros((0, alphas.size))
        gs_excess, gs_alpha = [], []
        failures = 0
        buf = []
        for t in range(trials):
            rng = trial_rng(seed, f"combined:{estimator}:{n_unlabeled}", n_l, t)
            counts_u = rng.multinomial(n_unlabeled, model.joint).astype(np.float64)
            counts_l = rng.multinomial(n_l, model.joint).astype(np.float64)
            mom_u = SampleMoments.from_state_counts(counts_u, m)
            mom_l = SampleMoments.from_state_counts(counts_l, m)
            try:
                a_u = engine.fit(estimator, mom_u, rng)
            except LabelMomentsError:
                failures += 1
                continue
            a_l = mom_l.acc
            blends = alphas[:, None] * a_u[None, :] + (1 - alphas)[:, None] * a_l[None, :]
            buf.append(engine.excess(blends))
            try:
                sigma = mom_l.labeled_covariance() / n_l
                sigma = sigma + 1e-8 * (np.trace(sigma) / m) * np.eye(m)
                alpha_g = green_strawderman_alpha(a_l - a_u, sigma, shrink_r)
            except (NumericalError, ContractError):
                alpha_g = 1.0
            gs_alpha.append(alpha_g)
            gs_excess.append(
                float(engine.excess(alpha_g * a_u + (1 - alpha_g) * a_l))
            )
        if not buf:
            raise EstimationError(f"every trial failed at n_labeled={n_l}")
        per_alpha = np.vstack(buf)
        k = per_alpha.shape[0]
        means = per_alpha.mean(axis=0)
        stderrs = per_alpha.std(axis=0, ddof=1) / np.sqrt(k) if k > 1 else 0 * means
        best = int(np.argmin(means))
        gs_excess = np.asarray(gs_excess)
        rows.append(
            CombinedSweepRow(
                n_labeled=int(n_l),
                n_unlabeled=int(n_unlabeled),
                excess_labeled=float(means[0]),
                stderr_labeled=float(stderrs[0]),
                excess_unlabeled=float(means[-1]),
                stderr_unlabeled=float(stderrs[-1]),
                best_alpha=float(alphas[best]),
                excess_best=float(means[best]),
                stderr_best=float(stderrs[best]),
                gs_alpha_mean=float(np.mean(gs_alpha)),
                excess_gs=float(gs_excess.mean()),
                stderr_gs=float(gs_excess.std(ddof=1) / np.sqrt(k)) if k > 1 else 0.0,
                trials=k,
                failures=failures,
            )
        )
    return rows


# ---------------------------------------------------------------------------
# Suite runners and persistence
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def run_curves(config: ExperimentConfig, out_dir: str | Path) -> list[ExcessResult]:
    """Excess-error curves for every (estimator, n) cell; writes curves.csv."""
    model = config.model.build()
    engine = TrialEngine(model)
    results = [
        expected_excess_error(model, est, n, config.trials, config.seed, engine)
        for est in config.estimators
        for n in config.n_grid
    ]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out / "curves.csv",
        ["estimator", "n", "mean_excess", "stderr", "trials", "failures"],
        [[r.estimator, r.n, r.mean, r.stderr, r.trials, r.failures] for r in results],
    )
    return results


def run_dvr(
    config: ExperimentConfig, out_dir: str | Path, estimators=None
) -> list[DvrResult]:
    """Data value ratios at every n in the grid; writes dvr.csv."""
    model = config.model.build()
    engine = TrialEngine(model)
    estimators = estimators or [e for e in config.estimators if e != "labeled"]
    results = [
        data_value_ratio(model, n, est, config.trials, config.seed, engine=engine)
        for est in estimators
        for n in config.n_grid
    ]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out / "dvr.csv",
        [
            "estimator", "n_unlabeled", "target_excess",
            "matched_n_labeled", "value_ratio", "lower_bounded",
        ],
        [
            [
                r.estimator, r.n_unlabeled, r.target_excess,
                r.matched_n_labeled if r.matched_n_labeled is not None else -1,
                r.value_ratio, int(r.lower_bounded),
            ]
            for r in results
        ],
    )
    return results


def run_combined(
    config: ExperimentConfig,
    out_dir: str | Path,
    n_unlabeled: int = 1000,
    n_labeled_grid=(25, 50, 100, 200, 400, 800),
    estimator: str = "triplet-mean",
) -> list[CombinedSweepRow]:
    """Combined-estimator sweep at fixed n_unlabeled; writes combined.csv."""
    model = config.model.build()
    rows = combined_sweep(
        model, n_unlabeled, n_labeled_grid, estimator, config.trials, config.seed
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out / "combined.csv",
        [
            "n_labeled", "n_unlabeled",
            "excess_labeled", "stderr_labeled",
            "excess_unlabeled", "stderr_unlabeled",
            "best_alpha", "excess_best", "stderr_best",
            "gs_alpha_mean", "excess_gs", "stderr_gs",
            "trials", "failures",
        ],
        [
            [
                r.n_labeled, r.n_unlabeled,
                r.excess_labeled, r.stderr_labeled,
                r.excess_unlabeled, r.stderr_unlabeled,
                r.best_alpha, r.excess_best, r.stderr_best,
                r.gs_alpha_mean, r.excess_gs, r.stderr_gs,
                r.trials, r.failures,
            ]
            for r in rows
        ],
    )
    return rows
