"""Command-line entry point wiring calibration, sampling, fitting, inference,
decomposition, bound evaluation, the synthetic experiment suites, and the
keyword weak-supervision pipeline.

Every run writes a manifest (config, seed, version, input/output hashes)
next to its outputs; all randomness flows from --seed.  Exit codes: 0 on
success, 1 on domain errors (the error class name is printed), 2 on usage
errors.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__, analysis, experiments, ws
from .data import SourceMatrix, load_source_matrix
from .errors import LabelMomentsError
from .estimators import (
    AccuracyEstimate,
    ClassConditionalEstimate,
    combine_green_strawderman,
    estimate_labeled,
    estimate_quadratic_triplet,
    estimate_triplet,
)
from .ising import IsingModel, calibrate, diagnostics, sample
from .label_model import (
    LabelModel,
    cross_entropy,
    empirical_config_dist,
    f1_score,
    posterior,
)
from .manifest import RunManifest

DEFAULT_SEED = 0


def _fail_on_domain_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except LabelMomentsError as exc:
            click.echo(f"error ({type(exc).__name__}): {exc}", err=True)
            sys.exit(1)

    return wrapper


def _manifest(subcommand: str, config: dict, seed: int) -> RunManifest:
    return RunManifest(subcommand, config, seed, __version__)


def _write_report(doc: dict, out: Path, fmt: str) -> None:
    if fmt == "json":
        out.write_text(json.dumps(doc, indent=2, sort_keys=True, default=float))
    else:
        lines = ["key,value"]
        flat = _flatten(doc)
        lines += [f"{k},{v}" for k, v in flat]
        out.write_text("\n".join(lines) + "\n")


def _flatten(doc, prefix=""):
    items = []
    if isinstance(doc, dict):
        for k in sorted(doc):
            items.extend(_flatten(doc[k], f"{prefix}{k}."))
    else:
        items.append((prefix[:-1], doc))
    return items


def _parse_floats(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(",", " ").split()]


def _parse_ints(text: str) -> list[int]:
    return [int(tok) for tok in text.replace(",", " ").split()]


def _parse_edges(text: str) -> list[tuple[int, int]]:
    edges = []
    for tok in text.replace(",", " ").split():
        i, j = tok.split("-")
        edges.append((int(i), int(j)))
    return edges


def _load_estimate(path: str):
    doc = json.loads(Path(path).read_text())
    if "mu" in doc:
        return ClassConditionalEstimate.from_dict(doc)
    return AccuracyEstimate.from_dict(doc)


def _build_label_model(est, balance, mode, data, laplace):
    dist = None
    if mode == "empirical":
        dist = empirical_config_dist(data, laplace=laplace)
    if isinstance(est, ClassConditionalEstimate):
        return LabelModel.from_class_conditional(est, mode=mode, config_dist=dist)
    return LabelModel.from_accuracies(est, balance, mode=mode, config_dist=dist)


@click.group(name="labelmoments")
@click.version_option(__version__)
def main():
    """Method-of-moments label models for binary weak supervision."""


# ---------------------------------------------------------------------------
# calibrate / sample
# ---------------------------------------------------------------------------


@main.command("calibrate")
@click.option("--accuracies", required=True, help="Comma-separated target accuracies in (0.5, 1).")
@click.option("--edges", default="", help="Dependent pairs as i-j tokens, e.g. '0-1,2-3'.")
@click.option("--edge-gap", default=0.1, show_default=True, help="Misspecification gap target per edge.")
@click.option("--balance", default=0.5, show_default=True, help="Class balance Pr(Y=1).")
@click.option("--out", "-o", required=True, type=click.Path(), help="Output model JSON path.")
@_fail_on_domain_errors
def calibrate_cmd(accuracies, edges, edge_gap, balance, out):
    """Calibrate a ground-truth model to accuracy and dependence targets."""
    config = {
        "accuracies": accuracies, "edges": edges,
        "edge_gap": edge_gap, "balance": balance, "out": out,
    }
    man = _manifest("calibrate", config, DEFAULT_SEED)
    model = calibrate(_parse_floats(accuracies), _parse_edges(edges), edge_gap, balance)
    model.to_json(out)
    man.add_output(out)
    man.finish(Path(out).with_suffix(".manifest.json"))
    click.echo(f"wrote {out}")


@main.command("sample")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("-n", "--rows", "n", required=True, type=int, help="Number of draws.")
@click.option("--seed", default=DEFAULT_SEED, show_default=True, type=int)
@click.option("--binary", is_flag=True, help="Write the compact binary format instead of CSV.")
@click.option("--out", "-o", required=True, type=click.Path())
@_fail_on_domain_errors
def sample_cmd(model_path, n, seed, binary, out):
    """Draw labeled rows from a model's exact joint distribution."""
    config = {"model": model_path, "n": n, "binary": binary, "out": out}
    man = _manifest("sample", config, seed)
    man.add_input(model_path)
    data = sample(IsingModel.from_json(model_path), n, seed)
    if binary:
        data.to_binary(out)
    else:
        data.to_csv(out)
    man.add_output(out)
    man.finish(Path(out).with_suffix(".manifest.json"))
    click.echo(f"wrote {out} ({data.n} rows x {data.m} sources)")


# ---------------------------------------------------------------------------
# fit / infer
# ---------------------------------------------------------------------------


@main.command("fit")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--method", type=click.Choice(["labeled", "triplet", "quadratic"]), default="triplet", show_default=True)
@click.option("--agg", type=click.Choice(["single", "mean", "median"]), default="mean", show_default=True)
@click.option("--balance", default=0.5, show_default=True)
@click.option("--known-edges", default="", help="Recovered dependencies to avoid, as i-j tokens.")
@click.option("--combine-with", type=click.Path(exists=True), default=None,
              help="Labeled CSV; applies the shrinkage combination to the unlabeled fit.")
@click.option("--seed", default=DEFAULT_SEED, show_default=True, type=int)
@click.option("--out", "-o", required=True, type=click.Path())
@_fail_on_domain_errors
def fit_cmd(data_path, method, agg, balance, known_edges, combine_with, seed, out):
    """Estimate source accuracies (or class conditionals) from data."""
    config = {
        "data": data_path, "method": method, "agg": agg, "balance": balance,
        "known_edges": known_edges, "combine_with": combine_with, "out": out,
    }
    man = _manifest("fit", config, seed)
    man.add_input(data_path)
    data = load_source_matrix(data_path)
    if method == "labeled":
        est = estimate_labeled(data)
    elif method == "triplet":
        est = estimate_triplet(
            data.without_labels(), agg, seed, _parse_edges(known_edges)
        )
    else:
        est = estimate_quadratic_triplet(data.without_labels(), balance, agg, seed)
    if combine_with is not None:
        if not isinstance(est, AccuracyEstimate):
            raise LabelMomentsError("combination applies to accuracy estimates only")
        man.add_input(combine_with)
        est = combine_green_strawderman(est, load_source_matrix(combine_with))
    est.to_json(out)
    man.add_output(out)
    man.finish(Path(out).with_suffix(".manifest.json"))
    click.echo(f"wrote {out}")


@main.command("infer")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--estimate", "estimate_path", required=True, type=click.Path(exists=True))
@click.option("--balance", default=0.5, show_default=True)
@click.option("--mode", type=click.Choice(["normalized", "empirical"]), default="normalized", show_default=True)
@click.option("--laplace", default=None, type=float, help="Pseudocount for the configuration distribution (empirical mode).")
@click.option("--out", "-o", required=True, type=click.Path())
@_fail_on_domain_errors
def infer_cmd(data_path, estimate_path, balance, mode, laplace, out):
    """Produce soft labels (row_id, p_y1, soft_label) for a source matrix."""
    config = {
        "data": data_path, "estimate": estimate_path, "balance": balance,
        "mode": mode, "laplace": laplace, "out": out,
    }
    man = _manifest("infer", config, DEFAULT_SEED)
    man.add_input(data_path)
    man.add_input(estimate_path)
    data = load_source_matrix(data_path)
    model = _build_label_model(
        _load_estimate(estimate_path), balance, mode, data.without_labels(), laplace
    )
    probs = posterior(model, data)
    lines = ["row_id,p_y1,soft_label"]
    lines += [f"{i},{p!r},{2 * p - 1!r}" for i, p in enumerate(map(float, probs))]
    Path(out).write_text("\n".join(lines) + "\n")
    man.add_output(out)
    man.finish(Path(out).with_suffix(".manifest.json"))
    click.echo(f"wrote {out}")


# ---------------------------------------------------------------------------
# decompose / bounds
# ---------------------------------------------------------------------------


DEMO_ACCURACIES = "0.7,0.65,0.6,0.75"


@main.command("decompose")
@click.option("--model", "model_path", type=click.Path(exists=True), default=None)
@click.option("--data", "data_path", type=click.Path(exists=True), default=None)
@click.option("--method", type=click.Choice(["labeled", "triplet", "quadratic"]), default="triplet", show_default=True)
@click.option("--agg", type=click.Choice(["single", "mean", "median"]), default="mean", show_default=True)
@click.option("--laplace", default=1.0, show_default=True, type=float)
@click.option("--balance", default=0.5, show_default=True)
@click.option("--demo", is_flag=True, help="Run on a built-in small model and sample.")
@click.option("--seed", default=DEFAULT_SEED, show_default=True, type=int)
@click.option("--out", "-o", required=True, type=click.Path())
@_fail_on_domain_errors
def decompose_cmd(model_path, data_path, method, agg, laplace, balance, demo, seed, out):
    """Exact four-term decomposition of a fitted model's expected loss."""
    config = {
        "model": model_path, "data": data_path, "method": method, "agg": agg,
        "laplace": laplace, "balance": balance, "demo": demo, "out": out,
    }
    man = _manifest("decompose", config, seed)
    if demo:
        model = calibrate(_parse_floats(DEMO_ACCURACIES), [(0, 1)], 0.08, balance)
        data = sample(model, 800, seed)
    else:
        if model_path is None or data_path is None:
            raise click.UsageError("either --demo or both --model and --data are required")
        man.add_input(model_path)
        man.add_input(data_path)
        model = IsingModel.from_json(model_path)
        data = load_source_matrix(data_path)
    if method == "labeled":
        est = estimate_labeled(data)
    elif method == "triplet":
        est = estimate_triplet(data.without_labels(), agg, seed)
    else:
        est = estimate_quadratic_triplet(data.without_labels(), balance, agg, seed)
    dist = empirical_config_dist(data.without_labels(), laplace=laplace)
    fitted = _build_fitted(est, balance, dist)
    report = analysis.decompose(model, fitted)
    report.to_json(out)
    man.add_output(out)
    man.finish(Path(out).with_suffix(".manifest.json"))
    click.echo(f"wrote {out} (residual {report.residual:.3e})")


def _build_fitted(est, balance, dist):
    if isinstance(est, ClassConditionalEstimate):
        return LabelModel.from_class_conditional(est, mode="empirical", config_dist=dist)
    return LabelModel.from_accuracies(est, balance, mode="empirical", config_dist=dist)


@main.command("bounds")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--n-labeled", default=None, type=int)
@click.option("--n-unlabeled", default=None, type=int)
@click.option("--rho-trials", default=0, show_default=True, type=int,
              help="When positive, also estimate the median-corrected MSE by Monte Carlo.")
@click.option("--seed", default=DEFAULT_SEED, show_default=True, type=int)
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json", show_default=True)
@click.option("--out", "-o", required=True, type=click.Path())
@_fail_on_domain_errors
def bounds_cmd(model_path, n_labeled, n_unlabeled, rho_trials, seed, fmt, out):
    """Evaluate the excess-error bounds for a ground-truth model."""
    config = {
        "model": model_path, "n_labeled": n_labeled, "n_unlabeled": n_unlabeled,
        "rho_trials": rho_trials, "format": fmt, "out": out,
    }
    man = _manifest("bounds", config, seed)
    man.add_input(model_path)
    model = IsingModel.from_json(model_path)
    diag = diagnostics(model)
    rho = None
    if rho_trials > 0:
        if n_unlabeled is None:
            raise click.UsageError("--rho-trials requires --n-unlabeled")
        rho = analysis.median_mse(model, n_unlabeled, rho_trials, seed, diag).rho
    doc = analysis.bound_report(diag, n_labeled, n_unlabeled, rho=rho)
    _write_report(doc, Path(out), fmt)
    man.add_output(out)
    man.finish(Path(out).with_suffix(".manifest.json"))
    click.echo(f"wrote {out}")


# ---------------------------------------------------------------------------
# experiment suites
# ---------------------------------------------------------------------------


def _experiment_config(config_path, d, trials, seed, n_grid) -> experiments.ExperimentConfig:
    if config_path is not None:
        cfg = experiments.ExperimentConfig.from_json(config_path)
    else:
        cfg = experiments.ExperimentConfig()
    doc = cfg.to_dict()
    if d is not None:
        doc["model"]["d"] = d
    if trials is not None:
        doc["trials"] = trials
    if seed is not None:
        doc["seed"] = seed
    if n_grid is not None:
        doc["n_grid"] = _parse_ints(n_grid)
    return experiments.ExperimentConfig.from_dict(doc)


def _suite_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                      help="Experiment config JSON; flags override its fields.")(fn)
    fn = click.option("--d", default=None, type=int, help="Number of dependency edges.")(fn)
    fn = click.option("--trials", default=None, type=int)(fn)
    fn = click.option("--seed", default=None, type=int)(fn)
    fn = click.option("--n-grid", default=None, help="Comma-separated sample sizes.")(fn)
    fn = click.option("--out", "-o", "out_dir", required=True, type=click.Path())(fn)
    return fn


@main.command("curves")
@_suite_options
@_fail_on_domain_errors
def curves_cmd(config_path, d, trials, seed, n_grid, out_dir):
    """Mean excess generalization error per (estimator, n); writes curves.csv."""
    cfg = _experiment_config(config_path, d, trials, seed, n_grid)
    man = _manifest("curves", cfg.to_dict(), cfg.seed)
    results = experiments.run_curves(cfg, out_dir)
    man.add_output(Path(out_dir) / "curves.csv")
    man.finish(Path(out_dir) / "manifest.json")
    for r in results:
        click.echo(f"{r.estimator} n={r.n}: {r.mean:.6f} +- {r.stderr:.6f}")


@main.command("dvr")
@_suite_options
@click.option("--estimators", default=None, help="Comma-separated unlabeled estimators.")
@_fail_on_domain_errors
def dvr_cmd(config_path, d, trials, seed, n_grid, out_dir, estimators):
    """Data value ratio V(n) per unlabeled estimator; writes dvr.csv."""
    cfg = _experiment_config(config_path, d, trials, seed, n_grid)
    man = _manifest("dvr", cfg.to_dict(), cfg.seed)
    names = estimators.split(",") if estimators else None
    results = experiments.run_dvr(cfg, out_dir, names)
    man.add_output(Path(out_dir) / "dvr.csv")
    man.finish(Path(out_dir) / "manifest.json")
    for r in results:
        click.echo(
            f"{r.estimator} n={r.n_unlabeled}: V={r.value_ratio:.3f} "
            f"(matched n_labeled={r.matched_n_labeled})"
        )


@main.command("combine")
@_suite_options
@click.option("--n-unlabeled", default=1000, show_default=True, type=int)
@click.option("--n-labeled-grid", default="25,50,100,200,400,800", show_default=True)
@click.option("--estimator", default="triplet-mean", show_default=True)
@_fail_on_domain_errors
def combine_cmd(config_path, d, trials, seed, n_grid, out_dir, n_unlabeled, n_labeled_grid, estimator):
    """Combined labeled+unlabeled sweep at fixed n_unlabeled; writes combined.csv."""
    cfg = _experiment_config(config_path, d, trials, seed, n_grid)
    man = _manifest("combine", cfg.to_dict(), cfg.seed)
    rows = experiments.run_combined(
        cfg, out_dir, n_unlabeled, _parse_ints(n_labeled_grid), estimator
    )
    man.add_output(Path(out_dir) / "combined.csv")
    man.finish(Path(out_dir) / "manifest.json")
    for r in rows:
        click.echo(
            f"n_labeled={r.n_labeled}: labeled={r.excess_labeled:.5f} "
            f"unlabeled={r.excess_unlabeled:.5f} best={r.excess_best:.5f} "
            f"(alpha={r.best_alpha:.2f})"
        )


# ---------------------------------------------------------------------------
# weak-supervision pipeline
# ---------------------------------------------------------------------------


@main.group("ws")
def ws_group():
    """Keyword weak-supervision case study."""


@ws_group.command("ingest")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True),
              help="Review directory ({train,test}/{pos,neg}/*.txt), a CSV with text/label columns, or a JSONL file.")
@click.option("--format", "fmt", type=click.Choice(["review-dir", "csv", "jsonl"]), default="review-dir", show_default=True)
@click.option("--test-fraction", default=0.2, show_default=True, help="Test share for formats without a split.")
@click.option("--seed", default=DEFAULT_SEED, show_default=True, type=int)
@click.option("--docs-out", required=True, type=click.Path())
@click.option("--split-out", required=True, type=click.Path())
@_fail_on_domain_errors
def ws_ingest_cmd(input_path, fmt, test_fraction, seed, docs_out, split_out):
    """Convert a corpus layout into JSONL documents plus a split manifest."""
    config = {
        "input": input_path, "format": fmt, "test_fraction": test_fraction,
        "docs_out": docs_out, "split_out": split_out,
    }
    man = _manifest("ws-ingest", config, seed)
    if fmt == "review-dir":
        corpus = ws.ingest_review_directory(input_path)
    elif fmt == "csv":
        corpus = ws.ingest_csv(input_path, test_fraction, seed)
    else:
        corpus = ws.Corpus.from_jsonl(input_path)
        if not corpus.split:
            rng = np.random.default_rng(seed)
            order = rng.permutation(len(corpus.documents))
            n_test = int(round(test_fraction * len(corpus.documents)))
            split = {
                corpus.documents[idx].doc_id: ("test" if rank < n_test else "train")
                for rank, idx in enumerate(order)
            }
            corpus = ws.Corpus(corpus.documents, split)
    corpus.to_jsonl(docs_out, split_out)
    man.add_output(docs_out)
    man.add_output(split_out)
    man.finish(Path(docs_out).with_suffix(".manifest.json"))
    click.echo(f"wrote {docs_out} ({len(corpus.documents)} documents) and {split_out}")


@ws_group.command("apply")
@click.option("--corpus", "docs_path", required=True, type=click.Path(exists=True))
@click.option("--split", "split_path", default=None, type=click.Path(exists=True))
@click.option("--subset", type=click.Choice(["all", "train", "test"]), default="all", show_default=True)
@click.option("--out", "-o", required=True, type=click.Path())
@_fail_on_domain_errors
def ws_apply_cmd(docs_path, split_path, subset, out):
    """Apply the keyword sources to a corpus; writes a source-matrix CSV."""
    config = {"corpus": docs_path, "split": split_path, "subset": subset, "out": out}
    man = _manifest("ws-apply", config, DEFAULT_SEED)
    man.add_input(docs_path)
    corpus = ws.Corpus.from_jsonl(docs_path, split_path)
    docs = list(corpus.documents) if subset == "all" else corpus.subset(subset)
    matrix = ws.apply_sources(docs)
    matrix.to_csv(out)
    man.add_output(out)
    man.finish(Path(out).with_suffix(".manifest.json"))
    click.echo(f"wrote {out} ({matrix.n} rows x {matrix.m} sources)")


@ws_group.command("run")
@click.option("--corpus", "docs_path", required=True, type=click.Path(exists=True))
@click.option("--split", "split_path", required=True, type=click.Path(exists=True))
@click.option("--n-grid", default="2500,5000,10000,20000,40000", show_default=True)
@click.option("--n-unlabeled", default=40000, show_default=True, type=int)
@click.option("--n-labeled-grid", default="40,80,120,200,400", show_default=True)
@click.option("--trials", default=5, show_default=True, type=int)
@click.option("--balance", default=0.5, show_default=True)
@click.option("--seed", default=DEFAULT_SEED, show_default=True, type=int)
@click.option("--out", "-o", "out_dir", required=True, type=click.Path())
@_fail_on_domain_errors
def ws_run_cmd(docs_path, split_path, n_grid, n_unlabeled, n_labeled_grid, trials, balance, seed, out_dir):
    """Run the full case study; writes metrics.csv in the output directory."""
    cfg = ws.CaseStudyConfig(
        n_grid=tuple(_parse_ints(n_grid)),
        n_unlabeled=n_unlabeled,
        n_labeled_grid=tuple(_parse_ints(n_labeled_grid)),
        trials=trials,
        seed=seed,
        class_balance=balance,
    )
    man = _manifest("ws-run", {"corpus": docs_path, "split": split_path, **cfg.to_dict()}, seed)
    man.add_input(docs_path)
    man.add_input(split_path)
    corpus = ws.Corpus.from_jsonl(docs_path, split_path)
    rows = ws.run_case_study(corpus, cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ws.write_metrics_csv(rows, out / "metrics.csv")
    man.add_output(out / "metrics.csv")
    man.finish(out / "manifest.json")
    for row in rows:
        click.echo(
            f"{row['model']} n={row['n']} n_labeled={row['n_labeled']}: "
            f"loss={row['loss']:.4f} f1={row['f1']:.4f}"
        )


if __name__ == "__main__":
    main()
