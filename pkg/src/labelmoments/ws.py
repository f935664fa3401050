"""Keyword weak supervision on text corpora.

Sources are single keywords with a sentiment: a positive-sentiment source
votes +1 when its word appears in a document and -1 otherwise; a
negative-sentiment source votes -1 on presence and +1 on absence.
Tokenization is lowercasing plus splitting on non-alphanumeric characters,
nothing more.

The case study fits three class-conditional label models on growing
training subsets (labeled frequencies, quadratic-triplet with mean
aggregation, and its median-corrected variant), evaluates test
cross-entropy and F1, and sweeps a shrinkage combination of the corrected
and labeled fits across small labeled budgets.

External corpora are ingested to JSONL ({"id", "text", "label"}) plus a
split manifest ({"train": [...], "test": [...]}); nothing is bundled.
"""

from __future__ import annotations

import json
import re
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import SourceMatrix
from .errors import ContractError
from .estimators import (
    ClassConditionalEstimate,
    SampleMoments,
    estimate_quadratic_triplet_from_moments,
    green_strawderman_alpha,
)
from .label_model import LabelModel, cross_entropy, f1_score

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")

POSITIVE_WORDS = ("love", "like", "good", "great", "best", "excellent")
NEGATIVE_WORDS = ("terrible", "worst", "bad", "better", "could", "would")


@dataclass(frozen=True)
class KeywordSource:
    word: str
    sentiment: int  # +1 votes for presence, -1 against

    def __post_init__(self):
        if not self.word:
            raise ContractError("keyword must be nonempty")
        if self.sentiment not in (-1, 1):
            raise ContractError("sentiment must be -1 or +1")
        object.__setattr__(self, "word", self.word.lower())


def default_roster() -> tuple[KeywordSource, ...]:
    return tuple(
        [KeywordSource(w, 1) for w in POSITIVE_WORDS]
        + [KeywordSource(w, -1) for w in NEGATIVE_WORDS]
    )


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    label: int | None = None

    def __post_init__(self):
        if self.label is not None and self.label not in (-1, 1):
            raise ContractError("labels must be -1 or +1")


@dataclass(frozen=True)
class Corpus:
    documents: tuple
    split: dict = field(default_factory=dict)  # doc_id -> "train" | "test"

    def __post_init__(self):
        ids = [d.doc_id for d in self.documents]
        if len(set(ids)) != len(ids):
            raise ContractError("document ids must be unique")

    def subset(self, name: str) -> list[Document]:
        return [d for d in self.documents if self.split.get(d.doc_id) == name]

    @property
    def train(self) -> list[Document]:
        return self.subset("train")

    @property
    def test(self) -> list[Document]:
        return self.subset("test")

    # -- persistence -------------------------------------------------------

    def to_jsonl(self, docs_path: str | Path, split_path: str | Path | None = None):
        with open(docs_path, "w") as fh:
            for d in self.documents:
                rec = {"id": d.doc_id, "text": d.text}
                if d.label is not None:
                    rec["label"] = d.label
                fh.write(json.dumps(rec) + "\n")
        if split_path is not None:
            groups = {"train": [], "test": []}
            for d in self.documents:
                name = self.split.get(d.doc_id)
                if name in groups:
                    groups[name].append(d.doc_id)
            Path(split_path).write_text(json.dumps(groups, indent=2))

    @classmethod
    def from_jsonl(
        cls, docs_path: str | Path, split_path: str | Path | None = None
    ) -> "Corpus":
        docs = []
        with open(docs_path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                docs.append(
                    Document(str(rec["id"]), rec["text"], rec.get("label"))
                )
        split = {}
        if split_path is not None:
            manifest = json.loads(Path(split_path).read_text())
            for name, ids in manifest.items():
                for i in ids:
                    split[str(i)] = name
        return cls(tuple(docs), split)


def tokenize(text: str) -> frozenset:
    return frozenset(t for t in _TOKEN_SPLIT.split(text.lower()) if t)


def apply_sources(
    docs, roster: tuple[KeywordSource, ...] | None = None
) -> SourceMatrix:
    """Vote matrix for the documents; label column included when all are labeled."""
    if isinstance(docs, Corpus):
        docs = list(docs.documents)
    roster = roster if roster is not None else default_roster()
    if not roster:
        raise ContractError("source roster must be nonempty")
    n, m = len(docs), len(roster)
    values = np.empty((n, m), dtype=np.int8)
    for r, doc in enumerate(docs):
        tokens = tokenize(doc.text)
        for c, src in enumerate(roster):
            present = src.word in tokens
            values[r, c] = src.sentiment if present else -src.sentiment
    labels = None
    if docs and all(d.label is not None for d in docs):
        labels = np.array([d.label for d in docs], dtype=np.int8)
    return SourceMatrix(values, labels)


# ---------------------------------------------------------------------------
# Ingestion of common layouts
# ---------------------------------------------------------------------------


def ingest_review_directory(root: str | Path) -> Corpus:
    """Directory layout <root>/{train,test}/{pos,neg}/*.txt, one review per file."""
    root = Path(root)
    docs, split = [], {}
    found = 0
    for part in ("train", "test"):
        for sentiment, label in (("pos", 1), ("neg", -1)):
            folder = root / part / sentiment
            if not folder.is_dir():
                continue
            for path in sorted(folder.glob("*.txt")):
                doc_id = f"{part}/{sentiment}/{path.stem}"
                docs.append(Document(doc_id, path.read_text(errors="replace"), label))
                split[doc_id] = part
                found += 1
    if not found:
        raise ContractError(
            f"no {{train,test}}/{{pos,neg}}/*.txt reviews found under {root}"
        )
    return Corpus(tuple(docs), split)


def ingest_csv(
    path: str | Path, test_fraction: float = 0.2, seed: int = 0
) -> Corpus:
    """CSV with 'text' and 'label' columns; labels in {-1,1} or {0,1}."""
    import csv as _csv

    docs = []
    with open(path, newline="") as fh:
        for row_id, rec in enumerate(_csv.DictReader(fh)):
            if "text" not in rec:
                raise ContractError("csv ingestion needs a 'text' column")
            label = rec.get("label")
            if label is not None:
                label = int(label)
                label = -1 if label in (0, -1) else 1
            docs.append(Document(str(rec.get("id", row_id)), rec["text"], label))
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(docs))
    n_test = int(round(test_fraction * len(docs)))
    split = {}
    for rank, idx in enumerate(order):
        split[docs[idx].doc_id] = "test" if rank < n_test else "train"
    return Corpus(tuple(docs), split)


# ---------------------------------------------------------------------------
# Synthetic keyword corpus (the no-external-data oracle)
# ---------------------------------------------------------------------------


def synthetic_keyword_corpus(
    n: int,
    present_pos: np.ndarray,
    present_neg: np.ndarray,
    roster: tuple[KeywordSource, ...] | None = None,
    class_balance: float = 0.5,
    seed: int = 0,
) -> Corpus:
    """Documents whose word presences are class-conditionally independent.

    ``present_pos[i]`` / ``present_neg[i]`` are the probabilities that word i
    appears given label +1 / -1, so the induced source conditionals are known
    exactly and the end-to-end pipeline can be oracle-checked.
    """
    roster = roster if roster is not None else default_roster()
    present_pos = np.asarray(present_pos, dtype=np.float64)
    present_neg = np.asarray(present_neg, dtype=np.float64)
    if present_pos.size != len(roster) or present_neg.size != len(roster):
        raise ContractError("presence probabilities must match the roster size")
    rng = np.random.default_rng(seed)
    labels = np.where(rng.random(n) < class_balance, 1, -1)
    prob = np.where(labels[:, None] > 0, present_pos[None, :], present_neg[None, :])
    present = rng.random((n, len(roster))) < prob
    words = [src.word for src in roster]
    docs = []
    for r in range(n):
        text = " ".join(w for w, p in zip(words, present[r]) if p)
        docs.append(Document(f"doc{r}", text, int(labels[r])))
    split = {d.doc_id: "train" for d in docs}
    return Corpus(tuple(docs), split)


def implied_source_conditionals(
    present_pos: np.ndarray, present_neg: np.ndarray, roster=None
) -> tuple[np.ndarray, np.ndarray]:
    """Pr(vote = +1 | Y = +-1) induced by per-class word-presence probabilities."""
    roster = roster if roster is not None else default_roster()
    sent = np.array([src.sentiment for src in roster])
    cond_pos = np.where(sent > 0, present_pos, 1.0 - present_pos)
    cond_neg = np.where(sent > 0, present_neg, 1.0 - present_neg)
    return cond_pos, cond_neg


# ---------------------------------------------------------------------------
# Case study
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CaseStudyConfig:
    n_grid: tuple = (2500, 5000, 10000, 20000, 40000)
    n_unlabeled: int = 40000
    n_labeled_grid: tuple = (40, 80, 120, 200, 400)
    trials: int = 5
    seed: int = 0
    class_balance: float = 0.5
    threshold: float = 0.5

    def to_dict(self) -> dict:
        return {
            "n_grid": list(self.n_grid),
            "n_unlabeled": self.n_unlabeled,
            "n_labeled_grid": list(self.n_labeled_grid),
            "trials": self.trials,
            "seed": self.seed,
            "class_balance": self.class_balance,
            "threshold": self.threshold,
        }


def estimate_labeled_class_conditional(
    data: SourceMatrix, class_balance: float
) -> ClassConditionalEstimate:
    """Empirical Pr(vote = 1 | label) per source from a labeled sample."""
    labels = data.require_labels()
    pos_rows = labels > 0
    neg_rows = ~pos_rows
    votes = data.values > 0
    n_pos, n_neg = int(pos_rows.sum()), int(neg_rows.sum())
    cond_pos = (
        votes[pos_rows].mean(axis=0) if n_pos else np.full(data.m, 0.5)
    )
    cond_neg = (
        votes[neg_rows].mean(axis=0) if n_neg else np.full(data.m, 0.5)
    )
    mu = np.empty((data.m, 2, 2))
    mu[:, 0, 0], mu[:, 1, 0] = cond_pos, 1.0 - cond_pos
    mu[:, 0, 1], mu[:, 1, 1] = cond_neg, 1.0 - cond_neg
    return ClassConditionalEstimate(
        mu, class_balance, {"method": "labeled-class-conditional"}
    )


def _combine_class_conditional(
    unlabeled: ClassConditionalEstimate,
    labeled: ClassConditionalEstimate,
    labeled_moments: SampleMoments,
    r: float,
) -> tuple[ClassConditionalEstimate, float]:
    """Shrink the labeled conditionals toward the unlabeled ones.

    The weight comes from the accuracy-vector shrinkage rule (the labeled
    accuracy estimator's covariance is observable); the same weight then
    blends both conditional columns, which preserves column-stochasticity.
    """
    m = labeled_moments.m
    sigma = labeled_moments.labeled_covariance() / labeled_moments.n
    sigma = sigma + 1e-8 * max(np.trace(sigma) / m, 1e-12) * np.eye(m)
    diff = labeled.implied_accuracies() - unlabeled.implied_accuracies()
    alpha = green_strawderman_alpha(diff, sigma, r)
    mu = alpha * unlabeled.mu + (1.0 - alpha) * labeled.mu
    return (
        ClassConditionalEstimate(
            mu, labeled.class_balance, {"method": "combined", "alpha": alpha}
        ),
        alpha,
    )


def _case_study_rng(seed: int, label: str, n: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([seed % (1 << 63), zlib.crc32(label.encode()), n, trial])
    )


def run_case_study(corpus: Corpus, config: CaseStudyConfig | None = None) -> list[dict]:
    """Fit labeled / mean / median-corrected / combined models; score on the test split.

    Returns metric rows (dicts) ready for CSV serialization.  Training
    subsets are drawn without replacement; the test split must be labeled.
    """
    config = config if config is not None else CaseStudyConfig()
    train_docs, test_docs = corpus.train, corpus.test
    if not train_docs or not test_docs:
        raise ContractError(
            "corpus is missing a train or test split: ingest one first "
            "(labelmoments ws ingest --help) and pass its split manifest"
        )
    if not all(d.label is not None for d in test_docs):
        raise ContractError("the test split must be fully labeled")
    train = apply_sources(train_docs)
    test = apply_sources(test_docs)
    if train.labels is None:
        raise ContractError("the training split must be labeled to simulate budgets")
    p = config.class_balance
    rows: list[dict] = []

    def score(est: ClassConditionalEstimate) -> tuple[float, float]:
        lm = LabelModel.from_class_conditional(est, mode="normalized")
        return cross_entropy(lm, test), f1_score(lm, test, config.threshold)

    def subsample(rng, n: int) -> SourceMatrix:
        idx = rng.choice(train.n, size=min(n, train.n), replace=False)
        return SourceMatrix(train.values[idx], train.labels[idx])

    fitters = {
        "labeled": lambda d, rng: estimate_labeled_class_conditional(d, p),
        "unlabeled-mean": lambda d, rng: estimate_quadratic_triplet_from_moments(
            SampleMoments.from_source_matrix(d.without_labels()), p, "mean"
        ),
        "corrected-median": lambda d, rng: estimate_quadratic_triplet_from_moments(
            SampleMoments.from_source_matrix(d.without_labels()), p, "median"
        ),
    }
    for name, fitter in fitters.items():
        for n in config.n_grid:
            losses, f1s = [], []
            for t in range(config.trials):
                rng = _case_study_rng(config.seed, f"case:{name}", n, t)
                loss, f1 = score(fitter(subsample(rng, n), rng))
                losses.append(loss)
                f1s.append(f1)
            rows.append(
                {
                    "model": name,
                    "n": int(min(n, train.n)),
                    "n_labeled": "",
                    "loss": float(np.mean(losses)),
                    "loss_sd": float(np.std(losses, ddof=1)) if len(losses) > 1 else 0.0,
                    "f1": float(np.mean(f1s)),
                    "f1_sd": float(np.std(f1s, ddof=1)) if len(f1s) > 1 else 0.0,
                    "alpha": "",
                }
            )

    m = train.m
    r = float(m - 2)
    for n_l in config.n_labeled_grid:
        stats = {"combined": ([], []), "labeled-small": ([], [])}
        alphas = []
        for t in range(config.trials):
            rng = _case_study_rng(config.seed, "case:combined", n_l, t)
            unl = subsample(rng, config.n_unlabeled)
            corrected = estimate_quadratic_triplet_from_moments(
                SampleMoments.from_source_matrix(unl.without_labels()), p, "median"
            )
            lab_data = subsample(rng, n_l)
            lab = estimate_labeled_class_conditional(lab_data, p)
            combined, alpha = _combine_class_conditional(
                corrected, lab, SampleMoments.from_source_matrix(lab_data), r
            )
            alphas.append(alpha)
            for key, est in (("combined", combined), ("labeled-small", lab)):
                loss, f1 = score(est)
                stats[key][0].append(loss)
                stats[key][1].append(f1)
        for key in ("labeled-small", "combined"):
            losses, f1s = stats[key]
            rows.append(
                {
                    "model": key,
                    "n": int(config.n_unlabeled) if key == "combined" else "",
                    "n_labeled": int(n_l),
                    "loss": float(np.mean(losses)),
                    "loss_sd": float(np.std(losses, ddof=1)) if len(losses) > 1 else 0.0,
                    "f1": float(np.mean(f1s)),
                    "f1_sd": float(np.std(f1s, ddof=1)) if len(f1s) > 1 else 0.0,
                    "alpha": float(np.mean(alphas)) if key == "combined" else "",
                }
            )
    return rows


def write_metrics_csv(rows: list[dict], path: str | Path) -> None:
    header = ["model", "n", "n_labeled", "loss", "loss_sd", "f1", "f1_sd", "alpha"]
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(row[h]) if isinstance(row[h], float) else str(row[h]) for h in header))
    Path(path).write_text("\n".join(lines) + "\n")
