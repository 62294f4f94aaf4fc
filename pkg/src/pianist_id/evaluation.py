"""Leave-one-group-out cross-validation with minimum-KL classification.

Each performer's aligned positions are split into contiguous chronological
groups. For every (performer, group) trial the group's deviations form the
test set; every candidate trains on their own remaining groups, so no aligned
position is shared between a test set and any training pool. The candidate
whose fused divergence from the test distribution is smallest wins.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from itertools import combinations
from typing import Iterable, Mapping

import numpy as np

from . import densities, divergence
from .alignment import AlignedNoteTable
from .features import KINDS, DeviationSeries, NormPerformance, extract_deviations

log = logging.getLogger(__name__)

MODEL_FAMILIES = ("histogram", "kde", "gmm")

DEFAULT_N_GROUPS = 8


class EmptyTestSeriesError(ValueError):
    """A selected feature has no values in the test group."""


@dataclass(frozen=True)
class FoldSpec:
    """Contiguous position ranges (half-open) partitioning [0, n_positions)."""

    n_positions: int
    groups: tuple[tuple[int, int], ...]

    def __post_init__(self):
        expected = 0
        for start, end in self.groups:
            if start != expected or end <= start:
                raise ValueError("groups must be contiguous, non-empty and ordered")
            expected = end
        if expected != self.n_positions:
            raise ValueError("groups must cover all positions")

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def group_of(self, positions: np.ndarray) -> np.ndarray:
        starts = np.asarray([g[0] for g in self.groups])
        return np.searchsorted(starts, positions, side="right") - 1


def logo_split(n_positions: int, n_groups: int = DEFAULT_N_GROUPS) -> FoldSpec:
    """Contiguous chronological blocks: floor(N/g) positions per group, with
    the last group absorbing the remainder."""
    if n_positions < n_groups:
        raise ValueError(f"cannot split {n_positions} positions into {n_groups} groups")
    if n_groups < 2:
        raise ValueError("need at least 2 groups")
    base = n_positions // n_groups
    bounds = [i * base for i in range(n_groups)] + [n_positions]
    groups = tuple((bounds[i], bounds[i + 1]) for i in range(n_groups))
    return FoldSpec(n_positions=n_positions, groups=groups)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines one classification experiment."""

    model_family: str = "histogram"
    feature_set: tuple[str, ...] = KINDS
    weights: tuple[float, ...] | None = None
    n_groups: int = DEFAULT_N_GROUPS
    n_bins: int = densities.DEFAULT_N_BINS
    bandwidths: tuple[tuple[str, float], ...] = tuple(
        sorted(densities.DEFAULT_BANDWIDTHS.items())
    )
    gmm_k: int = densities.DEFAULT_GMM_K
    gmm_tol: float = densities.GMM_TOL
    gmm_max_iter: int = densities.GMM_MAX_ITER
    seed: int = 0

    def __post_init__(self):
        if self.model_family not in MODEL_FAMILIES:
            raise ValueError(f"unknown model family {self.model_family!r}")
        if not self.feature_set:
            raise ValueError("feature_set must be non-empty")
        if len(set(self.feature_set)) != len(self.feature_set):
            raise ValueError("feature_set must not repeat kinds")
        for kind in self.feature_set:
            if kind not in KINDS:
                raise ValueError(f"unknown feature kind {kind!r}")
        if self.weights is not None and len(self.weights) != len(self.feature_set):
            raise ValueError("weights must match feature_set length")
        object.__setattr__(self, "feature_set", tuple(self.feature_set))
        if self.weights is not None:
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    @property
    def effective_weights(self) -> tuple[float, ...]:
        return self.weights if self.weights is not None else (1.0,) * len(self.feature_set)

    def bandwidth_for(self, kind: str) -> float:
        return dict(self.bandwidths)[kind]

    def to_json_dict(self) -> dict:
        return {
            "model_family": self.model_family,
            "feature_set": list(self.feature_set),
            "weights": list(self.effective_weights),
            "n_groups": self.n_groups,
            "n_bins": self.n_bins,
            "bandwidths": {k: v for k, v in self.bandwidths},
            "gmm_k": self.gmm_k,
            "gmm_tol": self.gmm_tol,
            "gmm_max_iter": self.gmm_max_iter,
            "seed": self.seed,
        }


def _model_seed(seed: int, kind: str) -> int:
    state = np.random.SeedSequence([seed, KINDS.index(kind)]).generate_state(1)
    return int(state[0])


def fit_model(values, kind: str, config: ExperimentConfig):
    """Fit the configured family's model to a value series of one feature."""
    if config.model_family == "histogram":
        return densities.fit_histogram(values, config.n_bins)
    if config.model_family == "kde":
        return densities.fit_kde(values, config.bandwidth_for(kind))
    return densities.fit_gmm(
        values,
        config.gmm_k,
        seed=_model_seed(config.seed, kind),
        tol=config.gmm_tol,
        max_iter=config.gmm_max_iter,
    )


def classify(
    test_series: Mapping[str, object],
    train_models: Mapping[str, Mapping[str, object]],
    config: ExperimentConfig,
) -> str:
    """Minimum fused-KL candidate for the test deviations.

    Test models are fitted with the same family and hyperparameters as the
    training models; ties break to the lexicographically smallest id.
    """
    test_models = {}
    for kind in config.feature_set:
        values = np.asarray(getattr(test_series[kind], "values", test_series[kind]))
        if len(values) == 0:
            raise EmptyTestSeriesError(f"no test values for feature {kind}")
        test_models[kind] = fit_model(values, kind, config)
    fused, _ = _score_candidates(test_models, train_models, config)
    return min(fused, key=lambda pid: (fused[pid], pid))


def _score_candidates(test_models, train_models, config):
    weights = config.effective_weights
    fused: dict[str, float] = {}
    per_feature: dict[str, dict[str, float]] = {}
    for pid in sorted(train_models):
        kls = [
            divergence.kl(test_models[kind], train_models[pid][kind]).value
            for kind in config.feature_set
        ]
        per_feature[pid] = dict(zip(config.feature_set, kls))
        fused[pid] = divergence.fuse(kls, weights)
    return fused, per_feature


@dataclass(frozen=True)
class Metrics:
    per_class_precision: tuple[float, ...]
    per_class_recall: tuple[float, ...]
    per_class_f: tuple[float, ...]
    macro_precision: float
    macro_recall: float
    macro_f: float


def f_score(precision: float, recall: float) -> float:
    """Harmonic mean; 0 when both inputs are 0."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def metrics(confusion) -> Metrics:
    """Per-class and macro precision/recall/F from a confusion matrix.

    Rows are true labels, columns predictions. Per-class precision divides by
    the column sum, recall by the row sum (0 when the denominator is 0); macro
    scores are unweighted class means and the macro F is the harmonic mean of
    macro precision and macro recall.
    """
    cm = np.asarray(confusion)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got shape {cm.shape}")
    if np.any(cm < 0) or not np.issubdtype(cm.dtype, np.integer):
        raise ValueError("confusion matrix must hold non-negative integers")
    tp = np.diag(cm).astype(np.float64)
    col = cm.sum(axis=0).astype(np.float64)
    row = cm.sum(axis=1).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(col > 0, tp / col, 0.0)
        recall = np.where(row > 0, tp / row, 0.0)
    per_f = tuple(f_score(p, r) for p, r in zip(precision, recall))
    macro_p = float(precision.mean())
    macro_r = float(recall.mean())
    return Metrics(
        per_class_precision=tuple(float(p) for p in precision),
        per_class_recall=tuple(float(r) for r in recall),
        per_class_f=per_f,
        macro_precision=macro_p,
        macro_recall=macro_r,
        macro_f=f_score(macro_p, macro_r),
    )


@dataclass(frozen=True)
class DeviationDataset:
    """Per-performer deviation series over a shared position index."""

    n_positions: int
    by_performer: Mapping[str, Mapping[str, DeviationSeries]]

    @classmethod
    def from_table(
        cls,
        table: AlignedNoteTable,
        norm: NormPerformance | None = None,
        kinds: Iterable[str] = KINDS,
    ) -> "DeviationDataset":
        return cls(
            n_positions=table.n_positions,
            by_performer=extract_deviations(table, norm, kinds),
        )

    @property
    def performer_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.by_performer))


@dataclass(frozen=True)
class EvaluationReport:
    performer_ids: tuple[str, ...]
    confusion: np.ndarray
    scores: Metrics
    trials: tuple[dict, ...]
    skipped: tuple[dict, ...]
    config: ExperimentConfig

    def normalized_confusion(self) -> np.ndarray:
        row_sums = self.confusion.sum(axis=1, keepdims=True)
        return np.divide(
            self.confusion,
            row_sums,
            out=np.zeros_like(self.confusion, dtype=np.float64),
            where=row_sums > 0,
        )

    def to_json_dict(self) -> dict:
        return {
            "performers": list(self.performer_ids),
            "config": self.config.to_json_dict(),
            "confusion": self.confusion.tolist(),
            "confusion_normalized": self.normalized_confusion().tolist(),
            "metrics": {
                "per_class": {
                    pid: {
                        "precision": self.scores.per_class_precision[i],
                        "recall": self.scores.per_class_recall[i],
                        "f_score": self.scores.per_class_f[i],
                    }
                    for i, pid in enumerate(self.performer_ids)
                },
                "macro_precision": self.scores.macro_precision,
                "macro_recall": self.scores.macro_recall,
                "macro_f_score": self.scores.macro_f,
            },
            "trials": list(self.trials),
            "skipped": list(self.skipped),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"


def _value_groups(series: DeviationSeries, fold: FoldSpec) -> np.ndarray:
    """Group id per value; -1 when a successor pair straddles group bounds."""
    start_groups = fold.group_of(series.positions)
    end_groups = fold.group_of(series.end_positions)
    return np.where(start_groups == end_groups, start_groups, -1)


def run_cv(
    dataset: DeviationDataset, config: ExperimentConfig, jobs: int = 1
) -> EvaluationReport:
    """Exhaustive LOGO cross-validation over every (performer, group) pair.

    For a trial with test group g, every candidate (the test performer
    included) trains on their remaining groups pooled; deviations whose
    successor spans two groups belong to neither side. The report is
    deterministic for a fixed config and independent of ``jobs``.
    """
    performer_ids = tuple(sorted(dataset.by_performer))
    if len(performer_ids) < 2:
        raise ValueError("cross-validation needs at least 2 performers")
    fold = logo_split(dataset.n_positions, config.n_groups)

    values_by_group: dict[tuple[str, str], list[np.ndarray]] = {}
    for pid in performer_ids:
        for kind in config.feature_set:
            series = dataset.by_performer[pid][kind]
            groups = _value_groups(series, fold)
            values_by_group[(pid, kind)] = [
                series.values[groups == g] for g in range(fold.n_groups)
            ]

    # candidate models per excluded group, shared by all trials on that group
    train_models: dict[int, dict[str, dict[str, object]]] = {}
    for g in range(fold.n_groups):
        train_models[g] = {}
        for pid in performer_ids:
            models = {}
            for kind in config.feature_set:
                pool = np.concatenate(
                    [
                        chunk
                        for other, chunk in enumerate(values_by_group[(pid, kind)])
                        if other != g
                    ]
                )
                models[kind] = fit_model(pool, kind, config)
            train_models[g][pid] = models

    index = {pid: i for i, pid in enumerate(performer_ids)}
    trial_keys = [(pid, g) for pid in performer_ids for g in range(fold.n_groups)]

    def run_trial(key):
        pid, g = key
        test_models = {}
        for kind in config.feature_set:
            values = values_by_group[(pid, kind)][g]
            if len(values) == 0:
                return {"performer": pid, "group": g, "reason": f"empty {kind} test series"}
            test_models[kind] = fit_model(values, kind, config)
        fused, per_feature = _score_candidates(test_models, train_models[g], config)
        predicted = min(fused, key=lambda c: (fused[c], c))
        return {
            "performer": pid,
            "group": g,
            "predicted": predicted,
            "fused_kl": fused,
            "feature_kl": per_feature,
        }

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run_trial, trial_keys))
    else:
        outcomes = [run_trial(key) for key in trial_keys]

    confusion = np.zeros((len(performer_ids), len(performer_ids)), dtype=np.int64)
    trials, skipped = [], []
    for outcome in outcomes:
        if "predicted" in outcome:
            confusion[index[outcome["performer"]], index[outcome["predicted"]]] += 1
            trials.append(outcome)
        else:
            log.warning(
                "skipping trial (%s, group %d): %s",
                outcome["performer"],
                outcome["group"],
                outcome["reason"],
            )
            skipped.append(outcome)

    return EvaluationReport(
        performer_ids=performer_ids,
        confusion=confusion,
        scores=metrics(confusion),
        trials=tuple(trials),
        skipped=tuple(skipped),
        config=config,
    )


@dataclass(frozen=True)
class SweepRow:
    model_family: str
    feature_set: tuple[str, ...]
    precision: float
    recall: float
    f: float

    @property
    def feature_label(self) -> str:
        return "+".join(self.feature_set)


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    best: SweepRow
    best_report: EvaluationReport


def feature_subsets(min_size: int = 2, include_singletons: bool = False) -> list[tuple[str, ...]]:
    """All feature combinations in canonical order (size >= 2 by default)."""
    lo = 1 if include_singletons else min_size
    return [
        subset
        for size in range(lo, len(KINDS) + 1)
        for subset in combinations(KINDS, size)
    ]


def sweep(
    dataset: DeviationDataset,
    base_config: ExperimentConfig,
    model_families: Iterable[str] = MODEL_FAMILIES,
    subsets: Iterable[tuple[str, ...]] | None = None,
    jobs: int = 1,
) -> SweepResult:
    """Run CV for every feature subset x model family; rank by precision."""
    if subsets is None:
        subsets = feature_subsets()
    rows = []
    reports = {}
    for family in model_families:
        for subset in subsets:
            config = replace(
                base_config, model_family=family, feature_set=tuple(subset), weights=None
            )
            report = run_cv(dataset, config, jobs=jobs)
            row = SweepRow(
                model_family=family,
                feature_set=tuple(subset),
                precision=report.scores.macro_precision,
                recall=report.scores.macro_recall,
                f=report.scores.macro_f,
            )
            rows.append(row)
            reports[(family, tuple(subset))] = report
    rows.sort(key=lambda r: (-r.precision, r.model_family, r.feature_set))
    best = rows[0]
    return SweepResult(
        rows=tuple(rows),
        best=best,
        best_report=reports[(best.model_family, best.feature_set)],
    )


# ---------------------------------------------------------------------------
# CSV emitters


def confusion_csv(report: EvaluationReport, normalized: bool = False) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["true\\predicted", *report.performer_ids])
    matrix = report.normalized_confusion() if normalized else report.confusion
    for i, pid in enumerate(report.performer_ids):
        row = [repr(float(v)) if normalized else int(v) for v in matrix[i]]
        writer.writerow([pid, *row])
    return buf.getvalue()


def metrics_csv(report: EvaluationReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["class", "precision", "recall", "f_score"])
    s = report.scores
    for i, pid in enumerate(report.performer_ids):
        writer.writerow(
            [pid, repr(s.per_class_precision[i]), repr(s.per_class_recall[i]), repr(s.per_class_f[i])]
        )
    writer.writerow(["macro", repr(s.macro_precision), repr(s.macro_recall), repr(s.macro_f)])
    return buf.getvalue()


def sweep_csv(rows: Iterable[SweepRow]) -> str:
    """Table-4-style layout: Feature,Precision,Recall,F-score."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["Feature", "Precision", "Recall", "F-score"])
    for row in rows:
        writer.writerow(
            [row.feature_label, repr(row.precision), repr(row.recall), repr(row.f)]
        )
    return buf.getvalue()
