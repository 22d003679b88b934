"""Feature-group ablation under stratified cross-validation, and permutation importance."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from joblib import Parallel, delayed

from ..data import Label
from ..evaluation import ProfitParams, auc, brier, profit_measure
from .matrix import GROUPS, FeatureMatrix, LabeledMatrix, labeled
from .models import Model, train_model

log = logging.getLogger(__name__)

MAX_FOLD_RETRIES = 10


def default_combinations(present: Iterable[str]) -> list[tuple]:
    """Each group alone, each other group paired with sociodemographic, then all groups."""
    present = [g for g in GROUPS if g in set(present)]
    combos = [(g,) for g in present]
    if "sociodemographic" in present:
        combos += [_norm(("sociodemographic", g)) for g in present if g != "sociodemographic"]
    combos.append(tuple(present))
    return _dedupe(combos)


def _norm(combo: Iterable[str]) -> tuple:
    combo = set(combo)
    unknown = combo - set(GROUPS)
    if unknown:
        raise ValueError(f"unknown feature groups {sorted(unknown)}")
    return tuple(g for g in GROUPS if g in combo)


def _dedupe(combos: Iterable[Iterable[str]]) -> list[tuple]:
    return list(dict.fromkeys(_norm(c) for c in combos))


def stratified_folds(y: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Fold id per row; every fold sees both classes, reshuffling up to a retry cap."""
    for attempt in range(MAX_FOLD_RETRIES):
        rng = np.random.default_rng([seed, attempt])
        fold = np.empty(len(y), dtype=np.int64)
        for cls in (0, 1):
            idx = rng.permutation(np.flatnonzero(y == cls))
            fold[idx] = np.arange(len(idx)) % folds
        if all(len(np.unique(y[fold == k])) == 2 for k in range(folds)):
            return fold
        log.warning("fold assignment left a single-class fold; resampling (attempt %d)", attempt + 1)
    raise ValueError(f"could not form {folds} folds with both classes in each")


@dataclass
class CellScores:
    """Out-of-fold test scores of one (combination, model) cell, per fold."""

    combination: tuple
    model: str
    scores: list  # per fold: array of test-row scores
    targets: list  # per fold: matching 0/1 targets
    ids: list = field(default_factory=list)  # per fold: matching user ids


@dataclass
class AblationRow:
    combination: tuple
    model: str
    auc: list
    brier: list
    profit: list
    scores: CellScores | None = field(default=None, repr=False)

    @property
    def name(self) -> str:
        return "+".join(self.combination)

    def mean(self, metric: str) -> float:
        return float(np.mean(getattr(self, metric)))


@dataclass
class AblationTable:
    rows: list
    folds: int

    def get(self, combination: Iterable[str], model: str) -> AblationRow:
        key = _norm(combination)
        for r in self.rows:
            if r.combination == key and r.model == model:
                return r
        raise KeyError((key, model))

    def to_tsv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["combination", "model", "auc_mean", "brier_mean", "profit_mean",
                        "auc_folds", "brier_folds", "profit_folds"])
            for r in self.rows:
                w.writerow([r.name, r.model, f"{r.mean('auc'):.6f}", f"{r.mean('brier'):.6f}",
                            f"{r.mean('profit'):.6f}",
                            *(";".join(f"{x:.6f}" for x in getattr(r, m)) for m in ("auc", "brier", "profit"))])


def _run_cell(data: LabeledMatrix, fold, combo, kind, seed, params) -> CellScores:
    sub = data.matrix.select(groups=combo)
    scores, targets, ids = [], [], []
    for k in range(int(fold.max()) + 1):
        tr, te = np.flatnonzero(fold != k), np.flatnonzero(fold == k)
        model = train_model(kind, LabeledMatrix(sub.rows(tr), data.y[tr]), seed=seed + k, **params)
        test = sub.rows(te)
        scores.append(model.predict_proba(test))
        targets.append(data.y[te])
        ids.append(list(test.ids))
    return CellScores(combo, kind, scores, targets, ids)


def cross_validated_scores(
    m: FeatureMatrix,
    labels: Mapping[str, Label],
    combinations: Sequence[Iterable[str]] | None = None,
    model_kinds: Sequence[str] = ("logistic_regression",),
    folds: int = 5,
    seed: int = 0,
    model_params: Mapping[str, Mapping] | None = None,
    n_jobs: int = 1,
) -> list[CellScores]:
    """Out-of-fold scores for every (combination, model) cell on shared folds."""
    data = labeled(m, labels)
    combos = default_combinations(m.present_groups()) if combinations is None else _dedupe(combinations)
    for combo in combos:
        for g in combo:
            if g not in m.groups:
                raise ValueError(f"feature group {g!r} has no columns")
    kinds = list(dict.fromkeys(model_kinds))
    fold = stratified_folds(data.y, folds, seed)
    params = model_params or {}
    cells = [(c, k) for c in combos for k in kinds]
    return Parallel(n_jobs=n_jobs)(
        delayed(_run_cell)(data, fold, c, k, seed, dict(params.get(k, {}))) for c, k in cells
    )


def score_cells(cells: Sequence[CellScores], profit: ProfitParams = ProfitParams()) -> AblationTable:
    rows = []
    for cell in cells:
        pairs = list(zip(cell.scores, cell.targets))
        rows.append(AblationRow(
            cell.combination, cell.model,
            [auc(s, y) for s, y in pairs],
            [brier(s, y) for s, y in pairs],
            [profit_measure(s, y, profit)[0] for s, y in pairs],
            cell,
        ))
    return AblationTable(rows, len(cells[0].scores) if cells else 0)


def ablation_study(
    m: FeatureMatrix,
    labels: Mapping[str, Label],
    groups: Sequence[Iterable[str]] | None = None,
    model_kinds: Sequence[str] = ("logistic_regression",),
    folds: int = 5,
    seed: int = 0,
    model_params: Mapping[str, Mapping] | None = None,
    profit: ProfitParams = ProfitParams(),
    n_jobs: int = 1,
) -> AblationTable:
    """Cross-validated AUC, Brier and profit for each feature-group combination and model.

    ``groups`` lists the combinations (each an iterable of group names);
    ``None`` runs :func:`default_combinations`. Every cell uses the same
    folds so per-fold metrics pair up for significance tests.
    """
    cells = cross_validated_scores(m, labels, groups, model_kinds, folds, seed, model_params, n_jobs)
    return score_cells(cells, profit)


# --
# Permutation importance

_METRICS: dict[str, tuple[Callable, bool]] = {
    "auc": (auc, True),
    "brier": (brier, False),
}


def permutation_importance(
    model: Model,
    test: LabeledMatrix,
    metric: str | Callable = "auc",
    repeats: int = 5,
    seed: int = 0,
    greater_is_better: bool = True,
) -> dict:
    """Mean metric degradation when each training feature is shuffled on ``test``."""
    if isinstance(metric, str):
        fn, greater_is_better = _METRICS[metric]
    else:
        fn = metric
    sign = 1.0 if greater_is_better else -1.0
    m, y = test
    m = m.select(columns=model.features)
    base = fn(model.predict_proba(m), y)
    rng = np.random.default_rng(seed)
    out = {}
    for j, name in enumerate(m.columns):
        drops = []
        for _ in range(repeats):
            vals = m.values.copy()
            vals[:, j] = vals[rng.permutation(len(vals)), j]
            shuffled = FeatureMatrix(m.ids, m.columns, m.groups, vals)
            drops.append(sign * (base - fn(model.predict_proba(shuffled), y)))
        out[name] = float(np.mean(drops))
    return out


def group_rollup(importances: Mapping[str, float], m: FeatureMatrix) -> dict:
    """Sum of feature importances per feature group."""
    tag = dict(zip(m.columns, m.groups))
    out: dict = {}
    for name, v in importances.items():
        out[tag[name]] = out.get(tag[name], 0.0) + v
    return {g: out[g] for g in GROUPS if g in out}
