import numpy as np
import pytest

from pseudoscore.data import Label
from pseudoscore.evaluation import ProfitParams
from pseudoscore.scoring import (
    FeatureMatrix,
    LabeledMatrix,
    ablation_study,
    cross_validated_scores,
    default_combinations,
    group_rollup,
    permutation_importance,
    train_logreg,
)
from pseudoscore.scoring.ablation import stratified_folds


def planted(n=400, seed=0):
    rng = np.random.default_rng(seed)
    signal = rng.normal(size=n)
    y = (signal + rng.normal(scale=0.7, size=n) > 1.0).astype(int)
    ids = [f"u{i}" for i in range(n)]
    strong = FeatureMatrix.from_columns(ids, "neighborhood", {"degree": signal + rng.normal(scale=0.3, size=n)})
    weak = FeatureMatrix.from_columns(ids, "sociodemographic", {"age": rng.normal(size=n), "x": rng.normal(size=n)})
    labels = {u: Label.BAD if t else Label.GOOD for u, t in zip(ids, y)}
    labels["u0"] = Label.UNLABELED
    return weak.hstack(strong), labels


def test_default_combinations():
    combos = default_combinations(["sociodemographic", "neighborhood", "influence"])
    assert combos == [("sociodemographic",), ("neighborhood",), ("influence",),
                      ("sociodemographic", "neighborhood"), ("sociodemographic", "influence"),
                      ("sociodemographic", "neighborhood", "influence")]


def test_folds_are_stratified_and_seeded():
    y = np.array([1] * 12 + [0] * 50)
    f = stratified_folds(y, 5, 3)
    assert np.array_equal(f, stratified_folds(y, 5, 3))
    for k in range(5):
        assert 2 <= y[f == k].sum() <= 3
    with pytest.raises(ValueError):
        stratified_folds(np.array([1, 1, 0, 0, 0, 0]), 3, 0)


def test_one_row_per_cell_and_fold_vectors():
    m, labels = planted()
    combos = [["sociodemographic"], ["neighborhood"], ["neighborhood", "sociodemographic"]]
    table = ablation_study(m, labels, combos, ["logistic_regression", "random_forest"], folds=4, seed=1,
                           model_params={"random_forest": {"trees": 10}})
    assert len(table.rows) == 6 and table.folds == 4
    assert len({(r.combination, r.model) for r in table.rows}) == 6
    for r in table.rows:
        assert len(r.auc) == len(r.brier) == len(r.profit) == 4
    strong = table.get(["neighborhood"], "logistic_regression").mean("auc")
    weak = table.get(["sociodemographic"], "logistic_regression").mean("auc")
    assert strong > 0.8 and weak < 0.65


def test_cells_share_folds_and_cover_each_labeled_user_once():
    m, labels = planted(200)
    cells = cross_validated_scores(m, labels, [["neighborhood"], ["sociodemographic"]], folds=5, seed=2)
    a, b = cells
    assert [list(x) for x in a.ids] == [list(x) for x in b.ids]
    everyone = [u for fold in a.ids for u in fold]
    assert sorted(everyone) == sorted(u for u, v in labels.items() if v is not Label.UNLABELED)


def test_parallel_matches_serial():
    m, labels = planted(200)
    serial = ablation_study(m, labels, None, ["logistic_regression"], folds=3, seed=4)
    parallel = ablation_study(m, labels, None, ["logistic_regression"], folds=3, seed=4, n_jobs=2)
    assert [(r.combination, r.auc, r.brier, r.profit) for r in serial.rows] == \
        [(r.combination, r.auc, r.brier, r.profit) for r in parallel.rows]


def test_table_export(tmp_path):
    m, labels = planted(150)
    table = ablation_study(m, labels, [["neighborhood"]], folds=3, profit=ProfitParams(roi=0.2))
    table.to_tsv(tmp_path / "t.tsv")
    lines = (tmp_path / "t.tsv").read_text().splitlines()
    assert lines[0].startswith("combination\tmodel") and lines[1].startswith("neighborhood\tlogistic_regression")


def test_unknown_groups_rejected():
    m, labels = planted(100)
    with pytest.raises(ValueError):
        ablation_study(m, labels, [["graph"]])
    with pytest.raises(ValueError):
        ablation_study(m, labels, [["embedding"]])


def test_permutation_importance_and_rollup():
    rng = np.random.default_rng(0)
    n = 300
    y = rng.integers(0, 2, n)
    ids = [f"u{i}" for i in range(n)]
    m = FeatureMatrix(ids, ["label_copy", "noise"], ["behavior", "centrality"],
                      np.column_stack([y + rng.normal(scale=0.1, size=n), rng.normal(size=n)]))
    data = LabeledMatrix(m, y)
    model = train_logreg(data)
    model.beta[2] = 0.0  # the noise column is unused
    imp = permutation_importance(model, data, "auc", repeats=5, seed=1)
    assert imp["label_copy"] > 0.3
    assert imp["noise"] == 0.0
    assert group_rollup(imp, m) == {"behavior": imp["label_copy"], "centrality": 0.0}
    brier_imp = permutation_importance(model, data, "brier", repeats=3)
    assert brier_imp["label_copy"] > 0
