from .matrix import (
    GROUPS,
    Buckets,
    FeatureMatrix,
    LabeledMatrix,
    build_behavior_features,
    build_sociodemographic_features,
    labeled,
    split_train_test,
)
from .models import (
    ForestModel,
    FeedforwardModel,
    LogisticModel,
    Model,
    train_feedforward,
    train_logreg,
    train_model,
    train_random_forest,
)
from .ablation import (
    AblationTable,
    ablation_study,
    cross_validated_scores,
    default_combinations,
    group_rollup,
    permutation_importance,
    score_cells,
)
