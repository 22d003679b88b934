"""Credit scoring from smartphone microlending data with pseudo-social network features."""

from .data import Label, SynthSpec, derive_labels, generate_synthetic, load_dataset
from .network import attach_labels, build_bipartite, project_to_unipartite
from .netfeat import PageRankConfig, betweenness, closeness, egonet_features, personalized_pagerank
from .embed import Node2VecConfig, embed
from .evaluation import ProfitParams, auc, brier, compare_models, profit_measure

__version__ = "0.1.0"
