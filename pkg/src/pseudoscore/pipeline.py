"""Config-driven batch pipeline: data -> networks -> features -> models -> evaluation -> report.

Every stage writes its artifacts into ``<out>/cache/<stage>-<key>/`` where
the key hashes the stage's own config blocks together with the keys of its
upstream stages, so editing one block only reruns the stages downstream of
it. The run report is plain JSON with sorted keys and carries no timings
(those go to ``timings.json``), which keeps reruns byte-identical.
"""

from __future__ import annotations

import contextlib
import dataclasses
import datetime as dt
import hashlib
import json
import logging
import os
import pickle
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import data as data_mod
from .data import Dataset, Label, SynthSpec, derive_labels, generate_synthetic, load_dataset, write_dataset
from .embed import Node2VecConfig, embed, embedding_features
from .evaluation import ProfitParams, compare_models
from .netfeat import centrality_features, influence_features, neighborhood_features
from .network import (
    attach_labels,
    build_bipartite,
    project_to_unipartite,
    read_bipartite,
    read_edgelist,
    write_bipartite,
    write_edgelist,
)
from .scoring import (
    GROUPS,
    FeatureMatrix,
    build_behavior_features,
    build_sociodemographic_features,
    cross_validated_scores,
    default_combinations,
    group_rollup,
    permutation_importance,
    score_cells,
    split_train_test,
    train_model,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("pseudoscore")

STAGES = ("data", "network", "features", "train", "evaluate", "report")
MODEL_KINDS = ("logistic_regression", "random_forest", "feedforward_net")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


# --
# Config blocks


@dataclass
class DataBlock:
    users: str = ""
    app_usage: str = ""
    calls: str = ""
    loans: str = ""
    tolerance: float = 0.01
    delimiter: str = ","
    amount_menu: list = field(default_factory=list)
    schema: dict = field(default_factory=dict)


@dataclass
class SynthBlock:
    n_users: int = 5000
    n_clusters: int = 50
    apps_per_cluster: int = 30
    n_global_apps: int = 200
    home_apps: float = 3.0
    global_apps: float = 2.0
    signal: float = 0.8
    base_rate: float = 0.15
    demographic_signal: float = 0.35
    behavior_signal: float = 0.35
    calls_per_user: float = 30.0
    unlabeled_fraction: float = 0.02


@dataclass
class LabelsBlock:
    window_days: int = 60
    as_of: str = ""  # ISO date; empty = dataset default


@dataclass
class NetworkBlock:
    frequency_threshold: float = 1.0
    weighted: bool = False
    weight_rule: str = "shared_count"
    dense_app_guard: bool = False
    dense_app_fraction: float = 0.2


@dataclass
class FeaturesBlock:
    sociodemographic: bool = True
    behavior: bool = True
    neighborhood: bool = True
    centrality: bool = True
    influence: bool = True
    embedding: bool = True


@dataclass
class PageRankBlock:
    alpha: float = 0.85
    tolerance: float = 1e-9
    max_iterations: int = 200
    half_life: float = 30.0
    crossfit_folds: int = 5


@dataclass
class Node2VecBlock:
    graph: str = "unipartite"
    dimensions: int = 64
    walks_per_node: int = 10
    walk_length: int = 80
    context_window: int = 10
    p: float = 1.0
    q: float = 1.0
    negative_samples: int = 5
    epochs: int = 5
    learning_rate: float = 0.025


@dataclass
class LogRegBlock:
    l2_penalty: float = 1.0
    max_iter: int = 100
    class_weight: str = "none"


@dataclass
class ForestBlock:
    trees: int = 100
    max_depth: int = 8
    min_leaf: int = 5
    features_per_split: int = 0  # 0 = sqrt of the design width
    class_weight: str = "none"


@dataclass
class MLPBlock:
    hidden_units: int = 16
    epochs: int = 100
    learning_rate: float = 0.1
    batch_size: int = 64
    l2: float = 1e-4
    class_weight: str = "none"


@dataclass
class ModelsBlock:
    kinds: list = field(default_factory=lambda: list(MODEL_KINDS))
    logistic_regression: LogRegBlock = field(default_factory=LogRegBlock)
    random_forest: ForestBlock = field(default_factory=ForestBlock)
    feedforward_net: MLPBlock = field(default_factory=MLPBlock)


@dataclass
class ProfitBlock:
    roi: float = 0.26
    p0: float = 0.55
    p1: float = 0.1
    prior_bad: float = 0.0  # 0 = observed Bad share


@dataclass
class ExperimentBlock:
    folds: int = 5
    combinations: Any = "default"
    bootstrap_rounds: int = 10_000
    importance_repeats: int = 5
    test_fraction: float = 0.2


@dataclass
class OutputBlock:
    dir: str = ""
    export_scores: bool = False


@dataclass
class PipelineConfig:
    seed: int = 0
    data: DataBlock | None = None
    synth: SynthBlock | None = None
    labels: LabelsBlock = field(default_factory=LabelsBlock)
    network: NetworkBlock = field(default_factory=NetworkBlock)
    features: FeaturesBlock = field(default_factory=FeaturesBlock)
    pagerank: PageRankBlock = field(default_factory=PageRankBlock)
    node2vec: Node2VecBlock = field(default_factory=Node2VecBlock)
    models: ModelsBlock = field(default_factory=ModelsBlock)
    profit: ProfitBlock = field(default_factory=ProfitBlock)
    experiment: ExperimentBlock = field(default_factory=ExperimentBlock)
    output: OutputBlock = field(default_factory=OutputBlock)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        if (self.data is None) == (self.synth is None):
            raise ConfigError("exactly one of [data] or [synth] must be given")
        if self.data is not None:
            missing = [k for k in data_mod.FILES if not getattr(self.data, k)]
            if missing:
                raise ConfigError(f"[data] lacks paths for {missing}")
        if self.synth is not None:
            try:
                _synth_spec(self.synth)
            except ValueError as exc:
                raise ConfigError(f"[synth] {exc}") from None
        if self.labels.window_days <= 0:
            raise ConfigError("[labels] window_days must be positive")
        if self.labels.as_of:
            try:
                dt.date.fromisoformat(self.labels.as_of)
            except ValueError:
                raise ConfigError(f"[labels] as_of {self.labels.as_of!r} is not an ISO date") from None
        if self.network.weight_rule not in ("shared_count", "min_intensity"):
            raise ConfigError(f"[network] unknown weight_rule {self.network.weight_rule!r}")
        if self.network.frequency_threshold < 0:
            raise ConfigError("[network] frequency_threshold must be nonnegative")
        if self.node2vec.graph not in ("unipartite", "bipartite"):
            raise ConfigError("[node2vec] graph must be 'unipartite' or 'bipartite'")
        if not 0 < self.pagerank.alpha < 1:
            raise ConfigError("[pagerank] alpha must lie in (0, 1)")
        try:
            self.node2vec_config()
            self.profit_params()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        unknown = set(self.models.kinds) - set(MODEL_KINDS)
        if unknown or not self.models.kinds:
            raise ConfigError(f"[models] kinds must be drawn from {MODEL_KINDS}")
        for kind in MODEL_KINDS:
            cw = getattr(self.models, kind).class_weight
            if cw not in ("none", "balanced"):
                raise ConfigError(f"[models.{kind}] class_weight must be 'none' or 'balanced'")
        if self.experiment.folds < 2:
            raise ConfigError("[experiment] folds must be at least 2")
        combos = self.experiment.combinations
        if combos != "default":
            if not isinstance(combos, list) or not all(isinstance(c, list) and c for c in combos):
                raise ConfigError("[experiment] combinations must be 'default' or a list of group lists")
            for c in combos:
                bad = set(c) - set(GROUPS)
                if bad:
                    raise ConfigError(f"[experiment] unknown groups {sorted(bad)}")
                off = [g for g in c if not getattr(self.features, g)]
                if off:
                    raise ConfigError(f"[experiment] combination uses disabled groups {off}")
        if not any(getattr(self.features, g) for g in GROUPS):
            raise ConfigError("[features] every group is disabled")

    def node2vec_config(self) -> Node2VecConfig:
        b = dataclasses.asdict(self.node2vec)
        b.pop("graph")
        return Node2VecConfig(seed=self.seed, **b)

    def profit_params(self) -> ProfitParams:
        p = self.profit
        return ProfitParams(p.roi, p.p0, p.p1, p.prior_bad or None)

    def model_params(self) -> dict:
        out = {}
        for kind in MODEL_KINDS:
            params = dataclasses.asdict(getattr(self.models, kind))
            cw = params.pop("class_weight")
            params["class_weight"] = None if cw == "none" else cw
            if kind == "random_forest" and not params["features_per_split"]:
                params["features_per_split"] = None
            out[kind] = params
        return out

    def enabled_groups(self) -> list[str]:
        return [g for g in GROUPS if getattr(self.features, g)]


def _synth_spec(b: SynthBlock) -> SynthSpec:
    return SynthSpec(**dataclasses.asdict(b))


def _build(cls, raw: dict, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"[{where}] must be a table")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        default = getattr(cls(), name) if name not in ("data", "synth") else None
        if dataclasses.is_dataclass(default) or name in ("data", "synth"):
            sub = {"data": DataBlock, "synth": SynthBlock}.get(name) or type(default)
            kwargs[name] = _build(sub, value, f"{where}.{name}" if where else name)
            continue
        if isinstance(default, bool) and not isinstance(value, bool):
            raise ConfigError(f"[{where}] {name} must be true/false")
        if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if isinstance(default, (int, float, str, list, dict)) and name != "combinations":
            if not isinstance(value, type(default)) or (isinstance(value, bool) and not isinstance(default, bool)):
                raise ConfigError(f"[{where}] {name} should be {type(default).__name__}, got {value!r}")
        kwargs[name] = value
    return cls(**kwargs)


def parse_config(raw: dict) -> PipelineConfig:
    """Strict conversion of a parsed TOML document into a validated config."""
    cfg = _build(PipelineConfig, raw, "")
    cfg.validate()
    return cfg


def load_config(path: str | os.PathLike | None) -> PipelineConfig:
    if path is None:
        return parse_config({"synth": {}})
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from None
    return parse_config(raw)


# --
# Stage keys and cache


def _digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def stage_keys(cfg: PipelineConfig) -> dict[str, str]:
    d = cfg.to_dict()
    if cfg.synth is not None:
        source = {"synth": d["synth"], "seed": cfg.seed}
    else:
        source = {"data": d["data"],
                  "files": {k: _file_digest(getattr(cfg.data, k)) for k in data_mod.FILES}}
    keys = {"data": _digest({"source": source, "labels": d["labels"]})}
    keys["network"] = _digest({"up": keys["data"], "network": d["network"]})
    keys["features"] = _digest({
        "up": keys["network"], "features": d["features"], "pagerank": d["pagerank"],
        "node2vec": d["node2vec"], "seed": cfg.seed,
    })
    exp = d["experiment"]
    keys["train"] = _digest({
        "up": keys["features"], "models": d["models"], "seed": cfg.seed,
        "experiment": {k: exp[k] for k in ("folds", "combinations", "test_fraction")},
    })
    keys["evaluate"] = _digest({
        "up": keys["train"], "profit": d["profit"], "seed": cfg.seed,
        "experiment": {k: exp[k] for k in ("bootstrap_rounds", "importance_repeats")},
    })
    return keys


class Cache:
    def __init__(self, root: Path):
        self.root = Path(root)

    def path(self, stage: str, key: str) -> Path:
        return self.root / f"{stage}-{key}"

    def has(self, stage: str, key: str) -> bool:
        return (self.path(stage, key) / "DONE").exists()

    @contextlib.contextmanager
    def writing(self, stage: str, key: str):
        """Yield a scratch directory that becomes the stage artifact only on success."""
        self.root.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=f".{stage}-", dir=self.root))
        try:
            yield tmp
            (tmp / "DONE").write_text(key + "\n")
            final = self.path(stage, key)
            if final.exists():
                shutil.rmtree(final)
            os.replace(tmp, final)
        finally:
            if tmp.exists():
                shutil.rmtree(tmp, ignore_errors=True)


# --
# Stage logging

_current_stage = "main"


class _StageFilter(logging.Filter):
    def filter(self, record):
        record.stage = _current_stage
        return True


@contextlib.contextmanager
def _in_stage(stage: str):
    global _current_stage
    prev, _current_stage = _current_stage, stage
    try:
        yield
    finally:
        _current_stage = prev


def configure_logging(level=logging.INFO) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.addFilter(_StageFilter())
    handler.setFormatter(logging.Formatter("[%(stage)s] %(levelname)s %(message)s"))
    root = logging.getLogger("pseudoscore")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False


# --
# Stages


def _labels_to_file(labels: dict, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u in sorted(labels):
            fh.write(f"{u}\t{labels[u].value}\n")


def _labels_from_file(path: Path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            u, v = line.rstrip("\n").split("\t")
            out[u] = Label(v)
    return out


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (dt.date, dt.datetime)):
        return o.isoformat()
    raise TypeError(f"cannot serialise {type(o).__name__}")


class Pipeline:
    def __init__(self, cfg: PipelineConfig, out: str | os.PathLike, threads: int = 1):
        self.cfg = cfg
        self.out = Path(out)
        self.cache = Cache(self.out / "cache")
        self.keys = stage_keys(cfg)
        self.threads = threads
        self.timings: dict[str, float] = {}

    def _dir(self, stage: str) -> Path:
        return self.cache.path(stage, self.keys[stage])

    def _require(self, stage: str) -> Path:
        if not self.cache.has(stage, self.keys[stage]):
            name = "synth" if stage == "data" and self.cfg.synth is not None else {
                "data": "synth", "network": "build-net", "features": "featurize",
                "train": "train", "evaluate": "evaluate"}[stage]
            raise StageError(stage, f"missing upstream artifact for this config; run `pseudoscore {name}` first")
        return self._dir(stage)

    def _stage(self, stage: str, fn):
        global _current_stage
        _current_stage = stage
        t0 = time.perf_counter()
        try:
            if self.cache.has(stage, self.keys[stage]):
                log.info("reusing cached artifact %s", self._dir(stage).name)
            else:
                with self.cache.writing(stage, self.keys[stage]) as tmp:
                    fn(tmp)
                log.info("wrote %s", self._dir(stage).name)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
        finally:
            self.timings[stage] = time.perf_counter() - t0
            _current_stage = "main"
        return self._dir(stage)

    # data

    def run_data(self) -> Path:
        return self._stage("data", self._data)

    def _data(self, tmp: Path) -> None:
        cfg = self.cfg
        if cfg.synth is not None:
            ds = generate_synthetic(_synth_spec(cfg.synth), seed=cfg.seed)
        else:
            d = cfg.data
            ds = load_dataset({k: getattr(d, k) for k in data_mod.FILES}, d.schema or None, d.tolerance,
                              d.amount_menu or None, d.delimiter)
        as_of = dt.date.fromisoformat(cfg.labels.as_of) if cfg.labels.as_of else ds.as_of
        if as_of is None and ds.loans:
            as_of = max(l.repaid_date or l.grant_date for l in ds.loans)
        labels = derive_labels(ds.loans, cfg.labels.window_days, as_of)
        write_dataset(ds, tmp)
        _labels_to_file(labels, tmp / "labels.tsv")
        n_good = sum(1 for v in labels.values() if v is Label.GOOD)
        n_bad = sum(1 for v in labels.values() if v is Label.BAD)
        summary = {
            "as_of": as_of.isoformat() if as_of else None,
            "users": len(ds.users), "app_usage_rows": len(ds.usage),
            "call_events": len(ds.calls), "loans": len(ds.loans),
            "labeled": n_good + n_bad, "bad": n_bad, "good": n_good,
            "unlabeled": len(labels) - n_good - n_bad,
            "default_rate": n_bad / (n_good + n_bad) if n_good + n_bad else None,
        }
        _dump_json(summary, tmp / "summary.json")
        log.info("%d users, %d labeled, default rate %s", len(ds.users), n_good + n_bad, summary["default_rate"])

    def load_data(self) -> tuple[Dataset, dict]:
        d = self._require("data")
        with _in_stage("data"):
            ds = load_dataset({k: d / f"{k}.csv" for k in data_mod.FILES}, tolerance=0.0)
        return ds, _labels_from_file(d / "labels.tsv")

    # network

    def run_network(self) -> Path:
        ds, _ = self.load_data()
        return self._stage("network", lambda tmp: self._network(tmp, ds))

    def _network(self, tmp: Path, ds: Dataset) -> None:
        n = self.cfg.network
        nb = build_bipartite(ds.usage, n.frequency_threshold, n.weighted, users=[u.user_id for u in ds.users])
        nu = project_to_unipartite(nb, n.weight_rule, n.dense_app_fraction if n.dense_app_guard else None)
        write_bipartite(nb, tmp / "bipartite.tsv")
        write_edgelist(nu, tmp / "unipartite.tsv")
        deg = np.diff(nu.indptr)
        _dump_json({
            "bipartite": {"users": len(nb.users), "apps": len(nb.apps), "edges": len(nb.edges)},
            "unipartite": {"nodes": len(nu), "edges": nu.n_edges, "density": nu.density,
                           "isolated": int((deg == 0).sum()),
                           "mean_degree": float(deg.mean()) if len(deg) else 0.0},
        }, tmp / "summary.json")
        log.info("bipartite %d edges; unipartite %d nodes, %d edges", len(nb.edges), len(nu), nu.n_edges)

    def load_network(self):
        d = self._require("network")
        return read_bipartite(d / "bipartite.tsv"), read_edgelist(d / "unipartite.tsv")

    # features

    def run_features(self) -> Path:
        ds, labels = self.load_data()
        nb, nu = self.load_network()
        return self._stage("features", lambda tmp: self._features(tmp, ds, labels, nb, nu))

    def _features(self, tmp, ds, labels, nb, nu) -> None:
        cfg = self.cfg
        ids = [u.user_id for u in ds.users]
        parts = []
        on = cfg.features
        if on.sociodemographic:
            parts.append(build_sociodemographic_features(ds.users, ds.usage, cfg.network.frequency_threshold))
        if on.behavior:
            first: dict = {}
            for l in ds.loans:
                if l.user_id not in first or l.grant_date < first[l.user_id]:
                    first[l.user_id] = l.grant_date
            before = {u: dt.datetime.combine(d, dt.time()) for u, d in first.items()}
            parts.append(build_behavior_features(ds.calls, ids, before=before))
        g = attach_labels(nu, labels)
        if on.neighborhood:
            parts.append(neighborhood_features(g))
        if on.centrality:
            parts.append(centrality_features(nu))
        if on.influence:
            pr = cfg.pagerank
            parts.append(influence_features(g, nb, ds.usage, pr.alpha, pr.tolerance, pr.max_iterations,
                                            pr.half_life, pr.crossfit_folds, cfg.seed))
        if on.embedding:
            graph = nu if cfg.node2vec.graph == "unipartite" else nb.as_graph()
            parts.append(embedding_features(embed(graph, cfg.node2vec_config())))
        parts = [p.align(ids) if p.ids != tuple(ids) else p for p in parts]
        m = parts[0].hstack(*parts[1:])
        m.to_csv(tmp / "features.csv")
        _dump_json({"rows": m.shape[0], "columns": m.shape[1],
                    "per_group": {gname: m.groups.count(gname) for gname in m.present_groups()}},
                   tmp / "summary.json")
        log.info("feature matrix %d x %d", *m.shape)

    def load_features(self) -> FeatureMatrix:
        return FeatureMatrix.from_csv(self._require("features") / "features.csv")

    # train

    def combinations(self, m: FeatureMatrix) -> list:
        combos = self.cfg.experiment.combinations
        if combos == "default":
            return default_combinations(m.present_groups())
        return [tuple(c) for c in combos]

    def run_train(self) -> Path:
        _, labels = self.load_data()
        m = self.load_features()
        return self._stage("train", lambda tmp: self._train(tmp, m, labels))

    def _train(self, tmp, m, labels) -> None:
        cfg = self.cfg
        params = cfg.model_params()
        cells = cross_validated_scores(
            m, labels, self.combinations(m), cfg.models.kinds, cfg.experiment.folds, cfg.seed,
            params, n_jobs=self.threads,
        )
        tr, te = split_train_test(m, labels, 1.0 - cfg.experiment.test_fraction, cfg.seed)
        models = {k: train_model(k, tr, seed=cfg.seed, **params[k]) for k in cfg.models.kinds}
        with open(tmp / "cells.pkl", "wb") as fh:
            pickle.dump(cells, fh)
        with open(tmp / "models.pkl", "wb") as fh:
            pickle.dump({"models": models, "test": te}, fh)
        log.info("trained %d cells x %d folds", len(cells), cfg.experiment.folds)

    def load_train(self):
        d = self._require("train")
        with open(d / "cells.pkl", "rb") as fh:
            cells = pickle.load(fh)
        with open(d / "models.pkl", "rb") as fh:
            held = pickle.load(fh)
        return cells, held

    # evaluate

    def run_evaluate(self) -> Path:
        cells, held = self.load_train()
        return self._stage("evaluate", lambda tmp: self._evaluate(tmp, cells, held))

    def _evaluate(self, tmp, cells, held) -> None:
        cfg = self.cfg
        table = score_cells(cells, cfg.profit_params())
        rows = [{
            "combination": list(r.combination), "model": r.model,
            "auc": r.auc, "brier": r.brier, "profit": r.profit,
            "auc_mean": r.mean("auc"), "brier_mean": r.mean("brier"), "profit_mean": r.mean("profit"),
        } for r in table.rows]
        sig = []
        for kind in cfg.models.kinds:
            kr = [r for r in table.rows if r.model == kind]
            for i, a in enumerate(kr):
                for b in kr[i + 1:]:
                    c = compare_models(a.auc, b.auc, cfg.experiment.bootstrap_rounds, cfg.seed)
                    sig.append({"model": kind, "metric": "auc", "a": a.name, "b": b.name,
                                "delta": c.delta, "ci": list(c.confidence_interval), "p_value": c.p_value})
        importance = {}
        test = held["test"]
        for kind, model in held["models"].items():
            imp = permutation_importance(model, test, "auc", cfg.experiment.importance_repeats, cfg.seed)
            top = sorted(imp.items(), key=lambda kv: (-kv[1], kv[0]))[:20]
            importance[kind] = {
                "by_group": group_rollup(imp, test.matrix.select(columns=model.features)),
                "top_features": [{"feature": k, "importance": v} for k, v in top],
            }
        _dump_json({"ablation": rows, "significance": sig, "importance": importance, "folds": table.folds},
                   tmp / "metrics.json")
        if cfg.output.export_scores:
            with open(tmp / "scores.tsv", "w", encoding="utf-8") as fh:
                fh.write("combination\tmodel\tfold\tuser_id\ttarget\tscore\n")
                for cell in cells:
                    name = "+".join(cell.combination)
                    for k, (ids, ys, ss) in enumerate(zip(cell.ids, cell.targets, cell.scores)):
                        for u, yv, sv in zip(ids, ys, ss):
                            fh.write(f"{name}\t{cell.model}\t{k}\t{u}\t{int(yv)}\t{float(sv)!r}\n")

    # report

    def write_report(self, status: str = "complete", failed: StageError | None = None) -> dict:
        report: dict = {"status": status, "config": self.cfg.to_dict(), "stage_keys": self.keys}
        if failed is not None:
            report["failed_stage"] = failed.stage
            report["error"] = str(failed)
        for stage, name in (("data", "dataset"), ("network", "network"), ("features", "features")):
            if self.cache.has(stage, self.keys[stage]):
                report[name] = json.loads((self._dir(stage) / "summary.json").read_text())
        if self.cache.has("evaluate", self.keys["evaluate"]):
            metrics = json.loads((self._dir("evaluate") / "metrics.json").read_text())
            report.update(metrics)
        self.out.mkdir(parents=True, exist_ok=True)
        _atomic_write(self.out / "report.json", json.dumps(report, sort_keys=True, indent=2, default=_json_default) + "\n")
        if "ablation" in report:
            _atomic_write(self.out / "ablation.tsv", _ablation_tsv(report["ablation"]))
            _atomic_write(self.out / "significance.tsv", _significance_tsv(report["significance"]))
            _atomic_write(self.out / "importance.tsv", _importance_tsv(report["importance"]))
        if self.cfg.output.export_scores and self.cache.has("evaluate", self.keys["evaluate"]):
            shutil.copyfile(self._dir("evaluate") / "scores.tsv", self.out / "scores.tsv")
        _atomic_write(self.out / "timings.json", json.dumps(self.timings, sort_keys=True, indent=2) + "\n")
        return report

    def run(self) -> dict:
        """All stages in order; a failing stage still leaves a report marked incomplete."""
        try:
            self.run_data()
            self.run_network()
            self.run_features()
            self.run_train()
            self.run_evaluate()
        except StageError as exc:
            self.write_report("incomplete", exc)
            raise
        return self.write_report()


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}-", dir=path.parent)
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _ablation_tsv(rows) -> str:
    lines = ["combination\tmodel\tauc_mean\tbrier_mean\tprofit_mean\tauc_folds\tbrier_folds\tprofit_folds"]
    for r in rows:
        folds = ["; ".join(f"{x:.6f}" for x in r[m]).replace(" ", "") for m in ("auc", "brier", "profit")]
        lines.append("\t".join(["+".join(r["combination"]), r["model"], f"{r['auc_mean']:.6f}",
                                f"{r['brier_mean']:.6f}", f"{r['profit_mean']:.6f}", *folds]))
    return "\n".join(lines) + "\n"


def _significance_tsv(rows) -> str:
    lines = ["model\tmetric\ta\tb\tdelta\tci_low\tci_high\tp_value"]
    for r in rows:
        lines.append(f"{r['model']}\t{r['metric']}\t{r['a']}\t{r['b']}\t{r['delta']:.6f}\t"
                     f"{r['ci'][0]:.6f}\t{r['ci'][1]:.6f}\t{r['p_value']:.6f}")
    return "\n".join(lines) + "\n"


def _importance_tsv(imp) -> str:
    lines = ["model\tgroup\timportance"]
    for kind in sorted(imp):
        for g, v in imp[kind]["by_group"].items():
            lines.append(f"{kind}\t{g}\t{v:.6f}")
    return "\n".join(lines) + "\n"


def render_report(report: dict) -> str:
    """Human-readable summary of a report dict."""
    out = [f"status: {report.get('status')}"]
    ds = report.get("dataset")
    if ds:
        rate = ds["default_rate"]
        out.append(f"dataset: {ds['users']} users, {ds['labeled']} labeled, "
                   f"default rate {rate:.4f}" if rate is not None else f"dataset: {ds['users']} users")
    net = report.get("network")
    if net:
        u = net["unipartite"]
        out.append(f"network: {u['nodes']} nodes, {u['edges']} edges, density {u['density']:.5f}")
    rows = report.get("ablation", [])
    if rows:
        width = max(len("+".join(r["combination"])) for r in rows)
        out.append("")
        out.append(f"{'combination':<{width}}  {'model':<20}  {'AUC':>7}  {'Brier':>7}  {'profit':>8}")
        for r in rows:
            out.append(f"{'+'.join(r['combination']):<{width}}  {r['model']:<20}  "
                       f"{r['auc_mean']:7.4f}  {r['brier_mean']:7.4f}  {r['profit_mean']:8.5f}")
    if report.get("status") != "complete":
        out.append(f"failed stage: {report.get('failed_stage')}: {report.get('error')}")
    return "\n".join(out)
