"""Per-user feature table with feature-group tags, plus the local feature builders."""

from __future__ import annotations

import csv
import datetime as dt
import os
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from ..data import AppUsage, CallEvent, Label, UserRecord

GROUPS = (
    "sociodemographic",
    "behavior",
    "neighborhood",
    "centrality",
    "influence",
    "embedding",
)


@dataclass(frozen=True)
class FeatureMatrix:
    """Rows are users, columns are named features; NaN marks a missing value."""

    ids: tuple
    columns: tuple
    groups: tuple
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "groups", tuple(self.groups))
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            values = values.reshape(len(self.ids), len(self.columns))
        object.__setattr__(self, "values", values)
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("duplicate column names")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate row ids")
        if len(self.groups) != len(self.columns):
            raise ValueError("one group tag per column required")
        bad = set(self.groups) - set(GROUPS)
        if bad:
            raise ValueError(f"unknown feature groups {sorted(bad)}")
        if values.shape != (len(self.ids), len(self.columns)):
            raise ValueError(f"values shape {values.shape} does not match ids x columns")

    @classmethod
    def from_columns(cls, ids, group: str, columns: Mapping[str, Sequence[float]]):
        names = list(columns)
        vals = np.column_stack([np.asarray(columns[c], dtype=float) for c in names]) if names else np.empty((len(ids), 0))
        return cls(tuple(ids), tuple(names), (group,) * len(names), vals)

    @property
    def shape(self):
        return self.values.shape

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    def present_groups(self) -> list[str]:
        return [g for g in GROUPS if g in self.groups]

    def select(self, groups: Iterable[str] | None = None, columns: Iterable[str] | None = None) -> "FeatureMatrix":
        if columns is not None:
            cols = list(columns)
            idx = [self.columns.index(c) for c in cols]
        else:
            wanted = set(groups or ())
            idx = [i for i, g in enumerate(self.groups) if g in wanted]
        return FeatureMatrix(
            self.ids,
            [self.columns[i] for i in idx],
            [self.groups[i] for i in idx],
            self.values[:, idx],
        )

    def rows(self, index) -> "FeatureMatrix":
        index = np.asarray(index)
        return FeatureMatrix(
            [self.ids[i] for i in index], self.columns, self.groups, self.values[index]
        )

    def align(self, ids: Sequence) -> "FeatureMatrix":
        """Reorder to ``ids``; users absent here get NaN rows."""
        pos = {u: i for i, u in enumerate(self.ids)}
        out = np.full((len(ids), len(self.columns)), np.nan)
        for r, u in enumerate(ids):
            if u in pos:
                out[r] = self.values[pos[u]]
        return FeatureMatrix(ids, self.columns, self.groups, out)

    def hstack(self, *others: "FeatureMatrix") -> "FeatureMatrix":
        parts = [self] + [o if o.ids == self.ids else o.align(self.ids) for o in others]
        return FeatureMatrix(
            self.ids,
            sum((p.columns for p in parts), ()),
            sum((p.groups for p in parts), ()),
            np.hstack([p.values for p in parts]),
        )

    def to_csv(self, path: str | os.PathLike) -> None:
        """Header row of column names, second row of group tags, then one row per user."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user_id", *self.columns])
            w.writerow(["group", *self.groups])
            for uid, row in zip(self.ids, self.values):
                w.writerow([uid, *("" if np.isnan(x) else repr(float(x)) for x in row)])

    @classmethod
    def from_csv(cls, path: str | os.PathLike) -> "FeatureMatrix":
        with open(path, newline="", encoding="utf-8") as fh:
            r = csv.reader(fh)
            header = next(r)
            groups = next(r)
            ids, rows = [], []
            for row in r:
                ids.append(row[0])
                rows.append([float(x) if x else np.nan for x in row[1:]])
        vals = np.array(rows, dtype=float).reshape(len(ids), len(header) - 1)
        return cls(ids, header[1:], groups[1:], vals)


class LabeledMatrix(NamedTuple):
    """Feature rows with a 0/1 target (1 = Bad)."""

    matrix: FeatureMatrix
    y: np.ndarray


def labeled(m: FeatureMatrix, labels: Mapping[str, Label]) -> LabeledMatrix:
    """Keep the Good/Bad rows of ``m`` and attach the 0/1 target."""
    keep = [i for i, u in enumerate(m.ids) if labels.get(u, Label.UNLABELED) is not Label.UNLABELED]
    sub = m.rows(keep)
    y = np.array([1 if labels[u] is Label.BAD else 0 for u in sub.ids], dtype=np.int8)
    return LabeledMatrix(sub, y)


def split_train_test(
    m: FeatureMatrix, labels: Mapping[str, Label], fraction: float = 0.8, seed: int = 0
) -> tuple[LabeledMatrix, LabeledMatrix]:
    """Stratified split of the labeled rows; ``fraction`` goes to training."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    data = labeled(m, labels)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for cls in (0, 1):
        members = np.flatnonzero(data.y == cls)
        if len(members) < 2:
            raise ValueError(f"class {'Bad' if cls else 'Good'} has fewer than 2 members")
        members = rng.permutation(members)
        k = int(round(fraction * len(members)))
        k = min(max(k, 1), len(members) - 1)
        train_idx.append(members[:k])
        test_idx.append(members[k:])
    tr = np.sort(np.concatenate(train_idx))
    te = np.sort(np.concatenate(test_idx))
    return (
        LabeledMatrix(data.matrix.rows(tr), data.y[tr]),
        LabeledMatrix(data.matrix.rows(te), data.y[te]),
    )


# --
# Local features


@dataclass(frozen=True)
class Buckets:
    """Day-type x time-of-day partition of the week."""

    weekend: frozenset = frozenset({5, 6})
    edges: tuple = (0, 6, 12, 18, 24)
    names: tuple = ("night", "morning", "afternoon", "evening")

    def __post_init__(self):
        e = self.edges
        if e[0] != 0 or e[-1] != 24 or any(a >= b for a, b in zip(e, e[1:])):
            raise ValueError("hour edges must increase from 0 to 24")
        if len(self.names) != len(e) - 1:
            raise ValueError("one name per hour bucket")
        if not set(self.weekend) <= set(range(7)):
            raise ValueError("weekend days are weekday numbers 0-6")

    def of(self, ts: dt.datetime) -> tuple[str, str]:
        day = "weekend" if ts.weekday() in self.weekend else "weekday"
        h = ts.hour
        for name, hi in zip(self.names, self.edges[1:]):
            if h < hi:
                return day, name
        raise AssertionError("unreachable: hour outside [0, 24)")


def build_behavior_features(
    calls: Iterable[CallEvent],
    users: Sequence[str],
    buckets: Buckets = Buckets(),
    before: Mapping[str, dt.datetime] | None = None,
) -> FeatureMatrix:
    """Count and total duration of calls/sms per direction, kind, day type and time of day.

    Events at or after ``before[user]`` are ignored when a cutoff is given.
    """
    keys = [
        (d, t, direction, kind)
        for d in ("weekday", "weekend")
        for t in buckets.names
        for direction in ("made", "received")
        for kind in ("call", "sms")
    ]
    col = {k: i for i, k in enumerate(keys)}
    row = {u: i for i, u in enumerate(users)}
    counts = np.zeros((len(users), len(keys)))
    durations = np.zeros((len(users), len(keys)))
    for ev in calls:
        i = row.get(ev.user_id)
        if i is None:
            continue
        if before is not None and ev.user_id in before and ev.timestamp >= before[ev.user_id]:
            continue
        j = col[(*buckets.of(ev.timestamp), ev.direction, ev.kind)]
        counts[i, j] += 1
        durations[i, j] += ev.duration
    names = [f"{d}_{t}_{di}_{k}_count" for d, t, di, k in keys]
    names += [f"{d}_{t}_{di}_{k}_duration" for d, t, di, k in keys]
    return FeatureMatrix(
        users, names, ("behavior",) * len(names), np.hstack([counts, durations])
    )


def build_sociodemographic_features(
    users: Sequence[UserRecord],
    usage: Iterable[AppUsage] = (),
    frequency_threshold: float = 1.0,
) -> FeatureMatrix:
    """Age, one-hot region, installed app count and frequent-app counts per category."""
    ids = [u.user_id for u in users]
    row = {u: i for i, u in enumerate(ids)}
    regions = sorted({u.region for u in users if u.region is not None})
    per_cat: dict[str, np.ndarray] = defaultdict(lambda: np.zeros(len(ids)))
    for rec in usage:
        i = row.get(rec.user_id)
        if i is not None and rec.uses_per_week >= frequency_threshold:
            per_cat[rec.app_category][i] += 1
    cols: dict[str, np.ndarray] = {
        "age": np.array([np.nan if u.age is None else u.age for u in users], dtype=float),
        "device_app_count": np.array([u.device_app_count for u in users], dtype=float),
    }
    for r in regions:
        cols[f"region_{r}"] = np.array([u.region == r for u in users], dtype=float)
    for cat in sorted(per_cat):
        cols[f"apps_{cat}"] = per_cat[cat]
    return FeatureMatrix.from_columns(ids, "sociodemographic", cols)
