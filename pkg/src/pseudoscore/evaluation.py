"""Model evaluation: AUC, Brier score, an EMP-style profit measure and paired fold comparisons.

Bad (defaulter) is the positive class throughout: a higher score means a
riskier borrower and a cutoff rejects every applicant scoring at or above it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import rankdata

from .data import Label

log = logging.getLogger(__name__)


def _as_arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(scores, Mapping):
        keys = [k for k in scores if k in labels]
        s = np.array([scores[k] for k in keys], dtype=float)
        lab = [labels[k] for k in keys]
    else:
        s = np.asarray(scores, dtype=float)
        lab = labels
    if isinstance(lab, Mapping):
        raise TypeError("labels must be a mapping only when scores are")
    y = np.array([_code(v) for v in lab], dtype=float)
    keep = y >= 0
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    return s[keep], y[keep]


def _code(v) -> int:
    if isinstance(v, Label):
        return {Label.BAD: 1, Label.GOOD: 0, Label.UNLABELED: -1}[v]
    return int(v)


def auc(scores, labels) -> float:
    """Probability a random Bad outranks a random Good, ties counting one half."""
    s, y = _as_arrays(scores, labels)
    n_bad = int(y.sum())
    n_good = len(y) - n_bad
    if n_bad == 0 or n_good == 0:
        raise ValueError("AUC needs both Good and Bad cases")
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_bad * (n_bad + 1) / 2.0
    return float(u / (n_bad * n_good))


def brier(scores, labels) -> float:
    s, y = _as_arrays(scores, labels)
    if len(y) == 0:
        raise ValueError("Brier score of an empty set")
    return float(np.mean((s - y) ** 2))


def roc_curve(scores, labels):
    """False/true positive rates at each distinct cutoff, highest cutoff first."""
    s, y = _as_arrays(scores, labels)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    tpr = np.r_[0.0, tp / max(y.sum(), 1)]
    fpr = np.r_[0.0, fp / max(len(y) - y.sum(), 1)]
    return fpr, tpr, np.r_[np.inf, s[last]]


@dataclass(frozen=True)
class ProfitParams:
    """Loss-fraction distribution and economics of the profit measure.

    The loss fraction lambda on a defaulted loan is 0 with probability
    ``p0``, 1 with probability ``p1`` and uniform on (0, 1) otherwise.
    ``roi`` is the return on a repaid loan. ``prior_bad`` falls back to the
    observed Bad share when left unset.
    """

    roi: float = 0.26
    p0: float = 0.55
    p1: float = 0.1
    prior_bad: float | None = None

    def __post_init__(self):
        if not 0.0 < self.roi < 1.0:
            raise ValueError("roi must lie in (0, 1)")
        if min(self.p0, self.p1) < 0 or self.p0 + self.p1 > 1.0 + 1e-12:
            raise ValueError("point masses must be nonnegative with p0 + p1 <= 1")
        if self.prior_bad is not None and not 0.0 < self.prior_bad < 1.0:
            raise ValueError("prior_bad must lie in (0, 1)")


QUAD_POINTS = 1001


def _rejection_curve(s: np.ndarray, y: np.ndarray):
    """Class-conditional rejection rates for every distinct cutoff, rejecting nobody first."""
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    bad = np.r_[0.0, np.cumsum(y)[last]]
    total = np.r_[0.0, last + 1.0]
    n_bad = y.sum()
    return bad / n_bad, (total - bad) / (len(y) - n_bad), total / len(y)


def profit_measure(scores, labels, params: ProfitParams = ProfitParams()) -> tuple[float, float]:
    """Expected (over lambda) maximum per-applicant profit of a score cutoff.

    For a cutoff rejecting Bad share ``Fb`` and Good share ``Fg`` the profit
    is ``lambda * pi_bad * Fb - roi * pi_good * Fg``. The best cutoff is
    taken per lambda, point masses at 0 and 1 are added exactly and the
    uniform middle is integrated with the trapezoid rule on 1001 points.

    Returns ``(emp, rejected_fraction)`` where the second item is the
    lambda-averaged share of applicants the optimal cutoff rejects.
    """
    s, y = _as_arrays(scores, labels)
    if y.sum() == 0 or y.sum() == len(y):
        raise ValueError("profit measure needs both Good and Bad cases")
    if params.p0 >= 1.0:
        log.warning("lambda is identically 0: rejecting is never profitable, EMP is 0")
    pi_b = params.prior_bad if params.prior_bad is not None else float(y.mean())
    pi_g = 1.0 - pi_b
    fb, fg, frac = _rejection_curve(s, y)
    lam = np.linspace(0.0, 1.0, QUAD_POINTS)
    profit = lam[:, None] * (pi_b * fb)[None, :] - params.roi * pi_g * fg[None, :]
    best = profit.argmax(axis=1)  # first maximiser: the smallest rejection
    peak = profit[np.arange(len(lam)), best]
    mid = 1.0 - params.p0 - params.p1
    emp = params.p0 * peak[0] + params.p1 * peak[-1] + mid * trapezoid(peak, lam)
    cut = params.p0 * frac[best[0]] + params.p1 * frac[best[-1]] + mid * trapezoid(frac[best], lam)
    return float(emp), float(cut)


class Comparison(NamedTuple):
    delta: float
    confidence_interval: tuple[float, float]
    p_value: float


def compare_models(per_fold_a, per_fold_b, bootstrap_rounds: int = 10_000, seed: int = 0,
                   level: float = 0.95) -> Comparison:
    """Paired bootstrap over folds of the mean metric difference ``a - b``.

    Resampled means are recentred on the observed mean and stretched by
    ``sqrt(n / (n - 1))`` so their spread matches the unbiased variance of
    the fold differences. The interval is the percentile interval of that
    distribution around the observed delta; the two-sided p-value is the
    share of recentred means at least as far from zero as the observed one.
    """
    a = np.asarray(per_fold_a, dtype=float)
    b = np.asarray(per_fold_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired fold vectors must have equal length")
    n = len(a)
    if n < 2:
        raise ValueError("need at least two folds")
    d = a - b
    delta = float(d.mean())
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, n, size=(bootstrap_rounds, n))
    null = (d[draws].mean(axis=1) - delta) * np.sqrt(n / (n - 1.0))
    tail = (1.0 - level) / 2.0
    lo, hi = delta + np.quantile(null, [tail, 1.0 - tail])
    eps = 1e-12 * max(1.0, abs(delta))
    extreme = np.count_nonzero(np.abs(null) >= abs(delta) - eps)
    p = (extreme + 1) / (bootstrap_rounds + 1)
    return Comparison(delta, (float(lo), float(hi)), float(min(p, 1.0)))
