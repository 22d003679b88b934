"""Binary credit-scoring learners: logistic regression, random forest, one-hidden-layer net.

All three share the same preprocessing, fitted on the training rows:
median imputation with a missingness indicator for every column that had
gaps, then standardisation to mean 0 / variance 1. Scores are the
probability of the Bad class.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .matrix import FeatureMatrix, LabeledMatrix

log = logging.getLogger(__name__)


class ConvergenceWarning(UserWarning):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class Preprocessor:
    features: tuple
    medians: np.ndarray
    indicators: np.ndarray  # column indices that get a missingness flag
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, m: FeatureMatrix) -> "Preprocessor":
        X = m.values
        miss = np.isnan(X)
        with np.errstate(all="ignore"):
            med = np.nanmedian(np.where(miss.all(axis=0), 0.0, X), axis=0) if X.size else np.zeros(X.shape[1])
        med = np.where(np.isnan(med), 0.0, med)
        ind = np.flatnonzero(miss.any(axis=0))
        pre = cls(tuple(m.columns), med, ind, np.zeros(0), np.zeros(0))
        Z = pre._raw(X)
        pre.mean = Z.mean(axis=0) if len(Z) else np.zeros(Z.shape[1])
        sd = Z.std(axis=0) if len(Z) else np.ones(Z.shape[1])
        pre.scale = np.where(sd > 0, sd, 1.0)
        return pre

    def _raw(self, X: np.ndarray) -> np.ndarray:
        miss = np.isnan(X)
        filled = np.where(miss, self.medians, X)
        return np.hstack([filled, miss[:, self.indicators].astype(float)])

    def transform(self, m: FeatureMatrix) -> np.ndarray:
        missing = [c for c in self.features if c not in m.columns]
        if missing:
            raise ValueError(f"matrix lacks training features {missing[:5]}")
        X = m.values if m.columns == self.features else m.select(columns=self.features).values
        return (self._raw(X) - self.mean) / self.scale

    @property
    def design_names(self) -> list[str]:
        return list(self.features) + [f"{self.features[i]}__missing" for i in self.indicators]


def _class_weights(y: np.ndarray, class_weight) -> np.ndarray:
    if class_weight is None:
        return np.ones(len(y))
    if class_weight == "balanced":
        n, pos = len(y), y.sum()
        w1 = n / (2.0 * max(pos, 1))
        w0 = n / (2.0 * max(n - pos, 1))
        return np.where(y == 1, w1, w0)
    raise ValueError(f"unknown class_weight {class_weight!r}")


@dataclass
class Model:
    kind: str
    pre: Preprocessor
    seed: int
    info: dict = field(default_factory=dict)

    @property
    def features(self) -> tuple:
        return self.pre.features

    def predict_proba(self, m: FeatureMatrix) -> np.ndarray:
        """Probability of Bad for each row of ``m``."""
        return np.clip(self._predict(self.pre.transform(m)), 0.0, 1.0)

    def score_vector(self, m: FeatureMatrix) -> dict:
        return dict(zip(m.ids, self.predict_proba(m).tolist()))

    def _predict(self, Z: np.ndarray) -> np.ndarray:
        raise NotImplementedError


# --
# Logistic regression


def logreg_objective(beta: np.ndarray, Z: np.ndarray, y: np.ndarray, w: np.ndarray, l2: float):
    """Penalised log-likelihood and its gradient; ``beta[0]`` is the unpenalised intercept."""
    eta = beta[0] + Z @ beta[1:]
    ll = -np.sum(w * (y * np.logaddexp(0, -eta) + (1 - y) * np.logaddexp(0, eta)))
    ll -= 0.5 * l2 * beta[1:] @ beta[1:]
    r = w * (y - expit(eta))
    grad = np.concatenate([[r.sum()], Z.T @ r - l2 * beta[1:]])
    return ll, grad


@dataclass
class LogisticModel(Model):
    beta: np.ndarray = None

    def _predict(self, Z):
        return expit(self.beta[0] + Z @ self.beta[1:])

    def coefficients(self, standardized: bool = True) -> dict:
        """Intercept and slopes, either on the standardised design or mapped back to raw units."""
        names = ["intercept"] + self.pre.design_names
        if standardized:
            return dict(zip(names, self.beta.tolist()))
        slopes = self.beta[1:] / self.pre.scale
        intercept = self.beta[0] - slopes @ self.pre.mean
        return dict(zip(names, [float(intercept), *slopes.tolist()]))


def train_logreg(
    train: LabeledMatrix,
    l2_penalty: float = 1.0,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-6,
    class_weight=None,
) -> LogisticModel:
    """L2-penalised logistic regression fitted by damped Newton ascent.

    Stops once the gradient norm drops below ``tol``; otherwise logs the
    final gradient norm and keeps the last iterate.
    """
    m, y = train
    y = np.asarray(y, dtype=float)
    if len(np.unique(y)) < 2:
        raise ValueError("logistic regression needs both classes")
    if l2_penalty < 0:
        raise ValueError("l2_penalty must be nonnegative")
    pre = Preprocessor.fit(m)
    Z = pre.transform(m)
    w = _class_weights(y, class_weight)
    k = Z.shape[1]
    beta = np.zeros(k + 1)
    p0 = np.average(y, weights=w)
    beta[0] = np.log(p0 / (1 - p0))
    Zi = np.hstack([np.ones((len(Z), 1)), Z])
    pen = np.full(k + 1, l2_penalty)
    pen[0] = 0.0
    ll, grad = logreg_objective(beta, Z, y, w, l2_penalty)
    gnorm = np.linalg.norm(grad)
    it = 0
    for it in range(1, max_iter + 1):
        if gnorm < tol:
            break
        p = expit(Zi @ beta)
        H = (Zi * (w * p * (1 - p))[:, None]).T @ Zi + np.diag(pen) + 1e-10 * np.eye(k + 1)
        step = np.linalg.solve(H, grad)
        t = 1.0
        while True:
            cand = beta + t * step
            ll_c, grad_c = logreg_objective(cand, Z, y, w, l2_penalty)
            if ll_c >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        beta, ll, grad = cand, ll_c, grad_c
        gnorm = np.linalg.norm(grad)
    converged = gnorm < tol
    if not converged:
        log.warning("logistic regression stopped after %d iterations, gradient norm %.3e", it, gnorm)
    return LogisticModel(
        "logistic_regression", pre, seed,
        {"iterations": it, "gradient_norm": float(gnorm), "converged": bool(converged),
         "l2_penalty": l2_penalty},
        beta,
    )


# --
# Random forest


@dataclass
class _Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, Z: np.ndarray) -> np.ndarray:
        node = np.zeros(len(Z), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            nd = node[idx]
            go_left = Z[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict(self, Z):
        return self.value[self.apply(Z)]


def best_split(Z: np.ndarray, y: np.ndarray, w: np.ndarray, features: np.ndarray, min_leaf: int):
    """Best Gini split over ``features``.

    Candidate rule ``x <= v`` for every observed value ``v`` that leaves at
    least ``min_leaf`` rows on each side. Returns ``(feature, threshold,
    impurity_decrease)`` or ``None`` when no split improves the node.
    """
    n = len(y)
    if n < 2 * min_leaf:
        return None
    X = Z[:, features]
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    wy = (w * y)[order]
    ww = w[order]
    cw = np.cumsum(ww, axis=0)[:-1]
    cb = np.cumsum(wy, axis=0)[:-1]
    tot_w, tot_b = ww[:, 0].sum(), wy[:, 0].sum()
    rw, rb = tot_w - cw, tot_b - cb
    with np.errstate(invalid="ignore", divide="ignore"):
        gl = 2.0 * cb * (cw - cb) / cw
        gr = 2.0 * rb * (rw - rb) / rw
    parent = 2.0 * tot_b * (tot_w - tot_b) / tot_w
    gain = parent - gl - gr  # in units of total weight
    pos = np.arange(1, n)[:, None]
    valid = (xs[:-1] < xs[1:]) & (pos >= min_leaf) & (n - pos >= min_leaf)
    gain = np.where(valid, gain, -np.inf)
    flat = int(np.argmax(gain.T.ravel()))
    f, i = divmod(flat, n - 1)
    g = gain[i, f]
    if not np.isfinite(g) or g <= 1e-12 * tot_w:
        return None
    return int(features[f]), float(xs[i, f]), float(g / tot_w)


def _grow_tree(Z, y, w, rng, max_depth, min_leaf, k_features):
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        ws = w[idx].sum()
        value.append(float((w[idx] * y[idx]).sum() / ws) if ws > 0 else 0.0)
        return len(feature) - 1

    root = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)), 0)]
    p = Z.shape[1]
    while stack:
        node, idx, depth = stack.pop()
        if depth >= max_depth or len(idx) < 2 * min_leaf or value[node] in (0.0, 1.0):
            continue
        feats = np.sort(rng.choice(p, size=min(k_features, p), replace=False))
        split = best_split(Z[idx], y[idx], w[idx], feats, min_leaf)
        if split is None:
            continue
        f, thr, _ = split
        mask = Z[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = f, thr
        left[node], right[node] = new_node(li), new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return _Tree(np.array(feature), np.array(threshold), np.array(left), np.array(right), np.array(value))


@dataclass
class ForestModel(Model):
    trees: list = field(default_factory=list)

    def _predict(self, Z):
        return np.mean([t.predict(Z) for t in self.trees], axis=0)


def train_random_forest(
    train: LabeledMatrix,
    trees: int = 100,
    max_depth: int | None = 8,
    min_leaf: int = 5,
    features_per_split: int | None = None,
    seed: int = 0,
    bootstrap: bool = True,
    class_weight=None,
) -> ForestModel:
    """Bagged Gini trees on random feature subsets.

    A tree scores a row by the Bad share of its leaf; the forest averages
    the trees. ``features_per_split`` defaults to the square root of the
    design width. The out-of-bag misclassification rate is kept in
    ``model.info["oob_error"]``.
    """
    if trees < 1:
        raise ValueError("need at least one tree")
    m, y = train
    y = np.asarray(y, dtype=float)
    pre = Preprocessor.fit(m)
    Z = pre.transform(m)
    w = _class_weights(y, class_weight)
    n, p = Z.shape
    k = features_per_split or max(1, int(round(np.sqrt(p))))
    depth = max_depth if max_depth is not None else np.iinfo(np.int64).max
    rng = np.random.default_rng(seed)
    forest = []
    oob_sum = np.zeros(n)
    oob_cnt = np.zeros(n)
    for _ in range(trees):
        if bootstrap:
            draw = rng.integers(0, n, size=n)
            counts = np.bincount(draw, minlength=n)
        else:
            counts = np.ones(n, dtype=np.int64)
        idx = np.flatnonzero(counts)
        # bootstrap multiplicity enters as a row weight
        tree = _grow_tree(Z[idx], y[idx], w[idx] * counts[idx], rng, depth, min_leaf, k)
        forest.append(tree)
        out = counts == 0
        if out.any():
            oob_sum[out] += tree.predict(Z[out])
            oob_cnt[out] += 1
    seen = oob_cnt > 0
    oob_err = float(np.mean((oob_sum[seen] / oob_cnt[seen] >= 0.5) != y[seen])) if seen.any() else float("nan")
    return ForestModel(
        "random_forest", pre, seed,
        {"trees": trees, "max_depth": max_depth, "min_leaf": min_leaf,
         "features_per_split": k, "oob_error": oob_err},
        forest,
    )


# --
# Feedforward network


def mlp_forward(params, Z):
    W1, b1, w2, b2 = params
    h = np.tanh(Z @ W1 + b1)
    return h, h @ w2 + b2


def mlp_loss_and_grad(params, Z, y, w, l2: float = 0.0):
    """Weighted mean cross-entropy of the net (plus L2 on weights) and its gradients."""
    W1, b1, w2, b2 = params
    h, logit = mlp_forward(params, Z)
    sw = w.sum()
    loss = np.sum(w * (y * np.logaddexp(0, -logit) + (1 - y) * np.logaddexp(0, logit))) / sw
    loss += 0.5 * l2 * (np.sum(W1 * W1) + w2 @ w2)
    d_logit = w * (expit(logit) - y) / sw
    g_w2 = h.T @ d_logit + l2 * w2
    g_b2 = d_logit.sum()
    d_h = np.outer(d_logit, w2) * (1 - h * h)
    g_W1 = Z.T @ d_h + l2 * W1
    g_b1 = d_h.sum(axis=0)
    return float(loss), [g_W1, g_b1, g_w2, g_b2]


@dataclass
class FeedforwardModel(Model):
    params: list = field(default_factory=list)

    def _predict(self, Z):
        return expit(mlp_forward(self.params, Z)[1])


def train_feedforward(
    train: LabeledMatrix,
    hidden_units: int = 16,
    epochs: int = 100,
    learning_rate: float = 0.1,
    seed: int = 0,
    batch_size: int = 64,
    l2: float = 1e-4,
    init_scale: float = 1.0,
    class_weight=None,
) -> FeedforwardModel:
    """One tanh hidden layer, sigmoid output, mini-batch SGD on cross-entropy.

    Weights start Glorot-uniform times ``init_scale``; a zero scale is
    refused because identical hidden units never break symmetry.
    """
    if hidden_units < 1:
        raise ValueError("hidden_units must be at least 1")
    if init_scale <= 0:
        raise ValueError("zero initialisation cannot break hidden-unit symmetry")
    m, y = train
    y = np.asarray(y, dtype=float)
    pre = Preprocessor.fit(m)
    Z = pre.transform(m)
    w = _class_weights(y, class_weight)
    n, p = Z.shape
    rng = np.random.default_rng(seed)
    lim1 = init_scale * np.sqrt(6.0 / (p + hidden_units))
    lim2 = init_scale * np.sqrt(6.0 / (hidden_units + 1))
    p0 = np.average(y, weights=w)
    params = [
        rng.uniform(-lim1, lim1, size=(p, hidden_units)),
        np.zeros(hidden_units),
        rng.uniform(-lim2, lim2, size=hidden_units),
        float(np.log(max(p0, 1e-6) / max(1 - p0, 1e-6))),
    ]
    history = []
    for ep in range(epochs):
        order = rng.permutation(n)
        for s in range(0, n, batch_size):
            b = order[s:s + batch_size]
            loss, grads = mlp_loss_and_grad(params, Z[b], y[b], w[b], l2)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"feedforward training diverged at epoch {ep} (loss {loss}); "
                    f"try a smaller learning rate than {learning_rate}"
                )
            params = [pa - learning_rate * g for pa, g in zip(params, grads)]
        history.append(mlp_loss_and_grad(params, Z, y, w, l2)[0])
    return FeedforwardModel(
        "feedforward_net", pre, seed,
        {"hidden_units": hidden_units, "epochs": epochs, "final_loss": history[-1] if history else None,
         "loss_history": history},
        params,
    )


TRAINERS = {
    "logistic_regression": train_logreg,
    "random_forest": train_random_forest,
    "feedforward_net": train_feedforward,
}


def train_model(kind: str, train: LabeledMatrix, seed: int = 0, **params) -> Model:
    try:
        fn = TRAINERS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}") from None
    return fn(train, seed=seed, **params)
