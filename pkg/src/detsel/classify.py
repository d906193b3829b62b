"""Linear SVM classifiers for the transformation type and amount stages."""

from __future__ import annotations

import os

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .model import (
    LinearModel,
    ModelFormatError,
    OperatingCondition,
    as_condition,
    format_model,
    linear_scores,
    parse_model,
    predict_condition,
    predict_conditions,
)
from .transforms import KINDS, LADDER_SIZES, Kind

__all__ = [
    "LinearSVM",
    "ModelFormatError",
    "OperatingCondition",
    "OperatingConditionClassifier",
    "dumps_model",
    "load_model",
    "loads_model",
    "predict_condition",
    "save_model",
    "train_amount_stage",
    "train_type_stage",
]


class LinearSVM(ClassifierMixin, BaseEstimator):
    """Multiclass linear SVM trained by stochastic subgradient descent on the hinge loss.

    Features are standardized with training-set statistics. The bias is
    learned as the weight of a constant input and shares the L2 penalty.
    The step size at update ``t`` is ``1 / (lam * t)``; samples are
    visited in an order shuffled per epoch from ``seed``.

    ``multi_class="ovr"`` trains one binary scorer per class;
    ``"crammer_singer"`` trains the scorers jointly on the multiclass hinge
    loss, which suits ordered classes that a single one-vs-rest hyperplane
    cannot isolate. Prediction is the argmax of the scores in both cases,
    ties going to the earliest entry of ``classes_``.
    """

    def __init__(self, lam=1e-3, epochs=200, seed=0, multi_class="ovr", average=True):
        self.lam = lam
        self.epochs = epochs
        self.seed = seed
        self.multi_class = multi_class
        self.average = average

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, ensure_min_samples=2)
        if self.multi_class not in ("ovr", "crammer_singer"):
            raise ValueError(f"unknown multi_class {self.multi_class!r}")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("training data must contain at least two distinct labels")

        self.mu_ = X.mean(axis=0)
        sigma = X.std(axis=0)
        self.sigma_ = np.where(sigma > 0, sigma, 1.0)
        Z = np.hstack([(X - self.mu_) / self.sigma_, np.ones((len(X), 1))])

        W = _pegasos(Z, y_idx, len(self.classes_), float(self.lam), int(self.epochs), self.seed, self.multi_class, bool(self.average))
        self.coef_ = W[:, :-1].copy()
        self.intercept_ = W[:, -1].copy()
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        return linear_scores(self, check_array(X, dtype=np.float64))

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]

    @classmethod
    def from_arrays(cls, classes, mu, sigma, coef, intercept, **params) -> LinearSVM:
        """Assemble a fitted model from explicit parameters."""
        fitted = LinearModel(classes, mu, sigma, coef, intercept)
        model = cls(**params)
        for name in ("classes_", "mu_", "sigma_", "coef_", "intercept_"):
            setattr(model, name, getattr(fitted, name))
        model.n_features_in_ = fitted.n_features_in_
        return model


def _pegasos(Z, y, n_classes, lam, epochs, seed, multi_class, average):
    n, d = Z.shape
    rng = np.random.default_rng(seed)
    W = np.zeros((n_classes, d))
    W_avg = np.zeros_like(W)
    n_avg = 0
    sign = -np.ones(n_classes)
    t = 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        for i in order:
            t += 1
            eta = 1.0 / (lam * t)
            z = Z[i]
            yi = y[i]
            scores = W @ z
            W *= 1.0 - eta * lam
            if multi_class == "ovr":
                sign[:] = -1.0
                sign[yi] = 1.0
                active = sign * scores < 1.0
                if active.any():
                    W[active] += eta * np.outer(sign[active], z)
            else:
                scores[yi] -= 1.0
                r = int(np.argmax(scores))
                if r != yi:
                    W[yi] += eta * z
                    W[r] -= eta * z
        # average over the second half of training
        if average and epoch >= epochs // 2:
            W_avg += W
            n_avg += 1
    return W_avg / n_avg if average and n_avg else W


# -- model files -------------------------------------------------------------


def dumps_model(model: LinearSVM) -> str:
    check_is_fitted(model, "coef_")
    return format_model(model, model.get_params())


def loads_model(text: str) -> LinearSVM:
    m = parse_model(text)
    return LinearSVM.from_arrays(m.classes_, m.mu_, m.sigma_, m.coef_, m.intercept_, **m.params)


def save_model(model: LinearSVM, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_model(model))


def load_model(path: str | os.PathLike) -> LinearSVM:
    with open(path) as fh:
        return loads_model(fh.read())


# -- two-stage operating-condition classifier --------------------------------


def train_type_stage(X, kinds, **params) -> LinearSVM:
    kinds = np.asarray([Kind(k).value for k in kinds])
    missing = [k.value for k in KINDS if k.value not in set(kinds)]
    if missing:
        raise ValueError(f"type-stage corpus lacks kinds: {', '.join(missing)}")
    return LinearSVM(**params).fit(X, kinds)


def train_amount_stage(X, levels, kind, *, kinds=None, **params) -> LinearSVM:
    kind = Kind(kind)
    if kinds is not None and {Kind(k) for k in kinds} != {kind}:
        raise ValueError(f"amount-stage corpus for {kind} mixes kinds")
    levels = np.asarray(levels, dtype=np.int64)
    present = set(levels.tolist())
    expected = set(range(LADDER_SIZES[kind]))
    if present != expected:
        raise ValueError(f"{kind} amount-stage corpus is missing levels {sorted(expected - present)}")
    return LinearSVM(**params).fit(X, levels)


class OperatingConditionClassifier(ClassifierMixin, BaseEstimator):
    """Predict ``(kind, level)`` from feature vectors in two stages.

    A type model picks the degradation kind; a per-kind amount model then
    picks the ladder level. ``y`` is a sequence of ``(kind, level)`` pairs.
    """

    def __init__(self, lam=1e-5, epochs=1000, seed=0, type_multi_class="ovr", amount_multi_class="crammer_singer"):
        self.lam = lam
        self.epochs = epochs
        self.seed = seed
        self.type_multi_class = type_multi_class
        self.amount_multi_class = amount_multi_class

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        conds = [as_condition(c) for c in y]
        if len(conds) != len(X):
            raise ValueError("X and y have different lengths")
        kinds = np.array([c.kind.value for c in conds])
        levels = np.array([c.level_index for c in conds])
        common = {"lam": self.lam, "epochs": self.epochs, "seed": self.seed}
        self.type_model_ = train_type_stage(X, kinds, multi_class=self.type_multi_class, **common)
        self.amount_models_ = {}
        for kind in KINDS:
            sel = kinds == kind.value
            self.amount_models_[kind] = train_amount_stage(X[sel], levels[sel], kind, multi_class=self.amount_multi_class, **common)
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_models(cls, type_model: LinearSVM, amount_models: dict, **params) -> OperatingConditionClassifier:
        clf = cls(**params)
        clf.type_model_ = type_model
        clf.amount_models_ = {Kind(k): m for k, m in amount_models.items()}
        clf.n_features_in_ = type_model.n_features_in_
        return clf

    def predict(self, X):
        check_is_fitted(self, "type_model_")
        return predict_conditions(self.type_model_, self.amount_models_, check_array(X, dtype=np.float64))

    def score(self, X, y, sample_weight=None):
        pred = self.predict(X)
        return float(np.mean([p == as_condition(t) for p, t in zip(pred, y)]))
