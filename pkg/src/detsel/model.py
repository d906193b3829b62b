"""Fitted linear models and operating conditions, without the training stack.

Selection at runtime only needs to read model files and take an argmax, so
this module depends on numpy alone and keeps command-line start-up short.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .transforms import KINDS, LADDER_SIZES, Kind

MODEL_MAGIC = "DPSEL-MODEL v1"


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class OperatingCondition:
    kind: Kind
    level_index: int

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        size = LADDER_SIZES[self.kind]
        if not 0 <= self.level_index < size:
            raise ValueError(f"{self.kind} level {self.level_index} outside ladder of size {size}")

    def __str__(self):
        return f"{self.kind.value}:{self.level_index}"


def as_condition(c) -> OperatingCondition:
    return c if isinstance(c, OperatingCondition) else OperatingCondition(Kind(c[0]), int(c[1]))


def linear_scores(model, X) -> np.ndarray:
    """Class scores of standardized inputs; ``model`` carries the fitted attributes."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.coef_.shape[1]:
        raise ValueError(f"expected {model.coef_.shape[1]} features, got shape {X.shape}")
    return ((X - model.mu_) / model.sigma_) @ model.coef_.T + model.intercept_


@dataclass
class LinearModel:
    """Multiclass linear scorer; the prediction is the first maximal score."""

    classes_: np.ndarray
    mu_: np.ndarray
    sigma_: np.ndarray
    coef_: np.ndarray
    intercept_: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.classes_ = np.asarray(self.classes_)
        self.mu_ = np.asarray(self.mu_, dtype=np.float64)
        self.sigma_ = np.asarray(self.sigma_, dtype=np.float64)
        self.coef_ = np.atleast_2d(np.asarray(self.coef_, dtype=np.float64))
        self.intercept_ = np.asarray(self.intercept_, dtype=np.float64)
        if not (len(self.classes_) == len(self.coef_) == len(self.intercept_) >= 2):
            raise ValueError("classes, weight rows and biases must have equal length >= 2")
        if not (self.coef_.shape[1] == len(self.mu_) == len(self.sigma_)):
            raise ValueError("weights, mu and sigma disagree on the feature count")

    @property
    def n_features_in_(self) -> int:
        return self.coef_.shape[1]

    def decision_function(self, X) -> np.ndarray:
        return linear_scores(self, X)

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def format_model(model, params: dict) -> str:
    classes = list(model.classes_)
    label_type = "int" if all(isinstance(c, (int, np.integer)) for c in classes) else "str"
    lines = [
        MODEL_MAGIC,
        f"labels {label_type} " + " ".join(str(c) for c in classes),
        "mu " + _fmt(model.mu_),
        "sigma " + _fmt(model.sigma_),
    ]
    for c, w, b in zip(classes, model.coef_, model.intercept_):
        lines.append(f"weights {c} {_fmt(w)} {repr(float(b))}")
    lines.append("config " + " ".join(f"{k}={params[k]}" for k in sorted(params)))
    return "\n".join(lines) + "\n"


def _parse_param(value: str):
    if value in ("True", "False"):
        return value == "True"
    for conv in (int, float):
        try:
            return conv(value)
        except ValueError:
            pass
    return value


def parse_model(text: str) -> LinearModel:
    lines = text.splitlines()
    if not lines or lines[0] != MODEL_MAGIC:
        raise ModelFormatError("missing model magic line")
    try:
        fields = [ln.split() for ln in lines[1:] if ln.strip()]
        if fields[0][0] != "labels":
            raise ModelFormatError("expected labels line")
        label_type, *labels = fields[0][1:]
        if label_type == "int":
            classes = np.array([int(c) for c in labels], dtype=np.int64)
        else:
            classes = np.array(labels, dtype=str)
        if fields[1][0] != "mu" or fields[2][0] != "sigma":
            raise ModelFormatError("expected mu and sigma lines")
        mu = [float(v) for v in fields[1][1:]]
        sigma = [float(v) for v in fields[2][1:]]
        coef, intercept = [], []
        for row in fields[3 : 3 + len(classes)]:
            if row[0] != "weights" or row[1] != str(classes[len(coef)]):
                raise ModelFormatError(f"unexpected weight row {' '.join(row[:2])}")
            vals = [float(v) for v in row[2:]]
            coef.append(vals[:-1])
            intercept.append(vals[-1])
        if len(coef) != len(classes) or any(len(w) != len(mu) for w in coef):
            raise ModelFormatError("weight rows do not match the label and feature counts")
        params = {}
        for row in fields[3 + len(classes) :]:
            if row[0] == "config":
                params = {k: _parse_param(v) for k, v in (item.split("=", 1) for item in row[1:])}
        return LinearModel(classes, mu, sigma, coef, intercept, params)
    except (IndexError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model file: {exc}") from exc


def read_model(path: str | os.PathLike) -> LinearModel:
    with open(path) as fh:
        return parse_model(fh.read())


def predict_condition(type_model, amount_models: dict, x) -> OperatingCondition:
    x = np.asarray(list(x) if not isinstance(x, np.ndarray) else x, dtype=np.float64).reshape(1, -1)
    kind = Kind(str(type_model.predict(x)[0]))
    if kind not in amount_models:
        raise KeyError(f"no amount model for {kind}")
    level = int(amount_models[kind].predict(x)[0])
    return OperatingCondition(kind, level)


def predict_conditions(type_model, amount_models: dict, X) -> np.ndarray:
    """Two-stage prediction for every row of ``X`` as an object array of conditions."""
    X = np.asarray(X, dtype=np.float64)
    kinds = type_model.predict(X)
    out = np.empty(len(X), dtype=object)
    for kind in KINDS:
        sel = kinds == kind.value
        if sel.any():
            levels = amount_models[kind].predict(X[sel])
            out[np.flatnonzero(sel)] = [OperatingCondition(kind, int(lv)) for lv in levels]
    return out


@dataclass
class ConditionModels:
    """Loaded type and per-kind amount models."""

    type_model_: LinearModel
    amount_models_: dict

    def predict(self, X) -> np.ndarray:
        return predict_conditions(self.type_model_, self.amount_models_, X)

    def score(self, X, y) -> float:
        pred = self.predict(X)
        return float(np.mean([p == as_condition(t) for p, t in zip(pred, y)]))
