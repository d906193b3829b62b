"""scikit-learn transformer over image pairs."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .features import FEATURE_NAMES, REBLUR_LENGTH, WANG_ALPHA, WANG_BETA, WANG_GAMMAS, FeatureSettings, FeatureVector
from .image import GrayImage


class GlobalFeatureExtractor(TransformerMixin, BaseEstimator):
    """Map a sequence of ``(reference, target)`` image pairs to an ``(n, 3)`` array.

    Stateless: ``fit`` only validates parameters.
    """

    def __init__(
        self,
        jpeg_normalized=False,
        reblur_length=REBLUR_LENGTH,
        alpha=WANG_ALPHA,
        beta=WANG_BETA,
        gammas=WANG_GAMMAS,
    ):
        self.jpeg_normalized = jpeg_normalized
        self.reblur_length = reblur_length
        self.alpha = alpha
        self.beta = beta
        self.gammas = gammas

    def fit(self, X=None, y=None):
        if int(self.reblur_length) < 2:
            raise ValueError(f"reblur_length must be >= 2, got {self.reblur_length}")
        if len(self.gammas) != 3:
            raise ValueError("gammas must hold three exponents")
        self.n_features_out_ = 3
        return self

    def settings(self) -> FeatureSettings:
        return FeatureSettings(self.jpeg_normalized, int(self.reblur_length), self.alpha, self.beta, tuple(self.gammas))

    def extract(self, ref: GrayImage, tgt: GrayImage) -> FeatureVector:
        return self.settings().extract(ref, tgt)

    def transform(self, X):
        rows = [self.extract(ref, tgt).as_array() for ref, tgt in X]
        return np.array(rows, dtype=np.float64).reshape(len(rows), 3)

    def get_feature_names_out(self, input_features=None):
        return np.array(FEATURE_NAMES, dtype=object)
