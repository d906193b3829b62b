"""Recognize photometric degradations of an image pair and pick the local
feature detector expected to repeat best under them."""

import importlib

__version__ = "0.1.0"

# Names resolve on first access so that runtime selection never imports the
# scikit-learn training stack. The characterization routine itself is
# reached as ``detsel.characterize.characterize``.
_EXPORTS = {
    "characterize": (
        "CharacterizationTable",
        "Detector",
        "DetectorId",
        "SelectionReport",
        "SelectionTable",
        "build_selection_table",
        "select_detector",
        "select_for_images",
    ),
    "classify": ("LinearSVM", "OperatingConditionClassifier"),
    "detectors": ("Keypoint", "detect_dog", "detect_harris", "repeatability", "run_external_detector"),
    "extractor": ("GlobalFeatureExtractor",),
    "features": ("FeatureSettings", "FeatureVector", "extract_features"),
    "image": ("GrayImage", "load_image", "mean_intensity", "save_image"),
    "model": ("ConditionModels", "LinearModel", "OperatingCondition", "predict_condition"),
    "transforms": ("Kind", "gaussian_blur", "generate_dataset", "jpeg_roundtrip", "light_reduce"),
}
_ORIGIN = {name: module for module, names in _EXPORTS.items() for name in names}

__all__ = sorted(_ORIGIN)


def __getattr__(name):
    module = _ORIGIN.get(name)
    if module is None:
        raise AttributeError(f"module 'detsel' has no attribute {name!r}")
    value = getattr(importlib.import_module(f".{module}", __name__), name)
    globals()[name] = value
    return value


def __dir__():
    return sorted(set(globals()) | set(__all__))
