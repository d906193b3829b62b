"""End-to-end pipeline steps shared by the command line and the tests."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .characterize import (
    CharacterizationTable,
    SelectionTable,
    build_selection_table,
    characterize,
    evaluate_selection,
    make_roster,
    select_for_paths,
    write_gap_csv,
)
from .config import RunConfig
from .features import FeatureSettings
from .image import read_image, write_image
from .model import ConditionModels, OperatingCondition, read_model
from .scenes import synth_corpus
from .transforms import KINDS, DatasetManifest, Kind, generate_dataset, load_pair

if TYPE_CHECKING:
    from .classify import OperatingConditionClassifier

logger = logging.getLogger(__name__)

FEATURE_HEADER = ["scene_id", "kind", "level_index", "f_L", "f_B", "f_J"]


class DataError(ValueError):
    """Missing or inconsistent input data."""


def split_scenes(scene_ids, fraction: float, seed: int) -> tuple[list[str], list[str]]:
    """Scene-level train/test split, reproducible from ``seed``."""
    ids = sorted(scene_ids)
    n_train = int(round(fraction * len(ids)))
    if n_train < 1 or n_train >= len(ids):
        raise DataError(f"{len(ids)} scenes cannot be split {fraction:g}/{1 - fraction:g} into two nonempty sets")
    order = np.random.default_rng(seed).permutation(len(ids))
    train = sorted(ids[i] for i in order[:n_train])
    test = sorted(ids[i] for i in order[n_train:])
    return train, test


def extractor_for(cfg: RunConfig) -> FeatureSettings:
    return FeatureSettings(jpeg_normalized=cfg.jpeg_normalized)


# -- generate ----------------------------------------------------------------


def synthesize_corpus(cfg: RunConfig, n: int) -> list[Path]:
    cfg.corpus_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for scene_id, img in synth_corpus(n, cfg.seed, cfg.scene_size, cfg.scene_size):
        path = cfg.corpus_dir / f"{scene_id}.pgm"
        write_image(path, img)
        paths.append(path)
    return paths


def read_corpus(corpus_dir: Path):
    if not corpus_dir.is_dir():
        raise DataError(f"corpus directory not found: {corpus_dir}")
    files = sorted(corpus_dir.glob("*.pgm")) + sorted(corpus_dir.glob("*.pnm"))
    if not files:
        raise DataError(f"no .pgm images in corpus directory {corpus_dir}")
    return [(f.stem, read_image(f)) for f in files]


def run_generate(cfg: RunConfig) -> DatasetManifest:
    scenes = read_corpus(cfg.corpus_dir)
    manifest = generate_dataset(scenes, cfg.ladders, cfg.dataset_dir)
    logger.info("wrote %d targets for %d scenes to %s", len(manifest.rows), len(scenes), cfg.dataset_dir)
    return manifest


def read_manifest(cfg: RunConfig) -> DatasetManifest:
    if not cfg.manifest_path.exists():
        raise DataError(f"manifest not found: {cfg.manifest_path} (run 'generate' first)")
    return DatasetManifest.read(cfg.manifest_path)


# -- features ----------------------------------------------------------------


@dataclass
class FeatureSet:
    scene_ids: np.ndarray
    conditions: list
    X: np.ndarray

    def subset(self, scenes) -> FeatureSet:
        keep = np.isin(self.scene_ids, list(scenes))
        return FeatureSet(self.scene_ids[keep], [c for c, k in zip(self.conditions, keep) if k], self.X[keep])

    @property
    def kinds(self) -> np.ndarray:
        return np.array([c.kind.value for c in self.conditions])

    @property
    def levels(self) -> np.ndarray:
        return np.array([c.level_index for c in self.conditions])

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(FEATURE_HEADER)
            for sid, c, x in zip(self.scene_ids, self.conditions, self.X):
                w.writerow([sid, c.kind.value, c.level_index, *(repr(float(v)) for v in x)])

    @classmethod
    def read(cls, path) -> FeatureSet:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            if next(reader, None) != FEATURE_HEADER:
                raise DataError(f"{path}: bad feature header")
            rows = [r for r in reader if r]
        return cls(
            np.array([r[0] for r in rows]),
            [OperatingCondition(Kind(r[1]), int(r[2])) for r in rows],
            np.array([[float(v) for v in r[3:6]] for r in rows]).reshape(-1, 3),
        )


def extract_manifest_features(manifest: DatasetManifest, extractor) -> FeatureSet:
    X, ids, conds = [], [], []
    ref_id, ref = None, None
    for row in manifest.rows:
        if row.scene_id != ref_id:
            ref_id, ref = row.scene_id, read_image(manifest.reference_path(row.scene_id))
        tgt = read_image(manifest.target_path(row))
        if tgt.shape != ref.shape:
            raise DataError(f"{manifest.target_path(row)}: size differs from its reference")
        X.append(extractor.extract(ref, tgt).as_array())
        ids.append(row.scene_id)
        conds.append(OperatingCondition(row.kind, row.level_index))
    return FeatureSet(np.array(ids), conds, np.array(X).reshape(-1, 3))


def load_or_extract_features(cfg: RunConfig, manifest: DatasetManifest, *, refresh: bool = False) -> FeatureSet:
    path = cfg.work_dir / "features.csv"
    if path.exists() and not refresh:
        return FeatureSet.read(path)
    feats = extract_manifest_features(manifest, extractor_for(cfg))
    cfg.work_dir.mkdir(parents=True, exist_ok=True)
    feats.write(path)
    return feats


# -- train -------------------------------------------------------------------


@dataclass
class TrainReport:
    n_train: int
    n_test: int
    type_accuracy: float
    amount_exact: dict
    amount_within_one: dict
    condition_accuracy: float
    type_confusion: dict

    def lines(self) -> list[str]:
        out = [
            f"train_vectors {self.n_train}",
            f"test_vectors {self.n_test}",
            f"type_accuracy {self.type_accuracy:.4f}",
        ]
        for k in KINDS:
            out.append(f"amount_exact_{k.value} {self.amount_exact[k]:.4f}")
            out.append(f"amount_within1_{k.value} {self.amount_within_one[k]:.4f}")
        out.append(f"condition_accuracy {self.condition_accuracy:.4f}")
        for (t, p), n in sorted(self.type_confusion.items()):
            if t != p:
                out.append(f"type_confusion {t}->{p} {n}")
        return out


def classifier_for(cfg: RunConfig) -> OperatingConditionClassifier:
    # training is the only step that needs scikit-learn; selection stays light
    from .classify import OperatingConditionClassifier

    return OperatingConditionClassifier(
        lam=cfg.lam,
        epochs=cfg.epochs,
        seed=cfg.seed,
        type_multi_class=cfg.type_multi_class,
        amount_multi_class=cfg.amount_multi_class,
    )


def evaluate_classifier(clf, test: FeatureSet, n_train: int) -> TrainReport:
    kinds_pred = clf.type_model_.predict(test.X)
    kinds_true = test.kinds
    confusion = {}
    for t, p in zip(kinds_true, kinds_pred):
        confusion[(t, p)] = confusion.get((t, p), 0) + 1
    exact, within = {}, {}
    for kind in KINDS:
        sel = kinds_true == kind.value
        pred = clf.amount_models_[kind].predict(test.X[sel]).astype(int)
        exact[kind] = float(np.mean(pred == test.levels[sel]))
        within[kind] = float(np.mean(np.abs(pred - test.levels[sel]) <= 1))
    return TrainReport(
        n_train,
        len(test.X),
        float(np.mean(kinds_pred == kinds_true)),
        exact,
        within,
        clf.score(test.X, test.conditions),
        confusion,
    )


def model_paths(cfg: RunConfig) -> dict:
    paths = {"type": cfg.model_dir / "type.model"}
    paths.update({k: cfg.model_dir / f"amount_{k.value}.model" for k in KINDS})
    return paths


def run_train(cfg: RunConfig) -> tuple[OperatingConditionClassifier, TrainReport]:
    manifest = read_manifest(cfg)
    feats = load_or_extract_features(cfg, manifest, refresh=True)
    train_ids, test_ids = split_scenes(manifest.scene_ids, cfg.train_fraction, cfg.seed)
    train, test = feats.subset(train_ids), feats.subset(test_ids)
    from .classify import save_model

    clf = classifier_for(cfg).fit(train.X, train.conditions)

    cfg.model_dir.mkdir(parents=True, exist_ok=True)
    paths = model_paths(cfg)
    save_model(clf.type_model_, paths["type"])
    for k in KINDS:
        save_model(clf.amount_models_[k], paths[k])
    write_split(cfg.work_dir / "split.csv", train_ids, test_ids)
    return clf, evaluate_classifier(clf, test, len(train.X))


def write_split(path, train_ids, test_ids) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scene_id", "split"])
        for s in train_ids:
            w.writerow([s, "train"])
        for s in test_ids:
            w.writerow([s, "test"])


def load_classifier(cfg: RunConfig) -> ConditionModels:
    paths = model_paths(cfg)
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        raise DataError(f"model files missing: {', '.join(missing)} (run 'train' first)")
    return ConditionModels(read_model(paths["type"]), {k: read_model(paths[k]) for k in KINDS})


# -- characterize ------------------------------------------------------------


def table_paths(cfg: RunConfig) -> dict:
    return {
        "char": cfg.work_dir / "characterization.csv",
        "records": cfg.work_dir / "repeatability_records.csv",
        "selection": cfg.work_dir / "selection.csv",
    }


def roster_for(cfg: RunConfig):
    return make_roster(cfg.detectors, cfg.external, cfg.timeout)


def run_characterize(cfg: RunConfig) -> tuple[CharacterizationTable, SelectionTable]:
    """Characterize the roster on the training scenes and build the rule table."""
    manifest = read_manifest(cfg)
    train_ids, _ = split_scenes(manifest.scene_ids, cfg.train_fraction, cfg.seed)
    char = characterize(
        roster_for(cfg),
        manifest,
        cfg.eps,
        scenes=train_ids,
        failure_tolerance=cfg.failure_tolerance,
        workers=cfg.workers,
    )
    table = build_selection_table(char)
    paths = table_paths(cfg)
    cfg.work_dir.mkdir(parents=True, exist_ok=True)
    char.write(paths["char"])
    char.write_records(paths["records"])
    table.write(paths["selection"])
    return char, table


def load_tables(cfg: RunConfig) -> tuple[CharacterizationTable, SelectionTable]:
    paths = table_paths(cfg)
    if not paths["char"].exists() or not paths["selection"].exists():
        raise DataError(f"tables missing in {cfg.work_dir} (run 'characterize' first)")
    char = CharacterizationTable.read(paths["char"], paths["records"])
    return char, SelectionTable.read(paths["selection"], fallback=char.global_best())


# -- select / evaluate -------------------------------------------------------


def run_select(cfg: RunConfig, ref_path, tgt_path, *, models=None, tables=None):
    models = models or load_classifier(cfg)
    _, table = tables or load_tables(cfg)
    return select_for_paths(ref_path, tgt_path, models, table, extractor_for(cfg), fallback=cfg.fallback)


def run_evaluate(cfg: RunConfig, *, oracle: bool = False, measure: bool = True, out_path=None):
    """Replay the test split through selection and report per-condition gaps."""
    manifest = read_manifest(cfg)
    feats = load_or_extract_features(cfg, manifest)
    _, test_ids = split_scenes(manifest.scene_ids, cfg.train_fraction, cfg.seed)
    test = feats.subset(test_ids)
    char, table = load_tables(cfg)
    if oracle:
        predicted = list(test.conditions)
    else:
        predicted = list(load_classifier(cfg).predict(test.X))
    cases = list(zip(test.scene_ids, test.conditions, predicted))
    measured = None
    if measure:
        measured = characterize(
            roster_for(cfg),
            manifest,
            cfg.eps,
            scenes=test_ids,
            failure_tolerance=cfg.failure_tolerance,
            workers=cfg.workers,
        )
    rows = evaluate_selection(char, table, cases, measured)
    if out_path is not None:
        write_gap_csv(rows, out_path)
    return rows, char


def pair_for(manifest: DatasetManifest, scene_id: str, kind: Kind, level: int):
    for row in manifest.rows_for(scene_id):
        if row.kind == kind and row.level_index == level:
            return manifest.reference_path(scene_id), manifest.target_path(row), load_pair(manifest, row)
    raise DataError(f"no {kind}:{level} target for scene {scene_id}")
