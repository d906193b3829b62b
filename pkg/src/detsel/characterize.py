"""Detector characterization, argmax rule tables and runtime selection."""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .detectors import (
    BUILTIN_DETECTORS,
    DEFAULT_EPS,
    ExternalDetectorError,
    KeypointParseError,
    repeatability,
    run_external_detector,
)
from .features import FeatureSettings, FeatureVector
from .image import GrayImage, read_image
from .model import OperatingCondition
from .transforms import KINDS, LADDER_SIZES, DatasetManifest, Kind

logger = logging.getLogger(__name__)

BUILTIN = "BUILTIN"
EXTERNAL = "EXTERNAL"


class CharacterizationError(RuntimeError):
    pass


class UnknownConditionError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class DetectorId:
    name: str
    source: str = BUILTIN


@dataclass(frozen=True)
class Detector:
    """A named detector: a builtin function or an external command template."""

    id: DetectorId
    params: dict = field(default_factory=dict, compare=False)
    command: str | None = None
    timeout: float | None = 60.0

    @property
    def name(self) -> str:
        return self.id.name

    def detect(self, img: GrayImage, path=None):
        if self.id.source == EXTERNAL:
            if path is None:
                raise ValueError(f"external detector {self.name} needs an image file")
            return run_external_detector(self.command, path, timeout=self.timeout)
        return BUILTIN_DETECTORS[self.name](img, **self.params)

    @classmethod
    def builtin(cls, name: str, **params) -> Detector:
        if name not in BUILTIN_DETECTORS:
            raise ValueError(f"unknown builtin detector {name!r}; choose from {sorted(BUILTIN_DETECTORS)}")
        return cls(DetectorId(name, BUILTIN), params)

    @classmethod
    def external(cls, name: str, command: str, timeout: float | None = 60.0) -> Detector:
        return cls(DetectorId(name, EXTERNAL), command=command, timeout=timeout)


def make_roster(builtin_names=(), external=None, timeout=60.0) -> list[Detector]:
    roster = [Detector.builtin(n) for n in builtin_names]
    roster += [Detector.external(n, cmd, timeout) for n, cmd in (external or {}).items()]
    names = [d.name for d in roster]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate detector names in roster: {names}")
    if not roster:
        raise ValueError("detector roster is empty")
    return roster


# -- characterization --------------------------------------------------------

CHAR_HEADER = ["detector", "kind", "level_index", "avg_repeatability", "support"]
RECORD_HEADER = ["detector", "scene_id", "kind", "level_index", "repeatability"]


@dataclass(frozen=True)
class Record:
    detector: str
    scene_id: str
    kind: Kind
    level_index: int
    rate: float


@dataclass
class CharacterizationTable:
    """Average repeatability per ``(detector, kind, level)`` with per-scene records."""

    entries: dict = field(default_factory=dict)  # (detector, kind, level) -> (avg, support)
    records: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    @classmethod
    def from_records(cls, records, failures=()) -> CharacterizationTable:
        groups = defaultdict(list)
        for r in records:
            groups[(r.detector, r.kind, r.level_index)].append(r.rate)
        entries = {key: (math.fsum(v) / len(v), len(v)) for key, v in groups.items()}
        return cls(dict(sorted(entries.items(), key=_entry_key)), list(records), list(failures))

    @property
    def detectors(self) -> list[str]:
        return sorted({d for d, _, _ in self.entries})

    @property
    def conditions(self) -> list[tuple[Kind, int]]:
        return sorted({(k, lv) for _, k, lv in self.entries}, key=lambda c: (KINDS.index(c[0]), c[1]))

    def avg(self, detector: str, kind, level: int) -> float:
        return self.entries[(detector, Kind(kind), level)][0]

    def support(self, detector: str, kind, level: int) -> int:
        return self.entries[(detector, Kind(kind), level)][1]

    def best_avg(self, kind, level: int) -> float:
        return max(self.avg(d, kind, level) for d in self.detectors)

    def global_best(self) -> str:
        """Detector with the highest mean of its averages over all conditions."""
        means = {d: np.mean([a for (dd, _, _), (a, _) in self.entries.items() if dd == d]) for d in self.detectors}
        return min(means, key=lambda d: (-means[d], d))

    def max_adjacent_difference(self) -> float:
        """Largest change in a detector's average between neighbouring levels."""
        best = 0.0
        for (d, k, lv), (a, _) in self.entries.items():
            nxt = self.entries.get((d, k, lv + 1))
            if nxt is not None:
                best = max(best, abs(nxt[0] - a))
        return best

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CHAR_HEADER)
            for (d, k, lv), (a, n) in self.entries.items():
                w.writerow([d, k.value, lv, repr(float(a)), n])

    def write_records(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RECORD_HEADER)
            for r in sorted(self.records, key=_record_key):
                w.writerow([r.detector, r.scene_id, r.kind.value, r.level_index, repr(float(r.rate))])

    @classmethod
    def read(cls, path, records_path=None) -> CharacterizationTable:
        entries = {}
        for row in _read_csv(path, CHAR_HEADER):
            entries[(row[0], Kind(row[1]), int(row[2]))] = (float(row[3]), int(row[4]))
        records = []
        if records_path is not None and os.path.exists(records_path):
            records = [Record(r[0], r[1], Kind(r[2]), int(r[3]), float(r[4])) for r in _read_csv(records_path, RECORD_HEADER)]
        return cls(entries, records)


def _entry_key(item):
    (d, k, lv), _ = item
    return (d, KINDS.index(k), lv)


def _record_key(r: Record):
    return (r.detector, r.scene_id, KINDS.index(r.kind), r.level_index)


def _read_csv(path, header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got != header:
            raise ValueError(f"{path}: expected header {','.join(header)}, got {got}")
        return [row for row in reader if row]


def _scene_records(detector: Detector, manifest: DatasetManifest, scene_id: str, eps: float, rate_fn):
    ref_path = manifest.reference_path(scene_id)
    records, failures = [], []
    try:
        ref_kps = detector.detect(read_image(ref_path), ref_path)
    except (ExternalDetectorError, KeypointParseError) as exc:
        rows = manifest.rows_for(scene_id)
        return [], [(detector.name, scene_id, r.kind, r.level_index, f"reference: {exc}") for r in rows]
    for row in manifest.rows_for(scene_id):
        path = manifest.target_path(row)
        try:
            tgt_kps = detector.detect(read_image(path), path)
        except (ExternalDetectorError, KeypointParseError) as exc:
            failures.append((detector.name, scene_id, row.kind, row.level_index, str(exc)))
            continue
        records.append(Record(detector.name, scene_id, row.kind, row.level_index, rate_fn(ref_kps, tgt_kps, eps)))
    return records, failures


def characterize(
    detectors,
    manifest: DatasetManifest,
    eps: float = DEFAULT_EPS,
    *,
    scenes=None,
    failure_tolerance: float = 0.0,
    workers: int = 1,
    rate_fn=repeatability,
) -> CharacterizationTable:
    """Average repeatability of each detector at each operating condition.

    Each reference is detected once per detector and compared against every
    target of its scene. Failed detections are dropped from the averages as
    long as they make up at most ``failure_tolerance`` of all attempts;
    otherwise :class:`CharacterizationError` is raised.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    detectors = list(detectors)
    if not detectors:
        raise ValueError("no detectors to characterize")
    scene_ids = list(scenes) if scenes is not None else manifest.scene_ids
    jobs = [(d, s) for d in detectors for s in scene_ids]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda job: _scene_records(job[0], manifest, job[1], eps, rate_fn), jobs))
    else:
        results = [_scene_records(d, manifest, s, eps, rate_fn) for d, s in jobs]

    records = [r for recs, _ in results for r in recs]
    failures = [f for _, fails in results for f in fails]
    attempts = len(records) + len(failures)
    if failures:
        logger.warning("%d of %d detections failed; first: %s", len(failures), attempts, failures[0][-1])
        if len(failures) > failure_tolerance * attempts:
            raise CharacterizationError(f"{len(failures)} of {attempts} detections failed: {failures[0][-1]}")
    table = CharacterizationTable.from_records(records, failures)
    expected = {(d.name, r.kind, r.level_index) for d in detectors for s in scene_ids for r in manifest.rows_for(s)}
    missing = expected - set(table.entries)
    if missing:
        d, k, lv = sorted(missing, key=lambda m: (m[0], KINDS.index(m[1]), m[2]))[0]
        raise CharacterizationError(f"no successful detections for {d} at {k}:{lv}")
    return table


# -- selection table ---------------------------------------------------------

SELECTION_HEADER = ["kind", "level_index", "detector", "winning_avg", "margin"]


@dataclass(frozen=True)
class Rule:
    detector: str
    winning_avg: float
    margin: float


@dataclass
class SelectionTable:
    """Rules mapping each operating condition to its best detector."""

    rules: dict  # (kind, level) -> Rule
    fallback: str | None = None

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SELECTION_HEADER)
            for (k, lv), r in self.rules.items():
                w.writerow([k.value, lv, r.detector, repr(float(r.winning_avg)), repr(float(r.margin))])

    @classmethod
    def read(cls, path, fallback=None) -> SelectionTable:
        rules = {(Kind(r[0]), int(r[1])): Rule(r[2], float(r[3]), float(r[4])) for r in _read_csv(path, SELECTION_HEADER)}
        return cls(rules, fallback)

    def is_total(self, sizes=None) -> bool:
        sizes = sizes or LADDER_SIZES
        return all((k, lv) in self.rules for k in KINDS for lv in range(sizes[k]))


def build_selection_table(char: CharacterizationTable) -> SelectionTable:
    """Pick the detector with the highest average at every condition.

    Ties go to the lexicographically smallest detector name. ``margin`` is
    the lead over the runner-up (infinite with a single detector).
    """
    detectors = char.detectors
    if not detectors:
        raise ValueError("characterization table has no detectors")
    rules = {}
    for kind, level in char.conditions:
        try:
            ranked = sorted(detectors, key=lambda d: (-char.avg(d, kind, level), d))
        except KeyError as exc:
            raise ValueError(f"characterization table is not total: missing {exc}") from None
        top = char.avg(ranked[0], kind, level)
        margin = top - char.avg(ranked[1], kind, level) if len(ranked) > 1 else math.inf
        rules[(kind, level)] = Rule(ranked[0], top, margin)
    return SelectionTable(rules, char.global_best())


def select_detector(table: SelectionTable, cond, *, fallback: bool = False) -> str:
    if isinstance(cond, OperatingCondition):
        key = (cond.kind, cond.level_index)
    else:
        key = (Kind(cond[0]), int(cond[1]))
    rule = table.rules.get(key)
    if rule is not None:
        return rule.detector
    if fallback and table.fallback is not None:
        return table.fallback
    raise UnknownConditionError(f"no selection rule for {key[0].value}:{key[1]}")


# -- runtime selection -------------------------------------------------------


@dataclass
class SelectionReport:
    features: FeatureVector
    condition: OperatingCondition
    detector: str
    timings_ms: dict

    def to_text(self, timing: bool = False) -> str:
        lines = [
            f"f_L {self.features.f_L!r}",
            f"f_B {self.features.f_B!r}",
            f"f_J {self.features.f_J!r}",
            f"kind {self.condition.kind.value}",
            f"level_index {self.condition.level_index}",
            f"detector {self.detector}",
        ]
        if timing:
            lines += [f"time_{stage}_ms {ms:.3f}" for stage, ms in self.timings_ms.items()]
        return "\n".join(lines) + "\n"

    def csv_row(self) -> list:
        f = self.features
        return [repr(f.f_L), repr(f.f_B), repr(f.f_J), self.condition.kind.value, self.condition.level_index, self.detector]


def select_for_images(
    ref: GrayImage,
    tgt: GrayImage,
    models,
    table: SelectionTable,
    extractor=None,
    *,
    fallback: bool = False,
) -> SelectionReport:
    """Pick a detector for ``tgt`` without running any detector.

    ``models`` exposes ``type_model_`` and ``amount_models_``; ``extractor``
    is anything with an ``extract(ref, tgt)`` method.
    """
    extractor = extractor or FeatureSettings()
    timings = {}
    t0 = time.perf_counter()
    fv = extractor.extract(ref, tgt)
    t1 = time.perf_counter()
    x = fv.as_array().reshape(1, -1)
    kind = Kind(str(models.type_model_.predict(x)[0]))
    t2 = time.perf_counter()
    level = int(models.amount_models_[kind].predict(x)[0])
    cond = OperatingCondition(kind, level)
    t3 = time.perf_counter()
    detector = select_detector(table, cond, fallback=fallback)
    t4 = time.perf_counter()
    timings["features"] = (t1 - t0) * 1e3
    timings["type"] = (t2 - t1) * 1e3
    timings["amount"] = (t3 - t2) * 1e3
    timings["lookup"] = (t4 - t3) * 1e3
    timings["total"] = (t4 - t0) * 1e3
    return SelectionReport(fv, cond, detector, timings)


def select_for_paths(ref_path, tgt_path, models, table, extractor=None, *, fallback=False) -> SelectionReport:
    t0 = time.perf_counter()
    ref, tgt = read_image(ref_path), read_image(tgt_path)
    load_ms = (time.perf_counter() - t0) * 1e3
    report = select_for_images(ref, tgt, models, table, extractor, fallback=fallback)
    report.timings_ms = {"load": load_ms, **report.timings_ms}
    report.timings_ms["total"] += load_ms
    return report


# -- evaluation --------------------------------------------------------------

GAP_HEADER = [
    "kind",
    "level_index",
    "n",
    "exact_rate",
    "selected_avg",
    "best_avg",
    "gap",
    "measured_selected_avg",
    "measured_best_avg",
    "measured_gap",
]


@dataclass(frozen=True)
class GapRow:
    kind: Kind
    level_index: int
    n: int
    exact_rate: float
    selected_avg: float
    best_avg: float
    measured_selected_avg: float = math.nan
    measured_best_avg: float = math.nan

    @property
    def gap(self) -> float:
        return self.selected_avg - self.best_avg

    @property
    def measured_gap(self) -> float:
        return self.measured_selected_avg - self.measured_best_avg


def evaluate_selection(char: CharacterizationTable, table: SelectionTable, cases, measured: CharacterizationTable | None = None) -> list[GapRow]:
    """Per-condition gap between the selected and the best detector.

    ``cases`` holds ``(scene_id, true_condition, predicted_condition)``
    triples. The gap compares characterized averages of the detector chosen
    for the predicted condition against the best average at the true
    condition, so it is zero wherever the prediction is exact. With
    ``measured`` (a table built from the evaluated scenes), the repeatability
    actually scored by the chosen detector on each pair is averaged too.
    """
    by_cond = defaultdict(list)
    for scene_id, true, pred in cases:
        by_cond[(true.kind, true.level_index)].append((scene_id, true, pred))
    per_scene = {}
    if measured is not None:
        per_scene = {(r.detector, r.scene_id, r.kind, r.level_index): r.rate for r in measured.records}

    rows = []
    for key in sorted(by_cond, key=lambda c: (KINDS.index(c[0]), c[1])):
        kind, level = key
        items = by_cond[key]
        chosen = [select_detector(table, pred, fallback=True) for _, _, pred in items]
        selected = [char.avg(d, kind, level) for d in chosen]
        exact = [pred == true for _, true, pred in items]
        m_sel = m_best = math.nan
        if measured is not None:
            m_sel = float(np.mean([per_scene[(d, s, kind, level)] for d, (s, _, _) in zip(chosen, items)]))
            m_best = measured.best_avg(kind, level)
        rows.append(
            GapRow(kind, level, len(items), float(np.mean(exact)), float(np.mean(selected)), char.best_avg(kind, level), m_sel, m_best)
        )
    return rows


def write_gap_csv(rows, path_or_file) -> None:
    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GAP_HEADER)
        for r in rows:
            w.writerow(
                [
                    r.kind.value,
                    r.level_index,
                    r.n,
                    repr(r.exact_rate),
                    repr(r.selected_avg),
                    repr(r.best_avg),
                    repr(r.gap),
                    repr(r.measured_selected_avg),
                    repr(r.measured_best_avg),
                    repr(r.measured_gap),
                ]
            )

    if isinstance(path_or_file, (str, os.PathLike, Path)):
        with open(path_or_file, "w", newline="") as fh:
            _write(fh)
    else:
        _write(path_or_file)
