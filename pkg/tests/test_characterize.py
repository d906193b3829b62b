import io
import math
import shlex
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from detsel.characterize import (
    CharacterizationError,
    CharacterizationTable,
    Detector,
    Record,
    SelectionTable,
    UnknownConditionError,
    build_selection_table,
    characterize,
    evaluate_selection,
    make_roster,
    select_detector,
    select_for_images,
    select_for_paths,
    write_gap_csv,
)
from detsel.classify import OperatingCondition, OperatingConditionClassifier
from detsel.transforms import KINDS, LADDER_SIZES, Kind, generate_dataset

ALL_CONDITIONS = [(k, lv) for k in KINDS for lv in range(LADDER_SIZES[k])]


def table_from(avgs):
    """``avgs`` maps ``(detector, kind, level)`` to an average with support 1."""
    return CharacterizationTable.from_records([Record(d, "s", k, lv, a) for (d, k, lv), a in avgs.items()])


def mirrored_table():
    """Six region detectors with crossing curves under blur and distinct winners elsewhere."""
    avgs = {}
    for kind, lv in ALL_CONDITIONS:
        t = lv / (LADDER_SIZES[kind] - 1)
        for name in ("EBR", "MSER", "IBR", "SALIENT", "SFOP", "SURF"):
            avgs[(name, kind, lv)] = 0.3 * (1 - t)
        if kind is Kind.JPEG:
            avgs[("SURF", kind, lv)] = 0.7 - 0.2 * t
            avgs[("IBR", kind, lv)] = 0.6 - 0.2 * t
        elif kind is Kind.LIGHT:
            avgs[("SFOP", kind, lv)] = 0.65 - 0.2 * t
            avgs[("SALIENT", kind, lv)] = 0.46
        else:
            avgs[("SURF", kind, lv)] = 0.75 - 0.6 * t
            avgs[("IBR", kind, lv)] = 0.68 - 0.45 * t
    # blur 1.5 and 2.0 sigma, where SURF and IBR cross
    avgs[("SURF", Kind.BLUR, 2)], avgs[("IBR", Kind.BLUR, 2)] = 0.5854, 0.5578
    avgs[("SURF", Kind.BLUR, 3)], avgs[("IBR", Kind.BLUR, 3)] = 0.436, 0.488
    return table_from(avgs)


class TestCharacterizationTable:
    def test_average_and_support(self):
        char = CharacterizationTable.from_records(
            [Record("harris", "a", Kind.BLUR, 1, 0.4), Record("harris", "b", Kind.BLUR, 1, 0.6)]
        )
        assert char.avg("harris", Kind.BLUR, 1) == pytest.approx(0.5)
        assert char.support("harris", "BLUR", 1) == 2

    def test_max_adjacent_difference(self):
        char = table_from({("d", Kind.LIGHT, 0): 0.9, ("d", Kind.LIGHT, 1): 0.6, ("d", Kind.LIGHT, 2): 0.55})
        assert char.max_adjacent_difference() == pytest.approx(0.3)

    def test_csv_round_trip(self, tmp_path):
        char = mirrored_table()
        char.write(tmp_path / "c.csv")
        char.write_records(tmp_path / "r.csv")
        back = CharacterizationTable.read(tmp_path / "c.csv", tmp_path / "r.csv")
        assert back.entries == char.entries
        assert sorted(back.records, key=repr) == sorted(char.records, key=repr)

    def test_bad_header(self, tmp_path):
        (tmp_path / "c.csv").write_text("a,b\n")
        with pytest.raises(ValueError, match="header"):
            CharacterizationTable.read(tmp_path / "c.csv")


class TestSelection:
    def test_dominant_detector_wins_everywhere(self):
        avgs = {}
        for kind, lv in ALL_CONDITIONS:
            avgs[("good", kind, lv)] = 0.8
            avgs[("poor", kind, lv)] = 0.2
        table = build_selection_table(table_from(avgs))
        assert len(table.rules) == 35
        assert table.is_total()
        assert {r.detector for r in table.rules.values()} == {"good"}
        assert table.rules[(Kind.JPEG, 0)].margin == pytest.approx(0.6)

    def test_blur_crossing(self):
        table = build_selection_table(mirrored_table())
        assert select_detector(table, (Kind.BLUR, 2)) == "SURF"
        assert select_detector(table, (Kind.BLUR, 3)) == "IBR"

    def test_mirrored_light_and_jpeg(self):
        table = build_selection_table(mirrored_table())
        assert all(select_detector(table, (Kind.JPEG, lv)) == "SURF" for lv in range(13))
        # light ladder: 30..85 percent -> SFOP, 90 percent -> SALIENT
        assert all(select_detector(table, (Kind.LIGHT, lv)) == "SFOP" for lv in range(12))
        assert select_detector(table, (Kind.LIGHT, 12)) == "SALIENT"

    def test_ties_break_lexicographically(self):
        char = table_from({("zeta", Kind.BLUR, 0): 0.5, ("alpha", Kind.BLUR, 0): 0.5, ("mid", Kind.BLUR, 0): 0.4})
        rule = build_selection_table(char).rules[(Kind.BLUR, 0)]
        assert rule.detector == "alpha"
        assert rule.margin == 0.0

    def test_single_detector_margin(self):
        rule = build_selection_table(table_from({("only", Kind.BLUR, 0): 0.3})).rules[(Kind.BLUR, 0)]
        assert rule.margin == math.inf

    def test_partial_table_rejected(self):
        char = table_from({("a", Kind.BLUR, 0): 0.5, ("b", Kind.BLUR, 1): 0.5})
        with pytest.raises(ValueError, match="not total"):
            build_selection_table(char)

    def test_lookup_domain_and_fallback(self):
        table = SelectionTable({(Kind.BLUR, 0): build_selection_table(mirrored_table()).rules[(Kind.BLUR, 0)]}, fallback="SURF")
        assert select_detector(table, OperatingCondition(Kind.BLUR, 0)) == "SURF"
        with pytest.raises(UnknownConditionError):
            select_detector(table, (Kind.LIGHT, 4))
        assert select_detector(table, (Kind.LIGHT, 4), fallback=True) == "SURF"

    @given(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3), st.floats(0.01, 100.0))
    def test_argmax_invariant_under_positive_scaling(self, values, c):
        names = ["a", "b", "c"]
        base = build_selection_table(table_from({(n, Kind.BLUR, 0): v for n, v in zip(names, values)}))
        scaled = build_selection_table(table_from({(n, Kind.BLUR, 0): v * c for n, v in zip(names, values)}))
        best = max(values)
        winners = {n for n, v in zip(names, values) if v == best}
        assert base.rules[(Kind.BLUR, 0)].detector in winners
        # scaling can merge nearly tied floats, never reorder distinct ones
        assert scaled.rules[(Kind.BLUR, 0)].detector in {n for n, v in zip(names, values) if v * c == best * c}

    def test_rule_is_best_average(self):
        char = mirrored_table()
        table = build_selection_table(char)
        for (kind, lv), rule in table.rules.items():
            assert rule.winning_avg == char.best_avg(kind, lv)
            assert char.avg(rule.detector, kind, lv) == rule.winning_avg

    def test_csv_round_trip(self, tmp_path):
        table = build_selection_table(mirrored_table())
        table.write(tmp_path / "s.csv")
        back = SelectionTable.read(tmp_path / "s.csv", fallback=table.fallback)
        assert back == table


class TestGap:
    def test_exact_predictions_have_zero_gap(self):
        char = mirrored_table()
        table = build_selection_table(char)
        cases = [("s", OperatingCondition(k, lv), OperatingCondition(k, lv)) for k, lv in ALL_CONDITIONS]
        rows = evaluate_selection(char, table, cases)
        assert len(rows) == 35
        assert all(r.gap == 0.0 and r.exact_rate == 1.0 for r in rows)

    def test_wrong_amount_near_crossing(self):
        char = mirrored_table()
        table = build_selection_table(char)
        true = OperatingCondition(Kind.BLUR, 2)
        cases = [("a", true, true), ("b", true, OperatingCondition(Kind.BLUR, 3))]
        (row,) = evaluate_selection(char, table, cases)
        assert row.exact_rate == 0.5
        assert row.gap == pytest.approx((0.5578 - 0.5854) / 2)
        out = io.StringIO()
        write_gap_csv([row], out)
        assert out.getvalue().splitlines()[0].startswith("kind,level_index,n,exact_rate")


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory, scenes):
    out = tmp_path_factory.mktemp("tiny")
    return generate_dataset([("a", scenes[0]), ("b", scenes[1])], out_dir=out)


class TestCharacterize:
    def test_builtin_roster_is_deterministic(self, tiny_dataset):
        roster = make_roster(("harris", "dog"))
        a = characterize(roster, tiny_dataset, 2.0)
        b = characterize(roster, tiny_dataset, 2.0, workers=2)
        assert a.entries == b.entries
        assert len(a.entries) == 2 * 35
        assert all(n == 2 for _, n in a.entries.values())
        assert all(0.0 <= v <= 1.0 for v, _ in a.entries.values())
        assert build_selection_table(a).is_total()

    def test_failures_beyond_tolerance(self, tiny_dataset, tmp_path):
        script = tmp_path / "fail.py"
        script.write_text("import sys\nsys.exit(1)\n")
        bad = Detector.external("bad", f"{shlex.quote(sys.executable)} {shlex.quote(str(script))} {{input}} {{output}}")
        with pytest.raises(CharacterizationError):
            characterize([Detector.builtin("harris"), bad], tiny_dataset, 2.0, scenes=["a"])

    def test_failures_within_tolerance_are_dropped(self, tiny_dataset, tmp_path):
        # fails on a single target file only
        script = tmp_path / "flaky.py"
        script.write_text(
            "import os, sys\n"
            "if sys.argv[1].endswith(os.path.join('a', 'blur_04.pgm')):\n    sys.exit(2)\n"
            "open(sys.argv[2], 'w').write('1\\n5 5 1\\n')\n"
        )
        flaky = Detector.external("flaky", f"{shlex.quote(sys.executable)} {shlex.quote(str(script))} {{input}} {{output}}")
        char = characterize([flaky], tiny_dataset, 2.0, scenes=["a", "b"], failure_tolerance=0.05)
        assert len(char.failures) == 1
        assert char.support("flaky", Kind.BLUR, 4) == 1
        assert char.avg("flaky", Kind.LIGHT, 0) == 1.0
        with pytest.raises(CharacterizationError, match="no successful"):
            characterize([flaky], tiny_dataset, 2.0, scenes=["a"], failure_tolerance=0.05)

    def test_roster_validation(self):
        with pytest.raises(ValueError):
            make_roster(())
        with pytest.raises(ValueError):
            make_roster(("harris",), {"harris": "x {input} {output}"})
        with pytest.raises(ValueError):
            Detector.builtin("sift")


def test_select_for_images(scenes, tmp_path):
    from detsel.features import extract_features
    from detsel.transforms import TransformSpec

    X, y = [], []
    for kind, lv in ALL_CONDITIONS:
        for img in scenes[:2]:
            spec = TransformSpec.from_ladder(kind, lv)
            X.append(extract_features(img, spec.apply(img)).as_array())
            y.append(OperatingCondition(kind, lv))
    models = OperatingConditionClassifier(epochs=50).fit(np.array(X), y)
    table = build_selection_table(mirrored_table())
    tgt = TransformSpec.from_ladder(Kind.BLUR, 5).apply(scenes[0])
    report = select_for_images(scenes[0], tgt, models, table)
    assert report.detector == select_detector(table, report.condition)
    assert set(report.timings_ms) == {"features", "type", "amount", "lookup", "total"}
    text = report.to_text(timing=True)
    assert text.splitlines()[5] == f"detector {report.detector}"
    assert "time_lookup_ms" in text

    from detsel.image import write_image

    write_image(tmp_path / "r.pgm", scenes[0])
    write_image(tmp_path / "t.pgm", tgt)
    by_path = select_for_paths(tmp_path / "r.pgm", tmp_path / "t.pgm", models, table)
    assert by_path.condition == report.condition
    assert "load" in by_path.timings_ms
