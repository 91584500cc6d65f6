"""Retention/detection harness tests: streams, detectors, scoring, reports."""

import json

import numpy as np
import pytest

from prefmem.datagen import TurnRecord, casual_probe_records
from prefmem.errors import DataFormatError, DimensionError
from prefmem.evalharness import (
    EvalReport,
    HeuristicDetector,
    LearnedDetector,
    OracleDetector,
    Stream,
    StreamSpec,
    build_stream,
    compare_detectors,
    comparison_to_dict,
    load_report,
    make_detector,
    make_overwrite_spec,
    render_text,
    results_csv,
    run_retention,
)
from prefmem.classifier import ClassifierParams, EvalMetrics
from prefmem.memory import witness_params, zero_params


def witness():
    return witness_params(32, 64, 4, 16)


class TestStreamSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            StreamSpec(gap=0, length=5, n_categories=4, seed=1)
        with pytest.raises(ValueError):
            StreamSpec(gap=3, length=0, n_categories=4, seed=1)
        with pytest.raises(ValueError):
            StreamSpec(gap=3, length=5, n_categories=1, seed=1)
        with pytest.raises(ValueError):
            StreamSpec(gap=3, length=5, n_categories=4, seed=1,
                       conflicts=((9, 0),))
        with pytest.raises(ValueError):
            StreamSpec(gap=3, length=5, n_categories=4, seed=1,
                       conflicts=((2, 7),))


class TestBuildStream:
    def test_preference_positions_and_truth(self):
        spec = StreamSpec(gap=3, length=9, n_categories=4, seed=5)
        stream = build_stream(spec)
        labels = [t.label for t in stream.turns]
        assert [i for i, x in enumerate(labels) if x] == [2, 5, 8]
        # truth holds the most recent stated category at each index
        assert stream.truth[0] is None and stream.truth[1] is None
        assert stream.truth[2] == stream.turns[2].category
        assert stream.truth[4] == stream.turns[2].category
        assert stream.final_truth == stream.turns[8].category

    def test_preference_turns_carry_orthogonal_codes(self):
        spec = StreamSpec(gap=3, length=9, n_categories=4, seed=6)
        stream = build_stream(spec)
        for t in stream.turns:
            if t.label:
                assert float(np.sum(t.embedding)) == 1.0
                assert int(np.argmax(t.embedding)) == t.category
            else:
                assert t.category is None

    def test_filler_turns_carry_text_encoding(self):
        spec = StreamSpec(gap=4, length=4, n_categories=4, seed=7)
        stream = build_stream(spec)
        filler = [t for t in stream.turns if not t.label]
        assert filler
        for t in filler:
            # normalized text vector, not a one-hot code
            assert abs(float(np.linalg.norm(t.embedding)) - 1.0) < 1e-12
            assert np.sum(t.embedding != 0.0) > 1

    def test_deterministic(self):
        spec = StreamSpec(gap=5, length=15, n_categories=4, seed=11)
        a, b = build_stream(spec), build_stream(spec)
        assert [t.user for t in a.turns] == [t.user for t in b.turns]
        assert a.truth == b.truth

    def test_conflict_restates_other_category(self):
        base = StreamSpec(gap=3, length=9, n_categories=4, seed=12)
        spec = make_overwrite_spec(base, turn=7)
        stream = build_stream(spec)
        assert stream.turns[7].label == 1
        assert stream.final_truth == stream.turns[7].category
        # the conflict changed the active category relative to the base run
        base_stream = build_stream(base)
        assert stream.turns[7].category != base_stream.truth[7]

    def test_too_many_categories(self):
        spec = StreamSpec(gap=3, length=9, n_categories=4, seed=1)
        object.__setattr__(spec, "n_categories", 99)
        with pytest.raises(DimensionError):
            build_stream(spec)

    def test_turn_text_is_two_sided(self):
        spec = StreamSpec(gap=3, length=6, n_categories=4, seed=13)
        for t in build_stream(spec).turns:
            assert t.agent and t.user


class TestDetectors:
    def test_oracle_reads_labels(self):
        spec = StreamSpec(gap=3, length=9, n_categories=4, seed=20)
        stream = build_stream(spec)
        det = OracleDetector()
        assert [det.decide(t) for t in stream.turns] == \
            [t.label for t in stream.turns]

    def test_heuristic_reads_text_only(self):
        det = HeuristicDetector()
        turn = TurnRecord(id=0, topic="t", template_id="x",
                          agent="Any preferences?", user="I love spicy food.",
                          label=1)
        assert det.decide(turn) == 1

    def test_learned_detector_uses_classifier(self):
        # head biased to a huge positive logit says 1 for everything
        p = ClassifierParams(w1=np.zeros((2, 64)), b1=np.zeros(2),
                             w2=np.zeros((1, 2)), b2=np.array([50.0]))
        det = LearnedDetector(p)
        turn = TurnRecord(id=0, topic="t", template_id="x", agent="a",
                          user="completely neutral words", label=0)
        assert det.decide(turn) == 1

    def test_factory(self):
        assert make_detector("oracle").name == "oracle"
        assert make_detector("heuristic").name == "heuristic"
        p = ClassifierParams(w1=np.zeros((2, 64)), b1=np.zeros(2),
                             w2=np.zeros((1, 2)), b2=np.zeros(1))
        assert make_detector("learned", classifier_params=p).name == "learned"
        with pytest.raises(ValueError):
            make_detector("learned")
        with pytest.raises(ValueError):
            make_detector("psychic")


class TestRunRetention:
    def make_streams(self, gaps=(3, 5, 10), n=10, seed0=100):
        streams = []
        for gap in gaps:
            for i in range(n):
                spec = StreamSpec(gap=gap, length=3 * gap, n_categories=4,
                                  seed=seed0 + gap * 1000 + i)
                streams.append(build_stream(spec))
        return streams

    def test_witness_retains_everything(self):
        report, results = run_retention(OracleDetector(), witness(),
                                        self.make_streams())
        assert report.retention_per_gap == {3: 1.0, 5: 1.0, 10: 1.0}
        assert all(r.correct for r in results)

    def test_witness_survives_overwrites(self):
        streams = []
        for i in range(10):
            base = StreamSpec(gap=3, length=9, n_categories=4, seed=300 + i)
            streams.append(build_stream(make_overwrite_spec(base, turn=7)))
        report, _ = run_retention(OracleDetector(), witness(), streams)
        assert report.overwrite_accuracy == 1.0

    def test_oracle_detection_is_perfect(self):
        report, _ = run_retention(OracleDetector(), witness(),
                                  self.make_streams(n=5))
        assert report.detection.precision == 1.0
        assert report.detection.recall == 1.0

    def test_zero_controller_predicts_class_zero(self):
        params = zero_params(32, 64, 4, 16)
        report, results = run_retention(OracleDetector(), params,
                                        self.make_streams(gaps=(3,), n=20))
        assert all(r.predicted == 0 for r in results)
        # roughly uniform truth: accuracy lands near 1/K
        assert 0.0 <= report.retention_per_gap[3] <= 0.6

    def test_category_head_mismatch(self):
        stream = build_stream(StreamSpec(gap=3, length=9, n_categories=3,
                                         seed=1))
        with pytest.raises(DimensionError):
            run_retention(OracleDetector(), witness(), [stream])

    def test_empty_streams(self):
        with pytest.raises(ValueError):
            run_retention(OracleDetector(), witness(), [])

    def test_missed_write_costs_retention(self):
        class DeafDetector:
            name = "deaf"

            def decide(self, turn):
                return 0

        report, results = run_retention(DeafDetector(), witness(),
                                        self.make_streams(gaps=(3,), n=10))
        # nothing was ever written: probe argmax is constant class 0
        assert report.detection.recall == 0.0
        assert all(r.predicted == 0 for r in results)

    def test_deterministic(self):
        streams = self.make_streams(gaps=(5,), n=5)
        r1, _ = run_retention(OracleDetector(), witness(), streams)
        r2, _ = run_retention(OracleDetector(), witness(), streams)
        assert r1.to_dict() == r2.to_dict()


class TestCompare:
    def test_identical_detectors_identical_metrics(self):
        records = casual_probe_records()
        out = compare_detectors([HeuristicDetector(), HeuristicDetector()],
                                records)
        # both entries collapse onto one key (same name); rerun with one
        out1 = compare_detectors([HeuristicDetector()], records)
        assert out["heuristic"]["overall"].as_dict() == \
            out1["heuristic"]["overall"].as_dict()

    def test_formal_casual_breakdown(self):
        formal = [TurnRecord(id=1, topic="t", template_id="tpl-1",
                             agent="a", user="I like spicy food", label=1)]
        casual = casual_probe_records()[:4]
        out = compare_detectors([OracleDetector()], formal + casual)
        section = out["oracle"]
        assert section["overall"].n == 1 + 4
        assert section["formal"].n == 1
        assert section["casual"].n == 4

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            compare_detectors([OracleDetector()], [])

    def test_comparison_to_dict(self):
        out = compare_detectors([OracleDetector()], casual_probe_records())
        d = comparison_to_dict(out)
        assert "oracle" in d
        assert "accuracy" in d["oracle"]["overall"]
        assert d["oracle"]["overall"]["accuracy"] == 1.0


class TestReport:
    def make_report(self):
        return EvalReport(
            detector="oracle",
            detection=EvalMetrics(tp=10, fp=1, tn=20, fn=2),
            retention_per_gap={3: 1.0, 10: 0.9},
            retention_counts={3: (10, 10), 10: (9, 10)},
            overwrite_accuracy=0.95,
            n_streams=20,
        )

    def test_dict_round_trip(self):
        rep = self.make_report()
        back = EvalReport.from_dict(rep.to_dict())
        assert back.to_dict() == rep.to_dict()

    def test_json_keys_sorted_by_gap(self):
        d = self.make_report().to_dict()
        assert list(d["retention_per_gap"]) == ["3", "10"]

    def test_load_report(self, tmp_path):
        rep = self.make_report()
        path = tmp_path / "report.json"
        path.write_text(json.dumps(rep.to_dict()))
        assert load_report(path).to_dict() == rep.to_dict()

    def test_load_report_bad_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{nope")
        with pytest.raises(DataFormatError):
            load_report(path)

    def test_render_text_is_aligned_table(self):
        text = render_text(self.make_report())
        lines = text.splitlines()
        assert lines[0].startswith("detector")
        gap_lines = [ln for ln in lines if ln.strip().startswith("gap")]
        assert len(gap_lines) == 2
        # columns line up: every gap row puts the value at the same offset
        offsets = {ln.index("0.") for ln in gap_lines if "0." in ln}
        assert len(offsets) <= 1
        assert "after overwrite" in text

    def test_render_includes_comparison(self):
        rep = self.make_report()
        rep.comparison = {"heuristic": {"overall": {"accuracy": 0.9,
                                                    "f1": 0.8}}}
        assert "detector comparison" in render_text(rep)

    def test_results_csv(self):
        _, results = run_retention(
            OracleDetector(), witness(),
            [build_stream(StreamSpec(gap=3, length=9, n_categories=4,
                                     seed=1))])
        text = results_csv(results)
        lines = text.splitlines()
        assert lines[0] == "gap,length,seed,has_conflict,final_truth," \
                           "predicted,correct"
        assert len(lines) == 2
