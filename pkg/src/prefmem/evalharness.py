"""Retention and detection scoring over synthetic injection streams.

A stream is a rendered conversation where every gap-th turn states a
preference from one of K category families and every other turn is neutral
filler.  The ground-truth "active" category at any turn is the most recently
stated one; optional conflict turns restate a different category so
overwrite behavior can be scored separately.  Retention accuracy asks: at
the end of the stream, does the controller's category probe argmax match
the active category?

Detectors gate the memory writes.  The oracle detector reads the turn
labels (pure controller measurement); the heuristic and learned detectors
read the turn text, so their mistakes (skipped writes, spurious writes of
filler text) flow into the retention number exactly as they would live.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace

import numpy as np

from . import classifier as clf
from . import datagen, encoder, heuristics, memory
from .classifier import EvalMetrics
from .errors import DataFormatError, DimensionError
from .numerics import Rng, mix_seed


@dataclass(frozen=True)
class StreamSpec:
    gap: int
    length: int
    n_categories: int
    seed: int
    conflicts: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.gap < 1:
            raise ValueError(f"gap must be >= 1, got {self.gap}")
        if self.length < 1:
            raise ValueError(f"length must be >= 1, got {self.length}")
        if self.n_categories < 2:
            raise ValueError("need at least 2 categories")
        for turn, cat in self.conflicts:
            if not 0 <= turn < self.length:
                raise ValueError(f"conflict turn {turn} outside stream")
            if not 0 <= cat < self.n_categories:
                raise ValueError(f"conflict category {cat} out of range")


@dataclass(frozen=True)
class StreamTurn:
    index: int
    agent: str
    user: str
    label: int
    category: int | None
    embedding: np.ndarray


@dataclass(frozen=True)
class Stream:
    spec: StreamSpec
    turns: tuple[StreamTurn, ...]
    truth: tuple[int | None, ...]

    @property
    def final_truth(self) -> int | None:
        return self.truth[-1] if self.truth else None


def build_stream(spec: StreamSpec, templates=None, topics=None,
                 encoder_cfg: encoder.EncoderConfig | None = None) -> Stream:
    """Render one stream.  Preference turns carry the category's orthogonal
    code as their write payload (the injected indicator); filler turns carry
    their own text encoding, which is what a spurious write would store."""
    templates = templates if templates is not None else datagen.default_templates()
    topics = topics if topics is not None else datagen.default_topics()
    encoder_cfg = encoder_cfg or encoder.EncoderConfig()
    families = datagen.category_families(templates)
    if spec.n_categories > len(families):
        raise DimensionError(f"spec asks for {spec.n_categories} categories "
                             f"but templates define {len(families)}")
    by_category = {k: [t for t in templates if t.category == families[k]]
                   for k in range(spec.n_categories)}
    neutral = [t for t in templates if t.label == 0]
    rng = Rng(mix_seed(spec.seed, 0xe7a))
    conflict_at = dict(spec.conflicts)
    turns: list[StreamTurn] = []
    truth: list[int | None] = []
    active: int | None = None
    for j in range(spec.length):
        if j in conflict_at:
            cat: int | None = conflict_at[j]
        elif (j + 1) % spec.gap == 0:
            cat = rng.randint(spec.n_categories)
        else:
            cat = None
        if cat is None:
            t = rng.choice(neutral)
        else:
            t = rng.choice(by_category[cat])
            active = cat
        slots = {"topic": rng.choice(topics)}
        for slot in t.used_slots:
            if slot != "topic":
                slots[slot] = rng.choice(datagen.slot_values(t, slot))
        agent, user = t.render(slots)
        emb = (datagen.category_code(cat, encoder_cfg.dim) if cat is not None
               else encoder.encode(encoder_cfg, agent, user))
        turns.append(StreamTurn(index=j, agent=agent, user=user,
                                label=int(cat is not None), category=cat,
                                embedding=emb))
        truth.append(active)
    return Stream(spec=spec, turns=tuple(turns), truth=tuple(truth))


def make_overwrite_spec(base: StreamSpec, turn: int) -> StreamSpec:
    """Variant of base with one late conflict that provably changes the
    active category at `turn`."""
    stream = build_stream(base)
    active = stream.truth[turn - 1] if turn > 0 else None
    shifted = Rng(mix_seed(base.seed, 0x0c)).randint(base.n_categories - 1)
    current = active if active is not None else 0
    new_cat = (current + 1 + shifted) % base.n_categories
    return replace(base, conflicts=base.conflicts + ((turn, new_cat),))


# ---------------------------------------------------------------------------
# Detectors.
# ---------------------------------------------------------------------------

class OracleDetector:
    """Reads ground-truth labels; isolates controller quality from
    detection quality."""

    name = "oracle"

    def decide(self, turn) -> int:
        return int(turn.label)


class HeuristicDetector:
    name = "heuristic"

    def __init__(self, rules: heuristics.RuleSet | None = None):
        self.rules = rules or heuristics.default_rules()

    def decide(self, turn) -> int:
        return int(heuristics.detect(self.rules, turn.user).is_preference)


class LearnedDetector:
    name = "learned"

    def __init__(self, params: clf.ClassifierParams,
                 encoder_cfg: encoder.EncoderConfig | None = None):
        self.params = params
        self.encoder_cfg = encoder_cfg or encoder.EncoderConfig()

    def decide(self, turn) -> int:
        e = encoder.encode(self.encoder_cfg, turn.agent, turn.user)
        return clf.predict(self.params, e)


def make_detector(name: str, classifier_params=None, rules=None,
                  encoder_cfg=None):
    if name == "oracle":
        return OracleDetector()
    if name == "heuristic":
        return HeuristicDetector(rules)
    if name == "learned":
        if classifier_params is None:
            raise ValueError("learned detector needs classifier params")
        return LearnedDetector(classifier_params, encoder_cfg)
    raise ValueError(f"unknown detector {name!r}")


# ---------------------------------------------------------------------------
# Scoring.
# ---------------------------------------------------------------------------

@dataclass
class StreamResult:
    gap: int
    length: int
    seed: int
    has_conflict: bool
    final_truth: int | None
    predicted: int
    correct: bool


@dataclass
class EvalReport:
    detector: str
    detection: EvalMetrics
    retention_per_gap: dict[int, float]
    retention_counts: dict[int, tuple[int, int]]
    overwrite_accuracy: float | None
    n_streams: int
    runtime_seconds: float | None = None
    comparison: dict | None = None

    def to_dict(self) -> dict:
        return {
            "detector": self.detector,
            "detection": self.detection.as_dict(),
            "retention_per_gap": {str(g): v for g, v
                                  in sorted(self.retention_per_gap.items())},
            "retention_counts": {str(g): list(c) for g, c
                                 in sorted(self.retention_counts.items())},
            "overwrite_accuracy": self.overwrite_accuracy,
            "n_streams": self.n_streams,
            "runtime_seconds": self.runtime_seconds,
            "comparison": self.comparison,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EvalReport":
        det = obj["detection"]
        return cls(
            detector=obj["detector"],
            detection=EvalMetrics(tp=det["tp"], fp=det["fp"], tn=det["tn"],
                                  fn=det["fn"]),
            retention_per_gap={int(g): float(v) for g, v
                               in obj["retention_per_gap"].items()},
            retention_counts={int(g): (int(c[0]), int(c[1])) for g, c
                              in obj["retention_counts"].items()},
            overwrite_accuracy=obj["overwrite_accuracy"],
            n_streams=int(obj["n_streams"]),
            runtime_seconds=obj.get("runtime_seconds"),
            comparison=obj.get("comparison"),
        )


def run_retention(detector, params: memory.GateParams,
                  streams) -> tuple[EvalReport, list[StreamResult]]:
    """Play every stream through the detector-gated controller and score
    end-of-stream category recovery plus per-turn detection."""
    streams = list(streams)
    if not streams:
        raise ValueError("no streams to evaluate")
    tp = fp = tn = fn = 0
    results: list[StreamResult] = []
    for stream in streams:
        if stream.spec.n_categories != params.n_categories:
            raise DimensionError(
                f"stream has {stream.spec.n_categories} categories, "
                f"controller head has {params.n_categories}")
        m = np.zeros(params.dim)
        for turn in stream.turns:
            decision = detector.decide(turn)
            if decision and turn.label:
                tp += 1
            elif decision:
                fp += 1
            elif turn.label:
                fn += 1
            else:
                tn += 1
            if decision:
                m, _, _ = memory.update(params, m, turn.embedding)
        predicted = int(np.argmax(memory.predict_category(params, m)))
        truth = stream.final_truth
        results.append(StreamResult(
            gap=stream.spec.gap, length=stream.spec.length,
            seed=stream.spec.seed, has_conflict=bool(stream.spec.conflicts),
            final_truth=truth, predicted=predicted,
            correct=(truth is not None and predicted == truth)))
    per_gap: dict[int, list[StreamResult]] = {}
    for r in results:
        if r.final_truth is not None:
            per_gap.setdefault(r.gap, []).append(r)
    retention = {gap: sum(r.correct for r in rs) / len(rs)
                 for gap, rs in per_gap.items()}
    counts = {gap: (sum(r.correct for r in rs), len(rs))
              for gap, rs in per_gap.items()}
    conflict_rs = [r for r in results
                   if r.has_conflict and r.final_truth is not None]
    overwrite = (sum(r.correct for r in conflict_rs) / len(conflict_rs)
                 if conflict_rs else None)
    report = EvalReport(detector=detector.name,
                        detection=EvalMetrics(tp=tp, fp=fp, tn=tn, fn=fn),
                        retention_per_gap=retention,
                        retention_counts=counts,
                        overwrite_accuracy=overwrite,
                        n_streams=len(streams))
    return report, results


def compare_detectors(detectors, records) -> dict:
    """Score several detectors on the same labeled records, with a
    formal/casual breakdown (casual records are the handcrafted informal
    probes, marked by their template id)."""
    records = list(records)
    if not records:
        raise ValueError("comparison corpus is empty")
    subsets = {"overall": records,
               "formal": [r for r in records
                          if not r.template_id.startswith("casual")],
               "casual": [r for r in records
                          if r.template_id.startswith("casual")]}
    out: dict = {}
    for det in detectors:
        section = {}
        for name, subset in subsets.items():
            if not subset:
                continue
            tp = fp = tn = fn = 0
            for rec in subset:
                decision = det.decide(rec)
                if decision and rec.label:
                    tp += 1
                elif decision:
                    fp += 1
                elif rec.label:
                    fn += 1
                else:
                    tn += 1
            section[name] = EvalMetrics(tp=tp, fp=fp, tn=tn, fn=fn)
        out[det.name] = section
    return out


def comparison_to_dict(comparison: dict) -> dict:
    return {det: {subset: m.as_dict() for subset, m in section.items()}
            for det, section in comparison.items()}


# ---------------------------------------------------------------------------
# Rendering.
# ---------------------------------------------------------------------------

def render_text(report: EvalReport) -> str:
    d = report.detection
    lines = [
        f"detector            {report.detector}",
        f"streams             {report.n_streams}",
        "",
        "detection",
        f"  accuracy          {d.accuracy:.4f}",
        f"  precision         {d.precision:.4f}",
        f"  recall            {d.recall:.4f}",
        f"  f1                {d.f1:.4f}",
        f"  counts            tp={d.tp} fp={d.fp} tn={d.tn} fn={d.fn}",
        "",
        "retention (argmax category at stream end)",
    ]
    for gap in sorted(report.retention_per_gap):
        correct, total = report.retention_counts[gap]
        lines.append(f"  gap {gap:>2}            "
                     f"{report.retention_per_gap[gap]:.4f}  "
                     f"({correct}/{total})")
    if report.overwrite_accuracy is not None:
        lines.append(f"  after overwrite   {report.overwrite_accuracy:.4f}")
    if report.comparison:
        lines.append("")
        lines.append("detector comparison (accuracy / f1)")
        for det, section in report.comparison.items():
            for subset, m in section.items():
                lines.append(f"  {det:<10} {subset:<8} "
                             f"{m['accuracy']:.4f} / {m['f1']:.4f}")
    if report.runtime_seconds is not None:
        lines.append("")
        lines.append(f"runtime_seconds     {report.runtime_seconds:.2f}")
    return "\n".join(lines) + "\n"


def results_csv(results) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["gap", "length", "seed", "has_conflict", "final_truth",
                     "predicted", "correct"])
    for r in results:
        writer.writerow([r.gap, r.length, r.seed, int(r.has_conflict),
                         "" if r.final_truth is None else r.final_truth,
                         r.predicted, int(r.correct)])
    return buf.getvalue()


def load_report(path) -> EvalReport:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"invalid report JSON: {exc.msg}",
                                  path=path) from exc
    return EvalReport.from_dict(obj)
