"""Stage runners shared by the HTTP service and the CLI.

Each runner takes a PipelineConfig, reads/writes artifacts under
paths.out_dir, and returns a plain dict summary.  Written files are
canonical: fixed key order, LF endings, and no wall-clock values, so a
rerun with the same config and seed is byte-identical.  Measured runtimes
are returned in the summaries only.
"""

from __future__ import annotations

import dataclasses
import json
import time
from pathlib import Path

from . import classifier as clf
from . import datagen, encoder, evalharness, memory
from .config import PipelineConfig
from .errors import MissingArtifactError
from .numerics import Rng, mix_seed

# Reported alongside our metrics for context; produced with a full
# pretrained transformer encoder, which the hashing encoder replaces, so
# they are reference points rather than targets.
REFERENCE_ACCURACY = {"train": 0.95, "val": 0.94, "test": 0.90}
REFERENCE_NOTE = ("reference accuracies with a pretrained transformer "
                  "encoder: train 0.95 / val 0.94 / test 0.90 "
                  "(context, not a target for the hashing encoder)")


def write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(obj, indent=2, ensure_ascii=False) + "\n")


def write_text(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------

def run_gen_data(cfg: PipelineConfig) -> dict:
    t0 = time.perf_counter()
    records = datagen.generate(datagen.default_templates(),
                               datagen.default_topics(),
                               {"pref": cfg.datagen.pref,
                                "nonpref": cfg.datagen.nonpref},
                               seed=cfg.datagen.seed)
    cfg.paths.base.mkdir(parents=True, exist_ok=True)
    datagen.write_jsonl(records, cfg.paths.dataset)
    labels = {1: 0, 0: 0}
    for rec in records:
        labels[rec.label] += 1
    return {"path": str(cfg.paths.dataset), "n_records": len(records),
            "label_1_preference": labels[1],
            "label_0_non_preference": labels[0],
            "seed": cfg.datagen.seed,
            "runtime_seconds": time.perf_counter() - t0}


def load_dataset(cfg: PipelineConfig) -> list[datagen.TurnRecord]:
    if not cfg.paths.dataset.exists():
        raise MissingArtifactError(f"dataset not found at "
                                   f"{cfg.paths.dataset}; run gen-data first")
    return datagen.read_jsonl(cfg.paths.dataset)


def dataset_splits(cfg: PipelineConfig, records):
    """Topic-held-out row indices (train, val, test)."""
    return clf.split_dataset(records, cfg.classifier.split,
                             cfg.classifier.seed, topic_of=lambda r: r.topic)


def _encode_records(cfg: PipelineConfig, records):
    return [(encoder.encode(cfg.encoder, r.agent, r.user), r.label)
            for r in records]


# ---------------------------------------------------------------------------
# train-classifier
# ---------------------------------------------------------------------------

def run_train_classifier(cfg: PipelineConfig, resume: bool = False) -> dict:
    t0 = time.perf_counter()
    records = load_dataset(cfg)
    train_idx, val_idx, test_idx = dataset_splits(cfg, records)
    pairs = _encode_records(cfg, records)
    train_set = [pairs[i] for i in train_idx]
    val_set = [pairs[i] for i in val_idx]
    test_set = [pairs[i] for i in test_idx]
    init = None
    if resume:
        if not cfg.paths.classifier_ckpt.exists():
            raise MissingArtifactError(
                f"cannot resume: no classifier checkpoint at "
                f"{cfg.paths.classifier_ckpt}")
        init = clf.load_classifier(cfg.paths.classifier_ckpt)
    params, history = clf.train(cfg.classifier, train_set, val_set,
                                init_params=init)
    clf.save_classifier(cfg.paths.classifier_ckpt, params)
    metrics = {name: clf.evaluate(params, split).as_dict()
               for name, split in (("train", train_set), ("val", val_set),
                                   ("test", test_set)) if split}
    history_doc = {
        "epochs": [{"epoch": h.epoch, "train_loss": h.train_loss,
                    "train_accuracy": h.train_accuracy,
                    "val_loss": h.val_loss, "val_accuracy": h.val_accuracy}
                   for h in history],
        "metrics": metrics,
        "reference_accuracy": REFERENCE_ACCURACY,
        "reference_note": REFERENCE_NOTE,
    }
    write_json(cfg.paths.classifier_history, history_doc)
    return {"checkpoint": str(cfg.paths.classifier_ckpt),
            "history": str(cfg.paths.classifier_history),
            "epochs_run": len(history),
            "split_sizes": {"train": len(train_set), "val": len(val_set),
                            "test": len(test_set)},
            "metrics": metrics,
            "reference_accuracy": REFERENCE_ACCURACY,
            "reference_note": REFERENCE_NOTE,
            "runtime_seconds": time.perf_counter() - t0}


# ---------------------------------------------------------------------------
# train-memory
# ---------------------------------------------------------------------------

def build_memory_corpus(cfg: PipelineConfig):
    return datagen.make_category_corpus(
        datagen.default_templates(), datagen.default_topics(),
        K=cfg.memory.n_categories, gaps=cfg.memory.gaps,
        seed=mix_seed(cfg.memory.seed, 0xc0),
        sequences_per_gap=cfg.memory.sequences_per_gap,
        code_dim=cfg.encoder.dim)


def run_train_memory(cfg: PipelineConfig, resume: bool = False) -> dict:
    t0 = time.perf_counter()
    corpus = build_memory_corpus(cfg)
    order = list(range(len(corpus)))
    Rng(mix_seed(cfg.memory.seed, 0xf)).shuffle(order)
    n_val = int(round(cfg.memory.val_fraction * len(corpus)))
    val_corpus = [corpus[i] for i in order[:n_val]]
    train_corpus = [corpus[i] for i in order[n_val:]]
    if resume:
        if not cfg.paths.memory_ckpt.exists():
            raise MissingArtifactError(f"cannot resume: no memory checkpoint "
                                       f"at {cfg.paths.memory_ckpt}")
        params = memory.load_params(cfg.paths.memory_ckpt)
    else:
        params = memory.GateParams.init(cfg.memory.dim, cfg.encoder.dim,
                                        cfg.memory.n_categories,
                                        cfg.memory.prompt_dim,
                                        Rng(mix_seed(cfg.memory.seed, 0xa)))
    history = memory.train_controller(params, train_corpus,
                                      epochs=cfg.memory.epochs,
                                      lr=cfg.memory.lr, seed=cfg.memory.seed,
                                      clip=cfg.memory.clip,
                                      val_corpus=val_corpus)
    memory.save_params(cfg.paths.memory_ckpt, params)
    history_doc = {"epochs": [{"epoch": h.epoch, "train_loss": h.train_loss,
                               "train_accuracy": h.train_accuracy,
                               "val_loss": h.val_loss,
                               "val_accuracy": h.val_accuracy}
                              for h in history]}
    write_json(cfg.paths.memory_history, history_doc)
    summary = {"checkpoint": str(cfg.paths.memory_ckpt),
               "history": str(cfg.paths.memory_history),
               "epochs_run": len(history),
               "corpus_sequences": len(corpus),
               "runtime_seconds": time.perf_counter() - t0}
    if history:
        last = history[-1]
        summary["final"] = {"train_loss": last.train_loss,
                            "train_accuracy": last.train_accuracy,
                            "val_loss": last.val_loss,
                            "val_accuracy": last.val_accuracy}
    return summary


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def make_eval_streams(cfg: PipelineConfig):
    templates = datagen.default_templates()
    topics = datagen.default_topics()
    streams = []
    for gap in cfg.eval.gaps:
        length = cfg.eval.length_factor * gap
        for i in range(cfg.eval.streams_per_gap):
            spec = evalharness.StreamSpec(
                gap=gap, length=length,
                n_categories=cfg.memory.n_categories,
                seed=mix_seed(cfg.eval.seed, gap * 1_000_000 + i))
            streams.append(evalharness.build_stream(spec, templates, topics,
                                                    cfg.encoder))
        for i in range(cfg.eval.overwrite_streams_per_gap):
            base = evalharness.StreamSpec(
                gap=gap, length=length,
                n_categories=cfg.memory.n_categories,
                seed=mix_seed(cfg.eval.seed,
                              900_000_000 + gap * 1_000_000 + i))
            spec = evalharness.make_overwrite_spec(base, turn=length - 2)
            streams.append(evalharness.build_stream(spec, templates, topics,
                                                    cfg.encoder))
    return streams


def _build_detector(cfg: PipelineConfig, name: str):
    if name == "learned":
        if not cfg.paths.classifier_ckpt.exists():
            raise MissingArtifactError(
                f"classifier checkpoint not found at "
                f"{cfg.paths.classifier_ckpt}; run train-classifier first")
        params = clf.load_classifier(cfg.paths.classifier_ckpt)
        return evalharness.LearnedDetector(params, cfg.encoder)
    return evalharness.make_detector(name)


def run_eval(cfg: PipelineConfig, detector: str | None = None,
             emit_csv: bool = False) -> dict:
    t0 = time.perf_counter()
    if not cfg.paths.memory_ckpt.exists():
        raise MissingArtifactError(f"memory checkpoint not found at "
                                   f"{cfg.paths.memory_ckpt}; run "
                                   f"train-memory first")
    params = memory.load_params(cfg.paths.memory_ckpt)
    detector_name = detector or cfg.eval.detector
    det = _build_detector(cfg, detector_name)
    streams = make_eval_streams(cfg)
    report, results = evalharness.run_retention(det, params, streams)
    if cfg.paths.classifier_ckpt.exists() and cfg.paths.dataset.exists():
        records = load_dataset(cfg)
        _, _, test_idx = dataset_splits(cfg, records)
        corpus = ([records[i] for i in test_idx]
                  + datagen.casual_probe_records())
        comparison = evalharness.compare_detectors(
            [evalharness.HeuristicDetector(),
             evalharness.LearnedDetector(
                 clf.load_classifier(cfg.paths.classifier_ckpt),
                 cfg.encoder)],
            corpus)
        report.comparison = evalharness.comparison_to_dict(comparison)
    runtime = time.perf_counter() - t0
    canonical = dataclasses.replace(report, runtime_seconds=None)
    write_json(cfg.paths.report_json, canonical.to_dict())
    write_text(cfg.paths.report_text, evalharness.render_text(canonical))
    outputs = {"report_json": str(cfg.paths.report_json),
               "report_text": str(cfg.paths.report_text)}
    if emit_csv:
        write_text(cfg.paths.report_csv, evalharness.results_csv(results))
        outputs["report_csv"] = str(cfg.paths.report_csv)
    report.runtime_seconds = runtime
    return {"report": report.to_dict(), "outputs": outputs}
