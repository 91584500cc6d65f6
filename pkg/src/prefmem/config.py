"""Pipeline configuration: one JSON document, every field defaulted.

Each top-level section mirrors the module it feeds (encoder, classifier,
memory, datagen, eval, chat, paths).  Unknown keys are rejected rather than
ignored so typos fail loudly.  The full gen-data -> train -> eval -> chat
flow runs with no config file at all.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .classifier import TrainConfig
from .encoder import EncoderConfig
from .errors import UsageError

DETECTOR_CHOICES = ("learned", "heuristic", "oracle")


@dataclass(frozen=True)
class MemorySettings:
    epochs: int = 200
    lr: float = 0.3
    seed: int = 11
    clip: float = 5.0
    dim: int = 32
    prompt_dim: int = 16
    n_categories: int = 4
    sequences_per_gap: int = 40
    gaps: tuple[int, ...] = (3, 5, 10)
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.lr <= 0 or self.clip <= 0:
            raise UsageError("memory lr and clip must be positive")
        if self.epochs < 0:
            raise UsageError("memory epochs must be >= 0")
        if min(self.dim, self.prompt_dim, self.sequences_per_gap) < 1:
            raise UsageError("memory dims and corpus size must be >= 1")
        if self.n_categories < 2:
            raise UsageError("memory needs at least 2 categories")
        if not self.gaps or any(g < 1 for g in self.gaps):
            raise UsageError("memory gaps must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise UsageError("memory val_fraction must be in [0, 1)")


@dataclass(frozen=True)
class DatagenSettings:
    pref: int = 3537
    nonpref: int = 4915
    seed: int = 13

    def __post_init__(self):
        if self.pref < 0 or self.nonpref < 0:
            raise UsageError("datagen counts must be >= 0")


@dataclass(frozen=True)
class EvalSettings:
    gaps: tuple[int, ...] = (3, 5, 10)
    streams_per_gap: int = 100
    overwrite_streams_per_gap: int = 20
    length_factor: int = 3
    seed: int = 17
    detector: str = "learned"

    def __post_init__(self):
        if not self.gaps or any(g < 1 for g in self.gaps):
            raise UsageError("eval gaps must be positive")
        if self.streams_per_gap < 1:
            raise UsageError("eval streams_per_gap must be >= 1")
        if self.overwrite_streams_per_gap < 0:
            raise UsageError("eval overwrite_streams_per_gap must be >= 0")
        if self.length_factor < 1:
            raise UsageError("eval length_factor must be >= 1")
        if self.detector not in DETECTOR_CHOICES:
            raise UsageError(f"eval detector must be one of "
                             f"{', '.join(DETECTOR_CHOICES)}")


@dataclass(frozen=True)
class ChatSettings:
    detector: str = "learned"
    responder: str = "builtin"
    responder_command: str | None = None
    responder_timeout: float = 5.0

    def __post_init__(self):
        if self.detector not in ("learned", "heuristic"):
            raise UsageError("chat detector must be learned or heuristic")
        if self.responder not in ("builtin", "external"):
            raise UsageError("chat responder must be builtin or external")
        if self.responder == "external" and not self.responder_command:
            raise UsageError("external responder needs responder_command")
        if self.responder_timeout <= 0:
            raise UsageError("responder_timeout must be positive")


@dataclass(frozen=True)
class PathSettings:
    out_dir: str = "artifacts"

    @property
    def base(self) -> Path:
        return Path(self.out_dir)

    @property
    def dataset(self) -> Path:
        return self.base / "dataset.jsonl"

    @property
    def classifier_ckpt(self) -> Path:
        return self.base / "classifier.ckpt"

    @property
    def classifier_history(self) -> Path:
        return self.base / "classifier_history.json"

    @property
    def memory_ckpt(self) -> Path:
        return self.base / "memory.ckpt"

    @property
    def memory_history(self) -> Path:
        return self.base / "memory_history.json"

    @property
    def report_json(self) -> Path:
        return self.base / "eval_report.json"

    @property
    def report_text(self) -> Path:
        return self.base / "eval_report.txt"

    @property
    def report_csv(self) -> Path:
        return self.base / "eval_streams.csv"

    @property
    def chat_log(self) -> Path:
        return self.base / "chat_session.log"


@dataclass(frozen=True)
class PipelineConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    classifier: TrainConfig = field(default_factory=TrainConfig)
    memory: MemorySettings = field(default_factory=MemorySettings)
    datagen: DatagenSettings = field(default_factory=DatagenSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    chat: ChatSettings = field(default_factory=ChatSettings)
    paths: PathSettings = field(default_factory=PathSettings)

    def __post_init__(self):
        if self.memory.n_categories > self.memory.dim:
            raise UsageError("memory n_categories cannot exceed dim")
        if self.memory.n_categories > self.encoder.dim:
            raise UsageError("memory n_categories cannot exceed encoder dim")


_SECTION_TYPES = {
    "encoder": EncoderConfig,
    "classifier": TrainConfig,
    "memory": MemorySettings,
    "datagen": DatagenSettings,
    "eval": EvalSettings,
    "chat": ChatSettings,
    "paths": PathSettings,
}

# Fields that arrive as JSON lists but are stored as tuples.
_TUPLE_FIELDS = {("encoder", "ngram_orders"), ("classifier", "split"),
                 ("memory", "gaps"), ("eval", "gaps")}


def _build_section(name: str, cls, overrides: dict):
    import dataclasses
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(overrides) - known
    if unknown:
        raise UsageError(f"unknown key(s) in config section {name!r}: "
                         f"{', '.join(sorted(unknown))}")
    kwargs = {}
    for key, value in overrides.items():
        if (name, key) in _TUPLE_FIELDS:
            if not isinstance(value, (list, tuple)):
                raise UsageError(f"config {name}.{key} must be a list")
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config section {name!r}: {exc}") from exc


def config_from_dict(obj: dict) -> PipelineConfig:
    if not isinstance(obj, dict):
        raise UsageError("config root must be a JSON object")
    unknown = set(obj) - set(_SECTION_TYPES)
    if unknown:
        raise UsageError(f"unknown config section(s): "
                         f"{', '.join(sorted(unknown))}")
    sections = {}
    for name, cls in _SECTION_TYPES.items():
        overrides = obj.get(name, {})
        if not isinstance(overrides, dict):
            raise UsageError(f"config section {name!r} must be an object")
        sections[name] = _build_section(name, cls, overrides)
    return PipelineConfig(**sections)


def load_config(path=None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {p}")
    try:
        obj = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {p} is not valid JSON: {exc.msg} "
                         f"(line {exc.lineno})") from exc
    return config_from_dict(obj)


def apply_overrides(cfg: PipelineConfig, *, out_dir: str | None = None,
                    seed: int | None = None, stage: str | None = None,
                    detector: str | None = None) -> PipelineConfig:
    """CLI-flag overrides.  --seed retargets only the named stage's seed;
    --detector applies to eval and chat."""
    import dataclasses
    updates: dict = {}
    if out_dir is not None:
        updates["paths"] = PathSettings(out_dir=out_dir)
    if seed is not None:
        if stage == "gen-data":
            updates["datagen"] = dataclasses.replace(cfg.datagen, seed=seed)
        elif stage == "train-classifier":
            updates["classifier"] = dataclasses.replace(cfg.classifier,
                                                        seed=seed)
        elif stage == "train-memory":
            updates["memory"] = dataclasses.replace(cfg.memory, seed=seed)
        elif stage in ("eval", "chat"):
            updates["eval"] = dataclasses.replace(cfg.eval, seed=seed)
        else:
            raise UsageError(f"--seed does not apply to stage {stage!r}")
    if detector is not None:
        if detector not in DETECTOR_CHOICES:
            raise UsageError(f"detector must be one of "
                             f"{', '.join(DETECTOR_CHOICES)}")
        updates["eval"] = dataclasses.replace(
            updates.get("eval", cfg.eval), detector=detector)
        if detector in ("learned", "heuristic"):
            updates["chat"] = dataclasses.replace(cfg.chat, detector=detector)
    return dataclasses.replace(cfg, **updates) if updates else cfg
