"""Request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ---------------------------------------------------------------------------
# Requests.
# ---------------------------------------------------------------------------

class GenDataRequest(StrictModel):
    seed: int | None = None
    pref: int | None = None
    nonpref: int | None = None


class TrainClassifierRequest(StrictModel):
    seed: int | None = None
    epochs: int | None = None
    resume: bool = False


class TrainMemoryRequest(StrictModel):
    seed: int | None = None
    epochs: int | None = None
    resume: bool = False


class EvalRequest(StrictModel):
    seed: int | None = None
    detector: str | None = None
    emit_csv: bool = False


class SessionCreateRequest(StrictModel):
    detector: str | None = None


class MessageRequest(StrictModel):
    text: str


class DetectorRequest(StrictModel):
    detector: str


# ---------------------------------------------------------------------------
# Responses.
# ---------------------------------------------------------------------------

class HealthResponse(BaseModel):
    status: str
    version: str


class GenDataResponse(BaseModel):
    path: str
    n_records: int
    label_1_preference: int
    label_0_non_preference: int
    seed: int
    runtime_seconds: float


class TrainClassifierResponse(BaseModel):
    checkpoint: str
    history: str
    epochs_run: int
    split_sizes: dict[str, int]
    metrics: dict[str, dict]
    reference_accuracy: dict[str, float]
    reference_note: str
    runtime_seconds: float


class TrainMemoryResponse(BaseModel):
    checkpoint: str
    history: str
    epochs_run: int
    corpus_sequences: int
    final: dict | None = None
    runtime_seconds: float


class EvalResponse(BaseModel):
    report: dict
    outputs: dict[str, str]


class SessionCreateResponse(BaseModel):
    session_id: str
    detector: str
    warning: str | None = None


class CategoryProb(BaseModel):
    name: str
    p: float


class MessageResponse(BaseModel):
    reply: str
    wrote: bool
    turn: int
    top_categories: list[CategoryProb]
    warning: str | None = None


class MemoryResponse(BaseModel):
    turn: int
    norm: float
    values: list[float]
    top_categories: list[CategoryProb]


class SoftPromptResponse(BaseModel):
    values: list[float]


class DetectorResponse(BaseModel):
    detector: str


class OkResponse(BaseModel):
    ok: bool = True
