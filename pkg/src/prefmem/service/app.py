"""HTTP service wrapping the pipeline and chat sessions.

One process holds one PipelineConfig; training and evaluation endpoints
run the corresponding pipeline stage and return its summary.  Chat
sessions are held in memory, one MemoryState per session, with a lock per
session so concurrent messages serialize.  Domain errors map to a JSON
detail {kind, message}; the CLI turns kinds into exit codes.
"""

from __future__ import annotations

import dataclasses
import threading
import uuid

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from .. import classifier as clf
from .. import datagen, heuristics, memory, pipeline
from ..config import PipelineConfig
from ..errors import (CapacityError, DataFormatError, DimensionError,
                      MissingArtifactError, PrefmemError, UsageError)
from ..respond import make_responder
from ..session import ChatSession
from . import schemas


class SessionNotFound(PrefmemError):
    pass


def error_kind(exc: PrefmemError) -> tuple[str, int]:
    if isinstance(exc, SessionNotFound):
        return "not_found", 404
    if isinstance(exc, MissingArtifactError):
        return "missing_artifact", 404
    if isinstance(exc, (DataFormatError, CapacityError, DimensionError)):
        return "data", 400
    if isinstance(exc, UsageError):
        return "usage", 400
    return "usage", 400


def create_app(cfg: PipelineConfig | None = None) -> FastAPI:
    cfg = cfg or PipelineConfig()
    app = FastAPI(title="prefmem", version=__version__)
    sessions: dict[str, ChatSession] = {}
    locks: dict[str, threading.Lock] = {}
    registry_lock = threading.Lock()

    @app.exception_handler(PrefmemError)
    async def _domain_error(request: Request, exc: PrefmemError):
        kind, status = error_kind(exc)
        return JSONResponse(status_code=status,
                            content={"detail": {"kind": kind,
                                                "message": str(exc)}})

    def get_session(sid: str) -> tuple[ChatSession, threading.Lock]:
        with registry_lock:
            if sid not in sessions:
                raise SessionNotFound(f"no such session: {sid}")
            return sessions[sid], locks[sid]

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/gen-data", response_model=schemas.GenDataResponse)
    def gen_data(req: schemas.GenDataRequest):
        section = dataclasses.replace(
            cfg.datagen,
            **{k: v for k, v in (("seed", req.seed), ("pref", req.pref),
                                 ("nonpref", req.nonpref)) if v is not None})
        return pipeline.run_gen_data(dataclasses.replace(cfg,
                                                         datagen=section))

    @app.post("/train-classifier",
              response_model=schemas.TrainClassifierResponse)
    def train_classifier(req: schemas.TrainClassifierRequest):
        updates = {k: v for k, v in (("seed", req.seed),
                                     ("epochs", req.epochs))
                   if v is not None}
        section = dataclasses.replace(cfg.classifier, **updates)
        return pipeline.run_train_classifier(
            dataclasses.replace(cfg, classifier=section), resume=req.resume)

    @app.post("/train-memory", response_model=schemas.TrainMemoryResponse)
    def train_memory(req: schemas.TrainMemoryRequest):
        updates = {k: v for k, v in (("seed", req.seed),
                                     ("epochs", req.epochs))
                   if v is not None}
        section = dataclasses.replace(cfg.memory, **updates)
        return pipeline.run_train_memory(
            dataclasses.replace(cfg, memory=section), resume=req.resume)

    @app.post("/eval", response_model=schemas.EvalResponse)
    def run_eval(req: schemas.EvalRequest):
        eval_cfg = cfg
        if req.seed is not None:
            section = dataclasses.replace(cfg.eval, seed=req.seed)
            eval_cfg = dataclasses.replace(cfg, eval=section)
        return pipeline.run_eval(eval_cfg, detector=req.detector,
                                 emit_csv=req.emit_csv)

    @app.post("/sessions", response_model=schemas.SessionCreateResponse)
    def create_session(req: schemas.SessionCreateRequest):
        detector = req.detector or cfg.chat.detector
        if detector not in ("learned", "heuristic"):
            raise UsageError("chat detector must be learned or heuristic")
        if not cfg.paths.memory_ckpt.exists():
            raise MissingArtifactError(
                f"memory checkpoint not found at {cfg.paths.memory_ckpt}; "
                f"run train-memory first")
        params = memory.load_params(cfg.paths.memory_ckpt)
        # load the classifier whenever it exists so a session can switch
        # detectors later; only require it for learned-detector sessions
        classifier_params = None
        if cfg.paths.classifier_ckpt.exists():
            classifier_params = clf.load_classifier(cfg.paths.classifier_ckpt)
        elif detector == "learned":
            raise MissingArtifactError(
                f"classifier checkpoint not found at "
                f"{cfg.paths.classifier_ckpt}; run train-classifier first")
        names = datagen.category_families(datagen.default_templates())
        names = names[:params.n_categories]
        responder, warning = make_responder(cfg.chat.responder,
                                            cfg.chat.responder_command,
                                            cfg.chat.responder_timeout)
        sid = uuid.uuid4().hex[:12]
        session = ChatSession(params=params, encoder_cfg=cfg.encoder,
                              category_names=names, detector=detector,
                              classifier_params=classifier_params,
                              rules=heuristics.default_rules(),
                              responder=responder,
                              log_path=cfg.paths.chat_log, session_id=sid)
        with registry_lock:
            sessions[sid] = session
            locks[sid] = threading.Lock()
        return schemas.SessionCreateResponse(session_id=sid,
                                             detector=detector,
                                             warning=warning)

    @app.post("/sessions/{sid}/message",
              response_model=schemas.MessageResponse)
    def post_message(sid: str, req: schemas.MessageRequest):
        session, lock = get_session(sid)
        with lock:
            result = session.step(req.text)
        return schemas.MessageResponse(
            reply=result.reply, wrote=result.wrote, turn=result.turn,
            top_categories=result.top_categories, warning=result.warning)

    @app.get("/sessions/{sid}/memory", response_model=schemas.MemoryResponse)
    def get_memory(sid: str):
        session, lock = get_session(sid)
        with lock:
            return schemas.MemoryResponse(**session.memory_info())

    @app.get("/sessions/{sid}/softprompt",
             response_model=schemas.SoftPromptResponse)
    def get_softprompt(sid: str):
        session, lock = get_session(sid)
        with lock:
            return schemas.SoftPromptResponse(
                values=session.soft_prompt_values())

    @app.post("/sessions/{sid}/reset", response_model=schemas.OkResponse)
    def reset_session(sid: str):
        session, lock = get_session(sid)
        with lock:
            session.reset()
        return schemas.OkResponse()

    @app.post("/sessions/{sid}/detector",
              response_model=schemas.DetectorResponse)
    def set_detector(sid: str, req: schemas.DetectorRequest):
        session, lock = get_session(sid)
        with lock:
            session.set_detector(req.detector)
        return schemas.DetectorResponse(detector=session.detector)

    @app.delete("/sessions/{sid}", response_model=schemas.OkResponse)
    def delete_session(sid: str):
        with registry_lock:
            if sid not in sessions:
                raise SessionNotFound(f"no such session: {sid}")
            session = sessions.pop(sid)
            lock = locks.pop(sid)
        with lock:
            session.close()
        return schemas.OkResponse()

    return app
