"""Interactive chat sessions over a trained controller.

A session owns one MemoryState and never mutates the checkpoints it was
built from.  Each user line is detected (learned or heuristic), written
into memory when it states a preference, and answered by the responder
adapter, which receives the current soft prompt and category readout.
Transcript lines and a memory snapshot (`turn=<t> M=<v1,...,vd>`) are
appended to the session log after every turn.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import classifier as clf
from . import encoder, heuristics, memory
from .checkpoints import format_float
from .errors import UsageError
from .respond import AdapterError, BuiltinResponder


@dataclass
class StepResult:
    reply: str
    wrote: bool
    turn: int
    top_categories: list[dict]
    warning: str | None = None


def snapshot_line(state: memory.MemoryState) -> str:
    values = ",".join(format_float(v) for v in state.values)
    return f"turn={state.turn} M={values}"


class ChatSession:
    def __init__(self, params: memory.GateParams,
                 encoder_cfg: encoder.EncoderConfig,
                 category_names: list[str],
                 detector: str = "learned",
                 classifier_params: clf.ClassifierParams | None = None,
                 rules: heuristics.RuleSet | None = None,
                 responder=None,
                 log_path=None,
                 session_id: str = "local"):
        if len(category_names) != params.n_categories:
            raise UsageError(f"{len(category_names)} category names for a "
                             f"{params.n_categories}-way probe head")
        self.params = params
        self.encoder_cfg = encoder_cfg
        self.category_names = list(category_names)
        self.classifier_params = classifier_params
        self.rules = rules or heuristics.default_rules()
        self.responder = responder or BuiltinResponder()
        self.log_path = Path(log_path) if log_path else None
        self.session_id = session_id
        self.state = memory.MemoryState.initial(params.dim)
        self.last_reply = ""
        self.detector = ""
        self._log(f"session={session_id} started")
        self.set_detector(detector)

    def set_detector(self, mode: str) -> None:
        if mode not in ("learned", "heuristic"):
            raise UsageError("detector must be learned or heuristic")
        if mode == "learned" and self.classifier_params is None:
            raise UsageError("learned detector needs a classifier checkpoint")
        self.detector = mode
        self._log(f"detector={mode}")

    def _log(self, line: str) -> None:
        if self.log_path is None:
            return
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.log_path, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(line + "\n")

    def _detect(self, user_text: str) -> bool:
        if self.detector == "heuristic":
            return heuristics.detect(self.rules, user_text).is_preference
        e = encoder.encode(self.encoder_cfg, self.last_reply, user_text)
        return bool(clf.predict(self.classifier_params, e))

    def top_categories(self, k: int = 2) -> list[dict]:
        probs = memory.predict_category(self.params, self.state.values)
        order = np.argsort(-probs)[:k]
        return [{"name": self.category_names[i], "p": float(probs[i])}
                for i in order]

    def step(self, user_text: str) -> StepResult:
        wrote = self._detect(user_text)
        if wrote:
            emb = encoder.encode(self.encoder_cfg, self.last_reply, user_text)
            event = memory.TurnEvent(is_preference=True, embedding=emb)
        else:
            event = memory.TurnEvent(is_preference=False)
        self.state, _ = memory.apply_event(self.params, self.state, event)
        top = self.top_categories()
        prompt = memory.soft_prompt(self.params, self.state.values)
        warning = None
        try:
            reply = self.responder.respond(user_text, prompt.tolist(), top,
                                           wrote)
        except AdapterError as exc:
            warning = (f"external responder failed ({exc}); "
                       f"switching to builtin responder")
            self.responder = BuiltinResponder()
            reply = self.responder.respond(user_text, prompt.tolist(), top,
                                           wrote)
        self.last_reply = reply
        self._log(f"user: {user_text}")
        self._log(f"agent: {reply}")
        if warning:
            self._log(f"warning: {warning}")
        self._log(snapshot_line(self.state))
        return StepResult(reply=reply, wrote=wrote, turn=self.state.turn,
                          top_categories=top, warning=warning)

    def memory_info(self) -> dict:
        return {"turn": self.state.turn,
                "norm": float(np.linalg.norm(self.state.values)),
                "values": [float(v) for v in self.state.values],
                "top_categories": self.top_categories()}

    def soft_prompt_values(self) -> list[float]:
        prompt = memory.soft_prompt(self.params, self.state.values)
        return [float(v) for v in prompt]

    def reset(self) -> None:
        self.state = memory.MemoryState.initial(self.params.dim)
        self.last_reply = ""
        self._log("reset")

    def close(self) -> None:
        self.responder.close()
        self._log(f"session={self.session_id} closed")
