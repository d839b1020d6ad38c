"""HTTP JSON service exposing chat sessions to the browser UI.

Model parameters are shared read-only across requests; each session owns its
DialogueState behind a lock, so concurrent messages to one session are
serialized while separate sessions proceed in parallel.
"""

from __future__ import annotations

import threading
import uuid

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from .bot import ChatBot
from .config import DecodeConfig
from .corpus import encode, tokenize


class DecodeOverride(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: str | None = Field(default=None, pattern="^(greedy|beam)$")
    beam_width: int | None = Field(default=None, ge=1, le=100)
    chosen_beam: int | None = Field(default=None, ge=1)
    length_penalty: float | None = Field(default=None, ge=0.0, le=2.0)


class MessageIn(BaseModel):
    model_config = ConfigDict(extra="forbid")

    text: str
    decode: DecodeOverride | None = None


class ClassifyIn(BaseModel):
    model_config = ConfigDict(extra="forbid")

    text: str


class _Session:
    def __init__(self, state):
        self.state = state
        self.lock = threading.Lock()


def build_app(bot: ChatBot) -> FastAPI:
    if bot.da is None:
        raise ValueError("the service requires a dialogue-act encoder checkpoint")
    app = FastAPI(title="ctxchat")
    sessions: dict[str, _Session] = {}
    sessions_lock = threading.Lock()

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    def _get(session_id: str) -> _Session | None:
        with sessions_lock:
            return sessions.get(session_id)

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "model_mode": bot.model.config.mode}

    @app.post("/v1/session")
    def create_session():
        sid = uuid.uuid4().hex
        with sessions_lock:
            sessions[sid] = _Session(bot.new_state())
        return {"session_id": sid}

    @app.post("/v1/session/{session_id}/message")
    def message(session_id: str, body: MessageIn):
        sess = _get(session_id)
        if sess is None:
            return JSONResponse(status_code=404, content={"detail": "unknown session"})
        dc = bot.decode_cfg
        if body.decode is not None:
            dc = DecodeConfig(
                mode=body.decode.mode or dc.mode,
                beam_width=body.decode.beam_width or dc.beam_width,
                chosen_beam=body.decode.chosen_beam or dc.chosen_beam,
                length_penalty=dc.length_penalty
                if body.decode.length_penalty is None
                else body.decode.length_penalty,
                mask_unk=dc.mask_unk,
            )
            if dc.chosen_beam > dc.beam_width:
                return JSONResponse(
                    status_code=400,
                    content={"detail": f"chosen_beam {dc.chosen_beam} > beam_width {dc.beam_width}"},
                )
        with sess.lock:
            ex = bot.exchange(sess.state, body.text, dc)
        return {
            "response": ex.response,
            "user_act": {
                "label": ex.user_turn["act"],
                "probs": ex.user_turn["act_probs"],
            },
            "beams": ex.beams,
            "context_norm": ex.context_norm,
        }

    @app.get("/v1/session/{session_id}/transcript")
    def transcript(session_id: str):
        sess = _get(session_id)
        if sess is None:
            return JSONResponse(status_code=404, content={"detail": "unknown session"})
        with sess.lock:
            return {"session_id": session_id, "transcript": sess.state.transcript()}

    @app.post("/v1/classify")
    def classify(body: ClassifyIn):
        seq = encode(bot.da.vocab, tokenize(body.text), max_len=bot.da.config.max_len)
        act, probs = bot.da.predict(seq)
        return {"label": act.label, "probs": [float(x) for x in probs]}

    return app
