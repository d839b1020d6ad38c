"""Generation pipeline shared by the chat REPL, the HTTP service, and
transcript replay: input construction per mode, context computation, decode.

Context for a response is computed before the current user turn is pushed
(the current utterance does not contribute) unless
``context.include_current`` says otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ContextConfig, DecodeConfig
from .corpus import SEP_TOKEN, TokenSequence, encode, ids_to_text, tokenize, window_concat
from .da_encoder import DAEncoder
from .dialogue_state import DialogueState
from .seq2seq import Seq2SeqModel


@dataclass
class Exchange:
    response: str
    user_turn: dict
    beams: list[dict]
    context_norm: float


class ChatBot:
    def __init__(
        self,
        model: Seq2SeqModel,
        da: DAEncoder | None,
        decode_cfg: DecodeConfig,
        context_cfg: ContextConfig | None = None,
        window: int = 2,
        max_in_len: int = 50,
        max_out_len: int = 50,
        model_name: str | None = None,
    ):
        if model.config.mode == "css" and da is None:
            raise ValueError("css mode requires a dialogue-act encoder checkpoint")
        if da is not None and da.config.hidden_dim != model.config.context_dim:
            raise ValueError(
                f"DA hidden dim {da.config.hidden_dim} != model context dim {model.config.context_dim}"
            )
        self.model = model
        self.da = da
        self.decode_cfg = decode_cfg
        self.context_cfg = context_cfg or ContextConfig()
        self.window = window
        self.max_in_len = max_in_len
        self.max_out_len = max_out_len
        self.model_name = model_name or model.config.mode

    def new_state(self) -> DialogueState:
        return DialogueState(
            self.model.vocab,
            self.da,
            self.model.config.context_dim,
            window_pairs=self.context_cfg.window_pairs,
            granularity=self.context_cfg.granularity,
        )

    def _input_sequence(self, state: DialogueState, text: str) -> TokenSequence:
        """Single utterance, or the baseline-2 window ending at it."""
        tokens = tokenize(text)
        if not tokens:
            tokens = ["<unk>"]
        if self.model.config.mode == "baseline2":
            history = state.history_sequences()  # current turn already pushed
            sep = self.model.vocab.token_to_id.get(SEP_TOKEN)
            return window_concat(history, self.window, sep, self.max_in_len)
        return encode(self.model.vocab, tokens, max_len=self.max_in_len)

    def _decode(self, seq: TokenSequence, ctx: np.ndarray, decode_cfg: DecodeConfig):
        # greedy == beam with width 1 (a verified invariant); routing both
        # through beam_decode gives the UI a real log-probability either way
        beam = decode_cfg.mode == "beam"
        result = self.model.beam_decode(
            seq,
            ctx,
            width=decode_cfg.beam_width if beam else 1,
            length_penalty=decode_cfg.length_penalty if beam else 0.0,
            chosen_beam=decode_cfg.chosen_beam if beam else 1,
            max_out_len=self.max_out_len,
            mask_unk=decode_cfg.mask_unk,
        )
        return result.output, result.beams, result.chosen_rank

    def exchange(self, state: DialogueState, text: str, decode_cfg: DecodeConfig | None = None) -> Exchange:
        """Full turn: push user text, generate, push the bot reply."""
        dc = decode_cfg or self.decode_cfg
        if self.model.config.mode == "css" and not self.context_cfg.include_current:
            ctx = state.current_context()
        else:
            ctx = None
        user_turn = state.push_turn("user", text)
        if self.model.config.mode == "css":
            if ctx is None:
                ctx = state.current_context()
        else:
            ctx = self.model.zero_context(1)[0]
        seq = self._input_sequence(state, text)
        out, beams, chosen_rank = self._decode(seq, ctx, dc)
        response = ids_to_text(self.model.vocab, out.ids)
        state.push_turn("bot", response)
        beam_dicts = [
            {
                "text": ids_to_text(self.model.vocab, b.surface()),
                "logprob": b.logprob,
                "chosen": i + 1 == chosen_rank,
            }
            for i, b in enumerate(beams)
        ]
        return Exchange(
            response=response,
            user_turn={
                "speaker": user_turn.speaker,
                "text": user_turn.text,
                "act": user_turn.act.label if user_turn.act else None,
                "act_probs": [float(x) for x in user_turn.act_probs]
                if user_turn.act_probs is not None
                else None,
            },
            beams=beam_dicts,
            context_norm=float(np.linalg.norm(ctx)),
        )

    def respond(self, state: DialogueState, text: str) -> str:
        """Replay-style single response (the `bot` protocol for metrics)."""
        return self.exchange(state, text).response
