"""Per-conversation rolling state: transcript plus cached per-turn context
vectors, and the averaged context handed to the generator.

The context window is the preceding two exchange pairs. A turn's context
vector and predicted dialogue act are computed exactly once, when the turn
is pushed; the state is append-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import DialogueAct, TokenSequence, Vocabulary, encode, tokenize
from .da_encoder import DAEncoder, average_context


def pair_window_starts(n_turns: int, window_pairs: int) -> list[int]:
    """Start indices of the trailing exchange pairs among n turns, oldest
    first; a trailing odd turn forms a partial pair of its own."""
    starts = list(range(n_turns - 2, -1, -2))
    if n_turns % 2 == 1:
        starts = [n_turns - 1] + list(range(n_turns - 3, -1, -2))
    return sorted(starts[:window_pairs])


@dataclass
class Turn:
    speaker: str  # "user" | "bot"
    text: str
    tokens: TokenSequence
    context_vector: np.ndarray
    act: DialogueAct | None
    act_probs: np.ndarray | None


@dataclass
class DialogueState:
    """Ordered transcript for one chat session.

    ``encoder`` may be None (baseline modes without a DA checkpoint); turns
    then carry zero context vectors and no act prediction.
    """

    vocab: Vocabulary
    encoder: DAEncoder | None
    context_dim: int
    window_pairs: int = 2
    granularity: str = "turn"  # turn | pair
    turns: list[Turn] = field(default_factory=list)
    _pair_vector_cache: dict[int, np.ndarray] = field(default_factory=dict)

    def push_turn(self, speaker: str, text: str) -> Turn:
        if speaker not in ("user", "bot"):
            raise ValueError(f"speaker must be 'user' or 'bot', got {speaker!r}")
        tokens = encode(self.vocab, tokenize(text))
        if self.encoder is not None:
            vec, probs = self.encoder.da_forward(
                encode(self.encoder.vocab, tokenize(text), max_len=self.encoder.config.max_len)
            )
            act = DialogueAct(int(np.argmax(probs)))
        else:
            vec = np.zeros(self.context_dim, dtype=np.float32)
            act, probs = None, None
        turn = Turn(speaker, text, tokens, vec, act, probs)
        self.turns.append(turn)
        return turn

    def current_context(self) -> np.ndarray:
        """Mean context vector over the turns of the preceding two exchange
        pairs (trailing window; partial window at conversation start
        contributes what exists; empty history -> zero vector)."""
        if self.granularity == "pair":
            return self._pair_context()
        window = self.turns[-(2 * self.window_pairs):]
        return average_context([t.context_vector for t in window], self.context_dim)

    def _pair_context(self) -> np.ndarray:
        """One vector per exchange pair: the pair's turns are concatenated and
        encoded as a single utterance."""
        if self.encoder is None:
            return np.zeros(self.context_dim, dtype=np.float32)
        starts = pair_window_starts(len(self.turns), self.window_pairs)
        vectors = []
        for s in starts:
            if s in self._pair_vector_cache:
                vectors.append(self._pair_vector_cache[s])
                continue
            text = " ".join(t.text for t in self.turns[s : s + 2])
            vec = self.encoder.context_vector(
                encode(self.encoder.vocab, tokenize(text), max_len=self.encoder.config.max_len)
            )
            self._pair_vector_cache[s] = vec
            vectors.append(vec)
        return average_context(vectors, self.context_dim)

    def history_sequences(self) -> list[TokenSequence]:
        return [t.tokens for t in self.turns]

    def transcript(self) -> list[dict]:
        """Serializable ordered records consumed by the service and UI."""
        out = []
        for t in self.turns:
            out.append(
                {
                    "speaker": t.speaker,
                    "text": t.text,
                    "act": t.act.label if t.act is not None else None,
                    "act_probs": [float(x) for x in t.act_probs] if t.act_probs is not None else None,
                }
            )
        return out
