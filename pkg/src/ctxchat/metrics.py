"""Quantitative evaluation: response length statistics, corpus-wide unigram
diversity, specificity score aggregation, and transcript replay.

Diversity is distinct unigrams across the whole response set divided by the
total token count; EOS/PAD never enter any count (responses are stored as
surface token lists). Specificity scoring itself is an external tool; only
its per-response scores are ingested and averaged here.
"""

from __future__ import annotations

import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)


class MetricsError(ValueError):
    """Raised for empty sets or malformed score files."""


@dataclass
class ResponseSet:
    model_name: str
    responses: list[list[str]] = field(default_factory=list)


@dataclass
class MetricsReport:
    model_name: str
    median_length: float
    mean_length: float
    diversity: float
    mean_specificity: float | None = None

    def csv_row(self) -> str:
        spec = "" if self.mean_specificity is None else repr(self.mean_specificity)
        return f"{self.model_name},{self.median_length!r},{self.mean_length!r},{self.diversity!r},{spec}"


REPORT_HEADER = "model,median_len,mean_len,diversity,mean_specificity"


def length_stats(rs: ResponseSet) -> tuple[float, float]:
    """(mean, median) token counts; median averages the two middles for even n."""
    if not rs.responses:
        raise MetricsError("length_stats on an empty response set")
    lengths = [len(r) for r in rs.responses]
    return sum(lengths) / len(lengths), float(statistics.median(lengths))


def diversity(rs: ResponseSet) -> float:
    """Distinct unigrams across all responses / total generated tokens."""
    total = sum(len(r) for r in rs.responses)
    if total == 0:
        raise MetricsError("diversity undefined on zero generated tokens")
    distinct = len({tok for r in rs.responses for tok in r})
    return distinct / total


def aggregate_specificity(rs: ResponseSet, scores_file) -> float:
    """Mean of one external [0, 1] score per response."""
    path = Path(scores_file)
    if not path.is_file():
        raise MetricsError(f"specificity scores file not found: {path}")
    scores = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            val = float(line)
        except ValueError as exc:
            raise MetricsError(f"{path}:{lineno}: not a number: {line!r}") from exc
        if not 0.0 <= val <= 1.0:
            raise MetricsError(f"{path}:{lineno}: score {val} outside [0, 1]")
        scores.append(val)
    if len(scores) != len(rs.responses):
        raise MetricsError(
            f"{len(scores)} scores for {len(rs.responses)} responses in {path}"
        )
    return sum(scores) / len(scores)


def report(rs: ResponseSet, scores_file=None) -> MetricsReport:
    mean, median = length_stats(rs)
    return MetricsReport(
        rs.model_name,
        median,
        mean,
        diversity(rs),
        None if scores_file is None else aggregate_specificity(rs, scores_file),
    )


# ---------------------------------------------------------------------------
# transcript replay

def parse_user_turns(path) -> list[list[str]]:
    """Conversations separated by blank lines, one utterance per line."""
    text = Path(path).read_text(encoding="utf-8")
    conversations: list[list[str]] = []
    block: list[str] = []
    for line in text.splitlines():
        if line.strip():
            block.append(line.strip())
        elif block:
            conversations.append(block)
            block = []
    if block:
        conversations.append(block)
    return conversations


def replay_transcripts(conversations: list[list[str]], bot) -> tuple[ResponseSet, list[list[dict]]]:
    """Feed each conversation's user turns to the bot, collecting its fills.

    ``bot`` provides ``new_state()`` and ``respond(state, text) -> str`` and
    names itself via ``model_name``. Produces exactly one response per user
    turn; empty conversations are skipped with a warning.
    """
    rs = ResponseSet(bot.model_name)
    transcripts: list[list[dict]] = []
    for i, conv in enumerate(conversations):
        if not conv:
            logger.warning("skipping empty conversation %d", i)
            continue
        state = bot.new_state()
        for text in conv:
            reply = bot.respond(state, text)
            rs.responses.append(reply.split() if reply else [])
        transcripts.append(state.transcript())
    if not rs.responses:
        raise MetricsError("replay produced no responses (empty transcript file?)")
    return rs, transcripts
