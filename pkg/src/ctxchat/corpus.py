"""Tokenization, vocabulary, corpus parsers, dialogue-act condensation,
and the padding/binning/batching pipeline.

Two on-disk formats are understood:

* Cornell movie-dialogue style: a lines file with fields separated by the
  literal 9-character delimiter " +++$+++ ", and a conversations file whose
  last field is a bracketed quoted list of line ids.
* SwDA style: one CSV per conversation with (at least) an act-tag column and
  a text column; disfluency markup ({...} marker wrappers, <...> spans) is
  stripped before tokenizing.
"""

from __future__ import annotations

import ast
import csv
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

PAD, UNK, SOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<sos>", "<eos>")
SEP_TOKEN = "<sep>"
CORNELL_DELIM = " +++$+++ "


class CorpusError(ValueError):
    """Raised for unusable corpus files or config."""


class DialogueAct(Enum):
    """The 10 condensed discourse classes, in table order."""

    ACCEPT = 0
    NON_OPINIONATED = 1
    BACKCHANNEL = 2
    OPINIONATED = 3
    QUESTION = 4
    SUMMARIZE = 5
    REJECT = 6
    CONVENTIONAL = 7
    NON_VERBAL = 8
    OTHER = 9

    @property
    def label(self) -> str:
        return _ACT_LABELS[self.value]


_ACT_LABELS = [
    "Accept",
    "NonOpinionated",
    "Backchannel",
    "Opinionated",
    "Question",
    "Summarize",
    "Reject",
    "Conventional",
    "NonVerbal",
    "Other",
]
_ACT_BY_NAME = {label.lower(): DialogueAct(i) for i, label in enumerate(_ACT_LABELS)}

NUM_ACTS = len(_ACT_LABELS)


# ---------------------------------------------------------------------------
# tokenization

# bracketed annotations stay whole; words keep internal apostrophes;
# any other non-space char is its own token
_TOKEN_RE = re.compile(r"\[[^\]\[]+\]|[a-z0-9]+(?:'[a-z0-9]+)*|[^\sa-z0-9]")
_SWDA_MARKUP_RE = re.compile(r"<[^<>]*>|\{[A-Za-z]?|\}")


def tokenize(text: str) -> list[str]:
    """Lowercase, split punctuation off, collapse whitespace."""
    return _TOKEN_RE.findall(text.lower())


def strip_swda_markup(text: str) -> str:
    """Drop {X ...} wrappers and <...> spans; keep the spoken words."""
    return _SWDA_MARKUP_RE.sub(" ", text)


# ---------------------------------------------------------------------------
# vocabulary

@dataclass
class TokenSequence:
    """Integer-encoded utterance; ``length`` is the true length before padding."""

    ids: list[int]
    length: int

    @classmethod
    def of(cls, ids: list[int]) -> "TokenSequence":
        return cls(ids, len(ids))


class Vocabulary:
    """Deterministic frequency-ordered token table with fixed reserved ids."""

    def __init__(self, tokens: list[str]):
        self.id_to_token = list(RESERVED) + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise CorpusError("duplicate token in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)


def build_vocab(corpus, max_size: int, extra_tokens: tuple[str, ...] = ()) -> Vocabulary:
    """Top tokens by frequency (lexicographic tie-break), after 4 reserved ids.

    ``extra_tokens`` (e.g. the baseline-2 separator) are placed right after
    the reserved ids and do not count against frequency ranking.
    """
    if max_size < 5:
        raise CorpusError(f"vocabulary max_size must be at least 5, got {max_size}")
    counts: Counter[str] = Counter()
    for tokens in corpus:
        counts.update(tokens)
    for t in extra_tokens:
        counts.pop(t, None)
    budget = max_size - len(RESERVED) - len(extra_tokens)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [t for t, _ in ranked[:budget]]
    return Vocabulary(list(extra_tokens) + kept)


def encode(
    vocab: Vocabulary,
    tokens: list[str],
    max_len: int | None = None,
    add_eos: bool = False,
) -> TokenSequence:
    """Map tokens to ids (OOV -> UNK), truncating to max_len with EOS preserved."""
    ids = [vocab.id_of(t) for t in tokens]
    if add_eos:
        if max_len is not None and len(ids) + 1 > max_len:
            ids = ids[: max_len - 1]
        ids.append(EOS)
    elif max_len is not None:
        ids = ids[:max_len]
    return TokenSequence.of(ids)


def decode(vocab: Vocabulary, ids) -> list[str]:
    out = []
    for i in ids:
        i = int(i)
        if not 0 <= i < len(vocab):
            raise CorpusError(f"token id {i} out of range for vocabulary of {len(vocab)}")
        out.append(vocab.id_to_token[i])
    return out


def ids_to_text(vocab: Vocabulary, ids) -> str:
    """Render generated ids for humans: reserved markers dropped."""
    toks = [t for t in decode(vocab, ids) if t not in RESERVED]
    return " ".join(toks)


# ---------------------------------------------------------------------------
# parsers

@dataclass
class RawPair:
    """A tokenized utterance/response pair, pre-vocabulary."""

    utterance: list[str]
    response: list[str]
    conversation_id: str
    turn_index: int


@dataclass
class CornellParse:
    pairs: list[RawPair]
    conversations: list[list[list[str]]]  # per conversation, per turn, tokens
    skipped: int


def parse_cornell(lines_file, conversations_file) -> CornellParse:
    """Adjacent line pairs within each scripted conversation.

    Malformed rows (wrong field count, unresolvable line ids) are skipped and
    counted.
    """
    lines_path, convs_path = Path(lines_file), Path(conversations_file)
    if not lines_path.is_file():
        raise CorpusError(f"lines file not found: {lines_path}")
    if not convs_path.is_file():
        raise CorpusError(f"conversations file not found: {convs_path}")

    skipped = 0
    line_text: dict[str, str] = {}
    with open(lines_path, encoding="utf-8", errors="replace") as fh:
        for row in fh:
            row = row.rstrip("\n")
            if not row:
                continue
            fields = row.split(CORNELL_DELIM)
            if len(fields) != 5:
                skipped += 1
                continue
            line_text[fields[0]] = fields[4]

    pairs: list[RawPair] = []
    conversations: list[list[list[str]]] = []
    with open(convs_path, encoding="utf-8", errors="replace") as fh:
        for conv_index, row in enumerate(fh):
            row = row.rstrip("\n")
            if not row:
                continue
            fields = row.split(CORNELL_DELIM)
            try:
                line_ids = ast.literal_eval(fields[-1])
                if not isinstance(line_ids, (list, tuple)):
                    raise ValueError
            except (ValueError, SyntaxError):
                skipped += 1
                continue
            turns = []
            for lid in line_ids:
                if lid not in line_text:
                    skipped += 1
                    logger.warning("unresolvable line id %s in conversation %d", lid, conv_index)
                    continue
                turns.append(tokenize(line_text[lid]))
            conversations.append(turns)
            cid = f"c{conv_index}"
            for i in range(len(turns) - 1):
                pairs.append(RawPair(turns[i], turns[i + 1], cid, i))
    if skipped:
        logger.info("parse_cornell skipped %d malformed rows", skipped)
    return CornellParse(pairs, conversations, skipped)


@dataclass
class SwdaUtterance:
    act_tag: str
    tokens: list[str]
    conversation_id: str
    turn_index: int


@dataclass
class SwdaParse:
    utterances: list[SwdaUtterance]
    skipped: int


def parse_swda(
    csv_dir, act_column: str = "act_tag", text_column: str = "text"
) -> SwdaParse:
    """All tagged utterances from a directory of per-conversation CSVs, in turn order."""
    root = Path(csv_dir)
    if not root.is_dir():
        raise CorpusError(f"SwDA directory not found: {root}")
    files = sorted(root.glob("*.csv"))
    if not files:
        raise CorpusError(f"no .csv files under {root}")
    utts: list[SwdaUtterance] = []
    skipped = 0
    for path in files:
        with open(path, encoding="utf-8", errors="replace", newline="") as fh:
            reader = csv.DictReader(fh)
            turn = 0
            for row in reader:
                tag = (row.get(act_column) or "").strip()
                text = row.get(text_column)
                if not tag or text is None:
                    skipped += 1
                    logger.warning("skipping malformed row in %s", path.name)
                    continue
                tokens = tokenize(strip_swda_markup(text))
                if not tokens:
                    skipped += 1
                    continue
                utts.append(SwdaUtterance(tag, tokens, path.stem, turn))
                turn += 1
    if skipped:
        logger.info("parse_swda skipped %d rows", skipped)
    return SwdaParse(utts, skipped)


# ---------------------------------------------------------------------------
# dialogue-act condensation

_TAG_MODIFIER_RE = re.compile(r"[\^(;,@*].*$")


def load_tag_mapping(path) -> dict[str, DialogueAct]:
    """Parse a `raw_tag<TAB>ClassName` mapping file; `#` comments allowed."""
    mapping: dict[str, DialogueAct] = {}
    p = Path(path)
    if not p.is_file():
        raise CorpusError(f"tag mapping file not found: {p}")
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise CorpusError(f"{p}:{lineno}: expected `raw_tag<TAB>ClassName`")
        raw, cls = parts[0].strip(), parts[1].strip()
        act = _ACT_BY_NAME.get(cls.lower())
        if act is None:
            raise CorpusError(f"{p}:{lineno}: unknown dialogue-act class {cls!r}")
        mapping[raw] = act
    return mapping


def default_tag_mapping() -> dict[str, DialogueAct]:
    from importlib.resources import files

    return load_tag_mapping(files("ctxchat").joinpath("data/swda_tag_map.tsv"))


def condense_tags(raw_tag: str, mapping: dict[str, DialogueAct]) -> DialogueAct:
    """Total map from any raw tag string onto the 10 classes.

    Exact lookup first; then retried with trailing `^...`/(...) modifiers
    stripped (so `sd^e` falls back to `sd` while `^h` itself still matches);
    anything else is Other.
    """
    act = mapping.get(raw_tag)
    if act is not None:
        return act
    core = raw_tag[0] + _TAG_MODIFIER_RE.sub("", raw_tag[1:]) if raw_tag else raw_tag
    return mapping.get(core, DialogueAct.OTHER)


def class_histogram(utterances: list[SwdaUtterance], mapping: dict[str, DialogueAct]) -> Counter:
    counts: Counter[str] = Counter()
    for u in utterances:
        counts[condense_tags(u.act_tag, mapping).label] += 1
    return counts


# ---------------------------------------------------------------------------
# baseline-2 windowing

def window_concat(
    history: list[TokenSequence], k: int, sep_id: int | None, max_len: int = 50
) -> TokenSequence:
    """Join the last k utterances with a separator, left-truncated to max_len."""
    if k < 1:
        raise CorpusError(f"window size must be >= 1, got {k}")
    window = history[-k:]
    ids: list[int] = []
    for i, seq in enumerate(window):
        if i and sep_id is not None:
            ids.append(sep_id)
        ids.extend(seq.ids[: seq.length])
    if len(ids) > max_len:
        ids = ids[-max_len:]
    return TokenSequence.of(ids)


# ---------------------------------------------------------------------------
# encoded pairs and bucketing

@dataclass
class DialoguePair:
    """Integer-encoded utterance/response pair (the trainable unit)."""

    utterance: TokenSequence
    response: TokenSequence
    conversation_id: str
    turn_index: int
    pair_index: int = 0


@dataclass
class BucketedBatch:
    bucket_bound: int
    utterances: np.ndarray  # [B, bound] int32, PAD-padded
    responses: np.ndarray  # [B, bound+1] int32: SOS + ids + EOS + PAD
    utterance_lengths: np.ndarray  # [B]
    response_lengths: np.ndarray  # [B] (true length, excluding SOS/EOS)
    pair_indices: np.ndarray  # [B] row -> index into the source pair list

    @property
    def decoder_inputs(self) -> np.ndarray:
        return self.responses[:, :-1]

    @property
    def decoder_targets(self) -> np.ndarray:
        return self.responses[:, 1:]


@dataclass
class BucketStream:
    batches: list[BucketedBatch]
    dropped: int


def bucket_batches(
    pairs: list[DialoguePair],
    bucket_bounds: list[int],
    batch_size: int,
    seed: int,
) -> BucketStream:
    """Assign pairs to the smallest bucket covering max(len(utt), len(resp)+1),
    pad, shuffle deterministically by seed, and emit fixed-size batches.

    Pairs exceeding the last bound are dropped (counted).
    """
    if list(bucket_bounds) != sorted(bucket_bounds):
        raise CorpusError(f"bucket bounds must be ascending, got {bucket_bounds}")
    rng = np.random.Generator(np.random.PCG64(seed))
    by_bucket: dict[int, list[int]] = {b: [] for b in bucket_bounds}
    dropped = 0
    for i, pair in enumerate(pairs):
        need = max(pair.utterance.length, pair.response.length + 1)
        bound = next((b for b in bucket_bounds if need <= b), None)
        if bound is None:
            dropped += 1
            continue
        by_bucket[bound].append(i)
    if dropped:
        logger.info("bucket_batches dropped %d over-length pairs", dropped)

    batches: list[BucketedBatch] = []
    for bound in bucket_bounds:
        idx = np.array(by_bucket[bound], dtype=np.int64)
        if idx.size == 0:
            continue
        idx = idx[rng.permutation(idx.size)]
        for start in range(0, idx.size, batch_size):
            rows = idx[start : start + batch_size]
            n = rows.size
            utt = np.full((n, bound), PAD, dtype=np.int32)
            resp = np.full((n, bound + 1), PAD, dtype=np.int32)
            ulen = np.zeros(n, dtype=np.int64)
            rlen = np.zeros(n, dtype=np.int64)
            for r, pi in enumerate(rows):
                p = pairs[pi]
                u = p.utterance.ids[: p.utterance.length]
                v = p.response.ids[: p.response.length]
                utt[r, : len(u)] = u
                resp[r, 0] = SOS
                resp[r, 1 : 1 + len(v)] = v
                resp[r, 1 + len(v)] = EOS
                ulen[r] = len(u)
                rlen[r] = len(v)
            batches.append(BucketedBatch(bound, utt, resp, ulen, rlen, rows.astype(np.int64)))
    order = rng.permutation(len(batches))
    return BucketStream([batches[i] for i in order], dropped)


def encode_pairs(
    vocab: Vocabulary, raw_pairs: list[RawPair], max_in_len: int = 50
) -> list[DialoguePair]:
    """Integer-encode parsed pairs; utterances truncated to the input limit,
    responses left whole (over-length ones fall out at bucketing)."""
    out = []
    for i, rp in enumerate(raw_pairs):
        out.append(
            DialoguePair(
                encode(vocab, rp.utterance, max_len=max_in_len),
                encode(vocab, rp.response),
                rp.conversation_id,
                rp.turn_index,
                pair_index=i,
            )
        )
    return out
