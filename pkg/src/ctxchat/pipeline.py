"""Corpus-to-model wiring: vocabulary construction, per-mode pair building
(including the baseline-2 window transform), per-pair context tables for
css training, and the end-to-end train commands the CLI drives.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .config import RunConfig
from .corpus import (
    SEP_TOKEN,
    CornellParse,
    DialogueAct,
    DialoguePair,
    SwdaParse,
    TokenSequence,
    Vocabulary,
    build_vocab,
    class_histogram,
    condense_tags,
    encode,
    window_concat,
)
from .da_encoder import (
    DAEncoder,
    LabeledUtterance,
    average_context,
    evaluate_da,
    train_da,
)
from .da_encoder import write_loss_csv as write_da_loss_csv
from .dialogue_state import pair_window_starts
from .seq2seq import Seq2SeqModel, train_seq2seq
from .seq2seq import write_loss_csv as write_seq2seq_loss_csv

logger = logging.getLogger(__name__)


def _same_speaker_window(turns: list[TokenSequence], i: int, k: int) -> list[TokenSequence]:
    picked = [turns[j] for j in range(i, -1, -2)][:k]
    return list(reversed(picked))


def build_generation_corpus(parse: CornellParse, cfg: RunConfig) -> tuple[Vocabulary, list[DialoguePair]]:
    """Vocabulary plus encoded pairs for the configured seq2seq mode.

    baseline2 swaps each pair's input for the windowed concat of preceding
    turns (separator-joined, left-truncated); pair ordering follows
    conversation order so context tables can align by pair_index.
    """
    mode = cfg.seq2seq.mode
    extra = (SEP_TOKEN,) if mode == "baseline2" else ()
    vocab = build_vocab(
        (t for conv in parse.conversations for t in conv), cfg.corpus.vocab_size, extra
    )
    sep_id = vocab.token_to_id.get(SEP_TOKEN)
    k = cfg.corpus.window
    pairs: list[DialoguePair] = []
    for cid, conv in enumerate(parse.conversations):
        enc_turns = [encode(vocab, t) for t in conv]
        for i in range(len(conv) - 1):
            if mode == "baseline2":
                history = (
                    enc_turns[: i + 1]
                    if cfg.corpus.window_both_speakers
                    else _same_speaker_window(enc_turns, i, k)
                )
                utt = window_concat(history, k, sep_id, cfg.corpus.max_in_len)
            else:
                utt = encode(vocab, conv[i], max_len=cfg.corpus.max_in_len)
            pairs.append(
                DialoguePair(utt, encode(vocab, conv[i + 1]), f"c{cid}", i, pair_index=len(pairs))
            )
    return vocab, pairs


def build_context_table(parse: CornellParse, da: DAEncoder, cfg: RunConfig) -> np.ndarray:
    """Per-pair context vectors mirroring the chat-time window semantics:
    the mean DA hidden vector over the preceding two exchange pairs of the
    pair's utterance turn."""
    ctx_cfg = cfg.context
    dim = da.config.hidden_dim
    max_len = da.config.max_len
    rows: list[np.ndarray] = []
    for conv in parse.conversations:
        turn_vecs = [da.context_vector(encode(da.vocab, t, max_len=max_len)) for t in conv]
        for i in range(len(conv) - 1):
            upto = i + 1 if ctx_cfg.include_current else i
            if ctx_cfg.granularity == "turn":
                window = turn_vecs[max(0, upto - 2 * ctx_cfg.window_pairs) : upto]
            else:
                window = []
                for s in pair_window_starts(upto, ctx_cfg.window_pairs):
                    tokens = [tok for t in conv[s : min(s + 2, upto)] for tok in t]
                    window.append(da.context_vector(encode(da.vocab, tokens, max_len=max_len)))
            rows.append(average_context(window, dim))
    return np.stack(rows) if rows else np.zeros((0, dim), dtype=np.float32)


# ---------------------------------------------------------------------------
# dialogue-act training

def build_da_dataset(
    parse: SwdaParse, mapping: dict[str, DialogueAct], vocab: Vocabulary, max_len: int
) -> list[LabeledUtterance]:
    return [
        LabeledUtterance(
            encode(vocab, u.tokens, max_len=max_len), condense_tags(u.act_tag, mapping).value
        )
        for u in parse.utterances
    ]


def split_train_val(items: list, val_fraction: float, seed: int) -> tuple[list, list]:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x5B1])))
    order = rng.permutation(len(items))
    n_val = int(len(items) * val_fraction)
    return [items[i] for i in order[n_val:]], [items[i] for i in order[:n_val]]


def run_train_da(
    cfg: RunConfig,
    swda_parse: SwdaParse,
    mapping: dict[str, DialogueAct],
    out_path,
    loss_csv=None,
    confusion_csv=None,
) -> DAEncoder:
    hist = class_histogram(swda_parse.utterances, mapping)
    logger.info("dialogue-act class histogram: %s", dict(hist))
    vocab = build_vocab((u.tokens for u in swda_parse.utterances), cfg.corpus.vocab_size)
    dataset = build_da_dataset(swda_parse, mapping, vocab, cfg.da.max_len)
    train_set, val_set = split_train_val(dataset, cfg.corpus.val_fraction, cfg.seed)
    model = DAEncoder.init(cfg.da, vocab, seed=cfg.seed)
    history = train_da(
        model,
        train_set,
        val_set,
        epochs=cfg.da.epochs,
        seed=cfg.seed,
        optimizer=cfg.optimizer,
        batch_size=cfg.corpus.batch_size,
    )
    model.save(out_path, extra_config={"seed": cfg.seed})
    if loss_csv:
        write_da_loss_csv(loss_csv, history)
    if confusion_csv:
        _, cm = evaluate_da(model, val_set if val_set else train_set)
        cm.write_csv(confusion_csv)
    return model


def run_train_seq2seq(
    cfg: RunConfig,
    parse: CornellParse,
    out_path,
    da: DAEncoder | None = None,
    loss_csv=None,
) -> Seq2SeqModel:
    if cfg.seq2seq.mode == "css":
        if da is None:
            raise ValueError("css mode requires a trained dialogue-act checkpoint")
        cfg.seq2seq.context_dim = da.config.hidden_dim
    vocab, pairs = build_generation_corpus(parse, cfg)
    ctx_table = build_context_table(parse, da, cfg) if cfg.seq2seq.mode == "css" else None
    model = Seq2SeqModel.init(cfg.seq2seq, vocab, seed=cfg.seed)
    history = train_seq2seq(
        model,
        pairs,
        ctx_table,
        cfg.corpus,
        cfg.optimizer,
        epochs=cfg.seq2seq.epochs,
        seed=cfg.seed,
    )
    model.save(
        out_path,
        extra_config={"seed": cfg.seed, "corpus": vars(cfg.corpus).copy(), "context": vars(cfg.context).copy()},
    )
    if loss_csv:
        write_seq2seq_loss_csv(loss_csv, history)
    return model
