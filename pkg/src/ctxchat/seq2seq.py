"""Dialogue generator: bidirectional LSTM encoder, multiplicative attention
decoder, and conversation-context fusion.

Three modes share one computation: `css` feeds the DA encoder's averaged
hidden vector as context, `baseline1` freezes the context to zero (the
fusion affine still applies), `baseline2` additionally swaps the input for
a concatenated window of previous utterances. Context is concatenated to
every encoder state (512 + 512 = 1024 by default) and reduced by a shared
feed-forward layer to the decoder hidden size (256), producing the
attention keys.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph, ShapeError, Tensor, log_softmax
from .checkpoint import CheckpointError, LoadedCheckpoint, load_checkpoint, save_checkpoint
from .config import CorpusConfig, OptimizerConfig, Seq2SeqConfig
from .corpus import (
    EOS,
    PAD,
    SOS,
    UNK,
    BucketedBatch,
    DialoguePair,
    TokenSequence,
    Vocabulary,
    bucket_batches,
)
from .layers import affine, glorot, init_lstm, lstm_step, zeros
from .optim import AdamState, adam_step, clip_global_norm

logger = logging.getLogger(__name__)

MODEL_KIND = "seq2seq"


@dataclass
class EncoderStates:
    """Per-timestep forward||backward states plus the decoder-init summary."""

    states: list[Tensor]  # T tensors of [B, 2 * enc_hidden]
    mask: np.ndarray  # [B, T] bool, true on real tokens
    h0: Tensor  # [B, dec_hidden]
    c0: Tensor  # [B, dec_hidden]


@dataclass
class FusedKeys:
    """Attention keys after context concat + feed-forward reduction."""

    reduced: Tensor  # [B, T, dec_hidden]
    mask: np.ndarray  # [B, T]
    raw: Tensor | None = None  # [B, T, fused_dim], kept when scoring raw keys


@dataclass
class Beam:
    tokens: tuple[int, ...]  # generated ids; ends with EOS iff finished
    logprob: float
    finished: bool

    def surface(self) -> list[int]:
        return [t for t in self.tokens if t != EOS]


@dataclass
class BeamResult:
    output: TokenSequence
    beams: list[Beam]  # final beams, best first (length penalty applied)
    chosen_rank: int
    trace: list[list[tuple[tuple[int, ...], float]]] | None = None


class Seq2SeqModel:
    def __init__(self, config: Seq2SeqConfig, vocab: Vocabulary, params: dict[str, Tensor]):
        self.config = config
        self.vocab = vocab
        self.params = params

    @classmethod
    def init(cls, config: Seq2SeqConfig, vocab: Vocabulary, seed: int = 0, dtype=np.float32):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x5E9])))
        c = config
        V, E, He, Hd = len(vocab), c.embed_dim, c.encoder_hidden_per_dir, c.decoder_hidden
        p: dict[str, Tensor] = {}
        p["enc_embed"] = glorot(rng, (V, E), dtype, "enc_embed")
        p["dec_embed"] = glorot(rng, (V, E), dtype, "dec_embed")
        p.update(init_lstm(rng, E, He, dtype, "enc_fwd"))
        p.update(init_lstm(rng, E, He, dtype, "enc_bwd"))
        p["init_h.W"] = glorot(rng, (2 * He, Hd), dtype, "init_h.W")
        p["init_h.b"] = zeros((Hd,), dtype, "init_h.b")
        p["init_c.W"] = glorot(rng, (2 * He, Hd), dtype, "init_c.W")
        p["init_c.b"] = zeros((Hd,), dtype, "init_c.b")
        p["fuse.W"] = glorot(rng, (c.fused_dim, Hd), dtype, "fuse.W")
        p["fuse.b"] = zeros((Hd,), dtype, "fuse.b")
        att_key_dim = c.fused_dim if c.attend_raw_keys else Hd
        p["att.W"] = glorot(rng, (Hd, att_key_dim), dtype, "att.W")
        p.update(init_lstm(rng, E, Hd, dtype, "dec"))
        p["out.W"] = glorot(rng, (2 * Hd, V), dtype, "out.W")
        p["out.b"] = zeros((V,), dtype, "out.b")
        return cls(config, vocab, p)

    @property
    def param_list(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_context(self, batch: int, dtype=None) -> np.ndarray:
        dt = dtype or self.params["fuse.W"].dtype
        return np.zeros((batch, self.config.context_dim), dtype=dt)

    # ------------------------------------------------------------------
    # forward pieces

    def encode(self, g: Graph, ids: np.ndarray, lengths: np.ndarray) -> EncoderStates:
        """Bidirectional pass over [B, T] ids; padded steps carry state unchanged."""
        p = self.params
        B, T = ids.shape
        if T < 1 or (np.asarray(lengths) < 1).any():
            raise ShapeError("encoder input must have length >= 1 (substitute a single UNK)")
        Hd = self.config.decoder_hidden
        He = self.config.encoder_hidden_per_dir
        dtype = p["enc_embed"].dtype
        lengths = np.asarray(lengths)

        def zeros_t():
            return Tensor(np.zeros((B, He), dtype=dtype))

        xs = [g.gather_rows(p["enc_embed"], ids[:, t]) for t in range(T)]
        fwd_states: list[Tensor] = []
        h, c = zeros_t(), zeros_t()
        for t in range(T):
            hn, cn = lstm_step(g, p, "enc_fwd", xs[t], h, c)
            valid = t < lengths
            h = g.where_rows(valid, hn, h)
            c = g.where_rows(valid, cn, c)
            fwd_states.append(h)
        h_fwd_final, c_fwd_final = h, c

        bwd_states: list[Tensor] = [None] * T  # type: ignore[list-item]
        h, c = zeros_t(), zeros_t()
        for t in range(T - 1, -1, -1):
            hn, cn = lstm_step(g, p, "enc_bwd", xs[t], h, c)
            valid = t < lengths
            h = g.where_rows(valid, hn, h)
            c = g.where_rows(valid, cn, c)
            bwd_states[t] = h
        h_bwd_final, c_bwd_final = h, c

        states = [g.concat([fwd_states[t], bwd_states[t]], axis=1) for t in range(T)]
        h0 = g.tanh(affine(g, g.concat([h_fwd_final, h_bwd_final], axis=1), p["init_h.W"], p["init_h.b"]))
        c0 = g.tanh(affine(g, g.concat([c_fwd_final, c_bwd_final], axis=1), p["init_c.W"], p["init_c.b"]))
        mask = np.arange(T)[None, :] < lengths[:, None]
        return EncoderStates(states, mask, h0, c0)

    def fuse_context(self, g: Graph, enc: EncoderStates, ctx: Tensor) -> FusedKeys:
        """Concat the context onto every encoder state (-> 1024) and reduce to 256."""
        p = self.params
        if ctx.data.ndim != 2 or ctx.shape[1] != self.config.context_dim:
            raise ShapeError(
                f"context must be [B, {self.config.context_dim}], got {ctx.shape}"
            )
        fused = [g.concat([s, ctx], axis=1) for s in enc.states]
        reduced = [g.tanh(affine(g, f, p["fuse.W"], p["fuse.b"])) for f in fused]
        keys = FusedKeys(g.stack_steps(reduced), enc.mask)
        if self.config.attend_raw_keys:
            keys.raw = g.stack_steps(fused)
        return keys

    def attention(self, g: Graph, query: Tensor, keys: FusedKeys) -> tuple[Tensor, Tensor]:
        """Multiplicative scores over fused keys, masked softmax, convex summary."""
        target = keys.raw if keys.raw is not None else keys.reduced
        scores = g.attend_scores(g.matmul(query, self.params["att.W"]), target)
        weights = g.masked_softmax(scores, keys.mask)
        summary = g.attend_mix(weights, keys.reduced)
        return weights, summary

    def decode_step(
        self, g: Graph, prev_ids: np.ndarray, h: Tensor, c: Tensor, keys: FusedKeys
    ) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        """Embed the previous token, step the LSTM, attend, project to the vocab."""
        p = self.params
        x = g.gather_rows(p["dec_embed"], np.asarray(prev_ids))
        h, c = lstm_step(g, p, "dec", x, h, c)
        weights, summary = self.attention(g, h, keys)
        logits = affine(g, g.concat([h, summary], axis=1), p["out.W"], p["out.b"])
        return logits, h, c, weights

    # ------------------------------------------------------------------
    # decoding

    def _prepare(self, g: Graph, utterance: TokenSequence, ctx: np.ndarray, beams: int = 1):
        ids = np.asarray(utterance.ids[: utterance.length], dtype=np.int64)[None, :]
        if ids.shape[1] == 0:
            ids = np.array([[UNK]], dtype=np.int64)
        enc = self.encode(g, ids, np.array([ids.shape[1]]))
        ctx2 = np.asarray(ctx, dtype=self.params["fuse.W"].dtype).reshape(1, -1)
        keys = self.fuse_context(g, enc, Tensor(ctx2))
        if beams > 1:
            keys = FusedKeys(
                Tensor(np.repeat(keys.reduced.data, beams, axis=0)),
                np.repeat(keys.mask, beams, axis=0),
                raw=None if keys.raw is None else Tensor(np.repeat(keys.raw.data, beams, axis=0)),
            )
            h0 = Tensor(np.repeat(enc.h0.data, beams, axis=0))
            c0 = Tensor(np.repeat(enc.c0.data, beams, axis=0))
            return keys, h0, c0
        return keys, enc.h0, enc.c0

    def _step_logprobs(self, g, prev_ids, h, c, keys, mask_unk: bool):
        logits, h, c, _ = self.decode_step(g, prev_ids, h, c, keys)
        lp = log_softmax(logits.data)
        if mask_unk:
            lp[:, UNK] = -np.inf
        return lp, h, c

    def greedy_decode(
        self,
        utterance: TokenSequence,
        ctx: np.ndarray,
        max_out_len: int = 50,
        mask_unk: bool = True,
    ) -> TokenSequence:
        """Argmax decoding, dynamically unrolled to EOS or the length cap."""
        g = Graph(record=False)
        keys, h, c = self._prepare(g, utterance, ctx)
        out: list[int] = []
        prev = np.array([SOS])
        for _ in range(max_out_len):
            lp, h, c = self._step_logprobs(g, prev, h, c, keys, mask_unk)
            tok = int(np.argmax(lp[0]))
            if tok == EOS:
                break
            out.append(tok)
            prev = np.array([tok])
        return TokenSequence.of(out)

    def beam_decode(
        self,
        utterance: TokenSequence,
        ctx: np.ndarray,
        width: int = 3,
        length_penalty: float = 0.0,
        chosen_beam: int = 3,
        max_out_len: int = 50,
        mask_unk: bool = True,
        return_trace: bool = False,
    ) -> BeamResult:
        """Standard beam search over log-probs; the returned response is the
        beam at rank ``chosen_beam`` (1 = most probable) among final beams."""
        if not 1 <= chosen_beam <= width:
            raise ValueError(f"chosen_beam {chosen_beam} outside 1..{width}")
        g = Graph(record=False)
        keys1, h1, c1 = self._prepare(g, utterance, ctx)

        live = [Beam((), 0.0, False)]
        h = h1
        c = c1
        finished: list[Beam] = []
        trace: list[list[tuple[tuple[int, ...], float]]] | None = [] if return_trace else None
        V = len(self.vocab)
        steps = 0
        while live and steps < max_out_len:
            n = len(live)
            prev = np.array([b.tokens[-1] if b.tokens else SOS for b in live])
            if keys1.reduced.data.shape[0] != n:
                keys = FusedKeys(
                    Tensor(np.repeat(keys1.reduced.data, n, axis=0)),
                    np.repeat(keys1.mask, n, axis=0),
                    raw=None if keys1.raw is None else Tensor(np.repeat(keys1.raw.data, n, axis=0)),
                )
            else:
                keys = keys1
            lp, h, c = self._step_logprobs(g, prev, h, c, keys, mask_unk)
            cand_scores = np.array([b.logprob for b in live])[:, None] + lp  # [n, V]
            flat = cand_scores.reshape(-1)
            order = np.argsort(-flat, kind="stable")
            slots = width - len(finished)
            picked = order[:slots]
            if trace is not None:
                trace.append(
                    [(live[i // V].tokens + (i % V,), float(flat[i])) for i in order if np.isfinite(flat[i])]
                )
            new_live: list[Beam] = []
            rows: list[int] = []
            for flat_idx in picked:
                bi, tok = divmod(int(flat_idx), V)
                beam = Beam(live[bi].tokens + (tok,), float(flat[flat_idx]), tok == EOS)
                if beam.finished:
                    finished.append(beam)
                else:
                    new_live.append(beam)
                    rows.append(bi)
            if new_live:
                h = Tensor(h.data[rows])
                c = Tensor(c.data[rows])
            live = new_live
            steps += 1
        finished.extend(live)  # length cap reached: retire as-is

        def penalized(b: Beam) -> float:
            if length_penalty == 0.0:
                return b.logprob
            return b.logprob / max(len(b.surface()), 1) ** length_penalty

        finals = sorted(finished, key=lambda b: (-penalized(b), b.tokens))
        rank = min(chosen_beam, len(finals))
        chosen = finals[rank - 1]
        return BeamResult(TokenSequence.of(chosen.surface()), finals, rank, trace)

    # ------------------------------------------------------------------
    # persistence

    def save(self, path, extra_config: dict | None = None) -> None:
        cfg = {"seq2seq": vars(self.config).copy()}
        if extra_config:
            cfg.update(extra_config)
        save_checkpoint(
            path,
            MODEL_KIND,
            cfg,
            {k: v.data for k, v in self.params.items()},
            vocab_tokens=self.vocab.id_to_token[4:],
        )

    @classmethod
    def load(cls, path) -> "Seq2SeqModel":
        return cls.from_checkpoint(load_checkpoint(path, expect_kind=MODEL_KIND))

    @classmethod
    def from_checkpoint(cls, ck: LoadedCheckpoint) -> "Seq2SeqModel":
        cfg = Seq2SeqConfig(**ck.config["seq2seq"])
        if ck.vocab_tokens is None:
            raise CheckpointError("seq2seq checkpoint is missing its vocabulary")
        vocab = Vocabulary(ck.vocab_tokens)
        params = {
            name: Tensor(arr, requires_grad=True, name=name) for name, arr in ck.tensors.items()
        }
        return cls(cfg, vocab, params)


# ---------------------------------------------------------------------------
# training

@dataclass
class Seq2SeqEpochRow:
    epoch: int
    split: str
    loss: float


def batch_loss(
    model: Seq2SeqModel, g: Graph, batch: BucketedBatch, ctx_rows: np.ndarray
) -> tuple[Tensor, int]:
    """Teacher-forced mean per-token loss over non-PAD target positions."""
    targets = batch.decoder_targets
    dec_in = batch.decoder_inputs
    total_tokens = int((targets != PAD).sum())
    if total_tokens == 0:
        raise ValueError("batch has no unmasked target positions (all PAD)")
    enc = model.encode(g, batch.utterances.astype(np.int64), batch.utterance_lengths)
    keys = model.fuse_context(g, enc, Tensor(ctx_rows))
    h, c = enc.h0, enc.c0
    loss_sum: Tensor | None = None
    for t in range(targets.shape[1]):
        mask = targets[:, t] != PAD
        if not mask.any():
            break
        logits, h, c, _ = model.decode_step(g, dec_in[:, t], h, c, keys)
        step = g.cross_entropy_rowsum(logits, targets[:, t].astype(np.int64), mask)
        loss_sum = step if loss_sum is None else g.add(loss_sum, step)
    assert loss_sum is not None
    return g.scale(loss_sum, 1.0 / total_tokens), total_tokens


def train_step(
    model: Seq2SeqModel,
    batch: BucketedBatch,
    ctx_rows: np.ndarray,
    state: AdamState,
    opt_cfg: OptimizerConfig,
) -> float:
    """One teacher-forced step: loss, backward, clipped Adam update."""
    g = Graph()
    loss, _ = batch_loss(model, g, batch, ctx_rows)
    params = model.param_list
    grads = clip_global_norm(g.backward(loss, params), opt_cfg.clip_norm)
    adam_step(params, grads, state)
    return loss.item()


def _ctx_for(batch: BucketedBatch, ctx_table: np.ndarray | None, model: Seq2SeqModel) -> np.ndarray:
    if ctx_table is None:
        return model.zero_context(batch.utterances.shape[0])
    return ctx_table[batch.pair_indices]


def train_seq2seq(
    model: Seq2SeqModel,
    pairs: list[DialoguePair],
    ctx_table: np.ndarray | None,
    corpus_cfg: CorpusConfig,
    opt_cfg: OptimizerConfig,
    epochs: int,
    seed: int,
) -> list[Seq2SeqEpochRow]:
    """Epoch loop with a deterministic validation split; returns loss rows.

    ``ctx_table`` maps pair_index -> context vector; None means zero context
    (the baseline modes).
    """
    if not pairs:
        raise ValueError("train_seq2seq: empty pair list")
    ss = np.random.SeedSequence([seed, 0x53])
    split_rng = np.random.Generator(np.random.PCG64(ss.spawn(1)[0]))
    order = split_rng.permutation(len(pairs))
    n_val = int(len(pairs) * corpus_cfg.val_fraction)
    val_pairs = [pairs[i] for i in order[:n_val]]
    train_pairs = [pairs[i] for i in order[n_val:]]
    if not train_pairs:
        raise ValueError("validation fraction leaves no training pairs")

    params = model.param_list
    state = AdamState(params, opt_cfg.lr, opt_cfg.beta1, opt_cfg.beta2, opt_cfg.eps)
    history: list[Seq2SeqEpochRow] = []
    for epoch in range(1, epochs + 1):
        stream = bucket_batches(
            train_pairs, corpus_cfg.bucket_bounds, corpus_cfg.batch_size, seed=seed + epoch
        )
        ce_sum, tok_sum = 0.0, 0
        for batch in stream.batches:
            ctx = _ctx_for(batch, ctx_table, model)
            g = Graph()
            loss, ntok = batch_loss(model, g, batch, ctx)
            grads = clip_global_norm(g.backward(loss, params), opt_cfg.clip_norm)
            adam_step(params, grads, state)
            ce_sum += loss.item() * ntok
            tok_sum += ntok
        history.append(Seq2SeqEpochRow(epoch, "train", ce_sum / tok_sum))
        if val_pairs:
            vstream = bucket_batches(
                val_pairs, corpus_cfg.bucket_bounds, corpus_cfg.batch_size, seed=0
            )
            vce, vtok = 0.0, 0
            for batch in vstream.batches:
                ctx = _ctx_for(batch, ctx_table, model)
                loss, ntok = batch_loss(model, Graph(record=False), batch, ctx)
                vce += loss.item() * ntok
                vtok += ntok
            if vtok:
                history.append(Seq2SeqEpochRow(epoch, "val", vce / vtok))
        logger.info("seq2seq epoch %d: %s", epoch, history[-1])
    return history


def write_loss_csv(path, rows: list[Seq2SeqEpochRow]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,split,loss\n")
        for r in rows:
            fh.write(f"{r.epoch},{r.split},{r.loss!r}\n")
