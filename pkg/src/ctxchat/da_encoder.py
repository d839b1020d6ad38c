"""Context encoder: a text CNN pre-trained to classify dialogue acts.

The pre-softmax hidden layer (512-d by default) is the conversation-context
representation handed to the seq2seq model. Architecture chain for the
default config: 25x128 embeddings -> valid convolutions of window
3/4/5/6/8 with 128 filters each -> max-over-time -> 640-d concat ->
affine+relu -> 512-d hidden -> affine -> 10-class softmax.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Graph, ShapeError, Tensor, softmax
from .checkpoint import (
    CheckpointError,
    LoadedCheckpoint,
    load_checkpoint,
    save_checkpoint,
)
from .config import DAEncoderConfig, OptimizerConfig
from .corpus import NUM_ACTS, PAD, DialogueAct, TokenSequence, Vocabulary
from .layers import affine, glorot, zeros
from .optim import AdamState, adam_step, clip_global_norm

logger = logging.getLogger(__name__)

MODEL_KIND = "da-encoder"


def pad_to(ids: list[int], length: int) -> np.ndarray:
    """Tail-truncate or PAD-extend to exactly `length` ids."""
    out = np.full(length, PAD, dtype=np.int32)
    kept = ids[:length]
    out[: len(kept)] = kept
    return out


class DAEncoder:
    """Dialogue-act classifier whose hidden layer doubles as the context vector."""

    def __init__(self, config: DAEncoderConfig, vocab: Vocabulary, params: dict[str, Tensor]):
        self.config = config
        self.vocab = vocab
        self.params = params

    @classmethod
    def init(cls, config: DAEncoderConfig, vocab: Vocabulary, seed: int = 0, dtype=np.float32):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xDA])))
        c = config
        p: dict[str, Tensor] = {
            "embed": glorot(rng, (len(vocab), c.embed_dim), dtype, "embed")
        }
        for w in c.windows:
            p[f"conv{w}.W"] = glorot(
                rng, (w, c.embed_dim, c.filters_per_window), dtype, f"conv{w}.W"
            )
            p[f"conv{w}.b"] = zeros((c.filters_per_window,), dtype, f"conv{w}.b")
        p["hidden.W"] = glorot(rng, (c.pooled_dim, c.hidden_dim), dtype, "hidden.W")
        p["hidden.b"] = zeros((c.hidden_dim,), dtype, "hidden.b")
        p["out.W"] = glorot(rng, (c.hidden_dim, c.num_classes), dtype, "out.W")
        p["out.b"] = zeros((c.num_classes,), dtype, "out.b")
        return cls(config, vocab, p)

    @property
    def param_list(self) -> list[Tensor]:
        return list(self.params.values())

    def forward(
        self,
        g: Graph,
        ids: np.ndarray,
        train: bool = False,
        dropout_rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, Tensor]:
        """Batched forward: ids [B, max_len] -> (hidden [B, H], logits [B, C])."""
        c = self.config
        if ids.ndim != 2 or ids.shape[1] != c.max_len:
            raise ShapeError(f"expected ids of shape [B, {c.max_len}], got {ids.shape}")
        emb = g.gather_rows(self.params["embed"], ids)  # [B, L, E]
        pooled = g.concat(
            [
                g.max_over_time(
                    g.conv1d_valid(emb, self.params[f"conv{w}.W"], self.params[f"conv{w}.b"])
                )
                for w in c.windows
            ],
            axis=1,
        )  # [B, pooled_dim]
        if train and c.dropout > 0.0:
            if dropout_rng is None:
                raise ValueError("training forward needs a dropout rng")
            pooled = g.dropout(pooled, c.dropout, dropout_rng)
        hidden = g.relu(affine(g, pooled, self.params["hidden.W"], self.params["hidden.b"]))
        logits = affine(g, hidden, self.params["out.W"], self.params["out.b"])
        return hidden, logits

    def da_forward(self, utterance: TokenSequence) -> tuple[np.ndarray, np.ndarray]:
        """Single-utterance inference: (512-d context vector, 10-class probs)."""
        ids = pad_to(utterance.ids[: utterance.length], self.config.max_len)[None, :]
        hidden, logits = self.forward(Graph(record=False), ids)
        return hidden.data[0], softmax(logits.data)[0]

    def context_vector(self, utterance: TokenSequence) -> np.ndarray:
        return self.da_forward(utterance)[0]

    def predict(self, utterance: TokenSequence) -> tuple[DialogueAct, np.ndarray]:
        _, probs = self.da_forward(utterance)
        return DialogueAct(int(np.argmax(probs))), probs

    # ------------------------------------------------------------------
    # persistence

    def save(self, path, extra_config: dict | None = None) -> None:
        cfg = {"da": vars(self.config).copy()}
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
    def load(cls, path) -> "DAEncoder":
        ck = load_checkpoint(path, expect_kind=MODEL_KIND)
        return cls.from_checkpoint(ck)

    @classmethod
    def from_checkpoint(cls, ck: LoadedCheckpoint) -> "DAEncoder":
        cfg = DAEncoderConfig(**{
            k: v for k, v in ck.config["da"].items()
        })
        if ck.vocab_tokens is None:
            raise CheckpointError("da-encoder checkpoint is missing its vocabulary")
        vocab = Vocabulary(ck.vocab_tokens)
        params = {
            name: Tensor(arr, requires_grad=True, name=name) for name, arr in ck.tensors.items()
        }
        return cls(cfg, vocab, params)


# ---------------------------------------------------------------------------
# training / evaluation

@dataclass
class LabeledUtterance:
    tokens: TokenSequence
    label: int  # DialogueAct value


@dataclass
class EpochRow:
    epoch: int
    split: str
    loss: float
    accuracy: float


def _batch_matrix(dataset: list[LabeledUtterance], idx: np.ndarray, max_len: int):
    ids = np.stack([pad_to(dataset[i].tokens.ids[: dataset[i].tokens.length], max_len) for i in idx])
    labels = np.array([dataset[i].label for i in idx], dtype=np.int64)
    return ids, labels


def _eval_split(model: DAEncoder, dataset: list[LabeledUtterance], batch_size: int):
    total_loss, correct = 0.0, 0
    for start in range(0, len(dataset), batch_size):
        idx = np.arange(start, min(start + batch_size, len(dataset)))
        ids, labels = _batch_matrix(dataset, idx, model.config.max_len)
        _, logits = model.forward(Graph(record=False), ids)
        p = logits.data - logits.data.max(axis=1, keepdims=True)
        lse = np.log(np.exp(p).sum(axis=1))
        total_loss += float((lse - p[np.arange(len(labels)), labels]).sum())
        correct += int((logits.data.argmax(axis=1) == labels).sum())
    n = len(dataset)
    return total_loss / n, correct / n


def train_da(
    model: DAEncoder,
    train_set: list[LabeledUtterance],
    val_set: list[LabeledUtterance] | None,
    epochs: int,
    seed: int,
    optimizer: OptimizerConfig | None = None,
    batch_size: int = 32,
) -> list[EpochRow]:
    """Minimize cross-entropy with Adam; returns per-epoch loss/accuracy rows."""
    if not train_set:
        raise ValueError("train_da: empty dataset")
    for u in train_set:
        if not 0 <= u.label < model.config.num_classes:
            raise ValueError(f"label {u.label} out of range")
    opt_cfg = optimizer or OptimizerConfig()
    params = model.param_list
    state = AdamState(params, opt_cfg.lr, opt_cfg.beta1, opt_cfg.beta2, opt_cfg.eps)
    ss = np.random.SeedSequence([seed, 0xDA7A])
    shuffle_rng = np.random.Generator(np.random.PCG64(ss.spawn(2)[0]))
    dropout_rng = np.random.Generator(np.random.PCG64(ss.spawn(2)[1]))

    history: list[EpochRow] = []
    for epoch in range(1, epochs + 1):
        order = shuffle_rng.permutation(len(train_set))
        epoch_loss, correct = 0.0, 0
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            ids, labels = _batch_matrix(train_set, idx, model.config.max_len)
            g = Graph()
            _, logits = model.forward(g, ids, train=True, dropout_rng=dropout_rng)
            loss = g.scale(g.cross_entropy_rowsum(logits, labels), 1.0 / len(idx))
            grads = clip_global_norm(g.backward(loss, params), opt_cfg.clip_norm)
            adam_step(params, grads, state)
            epoch_loss += loss.item() * len(idx)
            correct += int((logits.data.argmax(axis=1) == labels).sum())
        history.append(EpochRow(epoch, "train", epoch_loss / len(train_set), correct / len(train_set)))
        if val_set:
            vloss, vacc = _eval_split(model, val_set, batch_size)
            history.append(EpochRow(epoch, "val", vloss, vacc))
        logger.info("da epoch %d: %s", epoch, history[-1])
    return history


@dataclass
class ConfusionMatrix:
    """Row = true class, column = predicted class."""

    counts: np.ndarray  # [C, C] nonnegative ints

    @property
    def accuracy(self) -> float:
        total = int(self.counts.sum())
        if total == 0:
            raise ValueError("empty confusion matrix")
        return float(np.trace(self.counts)) / total

    def write_csv(self, path) -> None:
        with open(Path(path), "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([DialogueAct(i).label for i in range(self.counts.shape[0])])
            for row in self.counts:
                writer.writerow([int(x) for x in row])


def evaluate_da(model: DAEncoder, dataset: list[LabeledUtterance], batch_size: int = 64):
    """(accuracy, ConfusionMatrix) on a labeled dataset."""
    c = model.config.num_classes
    counts = np.zeros((c, c), dtype=np.int64)
    for start in range(0, len(dataset), batch_size):
        idx = np.arange(start, min(start + batch_size, len(dataset)))
        ids, labels = _batch_matrix(dataset, idx, model.config.max_len)
        _, logits = model.forward(Graph(record=False), ids)
        preds = logits.data.argmax(axis=1)
        for t, p in zip(labels, preds):
            if not 0 <= t < c:
                raise CheckpointError(f"label {t} outside the model's {c} classes")
            counts[t, p] += 1
    cm = ConfusionMatrix(counts)
    return cm.accuracy, cm


def average_context(vectors: list[np.ndarray], dim: int) -> np.ndarray:
    """Elementwise mean of context vectors; empty list -> zero vector."""
    if not vectors:
        return np.zeros(dim, dtype=np.float32)
    for v in vectors:
        if v.shape != (dim,):
            raise ShapeError(f"context vector shape {v.shape}, expected ({dim},)")
    return np.mean(np.stack(vectors), axis=0)


def write_loss_csv(path, rows: list[EpochRow]) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        fh.write("epoch,split,loss,accuracy\n")
        for r in rows:
            fh.write(f"{r.epoch},{r.split},{r.loss!r},{r.accuracy!r}\n")
