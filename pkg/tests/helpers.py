"""Shared oracle machinery for the test suite.

The finite-difference suite below is the independent gradient oracle: each
case builds float64 parameters and a deterministic scalar closure, and
`gradcheck.gradient_check` compares tape gradients against central
differences. The acceptance tests reuse these cases verbatim.
"""

from __future__ import annotations

import numpy as np

from ctxchat.autodiff import Graph, Tensor
from ctxchat.config import DAEncoderConfig, Seq2SeqConfig
from ctxchat.corpus import PAD, Vocabulary
from ctxchat.da_encoder import DAEncoder
from ctxchat.gradcheck import GradCheckReport, gradient_check
from ctxchat.layers import lstm_step
from ctxchat.seq2seq import Seq2SeqModel, batch_loss
from ctxchat.corpus import BucketedBatch


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _param(rng, shape, name, scale=1.0) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True, name=name)


def _away_from_zero(rng, shape, gap=0.05) -> np.ndarray:
    """Random values with |x| >= gap (keeps relu kinks away from the FD step)."""
    mag = rng.uniform(gap, 1.0, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return mag * sign


def _distinct_columns(rng, shape) -> np.ndarray:
    """Random matrix whose per-column top-2 gap exceeds the FD step comfortably."""
    while True:
        x = rng.normal(0.0, 1.0, size=shape)
        top2 = np.sort(x, axis=-2)
        gap = top2[..., -1, :] - top2[..., -2, :]
        if (gap > 1e-3).all():
            return x


def op_fd_cases(seed: int) -> list[tuple[str, list[Tensor], object]]:
    """One (name, params, closure) triple per differentiable op, seeded."""
    rng = _rng(seed)
    cases = []

    a = _param(rng, (3, 4), "a")
    b = _param(rng, (4, 2), "b")
    cases.append(("matmul", [a, b], lambda g, a=a, b=b: g.sum(g.tanh(g.matmul(a, b)))))

    x = _param(rng, (3, 5), "x")
    bias = _param(rng, (5,), "bias")
    cases.append(("add_bias", [x, bias], lambda g, x=x, b=bias: g.sum(g.tanh(g.add(x, b)))))

    m1 = _param(rng, (4, 3), "m1")
    m2 = _param(rng, (4, 3), "m2")
    cases.append(("mul", [m1, m2], lambda g, a=m1, b=m2: g.sum(g.tanh(g.mul(a, b)))))

    s = _param(rng, (4, 4), "s")
    cases.append(("sigmoid", [s], lambda g, x=s: g.sum(g.sigmoid(x))))
    t = _param(rng, (4, 4), "t")
    cases.append(("tanh", [t], lambda g, x=t: g.sum(g.tanh(x))))
    r = Tensor(_away_from_zero(rng, (4, 4)), requires_grad=True, name="r")
    cases.append(("relu", [r], lambda g, x=r: g.sum(g.relu(x))))

    cx = _param(rng, (7, 3), "cx", scale=0.5)
    cw = _param(rng, (3, 3, 2), "cw", scale=0.5)
    cb = _param(rng, (2,), "cb", scale=0.5)
    cases.append(
        ("conv1d_valid", [cx, cw, cb], lambda g, x=cx, w=cw, b=cb: g.sum(g.tanh(g.conv1d_valid(x, w, b))))
    )
    bx = _param(rng, (2, 6, 3), "bx", scale=0.5)
    cases.append(
        ("conv1d_valid_batched", [bx, cw, cb], lambda g, x=bx, w=cw, b=cb: g.sum(g.tanh(g.conv1d_valid(x, w, b))))
    )

    mx = Tensor(_distinct_columns(rng, (5, 3)), requires_grad=True, name="mx")
    cases.append(("max_over_time", [mx], lambda g, x=mx: g.sum(g.tanh(g.max_over_time(x)))))
    mb = Tensor(_distinct_columns(rng, (2, 4, 3)), requires_grad=True, name="mb")
    cases.append(("max_over_time_batched", [mb], lambda g, x=mb: g.sum(g.tanh(g.max_over_time(x)))))

    z = _param(rng, (6,), "z")
    tgt = int(rng.integers(0, 6))
    cases.append(("softmax_cross_entropy", [z], lambda g, x=z, t=tgt: g.softmax_cross_entropy(x, t)))

    zr = _param(rng, (4, 5), "zr")
    tr = rng.integers(0, 5, size=4)
    mr = np.array([1.0, 0.0, 1.0, 1.0])
    cases.append(
        ("cross_entropy_rowsum", [zr], lambda g, x=zr, t=tr, m=mr: g.cross_entropy_rowsum(x, t, m))
    )

    tab = _param(rng, (6, 3), "tab")
    idx = rng.integers(0, 6, size=(2, 4))
    cases.append(("gather_rows", [tab], lambda g, x=tab, i=idx: g.sum(g.tanh(g.gather_rows(x, i)))))

    c1 = _param(rng, (2, 3), "c1")
    c2 = _param(rng, (2, 2), "c2")
    cases.append(
        ("concat_cols", [c1, c2], lambda g, a=c1, b=c2: g.sum(g.tanh(g.concat([a, b], axis=1))))
    )
    cases.append(
        ("slice_cols", [c1], lambda g, x=c1: g.sum(g.tanh(g.slice_cols(x, 1, 3))))
    )

    st = [_param(rng, (2, 3), f"st{i}") for i in range(3)]
    cases.append(("stack_steps", st, lambda g, xs=st: g.sum(g.tanh(g.stack_steps(list(xs))))))

    wa = _param(rng, (3, 4), "wa")
    wb = _param(rng, (3, 4), "wb")
    cond = np.array([True, False, True])
    cases.append(
        ("where_rows", [wa, wb], lambda g, a=wa, b=wb, c=cond: g.sum(g.tanh(g.where_rows(c, a, b))))
    )

    dx = _param(rng, (4, 5), "dx")
    drop_seed = int(rng.integers(0, 2**31))
    cases.append(
        (
            "dropout",
            [dx],
            lambda g, x=dx, s=drop_seed: g.sum(
                g.tanh(g.dropout(x, 0.5, np.random.Generator(np.random.PCG64(s))))
            ),
        )
    )

    sc = _param(rng, (2, 4), "sc")
    smask = np.array([[True, True, False, True], [True, True, True, False]])
    const = Tensor(rng.normal(size=(2, 4)))
    cases.append(
        (
            "masked_softmax",
            [sc],
            lambda g, x=sc, m=smask, k=const: g.sum(g.tanh(g.mul(g.masked_softmax(x, m), k))),
        )
    )

    q = _param(rng, (2, 3), "q")
    K = _param(rng, (2, 4, 3), "K")
    cases.append(
        ("attend_scores", [q, K], lambda g, q=q, K=K: g.sum(g.tanh(g.attend_scores(q, K))))
    )
    w = _param(rng, (2, 4), "w")
    cases.append(("attend_mix", [w, K], lambda g, w=w, K=K: g.sum(g.tanh(g.attend_mix(w, K)))))

    mn = _param(rng, (3, 3), "mn")
    cases.append(("mean", [mn], lambda g, x=mn: g.mean(g.tanh(x))))

    return cases


def run_op_fd_suite(seeds, tolerance: float = 1e-4):
    """Run every op case over the given seeds; returns (failures, worst_err)."""
    failures = []
    worst = 0.0
    for seed in seeds:
        for name, params, closure in op_fd_cases(seed):
            rep = gradient_check(closure, params, tolerance)
            worst = max(worst, rep.worst)
            if not rep.ok:
                failures.append((seed, name, rep.worst))
    return failures, worst


# ---------------------------------------------------------------------------
# reduced-width network checks

def toy_vocab(n_real: int = 4) -> Vocabulary:
    return Vocabulary([f"w{i}" for i in range(n_real)])


def lstm_cell_check(seed: int = 0, hidden: int = 4, tolerance: float = 1e-4) -> GradCheckReport:
    """Single LSTM cell, hidden 4, loss = sum(tanh(h'))."""
    rng = _rng(seed)
    in_dim = 3
    cell = {
        "c.Wx": _param(rng, (in_dim, 4 * hidden), "c.Wx", 0.4),
        "c.Wh": _param(rng, (hidden, 4 * hidden), "c.Wh", 0.4),
        "c.b": _param(rng, (4 * hidden,), "c.b", 0.2),
    }
    x = _param(rng, (2, in_dim), "x", 0.5)
    h0 = _param(rng, (2, hidden), "h0", 0.5)
    c0 = _param(rng, (2, hidden), "c0", 0.5)
    params = list(cell.values()) + [x, h0, c0]

    def closure(g: Graph):
        h, c = lstm_step(g, cell, "c", x, h0, c0)
        return g.sum(g.tanh(g.concat([h, c], axis=1)))

    return gradient_check(closure, params, tolerance)


def reduced_cnn_model(seed: int = 0) -> tuple[DAEncoder, np.ndarray, np.ndarray]:
    """DA classifier at reduced width: L=6, windows [2,3], 2 filters, hidden 8."""
    cfg = DAEncoderConfig(
        embed_dim=4, max_len=6, windows=[2, 3], filters_per_window=2,
        hidden_dim=8, num_classes=10, dropout=0.0,
    )
    model = DAEncoder.init(cfg, toy_vocab(6), seed=seed, dtype=np.float64)
    rng = _rng(seed + 1)
    ids = rng.integers(0, len(model.vocab), size=(3, 6))
    labels = rng.integers(0, 10, size=3)
    return model, ids, labels


def cnn_check(seed: int = 0, tolerance: float = 1e-4) -> GradCheckReport:
    model, ids, labels = reduced_cnn_model(seed)

    def closure(g: Graph):
        _, logits = model.forward(g, ids)
        return g.scale(g.cross_entropy_rowsum(logits, labels), 1.0 / len(labels))

    return gradient_check(closure, model.param_list, tolerance)


def toy_css_setup(seed: int = 0, vocab_real: int = 4):
    """Toy CSS model (enc/dec hidden 4, vocab 8, len 3) plus a padded batch."""
    vocab = toy_vocab(vocab_real)  # 4 reserved + vocab_real = 8 ids
    cfg = Seq2SeqConfig(
        mode="css", embed_dim=3, encoder_hidden_per_dir=4, decoder_hidden=4, context_dim=8
    )
    model = Seq2SeqModel.init(cfg, vocab, seed=seed, dtype=np.float64)
    rng = _rng(seed + 7)
    # two rows, true lengths 3 and 2: exercises the padding masks
    utt = np.array([[4, 5, 6], [7, 4, PAD]], dtype=np.int64)
    ulen = np.array([3, 2])
    resp = np.array([[2, 5, 7, 3, PAD], [2, 6, 3, PAD, PAD]], dtype=np.int64)  # SOS .. EOS
    rlen = np.array([2, 1])
    batch = BucketedBatch(4, utt, resp, ulen, rlen, np.arange(2))
    ctx = rng.normal(0.0, 0.5, size=(2, 8))
    return model, batch, ctx


def css_step_check(seed: int = 0, tolerance: float = 1e-4) -> GradCheckReport:
    """Full CSS teacher-forced training-step loss vs central differences."""
    model, batch, ctx = toy_css_setup(seed)

    def closure(g: Graph):
        loss, _ = batch_loss(model, g, batch, ctx)
        return loss

    return gradient_check(closure, model.param_list, tolerance)
