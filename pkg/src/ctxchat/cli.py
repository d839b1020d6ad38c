"""Command-line surface: train-da, train-seq2seq, chat, eval, serve.

Global flags `--config <json>` and `--seed <n>` apply to every subcommand;
explicit flags override config-file values. All runs are deterministic given
the seed, and the resolved seed is echoed into every output.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .bot import ChatBot
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, DecodeConfig, load_config
from .corpus import CorpusError, default_tag_mapping, load_tag_mapping, parse_cornell, parse_swda
from .da_encoder import DAEncoder
from .metrics import (
    REPORT_HEADER,
    MetricsError,
    parse_user_turns,
    replay_transcripts,
    report,
)
from .pipeline import run_train_da, run_train_seq2seq
from .seq2seq import Seq2SeqModel

logger = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctxchat", description=__doc__)
    parser.add_argument("--config", help="JSON config file (unknown keys rejected)")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-da", help="train the dialogue-act CNN on SwDA-style CSVs")
    p.add_argument("--swda", required=True, help="directory of per-conversation CSVs")
    p.add_argument("--map", dest="tag_map", help="raw_tag<TAB>Class mapping file (default: packaged)")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--epochs", type=int)
    p.add_argument("--loss-csv", help="per-epoch loss/accuracy (default: <out>.loss.csv)")
    p.add_argument("--confusion-csv", help="validation confusion matrix CSV")

    p = sub.add_parser("train-seq2seq", help="train a dialogue generator on a Cornell-style corpus")
    p.add_argument("--lines", required=True, help="movie-lines style file")
    p.add_argument("--conversations", required=True, help="movie-conversations style file")
    p.add_argument("--mode", choices=["baseline1", "baseline2", "css"])
    p.add_argument("--da-ckpt", help="dialogue-act checkpoint (required for css)")
    p.add_argument("--window", type=int, help="baseline-2 concat window size")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--loss-csv", help="per-epoch losses (default: <out>.loss.csv)")

    p = sub.add_parser("chat", help="interactive REPL against a trained model")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--da-ckpt")
    p.add_argument("--decode", choices=["greedy", "beam"])
    p.add_argument("--beam-width", type=int)
    p.add_argument("--chosen-beam", type=int)
    p.add_argument("--length-penalty", type=float)
    p.add_argument("--debug", action="store_true", help="print acts, context norm and beams")

    p = sub.add_parser("eval", help="replay user transcripts and report the metrics table")
    p.add_argument("--transcripts", required=True, help="blank-line separated conversations")
    p.add_argument("--ckpt", action="append", required=True, help="repeatable: one row per model")
    p.add_argument("--da-ckpt")
    p.add_argument("--decode", choices=["greedy", "beam"])
    p.add_argument("--beam-width", type=int)
    p.add_argument("--chosen-beam", type=int)
    p.add_argument("--length-penalty", type=float)
    p.add_argument(
        "--specificity-scores",
        action="append",
        help="repeatable, aligned with --ckpt: one external score per response",
    )
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--transcripts-out", help="directory for filled transcripts (JSON per model)")

    p = sub.add_parser("serve", help="HTTP JSON chat service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--da-ckpt", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--decode", choices=["greedy", "beam"])
    p.add_argument("--beam-width", type=int)
    p.add_argument("--chosen-beam", type=int)
    p.add_argument("--length-penalty", type=float)
    return parser


def _decode_overrides(args) -> dict:
    mapping = {
        "decode": "decode.mode",
        "beam_width": "decode.beam_width",
        "chosen_beam": "decode.chosen_beam",
        "length_penalty": "decode.length_penalty",
    }
    out = {}
    for attr, key in mapping.items():
        val = getattr(args, attr, None)
        if val is not None:
            out[key] = val
    return out


def _load_bot(args, cfg) -> ChatBot:
    model = Seq2SeqModel.load(args.ckpt)
    da = DAEncoder.load(args.da_ckpt) if args.da_ckpt else None
    stored = load_checkpoint(args.ckpt).config
    window = stored.get("corpus", {}).get("window", cfg.corpus.window)
    return ChatBot(
        model,
        da,
        cfg.decode,
        cfg.context,
        window=window,
        max_in_len=cfg.corpus.max_in_len,
        max_out_len=cfg.corpus.max_out_len,
        model_name=Path(args.ckpt).stem,
    )


def cmd_train_da(args, cfg) -> int:
    mapping = load_tag_mapping(args.tag_map) if args.tag_map else default_tag_mapping()
    if args.epochs is not None:
        cfg.da.epochs = args.epochs
    parse = parse_swda(args.swda)
    loss_csv = args.loss_csv or f"{args.out}.loss.csv"
    run_train_da(cfg, parse, mapping, args.out, loss_csv=loss_csv, confusion_csv=args.confusion_csv)
    print(f"wrote {args.out} and {loss_csv} (seed {cfg.seed})")
    return 0


def cmd_train_seq2seq(args, cfg) -> int:
    if args.mode is not None:
        cfg.seq2seq.mode = args.mode
    if args.window is not None:
        cfg.corpus.window = args.window
    if args.epochs is not None:
        cfg.seq2seq.epochs = args.epochs
    if cfg.seq2seq.mode == "css" and not args.da_ckpt:
        raise ConfigError("--mode css requires --da-ckpt")
    da = DAEncoder.load(args.da_ckpt) if args.da_ckpt else None
    parse = parse_cornell(args.lines, args.conversations)
    loss_csv = args.loss_csv or f"{args.out}.loss.csv"
    run_train_seq2seq(cfg, parse, args.out, da=da, loss_csv=loss_csv)
    print(f"wrote {args.out} and {loss_csv} (seed {cfg.seed})")
    return 0


def cmd_chat(args, cfg) -> int:
    bot = _load_bot(args, cfg)
    state = bot.new_state()
    print(f"ctxchat [{bot.model.config.mode}] - /reset clears the session, /quit exits")
    while True:
        try:
            line = input("you> ")
        except EOFError:
            return 0
        text = line.strip()
        if not text:
            continue
        if text == "/quit":
            return 0
        if text == "/reset":
            state = bot.new_state()
            print("(session reset)")
            continue
        ex = bot.exchange(state, text)
        if args.debug:
            act = ex.user_turn["act"] or "n/a"
            print(f"  [act={act} context_norm={ex.context_norm:.4f}]")
            for i, b in enumerate(ex.beams, 1):
                marker = "*" if b["chosen"] else " "
                print(f"  {marker}beam {i}: {b['logprob']:.4f} {b['text']}")
        print(f"bot> {ex.response}")


def cmd_eval(args, cfg) -> int:
    conversations = parse_user_turns(args.transcripts)
    if not conversations:
        raise MetricsError(f"no conversations in {args.transcripts}")
    scores = args.specificity_scores or []
    if scores and len(scores) != len(args.ckpt):
        raise MetricsError(
            f"{len(scores)} --specificity-scores for {len(args.ckpt)} checkpoints"
        )
    rows = []
    for i, ckpt in enumerate(args.ckpt):
        bot_args = argparse.Namespace(ckpt=ckpt, da_ckpt=args.da_ckpt)
        bot = _load_bot(bot_args, cfg)
        rs, transcripts = replay_transcripts(conversations, bot)
        rows.append(report(rs, scores[i] if scores else None))
        if args.transcripts_out:
            outdir = Path(args.transcripts_out)
            outdir.mkdir(parents=True, exist_ok=True)
            (outdir / f"{bot.model_name}.json").write_text(
                json.dumps(transcripts, indent=2), encoding="utf-8"
            )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(REPORT_HEADER + "\n")
        for r in rows:
            fh.write(r.csv_row() + "\n")
    print(f"wrote {args.out} ({len(rows)} model rows, seed {cfg.seed})")
    return 0


def cmd_serve(args, cfg) -> int:
    import uvicorn

    from .service import build_app

    app = build_app(_load_bot(args, cfg))
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


_COMMANDS = {
    "train-da": cmd_train_da,
    "train-seq2seq": cmd_train_seq2seq,
    "chat": cmd_chat,
    "eval": cmd_eval,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        overrides = _decode_overrides(args)
        if args.seed is not None:
            overrides["seed"] = args.seed
        cfg = load_config(args.config, overrides)
        return _COMMANDS[args.command](args, cfg)
    except (ConfigError, CorpusError, CheckpointError, MetricsError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
