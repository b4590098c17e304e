"""Command-line entry point: ``han <subcommand> ...``.

Every subcommand exits 0 on success.  On failure it prints one line to
stderr and exits 1 (runtime error) or 2 (bad arguments).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .corpus import Utterance, format_conll, gen_synthetic, load_conll, parse_conll, write_conll
from .model import HANModel
from .train import (
    attention_dump, evaluate_model, format_log, load_config, lr_sweep, train, write_sweep_csv,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _dump_json(doc, path=None):
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def read_utterances(path, fmt="auto"):
    """Utterances to label: CoNLL blocks, or one whitespace-tokenised utterance per line.

    In ``auto`` mode a file containing any TAB is read as CoNLL.
    """
    text = Path(path).read_text(encoding="utf-8")
    if fmt == "auto":
        fmt = "conll" if "\t" in text else "text"
    if fmt == "conll":
        return [u.tokens for u in parse_conll(text, path=str(path))]
    return [line.split() for line in text.splitlines() if line.strip()]


def cmd_train(args):
    config = load_config(args.config)
    if args.model_out:
        config = config.replace(model_out=args.model_out)
    if args.log_out:
        config = config.replace(log_out=args.log_out)
    result = train(config)
    if not config.log_out:
        sys.stdout.write(format_log(result.log))
    summary = {"best_epoch": result.best_epoch, "dev": result.best_report.to_dict(),
               "model": config.model_out or None}
    print(json.dumps(summary, sort_keys=True), file=sys.stderr)


def cmd_eval(args):
    model = HANModel.load(args.model)
    data = load_conll(args.data)
    _dump_json(evaluate_model(model, data).to_dict(), args.out)


def cmd_predict(args):
    model = HANModel.load(args.model)
    preds = [model.predict_utterance(tokens) for tokens in read_utterances(args.input, args.format)]
    if args.output == "-":
        sys.stdout.write(format_conll(preds))
    else:
        write_conll(preds, args.output)


def cmd_sweep(args):
    config = load_config(args.config)
    try:
        lrs = [float(x) for x in args.lrs.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--lrs: expected comma-separated numbers, got {args.lrs!r}") from None
    acts = tuple(a.strip() for a in args.activations.split(",") if a.strip())
    rows = lr_sweep(config, lrs, acts)
    write_sweep_csv(rows, args.out)
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} runs, {failed} failed -> {args.out}", file=sys.stderr)


def cmd_dump(args):
    model = HANModel.load(args.model)
    tokens = args.text.split()
    if not tokens:
        raise UsageError("--text: utterance is empty")
    _dump_json(attention_dump(model, tokens), args.out)


def cmd_gen(args):
    ds = gen_synthetic(args.seed, args.n, args.intents, args.slot_types, args.max_len)
    if args.out == "-":
        sys.stdout.write(format_conll(ds.utterances))
    else:
        write_conll(ds.utterances, args.out)


def build_parser():
    parser = _Parser(prog="han", description="Joint intent detection and slot filling.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--model-out", help="checkpoint path (overrides model_out)")
    p.add_argument("--log-out", help="JSONL metric log path (overrides log_out)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a CoNLL file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="label utterances and write CoNLL output")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="output path, or - for stdout")
    p.add_argument("--format", choices=("auto", "conll", "text"), default="auto")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sweep-lr", help="train once per learning rate and activation")
    p.add_argument("--config", required=True)
    p.add_argument("--lrs", required=True, help="comma-separated, e.g. 1e-4,1e-3,1e-2")
    p.add_argument("--activations", default="relu,elu")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("dump-attention", help="export attention maps as JSON")
    p.add_argument("--model", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--out", help="write the JSON here instead of stdout")
    p.set_defaults(func=cmd_dump)

    p = sub.add_parser("gen-synthetic", help="write a synthetic CoNLL corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--intents", type=int, default=4)
    p.add_argument("--slot-types", type=int, default=3)
    p.add_argument("--max-len", type=int, default=10)
    p.add_argument("--out", required=True, help="output path, or - for stdout")
    p.set_defaults(func=cmd_gen)
    return parser


def _one_line(exc):
    text = str(exc) or type(exc).__name__
    return " ".join(text.split())


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {_one_line(exc)}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"error: {_one_line(exc)}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, ArithmeticError) as exc:
        print(f"error: han {args.command}: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
