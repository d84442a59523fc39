"""Single command-line entry point wiring every module.

Subcommands: train-tokenizer, encode, decode, compress-bench, dedup,
pretrain, sft, eval, gradcheck, make-fixtures.

Contract: exit 0 on success, 1 on usage errors (bad flags, unknown
subcommand, no arguments), 2 on runtime errors (bad configs, missing or
malformed inputs, failed checks).  All randomness flows from explicit
seeds, so reruns with identical arguments and inputs produce byte-identical
primary outputs.  Progress and errors are logged as JSON lines on stderr;
primary results go to stdout and to the files named by the arguments.

Config files are strict JSON: unknown keys are errors, defaults are filled
in, and the fully resolved config is echoed next to the run's outputs for
provenance.  Anywhere a config path is accepted, ``preset:NAME`` loads the
packaged preset of that name instead of a file.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import glob
import json
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .corpus.batching import MixtureSampler, TokenBatch, sft_batch
from .corpus.ingest import read_documents
from .corpus.mixture import MixtureSchedule
from .corpus.simhash import dedup
from .evalharness import run_eval
from .model import Model, ModelConfig
from .rng import Rng
from .tensor import finite_diff_check
from .tokenizer.vocab import (REFERENCE_FULL_SCALE_RATE_PER_CHAR,
                              TokenizerConfig, TokenizerModel,
                              compression_rate)
from .tokenizer.train import train_unigram
from .trainer import (LRSchedule, TrainConfig, Trainer, load_model,
                      pack_rows, validate)
from . import fixtures


class CliError(ValueError):
    """Runtime failure that should exit with code 2."""


def _log(event: str, **fields) -> None:
    record = {"event": event}
    record.update(fields)
    print(json.dumps(record, ensure_ascii=False, sort_keys=True),
          file=sys.stderr)


# ------------------------------------------------------------- configs ----

def _resolve_config_source(path: str) -> str:
    """Returns the JSON text behind a --config value (file or preset:NAME)."""
    if path.startswith("preset:"):
        name = path[len("preset:"):]
        ref = resources.files("desklm.presets").joinpath(f"{name}.json")
        if not ref.is_file():
            raise CliError(f"no packaged preset named {name!r}")
        return ref.read_text(encoding="utf-8")
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc


def _strict_dataclass_from_json(cls, obj: dict):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(obj) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**obj)


def load_config(path: str, cls):
    """Strict JSON → dataclass: unknown keys and type errors name the file
    and the offending key."""
    text = _resolve_config_source(path)
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(
            f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise CliError(f"{path}: expected a JSON object")
    obj.pop("_comment", None)
    loader = getattr(cls, "from_json", None)
    try:
        if loader is not None:
            return loader(obj)
        return _strict_dataclass_from_json(cls, obj)
    except (TypeError, ValueError) as exc:
        raise CliError(f"{path}: {exc}") from exc


def _config_payload(cfg) -> dict:
    to_json = getattr(cfg, "to_json", None)
    return to_json() if to_json is not None else dataclasses.asdict(cfg)


def _write_json(path, payload) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, ensure_ascii=False, sort_keys=True,
                               indent=2) + "\n", encoding="utf-8")


def _echo_configs(out_dir, named_configs: dict) -> None:
    for name, cfg in named_configs.items():
        _write_json(Path(out_dir) / "config" / f"{name}.json",
                    _config_payload(cfg))


# --------------------------------------------------------------- inputs ----

def _expand_globs(patterns) -> list:
    paths = []
    for pattern in patterns:
        hits = sorted(glob.glob(pattern))
        if hits:
            paths.extend(hits)
        elif os.path.exists(pattern):
            paths.append(pattern)
        else:
            raise CliError(f"no input files match {pattern!r}")
    return paths


def _read_corpus(patterns):
    docs, report = read_documents(_expand_globs(patterns))
    if report.malformed:
        _log("ingest-skipped", malformed=report.malformed,
             examples=[f"{p}:{n} {r}" for p, n, r in report.skipped[:5]])
    if not docs:
        raise CliError("corpus is empty after ingest")
    return docs


def _read_sft_pairs(path) -> list:
    pairs, problems = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                prompt, response = obj["prompt"], obj["response"]
                if not isinstance(prompt, str) or not isinstance(response, str):
                    raise TypeError
                pairs.append((prompt, response))
            except (json.JSONDecodeError, KeyError, TypeError):
                problems.append(str(lineno))
    if problems:
        raise CliError(f"{path}: malformed prompt/response rows at lines "
                       + ", ".join(problems))
    if not pairs:
        raise CliError(f"{path}: no prompt/response rows")
    return pairs


# --------------------------------------------------------- training core ----

def _metrics_writer(out_dir, resume: bool):
    path = Path(out_dir) / "metrics.csv"
    exists = path.exists()
    fh = open(path, "a" if resume and exists else "w",
              encoding="utf-8", newline="")
    writer = csv.writer(fh)
    if fh.tell() == 0:
        writer.writerow(["step", "lr", "train_loss", "val_loss",
                         "grad_norm", "tokens_seen"])
    return fh, writer


def _run_training(trainer: Trainer, steps: int, out_dir: Path,
                  next_batches, val_batches, val_every: int,
                  save_every: int, resume: bool) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    fh, writer = _metrics_writer(out_dir, resume)
    last = {}
    try:
        while trainer.step < steps:
            row = trainer.train_step(next_batches())
            val_loss = ""
            if val_batches and ((val_every > 0
                                 and trainer.step % val_every == 0)
                                or trainer.step == steps):
                val_loss = validate(trainer.model, val_batches)
            writer.writerow([row["step"], row["lr"], row["train_loss"],
                             val_loss, row["grad_norm"],
                             row["tokens_seen"]])
            fh.flush()
            _log("train-step", **row,
                 **({"val_loss": val_loss} if val_loss != "" else {}))
            if save_every and trainer.step % save_every == 0 \
                    and trainer.step < steps:
                trainer.save(out_dir / f"checkpoint-{trainer.step:08d}.ckpt")
            last = row
    finally:
        fh.close()
    final = out_dir / "checkpoint-final.ckpt"
    trainer.save(final)
    last = dict(last)
    last["checkpoint"] = str(final)
    return last


# ----------------------------------------------------------- subcommands ----

def cmd_train_tokenizer(args) -> int:
    cfg = load_config(args.config, TokenizerConfig)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.vocab_size is not None:
        cfg = dataclasses.replace(cfg, target_vocab_size=args.vocab_size)
    texts = [doc.text for doc in _read_corpus(args.corpus)]
    _log("train-tokenizer", docs=len(texts),
         target_vocab_size=cfg.target_vocab_size, seed=cfg.seed)
    model = train_unigram(texts, cfg)
    model.save(args.out)
    _write_json(f"{args.out}.config.json", _config_payload(cfg))
    _log("train-tokenizer-done", out=args.out, vocab_size=model.vocab_size)
    print(json.dumps({"out": args.out, "vocab_size": model.vocab_size,
                      "seed": cfg.seed}, sort_keys=True))
    return 0


def _iter_input_lines(args):
    if args.text is not None:
        yield from args.text.split("\n")
    elif args.file is not None:
        with open(args.file, encoding="utf-8") as fh:
            for line in fh:
                yield line.rstrip("\n")
    else:
        for line in sys.stdin:
            yield line.rstrip("\n")


def cmd_encode(args) -> int:
    model = TokenizerModel.load(args.model)
    for line in _iter_input_lines(args):
        print(" ".join(str(i) for i in model.encode(line)))
    return 0


def cmd_decode(args) -> int:
    model = TokenizerModel.load(args.model)
    if args.ids is not None:
        sources = [args.ids]
    else:
        sources = (line for line in sys.stdin)
    for chunk in sources:
        tokens = chunk.replace(",", " ").split()
        try:
            ids = [int(t) for t in tokens]
        except ValueError as exc:
            raise CliError(f"ids must be integers: {exc}") from exc
        print(model.decode(ids))
    return 0


def cmd_compress_bench(args) -> int:
    model = TokenizerModel.load(args.model)
    texts = [doc.text for doc in _read_corpus(args.corpus)]
    payload = {
        "rate_per_char": compression_rate(model, texts),
        "rate_per_byte": compression_rate(model, texts, per_byte=True),
        "char_baseline": 1.0,
        "full_scale_reference": REFERENCE_FULL_SCALE_RATE_PER_CHAR,
        "n_docs": len(texts),
        "n_chars": sum(len(t) for t in texts),
        "vocab_size": model.vocab_size,
        "model": args.model,
    }
    out = json.dumps(payload, sort_keys=True, indent=2)
    print(out)
    if args.report:
        Path(args.report).write_text(out + "\n", encoding="utf-8")
    return 0


def cmd_dedup(args) -> int:
    docs = _read_corpus(getattr(args, "in"))
    exempt = tuple(s for s in (args.exempt or "").split(",") if s)
    kept, drops = dedup(docs, threshold=args.threshold, exempt=exempt)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "kept.jsonl", "w", encoding="utf-8") as fh:
        for doc in kept:
            fh.write(json.dumps({"id": doc.id, "source": doc.source,
                                 "text": doc.text},
                                ensure_ascii=False, sort_keys=True) + "\n")
    report_path = Path(args.report) if args.report \
        else out_dir / "report.jsonl"
    with open(report_path, "w", encoding="utf-8") as fh:
        for drop in drops:
            fh.write(json.dumps(drop.to_json(), ensure_ascii=False,
                                sort_keys=True) + "\n")
    _log("dedup-done", read=len(docs), kept=len(kept), dropped=len(drops),
         threshold=args.threshold)
    print(json.dumps({"kept": len(kept), "dropped": len(drops),
                      "out": str(out_dir / "kept.jsonl"),
                      "report": str(report_path)}, sort_keys=True))
    return 0


def cmd_pretrain(args) -> int:
    model_cfg = load_config(args.model_config, ModelConfig)
    train_cfg = load_config(args.train_config, TrainConfig)
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    schedule = load_config(args.schedule, LRSchedule) if args.schedule \
        else LRSchedule()
    mixture = load_config(args.mixture, MixtureSchedule)
    tokenizer = TokenizerModel.load(args.tokenizer)
    if model_cfg.vocab_size < tokenizer.vocab_size:
        raise CliError(
            f"model vocab_size {model_cfg.vocab_size} is smaller than the "
            f"tokenizer's {tokenizer.vocab_size}")

    sources = {}
    for doc in _read_corpus(args.corpus):
        sources.setdefault(doc.source, []).append(doc.text)
    steps = args.steps if args.steps is not None else schedule.total_steps
    if not 0 < steps <= schedule.total_steps:
        raise CliError(f"steps must be in 1..{schedule.total_steps}")

    model = Model(model_cfg, seed=train_cfg.seed, dtype=train_cfg.dtype)
    try:
        sampler = MixtureSampler(sources, mixture, tokenizer,
                                 seq_len=train_cfg.seq_len,
                                 batch_size=train_cfg.micro_batch,
                                 total_steps=schedule.total_steps,
                                 seed=train_cfg.seed)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    trainer = Trainer(model, train_cfg, schedule, sampler=sampler)
    if args.resume:
        trainer.load(args.resume)
        _log("resumed", checkpoint=args.resume, step=trainer.step)

    out_dir = Path(args.out)
    _echo_configs(out_dir, {"model": model_cfg, "train": train_cfg,
                            "schedule": schedule, "mixture": mixture})
    _write_json(out_dir / "config" / "run.json", {
        "command": "pretrain", "seed": train_cfg.seed, "steps": steps,
        "tokenizer": args.tokenizer, "corpus": list(args.corpus),
        "resume": args.resume})

    val_batches = None
    if args.val_corpus:
        val_texts = [d.text for d in _read_corpus(args.val_corpus)]
        val_batches = pack_rows(val_texts, tokenizer, train_cfg.seq_len,
                                train_cfg.micro_batch)
    summary = _run_training(trainer, steps, out_dir,
                            trainer.next_micro_batches, val_batches,
                            args.val_every, args.save_every,
                            resume=bool(args.resume))
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_sft(args) -> int:
    model, _, configs = load_model(args.checkpoint)
    tokenizer = TokenizerModel.load(args.tokenizer)
    pairs = _read_sft_pairs(args.data)
    train_cfg = load_config(args.train_config, TrainConfig) \
        if args.train_config else TrainConfig()
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    steps = args.steps
    warmup = max(1, round(args.warmup_ratio * steps))
    schedule = LRSchedule(peak=args.lr, floor=args.lr / 30.0,
                          warmup_steps=warmup, total_steps=steps)
    loss_on_full = args.loss_on_full_sequence == "on"

    trainer = Trainer(model, train_cfg, schedule)
    out_dir = Path(args.out)
    _echo_configs(out_dir, {"model": ModelConfig.from_json(configs["model"]),
                            "train": train_cfg, "schedule": schedule})
    _write_json(out_dir / "config" / "run.json", {
        "command": "sft", "seed": train_cfg.seed, "steps": steps,
        "source_checkpoint": args.checkpoint, "data": args.data,
        "loss_on_full_sequence": loss_on_full, "pairs": len(pairs)})

    cursor = 0

    def next_batches():
        nonlocal cursor
        batches = []
        for _ in range(train_cfg.accum_steps):
            chunk = [pairs[(cursor + k) % len(pairs)]
                     for k in range(train_cfg.micro_batch)]
            cursor += train_cfg.micro_batch
            batches.append(sft_batch(chunk, tokenizer, train_cfg.seq_len,
                                     loss_on_full_sequence=loss_on_full))
        return batches

    summary = _run_training(trainer, steps, out_dir, next_batches,
                            val_batches=None, val_every=0,
                            save_every=args.save_every, resume=False)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    model, _, _ = load_model(args.checkpoint)
    tokenizer = TokenizerModel.load(args.tokenizer)
    chat_template = None
    if args.chat_template:
        chat_template = Path(args.chat_template).read_text(encoding="utf-8")
    try:
        report = run_eval(model, tokenizer, args.tasks, n_shots=args.shots,
                          seed=args.seed, mode=args.mode,
                          chat_template=chat_template)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    Path(args.report).write_text(report.to_json() + "\n", encoding="utf-8")
    _log("eval-done", items=len(report.records), accuracy=report.accuracy,
         unparsed=report.unparsed, report=args.report)
    print(json.dumps({"accuracy": report.accuracy,
                      "unparsed": report.unparsed,
                      "n_items": len(report.records),
                      "seed": report.seed,
                      "report": args.report}, sort_keys=True))
    return 0


def cmd_gradcheck(args) -> int:
    config = load_config(args.config, ModelConfig)
    model = Model(config, seed=args.seed)
    rng = Rng(args.seed).derive("gradcheck-batch")
    seq = min(8, config.context_len)
    tokens = np.array([[rng.randint(config.vocab_size) for _ in range(seq)]
                       for _ in range(2)], dtype=np.int64)
    targets = np.array([[rng.randint(config.vocab_size) for _ in range(seq)]
                        for _ in range(2)], dtype=np.int64)
    batch = TokenBatch(tokens, targets, np.ones((2, seq)))

    worst = 0.0
    worst_name = None
    for name in sorted(model.params):
        original = model.params[name]

        def loss_with(tensor, _name=name, _original=original):
            model.params[_name] = tensor
            try:
                return model.loss(batch)
            finally:
                model.params[_name] = _original

        rel, _, _ = finite_diff_check(loss_with, original)
        _log("gradcheck-param", name=name, max_rel_err=rel)
        if rel > worst:
            worst, worst_name = rel, name
    print(json.dumps({"max_rel_err": worst, "worst_param": worst_name,
                      "tol": args.tol, "seed": args.seed},
                     sort_keys=True))
    if not worst < args.tol:
        raise CliError(
            f"gradient check failed: max rel err {worst:.3e} on "
            f"{worst_name} is not below {args.tol}")
    return 0


def cmd_make_fixtures(args) -> int:
    manifest = fixtures.write_fixtures(args.out, seed=args.seed,
                                       n_docs=args.docs,
                                       n_eval=args.eval_items)
    _log("fixtures-written", files=len(manifest), out=args.out,
         seed=args.seed)
    print(json.dumps(manifest, sort_keys=True, indent=2))
    return 0


# -------------------------------------------------------------- parsing ----

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="desklm",
        description="Desk-scale LM stack: tokenizer, dedup, training, eval.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("train-tokenizer",
                       help="train a unigram tokenizer on a JSONL corpus")
    p.add_argument("--config", required=True,
                   help="tokenizer config JSON (or preset:NAME)")
    p.add_argument("--corpus", required=True, nargs="+",
                   help="JSONL corpus files or globs")
    p.add_argument("--out", required=True, help="output vocab file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--vocab-size", type=int, default=None,
                   help="override the config's target vocab size")
    p.set_defaults(func=cmd_train_tokenizer)

    p = sub.add_parser("encode", help="text lines -> token id lines")
    p.add_argument("--model", required=True, help="trained vocab file")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--text", help="encode this string")
    group.add_argument("--file", help="encode each line of this file")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="token ids -> text")
    p.add_argument("--model", required=True, help="trained vocab file")
    p.add_argument("--ids", help="ids, space or comma separated "
                                 "(default: read lines from stdin)")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("compress-bench",
                       help="tokens-per-character rate on a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True, nargs="+")
    p.add_argument("--report", help="also write the JSON report here")
    p.set_defaults(func=cmd_compress_bench)

    p = sub.add_parser("dedup",
                       help="drop near-duplicate documents via 64-bit "
                            "fingerprints")
    p.add_argument("--in", required=True, nargs="+",
                   help="JSONL inputs or globs")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threshold", type=int, default=3,
                   help="Hamming distance at or under which docs match")
    p.add_argument("--report", help="drop report path "
                                    "(default OUT/report.jsonl)")
    p.add_argument("--exempt", help="comma-separated sources never indexed")
    p.set_defaults(func=cmd_dedup)

    p = sub.add_parser("pretrain", help="train a model on a mixture corpus")
    p.add_argument("--model-config", required=True)
    p.add_argument("--train-config", required=True)
    p.add_argument("--mixture", required=True,
                   help="mixture schedule JSON (or preset:NAME)")
    p.add_argument("--tokenizer", required=True, help="trained vocab file")
    p.add_argument("--corpus", required=True, nargs="+",
                   help="JSONL corpus; the file stem or per-row 'source' "
                        "field must match mixture source names")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--schedule", help="LR schedule JSON (default: "
                                      "production schedule)")
    p.add_argument("--steps", type=int, default=None,
                   help="stop after this step (default: full schedule)")
    p.add_argument("--val-corpus", nargs="+",
                   help="held-out JSONL for validation loss")
    p.add_argument("--val-every", type=int, default=50)
    p.add_argument("--save-every", type=int, default=0,
                   help="checkpoint every K steps (0: final only)")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--seed", type=int, default=None,
                   help="override the train config's seed")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("sft", help="supervised fine-tuning on "
                                   "prompt/response pairs")
    p.add_argument("--checkpoint", required=True,
                   help="pretrained checkpoint to start from")
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--data", required=True,
                   help="JSONL with prompt and response fields")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--train-config", help="optional TrainConfig JSON")
    p.add_argument("--lr", type=float, default=6e-5)
    p.add_argument("--warmup-ratio", type=float, default=0.03)
    p.add_argument("--loss-on-full-sequence", choices=("on", "off"),
                   default="on",
                   help="on: loss over all tokens; off: response only")
    p.add_argument("--save-every", type=int, default=0)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_sft)

    p = sub.add_parser("eval", help="few-shot multiple-choice evaluation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--tasks", required=True, help="task JSONL file")
    p.add_argument("--shots", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("generate", "loglik"),
                   default="generate")
    p.add_argument("--report", required=True, help="output report JSON")
    p.add_argument("--chat-template",
                   help="file whose text wraps the prompt; must contain "
                        "{prompt}")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of every parameter")
    p.add_argument("--config", required=True,
                   help="model config JSON (or preset:NAME); keep it tiny")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("make-fixtures",
                       help="write the deterministic fixture corpus and "
                            "synthetic eval tasks")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=20240601)
    p.add_argument("--docs", type=int, default=120,
                   help="documents per corpus source")
    p.add_argument("--eval-items", type=int, default=200)
    p.set_defaults(func=cmd_make_fixtures)

    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help and 2 for usage problems; the CLI
        # contract reserves 2 for runtime errors, so usage problems map to 1.
        return 0 if exc.code == 0 else 1
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        _log("error", type=type(exc).__name__, message=str(exc))
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
