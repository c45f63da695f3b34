"""Command-line entry point: ``mvgpt <subcommand> ...``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import datapipe, metrics
from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .config import dump_config, load_config, parse_config_text, resolve
from .model import MVGPT
from .objectives import caption_loss
from .tokenizer import BOS2, CLS1, Vocabulary, build_vocab, decode, encode_ids
from .trainer import make_checkpoint, restore, train

log = logging.getLogger("mvgpt")

SPECIAL = {4: "CLS1", 5: "CLS2", 6: "BOS1", 7: "BOS2"}


def _corpus(triplets) -> list[str]:
    out = []
    for t in triplets:
        out += [u.text for u in t.present] + [t.W]
        if t.caption:
            out.append(t.caption)
    return out


def _loss_writer(path):
    if not path:
        return None, []
    fh = open(path, "w", encoding="utf-8")
    fh.write("step\tlr\ttotal\n")

    def cb(step, rec):
        fh.write(f"{step}\t{rec['lr']!r}\t{rec['total']!r}\n")

    return fh, [cb]


def cmd_extract(args) -> int:
    mcfg, _ = load_config(args.config, args.set)
    rng = np.random.default_rng(args.seed)
    out = []
    for tid, utts in datapipe.read_transcripts(args.transcripts):
        for t in datapipe.extract_triplets(utts, args.fps, mcfg.tubelet_t, args.drop_short, id_prefix=tid):
            t.frame_seed = int(rng.integers(2**31))
            t.frames, _ = datapipe.synth_frames(t.frame_seed, len(t.frame_times), mcfg.frame_height, mcfg.frame_width, mcfg.tubelet_h)
            t.patch = mcfg.tubelet_h
            out.append(t)
    datapipe.write_jsonl(args.out, out)
    print(f"wrote {len(out)} triplets to {args.out}")
    return 0


def cmd_synth(args) -> int:
    triplets, _ = datapipe.synth_dataset(args.seed, args.n, n_frames=args.frames, height=args.height,
                                         width=args.width, patch=args.patch)
    datapipe.write_jsonl(args.out, triplets)
    print(f"wrote {len(triplets)} triplets to {args.out}")
    return 0


def _fit_to_data(mcfg, triplets):
    nf, h, w, ch = triplets[0].frames.shape
    return dataclasses.replace(mcfg, frame_height=h, frame_width=w, channels=ch, max_frames=max(mcfg.max_frames, nf))


def cmd_pretrain(args) -> int:
    triplets = datapipe.read_jsonl(args.data)
    if not triplets:
        raise ValueError(f"{args.data}: no triplets")
    vocab = build_vocab(_corpus(triplets))
    mcfg, tcfg = load_config(args.config, args.set)
    mcfg = dataclasses.replace(_fit_to_data(mcfg, triplets), vocab_size=len(vocab), seed=args.seed)
    tcfg = dataclasses.replace(tcfg, train_seed=args.seed)
    mcfg.validate()
    log.info("resolved config:\n%s", dump_config(mcfg, tcfg))
    vocab.save(args.vocab)
    examples = datapipe.to_examples(triplets, vocab, mcfg.max_text_len)
    model = MVGPT(mcfg)
    fh, cbs = _loss_writer(args.log)
    try:
        result = train(model, examples, tcfg, "pretrain", checkpoint_path=args.out, callbacks=cbs)
    finally:
        if fh:
            fh.close()
    save_checkpoint(args.out, make_checkpoint(result.model, tcfg, result.state, result.rng))
    print(f"final loss {result.losses[-1]['total']:.6f}; checkpoint {args.out}")
    return 0


def _load(args):
    model, tcfg, state, rng = restore(load_checkpoint(args.checkpoint))
    vocab = Vocabulary.load(args.vocab)
    if len(vocab) != model.cfg.vocab_size:
        raise ValueError(f"vocabulary has {len(vocab)} tokens, checkpoint expects {model.cfg.vocab_size}")
    return model, tcfg, vocab


def _stream_name(ids) -> str:
    return SPECIAL.get(ids[0], str(ids[0])) if ids else "-"


def cmd_finetune(args) -> int:
    model, tcfg, vocab = _load(args)
    pairs = parse_config_text(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    pairs.update(dict(s.split("=", 1) for s in args.set))
    _, tcfg = resolve({k.strip(): v.strip() for k, v in pairs.items()}, model.cfg, dataclasses.replace(tcfg, train_seed=args.seed))
    log.info("resolved config:\n%s", dump_config(model.cfg, tcfg))
    triplets = datapipe.read_jsonl(args.data)
    examples = datapipe.to_examples(triplets, vocab, model.cfg.max_text_len, target="caption")
    with T.no_grad(), model.record_streams() as streams:
        caption_loss(model, examples[:1])
    enc = next(ids for role, ids in streams if role == "text")
    dec = next(ids for role, ids in streams if role == "decoder")
    log.info("finetune streams: encoder text starts with %s, decoder starts with %s", _stream_name(enc), _stream_name(dec))
    fh, cbs = _loss_writer(args.log)
    try:
        result = train(model, examples, tcfg, "caption", callbacks=cbs)
    finally:
        if fh:
            fh.close()
    save_checkpoint(args.out, make_checkpoint(result.model, tcfg, result.state, result.rng))
    print(f"final caption loss {result.losses[-1]['total']:.6f}; checkpoint {args.out}")
    return 0


def cmd_caption(args) -> int:
    model, tcfg, vocab = _load(args)
    triplets = datapipe.read_jsonl(args.data)
    beam = tcfg.beam if args.beam is None else args.beam
    max_len = args.max_len or model.cfg.max_gen_len
    with open(args.out, "w", encoding="utf-8") as fh:
        for t in triplets:
            text_ids = [CLS1] + encode_ids(vocab, t.U, max_len=model.cfg.max_text_len - 1)
            ids = model.generate(t.frames, text_ids, BOS2, beam=beam, max_len=max_len,
                                 length_alpha=tcfg.length_alpha, greedy=args.greedy)
            fh.write(json.dumps({"id": t.id, "hypothesis": decode(vocab, ids)}) + "\n")
    print(f"captioned {len(triplets)} clips into {args.out}")
    return 0


def _read_records(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}: line {lineno}: {exc}") from exc
    return out


def _references(rec: dict) -> list[str]:
    if "references" in rec:
        return list(rec["references"])
    if "caption" in rec:
        return [rec["caption"]]
    if "hypothesis" in rec:
        return [rec["hypothesis"]]
    raise ValueError(f"record {rec.get('id')!r} has no references")


def cmd_eval(args) -> int:
    if args.input:
        corpus = [(r["hypothesis"], r["references"]) for r in _read_records(args.input)]
    else:
        if not (args.hyps and args.refs):
            raise ValueError("eval needs --input or both --hyps and --refs")
        refs = {str(r["id"]): _references(r) for r in _read_records(args.refs)}
        corpus = [(h["hypothesis"], refs[str(h["id"])]) for h in _read_records(args.hyps)]
    for name, value in metrics.report(corpus).items():
        print(f"{name}\t{value!r}" if not math.isnan(value) else f"{name}\tnan")
    return 0


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_all

    return 0 if run_all(seed=args.seed) else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mvgpt", description="Bidirectional video-captioning pretraining toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")

    p = sub.add_parser("extract", help="transcripts JSONL -> triplets JSONL")
    common(p)
    p.add_argument("--transcripts", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fps", type=float, default=1.0)
    p.add_argument("--drop-short", action="store_true")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("synth", help="write a seeded synthetic dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--frames", type=int, default=4)
    p.add_argument("--height", type=int, default=16)
    p.add_argument("--width", type=int, default=16)
    p.add_argument("--patch", type=int, default=8)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="bidirectional pretraining")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--vocab", required=True, help="vocabulary file to write")
    p.add_argument("--log", help="loss log (TSV)")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="caption finetuning from a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("caption", help="generate captions")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--beam", type=int, default=None, help="beam size (default from config, 5)")
    p.add_argument("--greedy", action="store_true", help="use the greedy decoder")
    p.add_argument("--max-len", type=int, default=0)
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("eval", help="caption metrics")
    common(p)
    p.add_argument("--input", help="JSONL with id, hypothesis, references")
    p.add_argument("--hyps")
    p.add_argument("--refs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selfcheck", help="gradient, causality and oracle checks")
    common(p)
    p.set_defaults(func=cmd_selfcheck)
    return ap


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
