"""Command-line entry point: prepare, train, apply, evaluate, score-asr, gradcheck.

Configuration precedence: built-in defaults < ``--config`` JSON file (flat
dotted keys such as ``"model.hidden_dim"`` or ``"train.lr_initial"``) <
command-line flags. Logging verbosity comes from ``MTLG2P_LOG`` (default INFO).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import numcore as nc
from .decode import DecodeConfig, beam_search, generate_dictionary, metadata_header, skip_report
from .lexicon import (
    LexiconFormatError, UnknownSymbolError, Vocabulary, build_vocabs, downsample_balanced, encode_all, parse_lexicon,
    parse_wordlist, read_words, split_stats, split_train_valid, tag_entries, write_lexicon,
)
from .metrics import asr_wer_aer, classifier_metrics, g2p_wer, parse_transcripts, per
from .model import CheckpointError, ModelConfig, init_params, load_checkpoint
from .train import TrainConfig, TrainingAborted, fit, summary

log = logging.getLogger("mtlg2p")

SECTIONS = {"model": ModelConfig, "train": TrainConfig, "decode": DecodeConfig}
# keys of ModelConfig that come from the data, not from the user
_DERIVED = {"grapheme_vocab", "phoneme_vocab"}


class CliError(Exception):
    pass


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _defaults() -> dict:
    out = {}
    for section, cls in SECTIONS.items():
        for f in fields(cls):
            if f.name in _DERIVED:
                continue
            out[f"{section}.{f.name}"] = f.default
    return out


def resolve_config(config_file, overrides: dict) -> dict:
    """Flat dotted-key config: defaults, then the JSON file, then non-None overrides."""
    cfg = _defaults()
    if config_file:
        loaded = json.loads(Path(config_file).read_text(encoding="utf-8"))
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise CliError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(loaded)
    for k, v in overrides.items():
        if v is not None:
            cfg[k] = v
    return cfg


def section(cfg: dict, name: str) -> dict:
    prefix = name + "."
    return {k[len(prefix):]: v for k, v in cfg.items() if k.startswith(prefix)}


def _alpha(value: str):
    if value.lower() in ("none", "unweighted"):
        return "unweighted"
    return float(value)


def _overrides(args) -> dict:
    alpha = getattr(args, "alpha", None)
    return {
        "model.embed_dim": getattr(args, "embed_dim", None),
        "model.hidden_dim": getattr(args, "hidden_dim", None),
        "model.alpha": alpha if alpha != "unweighted" else None,
        "train.batch_size": getattr(args, "batch_size", None),
        "train.lr_initial": getattr(args, "lr", None),
        "train.lr_floor": getattr(args, "lr_floor", None),
        "train.patience": getattr(args, "patience", None),
        "train.max_epochs": getattr(args, "max_epochs", None),
        "train.optimizer": getattr(args, "optimizer", None),
        "train.seed": getattr(args, "seed", None),
        "decode.beam_width": getattr(args, "beam", None),
        "decode.threshold": getattr(args, "threshold", None),
    }


def _resolve(args) -> dict:
    cfg = resolve_config(getattr(args, "config", None), _overrides(args))
    # explicit "off" values cannot travel through the None-means-unset overrides
    if getattr(args, "alpha", None) == "unweighted":
        cfg["model.alpha"] = None
    if getattr(args, "no_clip", False):
        cfg["train.clip_norm"] = None
    return cfg


def _echo(command: str, cfg: dict, inputs: list) -> dict:
    record = {"command": command, "config": cfg, "inputs": {str(p): sha256(p) for p in inputs}}
    log.info("resolved: %s", json.dumps(record, sort_keys=True))
    return record


def _require(*paths):
    for p in paths:
        if not Path(p).is_file():
            raise CliError(f"missing input file: {p}")


def _dump(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# commands


def cmd_prepare(args) -> int:
    _require(*args.lexicon, *([args.wordlist] if args.wordlist else []), *([args.valid_file] if args.valid_file else []))
    seed = args.seed if args.seed is not None else 0
    cfg = {"seed": seed, "downsample": args.downsample, "valid_count": args.valid_count,
           "valid_file": args.valid_file, "case_sensitive": args.case_sensitive}
    record = _echo("prepare", cfg, list(args.lexicon) + [p for p in (args.wordlist, args.valid_file) if p])

    entries = []
    seen = set()
    for path in args.lexicon:
        for e in parse_lexicon(path):
            if (e.word, e.phonemes) not in seen:
                seen.add((e.word, e.phonemes))
                entries.append(e)
    valid = None
    if args.valid_file:
        valid = parse_lexicon(args.valid_file)
    if args.wordlist:
        words = parse_wordlist(args.wordlist, args.case_sensitive)
        entries = tag_entries(entries, words, args.case_sensitive)
        if valid is not None:
            valid = tag_entries(valid, words, args.case_sensitive)
    elif any(e.anglicism is None for e in entries):
        log.warning("no word list and some entries lack a flag column; treating them as non-Anglicisms")

    def _fill(es):
        return [e if e.anglicism is not None else type(e)(e.word, e.phonemes, False) for e in es]

    entries = _fill(entries)
    if valid is not None:
        valid = _fill(valid)
        held = {(e.word, e.phonemes) for e in valid}
        train = [e for e in entries if (e.word, e.phonemes) not in held]
    else:
        split = split_train_valid(entries, args.valid_count, seed)
        train, valid = split.train, split.valid
    if args.downsample:
        train = downsample_balanced(train, seed, part="train")
        if valid:
            valid = downsample_balanced(valid, seed, part="valid")

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_lexicon(train, out / "train.tsv")
    write_lexicon(valid, out / "valid.tsv")
    vocab = build_vocabs(train)
    vocab.save(out / "vocab.json")
    manifest = dict(record, seed=seed, train=split_stats(train), valid=split_stats(valid),
                    vocab={"graphemes": len(vocab.graphemes), "phonemes": len(vocab.phonemes)})
    _dump(manifest, out / "manifest.json")
    print(f"train: {manifest['train']}\nvalid: {manifest['valid']}")
    return 0


def _table_row(params, entries, vocab, mcfg, dcfg) -> dict:
    pairs, probs = [], []
    for e in entries:
        res = beam_search(e.word, params, vocab, mcfg, dcfg)
        pairs.append((e.phonemes, res.phonemes))
        probs.append(res.anglicism_prob)
    cm = classifier_metrics(probs, [bool(e.anglicism) for e in entries], dcfg.threshold)
    return {"PER": per(pairs), "WER": g2p_wer(pairs), "Accu.": cm.accuracy, "Prec.": cm.precision,
            "Recall": cm.recall, "F1": cm.f1}


def cmd_train(args) -> int:
    data = Path(args.data_dir)
    files = [data / "train.tsv", data / "valid.tsv", data / "vocab.json"]
    _require(*files)
    cfg = _resolve(args)
    mk, tk, dk = section(cfg, "model"), section(cfg, "train"), section(cfg, "decode")
    try:
        tcfg = TrainConfig(**tk)
        dcfg = DecodeConfig(**dk)
        vocab = Vocabulary.load(data / "vocab.json")
        mcfg = ModelConfig(len(vocab.graphemes), len(vocab.phonemes), **mk)
    except (TypeError, ValueError) as e:
        raise CliError(f"invalid configuration: {e}") from None
    record = _echo("train", cfg, files)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _dump(record, out / "run_config.json")
    log.info("loss combination: %s", "unweighted" if mcfg.alpha is None else f"weighted alpha={mcfg.alpha}")
    log.info("gradient clipping: %s", "off" if tcfg.clip_norm is None else f"max_norm={tcfg.clip_norm}")

    train_entries = parse_lexicon(data / "train.tsv")
    valid_entries = parse_lexicon(data / "valid.tsv")
    train_ex, _, _ = encode_all(train_entries, vocab, args.skip_unknown)
    valid_ex, valid_kept, _ = encode_all(valid_entries, vocab, args.skip_unknown)
    if not valid_ex:
        log.warning("empty validation set; validating on the training set")
        valid_ex, valid_kept = train_ex, train_entries
    params = init_params(mcfg, tcfg.seed, np.dtype(tcfg.precision).type)
    result = fit(params, train_ex, valid_ex, mcfg, tcfg, out, vocab)
    print(summary(result.state))
    row = _table_row(result.best_params, valid_kept, vocab, mcfg, dcfg)
    _dump(row, out / "valid_metrics.json")
    print("  ".join(f"{k} {v:.2f}" for k, v in row.items()))
    return 0


def cmd_apply(args) -> int:
    _require(args.checkpoint, args.wordlist)
    bundle = load_checkpoint(args.checkpoint)
    cfg = _resolve(args)
    dcfg = DecodeConfig(**section(cfg, "decode"))
    _echo("apply", section(cfg, "decode"), [args.checkpoint, args.wordlist])
    words = read_words(args.wordlist)
    out = generate_dictionary(words, bundle.params, bundle.vocab, bundle.config, dcfg, args.emit_flags)
    header = metadata_header(Path(args.checkpoint).name, dcfg) if words else None
    Path(args.out).write_text(out.text(header), encoding="utf-8")
    report = args.skip_report or str(args.out) + ".skipped.json"
    Path(report).write_text(skip_report(out), encoding="utf-8")
    print(f"wrote {len(out.lines)} entries to {args.out}; skipped {len(out.skipped)}")
    return 0


def evaluate_entries(entries, bundle, dcfg: DecodeConfig) -> dict:
    pairs, probs, labels, flags = [], [], [], []
    for e in entries:
        res = beam_search(e.word, bundle.params, bundle.vocab, bundle.config, dcfg)
        pairs.append((e.phonemes, res.phonemes))
        probs.append(res.anglicism_prob)
        flags.append(e.anglicism)
    report = {"entries": len(pairs), "PER": per(pairs), "WER": g2p_wer(pairs)}
    if pairs and all(f is not None for f in flags):
        report["classifier"] = classifier_metrics(probs, flags, dcfg.threshold).to_dict()
        by_class = {}
        for name, want in (("anglicism", True), ("non_anglicism", False)):
            sub = [p for p, f in zip(pairs, flags) if f == want]
            if sub:
                by_class[name] = {"entries": len(sub), "PER": per(sub), "WER": g2p_wer(sub)}
        report["by_class"] = by_class
    return report


def cmd_evaluate(args) -> int:
    _require(args.checkpoint, args.lexicon)
    bundle = load_checkpoint(args.checkpoint)
    cfg = _resolve(args)
    dcfg = DecodeConfig(**section(cfg, "decode"))
    _echo("evaluate", section(cfg, "decode"), [args.checkpoint, args.lexicon])
    entries = parse_lexicon(args.lexicon)
    _, kept, skipped = encode_all(entries, bundle.vocab, args.skip_unknown)
    if not kept:
        raise CliError("no evaluable entries")
    report = evaluate_entries(kept, bundle, dcfg)
    report["skipped"] = [w for w, _ in skipped]
    report["beam"] = dcfg.beam_width
    text = json.dumps(report, indent=1, sort_keys=True, ensure_ascii=False)
    if args.json:
        Path(args.json).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_score_asr(args) -> int:
    _require(args.ref, args.hyp)
    _echo("score-asr", {"map_hyphens": args.map_hyphens, "ignore_case": args.ignore_case}, [args.ref, args.hyp])
    refs = parse_transcripts(args.ref, flagged=True)
    hyps = parse_transcripts(args.hyp, flagged=False)
    rep = asr_wer_aer(refs, hyps, map_hyphens=args.map_hyphens, ignore_case=args.ignore_case)
    print(f"WER {rep.wer:.2f}  (S={rep.substitutions} D={rep.deletions} I={rep.insertions} N={rep.ref_words})")
    print(f"AER {rep.aer:.2f}  recognized Anglicisms {rep.recognized}/{rep.flagged}")
    if args.json:
        _dump(rep.to_dict(), args.json)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import TOLERANCE, check_seed

    seeds = args.seed if args.seed else list(range(args.seeds))
    _echo("gradcheck", {"seeds": seeds, "hidden": args.hidden, "h": args.h}, [])
    ok = True
    for s in seeds:
        r = check_seed(s, hidden=args.hidden, h=args.h)
        ok &= r.passed
        print(f"seed {s}: max relative error {r.max_error:.3e} over {r.parameters} parameters "
              f"[{'PASS' if r.passed else 'FAIL'}]")
    print(f"{'PASS' if ok else 'FAIL'} (tolerance {TOLERANCE:g})")
    return 0 if ok else 1


# ---------------------------------------------------------------------------


def _model_flags(p):
    p.add_argument("--config", help="JSON file with flat dotted keys")
    p.add_argument("--alpha", type=_alpha, help="decoder weight in [0,1], or 'unweighted' for the plain sum")
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-floor", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--optimizer", choices=["adam", "sgd"])
    p.add_argument("--no-clip", action="store_true", help="disable gradient-norm clipping")
    p.add_argument("--seed", type=int)


def _decode_flags(p):
    p.add_argument("--beam", type=int)
    p.add_argument("--threshold", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mtlg2p", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="tag, split and downsample lexicons")
    p.add_argument("--lexicon", action="append", required=True, help="lexicon TSV; repeat to concatenate")
    p.add_argument("--wordlist", help="Anglicism word list used to set flags")
    p.add_argument("--out-dir", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--valid-count", type=int, default=0)
    g.add_argument("--valid-file")
    p.add_argument("--downsample", action="store_true", help="balance both splits 50/50")
    p.add_argument("--case-sensitive", action="store_true")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model on a prepared directory")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--skip-unknown", action="store_true")
    _model_flags(p)
    _decode_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("apply", help="generate a pronunciation dictionary for a word list")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--wordlist", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--emit-flags", action="store_true", help="add probability and 0/1 Anglicism columns")
    p.add_argument("--skip-report")
    p.add_argument("--config")
    _decode_flags(p)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("evaluate", help="PER/WER and classifier metrics on a lexicon")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--skip-unknown", action="store_true")
    p.add_argument("--json")
    p.add_argument("--config")
    _decode_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("score-asr", help="WER and Anglicism error rate of ASR transcripts")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--map-hyphens", action="store_true")
    p.add_argument("--ignore-case", action="store_true")
    p.add_argument("--json")
    p.set_defaults(func=cmd_score_asr)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full multitask loss")
    p.add_argument("--seed", type=int, action="append")
    p.add_argument("--seeds", type=int, default=1, help="check seeds 0..N-1 (ignored with --seed)")
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--h", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("MTLG2P_LOG", "INFO").upper(), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, LexiconFormatError, UnknownSymbolError, CheckpointError, TrainingAborted, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
