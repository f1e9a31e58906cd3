"""Command-line entry points: prepare-data, pretrain, train, evaluate, predict.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime/numerical error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import data as D
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .evaluation import DecodeConfig, EvalReport, aggregate_seeds, decode, decode_many
from .gbert import PretrainConfig, format_log_line as pretrain_line, pretrain
from .models import VariantKind, build_variant, g2p_checkpoint, g2p_from_checkpoint
from .optim import NumericalError
from .training import TrainConfig, format_log_line as train_line, train_g2p
from .transformer import ModelConfig

logger = logging.getLogger("gbert_g2p")

EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def read_config_file(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` comments and blank lines ignored."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read config file: {e}") from e
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def _model_args(p: argparse.ArgumentParser, layers_default: int = 4) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--layers", type=int, default=layers_default, help="encoder (and decoder) layers")
    g.add_argument("--d-model", type=int, default=256)
    g.add_argument("--heads", type=int, default=4)
    g.add_argument("--d-ffn", type=int, default=1024)
    g.add_argument("--dropout", type=float, default=0.1)
    g.add_argument("--max-len", type=int, default=64)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gbert-g2p", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("prepare-data", help="split a lexicon into train/valid/test TSVs")
    s.add_argument("--config")
    s.add_argument("--lexicon", help="single lexicon, split 8:1:1 by word")
    s.add_argument("--train", help="official training lexicon (use with --valid/--test)")
    s.add_argument("--valid")
    s.add_argument("--test")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--low-resource-n", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--jamo", action="store_true", help="decompose Hangul syllables into jamo")
    s.add_argument("--language", help="tag every record with this language")

    s = sub.add_parser("pretrain", help="pretrain GBERT by masked grapheme prediction")
    s.add_argument("--config")
    s.add_argument("--wordlist", action="append", required=True, help="repeatable; one per language")
    s.add_argument("--language", action="append", help="language tag per --wordlist (bilingual mode)")
    s.add_argument("--exclude", action="append", default=[], help="lexicon TSV whose words are removed")
    s.add_argument("--jamo", action="store_true")
    s.add_argument("--mask-ratio", type=float, default=0.2)
    _model_args(s, layers_default=6)
    s.add_argument("--batch-size", type=int, default=64)
    s.add_argument("--max-steps", type=int, default=20000)
    s.add_argument("--eval-interval", type=int, default=200)
    s.add_argument("--patience", type=int, default=10)
    s.add_argument("--lr", type=float, default=5e-4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("train", help="train a G2P model variant")
    s.add_argument("--config")
    s.add_argument("--variant", default="baseline", choices=["baseline", "frozen", "finetune", "fused"])
    s.add_argument("--gbert", help="GBERT checkpoint (required unless --variant baseline)")
    s.add_argument("--data-dir", required=True)
    s.add_argument("--train-file", default="train.tsv", help="training TSV inside --data-dir")
    s.add_argument("--lr-encoder", type=float, default=5e-4)
    s.add_argument("--lr-decoder", type=float, default=5e-4)
    _model_args(s)
    s.add_argument("--drop-net-rate", type=float, default=1.0)
    s.add_argument("--batch-size", type=int, default=32)
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--patience", type=int, default=10)
    s.add_argument("--max-steps", type=int)
    s.add_argument("--grad-clip", type=float, default=1.0)
    s.add_argument("--label-smoothing", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("evaluate", help="WER/PER of one or more checkpoints")
    s.add_argument("--config")
    s.add_argument("--model", nargs="+", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--beam", type=int, default=5)
    s.add_argument("--out", help="directory for per-model hypothesis files")
    s.add_argument("--allow-unknown", action="store_true", help="map unseen test graphemes to <unk>")

    s = sub.add_parser("predict", help="pronounce words with a trained model")
    s.add_argument("--model", required=True)
    s.add_argument("--word", action="append", required=True)
    s.add_argument("--language", help="language tag for bilingual models")
    s.add_argument("--jamo", action="store_true")
    s.add_argument("--beam", type=int, default=5)
    return p


def _config_path(argv: list[str]) -> str | None:
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def _parse(argv) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    path = _config_path(argv)
    command = next((a for a in argv if a in COMMANDS), None)
    if path and command:
        values = read_config_file(path)
        sub = parser._subparsers._group_actions[0].choices[command]
        known = {a.dest: a for a in sub._actions}
        unknown = sorted(set(values) - known.keys())
        if unknown:
            raise UsageError(f"unknown config keys: {unknown}")
        for k, v in values.items():
            if isinstance(known[k], argparse._StoreTrueAction):
                values[k] = v.lower() in ("1", "true", "yes", "on")
            known[k].required = False  # supplied by the file
        sub.set_defaults(**values)  # explicit flags still win
    return parser.parse_args(argv)


def _manifest(out_dir: Path, args, started: float, inputs: list, outputs: list, seeds: list) -> None:
    cfg = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    D.write_manifest(out_dir / "manifest.json", {
        "command": args.command,
        "config": cfg,
        "seeds": seeds,
        "inputs": {str(p): D.sha256_file(p) for p in inputs},
        "outputs": {str(p): D.sha256_file(p) for p in outputs},
        "wall_clock_seconds": round(time.time() - started, 3),
    })


def _read_lexicon(path, args) -> list[D.LexiconEntry]:
    return D.parse_lexicon_tsv(path, jamo=getattr(args, "jamo", False))


def cmd_prepare_data(args) -> None:
    started = time.time()
    out = Path(args.out_dir)
    if args.lexicon and (args.train or args.valid or args.test):
        raise UsageError("use either --lexicon or --train/--valid/--test")
    if args.lexicon:
        inputs = [args.lexicon]
        split = D.split_lexicon(_read_lexicon(args.lexicon, args), args.seed)
    elif args.train and args.valid and args.test:
        inputs = [args.train, args.valid, args.test]
        split = D.DatasetSplit(*(_read_lexicon(p, args) for p in inputs), provenance={"rule": "official"})
        split.check_disjoint()
    else:
        raise UsageError("need --lexicon, or all of --train/--valid/--test")
    if args.language:
        split = D.DatasetSplit(*([D.LexiconEntry(e.graphemes, e.phonemes, args.language) for e in part]
                                 for part in (split.train, split.valid, split.test)), provenance=split.provenance)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for name, part in (("train", split.train), ("valid", split.valid), ("test", split.test)):
        D.write_lexicon_tsv(part, out / f"{name}.tsv")
        outputs.append(out / f"{name}.tsv")
    if args.low_resource_n is not None:
        low = D.make_low_resource_split(split, args.low_resource_n, args.seed)
        D.write_lexicon_tsv(low.train, out / "train_low.tsv")
        outputs.append(out / "train_low.tsv")
    D.write_manifest(out / "split.json", {
        "sources": {p: D.sha256_file(p) for p in inputs}, "seed": args.seed, "low_resource_n": args.low_resource_n,
        "jamo": args.jamo, "counts": {"train": len(split.train), "valid": len(split.valid), "test": len(split.test)},
        "files": {str(p.name): D.sha256_file(p) for p in outputs}, "provenance": split.provenance})
    outputs.append(out / "split.json")
    _manifest(out, args, started, inputs, outputs, [args.seed])
    print(f"train {len(split.train)}  valid {len(split.valid)}  test {len(split.test)}"
          + (f"  low-resource train {args.low_resource_n}" if args.low_resource_n is not None else ""))


def cmd_pretrain(args) -> None:
    started = time.time()
    langs = args.language or []
    if not 0.0 < args.mask_ratio < 1.0:
        raise UsageError(f"--mask-ratio must be in (0, 1), got {args.mask_ratio}")
    if langs and len(langs) != len(args.wordlist):
        raise UsageError("give one --language per --wordlist")
    excluded = [e for p in args.exclude for e in _read_lexicon(p, args)]
    items = []
    for i, path in enumerate(args.wordlist):
        words = D.exclude_words(D.read_wordlist(path, jamo=args.jamo), excluded)
        items += [(w, langs[i] if langs else None) for w in words]
    cfg = PretrainConfig(mask_ratio=args.mask_ratio, batch_size=args.batch_size, max_steps=args.max_steps,
                         eval_interval=args.eval_interval, patience=args.patience, lr=args.lr, seed=args.seed)
    mcfg = ModelConfig(gbert_layers=args.layers, d_model=args.d_model, num_heads=args.heads, d_ffn=args.d_ffn,
                       dropout_p=args.dropout, max_len=args.max_len)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "pretrain.log"
    with open(log_path, "w", encoding="utf-8") as log:
        log.write("step, train_loss, valid_loss, masked_acc\n")

        def emit(rec):
            log.write(pretrain_line(rec) + "\n")
            log.flush()
            logger.info(pretrain_line(rec))

        result = pretrain(items, cfg, mcfg, languages=sorted(set(langs)), log_fn=emit)
    ckpt_path = out / "gbert.ckpt"
    save_checkpoint(result.checkpoint({"seed": args.seed, "mask_ratio": args.mask_ratio,
                                       "pretrain": asdict(cfg)}), ckpt_path)
    _manifest(out, args, started, list(args.wordlist) + list(args.exclude), [ckpt_path, log_path], [args.seed])
    print(f"best step {result.best_step}: valid loss {result.best_valid_loss:.4f}, "
          f"masked accuracy {100 * result.best_masked_acc:.2f}% (random {100 / len(result.vocab):.2f}%)")


def _tag(entries, vocab=None):
    return [D.prefix_language_tag(e, e.language, vocab) if e.language else e for e in entries]


def cmd_train(args) -> None:
    started = time.time()
    kind = VariantKind.parse(args.variant)
    if kind is VariantKind.BASELINE and args.gbert:
        raise UsageError("--variant baseline does not take --gbert")
    if kind is not VariantKind.BASELINE and not args.gbert:
        raise UsageError(f"--variant {args.variant} requires --gbert")
    data_dir = Path(args.data_dir)
    paths = [data_dir / args.train_file, data_dir / "valid.tsv"]
    train, valid = (D.parse_lexicon_tsv(p) for p in paths)
    langs = sorted({e.language for e in train + valid if e.language})
    mcfg = ModelConfig(num_encoder_layers=args.layers, num_decoder_layers=args.layers, d_model=args.d_model,
                       num_heads=args.heads, d_ffn=args.d_ffn, dropout_p=args.dropout, max_len=args.max_len,
                       drop_net_rate=args.drop_net_rate)
    tcfg = TrainConfig(lr_encoder=args.lr_encoder, lr_decoder=args.lr_decoder, batch_size=args.batch_size,
                       max_epochs=args.epochs, patience=args.patience, grad_clip_norm=args.grad_clip,
                       label_smoothing=args.label_smoothing, seed=args.seed, max_steps=args.max_steps)
    pv = D.build_vocab(train + valid, "phoneme")
    inputs = list(paths)
    if kind is VariantKind.BASELINE:
        gv = D.build_vocab(train + valid, "grapheme", langs)
        model = build_variant(kind, mcfg, pv, gv, seed=args.seed)
    else:
        inputs.append(Path(args.gbert))
        gckpt = load_checkpoint(args.gbert)
        data_vocab = D.build_vocab(train + valid, "grapheme", langs)
        model = build_variant(kind, mcfg, pv, data_vocab, gbert_checkpoint=gckpt, seed=args.seed)
        gv = D.Vocabulary.from_dict(gckpt.vocabs["grapheme"])
    split = D.DatasetSplit(_tag(train, gv), _tag(valid, gv), [])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train.log"
    with open(log_path, "w", encoding="utf-8") as log:
        log.write("epoch, train_loss, valid_wer, valid_per, lr_encoder, lr_decoder\n")

        def emit(rec):
            log.write(train_line(rec) + "\n")
            log.flush()
            logger.info(train_line(rec))

        result = train_g2p(model, split, tcfg, gv, pv, log_fn=emit)
    ckpt_path = out / "model.ckpt"
    save_checkpoint(g2p_checkpoint(model, gv, pv, {"seed": args.seed, "best_epoch": result.best_epoch,
                                                   "valid_wer": result.best_valid_wer, "steps": result.steps}),
                    ckpt_path)
    _manifest(out, args, started, inputs, [ckpt_path, log_path], [args.seed])
    print(f"best epoch {result.best_epoch}: valid WER {result.best_valid_wer:.2f}%  PER {result.best_valid_per:.2f}%")


def _encode_for(model_vocab: D.Vocabulary, entry: D.LexiconEntry) -> list[int]:
    if entry.language:
        entry = D.prefix_language_tag(entry, entry.language, model_vocab)
    return model_vocab.encode(entry.graphemes)


def cmd_evaluate(args) -> None:
    test = D.parse_lexicon_tsv(args.test)
    cfg = DecodeConfig(strategy="greedy" if args.beam == 1 else "beam", beam_size=args.beam)
    reports = []
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    for i, path in enumerate(args.model):
        ckpt = load_checkpoint(path)
        model, gv, pv = g2p_from_checkpoint(ckpt)
        unknown = sorted({p for e in test for p in e.phonemes if p not in pv})
        if unknown:
            logger.warning("%d reference phonemes unknown to %s: %s", len(unknown), path, unknown[:10])
        foreign = sorted({g for e in test for g in e.graphemes if g not in gv})
        if foreign and not args.allow_unknown:
            raise D.DataError(f"{len(foreign)} test graphemes are not in the vocabulary of {path}: {foreign[:10]}"
                              " (pass --allow-unknown to map them to <unk>)")
        outs, truncated = decode_many(model, [_encode_for(gv, e) for e in test], cfg, gv.pad)
        report = EvalReport.from_predictions([e.word for e in test], [list(e.phonemes) for e in test],
                                             [pv.decode(o) for o in outs], ckpt.meta.get("seed"), truncated)
        reports.append(report)
        print(f"== {path}")
        print(report.table())
        if out:
            (out / f"{i:02d}_{Path(path).parent.name or 'model'}.hyp.tsv").write_text(report.to_lines(), encoding="utf-8")
    agg = aggregate_seeds(reports)
    print(f"WER {agg['wer']}  PER {agg['per']}  over {len(reports)} model(s)")


def cmd_predict(args) -> None:
    model, gv, pv = g2p_from_checkpoint(load_checkpoint(args.model))
    cfg = DecodeConfig(strategy="greedy" if args.beam == 1 else "beam", beam_size=args.beam)
    for word in args.word:
        graphemes = D.decompose_hangul(word) if args.jamo else list(word)
        if args.language:
            graphemes = [D.language_token(args.language)] + graphemes
            if graphemes[0] not in gv:
                raise D.DataError(f"language tag {args.language!r} not known to the model")
        print(" ".join(pv.decode(decode(model, gv.encode(graphemes), cfg))))


COMMANDS = {"prepare-data": cmd_prepare_data, "pretrain": cmd_pretrain, "train": cmd_train,
            "evaluate": cmd_evaluate, "predict": cmd_predict}


def main(argv=None) -> int:
    try:
        args = _parse(argv)
    except UsageError as e:
        print(f"gbert-g2p: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as e:
        print(f"gbert-g2p: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (D.DataError, CheckpointError, FileNotFoundError, KeyError, UnicodeDecodeError) as e:
        print(f"gbert-g2p: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, ValueError, RuntimeError) as e:
        print(f"gbert-g2p: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
