"""Generate a toy context-rule language, pretrain GBERT on it and train all four variants.

    python scripts/synthetic_end_to_end.py --out runs/toy

Everything goes through the ``gbert-g2p`` subcommands, so each stage leaves
its own manifest under ``--out``. Takes roughly 10-20 CPU-minutes at the
default sizes.
"""

import argparse
from pathlib import Path

from gbert_g2p import data as D
from gbert_g2p.checkpoint import load_checkpoint
from gbert_g2p.cli import main as cli
from gbert_g2p.evaluation import DecodeConfig
from gbert_g2p.models import g2p_from_checkpoint
from gbert_g2p.synthetic import ToyLanguage
from gbert_g2p.training import encode_entries, evaluate_split

MODEL = ["--layers", "2", "--d-model", "64", "--heads", "4", "--d-ffn", "256"]


def run(cmd: list[str]) -> None:
    print("$ gbert-g2p " + " ".join(cmd), flush=True)
    if cli(cmd) != 0:
        raise SystemExit(f"step failed: {cmd[0]}")


def test_wer(ckpt: Path, test: list[D.LexiconEntry]) -> tuple[float, float]:
    model, gv, pv = g2p_from_checkpoint(load_checkpoint(ckpt))
    wer, per, _ = evaluate_split(model, encode_entries(test, gv, pv), pv, DecodeConfig())
    return wer, per


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--records", type=int, default=700)
    ap.add_argument("--pretrain-words", type=int, default=5000)
    ap.add_argument("--pretrain-steps", type=int, default=1500)
    ap.add_argument("--epochs", type=int, default=150)
    args = ap.parse_args()

    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    lang = ToyLanguage(args.seed)
    lex = lang.lexicon(args.records, 7 + args.seed)
    D.write_lexicon_tsv(lex, out / "lexicon.tsv")
    D.write_wordlist(lang.words(args.pretrain_words, 11, {e.word for e in lex}), out / "words.txt")

    run(["prepare-data", "--lexicon", str(out / "lexicon.tsv"), "--out-dir", str(out / "data"),
         "--seed", str(args.seed)])
    run(["pretrain", "--wordlist", str(out / "words.txt"), "--exclude", str(out / "data/valid.tsv"),
         "--exclude", str(out / "data/test.tsv"), *MODEL, "--max-steps", str(args.pretrain_steps),
         "--eval-interval", "100", "--patience", "5", "--lr", "1e-3", "--seed", str(args.seed),
         "--out", str(out / "gbert")])
    test = D.parse_lexicon_tsv(out / "data/test.tsv")
    rows = []
    for variant in ("baseline", "frozen", "finetune", "fused"):
        extra = [] if variant == "baseline" else ["--gbert", str(out / "gbert/gbert.ckpt")]
        lr_enc = "1e-4" if variant == "finetune" else "1e-3"
        run(["train", "--variant", variant, *extra, "--data-dir", str(out / "data"), *MODEL,
             "--lr-encoder", lr_enc, "--lr-decoder", "1e-3", "--epochs", str(args.epochs), "--patience", "25",
             "--seed", str(args.seed), "--out", str(out / variant)])
        rows.append((variant, *test_wer(out / variant / "model.ckpt", test)))
    print(f"\n{'variant':<10} {'WER':>7} {'PER':>7}")
    for variant, wer, per in rows:
        print(f"{variant:<10} {wer:>6.2f}% {per:>6.2f}%")


if __name__ == "__main__":
    main()
