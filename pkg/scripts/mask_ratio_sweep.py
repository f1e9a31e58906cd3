"""Pretrain GBERT at several mask ratios and fine-tune each on the same low-resource split.

    python scripts/mask_ratio_sweep.py --data-dir runs/toy/data --wordlist runs/toy/words.txt --out runs/sweep

``--data-dir`` is a ``prepare-data`` output directory; when it holds
``train_low.tsv`` that file is used for fine-tuning. Prints masked accuracy
and test WER per ratio.
"""

import argparse
from pathlib import Path

from gbert_g2p import data as D
from gbert_g2p.checkpoint import load_checkpoint
from gbert_g2p.cli import main as cli
from gbert_g2p.evaluation import DecodeConfig
from gbert_g2p.models import g2p_from_checkpoint
from gbert_g2p.training import encode_entries, evaluate_split


def run(cmd: list[str]) -> None:
    print("$ gbert-g2p " + " ".join(cmd), flush=True)
    if cli(cmd) != 0:
        raise SystemExit(f"step failed: {cmd[0]}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data-dir", type=Path, required=True)
    ap.add_argument("--wordlist", type=Path, required=True)
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--ratios", type=float, nargs="+", default=[0.15, 0.2, 0.3])
    ap.add_argument("--layers", default="2")
    ap.add_argument("--d-model", default="64")
    ap.add_argument("--pretrain-steps", default="1500")
    ap.add_argument("--epochs", default="150")
    ap.add_argument("--seed", default="0")
    args = ap.parse_args()

    model = ["--layers", args.layers, "--d-model", args.d_model, "--heads", "4", "--d-ffn", str(4 * int(args.d_model))]
    train_file = "train_low.tsv" if (args.data_dir / "train_low.tsv").exists() else "train.tsv"
    test = D.parse_lexicon_tsv(args.data_dir / "test.tsv")
    rows = []
    for ratio in args.ratios:
        out = args.out / f"ratio_{ratio:g}"
        run(["pretrain", "--wordlist", str(args.wordlist), "--exclude", str(args.data_dir / "valid.tsv"),
             "--exclude", str(args.data_dir / "test.tsv"), "--mask-ratio", str(ratio), *model,
             "--max-steps", args.pretrain_steps, "--eval-interval", "100", "--patience", "5", "--lr", "1e-3",
             "--seed", args.seed, "--out", str(out / "gbert")])
        gbert = load_checkpoint(out / "gbert/gbert.ckpt")
        run(["train", "--variant", "finetune", "--gbert", str(out / "gbert/gbert.ckpt"),
             "--data-dir", str(args.data_dir), "--train-file", train_file, *model, "--lr-encoder", "1e-4",
             "--lr-decoder", "1e-3", "--epochs", args.epochs, "--patience", "25", "--seed", args.seed,
             "--out", str(out / "finetune")])
        g2p, gv, pv = g2p_from_checkpoint(load_checkpoint(out / "finetune/model.ckpt"))
        wer, per, _ = evaluate_split(g2p, encode_entries(test, gv, pv), pv, DecodeConfig())
        rows.append((ratio, gbert.meta.get("masked_acc"), wer, per))
    print(f"\n{'ratio':>6} {'masked acc':>11} {'WER':>7} {'PER':>7}")
    for ratio, acc, wer, per in rows:
        acc_s = f"{100 * acc:.2f}%" if acc is not None else "n/a"
        print(f"{ratio:>6g} {acc_s:>11} {wer:>6.2f}% {per:>6.2f}%")


if __name__ == "__main__":
    main()
