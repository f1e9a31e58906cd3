"""Low-resource Dutch comparison: GBERT fine-tuning against the baseline Transformer.

    python scripts/dutch_low_resource.py DATA_DIR [--work runs/dutch] [--seeds 0 1 2]

DATA_DIR must hold the SIGMORPHON Dutch lexicons (files whose names contain
``train``, ``dev`` and ``test`` and end in ``.tsv``) and a word list
``words.txt`` for pretraining. Download them by hand; nothing here touches
the network. The training lexicon is cut to 1,000 records with data seed 0.
GBERT is pretrained once, on the word list minus every dev and test word,
and each seed then trains both G2P variants. Expect several CPU-hours.
"""

import argparse
import tempfile
from pathlib import Path

import numpy as np

from gbert_g2p import data as D
from gbert_g2p.checkpoint import load_checkpoint
from gbert_g2p.cli import main as cli
from gbert_g2p.evaluation import DecodeConfig
from gbert_g2p.models import g2p_from_checkpoint
from gbert_g2p.training import encode_entries, evaluate_split

MODEL = ["--layers", "6", "--d-model", "256", "--heads", "4", "--d-ffn", "1024"]
G2P_MODEL = ["--layers", "3", "--d-model", "256", "--heads", "4", "--d-ffn", "1024"]


def _find(root: Path, part: str) -> Path:
    hits = sorted(p for p in root.glob("*.tsv") if part in p.name)
    if len(hits) != 1:
        raise SystemExit(f"expected exactly one *{part}*.tsv in {root}, found {[p.name for p in hits]}")
    return hits[0]


def _run(cmd: list[str]) -> None:
    print("$ gbert-g2p " + " ".join(cmd), flush=True)
    if cli(cmd) != 0:
        raise SystemExit(f"step failed: {cmd[0]}")


def run(root: Path, seeds=(0, 1, 2), work: Path | None = None) -> dict[str, list[float]]:
    """Test WER (%) per seed for ``baseline`` and ``finetune``."""
    work = Path(work or tempfile.mkdtemp(prefix="dutch_"))
    data = work / "data"
    _run(["prepare-data", "--train", str(_find(root, "train")), "--valid", str(_find(root, "dev")),
          "--test", str(_find(root, "test")), "--out-dir", str(data), "--low-resource-n", "1000", "--seed", "0"])
    gbert = work / "gbert"
    if not (gbert / "gbert.ckpt").exists():
        _run(["pretrain", "--wordlist", str(root / "words.txt"), "--exclude", str(data / "valid.tsv"),
              "--exclude", str(data / "test.tsv"), *MODEL, "--seed", "0", "--out", str(gbert)])
    test = D.parse_lexicon_tsv(data / "test.tsv")
    results: dict[str, list[float]] = {"baseline": [], "finetune": []}
    for seed in seeds:
        for variant, extra in (("baseline", ["--lr-encoder", "5e-4"]),
                               ("finetune", ["--gbert", str(gbert / "gbert.ckpt"), "--lr-encoder", "1e-4"])):
            out = work / f"{variant}_seed{seed}"
            _run(["train", "--variant", variant, *extra, "--lr-decoder", "5e-4", "--data-dir", str(data),
                  "--train-file", "train_low.tsv", *G2P_MODEL, "--seed", str(seed), "--out", str(out)])
            model, gv, pv = g2p_from_checkpoint(load_checkpoint(out / "model.ckpt"))
            wer, _, _ = evaluate_split(model, encode_entries(test, gv, pv), pv, DecodeConfig())
            results[variant].append(wer)
            print(f"{variant} seed {seed}: test WER {wer:.2f}%", flush=True)
    return results


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("data_dir", type=Path)
    ap.add_argument("--work", type=Path, default=Path("runs/dutch"))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()
    results = run(args.data_dir, tuple(args.seeds), args.work)
    for variant, wers in results.items():
        std = f" ± {np.std(wers, ddof=1):.2f}" if len(wers) > 1 else ""
        print(f"{variant:<9} WER {np.mean(wers):.2f}{std}")


if __name__ == "__main__":
    main()
