"""Teacher-forced G2P training with two learning-rate groups and WER-based early stopping."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import rng as rngs
from .autodiff import cross_entropy, no_grad
from .data import DatasetSplit, LexiconEntry, Vocabulary
from .evaluation import DecodeConfig, decode_many, per, wer
from .gbert import IGNORE
from .models import G2PModel
from .optim import Adam, clip_grad_norm

logger = logging.getLogger(__name__)

LR_GRID = (1e-3, 5e-4, 3e-4, 1e-4, 1e-5)


@dataclass
class TrainConfig:
    lr_encoder: float = 5e-4
    lr_decoder: float = 5e-4
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    grad_clip_norm: float = 1.0
    label_smoothing: float = 0.1
    seed: int = 0
    max_steps: int | None = None

    def __post_init__(self):
        if self.lr_encoder <= 0 or self.lr_decoder <= 0:
            raise ValueError("learning rates must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EncodedSet:
    src: list[list[int]]
    tgt: list[list[int]]
    entries: list[LexiconEntry]


def encode_entries(entries: Sequence[LexiconEntry], gv: Vocabulary, pv: Vocabulary) -> EncodedSet:
    return EncodedSet([gv.encode(e.graphemes) for e in entries], [pv.encode(e.phonemes) for e in entries], list(entries))


def collate_g2p(src: Sequence[Sequence[int]], tgt: Sequence[Sequence[int]], src_pad: int, tgt_pad: int,
                bos: int, eos: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Padded source, decoder input ``[BOS] + y`` and decoder target ``y + [EOS]`` (IGNORE padded)."""
    b = len(src)
    s = max(len(x) for x in src)
    t = max(len(y) for y in tgt) + 1
    src_arr = np.full((b, s), src_pad, dtype=np.int64)
    tin = np.full((b, t), tgt_pad, dtype=np.int64)
    tout = np.full((b, t), IGNORE, dtype=np.int64)
    for i, (x, y) in enumerate(zip(src, tgt)):
        src_arr[i, :len(x)] = x
        tin[i, :len(y) + 1] = [bos, *y]
        tout[i, :len(y) + 1] = [*y, eos]
    return src_arr, tin, tout


def length_buckets(lengths: Sequence[int], batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Batches of similar source length, in shuffled order."""
    lengths = np.asarray(lengths)
    order = np.lexsort((rng.random(len(lengths)), lengths))
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


def teacher_forced_loss(model: G2PModel, src, tin, tout, label_smoothing: float, rng=None):
    logits = model(src, tin, rng)
    return cross_entropy(logits, tout, ignore_index=IGNORE, label_smoothing=label_smoothing)


def make_optimizer(model: G2PModel, cfg: TrainConfig) -> Adam:
    groups = model.param_groups()
    return Adam({"encoder": (groups["encoder"], cfg.lr_encoder), "decoder": (groups["decoder"], cfg.lr_decoder)})


def evaluate_split(model: G2PModel, data: EncodedSet, pv: Vocabulary, decode_cfg: DecodeConfig) -> tuple[float, float, list]:
    outs, _ = decode_many(model, data.src, decode_cfg, model.src_pad)
    hyps = [pv.decode(o) for o in outs]
    refs = [list(e.phonemes) for e in data.entries]
    return wer(hyps, refs), per(hyps, refs), hyps


@dataclass
class TrainResult:
    log: list[dict]
    best_epoch: int
    best_valid_wer: float
    best_valid_per: float
    steps: int
    best_state: dict = field(repr=False, default_factory=dict)


def train_g2p(model: G2PModel, split: DatasetSplit, cfg: TrainConfig, gv: Vocabulary, pv: Vocabulary,
              valid_decode: DecodeConfig | None = None,
              log_fn: Callable[[dict], None] | None = None) -> TrainResult:
    """Train in place; on return the model holds the parameters of the best-validation-WER epoch.

    Parameters in the encoder group (GBERT for the GBERT variants) use
    ``cfg.lr_encoder``; everything else uses ``cfg.lr_decoder``. Validation is
    greedy decoding after every epoch; ties in WER keep the earlier epoch.
    """
    if not split.train:
        raise ValueError("empty training split")
    if not split.valid:
        raise ValueError("empty validation split")
    valid_decode = valid_decode or DecodeConfig(strategy="greedy")
    train = encode_entries(split.train, gv, pv)
    valid = encode_entries(split.valid, gv, pv)
    opt = make_optimizer(model, cfg)
    trainable = [p for _, p in opt.trainable()]
    drop_rng = rngs.stream(cfg.seed, "g2p-dropout")
    log: list[dict] = []
    best = (math.inf, math.inf, 0)
    best_state = {k: v.copy() for k, v in model.state_dict().items()}
    stale = 0
    steps = 0
    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        losses = []
        for idx in length_buckets([len(s) for s in train.src], cfg.batch_size, rngs.stream(cfg.seed, "batches", epoch)):
            src, tin, tout = collate_g2p([train.src[i] for i in idx], [train.tgt[i] for i in idx],
                                         model.src_pad, model.tgt_pad, model.bos, model.eos)
            opt.zero_grad()
            loss = teacher_forced_loss(model, src, tin, tout, cfg.label_smoothing, drop_rng)
            loss.backward()
            clip_grad_norm(trainable, cfg.grad_clip_norm)
            opt.step()
            losses.append(loss.item())
            steps += 1
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                break
        model.eval()
        with no_grad():
            vwer, vper, _ = evaluate_split(model, valid, pv, valid_decode)
        rec = {"epoch": epoch, "train_loss": float(np.mean(losses)), "valid_wer": vwer, "valid_per": vper,
               "lr_encoder": cfg.lr_encoder, "lr_decoder": cfg.lr_decoder}
        log.append(rec)
        if log_fn:
            log_fn(rec)
        if vwer < best[0]:
            best = (vwer, vper, epoch)
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
            stale = 0
        else:
            stale += 1
        if stale >= cfg.patience or (cfg.max_steps is not None and steps >= cfg.max_steps):
            break
    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(log, best[2], best[0], best[1], steps, best_state)


def format_log_line(rec: dict) -> str:
    return (f"{rec['epoch']}, {rec['train_loss']:.6f}, {rec['valid_wer']:.4f}, {rec['valid_per']:.4f}, "
            f"{rec['lr_encoder']:g}, {rec['lr_decoder']:g}")
