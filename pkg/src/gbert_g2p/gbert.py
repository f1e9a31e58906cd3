"""Grapheme encoder pretrained with masked grapheme prediction."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import rng as rngs
from .autodiff import Tensor, cross_entropy, dropout, no_grad
from .checkpoint import Checkpoint, CheckpointError, check_shapes
from .data import Vocabulary, attach_language_embedding_ids, build_word_vocab, split_wordlist
from .optim import Adam, clip_grad_norm
from .transformer import Embedding, EncoderLayer, LayerNorm, Linear, ModelConfig, Module, TokenEmbedding

logger = logging.getLogger(__name__)

IGNORE = -100


@dataclass
class PretrainConfig:
    mask_ratio: float = 0.20
    replace_mask: float = 0.8
    replace_random: float = 0.1
    keep_original: float = 0.1
    batch_size: int = 64
    max_steps: int = 20000
    eval_interval: int = 200
    patience: int = 10
    lr: float = 5e-4
    grad_clip_norm: float = 1.0
    valid_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError(f"mask_ratio must be in (0, 1), got {self.mask_ratio}")
        total = self.replace_mask + self.replace_random + self.keep_original
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"replacement probabilities sum to {total}, not 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


class GBERT(Module):
    """Bidirectional Transformer encoder over graphemes with an MLM output head.

    A per-language embedding is added to token and position embeddings; with a
    single language it is one constant vector.
    """

    def __init__(self, cfg: ModelConfig, vocab_size: int, num_languages: int, rng: np.random.Generator):
        self.cfg = cfg
        self.embed = TokenEmbedding(vocab_size, cfg, rng)
        self.lang = Embedding(max(1, num_languages), cfg.d_model, rng)
        self.emb_norm = LayerNorm(cfg.d_model)
        self.layers = [EncoderLayer(cfg, rng) for _ in range(cfg.gbert_layers)]
        self.head = Linear(cfg.d_model, vocab_size, rng)

    def embed_pre_norm(self, ids: np.ndarray, lang_ids: np.ndarray | None = None) -> Tensor:
        ids = np.asarray(ids)
        if lang_ids is None:
            lang_ids = np.zeros_like(ids)
        return self.embed(ids) + self.lang(lang_ids)

    def encode(self, ids, pad_mask, lang_ids=None, rng=None) -> Tensor:
        x = self.emb_norm(self.embed_pre_norm(ids, lang_ids))
        x = dropout(x, self.cfg.dropout_p, rng, self.training)
        for layer in self.layers:
            x = layer(x, pad_mask, rng)
        return x

    def __call__(self, ids, pad_mask, lang_ids=None, rng=None) -> Tensor:
        return self.head(self.encode(ids, pad_mask, lang_ids, rng))


# -- masking ------------------------------------------------------------------


@dataclass
class MaskedExample:
    input_ids: np.ndarray
    target_ids: np.ndarray
    masked_positions: np.ndarray
    lang_ids: np.ndarray = field(default=None)


def num_to_mask(length: int, ratio: float) -> int:
    """``max(1, round(ratio * length))`` with halves rounded up."""
    return max(1, int(math.floor(ratio * length + 0.5)))


def apply_masking(word: Sequence[int], cfg: PretrainConfig, rng: np.random.Generator, vocab: Vocabulary,
                  lang_ids: Sequence[int] | None = None) -> MaskedExample:
    """Corrupt a grapheme id sequence for masked prediction.

    Reserved tokens (language tags, padding) are never selected. Each selected
    position becomes the mask token, a uniformly drawn regular grapheme, or is
    left unchanged, with the configured 80/10/10 probabilities.
    """
    target = np.asarray(word, dtype=np.int64)
    if target.size == 0:
        raise ValueError("cannot mask an empty word")
    maskable = np.nonzero(~vocab.is_special(target))[0]
    if maskable.size == 0:
        raise ValueError("word has no maskable graphemes")
    n = num_to_mask(maskable.size, cfg.mask_ratio)
    positions = np.sort(rng.choice(maskable, size=n, replace=False))
    inputs = target.copy()
    regular = vocab.regular_ids()
    u = rng.random(n)
    for pos, draw in zip(positions, u):
        if draw < cfg.replace_mask:
            inputs[pos] = vocab.mask
        elif draw < cfg.replace_mask + cfg.replace_random:
            inputs[pos] = regular[rng.integers(len(regular))]
    lang = np.zeros_like(target) if lang_ids is None else np.asarray(lang_ids, dtype=np.int64)
    return MaskedExample(inputs, target, positions, lang)


@dataclass
class MaskedBatch:
    input_ids: np.ndarray
    targets: np.ndarray  # IGNORE outside masked positions
    lang_ids: np.ndarray
    pad_mask: np.ndarray


def collate_masked(examples: Sequence[MaskedExample], pad_id: int) -> MaskedBatch:
    t = max(len(e.input_ids) for e in examples)
    b = len(examples)
    ids = np.full((b, t), pad_id, dtype=np.int64)
    tgt = np.full((b, t), IGNORE, dtype=np.int64)
    lang = np.zeros((b, t), dtype=np.int64)
    for i, e in enumerate(examples):
        n = len(e.input_ids)
        ids[i, :n] = e.input_ids
        tgt[i, e.masked_positions] = e.target_ids[e.masked_positions]
        lang[i, :n] = e.lang_ids
    return MaskedBatch(ids, tgt, lang, ids != pad_id)


def mlm_loss(batch: MaskedBatch, model: Callable, rng=None) -> Tensor:
    """Cross-entropy over masked positions only."""
    logits = model(batch.input_ids, batch.pad_mask, batch.lang_ids, rng)
    return cross_entropy(logits, batch.targets, ignore_index=IGNORE)


def masked_accuracy(batch: MaskedBatch, model: Callable) -> float:
    with no_grad():
        logits = model(batch.input_ids, batch.pad_mask, batch.lang_ids, None).data
    sel = batch.targets != IGNORE
    return float(np.mean(logits.argmax(-1)[sel] == batch.targets[sel]))


# -- pretraining loop ---------------------------------------------------------


@dataclass
class PretrainResult:
    model: GBERT
    vocab: Vocabulary
    log: list[dict]
    best_step: int
    best_valid_loss: float
    best_masked_acc: float
    train_words: list
    valid_words: list

    def checkpoint(self, meta: dict | None = None) -> Checkpoint:
        return gbert_checkpoint(self.model, self.vocab, {
            "best_step": self.best_step, "valid_loss": self.best_valid_loss,
            "masked_acc": self.best_masked_acc, **(meta or {})})


def gbert_checkpoint(model: GBERT, vocab: Vocabulary, meta: dict) -> Checkpoint:
    return Checkpoint("gbert", {"model": model.cfg.to_dict(), "num_languages": model.lang.weight.shape[0]},
                      {"grapheme": vocab.to_dict()}, dict(model.state_dict()), meta)


def gbert_from_checkpoint(ckpt: Checkpoint) -> tuple[GBERT, Vocabulary]:
    if ckpt.kind != "gbert":
        raise CheckpointError(f"expected a GBERT checkpoint, got kind {ckpt.kind!r}")
    cfg = ModelConfig.from_dict(ckpt.config["model"])
    vocab = Vocabulary.from_dict(ckpt.vocabs["grapheme"])
    model = GBERT(cfg, len(vocab), ckpt.config["num_languages"], rngs.stream(0, "gbert-load"))
    check_shapes(model.state_dict(), ckpt.tensors)
    model.load_state_dict(ckpt.tensors)
    return model.eval(), vocab


def _encode_words(items, vocab):
    return [attach_language_embedding_ids(w, tag, vocab) for w, tag in items]


def _mask_all(encoded, cfg, rng, vocab):
    return [apply_masking(ids, cfg, rng, vocab, lang) for ids, lang in encoded]


def evaluate_mlm(model: GBERT, examples: list[MaskedExample], vocab: Vocabulary, batch_size: int) -> tuple[float, float]:
    """Token-weighted validation loss and masked accuracy."""
    model.eval()
    loss_sum = hits = total = 0.0
    with no_grad():
        for i in range(0, len(examples), batch_size):
            batch = collate_masked(examples[i:i + batch_size], vocab.pad)
            n = int((batch.targets != IGNORE).sum())
            loss_sum += mlm_loss(batch, model).item() * n
            hits += masked_accuracy(batch, model) * n
            total += n
    return loss_sum / total, hits / total


def pretrain(items: Sequence[tuple[str, str | None]], cfg: PretrainConfig, model_cfg: ModelConfig,
             languages: Sequence[str] = (), valid_items: Sequence | None = None,
             log_fn: Callable[[dict], None] | None = None) -> PretrainResult:
    """Pretrain a GBERT on ``(word, language_tag_or_None)`` items.

    Without ``valid_items`` the deduplicated list is split 90/10 with the run
    seed. The parameters with the lowest validation MLM loss are kept; training
    stops after ``cfg.patience`` evaluations without improvement.
    """
    items = list(dict.fromkeys(items))
    if valid_items is None:
        train_words, valid_words = split_wordlist([f"{t or ''}\t{w}" for w, t in items], cfg.seed, cfg.valid_fraction)
        unpack = lambda s: (s.split("\t", 1)[1], s.split("\t", 1)[0] or None)  # noqa: E731
        train_items = [unpack(s) for s in train_words]
        valid_items = [unpack(s) for s in valid_words]
    else:
        valid_set = set(valid_items)
        train_items = [it for it in items if it not in valid_set]
        valid_items = list(dict.fromkeys(valid_items))
    if len(train_items) < cfg.batch_size:
        raise ValueError(f"{len(train_items)} training words is smaller than one batch ({cfg.batch_size})")
    if not valid_items:
        raise ValueError("empty validation wordlist")

    vocab = build_word_vocab((w for w, _ in items), languages)
    model = GBERT(model_cfg, len(vocab), max(1, len(languages)), rngs.stream(cfg.seed, "gbert-init"))
    train_enc = _encode_words(train_items, vocab)
    valid_examples = _mask_all(_encode_words(valid_items, vocab), cfg, rngs.stream(cfg.seed, "valid-mask"), vocab)

    params = list(model.named_parameters())
    opt = Adam({"gbert": (params, cfg.lr)})
    mask_rng = rngs.stream(cfg.seed, "train-mask")
    drop_rng = rngs.stream(cfg.seed, "dropout")
    order_rng = rngs.stream(cfg.seed, "order")

    log: list[dict] = []
    best = (math.inf, 0.0, 0)
    best_state = {k: v.copy() for k, v in model.state_dict().items()}
    stale = 0
    order = order_rng.permutation(len(train_enc))
    cursor = 0
    running = []
    for step in range(1, cfg.max_steps + 1):
        if cursor + cfg.batch_size > len(order):
            order, cursor = order_rng.permutation(len(train_enc)), 0
        idx = order[cursor:cursor + cfg.batch_size]
        cursor += cfg.batch_size
        batch = collate_masked(_mask_all([train_enc[i] for i in idx], cfg, mask_rng, vocab), vocab.pad)
        model.train()
        opt.zero_grad()
        loss = mlm_loss(batch, model, drop_rng)
        loss.backward()
        clip_grad_norm(model.parameters(), cfg.grad_clip_norm)
        opt.step()
        running.append(loss.item())
        if step % cfg.eval_interval == 0 or step == cfg.max_steps:
            vloss, vacc = evaluate_mlm(model, valid_examples, vocab, cfg.batch_size)
            rec = {"step": step, "train_loss": float(np.mean(running)), "valid_loss": vloss, "masked_acc": vacc}
            running = []
            log.append(rec)
            if log_fn:
                log_fn(rec)
            if vloss < best[0]:
                best = (vloss, vacc, step)
                best_state = {k: v.copy() for k, v in model.state_dict().items()}
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    logger.info("early stop at step %d (best %d)", step, best[2])
                    break
    model.load_state_dict(best_state)
    model.eval()
    return PretrainResult(model, vocab, log, best[2], best[0], best[1],
                          [w for w, _ in train_items], [w for w, _ in valid_items])


def format_log_line(rec: dict) -> str:
    return f"{rec['step']}, {rec['train_loss']:.6f}, {rec['valid_loss']:.6f}, {rec['masked_acc']:.6f}"


def config_dict(cfg: PretrainConfig) -> dict:
    return asdict(cfg)
