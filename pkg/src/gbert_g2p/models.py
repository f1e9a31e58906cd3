"""Transformer G2P model and its GBERT variants (frozen, fine-tuned, attention-fused)."""

from __future__ import annotations

import enum

import numpy as np

from . import rng as rngs
from .autodiff import Tensor, dropout
from .checkpoint import Checkpoint, CheckpointError, check_shapes
from .data import DataError, Vocabulary
from .gbert import GBERT, gbert_from_checkpoint
from .transformer import (
    DecoderLayer,
    EncoderLayer,
    Linear,
    ModelConfig,
    Module,
    MultiHeadAttention,
    TokenEmbedding,
    padding_mask,
    target_mask,
)


class VariantKind(str, enum.Enum):
    BASELINE = "baseline"
    FROZEN = "frozen_gbert"
    FINETUNE = "finetune_gbert"
    FUSED = "gbert_fused"

    @classmethod
    def parse(cls, name: str) -> VariantKind:
        short = {"frozen": cls.FROZEN, "finetune": cls.FINETUNE, "fused": cls.FUSED}
        return short.get(name) or cls(name)


class VocabularyMismatchError(DataError):
    pass


def drop_net(a: Tensor, b: Tensor, training: bool, rate: float, rng: np.random.Generator | None,
             force: str | None = None) -> Tensor:
    """Combine two branches: at inference their average; in training, with
    probability ``rate/2`` each a single branch, otherwise the average.

    ``force`` ("a", "b" or "avg") overrides the routing, for analysis and tests.
    """
    if a.shape != b.shape:
        raise ValueError(f"drop-net branch shapes differ: {a.shape} vs {b.shape}")
    if force == "a":
        return a
    if force == "b":
        return b
    if force not in (None, "avg"):
        raise ValueError(f"unknown drop-net force {force!r}")
    if training and force is None and rate > 0:
        u = rng.random()
        if u < rate / 2:
            return a
        if u < rate:
            return b
    return (a + b) * 0.5


class FusedEncoderLayer(EncoderLayer):
    """Encoder layer with an extra attention onto GBERT output (GBERT-Enc)."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__(cfg, rng)
        self.gbert_attn = MultiHeadAttention(cfg.d_model, cfg.num_heads, rng)
        self.drop_net_rate = cfg.drop_net_rate
        self.force: str | None = None

    def branches(self, x: Tensor, h_b: Tensor, pad_mask: np.ndarray) -> tuple[Tensor, Tensor]:
        if h_b.shape[:2] != x.shape[:2]:
            raise ValueError(f"GBERT output {h_b.shape} does not align with encoder input {x.shape}")
        return self.attend(x, pad_mask), self.gbert_attn(x, h_b, h_b, pad_mask[:, None, :])

    def __call__(self, x: Tensor, h_b: Tensor, pad_mask: np.ndarray, rng=None) -> Tensor:
        a, b = self.branches(x, h_b, pad_mask)
        return self.finish(x, drop_net(a, b, self.training, self.drop_net_rate, rng, self.force), rng)


class FusedDecoderLayer(DecoderLayer):
    """Decoder layer whose encoder-decoder attention is drop-net combined with GBERT-Dec attention."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__(cfg, rng)
        self.gbert_attn = MultiHeadAttention(cfg.d_model, cfg.num_heads, rng)
        self.drop_net_rate = cfg.drop_net_rate
        self.force: str | None = None

    def __call__(self, s, enc_out, h_b, tgt_mask, src_mask, rng=None) -> Tensor:
        if h_b.shape[:2] != enc_out.shape[:2]:
            raise ValueError(f"GBERT output {h_b.shape} does not align with encoder output {enc_out.shape}")
        s = self.self_block(s, tgt_mask, rng)
        a = self.cross(s, enc_out, src_mask)
        b = self.gbert_attn(s, h_b, h_b, src_mask[:, None, :])
        return self.finish(s, drop_net(a, b, self.training, self.drop_net_rate, rng, self.force), rng)


class G2PModel(Module):
    def __init__(self, kind: VariantKind, cfg: ModelConfig, grapheme_vocab: Vocabulary,
                 phoneme_vocab: Vocabulary, rng: np.random.Generator, gbert: GBERT | None = None):
        self.kind = VariantKind(kind)
        self.cfg = cfg
        self.src_pad, self.src_unk, self.src_size = grapheme_vocab.pad, grapheme_vocab.unk, len(grapheme_vocab)
        self.tgt_pad, self.bos, self.eos = phoneme_vocab.pad, phoneme_vocab.bos, phoneme_vocab.eos
        tags = grapheme_vocab.language_tags
        self.lang_of_token = {grapheme_vocab.stoi[t]: i for i, t in enumerate(tags)}

        if self.kind is not VariantKind.BASELINE:
            if gbert is None:
                raise ValueError(f"variant {self.kind.value} needs a pretrained GBERT")
            self.gbert = gbert
            if gbert.cfg.d_model != cfg.d_model:
                self.bridge = Linear(gbert.cfg.d_model, cfg.d_model, rng)
        if self.kind in (VariantKind.BASELINE, VariantKind.FUSED):
            self.src_embed = TokenEmbedding(len(grapheme_vocab), cfg, rng)
            layer = FusedEncoderLayer if self.kind is VariantKind.FUSED else EncoderLayer
            self.encoder_layers = [layer(cfg, rng) for _ in range(cfg.num_encoder_layers)]
        self.tgt_embed = TokenEmbedding(len(phoneme_vocab), cfg, rng)
        layer = FusedDecoderLayer if self.kind is VariantKind.FUSED else DecoderLayer
        self.decoder_layers = [layer(cfg, rng) for _ in range(cfg.num_decoder_layers)]
        self.out_proj = Linear(cfg.d_model, len(phoneme_vocab), rng)

        if self.kind in (VariantKind.FROZEN, VariantKind.FUSED):
            self.gbert.set_trainable(False)
        elif self.kind is VariantKind.FINETUNE:
            self.gbert.set_trainable(True)

    @property
    def gbert_frozen(self) -> bool:
        return self.kind in (VariantKind.FROZEN, VariantKind.FUSED)

    def train(self, mode: bool = True) -> G2PModel:
        super().train(mode)
        if self.gbert_frozen:
            self.gbert.eval()
        return self

    def set_drop_net_force(self, force: str | None) -> None:
        for layer in getattr(self, "encoder_layers", []) + self.decoder_layers:
            if hasattr(layer, "force"):
                layer.force = force

    def param_groups(self) -> dict[str, list[tuple[str, Tensor]]]:
        """Exhaustive, disjoint split into the encoder group and the decoder group.

        For GBERT variants the encoder group is exactly the GBERT parameters;
        for the baseline it is the model's own source embedding and encoder.
        """
        enc_prefix = ("src_embed.", "encoder_layers.") if self.kind is VariantKind.BASELINE else ("gbert.",)
        groups: dict[str, list] = {"encoder": [], "decoder": []}
        for name, p in self.named_parameters():
            groups["encoder" if name.startswith(enc_prefix) else "decoder"].append((name, p))
        return groups

    # -- forward --------------------------------------------------------------

    def _clean_src(self, src_ids) -> np.ndarray:
        src = np.asarray(src_ids, dtype=np.int64)
        bad = ((src < 0) | (src >= self.src_size))
        return np.where(bad, self.src_unk, src) if bad.any() else src

    def _lang_ids(self, src: np.ndarray) -> np.ndarray:
        lang = np.zeros_like(src)
        if self.lang_of_token:
            first = src[:, 0]
            for row, tok in enumerate(first):
                lang[row, :] = self.lang_of_token.get(int(tok), 0)
        return lang

    def _gbert_states(self, src, src_mask, rng) -> Tensor:
        train_gbert = self.training and not self.gbert_frozen
        h = self.gbert.encode(src, src_mask, self._lang_ids(src), rng if train_gbert else None)
        if self.gbert_frozen:
            h = h.detach()
        return self.bridge(h) if hasattr(self, "bridge") else h

    def encode(self, src_ids, rng=None) -> tuple[Tensor, Tensor | None, np.ndarray]:
        """Returns (encoder memory, GBERT states for fusion or None, source mask)."""
        src = self._clean_src(src_ids)
        src_mask = padding_mask(src, self.src_pad)
        if self.kind in (VariantKind.FROZEN, VariantKind.FINETUNE):
            return self._gbert_states(src, src_mask, rng), None, src_mask
        h_b = self._gbert_states(src, src_mask, rng) if self.kind is VariantKind.FUSED else None
        x = dropout(self.src_embed(src), self.cfg.dropout_p, rng, self.training)
        for layer in self.encoder_layers:
            x = layer(x, h_b, src_mask, rng) if h_b is not None else layer(x, src_mask, rng)
        return x, h_b, src_mask

    def decode(self, tgt_in, memory: Tensor, h_b: Tensor | None, src_mask: np.ndarray, rng=None) -> Tensor:
        tgt = np.asarray(tgt_in, dtype=np.int64)
        tmask = target_mask(padding_mask(tgt, self.tgt_pad))
        s = dropout(self.tgt_embed(tgt), self.cfg.dropout_p, rng, self.training)
        for layer in self.decoder_layers:
            if h_b is not None:
                s = layer(s, memory, h_b, tmask, src_mask, rng)
            else:
                s = layer(s, memory, tmask, src_mask, rng)
        return self.out_proj(s)

    def __call__(self, src_ids, tgt_in, rng=None) -> Tensor:
        memory, h_b, src_mask = self.encode(src_ids, rng)
        return self.decode(tgt_in, memory, h_b, src_mask, rng)


def forward_g2p(model: G2PModel, grapheme_ids, target_prefix_ids) -> Tensor:
    """Logits ``[B, T, |phonemes|]`` (or ``[T, |phonemes|]`` for unbatched input)."""
    src = np.asarray(grapheme_ids)
    tgt = np.asarray(target_prefix_ids)
    single = src.ndim == 1
    if single:
        src, tgt = src[None], tgt[None]
    logits = model(src, tgt)
    return logits[0] if single else logits


def check_vocab_compat(vocab: Vocabulary, symbols) -> None:
    missing = sorted({s for s in symbols if s not in vocab})
    if missing:
        raise VocabularyMismatchError(f"{len(missing)} symbols absent from the model vocabulary: {missing[:10]}")


def build_variant(kind, model_cfg: ModelConfig, phoneme_vocab: Vocabulary, grapheme_vocab: Vocabulary | None = None,
                  gbert_checkpoint: Checkpoint | None = None, seed: int = 0,
                  zero_init_fusion: bool = False) -> G2PModel:
    """Construct a G2P model. GBERT variants take their grapheme vocabulary from the checkpoint.

    When ``grapheme_vocab`` is also given for a GBERT variant, every symbol in it
    must exist in the checkpoint's vocabulary.
    """
    kind = VariantKind.parse(kind) if isinstance(kind, str) else kind
    init = rngs.stream(seed, "g2p-init")
    if kind is VariantKind.BASELINE:
        if grapheme_vocab is None:
            raise ValueError("baseline needs a grapheme vocabulary")
        return G2PModel(kind, model_cfg, grapheme_vocab, phoneme_vocab, init)
    if gbert_checkpoint is None:
        raise ValueError(f"variant {kind.value} requires a GBERT checkpoint")
    gbert, gvocab = gbert_from_checkpoint(gbert_checkpoint)
    if grapheme_vocab is not None:
        regular = grapheme_vocab.itos[grapheme_vocab.num_reserved:]
        check_vocab_compat(gvocab, regular + grapheme_vocab.language_tags)
    model = G2PModel(kind, model_cfg, gvocab, phoneme_vocab, init, gbert)
    if zero_init_fusion and kind is VariantKind.FUSED:
        for layer in model.encoder_layers + model.decoder_layers:
            layer.gbert_attn.v_proj.weight.data[:] = 0
            layer.gbert_attn.v_proj.bias.data[:] = 0
            layer.gbert_attn.out_proj.bias.data[:] = 0
    return model


def g2p_checkpoint(model: G2PModel, grapheme_vocab: Vocabulary, phoneme_vocab: Vocabulary, meta: dict) -> Checkpoint:
    config = {"variant": model.kind.value, "model": model.cfg.to_dict()}
    if model.kind is not VariantKind.BASELINE:
        config["gbert_model"] = model.gbert.cfg.to_dict()
        config["num_languages"] = model.gbert.lang.weight.shape[0]
    return Checkpoint("g2p", config, {"grapheme": grapheme_vocab.to_dict(), "phoneme": phoneme_vocab.to_dict()},
                      dict(model.state_dict()), meta)


def g2p_from_checkpoint(ckpt: Checkpoint) -> tuple[G2PModel, Vocabulary, Vocabulary]:
    if ckpt.kind != "g2p":
        raise CheckpointError(f"expected a G2P checkpoint, got kind {ckpt.kind!r}")
    kind = VariantKind(ckpt.config["variant"])
    cfg = ModelConfig.from_dict(ckpt.config["model"])
    gv = Vocabulary.from_dict(ckpt.vocabs["grapheme"])
    pv = Vocabulary.from_dict(ckpt.vocabs["phoneme"])
    init = rngs.stream(0, "g2p-load")
    gbert = None
    if kind is not VariantKind.BASELINE:
        gbert = GBERT(ModelConfig.from_dict(ckpt.config["gbert_model"]), len(gv), ckpt.config["num_languages"], init)
    model = G2PModel(kind, cfg, gv, pv, init, gbert)
    check_shapes(model.state_dict(), ckpt.tensors)
    model.load_state_dict(ckpt.tensors)
    model.eval()
    return model, gv, pv

