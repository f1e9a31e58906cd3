"""Character-level Transformer building blocks (post-norm, ReLU feed-forward)."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from .autodiff import Tensor, dropout, embedding, layer_norm, matmul, softmax


@dataclass
class ModelConfig:
    num_encoder_layers: int = 4
    num_decoder_layers: int = 4
    gbert_layers: int = 6
    d_model: int = 256
    num_heads: int = 4
    d_ffn: int = 1024
    dropout_p: float = 0.1
    max_len: int = 64
    drop_net_rate: float = 1.0

    def __post_init__(self):
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by num_heads={self.num_heads}")
        if self.d_model % 2:
            raise ValueError("d_model must be even for sinusoidal positions")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p={self.dropout_p} outside [0, 1)")
        if not 0.0 <= self.drop_net_rate <= 1.0:
            raise ValueError(f"drop_net_rate={self.drop_net_rate} outside [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


class Module:
    """Parameter container. Every ``Tensor`` attribute is a parameter."""

    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, list) and value and isinstance(value[0], Module):
                for i, m in enumerate(value):
                    yield from m.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator[Module]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, list) and value and isinstance(value[0], Module):
                for m in value:
                    yield from m.modules()

    def train(self, mode: bool = True) -> Module:
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = own.keys() - state.keys()
            unexpected = state.keys() - own.keys()
            if missing or unexpected:
                raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            if name not in state:
                continue
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: checkpoint {arr.shape} vs model {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def astype(self, dtype) -> Module:
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        for m in self.modules():
            for k, v in vars(m).items():
                if isinstance(v, np.ndarray) and v.dtype.kind == "f":
                    setattr(m, k, v.astype(dtype))
        return self


def _param(data: np.ndarray) -> Tensor:
    return Tensor(data.astype(np.float32), requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        limit = math.sqrt(6.0 / (d_in + d_out))
        self.weight = _param(rng.uniform(-limit, limit, size=(d_in, d_out)))
        if bias:
            self.bias = _param(np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        return y + self.bias if hasattr(self, "bias") else y


class Embedding(Module):
    def __init__(self, num: int, dim: int, rng: np.random.Generator):
        self.weight = _param(rng.normal(0.0, dim**-0.5, size=(num, dim)))

    def __call__(self, ids) -> Tensor:
        return embedding(self.weight, ids)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = _param(np.ones(dim))
        self.bias = _param(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


class FeedForward(Module):
    def __init__(self, d_model: int, d_ffn: int, rng: np.random.Generator):
        self.lin1 = Linear(d_model, d_ffn, rng)
        self.lin2 = Linear(d_ffn, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(self.lin1(x).relu())


def sinusoidal_positions(max_len: int, d_model: int) -> np.ndarray:
    """``[max_len, d_model]`` table; even columns sin, odd columns cos."""
    if d_model % 2:
        raise ValueError(f"sinusoidal positions need an even d_model, got {d_model}")
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    freq = np.power(10000.0, -np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    table = np.zeros((max_len, d_model))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return table.astype(np.float32)


def padding_mask(ids: np.ndarray, pad_id: int) -> np.ndarray:
    """``[B, T]`` boolean, true at real tokens."""
    return np.asarray(ids) != pad_id


def causal_mask(length: int) -> np.ndarray:
    """Lower-triangular ``[T, T]`` boolean; query i may attend keys 0..i."""
    return np.tril(np.ones((length, length), dtype=bool))


class MaskError(ValueError):
    pass


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, num_heads: int, rng: np.random.Generator):
        self.num_heads = num_heads
        self.q_proj = Linear(d_model, d_model, rng)
        self.k_proj = Linear(d_model, d_model, rng)
        self.v_proj = Linear(d_model, d_model, rng)
        self.out_proj = Linear(d_model, d_model, rng)

    def __call__(self, query: Tensor, key: Tensor, value: Tensor, mask: np.ndarray | None = None,
                 return_weights: bool = False):
        """``mask`` broadcasts to ``[B, Tq, Tk]``; true = attention allowed."""
        b, tq, d = query.shape
        tk = key.shape[1]
        h = self.num_heads
        dh = d // h
        if key.shape[-1] != d or value.shape[-1] != d:
            raise ValueError(f"attention width mismatch: q {query.shape}, k {key.shape}, v {value.shape}")
        q = self.q_proj(query).reshape(b, tq, h, dh).transpose(0, 2, 1, 3)
        k = self.k_proj(key).reshape(b, tk, h, dh).transpose(0, 2, 3, 1)
        v = self.v_proj(value).reshape(b, tk, h, dh).transpose(0, 2, 1, 3)
        scores = matmul(q, k) * (1.0 / math.sqrt(dh))
        if mask is not None:
            mask = np.broadcast_to(mask, (b, tq, tk))
            if not mask.any(axis=-1).all():
                raise MaskError("a query row has every key masked")
            scores = scores.masked_fill(~mask[:, None, :, :], -np.inf)
        weights = softmax(scores, axis=-1)
        ctx = matmul(weights, v).transpose(0, 2, 1, 3).reshape(b, tq, d)
        out = self.out_proj(ctx)
        return (out, weights.data) if return_weights else out


class EncoderLayer(Module):
    """Self-attention and feed-forward sub-layers, each ``norm(x + dropout(sub(x)))``."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.p = cfg.dropout_p
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.num_heads, rng)
        self.norm1 = LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ffn, rng)
        self.norm2 = LayerNorm(cfg.d_model)

    def attend(self, x: Tensor, pad_mask: np.ndarray) -> Tensor:
        return self.self_attn(x, x, x, pad_mask[:, None, :])

    def finish(self, x: Tensor, attended: Tensor, rng) -> Tensor:
        x = self.norm1(x + dropout(attended, self.p, rng, self.training))
        return self.norm2(x + dropout(self.ffn(x), self.p, rng, self.training))

    def __call__(self, x: Tensor, pad_mask: np.ndarray, rng=None) -> Tensor:
        return self.finish(x, self.attend(x, pad_mask), rng)


class DecoderLayer(Module):
    """Causal self-attention, encoder-decoder attention, feed-forward."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.p = cfg.dropout_p
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.num_heads, rng)
        self.norm1 = LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.num_heads, rng)
        self.norm2 = LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ffn, rng)
        self.norm3 = LayerNorm(cfg.d_model)

    def self_block(self, s: Tensor, tgt_mask: np.ndarray, rng) -> Tensor:
        return self.norm1(s + dropout(self.self_attn(s, s, s, tgt_mask), self.p, rng, self.training))

    def cross(self, s: Tensor, enc_out: Tensor, src_mask: np.ndarray) -> Tensor:
        return self.cross_attn(s, enc_out, enc_out, src_mask[:, None, :])

    def finish(self, s: Tensor, attended: Tensor, rng) -> Tensor:
        s = self.norm2(s + dropout(attended, self.p, rng, self.training))
        return self.norm3(s + dropout(self.ffn(s), self.p, rng, self.training))

    def __call__(self, s: Tensor, enc_out: Tensor, tgt_mask: np.ndarray, src_mask: np.ndarray, rng=None) -> Tensor:
        """``tgt_mask`` is ``[B, T, T]`` (causal and target padding); ``src_mask`` is ``[B, S]``."""
        s = self.self_block(s, tgt_mask, rng)
        return self.finish(s, self.cross(s, enc_out, src_mask), rng)


def target_mask(tgt_pad: np.ndarray) -> np.ndarray:
    """Causal mask combined with key padding, ``[B, T, T]``."""
    t = tgt_pad.shape[1]
    return causal_mask(t)[None, :, :] & tgt_pad[:, None, :]


class TokenEmbedding(Module):
    """Scaled token embedding plus fixed sinusoidal positions."""

    def __init__(self, vocab_size: int, cfg: ModelConfig, rng: np.random.Generator):
        self.tokens = Embedding(vocab_size, cfg.d_model, rng)
        self.positions = sinusoidal_positions(cfg.max_len, cfg.d_model)
        self.scale = math.sqrt(cfg.d_model)
        self.vocab_size = vocab_size

    def __call__(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids)
        if ids.shape[1] > self.positions.shape[0]:
            raise ValueError(f"sequence length {ids.shape[1]} exceeds max_len {self.positions.shape[0]}")
        return self.tokens(ids) * self.scale + Tensor(self.positions[: ids.shape[1]])
