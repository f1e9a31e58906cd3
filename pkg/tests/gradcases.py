"""Shared gradient-check cases: every autodiff op, and full layers at d_model=16, 2 heads."""

from __future__ import annotations

import numpy as np

from gbert_g2p import autodiff as ad
from gbert_g2p.autodiff import Tensor
from gbert_g2p.models import FusedDecoderLayer, FusedEncoderLayer
from gbert_g2p.rng import stream
from gbert_g2p.transformer import DecoderLayer, EncoderLayer, ModelConfig, target_mask


def leaf(rng, *shape, positive=False, scale=1.0):
    x = rng.normal(size=shape) * scale
    if positive:
        x = np.abs(x) + 0.5
    return Tensor(x, requires_grad=True)


def _project(y: Tensor, rng) -> Tensor:
    """Random linear functional of ``y`` so every output element matters."""
    return (y * Tensor(rng.normal(size=y.shape))).sum()


def op_case(name: str, seed: int):
    """Return ``(loss_fn, leaves)`` for one op at random float64 inputs."""
    rng = stream(seed, "op-case", sum(map(ord, name)))

    def project(y):
        return _project(y, stream(seed, "proj", sum(map(ord, name))))

    a, b = leaf(rng, 3, 4), leaf(rng, 3, 4)
    if name == "add_broadcast":
        c = leaf(rng, 4)
        return (lambda: project(a + c)), [("a", a), ("c", c)]
    if name == "sub":
        return (lambda: project(a - b)), [("a", a), ("b", b)]
    if name == "mul_broadcast":
        c = leaf(rng, 3, 1)
        return (lambda: project(a * c)), [("a", a), ("c", c)]
    if name == "div":
        d = leaf(rng, 3, 4, positive=True)
        return (lambda: project(a / d)), [("a", a), ("d", d)]
    if name == "pow":
        d = leaf(rng, 3, 4, positive=True)
        return (lambda: project(d ** 1.7)), [("d", d)]
    if name == "neg":
        return (lambda: project(-a)), [("a", a)]
    if name == "matmul_2d":
        w = leaf(rng, 4, 5)
        return (lambda: project(a @ w)), [("a", a), ("w", w)]
    if name == "matmul_shared_weight":
        x, w = leaf(rng, 2, 3, 4), leaf(rng, 4, 5)
        return (lambda: project(x @ w)), [("x", x), ("w", w)]
    if name == "matmul_batched":
        x, y = leaf(rng, 2, 3, 4), leaf(rng, 2, 4, 2)
        return (lambda: project(x @ y)), [("x", x), ("y", y)]
    if name == "exp":
        return (lambda: project(a.exp())), [("a", a)]
    if name == "log":
        d = leaf(rng, 3, 4, positive=True)
        return (lambda: project(d.log())), [("d", d)]
    if name == "relu":
        # keep inputs away from the kink so the stencil never straddles it
        x = rng.normal(size=(3, 4))
        x = np.where(np.abs(x) < 0.05, 0.3, x)
        t = Tensor(x, requires_grad=True)
        return (lambda: project(t.relu())), [("x", t)]
    if name == "sum_axis":
        return (lambda: project(a.sum(axis=1, keepdims=True))), [("a", a)]
    if name == "mean":
        return (lambda: project(a.mean(axis=0)) + a.mean() * 3.0), [("a", a)]
    if name == "reshape_transpose":
        x = leaf(rng, 2, 3, 4)
        return (lambda: project(x.reshape(2, 12).T)), [("x", x)]
    if name == "transpose_axes":
        x = leaf(rng, 2, 3, 4)
        return (lambda: project(x.transpose(0, 2, 1))), [("x", x)]
    if name == "getitem":
        x = leaf(rng, 4, 5)
        return (lambda: project(x[1:3, ::2])), [("x", x)]
    if name == "masked_fill":
        m = rng.random((3, 4)) < 0.3
        return (lambda: project(a.masked_fill(m, -5.0))), [("a", a)]
    if name == "softmax":
        return (lambda: project(ad.softmax(a))), [("a", a)]
    if name == "log_softmax":
        return (lambda: project(ad.log_softmax(a, axis=0))), [("a", a)]
    if name == "cross_entropy":
        x = leaf(rng, 5, 6)
        t = np.array([0, 3, -100, 5, 2])
        return (lambda: ad.cross_entropy(x, t, label_smoothing=0.1)), [("logits", x)]
    if name == "layer_norm":
        x, g, bb = leaf(rng, 2, 3, 6), leaf(rng, 6), leaf(rng, 6)
        return (lambda: project(ad.layer_norm(x, g, bb))), [("x", x), ("gain", g), ("bias", bb)]
    if name == "embedding":
        w = leaf(rng, 7, 4)
        ids = np.array([[1, 3, 3], [0, 6, 1]])
        return (lambda: project(ad.embedding(w, ids))), [("weight", w)]
    if name == "concat":
        x, y = leaf(rng, 2, 3), leaf(rng, 2, 5)
        return (lambda: project(ad.concat([x, y], axis=1))), [("x", x), ("y", y)]
    raise KeyError(name)


OPS = ["add_broadcast", "sub", "mul_broadcast", "div", "pow", "neg", "matmul_2d", "matmul_shared_weight",
       "matmul_batched", "exp", "log", "relu", "sum_axis", "mean", "reshape_transpose", "transpose_axes", "getitem",
       "masked_fill", "softmax", "log_softmax", "cross_entropy", "layer_norm", "embedding", "concat"]

LAYER_CFG = ModelConfig(num_encoder_layers=1, num_decoder_layers=1, gbert_layers=1, d_model=16, num_heads=2,
                        d_ffn=32, dropout_p=0.0, max_len=16)

LAYERS = ["encoder", "decoder", "fused_encoder", "fused_decoder"]


def layer_case(name: str, seed: int):
    rng = stream(seed, "layer-case", LAYERS.index(name))
    d = LAYER_CFG.d_model
    x = Tensor(rng.normal(size=(2, 5, d)), requires_grad=True)
    mem = Tensor(rng.normal(size=(2, 4, d)), requires_grad=True)
    h_b = Tensor(rng.normal(size=(2, 4, d)), requires_grad=True)
    w_dec, w_enc = rng.normal(size=(2, 5, d)), rng.normal(size=(2, 4, d))
    tgt_pad = np.ones((2, 5), bool)
    tgt_pad[1, 4] = False
    src_mask = np.ones((2, 4), bool)
    src_mask[0, 3] = False
    tm = target_mask(tgt_pad)
    if name == "encoder":
        m = EncoderLayer(LAYER_CFG, rng).astype(np.float64).eval()
        return (lambda: (m(mem, src_mask) * Tensor(w_enc)).sum()), [("x", mem), *m.named_parameters()]
    if name == "decoder":
        m = DecoderLayer(LAYER_CFG, rng).astype(np.float64).eval()
        return (lambda: (m(x, mem, tm, src_mask) * Tensor(w_dec)).sum()), [("s", x), ("memory", mem),
                                                                           *m.named_parameters()]
    if name == "fused_encoder":
        m = FusedEncoderLayer(LAYER_CFG, rng).astype(np.float64).eval()
        return (lambda: (m(mem, h_b, src_mask) * Tensor(w_enc)).sum()), [("x", mem), ("h_b", h_b),
                                                                         *m.named_parameters()]
    if name == "fused_decoder":
        m = FusedDecoderLayer(LAYER_CFG, rng).astype(np.float64).eval()
        return (lambda: (m(x, mem, h_b, tm, src_mask) * Tensor(w_dec)).sum()), [("s", x), ("memory", mem),
                                                                                ("h_b", h_b), *m.named_parameters()]
    raise KeyError(name)
