"""Decoding (greedy / beam) and WER, PER, multi-seed aggregation."""

from __future__ import annotations

import logging
import math
import statistics
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tensor, log_softmax, no_grad

logger = logging.getLogger(__name__)


@dataclass
class DecodeConfig:
    strategy: str = "beam"
    beam_size: int = 5
    max_decode_len: int | None = None  # default: 2 * grapheme length + 5

    def __post_init__(self):
        if self.strategy not in ("greedy", "beam"):
            raise ValueError(f"unknown decoding strategy {self.strategy!r}")
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")

    def limit(self, src_len: int) -> int:
        return self.max_decode_len if self.max_decode_len is not None else 2 * src_len + 5


# -- metrics ------------------------------------------------------------------


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Unit-cost edit distance (insert, delete, substitute)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def wer(hyps: Sequence[Sequence], refs: Sequence[Sequence]) -> float:
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses for {len(refs)} references")
    if not refs:
        raise ValueError("empty evaluation set")
    wrong = sum(list(h) != list(r) for h, r in zip(hyps, refs))
    return 100.0 * wrong / len(refs)


def per(hyps: Sequence[Sequence], refs: Sequence[Sequence]) -> float:
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses for {len(refs)} references")
    total = sum(len(r) for r in refs)
    if total == 0:
        raise ValueError("total reference length is zero")
    return 100.0 * sum(levenshtein(h, r) for h, r in zip(hyps, refs)) / total


@dataclass
class EvalReport:
    wer: float
    per: float
    records: list[tuple[str, str, str, int]] = field(default_factory=list)
    seed: int | None = None
    truncated: int = 0

    @classmethod
    def from_predictions(cls, words: Sequence[str], refs: Sequence[Sequence[str]], hyps: Sequence[Sequence[str]],
                         seed: int | None = None, truncated: int = 0) -> EvalReport:
        records = [(w, " ".join(r), " ".join(h), levenshtein(h, r)) for w, r, h in zip(words, refs, hyps)]
        return cls(wer(hyps, refs), per(hyps, refs), records, seed, truncated)

    def to_lines(self) -> str:
        body = "".join(f"{w}\t{r}\t{h}\t{d}\n" for w, r, h, d in self.records)
        return body + f"# WER\t{self.wer:.2f}\n# PER\t{self.per:.2f}\n"

    def table(self) -> str:
        width = max([len(w) for w, *_ in self.records] + [4])
        rows = [f"{'word':<{width}}  {'dist':>4}  reference | hypothesis"]
        for w, r, h, d in self.records:
            mark = "" if d == 0 else "  *"
            rows.append(f"{w:<{width}}  {d:>4}  {r} | {h}{mark}")
        rows.append(f"WER {self.wer:.2f}%  PER {self.per:.2f}%  ({len(self.records)} words)")
        return "\n".join(rows)


@dataclass
class Aggregate:
    mean: float
    std: float | None
    n: int

    def __str__(self) -> str:
        return f"{self.mean:.2f}" if self.std is None else f"{self.mean:.2f} ± {self.std:.2f}"


def aggregate_seeds(values_or_reports) -> dict[str, Aggregate]:
    """Mean and sample standard deviation (n-1) per metric; std omitted for a single run."""
    items = list(values_or_reports)
    if not items:
        raise ValueError("nothing to aggregate")
    if isinstance(items[0], EvalReport):
        series = {"wer": [r.wer for r in items], "per": [r.per for r in items]}
    else:
        series = {"value": [float(v) for v in items]}
    out = {}
    for k, xs in series.items():
        std = statistics.stdev(xs) if len(xs) >= 2 else None
        out[k] = Aggregate(statistics.fmean(xs), std, len(xs))
    return out


# -- decoding -----------------------------------------------------------------


def _next_logprobs(model, memory: Tensor, h_b: Tensor | None, src_mask: np.ndarray,
                   prefixes: np.ndarray) -> np.ndarray:
    """Log-probabilities of the next token for each row of ``prefixes`` (float64)."""
    logits = model.decode(prefixes, memory, h_b, src_mask)
    return log_softmax(logits[:, -1, :]).data.astype(np.float64)


def _repeat(t: Tensor | None, n: int) -> Tensor | None:
    if t is None:
        return None
    return Tensor(np.repeat(t.data, n, axis=0)) if t.shape[0] != n else t


def greedy_decode(model, src_batch: np.ndarray, max_lens: Sequence[int]) -> tuple[list[list[int]], int]:
    """Batched argmax decoding; returns token lists (without BOS/EOS) and the truncation count."""
    model.eval()
    src_batch = np.asarray(src_batch)
    b = src_batch.shape[0]
    with no_grad():
        memory, h_b, src_mask = model.encode(src_batch)
        prefixes = np.full((b, 1), model.bos, dtype=np.int64)
        done = np.zeros(b, dtype=bool)
        out: list[list[int]] = [[] for _ in range(b)]
        for step in range(max(max_lens)):
            live = np.nonzero(~done)[0]
            if live.size == 0:
                break
            lp = _next_logprobs(model, _sub(memory, live), _sub(h_b, live), src_mask[live], prefixes[live])
            nxt = lp.argmax(-1)
            col = np.full(b, model.tgt_pad, dtype=np.int64)
            for row, tok in zip(live, nxt):
                if tok == model.eos:
                    done[row] = True
                else:
                    out[row].append(int(tok))
                    col[row] = tok
                    if len(out[row]) >= max_lens[row]:
                        done[row] = True
            prefixes = np.concatenate([prefixes, col[:, None]], axis=1)
    truncated = sum(len(o) >= m for o, m in zip(out, max_lens))
    return out, truncated


def _sub(t: Tensor | None, rows: np.ndarray) -> Tensor | None:
    return None if t is None else Tensor(t.data[rows])


def _rank(h: tuple[float, tuple[int, ...]]):
    score, toks = h
    return (-score, len(toks), toks)


def beam_search(model, src_ids: Sequence[int], beam_size: int, max_len: int) -> tuple[list[int], float, bool]:
    """Highest log-probability hypothesis found by beam search.

    Beams of every width ``1..beam_size`` run in lockstep sharing one batched
    decoder call per step, and the best completed hypothesis over all of them
    is returned. Each width's trajectory is independent of the others, so
    widening the beam never lowers the returned score, and width 1 is exactly
    greedy search. Ties go to the shorter hypothesis,
    then to the lexicographically smaller token ids.

    Returns ``(tokens, score, truncated)``.
    """
    model.eval()
    widths = list(range(1, beam_size + 1))
    with no_grad():
        memory, h_b, src_mask = model.encode(np.asarray(src_ids)[None])
        active = {w: [(0.0, ())] for w in widths}
        finished: list[tuple[float, tuple[int, ...], bool]] = []
        best_done = {w: -math.inf for w in widths}
        for step in range(max_len + 1):
            prefixes = sorted({toks for beam in active.values() for _, toks in beam})
            if not prefixes:
                break
            if step == max_len:
                # out of budget: live hypotheses end here, flagged as truncated
                for beam in active.values():
                    finished.extend((s, t, True) for s, t in beam)
                break
            rows = np.array([(model.bos, *p) for p in prefixes], dtype=np.int64)
            n = len(prefixes)
            lp = _next_logprobs(model, _repeat(memory, n), _repeat(h_b, n), np.repeat(src_mask, n, axis=0), rows)
            table = dict(zip(prefixes, lp))
            for w in widths:
                cands = []
                for score, toks in active[w]:
                    row = table[toks]
                    top = np.argsort(-row, kind="stable")[:w]
                    cands.extend((score + float(row[k]), toks + (int(k),)) for k in top)
                cands.sort(key=_rank)
                nxt = []
                for score, toks in cands[:w]:
                    if toks[-1] == model.eos:
                        finished.append((score, toks[:-1], False))
                        best_done[w] = max(best_done[w], score)
                    else:
                        nxt.append((score, toks))
                # log-probs only decrease: a live hypothesis at or below this width's best finished one is dead
                active[w] = [h for h in nxt if h[0] > best_done[w]]
    score, toks, trunc = min(finished, key=lambda f: _rank(f[:2]))
    return list(toks), score, trunc


def sequence_logprob(model, src_ids: Sequence[int], tokens: Sequence[int], close: bool = True) -> float:
    """Teacher-forced log-probability of ``tokens`` (plus EOS when ``close``)."""
    model.eval()
    tgt = [model.bos, *tokens]
    gold = list(tokens) + ([model.eos] if close else [])
    with no_grad():
        logits = model(np.asarray(src_ids)[None], np.asarray(tgt[: len(gold)])[None])
        lp = log_softmax(logits[0]).data.astype(np.float64)
    return float(sum(lp[i, t] for i, t in enumerate(gold)))


def decode(model, graphemes: Sequence[int], cfg: DecodeConfig | None = None) -> list[int]:
    cfg = cfg or DecodeConfig()
    limit = cfg.limit(len(graphemes))
    if cfg.strategy == "greedy" or cfg.beam_size == 1:
        (out,), truncated = greedy_decode(model, np.asarray(graphemes)[None], [limit])
        if truncated:
            logger.info("decode truncated at %d tokens", limit)
        return out
    toks, _, trunc = beam_search(model, graphemes, cfg.beam_size, limit)
    if trunc:
        logger.info("decode truncated at %d tokens", limit)
    return toks


def decode_many(model, sources: Sequence[Sequence[int]], cfg: DecodeConfig, pad_id: int,
                batch_size: int = 64) -> tuple[list[list[int]], int]:
    """Decode a list of grapheme id sequences; returns outputs and the truncation count."""
    outs: list[list[int]] = []
    truncated = 0
    if cfg.strategy == "greedy" or cfg.beam_size == 1:
        for i in range(0, len(sources), batch_size):
            chunk = sources[i:i + batch_size]
            width = max(len(s) for s in chunk)
            arr = np.full((len(chunk), width), pad_id, dtype=np.int64)
            for r, s in enumerate(chunk):
                arr[r, :len(s)] = s
            o, t = greedy_decode(model, arr, [cfg.limit(len(s)) for s in chunk])
            outs.extend(o)
            truncated += t
        return outs, truncated
    for s in sources:
        toks, _, trunc = beam_search(model, s, cfg.beam_size, cfg.limit(len(s)))
        outs.append(toks)
        truncated += trunc
    return outs, truncated
