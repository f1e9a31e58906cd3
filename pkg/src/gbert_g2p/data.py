"""Lexicons, wordlists, vocabularies, Hangul jamo decomposition and splits."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .rng import stream

logger = logging.getLogger(__name__)

PAD, UNK, MASK, BOS, EOS = "<pad>", "<unk>", "<mask>", "<s>", "</s>"
SPECIALS = (PAD, UNK, MASK, BOS, EOS)


class DataError(ValueError):
    """Malformed input data (reported with a line number when available)."""


def language_token(tag: str) -> str:
    return f"<{tag}>"


@dataclass(frozen=True)
class LexiconEntry:
    graphemes: tuple[str, ...]
    phonemes: tuple[str, ...]
    language: str | None = None

    def __post_init__(self):
        if not self.graphemes or not self.phonemes:
            raise DataError(f"empty side in lexicon entry {self!r}")
        if any(not p or any(c.isspace() for c in p) for p in self.phonemes):
            raise DataError(f"phoneme symbol with whitespace in {self.phonemes!r}")

    @property
    def word(self) -> str:
        return "".join(self.graphemes)


# -- Hangul -------------------------------------------------------------------

HANGUL_BASE = 0xAC00
HANGUL_LAST = 0xD7A3
N_VOWELS, N_TAILS = 21, 28
N_PER_LEAD = N_VOWELS * N_TAILS  # 588

# compatibility jamo, in Unicode syllable index order
LEADS = "ㄱㄲㄴㄷㄸㄹㅁㅂㅃㅅㅆㅇㅈㅉㅊㅋㅌㅍㅎ"
VOWELS = "ㅏㅐㅑㅒㅓㅔㅕㅖㅗㅘㅙㅚㅛㅜㅝㅞㅟㅠㅡㅢㅣ"
TAILS = "\0ㄱㄲㄳㄴㄵㄶㄷㄹㄺㄻㄼㄽㄾㄿㅀㅁㅂㅄㅅㅆㅇㅈㅊㅋㅌㅍㅎ"


def decompose_hangul(word: str) -> list[str]:
    """Expand precomposed syllables into lead/vowel[/tail] compatibility jamo.

    >>> "".join(decompose_hangul("가감"))
    'ㄱㅏㄱㅏㅁ'
    """
    out: list[str] = []
    for ch in word:
        cp = ord(ch)
        if HANGUL_BASE <= cp <= HANGUL_LAST:
            index = cp - HANGUL_BASE
            out.append(LEADS[index // N_PER_LEAD])
            out.append(VOWELS[(index % N_PER_LEAD) // N_TAILS])
            tail = index % N_TAILS
            if tail:
                out.append(TAILS[tail])
        else:
            out.append(ch)
    return out


def compose_hangul(lead: str, vowel: str, tail: str | None = None) -> str:
    t = TAILS.index(tail) if tail else 0
    return chr(HANGUL_BASE + LEADS.index(lead) * N_PER_LEAD + VOWELS.index(vowel) * N_TAILS + t)


# -- files --------------------------------------------------------------------


def _lines(path) -> Iterable[tuple[int, str]]:
    with open(path, encoding="utf-8", newline=None) as f:
        for lineno, line in enumerate(f, 1):
            yield lineno, line.rstrip("\r\n")


def parse_lexicon_tsv(path, language: str | None = None, jamo: bool = False) -> list[LexiconEntry]:
    """Read ``word<TAB>ph ph ...[<TAB>lang]`` records; duplicate pairs are dropped with a warning.

    The optional third column carries a language tag for bilingual data.
    """
    entries: list[LexiconEntry] = []
    seen: set[tuple] = set()
    dupes = 0
    for lineno, line in _lines(path):
        if not line.strip():
            continue
        if "\t" not in line:
            raise DataError(f"{path}:{lineno}: missing TAB separator")
        fields = line.split("\t")
        if len(fields) > 3:
            raise DataError(f"{path}:{lineno}: expected 2 or 3 TAB-separated fields, got {len(fields)}")
        word, phonemes = fields[0].strip(), tuple(fields[1].split())
        lang = fields[2].strip() if len(fields) == 3 and fields[2].strip() else language
        if not word or not phonemes:
            raise DataError(f"{path}:{lineno}: empty word or pronunciation field")
        graphemes = tuple(decompose_hangul(word)) if jamo else tuple(word)
        entry = LexiconEntry(graphemes, phonemes, lang)
        key = (entry.graphemes, entry.phonemes)
        if key in seen:
            dupes += 1
            continue
        seen.add(key)
        entries.append(entry)
    if dupes:
        logger.warning("%s: dropped %d duplicate (word, pronunciation) records", path, dupes)
    return entries


def write_lexicon_tsv(entries: Iterable[LexiconEntry], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for e in entries:
            lang = f"\t{e.language}" if e.language else ""
            f.write(f"{e.word}\t{' '.join(e.phonemes)}{lang}\n")


def read_wordlist(path, jamo: bool = False) -> list[str]:
    """One word per line; blank lines and ``#`` comments skipped; order-preserving dedupe."""
    words: dict[str, None] = {}
    for _, line in _lines(path):
        w = line.strip()
        if not w or w.startswith("#"):
            continue
        if jamo:
            w = "".join(decompose_hangul(w))
        words.setdefault(w, None)
    return list(words)


def write_wordlist(words: Iterable[str], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for w in words:
            f.write(w + "\n")


def exclude_words(words: Sequence[str], entries: Iterable[LexiconEntry]) -> list[str]:
    """Drop every word that occurs in ``entries`` (validation/test lexicons)."""
    banned = {e.word for e in entries}
    return [w for w in words if w not in banned]


def split_wordlist(words: Sequence[str], seed: int, valid_fraction: float = 0.1) -> tuple[list[str], list[str]]:
    """Seeded disjoint train/valid partition of a deduplicated wordlist."""
    unique = sorted(set(words))
    order = stream(seed, "wordlist-split").permutation(len(unique))
    n_valid = max(1, int(round(valid_fraction * len(unique))))
    valid = [unique[i] for i in order[:n_valid]]
    train = [unique[i] for i in order[n_valid:]]
    return train, valid


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# -- vocabulary ---------------------------------------------------------------


class Vocabulary:
    """Token/id bijection; reserved tokens first, observed tokens sorted."""

    def __init__(self, tokens: Iterable[str], reserved: Sequence[str] = SPECIALS):
        reserved = list(reserved)
        observed = sorted(set(tokens) - set(reserved))
        self.itos: list[str] = reserved + observed
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        self.num_reserved = len(reserved)

    @classmethod
    def from_list(cls, itos: Sequence[str], num_reserved: int) -> Vocabulary:
        v = cls.__new__(cls)
        v.itos = list(itos)
        v.stoi = {t: i for i, t in enumerate(v.itos)}
        v.num_reserved = num_reserved
        return v

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos and self.num_reserved == other.num_reserved

    pad = property(lambda self: self.stoi[PAD])
    unk = property(lambda self: self.stoi[UNK])
    mask = property(lambda self: self.stoi[MASK])
    bos = property(lambda self: self.stoi[BOS])
    eos = property(lambda self: self.stoi[EOS])

    @property
    def language_tags(self) -> list[str]:
        return [t for t in self.itos[: self.num_reserved] if t not in SPECIALS]

    def language_id(self, tag: str) -> int:
        """Index of ``tag`` among the registered language tags."""
        tags = self.language_tags
        if language_token(tag) not in tags:
            raise DataError(f"language tag {tag!r} is not registered in the vocabulary")
        return tags.index(language_token(tag))

    def regular_ids(self) -> np.ndarray:
        """Ids of non-reserved tokens (candidates for random replacement)."""
        return np.arange(self.num_reserved, len(self.itos))

    def is_special(self, ids) -> np.ndarray:
        return np.asarray(ids) < self.num_reserved

    def encode(self, tokens: Iterable[str]) -> list[int]:
        unk = self.unk
        return [self.stoi.get(t, unk) for t in tokens]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip and i in (self.pad, self.bos, self.eos):
                continue
            out.append(self.itos[i] if 0 <= i < len(self.itos) else UNK)
        return out

    def to_dict(self) -> dict:
        return {"itos": self.itos, "num_reserved": self.num_reserved}

    @classmethod
    def from_dict(cls, d: dict) -> Vocabulary:
        return cls.from_list(d["itos"], d["num_reserved"])


def build_vocab(entries: Sequence[LexiconEntry], side: str = "grapheme", languages: Sequence[str] = ()) -> Vocabulary:
    if not entries:
        raise DataError("cannot build a vocabulary from zero entries")
    if side not in ("grapheme", "phoneme"):
        raise ValueError(f"side must be 'grapheme' or 'phoneme', got {side!r}")
    reserved = list(SPECIALS) + [language_token(t) for t in languages]
    pick = (lambda e: e.graphemes) if side == "grapheme" else (lambda e: e.phonemes)
    return Vocabulary((tok for e in entries for tok in pick(e)), reserved)


def build_word_vocab(words: Iterable[str], languages: Sequence[str] = ()) -> Vocabulary:
    reserved = list(SPECIALS) + [language_token(t) for t in languages]
    return Vocabulary((ch for w in words for ch in w), reserved)


# -- language tags ------------------------------------------------------------


def prefix_language_tag(entry: LexiconEntry, tag: str, vocab: Vocabulary | None = None) -> LexiconEntry:
    tok = language_token(tag)
    if vocab is not None and tok not in vocab:
        raise DataError(f"language tag {tag!r} is not registered in the vocabulary")
    return LexiconEntry((tok, *entry.graphemes), entry.phonemes, tag)


def attach_language_embedding_ids(word: Sequence[str], tag: str | None, vocab: Vocabulary) -> tuple[list[int], list[int]]:
    """Token ids (tag-prefixed when ``tag`` is given) and per-token language ids.

    Without a tag every token gets language id 0, which is the single-language
    case of the same embedding table.
    """
    if tag is None:
        ids = vocab.encode(word)
        return ids, [0] * len(ids)
    lang = vocab.language_id(tag)
    ids = [vocab.stoi[language_token(tag)]] + vocab.encode(word)
    return ids, [lang] * len(ids)


# -- splits -------------------------------------------------------------------


@dataclass
class DatasetSplit:
    train: list[LexiconEntry]
    valid: list[LexiconEntry]
    test: list[LexiconEntry]
    provenance: dict = field(default_factory=dict)

    def check_disjoint(self) -> None:
        sets = [{(e.graphemes, e.phonemes) for e in part} for part in (self.train, self.valid, self.test)]
        for i in range(3):
            for j in range(i + 1, 3):
                if sets[i] & sets[j]:
                    raise DataError("dataset splits overlap")


def split_lexicon(entries: Sequence[LexiconEntry], seed: int, ratios=(8, 1, 1)) -> DatasetSplit:
    """Seeded split by word, so all pronunciations of a word land in one part."""
    words = sorted({e.graphemes for e in entries})
    order = stream(seed, "lexicon-split").permutation(len(words))
    total = sum(ratios)
    n_train = int(round(len(words) * ratios[0] / total))
    n_valid = int(round(len(words) * ratios[1] / total))
    part = {}
    for rank, i in enumerate(order):
        part[words[i]] = 0 if rank < n_train else 1 if rank < n_train + n_valid else 2
    buckets: list[list[LexiconEntry]] = [[], [], []]
    for e in entries:
        buckets[part[e.graphemes]].append(e)
    split = DatasetSplit(*buckets, provenance={"seed": seed, "rule": f"by-word {ratios}"})
    split.check_disjoint()
    return split


def make_low_resource_split(full: DatasetSplit | Sequence[LexiconEntry], n: int, seed: int) -> DatasetSplit:
    """Uniform sample of ``n`` training records without replacement; valid/test untouched."""
    if isinstance(full, DatasetSplit):
        train, valid, test, prov = full.train, full.valid, full.test, dict(full.provenance)
    else:
        train, valid, test, prov = list(full), [], [], {}
    if n > len(train):
        raise DataError(f"cannot sample {n} records from {len(train)} training records")
    if n < 1:
        raise DataError("low-resource size must be positive")
    idx = np.sort(stream(seed, "low-resource").choice(len(train), size=n, replace=False))
    prov.update({"low_resource_n": n, "low_resource_seed": seed, "rule": "uniform without replacement"})
    return DatasetSplit([train[i] for i in idx], list(valid), list(test), prov)


def write_manifest(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
