"""A toy language with context-dependent pronunciation, for end-to-end checks.

Words are consonant-vowel syllables drawn from a sparse Markov chain (each
letter has two strongly preferred successors), so neighbouring letters carry
real information about a masked one. Pronunciation is letter-by-letter except
that ``c`` and ``g`` soften before a front vowel (``e``/``i``)::

    cela -> s ɛ l a      cola -> k o l a
    gira -> ʒ i r a      gato -> g a t o
"""

from __future__ import annotations

import numpy as np

from .data import LexiconEntry
from .rng import stream

CONSONANTS = "bcdgklmnprst"
VOWELS = "aeiou"
FRONT = set("ei")
PLAIN = {"a": "a", "e": "ɛ", "i": "i", "o": "o", "u": "u", "b": "b", "d": "d", "k": "k", "l": "l",
         "m": "m", "n": "n", "p": "p", "r": "r", "s": "s", "t": "t"}
SOFT = {"c": ("s", "k"), "g": ("ʒ", "g")}


def pronounce(word: str) -> list[str]:
    out = []
    for i, ch in enumerate(word):
        if ch in SOFT:
            nxt = word[i + 1] if i + 1 < len(word) else ""
            out.append(SOFT[ch][0] if nxt in FRONT else SOFT[ch][1])
        else:
            out.append(PLAIN[ch])
    return out


def _transitions(src: str, dst: str, rng: np.random.Generator, top=(0.7, 0.25)) -> dict[str, np.ndarray]:
    table = {}
    for ch in src:
        p = np.full(len(dst), (1.0 - sum(top)) / (len(dst) - 2))
        first, second = rng.choice(len(dst), size=2, replace=False)
        p[first], p[second] = top
        table[ch] = p
    return table


class ToyLanguage:
    def __init__(self, seed: int = 0):
        rng = stream(seed, "toy-language")
        self.cv = _transitions(CONSONANTS, VOWELS, rng)
        # make sure the softening rule is exercised both ways
        for ch, (front, back) in {"c": (1, 0), "g": (2, 3)}.items():
            p = np.full(len(VOWELS), 0.05 / 3)
            p[front], p[back] = 0.5, 0.45
            self.cv[ch] = p
        self.vc = _transitions(VOWELS, CONSONANTS, rng)

    def word(self, rng: np.random.Generator) -> str:
        syllables = int(rng.integers(2, 5))
        c = CONSONANTS[rng.integers(len(CONSONANTS))]
        out = []
        for k in range(syllables):
            v = VOWELS[rng.choice(len(VOWELS), p=self.cv[c])]
            out += [c, v]
            c = CONSONANTS[rng.choice(len(CONSONANTS), p=self.vc[v])]
        if rng.random() < 0.3:
            out.append(c)
        return "".join(out)

    def words(self, n: int, seed: int, exclude: set[str] = frozenset()) -> list[str]:
        """``n`` distinct words not in ``exclude``."""
        rng = stream(seed, "toy-words")
        seen: dict[str, None] = {}
        while len(seen) < n:
            w = self.word(rng)
            if w not in exclude:
                seen.setdefault(w, None)
        return list(seen)

    def lexicon(self, n: int, seed: int, exclude: set[str] = frozenset()) -> list[LexiconEntry]:
        return [LexiconEntry(tuple(w), tuple(pronounce(w))) for w in self.words(n, seed, exclude)]
