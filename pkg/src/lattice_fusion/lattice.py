"""Segmentation lattices: every way to split a character string into words.

State ``i`` sits after the first ``i`` characters; an arc ``i -> j`` carries
the word ``chars[i:j]`` with weight 0 whenever that word is in the
vocabulary. Characters are Unicode code points, so ``len`` and slicing on
``str`` give lattice positions directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import FrozenSet, Iterable, List, Optional, Tuple

from .ngram import SymbolTable
from .wfsa import Arc, Wfsa


class CoverageError(ValueError):
    """No segmentation reaches the end of the string."""

    def __init__(self, char: str, position: int, text: str = ""):
        self.char = char
        self.position = position
        self.text = text
        super().__init__(f"no vocabulary word covers character {char!r} at position {position}")


@dataclass(frozen=True)
class Vocabulary:
    words: FrozenSet[str]
    max_word_len: int
    char_cover: FrozenSet[str]
    symbols: SymbolTable = field(compare=False, repr=False)

    @classmethod
    def from_words(cls, words: Iterable[str]) -> "Vocabulary":
        ws = frozenset(w for w in words if w)
        if not ws:
            raise ValueError("vocabulary is empty")
        return cls(
            words=ws,
            max_word_len=max(len(w) for w in ws),
            char_cover=frozenset(w for w in ws if len(w) == 1),
            symbols=SymbolTable(sorted(ws)),
        )

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "Vocabulary":
        """One word per line; blank lines and ``#`` comments are skipped."""
        words = []
        for line in lines:
            line = line.strip()
            if line and not line.startswith("#"):
                words.append(line)
        return cls.from_words(words)

    @classmethod
    def from_file(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            text = f.read()
        if text.startswith("﻿"):
            raise ValueError(f"{path}: UTF-8 byte-order mark not allowed")
        return cls.from_lines(text.splitlines())

    def __contains__(self, word: object) -> bool:
        return word in self.words

    def __len__(self) -> int:
        return len(self.words)

    def uncovered(self, chars: Iterable[str]) -> List[str]:
        """Characters that are not single-character words."""
        return sorted({c for c in chars if c not in self.char_cover})

    def is_decoder_compatible(self, tokens: Iterable[str]) -> bool:
        return not self.uncovered(c for tok in tokens for c in tok)


@dataclass(frozen=True)
class SegmentationLattice:
    chars: str
    vocab: Vocabulary
    arcs: Tuple[Tuple[int, int, str], ...]

    @property
    def num_states(self) -> int:
        return len(self.chars) + 1

    @property
    def final_state(self) -> int:
        return len(self.chars)

    @cached_property
    def fsa(self) -> Wfsa:
        sym = self.vocab.symbols
        arcs = tuple(Arc(s, d, sym.id(w), 0.0) for s, d, w in self.arcs)
        return Wfsa(self.num_states, arcs, 0, ((self.final_state, 0.0),), sym)

    def reachable(self) -> List[bool]:
        seen = [False] * self.num_states
        seen[0] = True
        for s, d, _ in self.arcs:  # arcs are sorted by destination
            if seen[s]:
                seen[d] = True
        return seen

    def first_gap(self) -> Optional[int]:
        """Index of the first character no segmentation can get past, or None
        when the final state is reachable."""
        seen = self.reachable()
        if seen[-1]:
            return None
        return max(i for i, ok in enumerate(seen) if ok)


def _arcs_ending_at(chars: str, end: int, vocab: Vocabulary) -> List[Tuple[int, int, str]]:
    arcs = []
    words = vocab.words
    for r in range(min(vocab.max_word_len, end), 0, -1):
        word = chars[end - r:end]
        if word in words:
            arcs.append((end - r, end, word))
    return arcs


def build_lattice(chars: str, vocab: Vocabulary, strict: bool = True) -> SegmentationLattice:
    """Lattice of all segmentations of ``chars`` into ``vocab`` words.

    The arc set is ``{(s-1, s+r-1, chars[s-1:s+r-1]) : 1 <= r <= l,
    1 <= s <= m-r+1}`` restricted to vocabulary words, ordered by
    (destination, source). The upper bound on ``s`` includes words that end
    on the last character.

    With ``strict`` an unreachable final state raises CoverageError naming
    the first character no segmentation can cross.
    """
    if not chars:
        raise ValueError("cannot build a lattice for an empty string")
    arcs: List[Tuple[int, int, str]] = []
    for end in range(1, len(chars) + 1):
        arcs.extend(_arcs_ending_at(chars, end, vocab))
    lat = SegmentationLattice(chars, vocab, tuple(arcs))
    if strict:
        gap = lat.first_gap()
        if gap is not None:
            raise CoverageError(chars[gap], gap, chars)
    return lat


def empty_lattice(vocab: Vocabulary) -> SegmentationLattice:
    return SegmentationLattice("", vocab, ())


def extend_lattice(lat: SegmentationLattice, c: str) -> SegmentationLattice:
    """Append one character. Only arcs into the new final state are added;
    ``lat`` itself is untouched."""
    if len(c) != 1:
        raise ValueError(f"extend_lattice takes one character, got {c!r}")
    chars = lat.chars + c
    return SegmentationLattice(chars, lat.vocab, lat.arcs + tuple(_arcs_ending_at(chars, len(chars), lat.vocab)))


def segment_longest_match(text: str, vocab: Vocabulary) -> List[str]:
    """Greedy left-to-right longest-match segmentation."""
    out = []
    i = 0
    words = vocab.words
    while i < len(text):
        for r in range(min(vocab.max_word_len, len(text) - i), 0, -1):
            if text[i:i + r] in words:
                out.append(text[i:i + r])
                i += r
                break
        else:
            raise CoverageError(text[i], i, text)
    return out
