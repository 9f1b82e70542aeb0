"""Character-sequence scoring with a word N-gram model.

:class:`WordLatticeScorer` computes ``log P(chars)`` as the forward score of
the segmentation lattice composed with the LM, and incrementally as a chain
of per-character posteriors ``log P(C_1^m) - log P(C_1^{m-1})``.

The incremental state keeps, for the last ``l`` lattice positions (``l`` is
the longest vocabulary word), a map from LM state to forward weight. A new
character only touches words ending at it, so each step costs
``O(l * frontier width)`` regardless of prefix length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Tuple

from .lattice import Vocabulary, build_lattice
from .ngram import BOS, EOS, UNK, NGramModel, OovError
from .wfsa import (
    NEG_INF,
    Semiring,
    add_epsilon_self_loops,
    compose_explicit,
    forward_score,
    get_semiring,
    intersect_with_lm,
    lm_to_fsa,
)

PRUNE_MIN_ENTRIES = 2000
PRUNE_BEAM = 30.0

Frontier = Dict[int, float]


def posterior(new: float, old: float) -> float:
    """``new - old`` with the infinities a beam search expects: an
    unreachable child is -inf, a reachable child of an unreachable parent is
    +inf."""
    if new == NEG_INF:
        return NEG_INF
    if old == NEG_INF:
        return math.inf
    return new - old


@dataclass(frozen=True)
class PrefixScorerState:
    """Scoring state after ``length`` characters.

    ``frontier`` holds the maps for positions ``length - len(frontier) + 1
    .. length``; the last one is the current position. Maps are never
    mutated once built, so states can be shared between beam branches.
    """

    length: int
    window: str
    frontier: Tuple[Frontier, ...]
    score: float

    @property
    def dead(self) -> bool:
        return not self.frontier[-1]

    @property
    def width(self) -> int:
        return len(self.frontier[-1])


class WordLatticeScorer:
    """Scores character sequences against a word N-gram model.

    Parameters
    ----------
    model : NGramModel
        Word-level backoff LM.
    vocab : Vocabulary
        Segmentation vocabulary; defaults to the model's listed words.
    semiring : {"log", "tropical"}
        How segmentations are combined.
    bos, eos : bool
        Condition the first word on ``<s>`` / add ``P(</s> | context)`` at
        :meth:`finalize`.
    oov : {"unk", "error"}
        Vocabulary words the LM does not list map to ``<unk>`` or raise.
    prune : bool
        Drop frontier entries more than 30 nats below the best once a map
        holds over 2000 entries. Off by default; pruning breaks exactness.
    explicit_backoff : bool
        Batch scoring materialises the LM with epsilon backoff arcs and
        intersects against a self-looped lattice instead of querying the LM.
        Incremental scoring is unaffected.
    """

    def __init__(self, model: NGramModel, vocab: Optional[Vocabulary] = None, semiring="log",
                 bos: bool = True, eos: bool = False, oov: str = "unk", prune: bool = False,
                 explicit_backoff: bool = False):
        if oov not in ("unk", "error"):
            raise ValueError(f"unknown oov policy {oov!r}")
        self.model = model
        self.vocab = vocab if vocab is not None else vocab_from_model(model)
        self.semiring: Semiring = get_semiring(semiring)
        self.bos = bos
        self.eos = eos
        self.oov = oov
        self.prune = prune
        self.explicit_backoff = explicit_backoff
        self.max_word_len = self.vocab.max_word_len
        self._word_ids: Dict[str, Optional[int]] = {}
        for w in self.vocab.words:
            try:
                self._word_ids[w] = model.word_id(w, oov)
            except OovError:
                self._word_ids[w] = None
        self._g = None

    def __repr__(self) -> str:
        return (f"WordLatticeScorer(semiring={self.semiring.name}, bos={self.bos}, eos={self.eos}, "
                f"oov={self.oov}, l={self.max_word_len}, |V|={len(self.vocab)})")

    # -- batch -------------------------------------------------------------

    def score_sequence(self, chars: str) -> float:
        """``log P(chars)`` via the lattice/LM product, including the
        end-of-sentence term when ``eos`` is set."""
        if not chars:
            return self.finalize(self.init_state())
        lattice = build_lattice(chars, self.vocab, strict=False)
        if self.explicit_backoff:
            if self._g is None:
                self._g = lm_to_fsa(self.model, self.bos, self.eos)
            qg = compose_explicit(add_epsilon_self_loops(lattice.fsa), self._g, self.oov, self.model)
        else:
            qg = intersect_with_lm(lattice.fsa, self.model, self.bos, self.eos, self.oov)
        return forward_score(qg, self.semiring)

    # -- incremental ---------------------------------------------------------

    def init_state(self) -> PrefixScorerState:
        return PrefixScorerState(0, "", ({self.model.start_state(self.bos): 0.0},), 0.0)

    def advance(self, state: PrefixScorerState, c: str) -> Tuple[PrefixScorerState, float]:
        """Append character ``c``; return the new state and its posterior."""
        if len(c) != 1:
            raise ValueError(f"advance takes one character, got {c!r}")
        l = self.max_word_len
        text = state.window + c
        frontier = state.frontier
        n_pos = len(frontier)
        plus = self.semiring.plus
        lm_advance = self.model.lm_advance
        new: Frontier = {}
        for r in range(1, min(l, n_pos) + 1):
            word = text[-r:]
            if word not in self._word_ids:
                continue
            wid = self._word_ids[word]
            if wid is None:
                raise OovError(word)
            for lms, w in frontier[n_pos - r].items():
                ns, lp = lm_advance(lms, wid)
                v = w + lp
                old = new.get(ns)
                new[ns] = v if old is None else plus(old, v)
        if self.prune and len(new) > PRUNE_MIN_ENTRIES:
            cut = max(new.values()) - PRUNE_BEAM
            new = {k: v for k, v in new.items() if v >= cut}
        raw = self.semiring.sum(new.values())
        post = posterior(raw, state.score)
        # running sum of posteriors, so the chain telescopes bit-exactly
        if post == NEG_INF or state.score == NEG_INF:
            score = raw
        else:
            score = state.score + post
        kept = frontier[1:] if n_pos == l else frontier
        child = PrefixScorerState(
            state.length + 1,
            text[1:] if len(text) == l else text,
            kept + (new,),
            score,
        )
        return child, post

    def advance_text(self, state: PrefixScorerState, text: str) -> Tuple[PrefixScorerState, float]:
        """Append a multi-character token one character at a time."""
        total = 0.0
        for c in text:
            state, post = self.advance(state, c)
            total = NEG_INF if post == NEG_INF or total == NEG_INF else total + post
        return state, total

    def eos_term(self, state: PrefixScorerState) -> float:
        """What :meth:`finalize` adds on top of the cached score."""
        if not self.eos:
            return 0.0
        if state.dead:
            return NEG_INF
        return posterior(self.finalize(state), state.score)

    def finalize(self, state: PrefixScorerState) -> float:
        if state.dead:
            return NEG_INF
        if not self.eos:
            return state.score
        final = self.model.final_log_prob
        return self.semiring.sum(w + final(lms) for lms, w in state.frontier[-1].items())

    def score_incremental(self, chars: str) -> Tuple[float, list]:
        """Cached prefix score after ``chars`` and the per-character posteriors."""
        state = self.init_state()
        posts = []
        for c in chars:
            state, post = self.advance(state, c)
            posts.append(post)
        return self.finalize(state), posts


def vocab_from_model(model: NGramModel) -> Vocabulary:
    return Vocabulary.from_words(w for w in model.words() if w not in (BOS, EOS, UNK))


@dataclass(frozen=True)
class CharState:
    lm_state: int
    score: float


class CharLmScorer:
    """Baseline: a character-level N-gram model queried one character at a time."""

    def __init__(self, model: NGramModel, bos: bool = True, eos: bool = False, oov: str = "unk"):
        self.model = model
        self.bos = bos
        self.eos = eos
        self.oov = oov

    def __repr__(self) -> str:
        return f"CharLmScorer(order={self.model.order}, bos={self.bos}, eos={self.eos})"

    def init_state(self) -> CharState:
        return CharState(self.model.start_state(self.bos), 0.0)

    def advance(self, state: CharState, c: str) -> Tuple[CharState, float]:
        try:
            tok = self.model.word_id(c, self.oov)
        except OovError:
            return CharState(state.lm_state, NEG_INF), NEG_INF
        nxt, lp = self.model.lm_advance(state.lm_state, tok)
        return CharState(nxt, state.score + lp), lp

    def advance_text(self, state: CharState, text: str) -> Tuple[CharState, float]:
        total = 0.0
        for c in text:
            state, post = self.advance(state, c)
            total += post
        return state, total

    def eos_term(self, state: CharState) -> float:
        return self.model.final_log_prob(state.lm_state) if self.eos else 0.0

    def finalize(self, state: CharState) -> float:
        return state.score + self.eos_term(state)

    def score_sequence(self, chars: str) -> float:
        state = self.init_state()
        for c in chars:
            state, _ = self.advance(state, c)
        return self.finalize(state)


class NullScorer:
    """LM-free stand-in: every posterior is zero."""

    eos = False

    def init_state(self):
        return None

    def advance(self, state, c):
        return None, 0.0

    def advance_text(self, state, text):
        return None, 0.0

    def eos_term(self, state):
        return 0.0

    def finalize(self, state):
        return 0.0

    def score_sequence(self, chars: str) -> float:
        return 0.0


def telescope(posteriors: Iterable[float]) -> float:
    """Left fold of posteriors, the order the incremental chain uses."""
    total = 0.0
    for p in posteriors:
        total += p
    return total

