"""Shallow-fusion beam search over pluggable acoustic score oracles.

Label-synchronous search (attention decoders) adds, per emitted token,
``s_acoustic + lm_weight * lm_posterior``. Frame-synchronous search follows
alignment-length synchronous decoding for transducers: a blank advances the
frame and takes no LM term; a non-blank token stays on the frame and adds
the LM term. The LM is any scorer with ``init_state / advance_text /
eos_term`` (see :mod:`lattice_fusion.scorer`).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from .wfsa import NEG_INF, get_semiring

logger = logging.getLogger(__name__)

BLANK = "<blank>"


class NoHypothesisError(RuntimeError):
    pass


class DimensionError(ValueError):
    pass


class FormatError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class FusionConfig:
    lm_weight: float = 0.4
    beam: int = 10
    semiring: str = "log"
    mode: str = "label"
    bos: bool = True
    eos: bool = False
    lm_kind: str = "word-lattice"
    nbest: Optional[int] = None
    max_symbols: Optional[int] = None

    def __post_init__(self):
        if self.lm_weight < 0:
            raise ValueError("lm_weight must be >= 0")
        if self.beam < 1:
            raise ValueError("beam must be >= 1")
        if self.mode not in ("label", "frame", "rescore"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.lm_kind not in ("word-lattice", "char-ngram", "none"):
            raise ValueError(f"unknown lm_kind {self.lm_kind!r}")
        get_semiring(self.semiring)

    @property
    def n_out(self) -> int:
        return self.nbest if self.nbest is not None else self.beam


@dataclass(frozen=True)
class Hypothesis:
    tokens: Tuple[int, ...]
    delta: float
    labels: Tuple[str, ...] = ()
    lm_state: object = field(default=None, compare=False, repr=False)
    frame: Optional[int] = None

    @property
    def text(self) -> str:
        return "".join(self.labels)


def _rank_key(h: Hypothesis):
    return (-h.delta, h.tokens)


# -- acoustic oracles ----------------------------------------------------------


class MatrixLabelOracle:
    """Per-step expansion scores: row ``m`` scores the ``m+1``-th token, the
    last column is the end-of-sequence score."""

    def __init__(self, matrix, tokens: Sequence[str]):
        rows = np.asarray(matrix, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != len(tokens):
            raise DimensionError(f"matrix has {rows.shape[-1]} columns, token table has {len(tokens)} entries")
        self.tokens = list(tokens[:-1])
        self.end_token = tokens[-1]
        self._rows = rows.tolist()
        self.max_len = rows.shape[0] - 1

    def expand(self, prefix: Tuple[int, ...]) -> Sequence[float]:
        return self._rows[len(prefix)][:-1]

    def end_score(self, prefix: Tuple[int, ...]) -> float:
        return self._rows[len(prefix)][-1]


class TableLabelOracle:
    """Expansion scores looked up by exact prefix; missing entries are -inf.

    ``table`` maps a prefix (tuple of token ids) to ``{token_id: score}``;
    token id ``len(tokens)`` is the end of sequence.
    """

    def __init__(self, table: Dict[Tuple[int, ...], Dict[int, float]], tokens: Sequence[str]):
        self.tokens = list(tokens)
        self._table = table
        self.max_len = max((len(p) for p in table), default=0)

    @classmethod
    def from_tsv(cls, lines: Iterable[str], tokens: Sequence[str], end_token: str = "</s>") -> "TableLabelOracle":
        """``prefix<TAB>token<TAB>score`` with space-separated prefixes."""
        index = {t: i for i, t in enumerate(tokens)}
        index[end_token] = len(tokens)
        table: Dict[Tuple[int, ...], Dict[int, float]] = {}
        for lineno, raw in enumerate(lines, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise FormatError("expected prefix<TAB>token<TAB>score", lineno)
            try:
                prefix = tuple(index[t] for t in fields[0].split())
                tok = index[fields[1]]
                score = float(fields[2])
            except (KeyError, ValueError):
                raise FormatError(f"bad expansion entry {line!r}", lineno) from None
            table.setdefault(prefix, {})[tok] = score
        return cls(table, tokens)

    def expand(self, prefix):
        row = self._table.get(prefix, {})
        return [row.get(i, NEG_INF) for i in range(len(self.tokens))]

    def end_score(self, prefix):
        return self._table.get(prefix, {}).get(len(self.tokens), NEG_INF)


class FrameOracle:
    """Posterior matrix ``T x N`` with blank in the last column."""

    def __init__(self, matrix, tokens: Sequence[str]):
        rows = np.asarray(matrix, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != len(tokens):
            raise DimensionError(f"matrix has {rows.shape[-1]} columns, token table has {len(tokens)} entries")
        self.tokens = list(tokens[:-1])
        self.blank_token = tokens[-1]
        self.blank = len(tokens) - 1
        self._rows = rows.tolist()
        self.num_frames = rows.shape[0]

    def score(self, t: int, token: int) -> float:
        return self._rows[t][token]

    def row(self, t: int) -> List[float]:
        return self._rows[t]


def synthetic_posteriors(reference: Sequence[int], num_columns: int, rng: np.random.Generator,
                         peak: float = 5.0, noise: float = 1.0, mode: str = "frame",
                         blank_frames: int = 1) -> np.ndarray:
    """Noisy one-hot log-posteriors that favour ``reference``.

    Frame mode: each reference token gets one frame where it is hot,
    followed by ``blank_frames`` frames where blank (last column) is hot.
    Label mode: row ``i`` favours ``reference[i]``, the final row favours the
    end column.
    """
    hot: List[int] = []
    if mode == "frame":
        hot.extend([num_columns - 1] * blank_frames)
        for tok in reference:
            hot.append(tok)
            hot.extend([num_columns - 1] * blank_frames)
    elif mode == "label":
        hot.extend(reference)
        hot.append(num_columns - 1)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    logits = rng.normal(0.0, noise, size=(len(hot), num_columns))
    logits[np.arange(len(hot)), hot] += peak
    top = logits.max(axis=1, keepdims=True)
    return logits - top - np.log(np.exp(logits - top).sum(axis=1, keepdims=True))


# -- search --------------------------------------------------------------------


def _lm_step(lm, use_lm: bool, state, label: str, weight: float):
    if not use_lm:
        return state, 0.0
    state, post = lm.advance_text(state, label)
    return state, weight * post


def decode_label_sync(oracle, cfg: FusionConfig, lm=None) -> List[Hypothesis]:
    """Label-synchronous beam search.

    Every live hypothesis is expanded over all tokens; the best ``beam`` by
    accumulated score survive, ties to the smaller token sequence. At each
    step every live hypothesis may also end, adding the oracle's end score
    and the weighted LM end-of-sentence term.
    """
    use_lm = lm is not None and cfg.lm_weight != 0.0
    beta = cfg.lm_weight
    tokens = oracle.tokens
    beam = [Hypothesis((), 0.0, (), lm.init_state() if use_lm else None)]
    finished: List[Hypothesis] = []
    for step in range(oracle.max_len + 1):
        cands: List[Hypothesis] = []
        for h in beam:
            end = oracle.end_score(h.tokens)
            if end != NEG_INF:
                d = h.delta + end
                if use_lm and lm.eos:
                    d += beta * lm.eos_term(h.lm_state)
                if d != NEG_INF:
                    finished.append(Hypothesis(h.tokens, d, h.labels, h.lm_state))
            if step == oracle.max_len:
                continue
            for tok, s in enumerate(oracle.expand(h.tokens)):
                if s == NEG_INF:
                    continue
                state, lm_inc = _lm_step(lm, use_lm, h.lm_state, tokens[tok], beta)
                d = h.delta + (s + lm_inc)
                if d == NEG_INF or math.isnan(d):
                    continue
                cands.append(Hypothesis(h.tokens + (tok,), d, h.labels + (tokens[tok],), state))
        cands.sort(key=_rank_key)
        beam = cands[:cfg.beam]
        if not beam:
            break
    if not finished:
        raise NoHypothesisError("no hypothesis reached the end token")
    finished.sort(key=_rank_key)
    return finished[:cfg.n_out]


def decode_frame_sync(oracle: FrameOracle, cfg: FusionConfig, lm=None) -> List[Hypothesis]:
    """Alignment-length synchronous beam search for transducer-style scores.

    At step ``i`` every live hypothesis has emitted ``u`` tokens and sits on
    frame ``t = i - u``. Blank moves it to frame ``t + 1`` with no LM term;
    a token keeps the frame and adds ``s + lm_weight * posterior``.
    Hypotheses with the same tokens at the same step are merged with the
    configured semiring. A hypothesis completes when blank leaves the last
    frame. At most ``cfg.max_symbols`` tokens (default: number of frames)
    are emitted.
    """
    use_lm = lm is not None and cfg.lm_weight != 0.0
    beta = cfg.lm_weight
    plus = get_semiring(cfg.semiring).plus
    T = oracle.num_frames
    u_max = cfg.max_symbols if cfg.max_symbols is not None else T
    blank = oracle.blank
    tokens = oracle.tokens

    def merge(pool: Dict[Tuple[int, ...], Hypothesis], h: Hypothesis) -> None:
        old = pool.get(h.tokens)
        if old is None:
            pool[h.tokens] = h
        else:
            pool[h.tokens] = Hypothesis(h.tokens, plus(old.delta, h.delta), h.labels, old.lm_state, h.frame)

    beam = [Hypothesis((), 0.0, (), lm.init_state() if use_lm else None, 0)] if T > 0 else []
    finished: Dict[Tuple[int, ...], Hypothesis] = {}
    if T == 0:
        finished[()] = Hypothesis((), 0.0, (), lm.init_state() if use_lm else None, 0)
    for _ in range(T + u_max):
        if not beam:
            break
        pool: Dict[Tuple[int, ...], Hypothesis] = {}
        for h in beam:
            t = h.frame
            row = oracle.row(t)
            d = h.delta + row[blank]
            if d != NEG_INF:
                nh = Hypothesis(h.tokens, d, h.labels, h.lm_state, t + 1)
                merge(finished if t + 1 == T else pool, nh)
            if len(h.tokens) >= u_max:
                continue
            for tok in range(len(tokens)):
                s = row[tok]
                if s == NEG_INF:
                    continue
                state, lm_inc = _lm_step(lm, use_lm, h.lm_state, tokens[tok], beta)
                d = h.delta + (s + lm_inc)
                if d == NEG_INF or math.isnan(d):
                    continue
                merge(pool, Hypothesis(h.tokens + (tok,), d, h.labels + (tokens[tok],), state, t))
        beam = sorted(pool.values(), key=_rank_key)[:cfg.beam]
    if not finished:
        raise NoHypothesisError("no hypothesis consumed every frame")
    out = []
    for h in finished.values():
        d = h.delta
        if use_lm and lm.eos:
            d += beta * lm.eos_term(h.lm_state)
        if d != NEG_INF:
            out.append(Hypothesis(h.tokens, d, h.labels, h.lm_state, h.frame))
    if not out:
        raise NoHypothesisError("every completed hypothesis has zero probability")
    out.sort(key=_rank_key)
    return out[:cfg.n_out]


def decode(oracle, cfg: FusionConfig, lm=None) -> List[Hypothesis]:
    if cfg.mode == "label":
        return decode_label_sync(oracle, cfg, lm)
    if cfg.mode == "frame":
        return decode_frame_sync(oracle, cfg, lm)
    raise ValueError("rescore mode works on N-best lists, use rescore_nbest")


# -- rescoring -------------------------------------------------------------------


@dataclass(frozen=True)
class RescoredEntry:
    tokens: Tuple[str, ...]
    acoustic: float
    lm_score: float
    score: float

    @property
    def text(self) -> str:
        return "".join(self.tokens)


def rescore_nbest(entries: Sequence[Tuple[Sequence[str], float]], cfg: FusionConfig,
                  lm=None) -> List[RescoredEntry]:
    """Rerank ``(tokens, acoustic_score)`` pairs by ``acoustic + lm_weight *
    lm.score_sequence(text)``. The sort is stable."""
    if not entries:
        raise ValueError("empty N-best list")
    use_lm = lm is not None and cfg.lm_weight != 0.0
    out = []
    for tokens, acoustic in entries:
        tokens = tuple(tokens)
        if use_lm:
            lm_score = lm.score_sequence("".join(tokens))
            score = acoustic + cfg.lm_weight * lm_score
        else:
            lm_score, score = 0.0, acoustic
        out.append(RescoredEntry(tokens, acoustic, lm_score, score))
    out.sort(key=lambda e: -e.score)
    return out


# -- metric ------------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorCounts:
    substitutions: int
    insertions: int
    deletions: int
    ref_len: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def cer(self) -> float:
        return self.errors / self.ref_len


def edit_distance_cer(ref: Sequence, hyp: Sequence) -> ErrorCounts:
    """Unit-cost Levenshtein alignment of ``hyp`` against ``ref``."""
    if len(ref) == 0:
        raise ValueError("CER is undefined for an empty reference")
    n, m = len(ref), len(hyp)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        dist[i][0] = i
    for j in range(m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = dist[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1])
            dist[i][j] = min(sub, dist[i - 1][j] + 1, dist[i][j - 1] + 1)
    s = ins = dele = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i][j] == dist[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and dist[i][j] == dist[i - 1][j] + 1:
            dele += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return ErrorCounts(s, ins, dele, n)


# -- file formats --------------------------------------------------------------------


def read_matrix(lines: Iterable[str]) -> np.ndarray:
    """Header ``T N`` then ``T`` rows of ``N`` floats."""
    it = iter(enumerate(lines, start=1))
    try:
        lineno, header = next(it)
    except StopIteration:
        raise FormatError("empty posterior matrix file") from None
    try:
        T, N = (int(x) for x in header.split())
    except ValueError:
        raise FormatError(f"expected 'T N' header, got {header.strip()!r}", lineno) from None
    rows = []
    for lineno, raw in it:
        if not raw.strip():
            continue
        try:
            row = [float(x) for x in raw.split()]
        except ValueError:
            raise FormatError("non-numeric posterior", lineno) from None
        if len(row) != N:
            raise DimensionError(f"line {lineno}: expected {N} columns, got {len(row)}")
        rows.append(row)
    if len(rows) != T:
        raise DimensionError(f"header declares {T} frames, found {len(rows)}")
    return np.array(rows, dtype=np.float64).reshape(T, N)


def write_matrix(matrix: np.ndarray, stream: TextIO) -> None:
    T, N = matrix.shape
    stream.write(f"{T} {N}\n")
    for row in matrix.tolist():
        stream.write(" ".join(repr(float(x)) for x in row) + "\n")


def read_token_table(lines: Iterable[str]) -> List[str]:
    tokens = [line.rstrip("\n") for line in lines]
    while tokens and not tokens[-1]:
        tokens.pop()
    if not tokens:
        raise FormatError("empty token table")
    for i, t in enumerate(tokens, start=1):
        if not t or t != t.strip():
            raise FormatError(f"bad token {t!r}", i)
    if len(set(tokens)) != len(tokens):
        raise FormatError("duplicate tokens in token table")
    return tokens


def read_nbest(lines: Iterable[str]) -> Dict[str, List[Tuple[int, float, List[str]]]]:
    """``utt_id<TAB>rank<TAB>acoustic_score<TAB>tokens``, grouped by utterance
    in first-seen order and sorted by rank within each."""
    out: Dict[str, List[Tuple[int, float, List[str]]]] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise FormatError(f"expected 4 tab-separated fields, got {len(fields)}", lineno)
        try:
            rank = int(fields[1])
            score = float(fields[2])
        except ValueError:
            raise FormatError(f"bad rank or score in {line!r}", lineno) from None
        out.setdefault(fields[0], []).append((rank, score, fields[3].split()))
    for entries in out.values():
        entries.sort(key=lambda e: e[0])
    return out


def format_row(utt: str, rank: int, score: float, tokens: Sequence[str]) -> str:
    return f"{utt}\t{rank}\t{score!r}\t{' '.join(tokens)}\n"
