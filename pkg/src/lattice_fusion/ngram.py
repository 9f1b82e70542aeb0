"""Word-level backoff N-gram language models.

ARPA files store log10 probabilities; everything in memory is natural log.
The model is also the transition function of the LM automaton: contexts are
interned into integer states and :meth:`NGramModel.lm_advance` moves between
them, which is all the lazy composition in :mod:`lattice_fusion.wfsa` needs.

Example
-------
>>> import io
>>> arpa = io.StringIO(
...     "\\\\data\\\\\\nngram 1=2\\n\\n\\\\1-grams:\\n-0.30103 a\\n-0.30103 b\\n\\n\\\\end\\\\\\n")
>>> lm = parse_arpa(arpa)
>>> round(lm.cond_log_prob((), lm.symbols.id("a")), 6)
-0.693147
"""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple

logger = logging.getLogger(__name__)

LN10 = math.log(10.0)
EPS_SYMBOL = "<eps>"
BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
# ARPA convention for "probability zero", e.g. the <s> unigram.
ARPA_LOG10_ZERO = -99.0


class ArpaParseError(ValueError):
    """Malformed ARPA input. ``line`` is 1-based, or None for end-of-file errors."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


class OovError(KeyError):
    """A token has no unigram in the model and the model has no ``<unk>``."""

    def __str__(self) -> str:
        return f"out-of-vocabulary token {self.args[0]!r}"


class ModelInvariantError(ValueError):
    pass


def from_log10(value: float) -> float:
    """Convert an ARPA log10 value to natural log.

    All natural-log weights in a model go through this one function so that
    ``parse(serialize(model))`` reproduces them bit for bit.
    """
    return value * LN10


def to_log10(value: float) -> float:
    return value / LN10


class SymbolTable:
    """Interned UTF-8 symbols. Id 0 is epsilon; the sentence markers and
    ``<unk>`` are always present."""

    def __init__(self, symbols: Iterable[str] = ()):
        self._ids: Dict[str, int] = {}
        self._syms: List[str] = []
        for sym in (EPS_SYMBOL, BOS, EOS, UNK):
            self.add(sym)
        for sym in symbols:
            self.add(sym)

    def add(self, sym: str) -> int:
        idx = self._ids.get(sym)
        if idx is None:
            idx = len(self._syms)
            self._ids[sym] = idx
            self._syms.append(sym)
        return idx

    def id(self, sym: str) -> int:
        return self._ids[sym]

    def get(self, sym: str, default: Optional[int] = None) -> Optional[int]:
        return self._ids.get(sym, default)

    def symbol(self, idx: int) -> str:
        return self._syms[idx]

    def __contains__(self, sym: object) -> bool:
        return sym in self._ids

    def __len__(self) -> int:
        return len(self._syms)

    def __iter__(self):
        return iter(self._syms)

    def __repr__(self) -> str:
        return f"SymbolTable({len(self)} symbols)"


Entry = Tuple[float, Optional[float]]


class NGramModel:
    """Immutable backoff N-gram model over interned token ids.

    ``entries`` maps token-id tuples of length 1..order to ``(log_prob,
    backoff)`` in natural log; ``backoff`` is None for highest-order entries.
    """

    def __init__(self, order: int, symbols: SymbolTable, entries: Dict[Tuple[int, ...], Entry]):
        if order < 1:
            raise ValueError("order must be >= 1")
        self.order = order
        self.symbols = symbols
        self._prob: Dict[Tuple[int, ...], float] = {}
        self._bow: Dict[Tuple[int, ...], float] = {}
        for key, (lp, bow) in entries.items():
            self._prob[key] = lp
            if bow is not None:
                self._bow[key] = bow
        self._entries = dict(entries)

        # LM states: the empty context plus every listed entry short enough to
        # serve as a context.
        self._contexts: List[Tuple[int, ...]] = [()]
        self._context_ids: Dict[Tuple[int, ...], int] = {(): 0}
        for key in sorted(entries, key=lambda k: (len(k), k)):
            if len(key) <= order - 1:
                self._context_ids[key] = len(self._contexts)
                self._contexts.append(key)
        self._advance_cache: Dict[Tuple[int, int], Tuple[int, float]] = {}

    # -- introspection -----------------------------------------------------

    @property
    def entries(self) -> Dict[Tuple[int, ...], Entry]:
        return dict(self._entries)

    @property
    def num_states(self) -> int:
        return len(self._contexts)

    def context(self, state: int) -> Tuple[int, ...]:
        return self._contexts[state]

    def state_of(self, context: Sequence[int]) -> Optional[int]:
        return self._context_ids.get(tuple(context))

    def has_word(self, word: str) -> bool:
        idx = self.symbols.get(word)
        return idx is not None and (idx,) in self._prob

    def words(self) -> List[str]:
        """Listed unigrams, in symbol-table order."""
        return [self.symbols.symbol(k[0]) for k in sorted(self._prob) if len(k) == 1]

    def backoff(self, context: Sequence[int]) -> float:
        return self._bow.get(tuple(context), 0.0)

    def counts(self) -> Dict[int, int]:
        out: Dict[int, int] = Counter(len(k) for k in self._entries)
        return dict(sorted(out.items()))

    def entry_map(self) -> Dict[Tuple[str, ...], Entry]:
        """Entries keyed by symbol strings, for comparing models with
        different symbol tables."""
        sym = self.symbols.symbol
        return {tuple(sym(i) for i in k): v for k, v in self._entries.items()}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, NGramModel):
            return NotImplemented
        return self.order == other.order and self.entry_map() == other.entry_map()

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"NGramModel(order={self.order}, counts={self.counts()})"

    # -- queries -----------------------------------------------------------

    def word_id(self, word: str, oov: str = "unk") -> int:
        """Model id for ``word``, mapping unlisted words to ``<unk>`` when
        ``oov == "unk"`` and the model lists it."""
        idx = self.symbols.get(word)
        if idx is not None and (idx,) in self._prob:
            return idx
        if oov == "unk":
            unk = self.symbols.id(UNK)
            if (unk,) in self._prob:
                return unk
        raise OovError(word)

    def cond_log_prob(self, context: Sequence[int], token: int) -> float:
        """Backoff-smoothed ``ln P(token | context)``.

        Only the last ``order - 1`` tokens of ``context`` matter.
        """
        ctx = tuple(context)
        if self.order == 1:
            ctx = ()
        elif len(ctx) > self.order - 1:
            ctx = ctx[len(ctx) - (self.order - 1):]
        total = 0.0
        prob = self._prob
        while True:
            lp = prob.get(ctx + (token,))
            if lp is not None:
                return total + lp
            if not ctx:
                raise OovError(self.symbols.symbol(token) if 0 <= token < len(self.symbols) else token)
            total += self._bow.get(ctx, 0.0)
            ctx = ctx[1:]

    def start_state(self, with_bos: bool = True) -> int:
        if with_bos:
            state = self._context_ids.get((self.symbols.id(BOS),))
            if state is not None:
                return state
        return 0

    def lm_advance(self, state: int, token: int) -> Tuple[int, float]:
        """Consume ``token`` from LM state ``state``.

        Returns the successor state (longest listed suffix of context+token)
        and ``ln P(token | context)``. Results are memoized; the cache never
        changes an answer, so the model stays observably immutable.
        """
        key = (state, token)
        hit = self._advance_cache.get(key)
        if hit is not None:
            return hit
        ctx = self._contexts[state]
        lp = self.cond_log_prob(ctx, token)
        if self.order == 1:
            nxt = 0
        else:
            ext = (ctx + (token,))[-(self.order - 1):]
            ids = self._context_ids
            while ext not in ids:
                ext = ext[1:]
            nxt = ids[ext]
        result = (nxt, lp)
        self._advance_cache[key] = result
        return result

    def final_log_prob(self, state: int) -> float:
        """``ln P(</s> | context)``."""
        return self.cond_log_prob(self._contexts[state], self.symbols.id(EOS))

    def sentence_log_prob(self, words: Sequence[str], bos: bool = True, eos: bool = True,
                          oov: str = "unk") -> float:
        state = self.start_state(bos)
        total = 0.0
        for w in words:
            state, lp = self.lm_advance(state, self.word_id(w, oov))
            total += lp
        if eos:
            total += self.final_log_prob(state)
        return total


def validate(model: NGramModel, mass_tolerance: float = 1e-6) -> None:
    """Check ARPA well-formedness and the smoothing-mass bound.

    Raises ModelInvariantError listing every violation found.
    """
    problems = []
    entries = model.entries
    successors: Dict[Tuple[int, ...], float] = defaultdict(float)
    for key, (lp, bow) in entries.items():
        name = " ".join(model.symbols.symbol(i) for i in key)
        if 0 in key:
            problems.append(f"{name}: epsilon id in entry")
        if len(key) > 1 and key[:-1] not in entries:
            problems.append(f"{name}: prefix not listed")
        if not lp <= 0.0:
            problems.append(f"{name}: log_prob {lp} > 0")
        if bow is not None and not math.isfinite(bow):
            problems.append(f"{name}: backoff {bow} not finite")
        if len(key) == model.order and bow is not None:
            problems.append(f"{name}: highest-order entry carries a backoff")
        successors[key[:-1]] += math.exp(lp)
    for ctx, mass in successors.items():
        if mass > 1.0 + mass_tolerance:
            name = " ".join(model.symbols.symbol(i) for i in ctx) or "<empty>"
            problems.append(f"context {name}: successor mass {mass} > 1")
    if problems:
        raise ModelInvariantError("; ".join(problems))


# -- ARPA I/O ---------------------------------------------------------------


def parse_arpa(stream: TextIO) -> NGramModel:
    """Read an ARPA model from a text stream.

    Text before ``\\data\\`` is ignored. Declared counts must match the
    listed entries and every entry's prefix must be listed earlier.
    """
    lines = enumerate(stream, start=1)
    for lineno, raw in lines:
        if raw.strip() == "\\data\\":
            break
    else:
        raise ArpaParseError("missing \\data\\ header")

    declared: Dict[int, int] = {}
    section: Optional[int] = None
    for lineno, raw in lines:
        line = raw.strip()
        if not line:
            if declared:
                break
            continue
        if line.startswith("\\") and line.endswith("-grams:"):
            section = _section_order(line, lineno)
            break
        if not line.startswith("ngram"):
            raise ArpaParseError(f"expected 'ngram N=count', got {line!r}", lineno)
        try:
            lhs, rhs = line[len("ngram"):].split("=")
            n, count = int(lhs), int(rhs)
        except ValueError:
            raise ArpaParseError(f"malformed count line {line!r}", lineno) from None
        if n < 1 or count < 0 or n in declared:
            raise ArpaParseError(f"bad count declaration {line!r}", lineno)
        declared[n] = count
    if not declared:
        raise ArpaParseError("\\data\\ section declares no counts")
    max_declared = max(declared)
    if sorted(declared) != list(range(1, max_declared + 1)):
        raise ArpaParseError("\\data\\ section must declare orders 1..N contiguously")

    symbols = SymbolTable()
    raw_entries: Dict[Tuple[int, ...], Tuple[float, Optional[float]]] = {}
    seen: Counter = Counter()
    ended = False
    for lineno, raw in lines:
        line = raw.strip()
        if not line:
            continue
        if line == "\\end\\":
            ended = True
            break
        if line.startswith("\\"):
            if not line.endswith("-grams:"):
                raise ArpaParseError(f"unexpected section marker {line!r}", lineno)
            new = _section_order(line, lineno)
            if section is not None:
                _check_count(section, declared, seen, lineno)
            section = new
            continue
        if section is None:
            raise ArpaParseError("entry outside of an N-grams section", lineno)
        if section not in declared:
            raise ArpaParseError(f"section {section} not declared in \\data\\", lineno)
        fields = line.split()
        if len(fields) not in (section + 1, section + 2):
            raise ArpaParseError(f"expected {section + 1} or {section + 2} fields, got {len(fields)}", lineno)
        try:
            lp10 = float(fields[0])
            bow10 = float(fields[section + 1]) if len(fields) == section + 2 else None
        except ValueError:
            raise ArpaParseError(f"non-numeric field in {line!r}", lineno) from None
        if bow10 is not None and section == max_declared:
            raise ArpaParseError("highest-order entry carries a backoff weight", lineno)
        key = tuple(symbols.add(w) for w in fields[1:section + 1])
        if 0 in key:
            raise ArpaParseError(f"reserved symbol {EPS_SYMBOL} used as a word", lineno)
        if key in raw_entries:
            raise ArpaParseError(f"duplicate entry {' '.join(fields[1:section + 1])!r}", lineno)
        if section > 1 and key[:-1] not in raw_entries:
            raise ArpaParseError(f"prefix of {' '.join(fields[1:section + 1])!r} is not listed", lineno)
        raw_entries[key] = (lp10, bow10)
        seen[section] += 1
    if not ended:
        raise ArpaParseError("missing \\end\\ marker")
    if section is not None:
        _check_count(section, declared, seen, None)
    for n, count in declared.items():
        if seen[n] != count:
            raise ArpaParseError(f"declared ngram {n}={count} but found {seen[n]}")

    order = max((n for n in declared if seen[n] > 0), default=0)
    if order == 0:
        raise ArpaParseError("model has no entries")
    entries: Dict[Tuple[int, ...], Entry] = {}
    for key, (lp10, bow10) in raw_entries.items():
        if len(key) < order:
            bow = from_log10(bow10) if bow10 is not None else 0.0
        else:
            bow = None
        entries[key] = (from_log10(lp10), bow)
    model = NGramModel(order, symbols, entries)
    logger.debug("parsed ARPA model %r", model)
    return model


def _section_order(line: str, lineno: int) -> int:
    try:
        return int(line[1:line.index("-grams:")])
    except ValueError:
        raise ArpaParseError(f"bad section header {line!r}", lineno) from None


def _check_count(section: int, declared: Dict[int, int], seen: Counter, lineno: Optional[int]) -> None:
    if seen[section] != declared.get(section, 0):
        raise ArpaParseError(
            f"declared ngram {section}={declared.get(section, 0)} but found {seen[section]}", lineno)


def load_arpa(path) -> NGramModel:
    with open(path, encoding="utf-8") as f:
        head = f.read(1)
        if head == "﻿":
            raise ArpaParseError("UTF-8 byte-order mark not allowed", 1)
        f.seek(0)
        return parse_arpa(f)


def write_arpa(model: NGramModel, stream: TextIO) -> None:
    sym = model.symbols.symbol
    by_order: Dict[int, List[Tuple[Tuple[str, ...], Entry]]] = defaultdict(list)
    for key, entry in model.entries.items():
        by_order[len(key)].append((tuple(sym(i) for i in key), entry))
    stream.write("\\data\\\n")
    for n in range(1, model.order + 1):
        stream.write(f"ngram {n}={len(by_order[n])}\n")
    for n in range(1, model.order + 1):
        stream.write(f"\n\\{n}-grams:\n")
        for words, (lp, bow) in sorted(by_order[n]):
            fields = [repr(to_log10(lp)), " ".join(words)]
            if bow is not None:
                fields.append(repr(to_log10(bow)))
            stream.write("\t".join(fields) + "\n")
    stream.write("\n\\end\\\n")


def to_arpa(model: NGramModel) -> str:
    import io

    buf = io.StringIO()
    write_arpa(model, buf)
    return buf.getvalue()


# -- toy trainer ---------------------------------------------------------------


def train_toy_lm(lines: Iterable[str], order: int = 3, smoothing: str = "witten-bell",
                 k: float = 1.0) -> NGramModel:
    """Estimate a small backoff model from whitespace-segmented sentences.

    ``smoothing`` is ``"witten-bell"`` (interpolated, stored in backoff form)
    or ``"add-k"``. Unseen probability mass is routed through backoff weights
    so every context's distribution sums to one over the vocabulary
    (``</s>`` and ``<unk>`` included, ``<s>`` excluded).
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if smoothing not in ("witten-bell", "add-k"):
        raise ValueError(f"unknown smoothing {smoothing!r}")
    if smoothing == "add-k" and k < 0:
        raise ValueError("k must be >= 0")
    sentences = [line.split() for line in lines]
    sentences = [s for s in sentences if s]
    if not sentences:
        raise ValueError("empty corpus")

    words = sorted({w for s in sentences for w in s} - {BOS, EOS, UNK})
    symbols = SymbolTable(words)
    bos, eos, unk = symbols.id(BOS), symbols.id(EOS), symbols.id(UNK)
    predictable = [symbols.id(w) for w in words] + [eos, unk]
    vsize = len(predictable)

    # counts[n][context][word]
    counts: List[Dict[Tuple[int, ...], Counter]] = [defaultdict(Counter) for _ in range(order + 1)]
    for sent in sentences:
        toks = [bos] + [symbols.id(w) for w in sent] + [eos]
        for i in range(1, len(toks)):
            for n in range(1, order + 1):
                if i - n + 1 < 0:
                    break
                counts[n][tuple(toks[i - n + 1:i])][toks[i]] += 1

    # log10 probabilities and backoffs, built order by order
    lp10: Dict[Tuple[int, ...], float] = {}
    bow10: Dict[Tuple[int, ...], float] = {}

    def lower_prob(ctx: Tuple[int, ...], w: int) -> float:
        # linear-domain backoff recursion over what has been built so far
        scale = 1.0
        while True:
            v = lp10.get(ctx + (w,))
            if v is not None:
                return scale * 10.0 ** v
            if not ctx:
                return 0.0
            scale *= 10.0 ** bow10.get(ctx, 0.0)
            ctx = ctx[1:]

    def log10_or_floor(p: float) -> float:
        return math.log10(p) if p > 0.0 else ARPA_LOG10_ZERO

    uni = counts[1][()]
    total = sum(uni.values())
    types = len(uni)
    for w in predictable:
        c = uni.get(w, 0)
        if smoothing == "witten-bell":
            p = (c + types / vsize) / (total + types)
        else:
            p = (c + k) / (total + k * vsize) if total + k * vsize > 0 else 0.0
        lp10[(w,)] = log10_or_floor(p)
    lp10[(bos,)] = ARPA_LOG10_ZERO

    for n in range(2, order + 1):
        for ctx in sorted(counts[n]):
            succ = counts[n][ctx]
            c_total = sum(succ.values())
            t_types = len(succ)
            seen_p = 0.0
            seen_low = 0.0
            new: Dict[Tuple[int, ...], float] = {}
            for w in sorted(succ):
                low = lower_prob(ctx[1:], w)
                if smoothing == "witten-bell":
                    p = (succ[w] + t_types * low) / (c_total + t_types)
                else:
                    p = (succ[w] + k) / (c_total + k * vsize)
                new[ctx + (w,)] = log10_or_floor(p)
                seen_p += p
                seen_low += low
            if smoothing == "witten-bell":
                alpha = t_types / (c_total + t_types)
            else:
                left, left_low = 1.0 - seen_p, 1.0 - seen_low
                alpha = left / left_low if left > 1e-12 and left_low > 1e-12 else 0.0
            # the context's backoff is attached before its successors are added
            bow10[ctx] = log10_or_floor(alpha)
            lp10.update(new)

    entries: Dict[Tuple[int, ...], Entry] = {}
    for key, v in lp10.items():
        if len(key) < order:
            bow = from_log10(bow10.get(key, 0.0))
        else:
            bow = None
        entries[key] = (from_log10(v), bow)
    model = NGramModel(order, symbols, entries)
    validate(model)
    return model
