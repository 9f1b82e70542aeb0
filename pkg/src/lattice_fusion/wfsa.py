"""Weighted finite-state acceptors over natural-log weights.

Two semirings are supported: tropical (max, +) keeps the single best path,
log (log-sum-exp, +) sums the mass of every path. Arcs labelled
:data:`EPSILON` (id 0) that loop on their own state are the only cycles
allowed; they are skipped by topological scoring.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, TextIO, Tuple

from .ngram import EOS, EPS_SYMBOL, NGramModel, OovError, SymbolTable

EPSILON = 0
NEG_INF = -math.inf


def log_add(a: float, b: float) -> float:
    """Numerically stable ``log(exp(a) + exp(b))``."""
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


class Semiring:
    name = ""
    zero = NEG_INF
    one = 0.0

    @staticmethod
    def plus(a: float, b: float) -> float:
        raise NotImplementedError

    @staticmethod
    def times(a: float, b: float) -> float:
        return a + b

    def sum(self, values: Iterable[float]) -> float:
        total = self.zero
        for v in values:
            total = self.plus(total, v)
        return total

    def __repr__(self) -> str:
        return f"<{self.name} semiring>"


class TropicalSemiring(Semiring):
    name = "tropical"

    @staticmethod
    def plus(a: float, b: float) -> float:
        # ties keep the first value; they are value-identical
        return b if b > a else a

    def sum(self, values: Iterable[float]) -> float:
        return max(values, default=NEG_INF)


class LogSemiring(Semiring):
    name = "log"
    plus = staticmethod(log_add)

    def sum(self, values: Iterable[float]) -> float:
        values = list(values)
        if not values:
            return NEG_INF
        top = max(values)
        if top == NEG_INF or top == math.inf:
            return top
        return top + math.log(math.fsum(math.exp(v - top) for v in values))


TROPICAL = TropicalSemiring()
LOG = LogSemiring()
SEMIRINGS = {"tropical": TROPICAL, "log": LOG}


def get_semiring(name) -> Semiring:
    if isinstance(name, Semiring):
        return name
    try:
        return SEMIRINGS[name]
    except KeyError:
        raise ValueError(f"unknown semiring {name!r}; expected one of {sorted(SEMIRINGS)}") from None


class CycleError(ValueError):
    pass


class TooManyPathsError(ValueError):
    pass


class Arc(NamedTuple):
    src: int
    dst: int
    label: int
    weight: float


class PathScore(NamedTuple):
    labels: Tuple[int, ...]
    weight: float


@dataclass(frozen=True)
class Wfsa:
    """An immutable acceptor. ``finals`` is a sorted tuple of
    ``(state, final_weight)``; ``symbols`` maps labels to strings and does not
    take part in equality."""

    num_states: int
    arcs: Tuple[Arc, ...]
    start: int = 0
    finals: Tuple[Tuple[int, float], ...] = ()
    symbols: Optional[SymbolTable] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        arcs = tuple(a if isinstance(a, Arc) else Arc(*a) for a in self.arcs)
        object.__setattr__(self, "arcs", arcs)
        finals = self.finals.items() if isinstance(self.finals, dict) else self.finals
        object.__setattr__(self, "finals", tuple(sorted((int(s), float(w)) for s, w in finals)))
        if self.num_states < 1 or not 0 <= self.start < self.num_states:
            raise ValueError("start state out of range")
        for a in arcs:
            if not (0 <= a.src < self.num_states and 0 <= a.dst < self.num_states):
                raise ValueError(f"arc {a} has an endpoint outside 0..{self.num_states - 1}")
        for s, _ in self.finals:
            if not 0 <= s < self.num_states:
                raise ValueError(f"final state {s} out of range")

    @cached_property
    def final_weights(self) -> Dict[int, float]:
        return dict(self.finals)

    @cached_property
    def out_arcs(self) -> List[List[Arc]]:
        out: List[List[Arc]] = [[] for _ in range(self.num_states)]
        for a in self.arcs:
            out[a.src].append(a)
        return out

    @cached_property
    def topo_order(self) -> Tuple[int, ...]:
        """States in topological order, ignoring epsilon self-loops.

        Raises CycleError on any other cycle.
        """
        indeg = [0] * self.num_states
        for a in self.arcs:
            if not _is_eps_loop(a):
                indeg[a.dst] += 1
        heap = [s for s in range(self.num_states) if indeg[s] == 0]
        heapq.heapify(heap)
        order = []
        out = self.out_arcs
        while heap:
            s = heapq.heappop(heap)
            order.append(s)
            for a in out[s]:
                if _is_eps_loop(a):
                    continue
                indeg[a.dst] -= 1
                if indeg[a.dst] == 0:
                    heapq.heappush(heap, a.dst)
        if len(order) != self.num_states:
            raise CycleError("automaton has a cycle other than epsilon self-loops")
        return tuple(order)

    def is_acyclic(self) -> bool:
        try:
            self.topo_order
        except CycleError:
            return False
        return True

    def label_str(self, label: int) -> str:
        if label == EPSILON:
            return EPS_SYMBOL
        if self.symbols is None:
            return str(label)
        return self.symbols.symbol(label)


def _is_eps_loop(a: Arc) -> bool:
    return a.label == EPSILON and a.src == a.dst


def add_epsilon_self_loops(a: Wfsa) -> Wfsa:
    loops = tuple(Arc(s, s, EPSILON, 0.0) for s in range(a.num_states))
    return Wfsa(a.num_states, a.arcs + loops, a.start, a.finals, a.symbols)


def dedupe_arcs(a: Wfsa) -> Wfsa:
    seen = set()
    arcs = []
    for arc in a.arcs:
        if arc not in seen:
            seen.add(arc)
            arcs.append(arc)
    return Wfsa(a.num_states, tuple(arcs), a.start, a.finals, a.symbols)


def forward_score(a: Wfsa, semiring="log", normalize: bool = False) -> float:
    """Semiring sum over accepting paths of their summed weights.

    One pass in topological order. With ``normalize`` (log semiring only)
    the result is divided by the number of accepting paths, i.e. each path is
    given prior ``1/|paths|`` instead of 1.
    """
    sr = get_semiring(semiring)
    alpha = [NEG_INF] * a.num_states
    alpha[a.start] = sr.one
    out = a.out_arcs
    plus = sr.plus
    for s in a.topo_order:
        w = alpha[s]
        if w == NEG_INF:
            continue
        for arc in out[s]:
            if _is_eps_loop(arc):
                continue
            alpha[arc.dst] = plus(alpha[arc.dst], w + arc.weight)
    total = sr.sum(alpha[s] + fw for s, fw in a.finals)
    if normalize:
        if sr is not LOG:
            raise ValueError("path-count normalisation only applies to the log semiring")
        n = path_count(a)
        if n == 0:
            return NEG_INF
        total -= math.log(n)
    return total


def path_count(a: Wfsa) -> int:
    counts = [0] * a.num_states
    counts[a.start] = 1
    for s in a.topo_order:
        if counts[s] == 0:
            continue
        for arc in a.out_arcs[s]:
            if not _is_eps_loop(arc):
                counts[arc.dst] += counts[s]
    return sum(counts[s] for s, _ in a.finals)


def enumerate_paths(a: Wfsa, limit: int = 100_000) -> List[PathScore]:
    """Every accepting path as (non-epsilon labels, total weight).

    Sorted by label ids, then weight. Raises TooManyPathsError past ``limit``.
    """
    a.topo_order  # rejects cycles up front
    finals = a.final_weights
    out = a.out_arcs
    paths: List[PathScore] = []
    stack: List[Tuple[int, Tuple[int, ...], float]] = [(a.start, (), 0.0)]
    while stack:
        s, labels, w = stack.pop()
        if s in finals:
            paths.append(PathScore(labels, w + finals[s]))
            if len(paths) > limit:
                raise TooManyPathsError(f"more than {limit} accepting paths")
        for arc in out[s]:
            if _is_eps_loop(arc):
                continue
            nl = labels if arc.label == EPSILON else labels + (arc.label,)
            stack.append((arc.dst, nl, w + arc.weight))
    paths.sort()
    return paths


# -- composition with an N-gram model --------------------------------------


def _label_map(q: Wfsa, model: NGramModel, oov: str) -> Dict[int, int]:
    if q.symbols is None:
        raise ValueError("automaton needs a symbol table to be matched against an LM")
    mapping = {}
    for arc in q.arcs:
        if arc.label == EPSILON or arc.label in mapping:
            continue
        mapping[arc.label] = model.word_id(q.symbols.symbol(arc.label), oov)
    return mapping


def intersect_with_lm(q: Wfsa, model: NGramModel, bos: bool = True, eos: bool = False,
                      oov: str = "unk") -> Wfsa:
    """Lazy product of ``q`` with the LM automaton.

    States are the reachable ``(q_state, lm_state)`` pairs, created in
    topological order of ``q``. Each word arc is matched exactly once through
    :meth:`NGramModel.lm_advance`, so a word sequence gets its backoff
    probability once, never once per backoff route. Epsilon self-loops on
    ``q`` are ignored; any other epsilon arc is rejected.
    """
    for arc in q.arcs:
        if arc.label == EPSILON and not _is_eps_loop(arc):
            raise ValueError("intersect_with_lm needs an epsilon-free acceptor")
    to_model = _label_map(q, model, oov)
    pair_ids: Dict[Tuple[int, int], int] = {}
    by_qstate: Dict[int, List[int]] = {}
    arcs: List[Arc] = []
    finals: Dict[int, float] = {}
    qfinals = q.final_weights

    def pair(qs: int, ls: int) -> int:
        key = (qs, ls)
        idx = pair_ids.get(key)
        if idx is None:
            idx = pair_ids[key] = len(pair_ids)
            by_qstate.setdefault(qs, []).append(ls)
        return idx

    start = pair(q.start, model.start_state(bos))
    for qs in q.topo_order:
        for ls in by_qstate.get(qs, ()):
            src = pair_ids[(qs, ls)]
            if qs in qfinals:
                fw = qfinals[qs]
                if eos:
                    fw += model.final_log_prob(ls)
                finals[src] = fw
            for arc in q.out_arcs[qs]:
                if _is_eps_loop(arc):
                    continue
                nls, lp = model.lm_advance(ls, to_model[arc.label])
                arcs.append(Arc(src, pair(arc.dst, nls), arc.label, arc.weight + lp))
    return Wfsa(max(len(pair_ids), 1), tuple(arcs), start, finals, q.symbols)


def lm_to_fsa(model: NGramModel, bos: bool = True, eos: bool = False) -> Wfsa:
    """Materialise the LM as an acceptor with explicit epsilon backoff arcs.

    One state per LM context, one arc per listed N-gram, one epsilon arc
    from each non-empty context to its backoff context. With ``eos`` the
    ``</s>`` entries become final weights; otherwise every state is final.
    Labels are model symbol ids.
    """
    eos_id = model.symbols.id(EOS)
    arcs: List[Arc] = []
    finals: Dict[int, float] = {}
    for key, (lp, _) in sorted(model.entries.items()):
        ctx, w = key[:-1], key[-1]
        src = model.state_of(ctx)
        if src is None:
            continue
        if w == eos_id:
            if eos:
                finals[src] = lp
            continue
        dst, _ = model.lm_advance(src, w)
        arcs.append(Arc(src, dst, w, lp))
    for state in range(1, model.num_states):
        ctx = model.context(state)[1:]
        while model.state_of(ctx) is None:
            ctx = ctx[1:]
        arcs.append(Arc(state, model.state_of(ctx), EPSILON, model.backoff(model.context(state))))
    if not eos:
        finals = {s: 0.0 for s in range(model.num_states)}
    return Wfsa(model.num_states, tuple(arcs), model.start_state(bos), finals, model.symbols)


def compose_explicit(q: Wfsa, g: Wfsa, oov: str = "unk", model: Optional[NGramModel] = None) -> Wfsa:
    """Intersect ``q`` (with epsilon self-loops) against an explicit-backoff
    LM acceptor ``g``.

    Epsilon arcs of ``g`` pair with the self-loops of ``q``, so a word can
    be reached both directly and through backoff arcs; each route is a
    separate path. ``model`` resolves q's label strings to g's ids.
    """
    if g.symbols is None or q.symbols is None:
        raise ValueError("both automata need symbol tables")
    if model is not None:
        to_g = _label_map(q, model, oov)
    else:
        to_g = {}
        for arc in q.arcs:
            if arc.label != EPSILON:
                sym = q.symbols.symbol(arc.label)
                gid = g.symbols.get(sym)
                if gid is None:
                    raise OovError(sym)
                to_g[arc.label] = gid
    q_loops = {a.src for a in q.arcs if _is_eps_loop(a)}
    g_index: Dict[Tuple[int, int], List[Arc]] = {}
    for arc in g.arcs:
        g_index.setdefault((arc.src, arc.label), []).append(arc)

    ids: Dict[Tuple[int, int], int] = {}
    queue: List[Tuple[int, int]] = []

    def pair(qs: int, gs: int) -> int:
        idx = ids.get((qs, gs))
        if idx is None:
            idx = ids[(qs, gs)] = len(ids)
            queue.append((qs, gs))
        return idx

    start = pair(q.start, g.start)
    arcs: List[Arc] = []
    finals: Dict[int, float] = {}
    qf, gf = q.final_weights, g.final_weights
    head = 0
    while head < len(queue):
        qs, gs = queue[head]
        head += 1
        src = ids[(qs, gs)]
        if qs in qf and gs in gf:
            finals[src] = qf[qs] + gf[gs]
        for arc in q.out_arcs[qs]:
            if _is_eps_loop(arc):
                continue
            if arc.label == EPSILON:
                raise ValueError("q may only carry epsilon self-loops")
            for garc in g_index.get((gs, to_g[arc.label]), ()):
                arcs.append(Arc(src, pair(arc.dst, garc.dst), arc.label, arc.weight + garc.weight))
        if qs in q_loops:
            for garc in g_index.get((gs, EPSILON), ()):
                if garc.src != garc.dst:
                    arcs.append(Arc(src, pair(qs, garc.dst), EPSILON, garc.weight))
    return Wfsa(max(len(ids), 1), tuple(arcs), start, finals, q.symbols)


# -- text format ---------------------------------------------------------------


def format_weight(w: float) -> str:
    return repr(float(w))


def write_text(a: Wfsa, stream: TextIO) -> None:
    """One arc per line ``src<TAB>dst<TAB>label<TAB>weight``, then one line
    ``state<TAB>final_weight`` per final state. The start state is the source
    of the first arc line."""
    if a.arcs and a.arcs[0].src != a.start:
        raise ValueError("text format requires the first arc to leave the start state")
    for arc in a.arcs:
        stream.write(f"{arc.src}\t{arc.dst}\t{a.label_str(arc.label)}\t{format_weight(arc.weight)}\n")
    for s, w in a.finals:
        stream.write(f"{s}\t{format_weight(w)}\n")


def to_text(a: Wfsa) -> str:
    import io

    buf = io.StringIO()
    write_text(a, buf)
    return buf.getvalue()


def read_text(lines: Iterable[str], symbols: Optional[SymbolTable] = None) -> Wfsa:
    symbols = symbols if symbols is not None else SymbolTable()
    arcs: List[Arc] = []
    finals: Dict[int, float] = {}
    max_state = 0
    start: Optional[int] = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        fields = line.split("\t")
        try:
            if len(fields) == 4:
                src, dst = int(fields[0]), int(fields[1])
                label = EPSILON if fields[2] == EPS_SYMBOL else symbols.add(fields[2])
                arcs.append(Arc(src, dst, label, float(fields[3])))
                if start is None:
                    start = src
                max_state = max(max_state, src, dst)
            elif len(fields) == 2:
                s = int(fields[0])
                finals[s] = float(fields[1])
                max_state = max(max_state, s)
            else:
                raise ValueError
        except ValueError:
            raise ValueError(f"line {lineno}: malformed automaton line {line!r}") from None
    if start is None:
        start = min(finals) if finals else 0
    return Wfsa(max_state + 1, tuple(arcs), start, finals, symbols)


def best_path(a: Wfsa) -> Optional[PathScore]:
    """Highest-weight accepting path; ties go to the smaller label sequence."""
    best = None
    for p in enumerate_paths(a):
        if best is None or p.weight > best.weight:
            best = p
    return best


def semiring_fold(paths: Sequence[PathScore], semiring="log") -> float:
    return get_semiring(semiring).sum(p.weight for p in paths)
