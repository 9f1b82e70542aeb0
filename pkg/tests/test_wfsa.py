import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TRIGRAM_ARPA
from oracles import dag_paths, direct_chain, fold, logsumexp, random_dag, raw_arpa
from lattice_fusion.lattice import Vocabulary, build_lattice
from lattice_fusion.ngram import SymbolTable
from lattice_fusion.wfsa import (
    EPSILON,
    LOG,
    TROPICAL,
    Arc,
    CycleError,
    TooManyPathsError,
    Wfsa,
    add_epsilon_self_loops,
    compose_explicit,
    dedupe_arcs,
    enumerate_paths,
    forward_score,
    intersect_with_lm,
    lm_to_fsa,
    log_add,
    path_count,
    read_text,
    to_text,
)


def chain(labels_weights, symbols=None):
    arcs = [Arc(i, i + 1, lab, w) for i, (lab, w) in enumerate(labels_weights)]
    return Wfsa(len(arcs) + 1, tuple(arcs), 0, {len(arcs): 0.0}, symbols)


def word_acceptor(sequences, symbols):
    """Acceptor for a set of word sequences as a trie."""
    arcs, finals, trie = [], {}, {(): 0}
    for seq in sequences:
        for i in range(len(seq)):
            key = tuple(seq[:i + 1])
            if key not in trie:
                trie[key] = len(trie)
                arcs.append(Arc(trie[key[:-1]], trie[key], symbols.add(seq[i]), 0.0))
        finals[trie[tuple(seq)]] = 0.0
    return Wfsa(len(trie), tuple(arcs), 0, finals, symbols)


class TestSemiring:
    def test_two_paths(self):
        a = Wfsa(2, (Arc(0, 1, 1, math.log(0.02)), Arc(0, 1, 2, math.log(0.01))), 0, {1: 0.0})
        assert abs(forward_score(a, "tropical") - math.log(0.02)) <= 1e-12
        assert abs(forward_score(a, "log") - math.log(0.03)) <= 1e-12

    def test_single_path_agrees(self):
        a = chain([(1, -0.3), (2, -1.2)])
        assert forward_score(a, LOG) == forward_score(a, TROPICAL) == -1.5

    def test_log_add_zero_and_nan(self):
        assert log_add(-math.inf, -math.inf) == -math.inf
        assert log_add(-math.inf, -2.0) == -2.0
        assert log_add(-1000.0, -1000.0) == pytest.approx(-1000.0 + math.log(2))
        assert LOG.sum([]) == -math.inf
        assert LOG.sum([-math.inf, -math.inf]) == -math.inf
        assert not math.isnan(LOG.sum([-1e308, -1e308]))

    def test_unknown_semiring(self):
        with pytest.raises(ValueError):
            forward_score(chain([(1, 0.0)]), "viterbi")


class TestForwardScore:
    def test_no_accepting_path(self):
        a = Wfsa(3, (Arc(0, 1, 1, 0.0),), 0, {2: 0.0})
        assert forward_score(a, LOG) == -math.inf
        assert enumerate_paths(a) == []

    def test_cycle_rejected(self):
        a = Wfsa(2, (Arc(0, 1, 1, 0.0), Arc(1, 0, 1, 0.0)), 0, {1: 0.0})
        with pytest.raises(CycleError):
            forward_score(a)

    def test_self_loops_ignored(self):
        a = chain([(1, -0.5), (2, -0.25)])
        assert forward_score(add_epsilon_self_loops(a)) == forward_score(a)

    def test_random_dags_match_enumeration(self):
        rng = random.Random(7)
        for _ in range(500):
            n, arcs, finals = random_dag(rng)
            a = Wfsa(n, tuple(Arc(*x) for x in arcs), 0, finals)
            paths = dag_paths(n, arcs, finals)
            for sr in ("log", "tropical"):
                expect = fold([w for _, w in paths], sr)
                got = forward_score(a, sr)
                if expect == -math.inf:
                    assert got == -math.inf
                else:
                    assert abs(got - expect) <= 1e-9
            assert forward_score(a, LOG) >= forward_score(a, TROPICAL) - 1e-12
            assert path_count(a) == len(paths)

    def test_normalised_diagnostic(self):
        a = Wfsa(2, (Arc(0, 1, 1, math.log(0.02)), Arc(0, 1, 2, math.log(0.01))), 0, {1: 0.0})
        assert forward_score(a, LOG, normalize=True) == pytest.approx(math.log(0.015), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10_000))
def test_log_dominates_tropical(seed):
    n, arcs, finals = random_dag(random.Random(seed))
    a = Wfsa(n, tuple(Arc(*x) for x in arcs), 0, finals)
    paths = dag_paths(n, arcs, finals)
    lg, tr = forward_score(a, LOG), forward_score(a, TROPICAL)
    assert lg >= tr - 1e-12
    if len(paths) == 1:
        assert lg == pytest.approx(tr, abs=1e-12)
    if len(paths) > 1:
        assert lg > tr


class TestEnumeratePaths:
    def test_weights_refold(self):
        rng = random.Random(3)
        for _ in range(100):
            n, arcs, finals = random_dag(rng)
            a = Wfsa(n, tuple(Arc(*x) for x in arcs), 0, finals)
            got = enumerate_paths(a)
            expect = sorted(dag_paths(n, arcs, finals))
            assert [p.labels for p in got] == [p for p, _ in expect]
            for p, (_, w) in zip(got, expect):
                assert abs(p.weight - w) <= 1e-12

    def test_limit(self):
        arcs = []
        for i in range(10):
            arcs += [Arc(i, i + 1, 1, 0.0), Arc(i, i + 1, 2, 0.0)]
        a = Wfsa(11, tuple(arcs), 0, {10: 0.0})
        with pytest.raises(TooManyPathsError):
            enumerate_paths(a, limit=1000)
        assert len(enumerate_paths(a, limit=1024)) == 1024

    def test_wukong_lattice_paths(self, wukong_vocab):
        lat = build_lattice("孙悟空", wukong_vocab)
        paths = enumerate_paths(lat.fsa)
        words = sorted(tuple(wukong_vocab.symbols.symbol(i) for i in p.labels) for p in paths)
        assert words == sorted([("孙", "悟", "空"), ("孙", "悟空"), ("孙悟空",)])


class TestEpsilonLoops:
    def test_counts(self, wukong_vocab):
        a = build_lattice("孙悟空", wukong_vocab).fsa
        looped = add_epsilon_self_loops(a)
        assert len(a.arcs) == 5 and len(looped.arcs) == 9
        assert sum(1 for x in looped.arcs if x.label == EPSILON and x.src == x.dst and x.weight == 0.0) == 4
        assert len(a.arcs) == 5  # original untouched

    def test_single_state(self):
        a = Wfsa(1, (), 0, {0: 0.0})
        assert add_epsilon_self_loops(a).arcs == (Arc(0, 0, EPSILON, 0.0),)

    def test_idempotent_after_dedupe(self, wukong_vocab):
        a = build_lattice("孙悟空", wukong_vocab).fsa
        once = add_epsilon_self_loops(a)
        assert dedupe_arcs(add_epsilon_self_loops(once)) == once


class TestIntersect:
    def test_single_sequence_chain(self, bigram_lm):
        sym = SymbolTable()
        q = word_acceptor([["a", "b"]], sym)
        lm = bigram_lm
        ids = lm.symbols.id
        expect = lm.cond_log_prob([ids("<s>")], ids("a")) + lm.cond_log_prob([ids("a")], ids("b"))
        assert forward_score(intersect_with_lm(q, lm, bos=True, eos=False)) == pytest.approx(expect, abs=1e-12)
        with_eos = expect + lm.cond_log_prob([ids("b")], ids("</s>"))
        assert forward_score(intersect_with_lm(q, lm, bos=True, eos=True)) == pytest.approx(with_eos, abs=1e-12)

    def test_empty_language(self, bigram_lm):
        sym = SymbolTable(["a"])
        q = Wfsa(3, (Arc(0, 1, sym.id("a"), 0.0),), 0, {2: 0.0}, sym)
        assert forward_score(intersect_with_lm(q, bigram_lm)) == -math.inf

    def test_unigram_lm_over_lattice(self, wukong_vocab):
        # unigram LM over the five words
        probs = {"孙": 0.3, "悟": 0.1, "空": 0.2, "悟空": 0.15, "孙悟空": 0.05}
        arpa = "\\data\\\nngram 1=5\n\n\\1-grams:\n" + "".join(
            f"{math.log10(p)!r} {w}\n" for w, p in probs.items()) + "\n\\end\\\n"
        import io
        from lattice_fusion.ngram import parse_arpa

        lm = parse_arpa(io.StringIO(arpa))
        qg = intersect_with_lm(build_lattice("孙悟空", wukong_vocab).fsa, lm, bos=False)
        segs = [("孙", "悟", "空"), ("孙", "悟空"), ("孙悟空",)]
        expect = logsumexp(sum(math.log(probs[w]) for w in s) for s in segs)
        assert abs(forward_score(qg, LOG) - expect) <= 1e-12

    def test_language_preserved_and_weights_exact(self, trigram_lm):
        raw = raw_arpa(TRIGRAM_ARPA)
        words = ["x", "y", "z", "xy"]
        rng = random.Random(11)
        for _ in range(50):
            seqs = {tuple(rng.choice(words) for _ in range(rng.randint(1, 4))) for _ in range(rng.randint(1, 6))}
            sym = SymbolTable()
            q = word_acceptor(sorted(seqs), sym)
            for eos in (False, True):
                qg = intersect_with_lm(q, trigram_lm, bos=True, eos=eos)
                got = {tuple(sym.symbol(i) for i in p.labels): p.weight for p in enumerate_paths(qg)}
                assert set(got) == seqs
                for s, w in got.items():
                    assert abs(w - direct_chain(raw, 3, s, bos=True, eos=eos)) <= 1e-12

    def test_oov_error(self, bigram_lm):
        from lattice_fusion.ngram import OovError

        sym = SymbolTable()
        q = word_acceptor([["zz"]], sym)
        assert forward_score(intersect_with_lm(q, bigram_lm)) == pytest.approx(
            bigram_lm.cond_log_prob([bigram_lm.symbols.id("<s>")], bigram_lm.symbols.id("<unk>")))
        with pytest.raises(OovError):
            intersect_with_lm(q, bigram_lm, oov="error")


class TestExplicitBackoff:
    def test_explicit_overcounts_backoff_routes(self, trigram_lm):
        sym = SymbolTable()
        q = word_acceptor([["x", "y", "z"]], sym)
        lazy = forward_score(intersect_with_lm(q, trigram_lm))
        explicit = compose_explicit(add_epsilon_self_loops(q), lm_to_fsa(trigram_lm), model=trigram_lm)
        paths = enumerate_paths(explicit)
        assert len(paths) > 1
        assert {p.labels for p in paths} == {tuple(sym.id(w) for w in "xyz")}
        # the lazy score is one of the routes: the one through listed entries
        assert any(abs(p.weight - lazy) <= 1e-12 for p in paths)
        assert forward_score(explicit, LOG) > lazy

    def test_tropical_at_least_lazy(self, toy_lm):
        vocab = Vocabulary.from_words(w for w in toy_lm.words() if w not in ("<s>", "</s>", "<unk>"))
        q = build_lattice("孙悟空打妖怪", vocab).fsa
        lazy = forward_score(intersect_with_lm(q, toy_lm), TROPICAL)
        g = lm_to_fsa(toy_lm)
        explicit = forward_score(compose_explicit(add_epsilon_self_loops(q), g, model=toy_lm), TROPICAL)
        assert explicit >= lazy - 1e-12


class TestTextFormat:
    def test_round_trip(self, wukong_vocab):
        a = build_lattice("孙悟空", wukong_vocab).fsa
        text = to_text(a)
        assert text.count("\n") == 6
        assert to_text(read_text(text.splitlines())) == text

    def test_random_round_trip(self):
        rng = random.Random(5)
        for _ in range(50):
            n, arcs, finals = random_dag(rng)
            sym = SymbolTable(["w1", "w2", "w3", "w4"])
            arcs = [(s, d, sym.id(f"w{lab}"), w) for s, d, lab, w in arcs]
            arcs.sort()
            if not arcs or arcs[0][0] != 0:
                continue  # format reads the start state off the first arc
            a = Wfsa(n, tuple(Arc(*x) for x in arcs), 0, finals, sym)
            text = to_text(a)
            again = read_text(text.splitlines())
            assert to_text(again) == text
            if a.arcs:
                assert forward_score(again) == forward_score(a)
