import io
import math
import random

import pytest

from conftest import WUKONG_WORDS, wukong_lm_text
from oracles import brute_sequence_score, direct_chain, direct_cond, raw_arpa
from lattice_fusion.bench import decoder_vocab, random_sequences
from lattice_fusion.lattice import Vocabulary
from lattice_fusion.ngram import OovError, parse_arpa, to_arpa, train_toy_lm
from lattice_fusion.scorer import (
    CharLmScorer,
    NullScorer,
    WordLatticeScorer,
    posterior,
    telescope,
)
from lattice_fusion.wfsa import enumerate_paths, intersect_with_lm


def unigram_arpa(probs):
    body = "".join(f"{math.log10(p)!r} {w}\n" for w, p in probs.items())
    return f"\\data\\\nngram 1={len(probs)}\n\n\\1-grams:\n{body}\n\\end\\\n"


@pytest.fixture
def ab_scorers():
    lm = parse_arpa(io.StringIO(unigram_arpa({"a": 0.5, "b": 0.3, "ab": 0.2})))
    vocab = Vocabulary.from_words(["a", "b", "ab"])
    return {sr: WordLatticeScorer(lm, vocab, semiring=sr, bos=False, eos=False) for sr in ("log", "tropical")}


@pytest.fixture(scope="module")
def wukong_setup():
    model = train_toy_lm(wukong_lm_text(), order=3)
    vocab = decoder_vocab(model)
    return model, vocab, raw_arpa(to_arpa(model))


class TestBatch:
    def test_two_segmentations(self, ab_scorers):
        assert abs(ab_scorers["log"].score_sequence("ab") - math.log(0.35)) <= 1e-12
        assert abs(ab_scorers["tropical"].score_sequence("ab") - math.log(0.2)) <= 1e-12

    def test_single_segmentation_same_in_both(self, ab_scorers):
        assert ab_scorers["log"].score_sequence("ba") == ab_scorers["tropical"].score_sequence("ba")
        assert ab_scorers["log"].score_sequence("ba") == pytest.approx(math.log(0.15), abs=1e-12)

    def test_uncovered_is_neg_inf(self, ab_scorers):
        assert ab_scorers["log"].score_sequence("ac") == -math.inf

    def test_matches_path_enumeration(self, wukong_setup):
        model, vocab, _ = wukong_setup
        sc = WordLatticeScorer(model, vocab)
        from lattice_fusion.lattice import build_lattice
        from oracles import fold

        for text in random_sequences(vocab, 30, 7, seed=3):
            qg = intersect_with_lm(build_lattice(text, vocab).fsa, model)
            weights = [p.weight for p in enumerate_paths(qg)]
            for sr in ("log", "tropical"):
                got = WordLatticeScorer(model, vocab, semiring=sr).score_sequence(text)
                assert abs(got - fold(weights, sr)) <= 1e-9
            assert sc.score_sequence(text) >= WordLatticeScorer(model, vocab, semiring="tropical").score_sequence(text)

    def test_brute_force_oracle(self, wukong_setup):
        model, vocab, raw = wukong_setup
        for text in random_sequences(vocab, 30, 6, seed=4):
            for sr in ("log", "tropical"):
                for eos in (False, True):
                    got = WordLatticeScorer(model, vocab, semiring=sr, eos=eos).score_sequence(text)
                    assert abs(got - brute_sequence_score(raw, 3, text, vocab.words, sr, eos=eos)) <= 1e-9


class TestIncremental:
    def test_init_state(self, bigram_lm):
        vocab = Vocabulary.from_words(["a", "b", "c"])
        on = WordLatticeScorer(bigram_lm, vocab, bos=True).init_state()
        off = WordLatticeScorer(bigram_lm, vocab, bos=False).init_state()
        (s_on,), (s_off,) = on.frontier[0], off.frontier[0]
        assert bigram_lm.context(s_on) == (bigram_lm.symbols.id("<s>"),)
        assert bigram_lm.context(s_off) == ()
        assert on.score == off.score == 0.0 and on.length == 0

    def test_single_word_extension(self, bigram_lm):
        sc = WordLatticeScorer(bigram_lm, Vocabulary.from_words(["a", "b", "c"]))
        st, post = sc.advance(sc.init_state(), "a")
        assert st.score == post == sc.score_sequence("a")

    def test_wukong_sequence(self, wukong_lm):
        sc = WordLatticeScorer(wukong_lm, Vocabulary.from_words(WUKONG_WORDS))
        st = sc.init_state()
        posts = []
        for c in "孙悟空":
            st, p = sc.advance(st, c)
            posts.append(p)
        assert abs(st.score - sc.score_sequence("孙悟空")) <= 1e-9
        assert telescope(posts) == st.score

    @pytest.mark.parametrize("semiring", ["log", "tropical"])
    def test_every_prefix_matches_batch(self, toy_lm, semiring):
        vocab = decoder_vocab(toy_lm)
        sc = WordLatticeScorer(toy_lm, vocab, semiring=semiring)
        rng = random.Random(1)
        for text in random_sequences(vocab, 60, 12, seed=8):
            text = text[:rng.randint(1, 12)]
            st = sc.init_state()
            posts = []
            for i, c in enumerate(text):
                st, p = sc.advance(st, c)
                posts.append(p)
                assert abs(st.score - sc.score_sequence(text[:i + 1])) <= 1e-9
            assert telescope(posts) == st.score
            final, again = sc.score_incremental(text)
            assert final == st.score and again == posts

    def test_frontier_window_bounded(self, toy_lm):
        vocab = decoder_vocab(toy_lm)
        sc = WordLatticeScorer(toy_lm, vocab)
        st, _ = sc.advance_text(sc.init_state(), random_sequences(vocab, 1, 50, seed=0)[0])
        assert len(st.frontier) == vocab.max_word_len
        assert len(st.window) == vocab.max_word_len - 1

    def test_branching_value_semantics(self, wukong_lm):
        sc = WordLatticeScorer(wukong_lm, Vocabulary.from_words(WUKONG_WORDS))
        parent, _ = sc.advance(sc.init_state(), "孙")
        snapshot = (parent.score, [dict(m) for m in parent.frontier])
        a, _ = sc.advance(parent, "悟")
        b, _ = sc.advance(parent, "空")
        assert (parent.score, [dict(m) for m in parent.frontier]) == snapshot
        assert a.score == sc.score_sequence("孙悟")
        assert b.score == sc.score_sequence("孙空")
        a2, _ = sc.advance(a, "空")
        assert b.score == sc.score_sequence("孙空")
        assert abs(a2.score - sc.score_sequence("孙悟空")) <= 1e-9

    def test_posterior_can_be_positive(self, ab_scorers):
        # "a" then "b": the word "ab" completes, adding mass P(ab)
        sc = ab_scorers["log"]
        st, p1 = sc.advance(sc.init_state(), "a")
        st, p2 = sc.advance(st, "b")
        assert p1 == pytest.approx(math.log(0.5))
        assert p2 == pytest.approx(math.log(0.35) - math.log(0.5))

    def test_dead_state(self, wukong_lm):
        sc = WordLatticeScorer(wukong_lm, Vocabulary.from_words(WUKONG_WORDS))
        st, p = sc.advance(sc.init_state(), "孙")
        dead, p = sc.advance(st, "猴")
        assert p == -math.inf and dead.dead
        assert sc.finalize(dead) == -math.inf
        # no word contains 猴, so nothing later can bridge the gap
        after, p = sc.advance(dead, "空")
        assert p == -math.inf

    def test_dead_then_revived(self):
        # "b" alone is not a word, "bc" is: prefix "ab" is dead, "abc" is live
        lm = parse_arpa(io.StringIO(unigram_arpa({"a": 0.5, "bc": 0.5})))
        sc = WordLatticeScorer(lm, Vocabulary.from_words(["a", "bc"]), bos=False)
        st, _ = sc.advance(sc.init_state(), "a")
        st, p = sc.advance(st, "b")
        assert p == -math.inf and st.dead
        st, p = sc.advance(st, "c")
        assert p == math.inf
        assert st.score == pytest.approx(math.log(0.25))
        assert st.score == sc.score_sequence("abc")


class TestFinalize:
    def test_eos_off(self, toy_lm):
        sc = WordLatticeScorer(toy_lm, decoder_vocab(toy_lm))
        st, _ = sc.advance_text(sc.init_state(), "孙悟空")
        assert sc.finalize(st) == st.score and sc.eos_term(st) == 0.0

    @pytest.mark.parametrize("semiring", ["log", "tropical"])
    def test_eos_on_matches_batch(self, toy_lm, semiring):
        vocab = decoder_vocab(toy_lm)
        sc = WordLatticeScorer(toy_lm, vocab, semiring=semiring, eos=True)
        for text in random_sequences(vocab, 40, 8, seed=12):
            st, _ = sc.advance_text(sc.init_state(), text)
            assert abs(sc.finalize(st) - sc.score_sequence(text)) <= 1e-9
            assert sc.finalize(st) == pytest.approx(st.score + sc.eos_term(st), abs=1e-12)

    def test_empty_sequence(self, bigram_lm):
        vocab = Vocabulary.from_words(["a", "b", "c"])
        assert WordLatticeScorer(bigram_lm, vocab).score_sequence("") == 0.0
        eos = WordLatticeScorer(bigram_lm, vocab, eos=True).score_sequence("")
        ids = bigram_lm.symbols.id
        assert eos == pytest.approx(bigram_lm.cond_log_prob([ids("<s>")], ids("</s>")))


class TestOov:
    def test_unk_mapping(self, bigram_lm):
        vocab = Vocabulary.from_words(["a", "b", "c", "d"])
        sc = WordLatticeScorer(bigram_lm, vocab)
        raw = raw_arpa(to_arpa(bigram_lm))
        assert sc.score_sequence("ad") == pytest.approx(direct_chain(raw, 2, ["a", "<unk>"]), abs=1e-12)

    def test_hard_error(self, bigram_lm):
        vocab = Vocabulary.from_words(["a", "b", "c", "d"])
        sc = WordLatticeScorer(bigram_lm, vocab, oov="error")
        with pytest.raises(OovError):
            sc.score_sequence("ad")
        with pytest.raises(OovError):
            sc.advance(sc.init_state(), "d")
        assert sc.score_sequence("ab") == WordLatticeScorer(bigram_lm, vocab).score_sequence("ab")

    def test_bad_policy(self, bigram_lm):
        with pytest.raises(ValueError):
            WordLatticeScorer(bigram_lm, oov="drop")


class TestPruning:
    def test_default_exact(self, toy_lm):
        vocab = decoder_vocab(toy_lm)
        exact = WordLatticeScorer(toy_lm, vocab)
        pruned = WordLatticeScorer(toy_lm, vocab, prune=True)
        # frontier maps here stay far below the threshold, so nothing is cut
        for text in random_sequences(vocab, 10, 30, seed=2):
            assert pruned.score_incremental(text)[0] == exact.score_incremental(text)[0]


class TestPosteriorHelper:
    def test_conventions(self):
        assert posterior(-1.0, -0.5) == -0.5
        assert posterior(-math.inf, -0.5) == -math.inf
        assert posterior(-math.inf, -math.inf) == -math.inf
        assert posterior(-2.0, -math.inf) == math.inf


class TestCharLm:
    def test_uniform(self):
        chars = "0123456789"
        lm = parse_arpa(io.StringIO(unigram_arpa({c: 0.1 for c in chars})))
        sc = CharLmScorer(lm, bos=False)
        st = sc.init_state()
        posts = []
        for c in "31415926":
            st, p = sc.advance(st, c)
            posts.append(p)
            assert abs(p - math.log(0.1)) <= 1e-12
        assert telescope(posts) == pytest.approx(sc.score_sequence("31415926"), abs=1e-12)

    def test_six_gram_chain(self):
        lines = [" ".join(s) for s in ["孙悟空打妖怪", "唐僧骑白马", "孙悟空保护唐僧", "妖怪打唐僧", "白马驮唐僧西行"]]
        lm = train_toy_lm(lines, order=6)
        raw = raw_arpa(to_arpa(lm))
        for eos in (False, True):
            sc = CharLmScorer(lm, bos=True, eos=eos)
            for text in ["孙悟空打唐僧", "白马打妖怪保护孙悟空", "僧"]:
                st = sc.init_state()
                hist = ["<s>"]
                total = 0.0
                for c in text:
                    st, p = sc.advance(st, c)
                    assert p == pytest.approx(direct_cond(raw, 6, hist, c), abs=1e-12)
                    hist.append(c)
                    total += p
                assert st.score == total
                assert sc.finalize(st) == pytest.approx(direct_chain(raw, 6, list(text), True, eos), abs=1e-12)

    def test_oov_character(self):
        lm = parse_arpa(io.StringIO(unigram_arpa({"a": 0.5, "b": 0.5})))
        assert CharLmScorer(lm, bos=False, oov="error").advance(CharLmScorer(lm).init_state(), "z")[1] == -math.inf


def test_null_scorer():
    sc = NullScorer()
    assert sc.advance(sc.init_state(), "x") == (None, 0.0)
    assert sc.finalize(None) == sc.score_sequence("abc") == 0.0
