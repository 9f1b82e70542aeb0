"""Throughput and scaling measurements, plus the bundled toy pipeline."""

from __future__ import annotations

import gc
import time
from importlib import resources
from typing import Dict, List, Optional, Sequence

import numpy as np

from .decoder import FrameOracle, FusionConfig, decode_frame_sync, synthetic_posteriors
from .lattice import Vocabulary
from .ngram import BOS, EOS, UNK, NGramModel, train_toy_lm
from .scorer import WordLatticeScorer

DEFAULT_LENGTHS = (100, 200, 400)


def toy_corpus_lines() -> List[str]:
    text = resources.files("lattice_fusion").joinpath("data/toy_corpus.txt").read_text(encoding="utf-8")
    return [line for line in text.splitlines() if line.strip()]


def decoder_vocab(model: NGramModel, extra_chars: Sequence[str] = ()) -> Vocabulary:
    """LM words plus every character they contain, so any string over those
    characters has at least the all-single-character segmentation."""
    words = {w for w in model.words() if w not in (BOS, EOS, UNK)}
    chars = {c for w in words for c in w} | set(extra_chars)
    return Vocabulary.from_words(words | chars)


def toy_pipeline(order: int = 3):
    model = train_toy_lm(toy_corpus_lines(), order=order)
    return model, decoder_vocab(model)


def random_sequences(vocab: Vocabulary, count: int, length: int, seed: int) -> List[str]:
    """Concatenate random vocabulary words, cut to exactly ``length`` characters."""
    rng = np.random.default_rng(seed)
    words = sorted(vocab.words)
    out = []
    for _ in range(count):
        parts: List[str] = []
        n = 0
        while n < length:
            w = words[int(rng.integers(len(words)))]
            parts.append(w)
            n += len(w)
        out.append("".join(parts)[:length])
    return out


def time_incremental(scorer: WordLatticeScorer, sequences: Sequence[str]) -> float:
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        start = time.perf_counter()
        for seq in sequences:
            state = scorer.init_state()
            for c in seq:
                state, _ = scorer.advance(state, c)
        return time.perf_counter() - start
    finally:
        if gc_was_enabled:
            gc.enable()


def scaling(scorer: WordLatticeScorer, lengths: Sequence[int] = DEFAULT_LENGTHS, count: int = 20,
            repeats: int = 5, seed: int = 0) -> Dict[int, float]:
    """Total incremental scoring time per sequence length.

    Every length scores prefixes of the same sequences. Each sequence is
    timed on its own and keeps its best of ``repeats``. All lengths of one
    sequence are timed back to back, so load bursts hit them alike.
    """
    base = random_sequences(scorer.vocab, count, max(lengths), seed)
    time_incremental(scorer, base)  # warm the LM transition cache
    best = {n: [float("inf")] * count for n in lengths}
    for _ in range(repeats):
        for i, seq in enumerate(base):
            for n in lengths:
                best[n][i] = min(best[n][i], time_incremental(scorer, [seq[:n]]))
    return {n: sum(best[n]) for n in lengths}


def run_bench(scorer: WordLatticeScorer, corpus: Optional[Sequence[str]] = None, seed: int = 0,
              lengths: Sequence[int] = DEFAULT_LENGTHS, count: int = 20, repeats: int = 5,
              cfg: Optional[FusionConfig] = None) -> dict:
    if corpus is None:
        corpus = ["".join(line.split()) for line in toy_corpus_lines()]
    corpus = [line for line in corpus if line]
    if not corpus:
        return {}
    cfg = cfg or FusionConfig(mode="frame")

    elapsed = time_incremental(scorer, corpus)
    chars = sum(len(s) for s in corpus)

    # decode latency on synthetic posteriors built from the corpus itself
    tokens = sorted({c for s in corpus for c in s}) + ["<blank>"]
    index = {t: i for i, t in enumerate(tokens)}
    rng = np.random.default_rng(seed)
    latencies = []
    for s in corpus:
        matrix = synthetic_posteriors([index[c] for c in s], len(tokens), rng)
        oracle = FrameOracle(matrix, tokens)
        start = time.perf_counter()
        decode_frame_sync(oracle, cfg, scorer)
        latencies.append(time.perf_counter() - start)

    times = scaling(scorer, lengths, count, repeats, seed)
    base = lengths[0]
    return {
        "seed": seed,
        "utterances": len(corpus),
        "processed_chars": chars,
        "chars_per_second": chars / elapsed if elapsed > 0 else float("inf"),
        "decode_latency_s": {
            "p50": float(np.percentile(latencies, 50)),
            "p90": float(np.percentile(latencies, 90)),
            "max": float(max(latencies)),
        },
        "scaling": {
            "lengths": list(lengths),
            "sequences_per_length": count,
            "seconds": [times[n] for n in lengths],
            "time_ratio_vs_linear": [(times[n] / times[base]) / (n / base) for n in lengths],
        },
    }
