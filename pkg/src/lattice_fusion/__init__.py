"""Word N-gram language models for character-level decoding.

Characters are scored by summing (or maximising) over every segmentation
into vocabulary words, and the resulting per-character log-posteriors are
fused into beam search.
"""

from .decoder import (
    FusionConfig,
    Hypothesis,
    decode_frame_sync,
    decode_label_sync,
    edit_distance_cer,
    rescore_nbest,
)
from .lattice import CoverageError, SegmentationLattice, Vocabulary, build_lattice, extend_lattice
from .ngram import NGramModel, OovError, parse_arpa, train_toy_lm, write_arpa
from .scorer import CharLmScorer, PrefixScorerState, WordLatticeScorer
from .wfsa import LOG, TROPICAL, Wfsa, enumerate_paths, forward_score, intersect_with_lm

__version__ = "0.1.0"

__all__ = [
    "CharLmScorer",
    "CoverageError",
    "FusionConfig",
    "Hypothesis",
    "LOG",
    "NGramModel",
    "OovError",
    "PrefixScorerState",
    "SegmentationLattice",
    "TROPICAL",
    "Vocabulary",
    "Wfsa",
    "WordLatticeScorer",
    "build_lattice",
    "decode_frame_sync",
    "decode_label_sync",
    "edit_distance_cer",
    "enumerate_paths",
    "extend_lattice",
    "forward_score",
    "intersect_with_lm",
    "parse_arpa",
    "rescore_nbest",
    "train_toy_lm",
    "write_arpa",
]
