"""``lattice-fusion`` command line.

Exit codes: 0 success, 1 other failure, 2 usage, 3 parse error, 4 coverage
error, 5 dimension mismatch, 6 out-of-vocabulary, 7 batch/incremental
disagreement.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, TextIO

import numpy as np

from . import __version__
from .bench import DEFAULT_LENGTHS, decoder_vocab, run_bench, toy_corpus_lines
from .decoder import (
    DimensionError,
    FormatError,
    FrameOracle,
    FusionConfig,
    MatrixLabelOracle,
    NoHypothesisError,
    decode,
    format_row,
    read_matrix,
    read_nbest,
    read_token_table,
    rescore_nbest,
    synthetic_posteriors,
    write_matrix,
)
from .lattice import CoverageError, Vocabulary, build_lattice, segment_longest_match
from .ngram import ArpaParseError, OovError, parse_arpa, train_toy_lm, write_arpa
from .scorer import CharLmScorer, NullScorer, WordLatticeScorer
from .wfsa import write_text

logger = logging.getLogger("lattice_fusion")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_COVERAGE = 4
EXIT_DIMENSION = 5
EXIT_OOV = 6
EXIT_MISMATCH = 7

AGREEMENT_TOL = 1e-9


class UsageError(Exception):
    pass


@dataclasses.dataclass(frozen=True)
class RunConfig:
    subcommand: str = ""
    lm: Optional[str] = None
    vocab: Optional[str] = None
    input: Optional[str] = None
    output: Optional[str] = None
    tokens: Optional[str] = None
    lm_weight: float = 0.4
    beam: int = 10
    semiring: str = "log"
    order: int = 3
    bos: bool = True
    eos: bool = False
    oov: str = "unk"
    workers: int = 1
    explicit_backoff_fsa: bool = False
    prune: bool = False
    mode: str = "frame"
    lm_kind: str = "word-lattice"
    seed: int = 0

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in vars(args).items() if k in names and v is not None})

    def fusion(self, nbest: Optional[int] = None, max_symbols: Optional[int] = None) -> FusionConfig:
        return FusionConfig(lm_weight=self.lm_weight, beam=self.beam, semiring=self.semiring,
                            mode=self.mode, bos=self.bos, eos=self.eos, lm_kind=self.lm_kind,
                            nbest=nbest, max_symbols=max_symbols)


# -- I/O helpers -----------------------------------------------------------------


def read_text(path: Optional[str]) -> str:
    """Read UTF-8 text from ``path`` (``-`` or None for stdin); a BOM is an error."""
    if path in (None, "-"):
        data = sys.stdin.buffer.read()
        source = "<stdin>"
    else:
        data = Path(path).read_bytes()
        source = path
    if data.startswith(b"\xef\xbb\xbf"):
        raise FormatError(f"{source}: UTF-8 byte-order mark not allowed")
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"{source}: not valid UTF-8 ({e.reason} at byte {e.start})") from None


def read_lines(path: Optional[str]) -> List[str]:
    return read_text(path).splitlines()


class _Output:
    def __init__(self, path: Optional[str]):
        self.path = path
        self._f: Optional[TextIO] = None

    def __enter__(self) -> TextIO:
        if self.path in (None, "-"):
            return sys.stdout
        self._f = open(self.path, "w", encoding="utf-8", newline="\n")
        return self._f

    def __exit__(self, *exc):
        if self._f is not None:
            self._f.close()


def _check_paths(*paths: Optional[str]) -> None:
    for p in paths:
        if p not in (None, "-") and not Path(p).is_file():
            raise UsageError(f"no such file: {p}")


def _load_model(cfg: RunConfig):
    if cfg.lm is None:
        logger.info("no --lm given; training the bundled order-%d toy model", cfg.order)
        return train_toy_lm(toy_corpus_lines(), order=cfg.order)
    return parse_arpa(io.StringIO(read_text(cfg.lm)))


def _load_vocab(cfg: RunConfig, model) -> Vocabulary:
    if cfg.vocab is not None:
        return Vocabulary.from_lines(read_lines(cfg.vocab))
    if model is None:
        raise UsageError("need --vocab or --lm")
    return decoder_vocab(model)


def _word_scorer(cfg: RunConfig) -> WordLatticeScorer:
    model = _load_model(cfg)
    return WordLatticeScorer(model, _load_vocab(cfg, model), semiring=cfg.semiring, bos=cfg.bos,
                             eos=cfg.eos, oov=cfg.oov, prune=cfg.prune,
                             explicit_backoff=cfg.explicit_backoff_fsa)


def _fusion_lm(cfg: RunConfig):
    if cfg.lm_kind == "none":
        return NullScorer()
    if cfg.lm_kind == "char-ngram":
        return CharLmScorer(_load_model(cfg), bos=cfg.bos, eos=cfg.eos, oov=cfg.oov)
    return _word_scorer(cfg)


def _fmt(x: float) -> str:
    return repr(float(x))


# -- subcommands -------------------------------------------------------------------


def cmd_score(cfg: RunConfig, out: TextIO) -> int:
    """Per line: text, batch score, incremental score, posteriors."""
    _check_paths(cfg.lm, cfg.vocab, cfg.input)
    lines = read_lines(cfg.input)
    if not any(line.strip() for line in lines):
        return EXIT_OK
    scorer = _word_scorer(cfg)
    status = EXIT_OK
    for lineno, line in enumerate(lines, start=1):
        text = "".join(line.split())
        if not text:
            continue
        gap = build_lattice(text, scorer.vocab, strict=False).first_gap()
        if gap is not None:
            logger.error("line %d: no vocabulary word covers %r at position %d", lineno, text[gap], gap)
            status = EXIT_COVERAGE
        batch = scorer.score_sequence(text)
        incremental, posts = scorer.score_incremental(text)
        out.write(f"{text}\t{_fmt(batch)}\t{_fmt(incremental)}\t{' '.join(_fmt(p) for p in posts)}\n")
        if cfg.explicit_backoff_fsa:
            continue
        agree = (batch == incremental) or abs(batch - incremental) <= AGREEMENT_TOL
        if not agree:
            logger.error("line %d: batch %r and incremental %r disagree", lineno, batch, incremental)
            status = status or EXIT_MISMATCH
    return status


def cmd_lattice_dump(cfg: RunConfig, out: TextIO, text: Optional[str]) -> int:
    _check_paths(cfg.lm, cfg.vocab, cfg.input)
    if text is None:
        lines = [line for line in read_lines(cfg.input) if line.strip()]
        if not lines:
            raise UsageError("no input sequence")
        text = lines[0]
    text = "".join(text.split())
    model = _load_model(cfg) if cfg.vocab is None else None
    vocab = _load_vocab(cfg, model)
    write_text(build_lattice(text, vocab).fsa, out)
    return EXIT_OK


def _decode_one(args):
    utt, oracle, fusion, lm = args
    return utt, decode(oracle, fusion, lm)


def cmd_decode(cfg: RunConfig, out: TextIO, posteriors: Sequence[str], nbest: Optional[int],
               max_symbols: Optional[int]) -> int:
    _check_paths(cfg.lm, cfg.vocab, cfg.tokens, *posteriors)
    if cfg.tokens is None:
        raise UsageError("decode needs --tokens")
    tokens = read_token_table(read_lines(cfg.tokens))
    fusion = cfg.fusion(nbest=nbest, max_symbols=max_symbols)
    oracles = []
    for path in posteriors:
        matrix = read_matrix(read_lines(path))
        if matrix.shape[1] != len(tokens):
            raise DimensionError(f"{path}: {matrix.shape[1]} columns but {len(tokens)} tokens")
        oracle = FrameOracle(matrix, tokens) if cfg.mode == "frame" else MatrixLabelOracle(matrix, tokens)
        oracles.append((Path(path).stem, oracle))
    lm = None if cfg.lm_weight == 0.0 else _fusion_lm(cfg)
    jobs = [(utt, oracle, fusion, lm) for utt, oracle in oracles]
    with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
        results = list(pool.map(_decode_one, jobs))
    for utt, hyps in results:
        for rank, h in enumerate(hyps, start=1):
            out.write(format_row(utt, rank, h.delta, h.labels))
    return EXIT_OK


def cmd_rescore(cfg: RunConfig, out: TextIO) -> int:
    _check_paths(cfg.lm, cfg.vocab, cfg.input)
    nbest = read_nbest(read_lines(cfg.input))
    fusion = cfg.fusion()
    lm = None if cfg.lm_weight == 0.0 else _fusion_lm(cfg)
    for utt, entries in nbest.items():
        ranked = rescore_nbest([(toks, ac) for _, ac, toks in entries], fusion, lm)
        for rank, e in enumerate(ranked, start=1):
            out.write(format_row(utt, rank, e.score, e.tokens))
    return EXIT_OK


def cmd_segment(cfg: RunConfig, out: TextIO) -> int:
    _check_paths(cfg.lm, cfg.vocab, cfg.input)
    model = _load_model(cfg) if cfg.vocab is None else None
    vocab = _load_vocab(cfg, model)
    for line in read_lines(cfg.input):
        text = "".join(line.split())
        out.write(" ".join(segment_longest_match(text, vocab)) + "\n")
    return EXIT_OK


def cmd_train_lm(cfg: RunConfig, out: TextIO, smoothing: str, k: float) -> int:
    _check_paths(cfg.input)
    lines = read_lines(cfg.input) if cfg.input is not None else toy_corpus_lines()
    write_arpa(train_toy_lm(lines, order=cfg.order, smoothing=smoothing, k=k), out)
    return EXIT_OK


def cmd_synth(cfg: RunConfig, out: TextIO, reference: str, peak: float, noise: float) -> int:
    _check_paths(cfg.tokens)
    if cfg.tokens is None:
        raise UsageError("synth needs --tokens")
    tokens = read_token_table(read_lines(cfg.tokens))
    index = {t: i for i, t in enumerate(tokens[:-1])}
    try:
        ref = [index[t] for t in reference.split()] if " " in reference else [index[c] for c in reference]
    except KeyError as e:
        raise UsageError(f"reference token {e.args[0]!r} not in token table") from None
    rng = np.random.default_rng(cfg.seed)
    write_matrix(synthetic_posteriors(ref, len(tokens), rng, peak=peak, noise=noise, mode=cfg.mode), out)
    return EXIT_OK


def cmd_bench(cfg: RunConfig, out: TextIO, lengths: Sequence[int], count: int, repeats: int) -> int:
    _check_paths(cfg.lm, cfg.vocab, cfg.input)
    corpus = None
    if cfg.input is not None:
        corpus = ["".join(line.split()) for line in read_lines(cfg.input)]
    scorer = _word_scorer(cfg)
    report = run_bench(scorer, corpus, seed=cfg.seed, lengths=lengths, count=count, repeats=repeats,
                       cfg=cfg.fusion())
    out.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_show_config(cfg: RunConfig, out: TextIO) -> int:
    out.write(json.dumps(dataclasses.asdict(cfg), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------------


def _add_lm_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("language model")
    g.add_argument("--lm", help="ARPA language model (default: bundled toy model trained at --order)")
    g.add_argument("--vocab", help="segmentation vocabulary, one word per line "
                                   "(default: LM words plus their characters)")
    g.add_argument("--order", type=int, default=3, help="order of the bundled toy model (default: 3)")
    g.add_argument("--semiring", choices=("log", "tropical"), default="log",
                   help="how segmentations combine (default: log)")
    g.add_argument("--bos", action=argparse.BooleanOptionalAction, default=True,
                   help="condition the first word on <s> (default: on)")
    g.add_argument("--eos", action=argparse.BooleanOptionalAction, default=False,
                   help="add P(</s>|context) at the end (default: off)")
    g.add_argument("--oov", choices=("unk", "error"), default="unk",
                   help="vocabulary words missing from the LM: map to <unk> or fail (default: unk)")
    g.add_argument("--explicit-backoff-fsa", action="store_true",
                   help="batch scoring through an LM acceptor with epsilon backoff arcs")
    g.add_argument("--prune", action="store_true", help="prune large frontier maps (inexact)")


def _add_fusion_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("fusion")
    g.add_argument("--lm-weight", type=float, default=0.4, help="shallow-fusion LM weight (default: 0.4)")
    g.add_argument("--beam", type=int, default=10, help="beam size (default: 10)")
    g.add_argument("--lm-kind", choices=("word-lattice", "char-ngram", "none"), default="word-lattice",
                   help="LM used for fusion (default: word-lattice)")


def _add_io(p: argparse.ArgumentParser, input_help: str = "input file (default: stdin)") -> None:
    p.add_argument("-i", "--input", help=input_help)
    p.add_argument("-o", "--output", help="output file (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lattice-fusion",
        description="Score and decode character sequences with a word N-gram LM over segmentation lattices.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("score", help="batch and incremental scores per input line")
    _add_io(p, "one character sequence per line (default: stdin)")
    _add_lm_options(p)

    p = sub.add_parser("lattice-dump", help="print the segmentation lattice of one sequence")
    p.add_argument("text", nargs="?", help="character sequence (default: first line of --input)")
    _add_io(p)
    _add_lm_options(p)

    p = sub.add_parser("decode", help="beam search over posterior matrices")
    p.add_argument("posteriors", nargs="+", help="posterior matrix files; utterance id = file stem")
    p.add_argument("--tokens", required=True, help="token table, last entry blank (frame) or end (label)")
    p.add_argument("--mode", choices=("frame", "label"), default="frame", help="search mode (default: frame)")
    p.add_argument("--nbest", type=int, help="hypotheses per utterance (default: beam)")
    p.add_argument("--max-symbols", type=int, help="frame mode: max tokens per utterance (default: frames)")
    p.add_argument("--workers", type=int, default=1, help="utterances decoded in parallel (default: 1)")
    p.add_argument("-o", "--output", help="output TSV (default: stdout)")
    _add_fusion_options(p)
    _add_lm_options(p)

    p = sub.add_parser("rescore", help="rerank an N-best TSV")
    _add_io(p, "N-best TSV: utt<TAB>rank<TAB>acoustic<TAB>tokens (default: stdin)")
    _add_fusion_options(p)
    _add_lm_options(p)

    p = sub.add_parser("segment", help="greedy longest-match word segmentation")
    _add_io(p)
    _add_lm_options(p)

    p = sub.add_parser("train-lm", help="train a toy backoff model and write ARPA")
    _add_io(p, "segmented corpus, one sentence per line (default: bundled toy corpus)")
    p.add_argument("--order", type=int, default=3, help="N-gram order (default: 3)")
    p.add_argument("--smoothing", choices=("witten-bell", "add-k"), default="witten-bell")
    p.add_argument("-k", type=float, default=1.0, help="add-k constant (default: 1.0)")

    p = sub.add_parser("synth", help="noisy one-hot posteriors for a reference")
    p.add_argument("reference", help="reference characters, or space-separated tokens")
    p.add_argument("--tokens", required=True)
    p.add_argument("--mode", choices=("frame", "label"), default="frame")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--peak", type=float, default=5.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("-o", "--output")

    p = sub.add_parser("bench", help="throughput and length-scaling report")
    _add_io(p, "corpus of character sequences (default: bundled toy corpus)")
    _add_lm_options(p)
    _add_fusion_options(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lengths", type=int, nargs="+", default=list(DEFAULT_LENGTHS))
    p.add_argument("--sequences", type=int, default=20, help="sequences per length (default: 20)")
    p.add_argument("--repeats", type=int, default=5, help="timing repeats, best kept (default: 5)")

    p = sub.add_parser("show-config", help="print the resolved configuration as JSON")
    _add_lm_options(p)
    _add_fusion_options(p)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("LATTICE_FUSION_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def run(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    cfg = RunConfig.from_args(args)
    try:
        with _Output(getattr(args, "output", None)) as out:
            if cfg.subcommand == "score":
                return cmd_score(cfg, out)
            if cfg.subcommand == "lattice-dump":
                return cmd_lattice_dump(cfg, out, args.text)
            if cfg.subcommand == "decode":
                return cmd_decode(cfg, out, args.posteriors, args.nbest, args.max_symbols)
            if cfg.subcommand == "rescore":
                return cmd_rescore(cfg, out)
            if cfg.subcommand == "segment":
                return cmd_segment(cfg, out)
            if cfg.subcommand == "train-lm":
                return cmd_train_lm(cfg, out, args.smoothing, args.k)
            if cfg.subcommand == "synth":
                return cmd_synth(cfg, out, args.reference, args.peak, args.noise)
            if cfg.subcommand == "bench":
                return cmd_bench(cfg, out, args.lengths, args.sequences, args.repeats)
            if cfg.subcommand == "show-config":
                return cmd_show_config(cfg, out)
    except UsageError as e:
        logger.error("%s", e)
        return EXIT_USAGE
    except CoverageError as e:
        logger.error("%s", e)
        return EXIT_COVERAGE
    except DimensionError as e:
        logger.error("%s", e)
        return EXIT_DIMENSION
    except (ArpaParseError, FormatError) as e:
        logger.error("%s", e)
        return EXIT_PARSE
    except OovError as e:
        logger.error("%s", e)
        return EXIT_OOV
    except NoHypothesisError as e:
        logger.error("%s", e)
        return EXIT_FAILURE
    raise AssertionError(f"unhandled subcommand {cfg.subcommand}")


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
