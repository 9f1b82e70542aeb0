import io

import pytest

from lattice_fusion.lattice import Vocabulary
from lattice_fusion.ngram import parse_arpa, train_toy_lm
from lattice_fusion.bench import toy_corpus_lines

WUKONG_WORDS = ["孙", "悟", "空", "悟空", "孙悟空"]

# Three words; every bigram among them listed except "a a", "b b", "c c".
BIGRAM_ARPA = """\
\\data\\
ngram 1=6
ngram 2=8

\\1-grams:
-99 <s> -0.30103
-0.5228787 a -0.2
-0.69897 b -0.1
-0.69897 c -0.3
-1.0 </s>
-1.0 <unk>

\\2-grams:
-0.3 <s> a
-0.6 <s> b
-0.2 a b
-0.6 a c
-0.5 b a
-0.4 b c
-0.3 c a
-0.35 c b

\\end\\
"""

# A trigram model with some trigrams missing so queries exercise both
# backoff levels.
TRIGRAM_ARPA = """\
\\data\\
ngram 1=7
ngram 2=9
ngram 3=5

\\1-grams:
-99 <s> -0.4
-0.6 x -0.25
-0.7 y -0.15
-0.8 z -0.35
-0.9 xy -0.05
-1.1 </s>
-1.3 <unk>

\\2-grams:
-0.2 <s> x -0.1
-0.5 <s> xy -0.2
-0.3 x y -0.3
-0.45 y z -0.12
-0.6 z x -0.2
-0.25 xy z -0.07
-0.9 y </s>
-0.8 z </s>
-0.7 x x

\\3-grams:
-0.1 <s> x y
-0.2 x y z
-0.15 y z x
-0.05 <s> xy z
-0.3 xy z </s>

\\end\\
"""


@pytest.fixture
def wukong_vocab():
    return Vocabulary.from_words(WUKONG_WORDS)


@pytest.fixture
def bigram_lm():
    return parse_arpa(io.StringIO(BIGRAM_ARPA))


@pytest.fixture
def trigram_lm():
    return parse_arpa(io.StringIO(TRIGRAM_ARPA))


@pytest.fixture(scope="session")
def toy_lm():
    return train_toy_lm(toy_corpus_lines(), order=3)


def wukong_lm_text():
    """Witten-Bell trigram corpus using every word of the 孙悟空 vocabulary."""
    return ["孙悟空 是 猴子", "孙 悟空", "孙 悟 空", "悟空 孙悟空", "空 孙"]


@pytest.fixture(scope="session")
def wukong_lm():
    return train_toy_lm(wukong_lm_text(), order=3)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
