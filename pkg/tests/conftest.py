import itertools

import numpy as np
import pytest

from cipherner.corpus import Corpus, SynthConfig, generate_synthetic


def brute_force_paths(K, T, mask=None):
    """Every tag path of length T allowed by ``mask`` (incl. START/STOP edges)."""
    for path in itertools.product(range(K), repeat=T):
        if mask is not None:
            start, stop = K, K + 1
            edges = [(start, path[0])] + list(zip(path, path[1:])) + [(path[-1], stop)]
            if not all(mask[a, b] for a, b in edges):
                continue
        yield list(path)


def brute_path_score(emissions, trans, path):
    K = emissions.shape[1]
    s = trans[K, path[0]] + trans[path[-1], K + 1]
    s += sum(emissions[t, y] for t, y in enumerate(path))
    s += sum(trans[a, b] for a, b in zip(path, path[1:]))
    return s


@pytest.fixture
def small_corpus() -> Corpus:
    return generate_synthetic(SynthConfig(n_sentences=30, vocab_size=80, max_len=10), seed=11)


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
