import time
from types import SimpleNamespace

import numpy as np
import pytest

from fplfix import synthgen
from fplfix.comparator import ScoreSet
from fplfix.dataset_io import EmbeddingArchive, SampleKey
from fplfix.pipeline import ExtractorConfig, embed_images


def make_archive(labels_per_instance, dim=8, seed=0):
    """Random unit vectors; ``labels_per_instance`` lists samples per instance."""
    rng = np.random.default_rng(seed)
    keys = []
    for inst, n in enumerate(labels_per_instance):
        for s in range(n):
            keys.append(SampleKey(inst // 10, inst % 10, s, "synthetic"))
    v = rng.normal(size=(len(keys), dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return EmbeddingArchive(dim, tuple(keys), v.astype(np.float32))


@pytest.fixture
def three_three():
    return ScoreSet(mated=[0.7, 0.8, 0.9], non_mated=[0.5, 0.6, 0.75])


@pytest.fixture(scope="session")
def texture_corpus():
    """Raw texture embeddings of a 100 x 12 synthetic corpus (seed 7)."""
    start = time.perf_counter()
    corpus = synthgen.generate_corpus(100, 12, 7)
    raw, ok = embed_images(corpus.images, ExtractorConfig(branch="texture"))
    assert ok.all()
    keys = tuple(r.key for r in corpus.records)
    archive = EmbeddingArchive(raw.shape[1], keys, raw)
    return SimpleNamespace(corpus=corpus, archive=archive, seconds=time.perf_counter() - start)


@pytest.fixture(scope="session")
def small_corpus():
    return synthgen.generate_corpus(6, 3, 11)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
