"""Cosine comparison, exhaustive score generation and the workload model.

A single cosine comparison of two normalised N-dimensional embeddings costs
N multiplications and N - 1 additions, so ``op_count(N) = 2N - 1``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from fplfix.dataset_io import EmbeddingArchive

UNIT_TOL = 1e-6
# fixed row-block size so the summation layout never depends on worker count
BLOCK_ROWS = 512


@dataclass(eq=False)
class ScoreSet:
    """Mated and non-mated similarity scores.

    ``*_pairs`` hold index pairs into ``keys``; both are optional so that bare
    score lists (e.g. synthetic test data) are valid score sets too.
    """

    mated: np.ndarray
    non_mated: np.ndarray
    mated_pairs: np.ndarray | None = None
    non_mated_pairs: np.ndarray | None = None
    keys: tuple | None = None

    def __post_init__(self) -> None:
        self.mated = np.asarray(self.mated, dtype=np.float64).ravel()
        self.non_mated = np.asarray(self.non_mated, dtype=np.float64).ravel()


@dataclass(frozen=True)
class WorkloadPoint:
    n: int
    ops: int
    percent_of_baseline: float
    baseline: int
    performance: float | None = None


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    for name, v in (("a", a), ("b", b)):
        if abs(np.sqrt(np.dot(v, v)) - 1.0) > UNIT_TOL:
            raise ValueError(f"{name} is not unit norm")
    # elementwise product then index-order sum: symmetric in (a, b) bit for bit
    s = float(np.add.reduce(a * b))
    return min(1.0, max(-1.0, s))


def op_count(n: int) -> int:
    if n < 1:
        raise ValueError("embedding size must be >= 1")
    return 2 * n - 1


def workload_percent(n: int, n_base: int) -> float:
    return op_count(n) / op_count(n_base) * 100.0


def workload_table(sizes, baseline: int, performance=None) -> list[WorkloadPoint]:
    perf = performance or {}
    return [
        WorkloadPoint(n, op_count(n), workload_percent(n, baseline), baseline, perf.get(n))
        for n in sizes
    ]


# --------------------------------------------------------------- all pairs


def _pair_from_linear(k: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Decode row-major upper-triangle indices (i < j) of an n x n matrix."""
    k = np.asarray(k, dtype=np.int64)
    i = (n - 2 - np.floor(np.sqrt(-8.0 * k + 4.0 * n * (n - 1) - 7) / 2.0 - 0.5)).astype(np.int64)

    def start(row):
        return row * (2 * n - row - 1) // 2

    # guard against sqrt rounding at row boundaries
    i = np.where(start(i) > k, i - 1, i)
    i = np.where(start(i + 1) <= k, i + 1, i)
    j = k - start(i) + i + 1
    return i, j


def _block_scores(vecs: np.ndarray, lo: int, hi: int) -> np.ndarray:
    s = vecs[lo:hi] @ vecs.T
    return np.clip(s, -1.0, 1.0)


def all_pairs_scores(
    archive: EmbeddingArchive,
    non_mated_cap: int | None = None,
    seed: int = 0,
    threads: int = 1,
) -> ScoreSet:
    """Score every unordered sample pair, split by shared instance.

    Mated pairs are always exhaustive.  Non-mated pairs are exhaustive unless
    ``non_mated_cap`` is given, in which case a uniform sample of that many
    pairs (drawn with ``seed``) is scored.  Pairs come out in (i, j) order.
    """
    n = len(archive)
    if n == 0:
        raise ValueError("empty archive")
    labels = archive.instance_labels()
    vecs = archive.vectors.astype(np.float64)

    counts = np.bincount(labels)
    if counts.max() < 2:
        raise ValueError("no instance has two or more samples")
    n_mated = int(np.sum(counts * (counts - 1) // 2))
    n_non = n * (n - 1) // 2 - n_mated

    blocks = [(lo, min(lo + BLOCK_ROWS, n)) for lo in range(0, n, BLOCK_ROWS)]
    capped = non_mated_cap is not None and non_mated_cap < n_non

    def run(lo: int, hi: int):
        s = _block_scores(vecs, lo, hi)
        rows, cols = np.nonzero(np.triu(np.ones((hi - lo, n), dtype=bool), k=lo + 1))
        same = labels[lo + rows] == labels[cols]
        mp = np.stack([lo + rows[same], cols[same]], axis=1)
        out = [mp, s[rows[same], cols[same]]]
        if not capped:
            diff = ~same
            out += [np.stack([lo + rows[diff], cols[diff]], axis=1), s[rows[diff], cols[diff]]]
        return out

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: run(*b), blocks))
    else:
        parts = [run(*b) for b in blocks]

    mated_pairs = np.concatenate([p[0] for p in parts]).reshape(-1, 2)
    mated = np.concatenate([p[1] for p in parts])

    if capped:
        non_pairs = _sample_non_mated(labels, int(non_mated_cap), seed)
        a, b = vecs[non_pairs[:, 0]], vecs[non_pairs[:, 1]]
        non_mated = np.clip(np.einsum("ij,ij->i", a, b), -1.0, 1.0)
    else:
        non_pairs = np.concatenate([p[2] for p in parts]).reshape(-1, 2)
        non_mated = np.concatenate([p[3] for p in parts])

    return ScoreSet(mated, non_mated, mated_pairs, non_pairs, tuple(archive.keys))


def _sample_non_mated(labels: np.ndarray, cap: int, seed: int) -> np.ndarray:
    n = len(labels)
    total = n * (n - 1) // 2
    rng = np.random.default_rng(seed)
    chosen: np.ndarray = np.empty(0, dtype=np.int64)
    while len(chosen) < cap:
        need = cap - len(chosen)
        draw = rng.integers(0, total, size=max(2 * need, 64))
        i, j = _pair_from_linear(draw, n)
        draw = draw[labels[i] != labels[j]]
        # keep first occurrences in draw order, then top up
        merged = np.concatenate([chosen, draw])
        _, first = np.unique(merged, return_index=True)
        chosen = merged[np.sort(first)][:cap]
    i, j = _pair_from_linear(np.sort(chosen), n)
    return np.stack([i, j], axis=1)
