"""Score a toy embedding archive and read off verification and identification numbers."""

import numpy as np

from fplfix.comparator import all_pairs_scores, op_count, workload_percent
from fplfix.dataset_io import EmbeddingArchive, SampleKey
from fplfix.metrics import closed_set_identification, eer, fnmr_at_fmr

rng = np.random.default_rng(0)

# 50 fingers, 6 impressions each: a per-finger centre plus impression noise
centres = rng.normal(size=(50, 64))
vecs = np.repeat(centres, 6, axis=0) + 1.4 * rng.normal(size=(300, 64))
vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
keys = tuple(SampleKey(i // 10, i % 10, s) for i in range(50) for s in range(6))
archive = EmbeddingArchive(64, keys, vecs.astype(np.float32))

scores = all_pairs_scores(archive)
print("mated pairs:", len(scores.mated), " non-mated pairs:", len(scores.non_mated))

value, threshold = eer(scores)
print(f"EER {value:.4f} at threshold {threshold:.4f}")
print(f"FNMR at FMR 0.1%: {fnmr_at_fmr(scores, 0.001):.4f}")

rep = closed_set_identification(archive, folds=10, max_rank=5, seed=0)
for k, (m, s) in enumerate(zip(rep.ranks, rep.std), start=1):
    print(f"rank-{k}: {m:.3f} +/- {s:.3f}")

# a comparison costs N multiplications and N - 1 additions
for n in (64, 512, 2048):
    print(n, op_count(n), f"{workload_percent(n, 2048):.2f}%")
