"""Texture embeddings of a small synthetic corpus, reduced to several sizes.

Takes a minute or two on one core.
"""

import numpy as np

from fplfix import synthgen
from fplfix.cli import run_sweep
from fplfix.pipeline import ExtractorConfig, embed_images

corpus = synthgen.generate_corpus(identities=30, samples_per_identity=8, master_seed=3)
raw, ok = embed_images(corpus.images, ExtractorConfig(branch="texture"))
keys = [r.key for r in corpus.records]
print("raw texture embedding:", raw.shape)

# projections are fitted on half the fingers and scored on the other half
for n, ops, fnmr, e in run_sweep(raw, keys, [8, 16, 32, 64], fmr_target=0.01, seed=0):
    print(f"N={n:4d} ops={ops:5d} FNMR@1%={fnmr:.3f} EER={e:.3f}")

# shuffled labels give the chance level for comparison
shuffled = [keys[i] for i in np.random.default_rng(1).permutation(len(keys))]
print("shuffled control EER:", round(run_sweep(raw, shuffled, [32], 0.01, seed=0)[0][3], 3))
