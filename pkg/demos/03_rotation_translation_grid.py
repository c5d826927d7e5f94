"""FNMR as probes get rotated and shifted further, threshold frozen at zero perturbation."""

from fplfix import synthgen
from fplfix.pipeline import ExtractorConfig
from fplfix.robustness import GridConfig, perturbation_study

corpus = synthgen.generate_corpus(identities=12, samples_per_identity=4, master_seed=5)
grid = perturbation_study(
    corpus.images,
    corpus.records,
    ExtractorConfig(branch="texture"),
    GridConfig(r_values=(0, 25, 50), t_values=(0, 25, 50), fmr_target=0.01, seed=0),
)
print(f"threshold {grid.threshold:.4f} (baseline FNMR {grid.baseline_fnmr:.3f})")
print("t \\ r " + " ".join(f"{r:>6g}" for r in grid.r_values))
for t, row in zip(grid.t_values, grid.fnmr):
    print(f"{t:>5g} " + " ".join(f"{v:6.3f}" for v in row))
