"""FNMR under increasing random rotation and translation of probe images.

References (the lowest sample id of each instance) stay clean; every other
sample is a probe.  The decision threshold is frozen from the unperturbed run
at the requested FMR, and each (t, r) cell reports the FNMR of perturbed
probes against their clean references at that threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from fplfix.comparator import ScoreSet
from fplfix.dataset_io import SampleRecord
from fplfix.metrics import operating_point
from fplfix.pipeline import ExtractorConfig, Reducer, embed_images, fit_reducer
from fplfix.preprocess import AugmentationParams, augment

DEFAULT_STEPS = (0, 10, 20, 30, 40, 50)


@dataclass(frozen=True)
class GridConfig:
    r_values: tuple[float, ...] = DEFAULT_STEPS
    t_values: tuple[float, ...] = DEFAULT_STEPS
    fmr_target: float = 0.001
    seed: int = 0


@dataclass
class PerturbationGrid:
    r_values: list[float]
    t_values: list[float]
    fnmr: np.ndarray  # (len(t_values), len(r_values))
    fmr_target: float
    seed: int
    threshold: float
    baseline_fnmr: float
    resolved: bool = True
    meta: dict = field(default_factory=dict)

    def rows(self):
        """(t, r, fnmr) triples, t-major."""
        for i, t in enumerate(self.t_values):
            for j, r in enumerate(self.r_values):
                yield t, r, float(self.fnmr[i, j])


def split_references(records: Sequence[SampleRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Indices of references (lowest sample id per instance) and of probes."""
    best: dict[tuple[int, int], int] = {}
    for i, r in enumerate(records):
        j = best.get(r.instance_id)
        if j is None or r.sample_id < records[j].sample_id:
            best[r.instance_id] = i
    refs = np.array(sorted(best.values()), dtype=np.int64)
    probes = np.setdiff1d(np.arange(len(records)), refs)
    return refs, probes


def cell_seed(seed: int, t_index: int, r_index: int, probe: int) -> int:
    ss = np.random.SeedSequence([int(seed), 0xF4, t_index, r_index, int(probe)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _scores(probe_vecs, probe_inst, ref_vecs, ref_inst, ok=None):
    sims = np.clip(probe_vecs @ ref_vecs.T, -1.0, 1.0)
    same = probe_inst[:, None] == ref_inst[None, :]
    if ok is not None:
        # failed extraction never matches
        sims[~ok] = -np.inf
    return sims[same], sims[~same]


def perturbation_study(
    images: Sequence,
    records: Sequence[SampleRecord],
    config: ExtractorConfig,
    grid: GridConfig = GridConfig(),
    dim: int | None = None,
    threads: int = 1,
) -> PerturbationGrid:
    """Run the rotation x translation grid.

    ``images`` is indexable in record order and may hold arrays or zero-arg
    loaders.  With ``dim`` the branch embedding is reduced by a projection
    fitted on the clean corpus.
    """
    if len(images) != len(records):
        raise ValueError("images and records differ in length")
    refs, probes = split_references(records)
    if probes.size == 0:
        raise ValueError("need at least one instance with two or more samples")
    inst_ids = {}
    inst = np.array([inst_ids.setdefault(r.instance_id, len(inst_ids)) for r in records])

    def load(i):
        img = images[i]
        return img() if callable(img) else img

    raw, _ = embed_images(images, config, threads)
    reducer: Reducer | None = fit_reducer(raw, dim, config) if dim else None

    def finish(vecs: np.ndarray) -> np.ndarray:
        v = vecs.astype(np.float64)
        return reducer.apply(v) if reducer else v

    ref_vecs = finish(raw[refs])
    base_probe = finish(raw[probes])
    mated, non = _scores(base_probe, inst[probes], ref_vecs, inst[refs])
    op = operating_point(ScoreSet(mated, non), grid.fmr_target)
    threshold = op.threshold

    fnmr = np.zeros((len(grid.t_values), len(grid.r_values)))
    for ti, t in enumerate(grid.t_values):
        for ri, r in enumerate(grid.r_values):
            if t == 0 and r == 0:
                probe_vecs, ok = base_probe, None
            else:
                perturbed = [
                    augment(load(p), AugmentationParams(r, t, 0.0, 0.0, cell_seed(grid.seed, ti, ri, p)))
                    for p in probes
                ]
                pr, ok = embed_images(perturbed, config, threads, on_degenerate="mask")
                probe_vecs = np.zeros((len(probes), ref_vecs.shape[1]))
                if ok.any():
                    probe_vecs[ok] = finish(pr[ok])
            m, _ = _scores(probe_vecs, inst[probes], ref_vecs, inst[refs], ok)
            fnmr[ti, ri] = np.count_nonzero(m < threshold) / m.size

    return PerturbationGrid(
        list(grid.r_values),
        list(grid.t_values),
        fnmr,
        grid.fmr_target,
        grid.seed,
        threshold,
        op.fnmr,
        op.resolved,
        {"branch": config.branch, "dim": dim, "references": int(refs.size), "probes": int(probes.size)},
    )
