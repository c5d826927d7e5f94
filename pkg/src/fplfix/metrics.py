"""Verification and closed-set identification metrics.

Error rates use empirical step functions, no interpolation:

    FMR(t)  = |{non-mated >= t}| / |non-mated|
    FNMR(t) = |{mated < t}| / |mated|
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from fplfix.comparator import ScoreSet
from fplfix.dataset_io import EmbeddingArchive
from fplfix.errors import ResolutionWarning

DET_FMR_MAX = 0.4
DET_FMR_FLOOR = 1e-6


@dataclass
class OperatingPoint:
    threshold: float
    fmr: float
    fnmr: float
    target_fmr: float
    resolved: bool = True


@dataclass
class VerificationReport:
    eer: float
    eer_threshold: float
    fnmr_at: dict[float, float]
    det: list[tuple[float, float]]
    resolved: dict[float, bool] = field(default_factory=dict)
    n_mated: int = 0
    n_non_mated: int = 0

    def to_dict(self) -> dict:
        return {
            "eer": self.eer,
            "eer_threshold": self.eer_threshold,
            "fnmr_at_fmr": {repr(k): v for k, v in self.fnmr_at.items()},
            "resolved": {repr(k): v for k, v in self.resolved.items()},
            "n_mated": self.n_mated,
            "n_non_mated": self.n_non_mated,
            "det_points": len(self.det),
        }


@dataclass
class IdentificationReport:
    ranks: np.ndarray
    per_fold: np.ndarray
    fold_count: int

    @property
    def std(self) -> np.ndarray:
        return self.per_fold.std(axis=0)


def _split(scores: ScoreSet) -> tuple[np.ndarray, np.ndarray]:
    if scores.mated.size == 0 or scores.non_mated.size == 0:
        raise ValueError("both mated and non-mated score lists must be non-empty")
    return np.sort(scores.mated), np.sort(scores.non_mated)


def fmr_fnmr(scores: ScoreSet, threshold: float) -> tuple[float, float]:
    mated, non = _split(scores)
    false_match = non.size - np.searchsorted(non, threshold, side="left")
    false_non_match = np.searchsorted(mated, threshold, side="left")
    return false_match / non.size, false_non_match / mated.size


def eer(scores: ScoreSet) -> tuple[float, float]:
    """Equal error rate over all distinct score values as thresholds.

    Picks the candidate with the smallest |FMR - FNMR|; ties go to the
    smaller mean error, then the lower threshold.  Returns
    ``(0.5 * (FMR + FNMR), threshold)`` at that candidate.  Comparisons are
    done on integer counts so ties are exact.
    """
    mated, non = _split(scores)
    nm, nn = mated.size, non.size
    cand = np.unique(np.concatenate([mated, non]))
    fm = (nn - np.searchsorted(non, cand, side="left")).astype(np.int64)
    fnm = np.searchsorted(mated, cand, side="left").astype(np.int64)
    # scaled by nm * nn to stay in integers
    gap = np.abs(fm * nm - fnm * nn)
    total = fm * nm + fnm * nn
    best = np.lexsort((cand, total, gap))[0]
    return 0.5 * (fm[best] / nn + fnm[best] / nm), float(cand[best])


def operating_point(scores: ScoreSet, target_fmr: float) -> OperatingPoint:
    """Lowest threshold whose FMR does not exceed ``target_fmr``.

    With k = floor(target * |non-mated|) tolerated false matches, the
    threshold sits just above the (k+1)-th highest non-mated score; it is
    reported as the next larger observed score (or the next float up).
    """
    if not 0.0 < target_fmr < 1.0:
        raise ValueError("target FMR must lie in (0, 1)")
    mated, non = _split(scores)
    nn = non.size
    resolved = nn * target_fmr >= 1.0 - 1e-9
    k = int(math.floor(target_fmr * nn + 1e-9))
    anchor = non[nn - 1 - k]
    above = np.concatenate([mated[mated > anchor], non[non > anchor]])
    threshold = float(above.min()) if above.size else float(np.nextafter(anchor, np.inf))
    fm = nn - np.searchsorted(non, threshold, side="left")
    fnm = np.searchsorted(mated, threshold, side="left")
    return OperatingPoint(threshold, fm / nn, fnm / mated.size, target_fmr, bool(resolved))


def fnmr_at_fmr(scores: ScoreSet, target_fmr: float) -> float:
    op = operating_point(scores, target_fmr)
    if not op.resolved:
        warnings.warn(
            f"{scores.non_mated.size} non-mated scores cannot resolve FMR={target_fmr:g}",
            ResolutionWarning,
            stacklevel=2,
        )
    return op.fnmr


def det_curve(scores: ScoreSet, n_points: int = 100) -> list[tuple[float, float]]:
    """(FMR, FNMR) pairs at log-spaced FMR targets, each an attainable threshold."""
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    mated, non = _split(scores)
    hi = DET_FMR_MAX
    lo = min(max(1.0 / non.size, DET_FMR_FLOOR), hi)
    targets = np.geomspace(lo, hi, n_points)
    points = set()
    for t in targets:
        op = operating_point(ScoreSet(mated, non), float(min(t, 1 - 1e-12)))
        points.add((op.fmr, op.fnmr))
    return sorted(points, key=lambda p: (p[0], -p[1]))


def verification_report(scores: ScoreSet, fmr_targets=(0.001,), det_points: int = 100) -> VerificationReport:
    e, t = eer(scores)
    fnmr_at, resolved = {}, {}
    for target in fmr_targets:
        op = operating_point(scores, target)
        fnmr_at[target] = op.fnmr
        resolved[target] = op.resolved
    return VerificationReport(
        eer=e,
        eer_threshold=t,
        fnmr_at=fnmr_at,
        det=det_curve(scores, det_points),
        resolved=resolved,
        n_mated=int(scores.mated.size),
        n_non_mated=int(scores.non_mated.size),
    )


# ------------------------------------------------------------ identification


def rank_of_true(probe_vecs: np.ndarray, probe_labels: np.ndarray, gallery_vecs: np.ndarray,
                 gallery_labels: np.ndarray) -> np.ndarray:
    """1-based rank of each probe's own instance; ties count against the probe."""
    sims = probe_vecs @ gallery_vecs.T
    col = {lab: i for i, lab in enumerate(gallery_labels.tolist())}
    true_idx = np.array([col[lab] for lab in probe_labels.tolist()])
    true_score = sims[np.arange(len(sims)), true_idx]
    ahead = (sims >= true_score[:, None]).sum(axis=1) - 1
    return ahead + 1


def closed_set_identification(
    archive: EmbeddingArchive,
    folds: int = 10,
    max_rank: int = 20,
    seed: int = 0,
    labels: np.ndarray | None = None,
) -> IdentificationReport:
    """Rank-k identification rates over ``folds`` gallery/probe splits.

    Each fold enrols one sample per instance as the gallery template, cycling
    through a seeded permutation of that instance's samples so templates are
    not reused until all samples have served once.  Every other sample is a
    probe.  ``labels`` overrides the instance labels (used for shuffled-label
    controls).
    """
    labels = archive.instance_labels() if labels is None else np.asarray(labels)
    uniq = np.unique(labels)
    if not 1 <= max_rank <= uniq.size:
        raise ValueError(f"max_rank must be in 1..{uniq.size}")
    members = {lab: np.flatnonzero(labels == lab) for lab in uniq.tolist()}
    single = [lab for lab, idx in members.items() if idx.size < 2]
    if single:
        raise ValueError(f"{len(single)} instance(s) have a single sample")

    rng = np.random.default_rng(seed)
    perms = {lab: rng.permutation(idx) for lab, idx in members.items()}
    vecs = archive.vectors.astype(np.float64)

    per_fold = np.zeros((folds, max_rank))
    for f in range(folds):
        gallery = np.array([perms[lab][f % perms[lab].size] for lab in uniq.tolist()])
        probe_mask = np.ones(len(labels), dtype=bool)
        probe_mask[gallery] = False
        probes = np.flatnonzero(probe_mask)
        ranks = rank_of_true(vecs[probes], labels[probes], vecs[gallery], labels[gallery])
        per_fold[f] = [(ranks <= k).mean() for k in range(1, max_rank + 1)]
    return IdentificationReport(per_fold.mean(axis=0), per_fold, folds)
