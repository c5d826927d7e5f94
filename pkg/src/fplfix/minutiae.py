"""Minutiae maps, pooled minutiae embeddings and a classical detector.

A minutia at (x, y) with direction theta contributes to channel c

    exp(-|p - (x, y)|^2 / (2 sigma_s^2)) * w_c(theta)

where ``w_c`` is a wrapped Gaussian in (theta - 2 pi c / 6), normalised to sum
to one over the six channels so every minutia carries the same total mass.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage
from skimage.morphology import skeletonize

from fplfix.errors import DegenerateInputError

N_CHANNELS = 6
SIGMA_S = 3.0
SIGMA_A = 2 * np.pi / 12
BORDER_MARGIN = 8


class Minutia(NamedTuple):
    x: float
    y: float
    theta: float  # radians, [0, 2 pi)
    kind: str = ""


@dataclass(eq=False)
class MinutiaeMap:
    values: np.ndarray  # (channels, height, width), non-negative

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[1:]


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=np.float64), 2 * np.pi)


def angular_weights(theta, sigma_a: float = SIGMA_A, channels: int = N_CHANNELS) -> np.ndarray:
    theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    centres = 2 * np.pi * np.arange(channels) / channels
    d = wrap_angle(theta[:, None] - centres[None, :])
    w = np.exp(-(d**2) / (2 * sigma_a**2))
    return w / w.sum(axis=1, keepdims=True)


def build_minutiae_map(
    minutiae,
    sigma_s: float = SIGMA_S,
    sigma_a: float = SIGMA_A,
    shape: tuple[int, int] = (299, 299),
    channels: int = N_CHANNELS,
) -> MinutiaeMap:
    """Superpose separable spatial/angular Gaussians, one per minutia."""
    h, w = shape
    mins = list(minutiae)
    if not mins:
        return MinutiaeMap(np.zeros((channels, h, w)))
    xy = np.array([(m[0], m[1]) for m in mins], dtype=np.float64)
    theta = np.array([m[2] for m in mins], dtype=np.float64)
    gx = np.exp(-((np.arange(w)[None, :] - xy[:, :1]) ** 2) / (2 * sigma_s**2))  # (M, w)
    gy = np.exp(-((np.arange(h)[None, :] - xy[:, 1:]) ** 2) / (2 * sigma_s**2))  # (M, h)
    aw = angular_weights(theta, sigma_a, channels)  # (M, C)
    values = np.einsum("mc,my,mx->cyx", aw, gy, gx)
    return MinutiaeMap(values)


def cell_edges(n: int, grid: int) -> np.ndarray:
    return np.linspace(0, n, grid + 1).round().astype(np.intp)


def grid_mean_pool(a: np.ndarray, grid: int) -> np.ndarray:
    """Mean over a grid x grid partition of the last two axes."""
    h, w = a.shape[-2:]
    re, ce = cell_edges(h, grid), cell_edges(w, grid)
    s = np.add.reduceat(np.add.reduceat(a, re[:-1], axis=-2), ce[:-1], axis=-1)
    area = np.diff(re)[:, None] * np.diff(ce)[None, :]
    return s / area


def extract_minutiae_embedding(mmap: MinutiaeMap, grid: int = 8) -> np.ndarray:
    """Grid-pool each channel, flatten channel-major, L2-normalise (length C * grid^2)."""
    v = grid_mean_pool(mmap.values, grid).ravel()
    norm = np.linalg.norm(v)
    if norm == 0:
        raise DegenerateInputError("minutiae map is all zero")
    return v / norm


# ---------------------------------------------------------------- detection

_RING = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]


def crossing_number(skel: np.ndarray) -> np.ndarray:
    """Crossing number of every skeleton pixel (0 elsewhere)."""
    s = np.pad(skel.astype(np.int8), 1)
    h, w = skel.shape
    ring = [s[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w] for dr, dc in _RING]
    cn = sum(np.abs(ring[i] - ring[(i + 1) % 8]) for i in range(8)) // 2
    return np.where(skel, cn, 0)


def _trace(skel: np.ndarray, start: tuple[int, int], first: tuple[int, int], steps: int) -> tuple[int, int]:
    """Follow a skeleton branch from ``start`` through ``first`` for ``steps`` pixels."""
    h, w = skel.shape
    prev, cur = start, first
    visited = {start, first}
    for _ in range(steps - 1):
        nxt = None
        for dr, dc in _RING:
            r, c = cur[0] + dr, cur[1] + dc
            if 0 <= r < h and 0 <= c < w and skel[r, c] and (r, c) not in visited:
                nxt = (r, c)
                break
        if nxt is None:
            break
        visited.add(nxt)
        prev, cur = cur, nxt
    return cur


def _neighbours(skel: np.ndarray, r: int, c: int) -> list[tuple[int, int]]:
    h, w = skel.shape
    return [
        (r + dr, c + dc)
        for dr, dc in _RING
        if 0 <= r + dr < h and 0 <= c + dc < w and skel[r + dr, c + dc]
    ]


def foreground_mask(img: np.ndarray, block: int = 16, min_std: float = 20.0) -> np.ndarray:
    """Pixels with local ridge contrast, eroded a quarter block to drop the rim."""
    x = img.astype(np.float64)
    mean = ndimage.uniform_filter(x, block)
    sq = ndimage.uniform_filter(x * x, block)
    std = np.sqrt(np.maximum(sq - mean * mean, 0))
    fg = std > min_std
    return ndimage.binary_erosion(fg, iterations=block // 4, border_value=0)


def detect_minutiae(enhanced, trace_len: int = 8, border: int = BORDER_MARGIN,
                    min_distance: float = 6.0) -> list[Minutia]:
    """Endings and bifurcations from the skeleton of a binarised ridge image.

    Ridges are the dark pixels (< 128).  Crossing number 1 marks an ending,
    3 a bifurcation.  Candidates within ``border`` px of the frame or outside
    the textured foreground are dropped, and pairs closer than
    ``min_distance`` (short spurs, bridges) are removed together.
    """
    img = np.asarray(enhanced)
    ridges = img < 128
    if not ridges.any() or ridges.all():
        return []
    skel = skeletonize(ridges)
    cn = crossing_number(skel)
    fg = foreground_mask(img)
    h, w = img.shape

    cands = []
    for kind, value in (("ending", 1), ("bifurcation", 3)):
        for r, c in zip(*np.nonzero(cn == value)):
            if r < border or c < border or r >= h - border or c >= w - border or not fg[r, c]:
                continue
            ends = [_trace(skel, (r, c), nb, trace_len) for nb in _neighbours(skel, r, c)]
            vecs = np.array([(ec - c, er - r) for er, ec in ends], dtype=np.float64)
            if kind == "ending":
                d = vecs[0]
            else:
                # forks share a side; their sum outweighs the lone stem
                d = vecs.sum(axis=0)
            theta = float(np.arctan2(d[1], d[0]) % (2 * np.pi))
            cands.append(Minutia(float(c), float(r), theta, kind))

    if len(cands) > 1:
        pts = np.array([(m.x, m.y) for m in cands])
        d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
        np.fill_diagonal(d2, np.inf)
        keep = d2.min(axis=1) >= min_distance**2
        cands = [m for m, k in zip(cands, keep) if k]
    return cands


def match_minutiae(truth, found, max_dist: float = 10.0, max_angle_deg: float = 30.0,
                   directed: bool = False) -> list[tuple[int, int]]:
    """Greedy nearest-pair assignment of detected to true minutiae.

    With ``directed=False`` angles are compared as orientations (mod pi).
    """
    if not truth or not found:
        return []
    t = np.array([(m[0], m[1], m[2]) for m in truth])
    f = np.array([(m[0], m[1], m[2]) for m in found])
    dist = np.hypot(t[:, None, 0] - f[None, :, 0], t[:, None, 1] - f[None, :, 1])
    dang = np.abs(wrap_angle(t[:, None, 2] - f[None, :, 2]))
    if not directed:
        dang = np.minimum(dang, np.pi - dang)
    ok = (dist <= max_dist) & (dang <= np.radians(max_angle_deg))
    pairs, used_t, used_f = [], set(), set()
    for i, j in sorted(zip(*np.nonzero(ok)), key=lambda ij: (dist[ij], ij)):
        if i not in used_t and j not in used_f:
            pairs.append((int(i), int(j)))
            used_t.add(i)
            used_f.add(j)
    return pairs
