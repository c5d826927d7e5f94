"""Deterministic synthetic ridge-pattern corpus with ground-truth minutiae.

Each identity is a phase field rendered as ``128 + A cos(phase)`` (dark
ridges where the cosine is -1).  The smooth part of the phase is an
anisotropic ring pattern around a core point with a linear tilt and a
low-frequency warp; minutiae are spiral phase singularities
``+/- atan2(y - y_m, x - x_m)`` at Poisson-disk positions, each of which ends
exactly one ridge line.  Samples re-render the identity under a small rigid
jitter, contrast change and Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from fplfix.dataset_io import SampleRecord
from fplfix.minutiae import Minutia
from fplfix.preprocess import FRAME

JITTER_ROT_DEG = 5.0
JITTER_SHIFT_PX = 5.0
JITTER_CONTRAST = 0.10
NOISE_SIGMA = 6.0
RIDGE_AMPLITUDE = 100.0
MIN_MINUTIA_SPACING = 22.0
FINGERS_PER_SUBJECT = 10
_WARP_MODES = 4


@dataclass(frozen=True, eq=False)
class SynthIdentity:
    instance_id: tuple[int, int]
    orientation_field_seed: int
    ridge_frequency: float
    core_position: tuple[float, float]      # finger frame, origin at image centre
    anisotropy: float
    axis_angle: float
    tilt: tuple[float, float]
    warp: np.ndarray = field(repr=False)    # rows: kx, ky, amplitude, phase
    mask_axes: tuple[float, float] = (130.0, 145.0)
    minutiae_xy: np.ndarray = field(repr=False, default=None)  # (M, 2) finger frame
    polarity: np.ndarray = field(repr=False, default=None)
    minutiae_truth: tuple[Minutia, ...] = ()  # finger frame directions


def identity_seed(master_seed: int, instance_id: tuple[int, int]) -> int:
    """Fixed derivation of an identity's seed; independent of generation order."""
    ss = np.random.SeedSequence([int(master_seed), 0x1D, int(instance_id[0]), int(instance_id[1])])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sample_seed(master_seed: int, instance_id: tuple[int, int], sample_id: int) -> int:
    ss = np.random.SeedSequence(
        [int(master_seed), 0x5A, int(instance_id[0]), int(instance_id[1]), int(sample_id)]
    )
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _smooth_phase(ident: SynthIdentity, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    cx, cy = ident.core_position
    ca, sa = np.cos(ident.axis_angle), np.sin(ident.axis_angle)
    u = (x - cx) * ca + (y - cy) * sa
    v = -(x - cx) * sa + (y - cy) * ca
    rho = np.sqrt((ident.anisotropy * u) ** 2 + v**2 + 1.0)
    rho = rho + ident.tilt[0] * x + ident.tilt[1] * y
    for kx, ky, amp, ph in ident.warp:
        rho = rho + amp * np.cos(kx * x + ky * y + ph)
    return 2 * np.pi * ident.ridge_frequency * rho


def _spiral_phase(ident: SynthIdentity, x: np.ndarray, y: np.ndarray, skip: int = -1) -> np.ndarray:
    out = np.zeros(np.broadcast(x, y).shape)
    for i, ((mx, my), s) in enumerate(zip(ident.minutiae_xy, ident.polarity)):
        if i != skip:
            out += s * np.arctan2(y - my, x - mx)
    return out


def phase(ident: SynthIdentity, x, y) -> np.ndarray:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    return _smooth_phase(ident, x, y) + _spiral_phase(ident, x, y)


def _in_mask(ident: SynthIdentity, x, y, scale: float = 1.0):
    ax, ay = ident.mask_axes
    return (x / (ax * scale)) ** 2 + (y / (ay * scale)) ** 2


def _poisson_disk(rng: np.random.Generator, ident_axes, spacing: float, tries: int = 400) -> np.ndarray:
    ax, ay = ident_axes
    pts: list[tuple[float, float]] = []
    for _ in range(tries):
        x, y = rng.uniform(-ax, ax), rng.uniform(-ay, ay)
        if (x / (0.8 * ax)) ** 2 + (y / (0.8 * ay)) ** 2 > 1:
            continue
        if all((x - px) ** 2 + (y - py) ** 2 >= spacing**2 for px, py in pts):
            pts.append((x, y))
    return np.array(pts, dtype=np.float64).reshape(-1, 2)


def _minutia_direction(ident: SynthIdentity, i: int) -> float:
    """Direction from the singularity along the dark arm it spawns."""
    mx, my = ident.minutiae_xy[i]
    s = ident.polarity[i]

    def rest(px, py):
        return _smooth_phase(ident, np.float64(px), np.float64(py)) + _spiral_phase(ident, px, py, skip=i)

    h = 0.25
    gx = (rest(mx + h, my) - rest(mx - h, my)) / (2 * h)
    gy = (rest(mx, my + h) - rest(mx, my - h)) / (2 * h)
    a = np.arctan2(gx, -gy)  # ridge direction, perpendicular to the phase gradient
    dark_ahead = np.cos(rest(mx, my) + s * a) < 0
    return float((a if dark_ahead else a + np.pi) % (2 * np.pi))


def make_identity(master_seed: int, instance_id: tuple[int, int]) -> SynthIdentity:
    seed = identity_seed(master_seed, instance_id)
    rng = np.random.default_rng(seed)
    freq = rng.uniform(1 / 12, 1 / 6)
    core = (rng.uniform(-40, 40), rng.uniform(-50, 30))
    aniso = rng.uniform(0.55, 1.0)
    axis = rng.uniform(0, np.pi)
    tilt_mag = rng.uniform(0.0, 0.4)
    tilt_dir = rng.uniform(0, 2 * np.pi)
    tilt = (tilt_mag * np.cos(tilt_dir), tilt_mag * np.sin(tilt_dir))
    kmag = rng.uniform(2 * np.pi / 220, 2 * np.pi / 90, _WARP_MODES)
    kdir = rng.uniform(0, 2 * np.pi, _WARP_MODES)
    warp = np.stack(
        [kmag * np.cos(kdir), kmag * np.sin(kdir), rng.uniform(1.0, 4.0, _WARP_MODES), rng.uniform(0, 2 * np.pi, _WARP_MODES)],
        axis=1,
    )
    axes = (rng.uniform(118, 138), rng.uniform(135, 150))
    pts = _poisson_disk(rng, axes, MIN_MINUTIA_SPACING)
    pol = rng.choice(np.array([-1.0, 1.0]), size=len(pts))
    ident = SynthIdentity(
        instance_id, seed, float(freq), core, float(aniso), float(axis), tilt, warp, axes, pts, pol
    )
    truth = tuple(Minutia(float(x), float(y), _minutia_direction(ident, i)) for i, (x, y) in enumerate(pts))
    object.__setattr__(ident, "minutiae_truth", truth)
    return ident


@dataclass(frozen=True)
class SampleJitter:
    rotation_deg: float
    dx: float
    dy: float
    contrast: float
    noise_seed: int


def sample_jitter(master_seed: int, instance_id: tuple[int, int], sample_id: int) -> SampleJitter:
    seed = sample_seed(master_seed, instance_id, sample_id)
    rng = np.random.default_rng(seed)
    return SampleJitter(
        float(rng.uniform(-JITTER_ROT_DEG, JITTER_ROT_DEG)),
        float(rng.uniform(-JITTER_SHIFT_PX, JITTER_SHIFT_PX)),
        float(rng.uniform(-JITTER_SHIFT_PX, JITTER_SHIFT_PX)),
        float(rng.uniform(-JITTER_CONTRAST, JITTER_CONTRAST)),
        int(rng.integers(0, 2**63 - 1)),
    )


def _to_image_frame(j: SampleJitter, size: int, x, y):
    a = np.radians(j.rotation_deg)
    c = (size - 1) / 2
    return (np.cos(a) * x - np.sin(a) * y + c + j.dx, np.sin(a) * x + np.cos(a) * y + c + j.dy)


def render(ident: SynthIdentity, jitter: SampleJitter, size: int = FRAME) -> np.ndarray:
    """Render one impression as a ``uint8`` image of size x size."""
    c = (size - 1) / 2
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    a = np.radians(jitter.rotation_deg)
    qx, qy = cols - c - jitter.dx, rows - c - jitter.dy
    x = np.cos(a) * qx + np.sin(a) * qy
    y = -np.sin(a) * qx + np.cos(a) * qy
    ridge = RIDGE_AMPLITUDE * np.cos(phase(ident, x, y))
    r = np.sqrt(_in_mask(ident, x, y))
    fg = np.clip((1.0 - r) * 12.0, 0.0, 1.0)
    img = 255.0 * (1.0 - fg) + fg * (128.0 + ridge * (1.0 + jitter.contrast))
    noise = np.random.default_rng(jitter.noise_seed).normal(0.0, NOISE_SIGMA, img.shape)
    return np.clip(np.rint(img + fg * noise), 0, 255).astype(np.uint8)


def sample_minutiae(ident: SynthIdentity, jitter: SampleJitter, size: int = FRAME) -> list[Minutia]:
    """Ground-truth minutiae of one impression, in image coordinates."""
    out = []
    for m in ident.minutiae_truth:
        qx, qy = _to_image_frame(jitter, size, m.x, m.y)
        if 0 <= qx < size and 0 <= qy < size:
            out.append(Minutia(float(qx), float(qy), float((m.theta + np.radians(jitter.rotation_deg)) % (2 * np.pi))))
    return out


def image_name(instance_id: tuple[int, int], sample_id: int) -> str:
    return f"s{instance_id[0]:05d}_f{instance_id[1]}_{sample_id:02d}.pgm"


class _Lazy(Sequence):
    """Read-only sequence whose items are computed (and memoised) on access."""

    def __init__(self, n: int, fn, cache: bool):
        self._n, self._fn = n, fn
        self._memo = {} if cache else None

    def __len__(self) -> int:
        return self._n

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(self._n))]
        i = range(self._n)[i]
        if self._memo is None:
            return self._fn(i)
        if i not in self._memo:
            self._memo[i] = self._fn(i)
        return self._memo[i]


class SynthCorpus:
    """Corpus description; identities, jitters and images are built on access.

    Everything is a pure function of (counts, master_seed), so nothing needs
    to be generated up front.
    """

    def __init__(self, identity_count: int, samples_per_identity: int, master_seed: int, size: int = FRAME):
        self.identity_count = identity_count
        self.samples_per_identity = samples_per_identity
        self.master_seed = master_seed
        self.size = size
        self.records = []
        for k in range(identity_count):
            inst = self.instance_id(k)
            for s in range(samples_per_identity):
                self.records.append(SampleRecord(image_name(inst, s), inst[0], inst[1], s, "synthetic"))
        self.identities = _Lazy(identity_count, lambda k: make_identity(master_seed, self.instance_id(k)), True)
        self.jitters = _Lazy(len(self.records), self._jitter, False)
        self.images = _Lazy(len(self.records), self._render, False)

    @staticmethod
    def instance_id(k: int) -> tuple[int, int]:
        return k // FINGERS_PER_SUBJECT, k % FINGERS_PER_SUBJECT

    def _jitter(self, i: int) -> SampleJitter:
        rec = self.records[i]
        return sample_jitter(self.master_seed, rec.instance_id, rec.sample_id)

    def _render(self, i: int) -> np.ndarray:
        return render(self.identities[i // self.samples_per_identity], self.jitters[i], self.size)

    def minutiae(self) -> dict[tuple[int, int, int], list[Minutia]]:
        out = {}
        for i, rec in enumerate(self.records):
            ident = self.identities[i // self.samples_per_identity]
            out[(rec.subject_id, rec.finger_id, rec.sample_id)] = sample_minutiae(ident, self.jitters[i], self.size)
        return out


def generate_corpus(identities: int, samples_per_identity: int, master_seed: int, size: int = FRAME) -> SynthCorpus:
    """Describe a corpus; images render lazily via ``corpus.images``.

    Identity k becomes subject k // 10, finger k % 10.
    """
    if identities < 1:
        raise ValueError("identities must be >= 1")
    if samples_per_identity < 2:
        raise ValueError("samples_per_identity must be >= 2")
    return SynthCorpus(identities, samples_per_identity, master_seed, size)
