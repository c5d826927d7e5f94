"""Gabor filter-bank texture descriptor.

Complex Gabor magnitudes at several orientations and frequencies, averaged
over an absolute g x g grid of cells, standardised across the vector and
L2-normalised.  Extraction is stateless.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import fft

from fplfix.errors import DegenerateInputError
from fplfix.minutiae import grid_mean_pool


@dataclass(frozen=True)
class TextureBankParams:
    orientations: int = 8
    frequencies: tuple[float, ...] = (1 / 6, 1 / 9, 1 / 12)
    grid: int = 8
    bandwidth: float = 0.55  # envelope sigma = bandwidth / frequency

    def __post_init__(self):
        if self.orientations < 1 or self.grid < 1:
            raise ValueError("orientations and grid must be positive")
        if not self.frequencies or not all(0 < f < 0.5 for f in self.frequencies):
            raise ValueError("frequencies must lie in (0, 0.5)")

    @property
    def raw_dim(self) -> int:
        return self.orientations * len(self.frequencies) * self.grid**2


@lru_cache(maxsize=8)
def _bank_spectra(params: TextureBankParams, shape: tuple[int, int]) -> np.ndarray:
    """FFTs of zero-mean complex Gabor kernels, shape (n_filters, *shape)."""
    h, w = shape
    kernels = []
    for f in params.frequencies:
        sigma = params.bandwidth / f
        half = int(np.ceil(3 * sigma))
        yy, xx = np.mgrid[-half : half + 1, -half : half + 1].astype(np.float64)
        env = np.exp(-(xx**2 + yy**2) / (2 * sigma**2))
        for k in range(params.orientations):
            theta = np.pi * k / params.orientations
            across = -xx * np.sin(theta) + yy * np.cos(theta)
            g = env * np.exp(2j * np.pi * f * across)
            g -= env * (g.sum() / env.sum())
            pad = np.zeros(shape, dtype=np.complex128)
            pad[: g.shape[0], : g.shape[1]] = g
            # centre the kernel at the origin so responses are not shifted
            pad = np.roll(pad, (-half, -half), axis=(0, 1))
            kernels.append(fft.fft2(pad, workers=1))
    spectra = np.stack(kernels).astype(np.complex64)
    spectra.setflags(write=False)
    return spectra


def _padded_shape(h: int, w: int, margin: int) -> tuple[int, int]:
    return fft.next_fast_len(h + 2 * margin), fft.next_fast_len(w + 2 * margin)


def filter_responses(img, params: TextureBankParams = TextureBankParams()) -> np.ndarray:
    """Magnitude responses, shape (frequencies, orientations, h, w)."""
    x = np.asarray(img, dtype=np.float64)
    h, w = x.shape
    x = x - x.mean()
    sd = x.std()
    if sd == 0:
        raise DegenerateInputError("image has no texture (constant intensity)")
    x /= sd
    margin = int(np.ceil(3 * params.bandwidth / min(params.frequencies)))
    shape = _padded_shape(h, w, margin)
    padded = np.zeros(shape, dtype=np.float32)
    padded[margin : margin + h, margin : margin + w] = x
    spectrum = fft.fft2(padded, workers=1)
    resp = fft.ifft2(_bank_spectra(params, shape) * spectrum, workers=1)
    mag = np.abs(resp[:, margin : margin + h, margin : margin + w]).astype(np.float64)
    return mag.reshape(len(params.frequencies), params.orientations, h, w)


def extract_texture(img, params: TextureBankParams = TextureBankParams()) -> np.ndarray:
    """Raw texture embedding of length ``params.raw_dim`` (unit norm)."""
    mag = filter_responses(img, params)
    v = grid_mean_pool(mag, params.grid).ravel()
    sd = v.std()
    if not np.isfinite(sd) or sd <= 1e-12 * max(1.0, float(np.abs(v).max())):
        raise DegenerateInputError("texture responses carry no variation")
    v = (v - v.mean()) / sd
    return v / np.linalg.norm(v)
