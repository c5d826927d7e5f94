"""Geometric normalisation, Gabor ridge enhancement and augmentation.

Angles follow image coordinates: x to the right (columns), y downward (rows),
measured from the x axis towards y.  Ridge orientations live in [0, pi).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage, signal

from fplfix.errors import DegenerateInputError

FRAME = 299
BACKGROUND = 255


@dataclass(frozen=True)
class EnhancementParams:
    block_size: int = 16
    gabor_sigma: float = 4.0
    freq_min: float = 1 / 25
    freq_max: float = 1 / 3
    binarize: bool = False
    coherence_threshold: float = 0.2

    def __post_init__(self):
        if self.block_size < 8:
            raise ValueError("block_size must be >= 8")
        if not 0 < self.freq_min < self.freq_max:
            raise ValueError("frequency window is empty")
        if self.gabor_sigma <= 0:
            raise ValueError("gabor_sigma must be positive")


@dataclass(frozen=True)
class AugmentationParams:
    max_rotation_deg: float = 0.0
    max_shift_px: float = 0.0
    brightness_delta: float = 0.0
    contrast_delta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        vals = (self.max_rotation_deg, self.max_shift_px, self.brightness_delta, self.contrast_delta)
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise ValueError("augmentation maxima must be finite and non-negative")
        if self.brightness_delta >= 1 or self.contrast_delta >= 1:
            raise ValueError("brightness/contrast deltas must be < 1")


@dataclass
class OrientationField:
    angles: np.ndarray       # (rows, cols) of blocks, radians in [0, pi)
    coherence: np.ndarray    # in [0, 1]
    low_coherence: np.ndarray
    block_size: int


def _as_gray(img) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected a non-empty 2-D image, got shape {img.shape}")
    return img


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Pixel-centre aligned bilinear resampling, edges clamped; float output."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        i0 = np.floor(src).astype(np.intp)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    r0, r1, fr = axis(h, out_h)
    c0, c1, fc = axis(w, out_w)
    top = img[r0][:, c0] * (1 - fc) + img[r0][:, c1] * fc
    bot = img[r1][:, c0] * (1 - fc) + img[r1][:, c1] * fc
    return top * (1 - fr)[:, None] + bot * fr[:, None]


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def center_crop_box(h: int, w: int) -> tuple[int, int, int]:
    side = min(h, w)
    return (h - side) // 2, (w - side) // 2, side


def crop_resize(img, size: int = FRAME) -> np.ndarray:
    """Centred square crop of side min(h, w), bilinearly resized to size x size."""
    img = _as_gray(img)
    top, left, side = center_crop_box(*img.shape)
    sq = img[top : top + side, left : left + side]
    if side == size:
        return np.array(sq, dtype=np.uint8)
    return to_uint8(bilinear_resize(sq, size, size))


def _block_slices(n: int, bs: int):
    return [slice(i, min(i + bs, n)) for i in range(0, n, bs)]


def estimate_orientation_field(img, block_size: int = 16, coherence_threshold: float = 0.2) -> OrientationField:
    """Dominant ridge orientation per block from the gradient structure tensor."""
    x = _as_gray(img).astype(np.float64)
    gx = ndimage.sobel(x, axis=1, mode="nearest")
    gy = ndimage.sobel(x, axis=0, mode="nearest")
    rows = _block_slices(x.shape[0], block_size)
    cols = _block_slices(x.shape[1], block_size)
    gxx, gyy, gxy = gx * gx, gy * gy, gx * gy
    shape = (len(rows), len(cols))
    ang = np.zeros(shape)
    coh = np.zeros(shape)
    for bi, rs in enumerate(rows):
        for bj, cs in enumerate(cols):
            sxx, syy, sxy = gxx[rs, cs].sum(), gyy[rs, cs].sum(), gxy[rs, cs].sum()
            energy = sxx + syy
            if energy <= 1e-9 * rs.stop * cs.stop:
                continue
            coh[bi, bj] = np.hypot(sxx - syy, 2 * sxy) / energy
            ang[bi, bj] = (0.5 * np.arctan2(2 * sxy, sxx - syy) + np.pi / 2) % np.pi
    low = coh < coherence_threshold
    ang[low] = 0.0
    return OrientationField(ang, coh, low, block_size)


@lru_cache(maxsize=32)
def _centred_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return yy - (h - 1) / 2, xx - (w - 1) / 2


def ridge_signature(patch: np.ndarray, theta: float) -> np.ndarray:
    """Mean intensity profile across the ridges (along the ridge normal)."""
    yy, xx = _centred_grid(*patch.shape)
    u = xx * -np.sin(theta) + yy * np.cos(theta)
    bins = np.rint(u - u.min()).astype(np.intp)
    sums = np.bincount(bins.ravel(), weights=patch.ravel())
    counts = np.bincount(bins.ravel())
    return sums[counts > 0] / counts[counts > 0]


def estimate_frequency(patch: np.ndarray, theta: float) -> float:
    """Dominant ridge frequency (cycles/pixel) of a patch, 0 when flat."""
    sig = ridge_signature(patch, theta)
    sig = sig - sig.mean()
    if sig.size < 4 or not np.any(sig):
        return 0.0
    nfft = 1024
    spectrum = np.abs(np.fft.rfft(sig * np.hanning(sig.size), nfft))
    freqs = np.fft.rfftfreq(nfft)
    spectrum[freqs < 1.5 / sig.size] = 0.0
    k = int(np.argmax(spectrum))
    if 0 < k < spectrum.size - 1:
        a, b, c = spectrum[k - 1], spectrum[k], spectrum[k + 1]
        denom = a - 2 * b + c
        if denom != 0:
            return float((k + 0.5 * (a - c) / denom) / nfft)
    return float(freqs[k])


def gabor_kernel(theta: float, freq: float, sigma: float) -> np.ndarray:
    """Even-symmetric Gabor tuned to ridges running along ``theta``."""
    half = int(np.ceil(3 * sigma))
    yy, xx = _centred_grid(2 * half + 1, 2 * half + 1)
    across = -xx * np.sin(theta) + yy * np.cos(theta)
    env = np.exp(-(xx**2 + yy**2) / (2 * sigma**2))
    k = env * np.cos(2 * np.pi * freq * across)
    return k - env * (k.sum() / env.sum())


def enhance(img, params: EnhancementParams = EnhancementParams()) -> np.ndarray:
    """Block-wise oriented Gabor filtering (optionally binarised).

    Blocks with low orientation coherence or a ridge frequency outside the
    configured window keep their input pixels.  Filtered blocks are rescaled
    to 0..255 with a single image-wide gain.
    """
    src = _as_gray(img)
    x = src.astype(np.float64)
    h, w = x.shape
    bs = params.block_size
    field = estimate_orientation_field(src, bs, params.coherence_threshold)
    mu, sd = x.mean(), x.std()
    if sd == 0:
        return np.array(src, dtype=np.uint8)
    norm = (x - mu) / sd

    half = int(np.ceil(3 * params.gabor_sigma))
    padded = np.pad(norm, half, mode="reflect")
    win = bs  # frequency window margin around each block
    padded_f = np.pad(norm, win, mode="reflect")

    response = np.zeros_like(x)
    filtered = np.zeros(x.shape, dtype=bool)
    for bi, rs in enumerate(_block_slices(h, bs)):
        for bj, cs in enumerate(_block_slices(w, bs)):
            if field.low_coherence[bi, bj]:
                continue
            theta = field.angles[bi, bj]
            fpatch = padded_f[rs.start : rs.stop + 2 * win, cs.start : cs.stop + 2 * win]
            freq = estimate_frequency(fpatch, theta)
            if not params.freq_min <= freq <= params.freq_max:
                continue
            k = gabor_kernel(theta, freq, params.gabor_sigma)
            patch = padded[rs.start : rs.stop + 2 * half, cs.start : cs.stop + 2 * half]
            response[rs, cs] = signal.fftconvolve(patch, k[::-1, ::-1], mode="valid")
            filtered[rs, cs] = True

    out = x.copy()
    if filtered.any():
        scale = 3.0 * response[filtered].std()
        if scale > 0:
            out[filtered] = 127.5 + 127.5 * np.clip(response[filtered] / scale, -1, 1)
        else:
            out[filtered] = 127.5
    if params.binarize:
        out = _binarize(out, bs)
    return to_uint8(out)


def _binarize(x: np.ndarray, bs: int) -> np.ndarray:
    out = np.empty_like(x)
    for rs in _block_slices(x.shape[0], bs):
        for cs in _block_slices(x.shape[1], bs):
            blk = x[rs, cs]
            out[rs, cs] = np.where(blk >= blk.mean(), 255.0, 0.0)
    return out


def draw_augmentation(params: AugmentationParams) -> tuple[float, int, int, float, float]:
    """Seeded draws: (rotation deg, dx px, dy px, brightness, contrast)."""
    rng = np.random.default_rng(params.seed)
    phi = rng.uniform(-params.max_rotation_deg, params.max_rotation_deg)
    dx, dy = rng.uniform(-params.max_shift_px, params.max_shift_px, size=2)
    b = rng.uniform(-params.brightness_delta, params.brightness_delta)
    c = rng.uniform(-params.contrast_delta, params.contrast_delta)
    return float(phi), int(np.rint(dx)), int(np.rint(dy)), float(b), float(c)


def shift_image(img: np.ndarray, dx: int, dy: int, fill: int = BACKGROUND) -> np.ndarray:
    """Integer translation: content moves right by dx, down by dy."""
    h, w = img.shape
    out = np.full_like(img, fill)
    if abs(dx) >= w or abs(dy) >= h:
        return out
    out[max(dy, 0) : h + min(dy, 0), max(dx, 0) : w + min(dx, 0)] = img[
        max(-dy, 0) : h + min(-dy, 0), max(-dx, 0) : w + min(-dx, 0)
    ]
    return out


def rotate_image(img: np.ndarray, degrees: float, fill: float = BACKGROUND) -> np.ndarray:
    """Bilinear rotation about the image centre; float output."""
    x = np.asarray(img, dtype=np.float64)
    if degrees == 0:
        return x
    a = np.radians(degrees)
    c, s = np.cos(a), np.sin(a)
    h, w = x.shape
    center = np.array([(h - 1) / 2, (w - 1) / 2])
    # output (row, col) -> input coordinates; positive angle turns content
    # counter-clockwise as displayed (y down)
    m = np.array([[c, -s], [s, c]])
    offset = center - m @ center
    return ndimage.affine_transform(x, m, offset=offset, order=1, mode="constant", cval=fill)


def augment(img, params: AugmentationParams) -> np.ndarray:
    """Rotate, shift (whole pixels), then remap brightness/contrast.

    ``v -> clamp((v - 128) * (1 + c) + 128 + b * 255)``; uncovered regions
    take the background value 255.  Shifts are rounded to whole pixels.
    """
    src = _as_gray(img)
    phi, dx, dy, b, c = draw_augmentation(params)
    if phi == 0 and dx == 0 and dy == 0 and b == 0 and c == 0:
        return np.array(src, dtype=np.uint8)
    x = rotate_image(src, phi) if phi != 0 else src.astype(np.float64)
    if dx or dy:
        x = shift_image(x, dx, dy)
    if b != 0 or c != 0:
        x = (x - 128.0) * (1.0 + c) + 128.0 + b * 255.0
    return to_uint8(x)
