"""Image-to-embedding pipelines for the texture, minutiae and joint branches."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from fplfix import embedding
from fplfix.dataset_io import SampleRecord, load_image, resolve_image_path
from fplfix.errors import DegenerateInputError
from fplfix.minutiae import SIGMA_A, SIGMA_S, Minutia, build_minutiae_map, detect_minutiae, extract_minutiae_embedding
from fplfix.preprocess import FRAME, EnhancementParams, center_crop_box, crop_resize, enhance
from fplfix.texture import TextureBankParams, extract_texture

BRANCHES = ("texture", "minutiae", "concat")
THREADS_ENV = "FPLFIX_THREADS"


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class ExtractorConfig:
    branch: str = "texture"
    enhance: bool = True
    enhancement: EnhancementParams = field(default_factory=EnhancementParams)
    texture: TextureBankParams = field(default_factory=TextureBankParams)
    minutiae_grid: int = 8
    sigma_s: float = SIGMA_S
    sigma_a: float = SIGMA_A

    def __post_init__(self):
        if self.branch not in BRANCHES:
            raise ValueError(f"branch must be one of {BRANCHES}")

    @property
    def texture_dim(self) -> int:
        return self.texture.raw_dim

    @property
    def minutiae_dim(self) -> int:
        return 6 * self.minutiae_grid**2

    @property
    def raw_dim(self) -> int:
        return {
            "texture": self.texture_dim,
            "minutiae": self.minutiae_dim,
            "concat": self.texture_dim + self.minutiae_dim,
        }[self.branch]


def to_frame(minutiae: Sequence[Minutia], shape: tuple[int, int], size: int = FRAME) -> list[Minutia]:
    """Map minutiae from original image coordinates into the cropped, resized frame."""
    top, left, side = center_crop_box(*shape)
    s = size / side
    out = []
    for m in minutiae:
        x, y = (m.x - left + 0.5) * s - 0.5, (m.y - top + 0.5) * s - 0.5
        if 0 <= x < size and 0 <= y < size:
            out.append(Minutia(x, y, m.theta))
    return out


def texture_embedding(img: np.ndarray, cfg: ExtractorConfig) -> np.ndarray:
    x = crop_resize(img)
    if cfg.enhance:
        x = enhance(x, cfg.enhancement)
    return extract_texture(x, cfg.texture)


def minutiae_embedding(img: np.ndarray, cfg: ExtractorConfig, minutiae=None) -> np.ndarray:
    if minutiae is None:
        x = enhance(crop_resize(img), replace(cfg.enhancement, binarize=True))
        found = detect_minutiae(x)
    else:
        found = to_frame(minutiae, np.asarray(img).shape)
    mmap = build_minutiae_map(found, cfg.sigma_s, cfg.sigma_a, (FRAME, FRAME))
    return extract_minutiae_embedding(mmap, cfg.minutiae_grid)


def embed_image(img: np.ndarray, cfg: ExtractorConfig, minutiae=None) -> np.ndarray:
    """Raw (unreduced) unit-norm embedding of one image for ``cfg.branch``."""
    if cfg.branch == "texture":
        return texture_embedding(img, cfg)
    if cfg.branch == "minutiae":
        return minutiae_embedding(img, cfg, minutiae)
    return embedding.concat_branches(texture_embedding(img, cfg), minutiae_embedding(img, cfg, minutiae))


def parallel_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def embed_images(
    images: Sequence,
    cfg: ExtractorConfig,
    threads: int = 1,
    minutiae: Sequence | None = None,
    on_degenerate: str = "raise",
) -> tuple[np.ndarray, np.ndarray]:
    """Embed a sequence of images (or zero-arg loaders).

    Returns ``(vectors, ok)``: float32 rows of length ``cfg.raw_dim`` and a
    mask of rows that extracted cleanly.  With ``on_degenerate="mask"``
    degenerate images leave a zero row and ``ok=False`` instead of raising.
    """

    def one(i: int):
        img = images[i]
        if callable(img):
            img = img()
        try:
            return embed_image(img, cfg, None if minutiae is None else minutiae[i])
        except DegenerateInputError:
            if on_degenerate == "raise":
                raise
            return None

    rows = parallel_map(one, range(len(images)), threads)
    out = np.zeros((len(rows), cfg.raw_dim), dtype=np.float32)
    ok = np.zeros(len(rows), dtype=bool)
    for i, r in enumerate(rows):
        if r is not None:
            out[i] = r
            ok[i] = True
    return out, ok


def manifest_loaders(records: Sequence[SampleRecord], manifest_path) -> list[Callable[[], np.ndarray]]:
    return [lambda p=resolve_image_path(r, manifest_path): load_image(p) for r in records]


@dataclass(frozen=True, eq=False)
class Reducer:
    """Learned reduction to ``dim``; the joint branch reduces each half separately."""

    dim: int
    models: tuple[tuple[slice, embedding.ProjectionModel], ...]

    def apply(self, vectors) -> np.ndarray:
        v = np.asarray(vectors, dtype=np.float64)
        parts = [embedding.project(m, v[..., sl]) for sl, m in self.models]
        if len(parts) == 1:
            return parts[0]
        return embedding.concat_branches(*parts)


def fit_reducer(raw: np.ndarray, dim: int, cfg: ExtractorConfig) -> Reducer:
    raw = np.asarray(raw, dtype=np.float64)
    if cfg.branch != "concat":
        return Reducer(dim, ((slice(None), embedding.fit_projection(raw, dim)),))
    if dim % 2:
        raise ValueError("joint embeddings need an even dimension (split evenly between branches)")
    t = slice(0, cfg.texture_dim)
    m = slice(cfg.texture_dim, cfg.raw_dim)
    return Reducer(
        dim,
        ((t, embedding.fit_projection(raw[:, t], dim // 2)), (m, embedding.fit_projection(raw[:, m], dim // 2))),
    )
