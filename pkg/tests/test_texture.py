import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fplfix import synthgen
from fplfix.errors import DegenerateInputError
from fplfix.preprocess import shift_image
from fplfix.texture import TextureBankParams, extract_texture


@pytest.fixture(scope="module")
def sample():
    return synthgen.generate_corpus(1, 2, 3).images[0]


def test_constant_image_is_degenerate():
    with pytest.raises(DegenerateInputError):
        extract_texture(np.full((299, 299), 128, np.uint8))


def test_default_length(sample):
    assert TextureBankParams().raw_dim == 1536
    v = extract_texture(sample)
    assert v.shape == (1536,)
    assert abs(np.linalg.norm(v.astype(np.float64)) - 1) <= 1e-6


def test_custom_bank_length(sample):
    p = TextureBankParams(orientations=4, frequencies=(0.1,), grid=4)
    assert extract_texture(sample, p).shape == (4 * 1 * 16,)


def test_bank_validation():
    with pytest.raises(ValueError):
        TextureBankParams(frequencies=(0.6,))
    with pytest.raises(ValueError):
        TextureBankParams(orientations=0)


def test_deterministic(sample):
    assert extract_texture(sample).tobytes() == extract_texture(sample.copy()).tobytes()


def test_translation_sensitivity(sample):
    cell = 299 // 8 + 1
    moved = shift_image(sample, cell, 0)
    a, b = extract_texture(sample), extract_texture(moved)
    assert float(a.astype(np.float64) @ b) < 1 - 1e-3


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_unit_norm_on_random_images(seed):
    img = np.random.default_rng(seed).integers(0, 256, (299, 299), dtype=np.uint8)
    v = extract_texture(img)
    assert np.isfinite(v).all() and abs(np.linalg.norm(v.astype(np.float64)) - 1) <= 1e-6


@pytest.mark.slow
def test_mated_beats_non_mated_over_trials(texture_corpus):
    corpus, archive = texture_corpus.corpus, texture_corpus.archive
    v = archive.vectors.astype(np.float64)
    spi = corpus.samples_per_identity
    rng = np.random.default_rng(0)
    mated, non = [], []
    for _ in range(100):
        a, b = rng.choice(corpus.identity_count, 2, replace=False)
        s1, s2 = rng.choice(spi, 2, replace=False)
        mated.append(v[a * spi + s1] @ v[a * spi + s2])
        non.append(v[a * spi + s1] @ v[b * spi + s2])
    assert np.mean(mated) > np.mean(non)
