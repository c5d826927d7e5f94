import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fplfix import synthgen
from fplfix.errors import DegenerateInputError
from fplfix.minutiae import (
    Minutia,
    MinutiaeMap,
    angular_weights,
    build_minutiae_map,
    crossing_number,
    detect_minutiae,
    extract_minutiae_embedding,
    match_minutiae,
)
from fplfix.preprocess import EnhancementParams, enhance

minutia_st = st.builds(
    Minutia,
    st.floats(0, 298),
    st.floats(0, 298),
    st.floats(0, 2 * np.pi, exclude_max=True),
)


def test_empty_list_is_zero_map():
    m = build_minutiae_map([])
    assert m.values.shape == (6, 299, 299) and not m.values.any()


def test_single_minutia_peak():
    m = build_minutiae_map([Minutia(100, 60, 0.0)])
    ch0 = m.values[0]
    assert np.unravel_index(np.argmax(ch0), ch0.shape) == (60, 100)
    assert ch0[60, 100] == pytest.approx(angular_weights(0.0)[0, 0], abs=1e-12)
    assert np.argmax(m.values[:, 60, 100]) == 0


def test_superposition_of_distant_minutiae():
    a, b = Minutia(50, 50, 1.0), Minutia(220, 240, 4.0)
    both = build_minutiae_map([a, b]).values
    np.testing.assert_allclose(both, build_minutiae_map([a]).values + build_minutiae_map([b]).values, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.lists(minutia_st, max_size=5), st.lists(minutia_st, max_size=5))
def test_linearity_and_non_negativity(a, b):
    shape = (60, 70)
    a = [m._replace(x=m.x % 70, y=m.y % 60) for m in a]
    b = [m._replace(x=m.x % 70, y=m.y % 60) for m in b]
    ma = build_minutiae_map(a, shape=shape).values
    mb = build_minutiae_map(b, shape=shape).values
    mab = build_minutiae_map(a + b, shape=shape).values
    np.testing.assert_allclose(mab, ma + mb, atol=1e-9)
    assert (mab >= 0).all()
    assert mab.any() == bool(a + b)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 2 * np.pi, exclude_max=True))
def test_channel_mass_independent_of_angle(theta):
    ref = build_minutiae_map([Minutia(20, 20, 0.0)], shape=(41, 41)).values.sum(axis=0)
    got = build_minutiae_map([Minutia(20, 20, theta)], shape=(41, 41)).values.sum(axis=0)
    np.testing.assert_allclose(got, ref, atol=1e-6)


def test_embedding_length_and_norm():
    v = extract_minutiae_embedding(build_minutiae_map([Minutia(100, 100, 2.0), Minutia(30, 200, 5.0)]))
    assert v.shape == (384,)
    assert abs(np.linalg.norm(v) - 1) <= 1e-6
    assert extract_minutiae_embedding(build_minutiae_map([Minutia(100, 100, 2.0)]), grid=4).shape == (96,)


def test_zero_map_is_degenerate():
    with pytest.raises(DegenerateInputError):
        extract_minutiae_embedding(MinutiaeMap(np.zeros((6, 299, 299))))


def test_shift_equivariance():
    # 320 px frame gives exact 40 px cells
    rng = np.random.default_rng(0)
    mins = [Minutia(x, y, t) for x, y, t in zip(rng.uniform(110, 170, 6), rng.uniform(110, 210, 6), rng.uniform(0, 6.28, 6))]
    moved = [m._replace(x=m.x + 40) for m in mins]
    a = build_minutiae_map(mins, shape=(320, 320))
    b = build_minutiae_map(moved, shape=(320, 320))
    va = extract_minutiae_embedding(a).reshape(6, 8, 8)
    vb = extract_minutiae_embedding(b).reshape(6, 8, 8)
    np.testing.assert_allclose(vb[:, :, 1:], va[:, :, :-1], atol=1e-3)


def test_blank_image_has_no_minutiae():
    assert detect_minutiae(np.full((64, 64), 255, np.uint8)) == []
    assert detect_minutiae(np.zeros((64, 64), np.uint8)) == []


def test_straight_ridge_has_two_endings():
    img = np.full((64, 64), 255, np.uint8)
    img[31:34, 16:48] = 0
    found = detect_minutiae(img)
    assert sorted(m.kind for m in found) == ["ending", "ending"]
    xs = sorted(m.x for m in found)
    assert xs[0] < 20 and xs[1] > 44
    # an ending's direction points from its tip into the ridge body
    left, right = sorted(found, key=lambda m: m.x)
    assert abs(np.cos(left.theta) - 1) < 0.05 and abs(np.cos(right.theta) + 1) < 0.05


def test_crossing_number_oracle():
    skel = np.zeros((7, 7), bool)
    skel[3, 1:6] = True
    skel[1:3, 3] = True
    cn = crossing_number(skel)
    assert cn[3, 1] == 1 and cn[3, 5] == 1 and cn[1, 3] == 1
    assert cn[3, 3] == 3 and cn[3, 2] == 2


def test_border_filter():
    img = np.full((64, 64), 255, np.uint8)
    img[31:34, 2:40] = 0  # left end inside the 8 px border
    found = detect_minutiae(img)
    assert len(found) == 1 and found[0].x > 30


def test_match_minutiae():
    truth = [Minutia(10, 10, 0.1), Minutia(50, 50, 1.0)]
    found = [Minutia(12, 11, 0.1 + np.pi), Minutia(80, 80, 1.0)]
    assert match_minutiae(truth, found) == [(0, 0)]
    assert match_minutiae(truth, found, directed=True) == []
    assert match_minutiae([], found) == []


def test_detection_recall_on_synthetic():
    c = synthgen.generate_corpus(5, 2, 7)
    truth = c.minutiae()
    total = hits = 0
    for img, rec in zip(c.images, c.records):
        t = truth[(rec.subject_id, rec.finger_id, rec.sample_id)]
        found = detect_minutiae(enhance(img, EnhancementParams(binarize=True)))
        total += len(t)
        hits += len(match_minutiae(t, found, 10.0, 30.0))
    assert total > 0
    assert hits / total >= 0.6
