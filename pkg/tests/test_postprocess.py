import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import erode_direct, fill_holes_direct, flood_label
from plaqueseg.postprocess import (LabeledComponents, PostprocessConfig, StructuringElement, erode, fill_holes,
                                   label_components, postprocess, reconstruct, select_by_area, select_components)


def _components(areas):
    """A LabeledComponents with the given areas, one row segment per component."""
    w = max(areas, default=0) + 1
    m = np.zeros((max(2 * len(areas), 1), w), dtype=np.uint8)
    for i, a in enumerate(areas):
        m[2 * i, :a] = 1
    return label_components(m)


def _kept_areas(areas, ratio=5.0):
    lc = _components(areas)
    return sorted((int(lc.areas[k]) for k in select_components(lc, PostprocessConfig(area_ratio=ratio))), reverse=True)


# ---------------------------------------------------------------- selection rule

@pytest.mark.parametrize("areas, kept", [
    ([100, 30], [100, 30]),
    ([100, 10], [100]),
    ([50, 10], [50, 10]),
    ([100, 30, 5], [100, 30]),
    ([7], [7]),
    ([], []),
    ([10, 100], [100]),
    ([20, 100], [100, 20]),
    ([51, 10], [51]),
])
def test_selection_rule(areas, kept):
    assert _kept_areas(areas) == kept


def test_selection_tie_goes_to_lower_label():
    assert select_by_area([5, 9, 9, 2]) == [1, 2]
    lc = _components([4, 4, 4])
    assert select_components(lc) == {1, 2}
    assert lc.ranked() == [1, 2, 3]


@given(st.lists(st.integers(1, 200), min_size=0, max_size=6), st.integers(1, 7))
def test_selection_scale_invariant(areas, k):
    assert select_by_area(areas) == select_by_area([a * k for a in areas])


def test_ratio_configurable():
    assert _kept_areas([100, 30], ratio=2.0) == [100]
    with pytest.raises(ValueError):
        PostprocessConfig(area_ratio=1.0)
    with pytest.raises(ValueError):
        PostprocessConfig(connectivity=6)


# ---------------------------------------------------------------- erosion

def test_erode_examples():
    single = np.zeros((5, 5), np.uint8)
    single[2, 2] = 1
    assert not erode(single).any()
    sq = np.zeros((7, 7), np.uint8)
    sq[1:6, 1:6] = 1
    expected = np.zeros((7, 7), np.uint8)
    expected[2:5, 2:5] = 1
    assert np.array_equal(erode(sq), expected)
    full = np.ones((5, 6), np.uint8)
    assert np.array_equal(erode(full), np.pad(np.ones((3, 4), np.uint8), 1))


def test_erode_iterations_and_custom_kernel(rng):
    m = (rng.random((12, 12)) < 0.8).astype(np.uint8)
    two = erode(m, StructuringElement(iterations=2))
    assert np.array_equal(two, erode(erode(m)))
    cross = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    assert np.array_equal(erode(m, StructuringElement(kernel=cross)), erode_direct(m, cross))


@pytest.mark.parametrize("bad", [dict(size=2), dict(kernel=np.zeros((3, 3))), dict(iterations=0),
                                 dict(kernel=np.ones((3, 5)))])
def test_structuring_element_validation(bad):
    with pytest.raises(ValueError):
        StructuringElement(**bad)


@given(st.integers(0, 2 ** 31))
def test_erode_anti_extensive(seed):
    m = (np.random.default_rng(seed).random((10, 10)) < 0.7).astype(np.uint8)
    assert (erode(m) <= m).all()


# ---------------------------------------------------------------- labelling

def test_label_examples():
    diag = np.array([[1, 0], [0, 1]], np.uint8)
    assert label_components(diag).num == 1
    assert label_components(diag, 4).num == 2
    rows = np.zeros((3, 4), np.uint8)
    rows[0], rows[2] = 1, 1
    lc = label_components(rows)
    assert lc.num == 2 and lc.sorted_areas() == [4, 4]


def test_label_matches_flood_fill_100_masks(rng):
    for _ in range(100):
        m = (rng.random((32, 32)) < rng.uniform(0.2, 0.7)).astype(np.uint8)
        lc = label_components(m)
        ref, n = flood_label(m)
        assert lc.num == n and np.array_equal(lc.labels, ref)
        assert int(lc.areas.sum()) == int(m.sum())
        assert isinstance(lc, LabeledComponents)


# ---------------------------------------------------------------- fill holes

def _ring(n=9, r0=2, r1=6):
    m = np.zeros((n, n), np.uint8)
    m[r0:r1 + 1, r0:r1 + 1] = 1
    m[r0 + 1:r1, r0 + 1:r1] = 0
    return m


def test_fill_ring_and_nested():
    filled = fill_holes(_ring())
    assert filled[2:7, 2:7].all() and filled.sum() == 25
    nested = _ring(13, 1, 11) | np.pad(_ring(9, 2, 6), 2)
    out = fill_holes(nested)
    assert out[1:12, 1:12].all() and out.sum() == 121
    assert np.array_equal(out, fill_holes_direct(nested))


def test_fill_no_holes_unchanged():
    m = np.zeros((6, 6), np.uint8)
    m[1:4, 1:5] = 1
    assert np.array_equal(fill_holes(m), m)


@given(st.integers(0, 2 ** 31))
def test_fill_extensive_idempotent(seed):
    m = (np.random.default_rng(seed).random((12, 12)) < 0.5).astype(np.uint8)
    f = fill_holes(m)
    assert (f >= m).all()
    assert np.array_equal(fill_holes(f), f)
    assert np.array_equal(f, fill_holes_direct(m))


# ---------------------------------------------------------------- pipeline

def test_blob_with_speckles():
    m = np.zeros((30, 30), np.uint8)
    m[5:15, 5:17] = 1
    for r, c in [(20, 3), (25, 25), (2, 28), (27, 10)]:
        m[r, c] = 1
    res = postprocess(m)
    blob = np.zeros_like(m)
    blob[5:15, 5:17] = 1
    assert np.array_equal(res.mask, blob)
    assert res.flags == ()


def test_two_similar_plaques_both_kept():
    m = np.zeros((40, 40), np.uint8)
    m[3:8, 5:30] = 1
    m[30:36, 8:28] = 1
    res = postprocess(m)
    assert np.array_equal(res.mask, m) and res.flags == ("kept_two",)


def test_small_third_component_dropped():
    m = np.zeros((40, 40), np.uint8)
    m[3:8, 5:30] = 1
    m[30:36, 8:28] = 1
    m[18:22, 18:22] = 1
    res = postprocess(m)
    assert res.mask[18:22, 18:22].sum() == 0
    assert label_components(res.mask).num == 2


def test_empty_cases_flagged():
    z = np.zeros((8, 8), np.uint8)
    assert postprocess(z).flags == ("empty_input",)
    thin = z.copy()
    thin[4] = 1
    res = postprocess(thin)
    assert res.flags == ("empty_after_erosion",) and not res.mask.any()


def test_reconstruct_returns_whole_touched_components():
    m = np.zeros((6, 10), np.uint8)
    m[1:4, 1:4] = 1
    m[1:4, 6:9] = 1
    seeds = np.zeros_like(m)
    seeds[2, 2] = 1
    out = reconstruct(seeds, m)
    assert out[1:4, 1:4].all() and not out[:, 5:].any()


@given(st.integers(0, 2 ** 31), st.floats(0.3, 0.8))
def test_pipeline_invariants(seed, p):
    m = (np.random.default_rng(seed).random((24, 24)) < p).astype(np.uint8)
    out = postprocess(m).mask
    lc = label_components(out)
    assert lc.num <= 2
    assert (out <= fill_holes(m)).all()
