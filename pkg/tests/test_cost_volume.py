import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fgstereo.cost_volume import (LabelField, SparseCostVolume, build_cost_volume, detect_candidates,
                                  initial_disparity, load_volume, match_candidates, min_eigenvalue_map,
                                  ncc_dense, ncc_scores, prior_field, prior_from_cost, save_volume,
                                  sparse_ncc, zonal_ranges)
from fgstereo.segmentation import SegmentationMap
from synthetic import constant_shift


def _ref_zncc(a, b):
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    ma, mb = sum(a) / len(a), sum(b) / len(b)
    va = sum((x - ma) ** 2 for x in a)
    vb = sum((y - mb) ** 2 for y in b)
    if va <= 1e-12 or vb <= 1e-12:
        return 0.0
    return sum((x - ma) * (y - mb) for x, y in zip(a, b)) / math.sqrt(va * vb)


def _ref_scores(left, right, x, y, labels, t=3):
    """Spatial-domain oracle: replicate-padded windows, centre out of frame -> 0."""
    h, w = left.shape
    r = t // 2
    cl = lambda v, n: min(max(v, 0), n - 1)
    a = [left[cl(y + u, h), cl(x + v, w)] for u in range(-r, r + 1) for v in range(-r, r + 1)]
    out = []
    for d in labels:
        xr = x - d
        if xr < 0 or xr > w - 1:
            out.append(0.0)
            continue
        b = [right[cl(y + u, h), cl(xr + v, w)] for u in range(-r, r + 1) for v in range(-r, r + 1)]
        out.append(max(_ref_zncc(a, b), 0.0))
    return np.array(out)


# ----------------------------------------------------------- candidates

def test_constant_image_has_no_candidates():
    assert detect_candidates(np.full((20, 20), 0.3)) == []


def _brute_min_eig(img, window=3):
    h, w = img.shape
    gy, gx = np.gradient(img)
    r = window // 2
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            s = np.zeros((2, 2))
            for v in range(y - r, y + r + 1):
                for u in range(x - r, x + r + 1):
                    if 0 <= v < h and 0 <= u < w:
                        g = np.array([gx[v, u], gy[v, u]])
                        s += np.outer(g, g)
            out[y, x] = np.linalg.eigvalsh(s)[0]
    return out


def test_single_white_pixel():
    img = np.zeros((11, 11))
    img[5, 5] = 1.0
    np.testing.assert_allclose(min_eigenvalue_map(img), _brute_min_eig(img), atol=1e-12)
    lam = _brute_min_eig(img)
    ys, xs = np.nonzero(lam > 0.01 * lam.max())
    # min_distance 1 thins nothing, so the candidates are exactly the thresholded set
    pts = detect_candidates(img, quality=0.01, min_distance=1)
    assert set(pts) == set(zip(xs.tolist(), ys.tolist()))
    assert all(max(abs(x - 5), abs(y - 5)) <= 1 for x, y in pts)
    assert detect_candidates(img) == [(5, 5)]


def test_thinning_bound():
    img = np.random.default_rng(0).random((20, 30))
    assert len(detect_candidates(img, min_distance=math.hypot(20, 30))) <= 1


def test_candidates_respect_min_distance():
    img = np.random.default_rng(1).random((40, 40))
    pts = np.array(detect_candidates(img, quality=0.01, min_distance=4))
    d = np.hypot(*(pts[:, None, :] - pts[None, :, :]).transpose(2, 0, 1))
    assert d[np.triu_indices(len(pts), 1)].min() >= 4


def test_quality_validation():
    with pytest.raises(ValueError):
        detect_candidates(np.zeros((4, 4)), quality=0.0)


# -------------------------------------------------------------- matches

def test_matches_recover_constant_shift():
    left, right = constant_shift(64, 5, seed=3)
    pts = detect_candidates(left)
    matches = match_candidates(left, right, pts, (0, 15))
    assert len(matches) > 10
    assert {m[2] for m in matches} == {5}


def test_candidate_without_any_in_frame_window_dropped():
    left, right = constant_shift(40, 5, seed=0)
    assert match_candidates(left, right, [(6, 20)], (6, 12)) == []


def test_periodic_texture_rejected_by_margin():
    # vertical stripes of period 4: disparities d and d + 4 correlate equally
    xx = np.arange(60)
    stripes = np.tile(np.sin(2 * np.pi * xx / 4.0) + 0.3 * np.cos(2 * np.pi * xx / 4.0), (30, 1))
    left, right = stripes[:, :50], stripes[:, 2:52]
    x, y, win = 30, 15, 9
    r = win // 2
    patch = left[y - r:y + r + 1, x - r:x + r + 1].ravel()
    oracle = [_ref_zncc(patch, right[y - r:y + r + 1, x - d - r:x - d + r + 1].ravel()) for d in range(0, 13)]
    best = int(np.argmax(oracle))
    runner = max(v for d, v in enumerate(oracle) if abs(d - best) > 1)
    assert oracle[best] - runner < 0.05  # the oracle agrees the point is ambiguous
    assert match_candidates(left, right, [(x, y)], (0, 12), window=win) == []


# ---------------------------------------------------------------- zones

def _seg(labels):
    labels = np.asarray(labels)
    return SegmentationMap(labels, int(labels.max()) + 1)


def test_zone_from_three_matches():
    seg = _seg(np.zeros((4, 4), dtype=int))
    z = zonal_ranges(seg, [(0, 0, 4, 1.0), (1, 0, 5, 1.0), (2, 0, 6, 1.0)], 0, 20)
    assert z.mu[0] == pytest.approx(5.0)
    assert z.sigma[0] == pytest.approx(math.sqrt(2 / 3))
    assert (z.lo[0], z.hi[0]) == (4, 6)


def test_single_match_widened():
    z = zonal_ranges(_seg(np.zeros((3, 3), dtype=int)), [(1, 1, 7, 0.9)], 0, 20)
    assert z.sigma[0] == 0.0
    assert (z.lo[0], z.hi[0]) == (6, 8)


def test_empty_segment_uses_global_range():
    labels = np.zeros((4, 4), dtype=int)
    labels[:, 2:] = 1
    matches = [(0, 0, 10, 1.0), (1, 1, 12, 1.0), (0, 2, 14, 1.0)]
    z = zonal_ranges(_seg(labels), matches, 0, 30)
    all_d = np.array([10, 12, 14])
    lo = math.floor(all_d.mean() - all_d.std() + 0.5)
    hi = math.floor(all_d.mean() + all_d.std() + 0.5)
    assert z.global_range == (lo, hi)
    assert (z.lo[1], z.hi[1]) == (lo, hi)


def test_no_matches_full_range():
    z = zonal_ranges(_seg(np.zeros((2, 2), dtype=int)), [], 3, 9)
    assert (z.lo[0], z.hi[0]) == (3, 9)


def test_zone_clipped_to_disparity_range():
    z = zonal_ranges(_seg(np.zeros((2, 2), dtype=int)), [(0, 0, 0, 1.0)], 0, 10)
    assert (z.lo[0], z.hi[0]) == (0, 2)
    z = zonal_ranges(_seg(np.zeros((2, 2), dtype=int)), [(0, 0, 1, 1.0)], 0, 1)
    assert (z.lo[0], z.hi[0]) == (0, 1)


# ------------------------------------------------------------------ NCC

def test_identical_and_negated_patches():
    rng = np.random.default_rng(0)
    img = rng.random((9, 9))
    assert ncc_scores(img, img, (4, 4), [0])[0] == pytest.approx(1.0)
    assert ncc_scores(img, 1.0 - img, (4, 4), [0])[0] == 0.0


def test_zero_variance_patch_scores_zero():
    left = np.full((7, 7), 0.5)
    right = np.random.default_rng(2).random((7, 7))
    assert ncc_scores(left, right, (3, 3), [0, 1]).tolist() == [0.0, 0.0]


def test_ncc_scores_match_oracle():
    rng = np.random.default_rng(5)
    left, right = rng.random((12, 15)), rng.random((12, 15))
    labels = list(range(-2, 9))
    for _ in range(40):
        x, y = int(rng.integers(0, 15)), int(rng.integers(0, 12))
        np.testing.assert_allclose(ncc_scores(left, right, (x, y), labels),
                                   _ref_scores(left, right, x, y, labels), atol=1e-10)
    assert np.array_equal(ncc_scores(left, right, 3 * 15 + 4, labels), ncc_scores(left, right, (4, 3), labels))


@pytest.mark.parametrize("method", ["fft", "direct"])
def test_dense_ncc_equals_spatial_definition(method):
    rng = np.random.default_rng(6)
    left, right = rng.random((10, 14)), rng.random((10, 14))
    for d in (-3, 0, 2, 5, 13, 20):
        dense = ncc_dense(left, right, d, method=method)
        ref = np.array([[_ref_scores(left, right, x, y, [d])[0] for x in range(14)] for y in range(10)])
        np.testing.assert_allclose(dense, ref, atol=1e-10)


def test_sparse_ncc_backends_agree_with_oracle(backend):
    rng = np.random.default_rng(7)
    left, right = rng.random((9, 13)), rng.random((9, 13))
    n = left.size
    lo = rng.integers(-2, 6, size=n)
    size = rng.integers(1, 6, size=n)
    got = sparse_ncc(left, right, lo, size)
    for i in range(n):
        x, y = i % 13, i // 13
        ref = _ref_scores(left, right, x, y, list(range(lo[i], lo[i] + size[i])))
        np.testing.assert_allclose(got[i, :size[i]], ref, atol=1e-10)
        assert (got[i, size[i]:] == 0).all()


# ----------------------------------------------------------- cost volume

def _shift_volume(n=48, seed=0):
    left, right = constant_shift(n, 5, seed=seed)
    seg = _seg(np.zeros((n, n), dtype=int))
    stats = zonal_ranges(seg, [(10, 10, 5, 1.0)], 0, 15)
    return left, right, build_cost_volume(left, right, seg, stats, d_range=(0, 15))


def test_shifted_pair_argmax_matches_dense_oracle():
    left, right, vol = _shift_volume()
    n = left.shape[0]
    # oracle: dense NCC for every label of the zone, argmax (ties -> smaller label)
    labels = np.arange(4, 7)
    dense = np.stack([ncc_dense(left, right, int(d), method="direct") for d in labels])
    oracle = labels[np.argmax(dense, axis=0)]
    got = initial_disparity(prior_field(vol))
    interior = (slice(5, n - 5), slice(5, n - 5))
    np.testing.assert_array_equal(got[interior], oracle[interior])
    assert (got[interior] == 5).mean() >= 0.99


def test_zone_width_three_gives_three_scores():
    _, _, vol = _shift_volume(24)
    assert (vol.size == 3).all()
    assert vol.scores.shape[1] == 3
    assert (vol.scores >= 0).all() and np.isfinite(vol.scores).all()


def test_left_border_pixel_scores_zero():
    _, _, vol = _shift_volume(24)
    # pixel (0, 0): every label in [4, 6] maps outside the right image
    assert (vol.vector(0) == 0).all()
    assert np.allclose(prior_from_cost(vol, 0), 1 / 3)


def test_cost_volume_dimension_check():
    left = np.zeros((5, 5))
    with pytest.raises(ValueError):
        build_cost_volume(left, np.zeros((5, 6)), _seg(np.zeros((5, 5), dtype=int)),
                          zonal_ranges(_seg(np.zeros((5, 5), dtype=int)), [], 0, 3))


def _vol(scores):
    scores = np.asarray([scores], dtype=np.float64)
    return SparseCostVolume((1, 1), np.array([2]), np.array([scores.shape[1]]), scores, 0, 10)


@pytest.mark.parametrize("scores,expected", [([1, 1, 1, 1], [0.25] * 4), ([2, 1, 1], [0.5, 0.25, 0.25]),
                                             ([0, 0], [0.5, 0.5])])
def test_prior_examples(scores, expected):
    np.testing.assert_allclose(prior_from_cost(_vol(scores), 0), expected, atol=1e-15)
    np.testing.assert_allclose(prior_field(_vol(scores)).vector(0), expected, atol=1e-15)


@given(st.lists(st.lists(st.floats(0, 1), min_size=1, max_size=6), min_size=1, max_size=12))
@settings(max_examples=60, deadline=None)
def test_prior_is_distribution(rows):
    width = max(len(r) for r in rows)
    vals = np.zeros((len(rows), width))
    for i, r in enumerate(rows):
        vals[i, :len(r)] = r
    vol = SparseCostVolume((1, len(rows)), np.zeros(len(rows), dtype=int),
                           np.array([len(r) for r in rows]), vals, 0, width)
    pf = prior_field(vol)
    for i, r in enumerate(rows):
        v = pf.vector(i)
        assert (v >= 0).all()
        assert abs(v.sum() - 1) <= 1e-9
        assert (pf.values[i, len(r):] == 0).all()


def test_initial_disparity_ties_to_smaller_label():
    field = LabelField((1, 2), np.array([3, 7]), np.array([2, 3]), np.array([[0.5, 0.5, 0.0], [0.1, 0.7, 0.2]]))
    np.testing.assert_array_equal(initial_disparity(field), [[3.0, 8.0]])


def test_volume_dump_round_trip(tmp_path):
    _, _, vol = _shift_volume(16)
    save_volume(vol, tmp_path / "v.bin")
    back = load_volume(tmp_path / "v.bin")
    assert back.shape == vol.shape and (back.d_min, back.d_max) == (vol.d_min, vol.d_max)
    np.testing.assert_array_equal(back.lo, vol.lo)
    np.testing.assert_array_equal(back.size, vol.size)
    np.testing.assert_array_equal(back.values, vol.values)
    (tmp_path / "bad.bin").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_volume(tmp_path / "bad.bin")
