import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ordnet import otns
from ordnet.analysis import (CorrelationAccumulator, aggregate_correlation, diagonal_gap, flops_estimate,
                             load_mask, mask_files, matrix_to_csv, patch_correlation,
                             patch_correlation_bruteforce, read_pgm, write_pgm)
from ordnet.errors import ArgumentError, FormatError, PartitionError
from ordnet.harness import synth_dataset


def four_patch_mask(n=4):
    m = np.zeros((2 * n, 2 * n), dtype=np.int64)
    m[:n, n:], m[n:, :n], m[n:, n:] = 1, 2, 3
    return m


def pair_loop_oracle(mask, p):
    """Every (i, j) position pair with i in patch m and j in patch n, counted explicitly."""
    h, w = mask.shape
    ph, pw = h // p, w // p
    same = np.zeros((p * p, p * p))
    pairs = np.zeros((p * p, p * p))
    for i in range(ph * p):
        for j in range(pw * p):
            m = (i // ph) * p + j // pw
            for u in range(ph * p):
                for v in range(pw * p):
                    n = (u // ph) * p + v // pw
                    pairs[m, n] += 1
                    same[m, n] += mask[i, j] == mask[u, v]
    return same / pairs


def test_single_label_all_ones():
    np.testing.assert_array_equal(patch_correlation(np.full((6, 6), 2), 3), np.ones((9, 9)))


def test_four_distinct_patches_identity():
    np.testing.assert_array_equal(patch_correlation(four_patch_mask(), 2), np.eye(4))


def test_random_8x8_matches_pair_loop():
    mask = np.random.default_rng(5).integers(0, 3, size=(8, 8))
    want = pair_loop_oracle(mask, 2)
    np.testing.assert_allclose(patch_correlation(mask, 2), want, rtol=0, atol=1e-15)
    np.testing.assert_allclose(patch_correlation_bruteforce(mask, 2), want, rtol=0, atol=1e-15)


def test_row_major_patch_order():
    m = np.zeros((4, 4), dtype=np.int64)
    m[:2, 2:] = 1  # top-right patch only
    c = patch_correlation(m, 2)
    assert c[1, 1] == 1.0 and c[1, 0] == 0.0 and c[0, 2] == 1.0


@settings(max_examples=40, deadline=None)
@given(mask=arrays(np.int64, st.tuples(st.integers(2, 9), st.integers(2, 9)), elements=st.integers(0, 4)),
       p=st.integers(1, 2))
def test_symmetric_bounded_and_matches_bruteforce(mask, p):
    c = patch_correlation(mask, p)
    np.testing.assert_array_equal(c, c.T)
    assert np.all((c >= 0) & (c <= 1))
    np.testing.assert_allclose(c, patch_correlation_bruteforce(mask, p), rtol=0, atol=1e-12)


def test_ignored_pixels_excluded_and_empty_patch_undefined():
    m = four_patch_mask(2)
    m[:2, :2] = 255
    c = patch_correlation(m, 2)
    assert np.all(c[0] == -1) and np.all(c[:, 0] == -1)
    np.testing.assert_array_equal(c[1:, 1:], np.eye(3))
    m[0, 0] = 0  # one valid pixel now
    assert patch_correlation(m, 2)[0, 0] == 1.0


def test_lenient_truncates_and_strict_raises():
    m = np.zeros((5, 5), dtype=np.int64)
    m[4, :] = 1  # remainder row, dropped
    np.testing.assert_array_equal(patch_correlation(m, 2), np.ones((4, 4)))
    with pytest.raises(PartitionError):
        patch_correlation(m, 2, strict=True)


def test_bad_masks_rejected():
    with pytest.raises(ArgumentError):
        patch_correlation(np.zeros((2, 2, 2)), 2)
    with pytest.raises(ArgumentError):
        patch_correlation(-np.ones((4, 4), dtype=np.int64), 2)


# -------------------------------------------------------------- aggregation


def test_aggregate_single_and_identical():
    m = np.random.default_rng(1).integers(0, 3, size=(6, 6))
    np.testing.assert_array_equal(aggregate_correlation([m], 2), patch_correlation(m, 2))
    np.testing.assert_allclose(aggregate_correlation([m, m], 2), patch_correlation(m, 2), atol=1e-15)


def test_aggregate_mixed_is_pair_weighted_mean():
    rng = np.random.default_rng(2)
    masks = [rng.integers(0, 3, size=(4, 4)), rng.integers(0, 2, size=(8, 6))]
    masks[1][:3, :2] = 255
    num = np.zeros((4, 4))
    den = np.zeros((4, 4))
    for m in masks:
        h, w = m.shape
        views = [m[r * h // 2:(r + 1) * h // 2, c * w // 2:(c + 1) * w // 2] for r in range(2) for c in range(2)]
        sizes = np.array([(v != 255).sum() for v in views], dtype=float)
        weights = np.outer(sizes, sizes)
        num += patch_correlation(m, 2) * weights
        den += weights
    np.testing.assert_allclose(aggregate_correlation(masks, 2), num / den, rtol=0, atol=1e-14)


def test_accumulator_merge_order_independent():
    masks = [lbl for _, lbl in synth_dataset(9, 6, 16)]
    a, b = CorrelationAccumulator(2), CorrelationAccumulator(2)
    for m in masks[:4]:
        a.add(m)
    for m in masks[4:]:
        b.add(m)
    np.testing.assert_array_equal(a.merge(b).matrix(), b.merge(a).matrix())
    np.testing.assert_array_equal(a.merge(b).matrix(), aggregate_correlation(reversed(masks), 2))
    with pytest.raises(ArgumentError):
        a.merge(CorrelationAccumulator(3))


def test_blob_masks_intra_exceeds_inter():
    masks = [lbl for _, lbl in synth_dataset(5, 60, 32)]
    corr = aggregate_correlation(masks, 2)
    assert diagonal_gap(corr) > 0.15


def test_fast_path_matches_pair_enumeration_on_20_masks():
    for _, lbl in synth_dataset(11, 20, 16):
        np.testing.assert_allclose(patch_correlation(lbl, 2), patch_correlation_bruteforce(lbl, 2),
                                   rtol=0, atol=1e-12)


def test_diagonal_gap_skips_undefined():
    c = np.array([[1.0, 0.2, -1], [0.2, 0.8, -1], [-1, -1, -1]])
    assert diagonal_gap(c) == pytest.approx(0.9 - 0.2)


# -------------------------------------------------------------------- FLOPs


@pytest.mark.parametrize("p,ratio", [(2, 4), (4, 16)])
def test_quadratic_ratio_is_p_squared(p, ratio):
    base = flops_estimate(16, 16, 64, 8, 8, 16, 1)
    other = flops_estimate(16, 16, 64, 8, 8, 16, p)
    assert base.quadratic == ratio * other.quadratic
    assert base.attention_map == ratio * other.attention_map
    assert base.projections == other.projections


def test_closed_form_counts():
    r = flops_estimate(6, 4, 5, 2, 3, 7, 2)
    assert r.projections == 24 * 5 * 12
    assert r.attention_map == 4 * 6 * 6 * 3
    assert r.aggregation == 4 * 6 * 6 * 7
    assert r.output_projection == 24 * 7 * 5
    assert r.total == r.projections + r.attention_map + r.aggregation + r.output_projection


def test_ordering_at_large_resolution():
    totals = [flops_estimate(60, 60, 2048, 256, 256, 512, p).total for p in (1, 2, 4)]
    assert totals[0] > totals[1] > totals[2]


@settings(max_examples=50, deadline=None)
@given(h=st.integers(1, 40), w=st.integers(1, 40), p=st.sampled_from([1, 2, 4]))
def test_quadratic_divisible_by_p_squared(h, w, p):
    h, w = h * p, w * p
    r = flops_estimate(h, w, 3, 2, 2, 2, p)
    assert r.quadratic % (p * p) == 0
    assert r.quadratic * p * p == flops_estimate(h, w, 3, 2, 2, 2, 1).quadratic


@pytest.mark.parametrize("bad", [dict(h=0), dict(c=-1), dict(patches=0), dict(cv=0)])
def test_non_positive_dims_rejected(bad):
    args = dict(h=4, w=4, c=4, cq=2, ck=2, cv=2, patches=1) | bad
    with pytest.raises(ArgumentError):
        flops_estimate(**args)


# ---------------------------------------------------------------------- I/O


@pytest.mark.parametrize("hi", [200, 4000])
def test_pgm_round_trip(tmp_path, hi):
    m = np.random.default_rng(hi).integers(0, hi, size=(5, 7))
    write_pgm(tmp_path / "m.pgm", m)
    np.testing.assert_array_equal(read_pgm(tmp_path / "m.pgm"), m)


def test_pgm_header_comment(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# note\n2 1\n255\n\x03\x04")
    np.testing.assert_array_equal(read_pgm(tmp_path / "c.pgm"), [[3, 4]])


@pytest.mark.parametrize("blob", [b"P2\n1 1\n255\n0", b"P5\n2 2\n255\n\x00", b"P5\n2"])
def test_pgm_malformed(tmp_path, blob):
    (tmp_path / "b.pgm").write_bytes(blob)
    with pytest.raises(FormatError):
        read_pgm(tmp_path / "b.pgm")


def test_mask_dir_mixed_formats(tmp_path):
    write_pgm(tmp_path / "a.pgm", four_patch_mask())
    otns.save(tmp_path / "b.otns", four_patch_mask())
    (tmp_path / "readme.txt").write_text("skip")
    files = mask_files(tmp_path)
    assert [f.name for f in files] == ["a.pgm", "b.otns"]
    for f in files:
        np.testing.assert_array_equal(load_mask(f), four_patch_mask())
    otns.save(tmp_path / "c.otns", np.zeros(3))
    with pytest.raises(FormatError):
        load_mask(tmp_path / "c.otns")
    with pytest.raises(FormatError):
        mask_files(tmp_path / "nope")


def test_csv_exact_floats():
    c = np.array([[1.0, 1 / 3], [1 / 3, 1.0]])
    rows = [[float(v) for v in line.split(",")] for line in matrix_to_csv(c).splitlines()]
    np.testing.assert_array_equal(rows, c)
