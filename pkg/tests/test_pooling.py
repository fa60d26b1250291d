"""RoI pooling paths, case dispatch, cell projection, and exact backward."""

import numpy as np
import pytest

from scaledet import (
    CaseTag,
    EmptyRoiError,
    PoolRecord,
    Roi,
    Tensor3,
    caroi_pool_backward,
    caroi_pool_forward,
    dispatch_case,
    grid_rect,
    roi_pool_forward,
)
from scaledet.pooling import GridRect, window_edges
from scaledet.harness import check_gradient, fd_feature_gradient, window_top2_gap

from oracles import naive_caroi_pool, naive_roi_pool


def cell_roi(r0, r1, c0, c1, stride=1):
    return Roi(x1=float(c0 * stride), y1=float(r0 * stride),
               x2=float(c1 * stride), y2=float(r1 * stride))


class TestGridRect:
    def test_exact_one_cell_box(self):
        rect = grid_rect(Roi(0, 0, 16, 16), 16, (4, 4))
        assert (rect.row0, rect.row1, rect.col0, rect.col1) == (0, 1, 0, 1)

    def test_floor_ceil_snapping(self):
        rect = grid_rect(Roi(3, 3, 35, 19), 16, (8, 8))
        assert (rect.col0, rect.col1) == (0, 3)
        assert (rect.row0, rect.row1) == (0, 2)

    def test_fully_outside_raises(self):
        with pytest.raises(EmptyRoiError):
            grid_rect(Roi(-5, -5, -1, -1), 16, (4, 4))

    def test_partially_outside_clamps(self):
        rect = grid_rect(Roi(-5, -5, 5, 5), 16, (4, 4))
        assert (rect.row0, rect.row1, rect.col0, rect.col1) == (0, 1, 0, 1)

    def test_beyond_far_edge_raises(self):
        with pytest.raises(EmptyRoiError):
            grid_rect(Roi(100, 0, 110, 10), 16, (4, 4))

    def test_invalid_stride(self):
        with pytest.raises(ValueError):
            grid_rect(Roi(0, 0, 4, 4), 0, (4, 4))


class TestDispatchCase:
    def test_both_large_is_shrink(self):
        assert dispatch_case((12, 12), 6) == (CaseTag.SHRINK, 1, 1)

    def test_both_small_is_enlarge(self):
        assert dispatch_case((3, 4), 6) == (CaseTag.ENLARGE, 2, 2)

    def test_short_height_wide_box(self):
        assert dispatch_case((3, 10), 6) == (CaseTag.MIXED_H_ENLARGE, 2, 1)

    def test_short_width_tall_box(self):
        assert dispatch_case((10, 3), 6) == (CaseTag.MIXED_W_ENLARGE, 1, 2)

    def test_factor_is_ceiling(self):
        _, fh, fw = dispatch_case((4, 5), 6)
        assert (fh, fw) == (2, 2)
        _, fh, _ = dispatch_case((1, 7), 6)
        assert fh == 6

    def test_boundary_dim_equal_p(self):
        assert dispatch_case((6, 6), 6)[0] is CaseTag.SHRINK


class TestWindowEdges:
    def test_never_empty(self):
        for dim in range(1, 15):
            for p in (2, 3, 6, 7):
                for start, end in window_edges(dim, p):
                    assert 0 <= start < end <= dim

    def test_exact_division(self):
        assert window_edges(12, 6) == [(0, 2), (2, 4), (4, 6), (6, 8), (8, 10), (10, 12)]

    def test_replication_when_small(self):
        assert window_edges(2, 6) == [(0, 1), (0, 1), (0, 1), (1, 2), (1, 2), (1, 2)]


class TestRoiPoolForward:
    def test_exact_grid_is_verbatim(self):
        rng = np.random.default_rng(0)
        fm = Tensor3(rng.normal(size=(2, 6, 6)))
        out = roi_pool_forward(fm, cell_roi(0, 6, 0, 6), 6, 1)
        np.testing.assert_array_equal(out.tensor.data, fm.data)

    def test_small_proposal_block_replicates(self):
        fm = Tensor3(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        out = roi_pool_forward(fm, cell_roi(0, 2, 0, 2), 6, 1)
        expected = np.kron(fm.data[0], np.ones((3, 3)))
        np.testing.assert_array_equal(out.tensor.data[0], expected)

    def test_constant_large_proposal(self):
        fm = Tensor3(np.full((1, 12, 12), 2.5))
        out = roi_pool_forward(fm, cell_roi(0, 12, 0, 12), 6, 1)
        np.testing.assert_array_equal(out.tensor.data, np.full((1, 6, 6), 2.5))

    def test_record_keeps_factors_at_one(self):
        fm = Tensor3(np.random.default_rng(1).normal(size=(1, 8, 8)))
        out = roi_pool_forward(fm, cell_roi(0, 2, 0, 3), 6, 1)
        assert (out.record.factor_h, out.record.factor_w) == (1, 1)

    def test_matches_oracle(self):
        rng = np.random.default_rng(2)
        fm = rng.normal(size=(1, 7, 7))
        fmt = Tensor3(fm)
        for rect in [(0, 7, 0, 7), (1, 3, 2, 7), (0, 2, 0, 2), (3, 4, 1, 6)]:
            r0, r1, c0, c1 = rect
            got = roi_pool_forward(fmt, cell_roi(r0, r1, c0, c1), 6, 1).tensor.data
            np.testing.assert_array_equal(got, naive_roi_pool(fm, rect, 6))


class TestCaroiPoolForward:
    def test_shrink_equals_plain_bitwise(self):
        rng = np.random.default_rng(3)
        fm = Tensor3(rng.normal(size=(2, 14, 14)))
        for rect in [(0, 14, 0, 14), (1, 8, 2, 9), (0, 6, 0, 6)]:
            roi = cell_roi(*rect)
            a = caroi_pool_forward(fm, roi, 6, 1)
            b = roi_pool_forward(fm, roi, 6, 1)
            assert (a.tensor.data == b.tensor.data).all()
            assert (a.record.argmax == b.record.argmax).all()
            assert a.record.case is CaseTag.SHRINK

    def test_constant_small_proposal_interior(self):
        v = 1.75
        fm = Tensor3(np.full((1, 3, 3), v))
        out = caroi_pool_forward(fm, cell_roi(0, 3, 0, 3), 6, 1)
        np.testing.assert_allclose(out.tensor.data[0, 1:-1, 1:-1], v)

    def test_single_cell_proposal_peak(self):
        v = 2.0
        fm = Tensor3(np.full((1, 1, 1), v))
        out = caroi_pool_forward(fm, cell_roi(0, 1, 0, 1), 6, 1)
        assert out.record.case is CaseTag.ENLARGE
        assert (out.record.factor_h, out.record.factor_w) == (6, 6)
        # Peak of the factor-6 bilinear kernel is (11/12)^2; max sits at the center cells.
        np.testing.assert_allclose(out.tensor.data[0, 2, 2], (11 / 12) ** 2 * v)
        np.testing.assert_array_equal(
            out.tensor.data, naive_caroi_pool(fm.data, (0, 1, 0, 1), 6)
        )

    def test_output_always_pooled_size(self):
        rng = np.random.default_rng(4)
        fm = Tensor3(rng.normal(size=(3, 9, 9)))
        for rect in [(0, 1, 0, 1), (0, 9, 0, 9), (2, 4, 1, 9), (0, 9, 4, 6)]:
            out = caroi_pool_forward(fm, cell_roi(*rect), 6, 1)
            assert out.tensor.shape == (3, 6, 6)

    def test_matches_oracle_random_rects(self):
        rng = np.random.default_rng(5)
        fm = rng.normal(size=(1, 6, 6))
        fmt = Tensor3(fm)
        for p in (2, 3, 6):
            for _ in range(25):
                r0 = rng.integers(0, 6)
                r1 = rng.integers(r0 + 1, 7)
                c0 = rng.integers(0, 6)
                c1 = rng.integers(c0 + 1, 7)
                rect = (int(r0), int(r1), int(c0), int(c1))
                got = caroi_pool_forward(fmt, cell_roi(*rect), p, 1).tensor.data
                np.testing.assert_allclose(got, naive_caroi_pool(fm, rect, p), atol=1e-12)

    def test_positive_homogeneity(self):
        rng = np.random.default_rng(6)
        fm = rng.normal(size=(2, 8, 8))
        roi = cell_roi(1, 4, 2, 5)
        base = caroi_pool_forward(Tensor3(fm), roi, 6, 1).tensor.data
        scaled = caroi_pool_forward(Tensor3(2.5 * fm), roi, 6, 1).tensor.data
        np.testing.assert_allclose(scaled, 2.5 * base, rtol=1e-12)

    def test_empty_roi_propagates(self):
        fm = Tensor3(np.zeros((1, 4, 4)))
        with pytest.raises(EmptyRoiError):
            caroi_pool_forward(fm, Roi(100.0, 100.0, 110.0, 110.0), 6, 1)


class TestCaroiPoolBackward:
    def test_zero_upstream_gives_zero(self):
        fm = Tensor3(np.random.default_rng(7).normal(size=(1, 8, 8)))
        out = caroi_pool_forward(fm, cell_roi(0, 3, 0, 3), 6, 1)
        grad = caroi_pool_backward([Tensor3(np.zeros((1, 6, 6)))], [out.record], fm.shape)
        np.testing.assert_array_equal(grad.data, 0.0)

    def test_shrink_distinct_maxima_routes_upstream_values(self):
        rng = np.random.default_rng(8)
        fm = Tensor3(rng.permutation(144).astype(float).reshape(1, 12, 12))
        out = caroi_pool_forward(fm, cell_roi(0, 12, 0, 12), 6, 1)
        upstream = rng.normal(size=(1, 6, 6))
        grad = caroi_pool_backward([Tensor3(upstream)], [out.record], fm.shape).data
        # Window maxima are distinct cells here, so each output cell deposits
        # its upstream value on exactly one feature-map cell.
        assert np.count_nonzero(grad) == 36
        np.testing.assert_allclose(np.sort(grad[grad != 0.0]), np.sort(upstream.ravel()))

    def test_gradient_support_inside_rect_union(self):
        rng = np.random.default_rng(9)
        fm = Tensor3(rng.normal(size=(1, 10, 10)))
        rois = [cell_roi(0, 3, 0, 3), cell_roi(5, 10, 5, 10)]
        pooled = [caroi_pool_forward(fm, r, 6, 1) for r in rois]
        grads = [Tensor3(rng.normal(size=(1, 6, 6))) for _ in rois]
        total = caroi_pool_backward(grads, [p.record for p in pooled], fm.shape).data
        mask = np.zeros((1, 10, 10), dtype=bool)
        mask[:, 0:3, 0:3] = True
        mask[:, 5:10, 5:10] = True
        assert (total[~mask] == 0.0).all()

    def test_overlapping_proposals_accumulate(self):
        fm = Tensor3(np.arange(16, dtype=float).reshape(1, 4, 4))
        roi = cell_roi(0, 4, 0, 4)
        out = caroi_pool_forward(fm, roi, 2, 1)
        g = Tensor3(np.ones((1, 2, 2)))
        single = caroi_pool_backward([g], [out.record], fm.shape).data
        double = caroi_pool_backward([g, g], [out.record, out.record], fm.shape).data
        np.testing.assert_allclose(double, 2.0 * single)

    def test_mismatched_lengths_rejected(self):
        fm = Tensor3(np.zeros((1, 4, 4)))
        out = caroi_pool_forward(fm, cell_roi(0, 2, 0, 2), 2, 1)
        with pytest.raises(ValueError):
            caroi_pool_backward([], [out.record], fm.shape)

    def test_mismatched_grad_shape_rejected(self):
        fm = Tensor3(np.zeros((1, 4, 4)))
        out = caroi_pool_forward(fm, cell_roi(0, 2, 0, 2), 2, 1)
        with pytest.raises(ValueError):
            caroi_pool_backward([Tensor3(np.zeros((1, 3, 3)))], [out.record], fm.shape)

    def test_rect_outside_map_rejected(self):
        fm = Tensor3(np.zeros((1, 8, 8)))
        out = caroi_pool_forward(fm, cell_roi(0, 8, 0, 8), 2, 1)
        with pytest.raises(ValueError):
            caroi_pool_backward([Tensor3(np.zeros((1, 2, 2)))], [out.record], (1, 4, 4))

    @pytest.mark.parametrize(
        "dims,expected_case",
        [
            ((7, 8), CaseTag.SHRINK),
            ((2, 3), CaseTag.ENLARGE),
            ((3, 8), CaseTag.MIXED_H_ENLARGE),
            ((8, 4), CaseTag.MIXED_W_ENLARGE),
        ],
    )
    def test_finite_differences_per_case(self, dims, expected_case):
        # Tie-adjacent output cells are excluded with the default margin,
        # which covers argmax switches reachable by the 1e-3 probe step.
        rng = np.random.default_rng(hash(dims) % 2**32)
        fm = Tensor3(rng.uniform(0.0, 1.0, size=(2, 10, 10)))
        h, w = dims
        roi = cell_roi(1, 1 + h, 0, w)
        err, case = check_gradient(fm, roi, 6, 1, rng)
        assert case is expected_case
        assert err <= 1e-4

    def test_enlarge_case_explicit_fd(self):
        # Random 1x4x4 map, 2x3 proposal: the worked example configuration.
        rng = np.random.default_rng(12)
        fm = Tensor3(rng.uniform(0.0, 1.0, size=(1, 4, 4)))
        roi = cell_roi(1, 3, 0, 3)
        pooled = caroi_pool_forward(fm, roi, 6, 1)
        upstream = rng.uniform(-1.0, 1.0, size=(1, 6, 6))
        analytic = caroi_pool_backward([Tensor3(upstream)], [pooled.record], fm.shape).data
        fd = fd_feature_gradient(fm, roi, 6, 1, upstream, step=1e-3)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-6)
        assert (np.abs(analytic - fd) / denom).max() <= 1e-4


class TestPoolRecordValidation:
    def test_argmax_bounds_enforced(self):
        rect = GridRect(0, 2, 0, 2)
        bad = np.full((1, 2, 2), 99, dtype=np.int64)
        with pytest.raises(ValueError):
            PoolRecord(rect=rect, case=CaseTag.SHRINK, factor_h=1, factor_w=1, argmax=bad)

    def test_empty_rect_rejected(self):
        with pytest.raises(ValueError):
            GridRect(2, 2, 0, 1)


def test_window_top2_gap_single_cell_windows_are_inf():
    plane = np.arange(36, dtype=float).reshape(1, 6, 6)
    gap = window_top2_gap(plane, 6)
    assert np.isinf(gap).all()
