import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lumisplit.correspondence import (
    CorrespondenceSet,
    correspondences_for_pair,
    correspondences_from_flow,
    load_external,
    perturb,
    reduce,
    save_matches,
)
from lumisplit.data import (
    DegradationParams,
    FlowField,
    MotionSpec,
    bilinear_sample,
    make_clip_pair,
    make_test_pattern,
)
from lumisplit.errors import DataError


def translation_flow(h, w, dx, dy=0.0):
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    disp = np.full((h, w, 2), (dx, dy), dtype=np.float32)
    valid = (xs + dx >= 0) & (xs + dx <= w - 1) & (ys + dy >= 0) & (ys + dy <= h - 1)
    return FlowField(disp, valid)


class TestFromFlow:
    def test_zero_flow_full_grid(self):
        flow = translation_flow(4, 4, 0.0)
        cset = correspondences_from_flow(flow, stride=1, t1=0, t2=1)
        assert len(cset) == 16
        np.testing.assert_array_equal(cset.x1, cset.x2)
        np.testing.assert_array_equal(cset.y1, cset.y2)
        np.testing.assert_array_equal(cset.u, 1.0)

    def test_translation_plus3_stride4(self):
        flow = translation_flow(8, 8, 3.0)
        cset = correspondences_from_flow(flow, stride=4, t1=0, t2=1)
        assert len(cset) == 4
        assert set(cset.x1) == {0.0, 4.0}
        assert set(cset.y1) == {0.0, 4.0}
        np.testing.assert_allclose(cset.x2, cset.x1 + 3.0)

    def test_translation_plus6_masks_half(self):
        flow = translation_flow(8, 8, 6.0)
        cset = correspondences_from_flow(flow, stride=4, t1=0, t2=1)
        assert len(cset) == 2
        assert set(cset.x1) == {0.0}
        np.testing.assert_allclose(cset.x2, 6.0)

    def test_entirely_invalid_flow_errors(self):
        flow = translation_flow(8, 8, 0.0)
        flow.valid_mask[:] = False
        with pytest.raises(ValueError, match="no valid"):
            correspondences_from_flow(flow, stride=1, t1=0, t2=1)

    def test_stride_validated(self):
        flow = translation_flow(8, 8, 0.0)
        with pytest.raises(ValueError, match="stride"):
            correspondences_from_flow(flow, stride=0, t1=0, t2=1)


class TestOracleCorrectness:
    def _check_pair(self, pair, t1, t2, stride=2, tol=0.02):
        cset = correspondences_for_pair(pair, t1, t2, stride)
        a = bilinear_sample(pair.normal.frames[t1], cset.x1, cset.y1)
        b = bilinear_sample(pair.normal.frames[t2], cset.x2, cset.y2)
        return float(np.abs(a - b).mean()), cset

    def test_frames_agree_at_matches(self, small_pair):
        err, _ = self._check_pair(small_pair, 0, 1)
        assert err < 0.02

    def test_longer_span_composed(self, small_pair):
        err, cset = self._check_pair(small_pair, 0, 4)
        assert err < 0.02
        assert cset.t1 == 0 and cset.t2 == 4

    def test_reversed_pair_swaps_endpoints(self, small_pair):
        fwd = correspondences_for_pair(small_pair, 1, 3, 2)
        rev = correspondences_for_pair(small_pair, 3, 1, 2)
        np.testing.assert_array_equal(fwd.x1, rev.x2)
        np.testing.assert_array_equal(fwd.y2, rev.y1)
        err, _ = self._check_pair(small_pair, 3, 1)
        assert err < 0.02

    def test_rejects_degenerate_pair(self, small_pair):
        with pytest.raises(ValueError):
            correspondences_for_pair(small_pair, 2, 2, 1)

    def test_rejects_out_of_clip(self, small_pair):
        with pytest.raises(ValueError, match="outside"):
            correspondences_for_pair(small_pair, 0, 9, 1)


class TestPerturb:
    def _grid_set(self, n=50, w=64, h=64, seed=0):
        rng = np.random.default_rng(seed)
        xy = rng.uniform(0, w - 1, size=(4, n))
        return CorrespondenceSet(0, 1, xy[0], xy[1], xy[2], xy[3], np.ones(n))

    def test_zero_offset_is_identity(self):
        cset = self._grid_set()
        out = perturb(cset, 0.0, rng_seed=7, frame_shape=(64, 64))
        np.testing.assert_array_equal(out.x2, cset.x2)
        np.testing.assert_array_equal(out.y2, cset.y2)
        assert out.source == "perturbed"

    def test_offsets_bounded(self):
        # huge frame so clamping never hides an oversized draw
        cset = self._grid_set(w=64, h=64)
        out = perturb(cset, 20.0, rng_seed=7, frame_shape=(10_000, 10_000))
        assert np.abs(out.x2 - cset.x2).max() <= 20.0
        assert np.abs(out.y2 - cset.y2).max() <= 20.0
        np.testing.assert_array_equal(out.x1, cset.x1)

    def test_clamped_to_bounds(self):
        cset = CorrespondenceSet(
            0, 1, np.array([0.0]), np.array([0.0]), np.array([63.0]), np.array([63.0]), np.array([1.0])
        )
        out = perturb(cset, 20.0, rng_seed=1, frame_shape=(64, 64))
        assert 0.0 <= out.x2[0] <= 63.0
        assert 0.0 <= out.y2[0] <= 63.0

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_deterministic_per_seed(self, seed):
        cset = self._grid_set()
        a = perturb(cset, 5.0, rng_seed=seed, frame_shape=(64, 64))
        b = perturb(cset, 5.0, rng_seed=seed, frame_shape=(64, 64))
        np.testing.assert_array_equal(a.x2, b.x2)
        np.testing.assert_array_equal(a.y2, b.y2)

    def test_rejects_negative_offset(self):
        with pytest.raises(ValueError):
            perturb(self._grid_set(), -1.0, rng_seed=0, frame_shape=(64, 64))


class TestReduce:
    def _grid_set(self, n, seed=0):
        rng = np.random.default_rng(seed)
        xy = rng.uniform(0, 63, size=(4, n))
        return CorrespondenceSet(0, 1, xy[0], xy[1], xy[2], xy[3], rng.uniform(0, 1, n))

    def test_keep_all_is_identity(self):
        cset = self._grid_set(30)
        out = reduce(cset, 1.0, rng_seed=0)
        assert len(out) == 30
        np.testing.assert_array_equal(out.x1, cset.x1)

    def test_hundred_to_ten(self):
        out = reduce(self._grid_set(100), 0.1, rng_seed=0)
        assert len(out) == 10

    def test_ceil_keeps_at_least_one(self):
        out = reduce(self._grid_set(7), 0.1, rng_seed=0)
        assert len(out) == 1

    @given(keep=st.floats(0.05, 1.0), seed=st.integers(0, 1000))
    @settings(max_examples=30, deadline=None)
    def test_subset_and_count(self, keep, seed):
        cset = self._grid_set(40)
        out = reduce(cset, keep, rng_seed=seed)
        assert len(out) == math.ceil(keep * 40)
        pairs = set(zip(cset.x1, cset.y1, cset.x2, cset.y2))
        assert all((x1, y1, x2, y2) in pairs for x1, y1, x2, y2 in zip(out.x1, out.y1, out.x2, out.y2))

    def test_deterministic_per_seed(self):
        cset = self._grid_set(40)
        a = reduce(cset, 0.3, rng_seed=9)
        b = reduce(cset, 0.3, rng_seed=9)
        np.testing.assert_array_equal(a.x1, b.x1)

    def test_rejects_bad_fraction(self):
        with pytest.raises(ValueError):
            reduce(self._grid_set(5), 0.0, rng_seed=0)
        with pytest.raises(ValueError):
            reduce(self._grid_set(5), 1.5, rng_seed=0)


class TestExternalIO:
    def test_parse_round_trip(self, tmp_path):
        path = tmp_path / "matches_c.jsonl"
        path.write_text(json.dumps({"t1": 0, "t2": 1, "x1": 1, "y1": 2, "x2": 3, "y2": 4, "u": 0.9}) + "\n")
        sets, report = load_external(path)
        assert report.n_loaded == 1
        cset = sets[(0, 1)]
        assert len(cset) == 1
        assert cset.u[0] == pytest.approx(0.9)
        assert cset.source == "external"

    def test_empty_file_warns_not_errors(self, tmp_path):
        path = tmp_path / "matches_c.jsonl"
        path.write_text("")
        with pytest.warns(UserWarning, match="empty"):
            sets, report = load_external(path)
        assert sets == {}
        assert report.n_loaded == 0

    def test_weight_clamped_and_counted(self, tmp_path):
        path = tmp_path / "matches_c.jsonl"
        path.write_text(json.dumps({"t1": 0, "t2": 1, "x1": 1, "y1": 1, "x2": 1, "y2": 1, "u": 1.5}) + "\n")
        sets, report = load_external(path)
        assert sets[(0, 1)].u[0] == 1.0
        assert report.n_clamped_weights == 1

    def test_out_of_bounds_dropped_and_counted(self, tmp_path):
        path = tmp_path / "matches_c.jsonl"
        rows = [
            {"t1": 0, "t2": 1, "x1": 1, "y1": 1, "x2": 1, "y2": 1, "u": 0.5},
            {"t1": 0, "t2": 1, "x1": 99, "y1": 1, "x2": 1, "y2": 1, "u": 0.5},
            {"t1": 0, "t2": 1, "x1": -3, "y1": 1, "x2": 1, "y2": 1, "u": 0.5},
        ]
        path.write_text("".join(json.dumps(r) + "\n" for r in rows))
        sets, report = load_external(path, frame_shape=(16, 16))
        assert report.n_loaded == 1
        assert report.n_dropped_out_of_bounds == 2

    def test_malformed_line_names_line_number(self, tmp_path):
        path = tmp_path / "matches_c.jsonl"
        path.write_text('{"t1": 0, "t2": 1, "x1": 1, "y1": 1, "x2": 1, "y2": 1, "u": 0.5}\nnot json\n')
        with pytest.raises(DataError, match=":2:"):
            load_external(path)

    def test_missing_key_names_line(self, tmp_path):
        path = tmp_path / "matches_c.jsonl"
        path.write_text('{"t1": 0, "t2": 1, "x1": 1}\n')
        with pytest.raises(DataError, match="missing keys"):
            load_external(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_external(tmp_path / "nope.jsonl")

    def test_groups_by_pair(self, tmp_path):
        path = tmp_path / "matches_c.jsonl"
        rows = [
            {"t1": 0, "t2": 1, "x1": 1, "y1": 1, "x2": 1, "y2": 1, "u": 0.5},
            {"t1": 1, "t2": 2, "x1": 2, "y1": 2, "x2": 2, "y2": 2, "u": 0.5},
            {"t1": 0, "t2": 1, "x1": 3, "y1": 3, "x2": 3, "y2": 3, "u": 0.5},
        ]
        path.write_text("".join(json.dumps(r) + "\n" for r in rows))
        sets, _ = load_external(path)
        assert set(sets) == {(0, 1), (1, 2)}
        assert len(sets[(0, 1)]) == 2

    def test_save_then_load(self, tmp_path, small_pair):
        cset = correspondences_for_pair(small_pair, 0, 2, 4)
        path = tmp_path / "matches_small.jsonl"
        save_matches([cset], path)
        sets, report = load_external(path, frame_shape=small_pair.normal.shape)
        loaded = sets[(0, 2)]
        assert report.n_dropped_out_of_bounds == 0
        np.testing.assert_allclose(loaded.x1, cset.x1)
        np.testing.assert_allclose(loaded.x2, cset.x2, atol=1e-12)
