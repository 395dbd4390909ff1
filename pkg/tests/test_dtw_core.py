from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.dtw_core import (
    CostMatrix,
    SpringState,
    dtw_full,
    jitkw,
    pairwise_dist,
    sakoe_chiba_width,
    spring_scan,
    spring_update,
    traceback,
)
from src.errors import ConfigurationError, NoPathError


def enumerate_min_cost(x, y, band=None):
    """Minimum cost over every monotone path, by exhaustive enumeration."""
    n, m = len(x), len(y)
    best = np.inf

    def walk(i, j, total):
        nonlocal best
        if band is not None and abs(i - j) > band:
            return
        total += abs(x[i] - y[j])
        if i == n - 1 and j == m - 1:
            best = min(best, total)
            return
        if i + 1 < n:
            walk(i + 1, j, total)
        if j + 1 < m:
            walk(i, j + 1, total)
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, total)

    walk(0, 0, 0.0)
    return best


def memo_cost(x, y, band=None):
    """Recursive DTW recurrence, memoised."""

    @lru_cache(maxsize=None)
    def d(i, j):
        if band is not None and abs(i - j) > band:
            return np.inf
        cost = abs(x[i] - y[j])
        if i == 0 and j == 0:
            return cost
        candidates = []
        if i > 0 and j > 0:
            candidates.append(d(i - 1, j - 1))
        if i > 0:
            candidates.append(d(i - 1, j))
        if j > 0:
            candidates.append(d(i, j - 1))
        return cost + min(candidates)

    return d(len(x) - 1, len(y) - 1)


class TestDtwFull:
    """Tests for the accumulated cost matrix"""

    def test_identical_sequences_cost_zero(self):
        """Test that a sequence aligned with itself costs nothing"""
        x = np.array([0.0, 1.0, 3.0, 1.0, 0.0])
        assert dtw_full(x, x).final_cost == 0.0

    def test_matches_exhaustive_enumeration(self):
        """Test the final cost against every monotone path for small inputs"""
        rng = np.random.default_rng(7)
        for n in range(1, 6):
            for m in range(1, 6):
                x = rng.normal(size=n)
                y = rng.normal(size=m)
                assert dtw_full(x, y).final_cost == pytest.approx(enumerate_min_cost(x, y))

    def test_banded_matches_exhaustive_enumeration(self):
        """Test banded costs against enumeration restricted to the band"""
        rng = np.random.default_rng(11)
        for n, m, band in [(5, 5, 0), (5, 5, 1), (6, 4, 2), (4, 6, 3)]:
            x = rng.normal(size=n)
            y = rng.normal(size=m)
            assert dtw_full(x, y, band_width=band).final_cost == pytest.approx(enumerate_min_cost(x, y, band))

    def test_matches_memoised_recurrence(self):
        """Test medium-sized inputs against the memoised recurrence"""
        rng = np.random.default_rng(3)
        for n, m in [(30, 30), (25, 18), (12, 30)]:
            x = tuple(rng.normal(size=n))
            y = tuple(rng.normal(size=m))
            band = sakoe_chiba_width(n, m, 0.1)
            assert dtw_full(x, y).final_cost == pytest.approx(memo_cost(x, y))
            assert dtw_full(x, y, band_width=band).final_cost == pytest.approx(memo_cost(x, y, band))

    def test_zero_band_equal_lengths_is_lockstep(self):
        """Test that a zero-width band reduces to the elementwise distance"""
        x = np.array([1.0, 2.0, 3.0, 4.0])
        y = np.array([1.5, 2.0, 2.0, 5.0])
        assert dtw_full(x, y, band_width=0).final_cost == pytest.approx(np.abs(x - y).sum())

    def test_cells_outside_band_are_infinite(self):
        """Test that band-excluded cells hold +inf"""
        matrix = dtw_full(np.zeros(6), np.zeros(6), band_width=1)
        assert np.isinf(matrix.cells[0, 3])
        assert np.isinf(matrix.cells[5, 0])
        assert matrix.cells[2, 3] == 0.0

    def test_narrow_band_with_unequal_lengths_raises(self):
        """Test that a band narrower than the length gap admits no path"""
        with pytest.raises(NoPathError):
            dtw_full(np.zeros(10), np.zeros(4), band_width=2)

    def test_negative_band_rejected(self):
        """Test that a negative band width is a configuration error"""
        with pytest.raises(ConfigurationError):
            dtw_full(np.zeros(3), np.zeros(3), band_width=-2)

    def test_empty_input_rejected(self):
        """Test that empty sequences are rejected"""
        with pytest.raises(ValueError):
            dtw_full([], [1.0])

    def test_squared_cost(self):
        """Test the squared pairwise cost on a lockstep alignment"""
        x = np.array([0.0, 2.0])
        y = np.array([1.0, 0.0])
        assert dtw_full(x, y, band_width=0, squared=True).final_cost == pytest.approx(1.0 + 4.0)

    @settings(deadline=None, max_examples=50)
    @given(
        st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=8),
        st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=8),
    )
    def test_symmetric_in_arguments(self, x, y):
        """Test that swapping the sequences leaves the unconstrained cost unchanged"""
        assert dtw_full(x, y).final_cost == pytest.approx(dtw_full(y, x).final_cost)

    @settings(deadline=None, max_examples=50)
    @given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=1, max_size=10))
    def test_bounded_by_lockstep_distance(self, pairs):
        """Test that DTW never exceeds the diagonal alignment cost"""
        x = np.array([p[0] for p in pairs])
        y = np.array([p[1] for p in pairs])
        assert dtw_full(x, y).final_cost <= np.abs(x - y).sum() + 1e-9


class TestTraceback:
    """Tests for warping path recovery"""

    def test_path_is_monotone_and_complete(self):
        """Test the boundary and step conditions of a recovered path"""
        rng = np.random.default_rng(1)
        x, y = rng.normal(size=17), rng.normal(size=11)
        path = traceback(dtw_full(x, y))

        assert tuple(path.pairs[0]) == (0, 0)
        assert tuple(path.pairs[-1]) == (16, 10)
        steps = np.diff(path.pairs, axis=0)
        assert set(map(tuple, steps)) <= {(1, 0), (0, 1), (1, 1)}

    def test_local_costs_sum_to_path_cost(self):
        """Test that the path cost equals the sum of its local costs"""
        rng = np.random.default_rng(2)
        x, y = rng.normal(size=20), rng.normal(size=15)
        path = traceback(dtw_full(x, y))
        assert path.local_costs.sum() == pytest.approx(path.cost)
        assert path.cost == dtw_full(x, y).final_cost

    def test_ties_prefer_diagonal(self):
        """Test that equal predecessors resolve to the diagonal step"""
        path = traceback(dtw_full(np.zeros(3), np.zeros(3)))
        assert path.pairs.tolist() == [[0, 0], [1, 1], [2, 2]]

    def test_ties_prefer_vertical_over_horizontal(self):
        """Test that equal non-diagonal predecessors resolve to the vertical step"""
        cells = np.array([[5.0, 1.0], [1.0, 2.0]])
        matrix = CostMatrix(2, 2, cells, None, np.zeros(2), np.zeros(2))
        path = traceback(matrix)
        assert path.pairs.tolist() == [[0, 0], [0, 1], [1, 1]]

    def test_custom_end_index(self):
        """Test tracing back from an interior stream index"""
        x = np.array([0.0, 1.0, 2.0, 9.0, 9.0])
        y = np.array([0.0, 1.0, 2.0])
        matrix = dtw_full(x, y)
        path = traceback(matrix, end_stream_index=2)
        assert path.end == 2
        assert path.cost == 0.0

    def test_end_index_out_of_range(self):
        """Test that an end index outside the matrix raises"""
        matrix = dtw_full(np.zeros(3), np.zeros(3))
        with pytest.raises(NoPathError):
            traceback(matrix, end_stream_index=5)

    def test_shifted_moves_stream_side_only(self):
        """Test that shifting a path offsets only stream indices"""
        path = traceback(dtw_full(np.arange(4.0), np.arange(4.0)))
        moved = path.shifted(100)
        assert moved.start == 100
        assert moved.pairs[:, 1].tolist() == path.pairs[:, 1].tolist()


class TestSakoeChibaWidth:
    """Tests for the band half-width rule"""

    def test_fraction_of_longer_sequence(self):
        """Test the fractional width for equal lengths"""
        assert sakoe_chiba_width(100, 100, 0.1) == 10

    def test_widened_to_length_gap(self):
        """Test that the width never drops below the length difference"""
        assert sakoe_chiba_width(100, 80, 0.1) == 20
        assert sakoe_chiba_width(10, 3, 0.1) == 7

    def test_width_always_admits_a_path(self):
        """Test that the rule never yields an infeasible band"""
        for n, m in [(5, 40), (40, 5), (33, 34), (1, 7)]:
            dtw_full(np.zeros(n), np.zeros(m), band_width=sakoe_chiba_width(n, m, 0.1))

    def test_pairwise_dist(self):
        """Test the absolute sample distance"""
        assert pairwise_dist(2.0, -1.0) == 3.0
        assert pairwise_dist(-1.0, 2.0) == 3.0


class TestSpring:
    """Tests for streaming subsequence matching"""

    def test_matches_brute_force_over_starts(self):
        """Test acc[m-1] against the minimum DTW cost over all subsequence starts"""
        rng = np.random.default_rng(5)
        x, y = rng.normal(size=14), rng.normal(size=4)
        scan = spring_scan(x, y)

        for t in range(x.size):
            costs = [dtw_full(x[s : t + 1], y).final_cost for s in range(t + 1)]
            assert scan.acc_last[t] == pytest.approx(min(costs))
            start = scan.start_last[t]
            assert dtw_full(x[start : t + 1], y).final_cost == pytest.approx(min(costs))

    @pytest.mark.slow
    def test_random_streams_match_min_over_starts(self):
        """Test acc[m-1] at every t on 50 random cases against full DTW minimised over starts"""
        rng = np.random.default_rng(2024)
        for _ in range(50):
            n, m = int(rng.integers(2, 121)), int(rng.integers(2, 41))
            x, y = rng.normal(size=n), rng.normal(size=m)
            best = np.full(n, np.inf)
            for s in range(n):
                # cells[i, -1] is the cost of x[s..s+i] against the whole template
                best[s:] = np.minimum(best[s:], dtw_full(x[s:], y).cells[:, -1])
            np.testing.assert_allclose(spring_scan(x, y).acc_last, best, rtol=0, atol=1e-9)

    def test_embedded_template_found_exactly(self):
        """Test that an exact occurrence gives zero distance and its start"""
        y = np.array([0.0, 1.0, 3.0, 1.0])
        x = np.concatenate([np.full(7, 5.0), y, np.full(5, 5.0)])
        scan = spring_scan(x, y)
        end = 7 + y.size - 1
        assert scan.acc_last[end] == 0.0
        assert scan.start_last[end] == 7

    def test_update_matches_scan(self):
        """Test that stepping one sample at a time reproduces the compiled scan"""
        rng = np.random.default_rng(9)
        x, y = rng.normal(size=25), rng.normal(size=6)
        scan = spring_scan(x, y)

        state = SpringState.initial(y.size)
        for t, x_t in enumerate(x):
            state = spring_update(state, x_t, y)
            assert state.t == t
            assert state.best_cost == pytest.approx(scan.acc_last[t])
            assert state.best_start == scan.start_last[t]

    def test_update_returns_new_state(self):
        """Test that the previous state is left untouched"""
        y = np.array([0.0, 1.0, 0.0])
        state = SpringState.initial(3)
        updated = spring_update(state, 0.5, y)
        assert np.all(np.isinf(state.acc))
        assert updated.acc[0] == pytest.approx(0.5)
        assert updated.start[0] == 0

    def test_template_length_mismatch(self):
        """Test that a state built for another template length is rejected"""
        with pytest.raises(ValueError):
            spring_update(SpringState.initial(4), 0.0, np.zeros(3))


class TestKernelOptions:
    """Tests for the numba compilation options"""

    def test_gil_released_and_not_cached(self):
        """Test that kernels release the GIL for threaded analyses and are compiled per process"""
        assert jitkw["nogil"] is True
        assert jitkw["cache"] is False
