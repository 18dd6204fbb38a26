import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srtool.tensor import ShapeError
from srtool.tiling import (batch_indices, expected_fraction, k_max, make_batches, merge_tiles,
                           random_select, sequential_plan, split_tiles)


def test_231_gives_49_tiles(rng):
    tiles, grid = split_tiles(rng.random((3, 231, 231)), 33)
    assert tiles.shape == (49, 3, 33, 33)
    assert grid.origins[:3] == ((0, 0), (0, 33), (0, 66))


def test_400_gives_169_edge_anchored(rng):
    tiles, grid = split_tiles(rng.random((3, 400, 400)), 33)
    assert len(tiles) == 13 * 13
    rows = sorted({r for r, _ in grid.origins})
    assert rows[-1] == 400 - 33 and rows[:-1] == list(range(0, 397, 33))[:12]


def test_single_tile(rng):
    img = rng.random((3, 33, 33))
    tiles, grid = split_tiles(img, 33)
    assert len(tiles) == 1 and np.array_equal(tiles[0], img)


def test_too_small_rejected():
    with pytest.raises(ShapeError):
        split_tiles(np.zeros((3, 20, 40)), 33)


def test_row_major_order(rng):
    img = rng.random((3, 66, 99))
    tiles, grid = split_tiles(img, 33)
    assert grid.origins == ((0, 0), (0, 33), (0, 66), (33, 0), (33, 33), (33, 66))
    np.testing.assert_array_equal(tiles[4], img[:, 33:66, 33:66])


@pytest.mark.parametrize("size", [99, 100])
def test_round_trip(rng, size):
    img = rng.random((3, size, size))
    tiles, grid = split_tiles(img, 33)
    assert np.array_equal(merge_tiles(tiles, grid), img)


def test_zeroed_tile_changes_only_its_exclusive_region(rng):
    img = rng.random((3, 100, 100)) + 0.5
    tiles, grid = split_tiles(img, 33)
    tiles[5] = 0
    merged = merge_tiles(tiles, grid)
    changed = np.any(merged != img, axis=0)
    r, c = grid.origins[5]
    inside = np.zeros_like(changed)
    inside[r:r + 33, c:c + 33] = True
    assert not np.any(changed & ~inside)
    assert np.all(changed[grid.exclusive_mask(5)])


def test_merge_rejects_mismatch(rng):
    tiles, grid = split_tiles(rng.random((3, 66, 66)), 33)
    with pytest.raises(ShapeError):
        merge_tiles(tiles[:3], grid)


@settings(max_examples=50, deadline=None)
@given(h=st.integers(5, 80), w=st.integers(5, 80), t=st.integers(1, 5).map(lambda k: k * 4 + 1))
def test_coverage_and_round_trip(h, w, t):
    if t > min(h, w):
        return
    img = np.random.default_rng(h * 97 + w).random((2, h, w))
    tiles, grid = split_tiles(img, t)
    assert len(tiles) == -(-h // t) * -(-w // t)
    assert grid.coverage().min() >= 1
    assert len(set(grid.origins)) == len(grid.origins)
    assert np.array_equal(merge_tiles(tiles, grid), img)


def test_batches_shape_48_by_8(rng):
    tiles = rng.random((48, 3, 33, 33))
    batches = make_batches(tiles, 8, np.random.default_rng(0))
    assert np.array(batches).shape == (6, 8, 3, 33, 33)


def test_short_batch():
    batches = make_batches(np.zeros((5, 3, 4, 4)), 8, np.random.default_rng(0))
    assert len(batches) == 1 and len(batches[0]) == 5


def test_empty_rejected():
    with pytest.raises(ValueError):
        make_batches(np.zeros((0, 3, 4, 4)), 8, np.random.default_rng(0))


def test_shuffle_seeded_and_complete():
    a = batch_indices(100, 8, np.random.default_rng(7))
    b = batch_indices(100, 8, np.random.default_rng(7))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert sorted(np.concatenate(a).tolist()) == list(range(100))
    tiles = np.arange(100.0).reshape(100, 1, 1, 1)
    flat = np.concatenate(make_batches(tiles, 8, np.random.default_rng(1))).ravel()
    assert sorted(flat.tolist()) == list(range(100))


def test_k_bounds_144():
    batches = batch_indices(144, 8, np.random.default_rng(0))
    assert len(batches) == 18 and k_max(144, 8) == 2
    ks = {random_select(batches, np.random.default_rng(s), 8).k for s in range(200)}
    assert ks == {1, 2}


def test_k_clamped_to_one():
    batches = batch_indices(63, 8, np.random.default_rng(0))
    assert k_max(63, 8) == 1
    assert all(random_select(batches, np.random.default_rng(s), 8).k == 1 for s in range(50))


@pytest.mark.parametrize("b", [1, 8, 32])
def test_plan_invariants(b):
    rng = np.random.default_rng(b)
    for n in list(range(1, 60)) + list(rng.integers(60, 2001, size=40)):
        batches = batch_indices(int(n), b, rng)
        plan = random_select(batches, rng, b)
        assert 1 <= plan.k <= max(1, n // (8 * b))
        assert len(set(plan.selected)) == plan.k == len(plan.selected)
        assert all(0 <= i < len(batches) for i in plan.selected)


def test_expected_fraction_closed_form():
    # n = 1024, b = 8: 128 batches of 8, k ~ U{1..16}
    assert expected_fraction(1024, 8) == 8.5 * 8 / 1024
    assert abs(expected_fraction(1024, 8) - 1 / 16) < 0.005


def test_expected_fraction_matches_enumeration():
    # exact expectation by enumerating k and averaging batch sizes, including a short last batch
    for n, b in [(100, 8), (1000, 8), (77, 3)]:
        sizes = [min(b, n - i) for i in range(0, n, b)]
        top = min(max(1, n // (8 * b)), len(sizes))
        mean_size = sum(sizes) / len(sizes)
        exact = sum(k * mean_size for k in range(1, top + 1)) / top / n
        assert abs(expected_fraction(n, b) - exact) < 1e-12


def test_sequential_plan_visits_all():
    batches = batch_indices(144, 8, np.random.default_rng(0))
    plan = sequential_plan(batches, 8)
    assert plan.selected == tuple(range(18))
