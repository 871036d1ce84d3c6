"""Hierarchical encodings: exhaustive direct-formula oracles, codomain laws,
cell decoding, and query-coordinate grids."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from c2dsr.encodings import (QueryCoord, WindowGeometry, cell_vector,
                             coord_hier_bits, coord_hier_encoding,
                             encoding_plane, local_coord_grid, query_layout,
                             window_hier_encoding)


def test_window_encoding_origin():
    g = WindowGeometry(w=8, h=8, W=16, H=16)
    assert window_hier_encoding(g, 0, 0) == (0, 0)


def test_window_encoding_hand_cases():
    g = WindowGeometry(w=8, h=8, W=16, H=16)
    assert window_hier_encoding(g, 5, 3) == (1, 0)    # floor(10/8)=1, floor(6/8)=0
    assert window_hier_encoding(g, 11, 13) == (0, 1)  # floor(22/8)=2, floor(26/8)=3


def test_window_encoding_out_of_range():
    g = WindowGeometry(w=4, h=4, W=8, H=8)
    with pytest.raises(ValueError):
        window_hier_encoding(g, 8, 0)
    with pytest.raises(ValueError):
        window_hier_encoding(g, 0, -1)


def test_window_encoding_exhaustive_64():
    """Every index of a 64x64 grid against the direct formula, several windows."""
    for w, h in [(8, 8), (16, 4), (64, 64), (5, 7)]:
        g = WindowGeometry(w=w, h=h, W=64, H=64)
        plane = encoding_plane(g)
        mismatches = 0
        for v in range(64):
            for u in range(64):
                expect = ((2 * u) // w % 2, (2 * v) // h % 2)
                if window_hier_encoding(g, u, v) != expect:
                    mismatches += 1
                if (plane[v, u, 0], plane[v, u, 1]) != expect:
                    mismatches += 1
        assert mismatches == 0


def test_encoding_plane_codomain_and_single_flip():
    g = WindowGeometry(w=16, h=16, W=16, H=16)
    plane = encoding_plane(g)
    assert set(np.unique(plane)) <= {0.0, 1.0}
    # full-map window: each axis bit flips exactly once, at the half boundary
    for row in (plane[0, :, 0], plane[:, 0, 1]):
        flips = np.count_nonzero(np.diff(row))
        assert flips == 1 and row[7] == 0.0 and row[8] == 1.0


def test_encoding_plane_1x1():
    plane = encoding_plane(WindowGeometry(w=1, h=1, W=1, H=1))
    np.testing.assert_array_equal(plane, np.zeros((1, 1, 2), np.float32))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 60), st.integers(0, 60))
def test_window_encoding_periodicity(w, h, u, v):
    g = WindowGeometry(w=w, h=h, W=128, H=128)
    assert window_hier_encoding(g, u, v) == window_hier_encoding(g, u + w, v + h)


def test_window_encoding_splits_even_window_in_half():
    for w in (2, 4, 8, 10):
        g = WindowGeometry(w=w, h=w, W=w, H=w)
        bits = [window_hier_encoding(g, u, 0)[0] for u in range(w)]
        assert bits == [0] * (w // 2) + [1] * (w // 2)


# ---------------------------------------------------------------------------
# query-coordinate encoding

def test_coord_encoding_origin():
    for j in (0, 1):
        assert coord_hier_encoding(QueryCoord(0.0, 0.0, j)) == (0, 0)


def test_coord_encoding_hand_cases():
    assert coord_hier_encoding(QueryCoord(0.3, 0.7, 0)) == (0, 1)
    assert coord_hier_encoding(QueryCoord(0.3, 0.7, 1)) == (1, 0)


def test_coord_encoding_rejects_bad_input():
    with pytest.raises(ValueError):
        QueryCoord(1.0, 0.0, 0)
    with pytest.raises(ValueError):
        QueryCoord(0.5, 0.5, 2)


def test_coord_encoding_exhaustive_32_lattice():
    """32x32 lattice of local coordinates at levels 0 and 1; zero mismatches."""
    mismatches = 0
    for j in (0, 1):
        scale = 2 ** (j + 1)
        for iy in range(32):
            for ix in range(32):
                x, y = ix / 32.0, iy / 32.0
                expect = (int(x * scale) % 2, int(y * scale) % 2)
                got = coord_hier_encoding(QueryCoord(x, y, j))
                if got != expect:
                    mismatches += 1
                vec = coord_hier_bits(np.array([[x, y]]), j)[0]
                if (int(vec[0]), int(vec[1])) != expect:
                    mismatches += 1
    assert mismatches == 0


def test_coord_encoding_level_frequency():
    # level j flips with spatial frequency 2^(j+1) across the unit cell
    xs = (np.arange(64) + 0.5) / 64
    for j in (0, 1):
        bits = coord_hier_bits(np.stack([xs, xs], axis=-1), j)[:, 0]
        assert np.count_nonzero(np.diff(bits)) == 2 ** (j + 1) - 1


# ---------------------------------------------------------------------------
# cell decoding

def test_cell_vector_values():
    np.testing.assert_allclose(cell_vector(2.0, 64, 64), [0.015625, 0.015625])
    np.testing.assert_allclose(cell_vector(1.0, 2, 4), [1.0, 0.5])


def test_cell_vector_monotone_in_scale():
    vals = [cell_vector(s, 16, 16)[0] for s in (1.0, 2.0, 4.0)]
    assert vals[0] > vals[1] > vals[2] > 0


def test_cell_vector_rejects_bad_input():
    with pytest.raises(ValueError):
        cell_vector(2.0, 0, 4)
    with pytest.raises(ValueError):
        cell_vector(0.0, 4, 4)


# ---------------------------------------------------------------------------
# coordinate grids

def test_local_grid_s1_is_cell_centers():
    local, idx = local_coord_grid(1.0, 3, 5)
    np.testing.assert_allclose(local, np.full((3, 5, 2), 0.5))
    np.testing.assert_array_equal(idx[..., 0], np.arange(3)[:, None] * np.ones((1, 5), int))
    np.testing.assert_array_equal(idx[..., 1], np.ones((3, 1), int) * np.arange(5))


def test_local_grid_s2_single_cell():
    local, idx = local_coord_grid(2.0, 1, 1)
    assert local.shape == (2, 2, 2)
    np.testing.assert_allclose(sorted(np.unique(local)), [0.25, 0.75])
    assert np.all(idx == 0)


def test_local_grid_codomain():
    for s in (1.0, 1.3, 2.0, 3.7):
        local, idx = local_coord_grid(s, 7, 5)
        assert local.shape[:2] == (int(s * 7), int(s * 5))
        assert np.all(local >= 0.0) and np.all(local < 1.0)
        assert np.all(idx[..., 0] >= 0) and np.all(idx[..., 0] < 7)
        assert np.all(idx[..., 1] >= 0) and np.all(idx[..., 1] < 5)


def test_local_grid_rejects_downscale():
    with pytest.raises(ValueError):
        local_coord_grid(0.5, 4, 4)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 24), st.integers(1, 24))
def test_query_layout_nearest_cell_property(h, w, sh, sw):
    local, idx = query_layout(h, w, sh, sw)
    # reconstruct the continuous position and check it rounds to the given cell
    gy = (np.arange(sh) + 0.5) / sh * h
    gx = (np.arange(sw) + 0.5) / sw * w
    np.testing.assert_allclose(idx[:, 0, 0] + local[:, 0, 0], gy, atol=1e-5)
    np.testing.assert_allclose(idx[0, :, 1] + local[0, :, 1], gx, atol=1e-5)
