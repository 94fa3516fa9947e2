import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asymseg.patching import (
    SelectionError,
    augment,
    build_grid,
    extract_patch,
    lesion_counts,
    select_training_patches,
)
from asymseg.volume import Volume


def test_reference_counts_half_overlap():
    grid = build_grid((128, 224, 256), 64, 0.5)
    assert grid.stride == 32
    assert grid.counts == (5, 8, 9)
    assert grid.n_centers == 360
    assert grid.n_patches == 1440


def test_reference_counts_three_quarter_overlap():
    grid = build_grid((128, 224, 256), 64, 0.75)
    assert grid.counts == (9, 15, 17)
    assert grid.n_centers == 2295
    assert grid.n_patches == 9180


def test_single_tile_cases():
    lattice = build_grid((64, 64, 64), 64, 0.0)
    assert [ax.tolist() for ax in lattice.axis_centers] == [[0, 64]] * 3
    tiles = build_grid((64, 64, 64), 64, 0.0, layout="tiles")
    assert tiles.n_centers == 1 and tiles.centers() == [(32, 32, 32)]


def test_padding_to_stride_multiple():
    grid = build_grid((30, 33, 64), 16, 0.5)
    assert grid.padded_dims == (32, 40, 64)
    assert grid.counts == (5, 6, 9)


def test_grid_errors():
    with pytest.raises(ValueError):
        build_grid((8, 8, 8), 0, 0.5)
    with pytest.raises(ValueError):
        build_grid((8, 8, 8), 1, 0.9)  # stride rounds to zero
    with pytest.raises(ValueError):
        build_grid((8, 8, 8), 40, 0.75)  # S > 2 * padded axis
    with pytest.raises(ValueError):
        build_grid((8, 8, 8), 8, 0.5, layout="tiles")


def _coverage(grid):
    S = grid.patch_size
    cover = np.zeros(grid.padded_dims, dtype=int)
    for c in grid.centers():
        lo = [max(ci - S // 2, 0) for ci in c]
        hi = [min(ci - S // 2 + S, L) for ci, L in zip(c, grid.padded_dims)]
        cover[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] += 1
    return cover


@pytest.mark.parametrize("dims,S,f", [((32, 40, 24), 16, 0.5), ((20, 20, 20), 8, 0.75),
                                      ((16, 16, 16), 16, 0.0)])
def test_union_covers_padded_volume(dims, S, f):
    cover = _coverage(build_grid(dims, S, f))
    assert cover.min() >= 1


def test_half_overlap_covers_each_voxel_eight_times():
    cover = _coverage(build_grid((32, 48, 24), 16, 0.5))
    assert np.all(cover == 8)


def test_identity_augmentation_returns_raw_cube():
    rng = np.random.default_rng(0)
    v = Volume(rng.normal(size=(2, 16, 16, 16)))
    grid = build_grid(v.dims, 8, 0.5)
    p = extract_patch(v, (8, 4, 12), grid, 0)
    np.testing.assert_array_equal(p.data, v.data[:, 4:12, 0:8, 8:16])
    assert p.extent == ((4, 12), (0, 8), (8, 16))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), aug=st.integers(0, 3))
def test_augmentation_is_involution(seed, aug):
    cube = np.random.default_rng(seed).normal(size=(2, 6, 6, 6))
    np.testing.assert_array_equal(augment(augment(cube, aug), aug), cube)


def test_rotation_reverses_orthogonal_axes():
    cube = np.arange(27).reshape(3, 3, 3)
    np.testing.assert_array_equal(augment(cube, 1), cube[:, ::-1, ::-1])
    np.testing.assert_array_equal(augment(cube, 2), cube[::-1, :, ::-1])
    np.testing.assert_array_equal(augment(cube, 3), cube[::-1, ::-1, :])


def test_corner_patch_is_one_eighth_data():
    v = Volume(np.ones((1, 16, 16, 16)))
    grid = build_grid(v.dims, 8, 0.5)
    p = extract_patch(v, (0, 0, 0), grid)
    assert p.data.shape == (1, 8, 8, 8)
    assert p.data.sum() == 8 ** 3 / 8
    assert np.all(p.data[:, 4:, 4:, 4:] == 1)


def test_off_lattice_center_rejected():
    v = Volume(np.ones((1, 16, 16, 16)))
    grid = build_grid(v.dims, 8, 0.5)
    with pytest.raises(ValueError, match="lattice"):
        extract_patch(v, (3, 4, 4), grid)


def test_lesion_counts_brute_force():
    rng = np.random.default_rng(4)
    g = (rng.random((20, 12, 16)) < 0.1).astype(np.uint8)
    grid = build_grid(g.shape, 8, 0.5)
    expected = []
    for c in grid.centers():
        expected.append(int(extract_patch(g, c, grid).data.sum()))
    assert lesion_counts(g, grid).tolist() == expected


def test_selection_empty_mask():
    g = np.zeros((16, 16, 16), np.uint8)
    grid = build_grid(g.shape, 8, 0.5)
    with pytest.raises(SelectionError, match="short by 1"):
        select_training_patches(g, grid, 10, 1, 0)


def test_selection_threshold_boundary():
    g = np.zeros((32, 32, 32), np.uint8)
    g[13:15, 13:18, 16] = 1  # 10 voxels, inside only the patch centred at 16
    grid = build_grid(g.shape, 16, 0.0)  # stride 16: patches [-8,8), [8,24), [24,40)
    assert select_training_patches(g, grid, 10, 1, 0) == [(16, 16, 16)]
    with pytest.raises(SelectionError):
        select_training_patches(g, grid, 11, 1, 0)


def test_selection_deterministic_and_valid():
    rng = np.random.default_rng(9)
    g = (rng.random((32, 32, 32)) < 0.02).astype(np.uint8)
    grid = build_grid(g.shape, 16, 0.5)
    a = select_training_patches(g, grid, 10, 6, 123)
    b = select_training_patches(g, grid, 10, 6, 123)
    assert a == b
    assert len(set(a)) == 6
    for c in a:
        assert extract_patch(g, c, grid).data.sum() >= 10


def test_equal_quota_per_image():
    rng = np.random.default_rng(1)
    masks = [(rng.random((24, 24, 24)) < f).astype(np.uint8) for f in (0.01, 0.05, 0.2)]
    chosen = [select_training_patches(m, build_grid(m.shape, 12, 0.5), 10, 5, i)
              for i, m in enumerate(masks)]
    assert [len(c) for c in chosen] == [5, 5, 5]
