import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wakepod.fields import (FieldError, FieldSnapshot, PlaneSpec, SnapshotSet, StructuredGrid,
                            compute_gradient, compute_q_criterion, compute_rotation_rate,
                            compute_strain_rate, default_planes, load_snapshot_set, plane_image,
                            sample_plane, save_snapshot_set, velocity_magnitude)
from wakepod.synth import generate_affine_field


def vector_field(grid, fn, t=0.0):
    x, y, z = grid.mesh()
    return FieldSnapshot.from_array(grid, np.stack(fn(x, y, z), axis=-1), t)


# -- grid and layout ----------------------------------------------------------


def test_storage_order_is_x_fastest(grid3):
    x, y, z = grid3.mesh()
    snap = FieldSnapshot.from_array(grid3, np.stack([x, y, z], axis=-1))
    i, j, k, c = 2, 3, 1, 1
    index = ((k * grid3.ny + j) * grid3.nx + i) * 3 + c
    assert snap.data[index] == pytest.approx(grid3.centers(1)[j])


def test_centers_and_bounds(grid3):
    assert grid3.centers(0)[0] == pytest.approx(1.25)
    assert grid3.bounds(2) == pytest.approx((2.0, 3.2))
    assert grid3.shape == (4, 5, 6)


@pytest.mark.parametrize("bad", [dict(nx=0), dict(dx=0.0), dict(dy=-1.0), dict(nz=1.5)])
def test_grid_validation(bad):
    args = dict(nx=2, ny=2, nz=2, dx=1.0, dy=1.0, dz=1.0)
    args.update(bad)
    with pytest.raises(FieldError):
        StructuredGrid(**args)


def test_grid_dict_roundtrip(grid3):
    assert StructuredGrid.from_dict(grid3.to_dict()) == grid3
    with pytest.raises(FieldError, match="nx"):
        StructuredGrid.from_dict({"ny": 1})


def test_snapshot_validation(grid3):
    with pytest.raises(FieldError, match="size mismatch"):
        FieldSnapshot(grid3, 3, 0.0, np.zeros(grid3.n_cells))
    with pytest.raises(FieldError):
        FieldSnapshot(grid3, 2, 0.0, np.zeros(2 * grid3.n_cells))
    bad = np.zeros(grid3.n_cells)
    bad[3] = np.nan
    with pytest.raises(FieldError, match="non-finite"):
        FieldSnapshot(grid3, 1, 0.0, bad)


def test_snapshot_data_is_read_only(grid3):
    snap = FieldSnapshot(grid3, 1, 0.0, np.zeros(grid3.n_cells))
    with pytest.raises(ValueError):
        snap.data[0] = 1.0


def test_set_requires_increasing_times(grid3):
    a = FieldSnapshot(grid3, 1, 1.0, np.zeros(grid3.n_cells))
    b = FieldSnapshot(grid3, 1, 1.0, np.ones(grid3.n_cells))
    with pytest.raises(FieldError, match="strictly increasing"):
        SnapshotSet(grid3, "u", 1, (a, b))
    with pytest.raises(FieldError):
        SnapshotSet(grid3, "u", 1, ())


# -- file I/O ------------------------------------------------------------------------


def test_save_load_roundtrip_is_bit_exact(tmp_path, grid3, rng):
    snaps = tuple(FieldSnapshot(grid3, 3, t, rng.standard_normal(3 * grid3.n_cells))
                  for t in (0.0, 0.1, 0.7))
    sset = SnapshotSet(grid3, "velocity", 3, snaps)
    save_snapshot_set(sset, tmp_path / "s")
    back = load_snapshot_set(tmp_path / "s")
    assert back.grid == grid3 and back.field_name == "velocity"
    assert back.times == sset.times
    assert np.array_equal(back.stacked(), sset.stacked())


def test_save_refuses_overwrite(tmp_path, grid3):
    sset = SnapshotSet(grid3, "u", 1, (FieldSnapshot(grid3, 1, 0.0, np.zeros(grid3.n_cells)),))
    save_snapshot_set(sset, tmp_path)
    with pytest.raises(FileExistsError):
        save_snapshot_set(sset, tmp_path)
    save_snapshot_set(sset, tmp_path, overwrite=True)


def test_load_rejects_truncated_file(tmp_path, grid3):
    sset = SnapshotSet(grid3, "u", 1, (FieldSnapshot(grid3, 1, 0.0, np.zeros(grid3.n_cells)),))
    save_snapshot_set(sset, tmp_path)
    f = tmp_path / "snapshot_00000.bin"
    f.write_bytes(f.read_bytes()[:-8])
    with pytest.raises(FieldError, match="size mismatch"):
        load_snapshot_set(tmp_path)


def test_load_rejects_bad_manifest(tmp_path, grid3):
    with pytest.raises(FieldError, match="missing manifest"):
        load_snapshot_set(tmp_path)
    sset = SnapshotSet(grid3, "u", 1, (FieldSnapshot(grid3, 1, 0.0, np.zeros(grid3.n_cells)),))
    save_snapshot_set(sset, tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest["version"] = 7
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(FieldError, match="version"):
        load_snapshot_set(tmp_path)


def test_load_rejects_non_finite_data(tmp_path, grid3):
    sset = SnapshotSet(grid3, "u", 1, (FieldSnapshot(grid3, 1, 0.0, np.zeros(grid3.n_cells)),))
    save_snapshot_set(sset, tmp_path)
    data = np.zeros(grid3.n_cells)
    data[0] = np.inf
    (tmp_path / "snapshot_00000.bin").write_bytes(data.astype("<f8").tobytes())
    with pytest.raises(FieldError, match="non-finite"):
        load_snapshot_set(tmp_path)


# -- plane sampling --------------------------------------------------------------------


@pytest.mark.parametrize("axis", ["X", "Y", "Z"])
def test_plane_sample_of_affine_field_is_exact(grid3, axis):
    G = np.arange(9.0).reshape(3, 3) - 4.0
    c = np.array([0.5, -1.0, 2.0])
    snap = generate_affine_field(G, c, grid3)
    ax = "XYZ".index(axis)
    centers = grid3.centers(ax)
    offset = 0.37 * centers[1] + 0.63 * centers[2]
    plane = sample_plane(snap, PlaneSpec(axis, offset))
    assert plane.grid.counts[ax] == 1
    assert plane.grid.centers(ax)[0] == pytest.approx(offset)
    expected = generate_affine_field(G, c, plane.grid)
    np.testing.assert_allclose(plane.data, expected.data, atol=1e-12)


def test_plane_on_cell_center_copies_layer(grid3, rng):
    snap = FieldSnapshot(grid3, 1, 0.0, rng.standard_normal(grid3.n_cells))
    plane = sample_plane(snap, PlaneSpec("Y", grid3.centers(1)[3]))
    assert np.array_equal(plane.array()[:, 0, :, 0], snap.array()[:, 3, :, 0])


def test_plane_out_of_bounds(grid3):
    snap = FieldSnapshot(grid3, 1, 0.0, np.zeros(grid3.n_cells))
    with pytest.raises(FieldError, match="outside"):
        sample_plane(snap, PlaneSpec("Z", 10.0, "far"))
    with pytest.raises(FieldError):
        PlaneSpec("W", 0.0)


def test_plane_image_orientation(grid3):
    x, y, z = grid3.mesh()
    snap = FieldSnapshot.from_array(grid3, x + 100 * z)
    img = plane_image(sample_plane(snap, PlaneSpec("Y", grid3.centers(1)[2])))
    assert img.shape == (grid3.nz, grid3.nx)
    assert np.all(np.diff(img, axis=1) > 0) and np.all(np.diff(img, axis=0) > 0)


def test_default_planes_layout():
    planes = default_planes(126.0, 90.0)
    yz = [p for p in planes if p.axis == "X"]
    assert [p.offset for p in yz] == pytest.approx([63, 126, 189, 252, 315])
    assert {p.axis for p in planes} == {"X", "Y", "Z"}
    assert len({p.label for p in planes}) == len(planes)


# -- derived fields ---------------------------------------------------------------------


def test_gradient_of_affine_field_is_exact(grid3):
    G = np.array([[0.3, -1.0, 2.0], [0.5, 0.0, -0.25], [1.5, 2.5, -0.3]])
    grad = compute_gradient(generate_affine_field(G, [1.0, 2.0, 3.0], grid3))
    np.testing.assert_allclose(grad.array().reshape(-1, 9), np.tile(G.reshape(9), (grid3.n_cells, 1)),
                               atol=1e-12)


def test_gradient_with_two_cell_axis():
    grid = StructuredGrid(2, 3, 4, 1.0, 1.0, 1.0)
    G = np.diag([1.0, 2.0, 3.0])
    grad = compute_gradient(generate_affine_field(G, [0, 0, 0], grid))
    np.testing.assert_allclose(grad.array()[..., [0, 4, 8]], np.broadcast_to([1, 2, 3], grid.shape + (3,)),
                               atol=1e-12)


def test_gradient_rejects_scalar_and_thin_axis(grid3):
    with pytest.raises(FieldError, match="vector"):
        compute_gradient(FieldSnapshot(grid3, 1, 0.0, np.zeros(grid3.n_cells)))
    thin = StructuredGrid(4, 4, 1, 1.0, 1.0, 1.0)
    with pytest.raises(FieldError, match="along z"):
        compute_gradient(FieldSnapshot(thin, 3, 0.0, np.zeros(3 * thin.n_cells)))


def test_solid_body_rotation_q_and_vorticity(grid3):
    w = 1.7
    grad = compute_gradient(vector_field(grid3, lambda x, y, z: (-w * y, w * x, 0 * z)))
    q = compute_q_criterion(grad)
    np.testing.assert_allclose(q.data, w * w, atol=1e-12)
    S = compute_strain_rate(grad).array()
    assert np.max(np.abs(S)) < 1e-12
    W = compute_rotation_rate(grad).array()
    np.testing.assert_allclose(W[..., 1], -w, atol=1e-12)
    np.testing.assert_allclose(W[..., 3], w, atol=1e-12)


def test_pure_shear_strain_and_negative_q():
    # dyadic spacing keeps the differenced gradient exact
    grid = StructuredGrid(6, 5, 4, 0.5, 0.25, 1.0, (1.0, -2.0, 0.0))
    g = 0.75
    grad = compute_gradient(vector_field(grid, lambda x, y, z: (g * y, 0 * x, 0 * z)))
    S = compute_strain_rate(grad).array()
    np.testing.assert_array_equal(S[..., 1], g / 2)
    np.testing.assert_array_equal(S[..., 3], g / 2)
    assert np.all(S[..., [0, 2, 4, 5, 6, 7, 8]] == 0.0)
    # simple shear: equal strain and rotation, Q = 0
    np.testing.assert_allclose(compute_q_criterion(grad).data, 0.0, atol=1e-12)


def test_strain_q_on_pure_strain_is_negative(grid3):
    grad = compute_gradient(vector_field(grid3, lambda x, y, z: (x, -y, 0 * z)))
    np.testing.assert_allclose(compute_q_criterion(grad).data, -1.0, atol=1e-12)


def test_velocity_magnitude(grid3):
    snap = vector_field(grid3, lambda x, y, z: (3 + 0 * x, 4 + 0 * y, 0 * z))
    np.testing.assert_allclose(velocity_magnitude(snap).data, 5.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=9, max_size=9),
       st.integers(2, 6), st.integers(2, 6), st.integers(2, 6))
def test_q_equals_half_invariant_difference(entries, nx, ny, nz):
    grid = StructuredGrid(nx, ny, nz, 0.7, 1.1, 0.9)
    G = np.array(entries).reshape(3, 3)
    grad = compute_gradient(generate_affine_field(G, [0, 0, 0], grid))
    # Q = -tr(G G) / 2 for any gradient tensor
    expected = -0.5 * np.trace(G @ G)
    np.testing.assert_allclose(compute_q_criterion(grad).data, expected, atol=1e-9)
