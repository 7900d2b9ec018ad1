import numpy as np
import pytest

from wakepod.fields import FieldError, PlaneSpec, StructuredGrid, sample_plane_set
from wakepod.pod import assemble_snapshot_matrix, cumulative_energy, decompose
from wakepod.synth import (SeparableSpec, SeparableTerm, WakeModelParams, generate_affine_field,
                           generate_separable_field, generate_wake_set, generate_wake_snapshot,
                           spatial_shape)

D = 126.0
WAKE_GRID = StructuredGrid(32, 24, 24, 3.5 * D / 32, 2 * D / 24, 2 * D / 24, (-0.5 * D, -D, 0.0))
SMALL_GRID = StructuredGrid(12, 8, 8, 3.5 * D / 12, 2 * D / 8, 2 * D / 8, (-0.5 * D, -D, 0.0))
QUIET = dict(deficit_amplitude=0.0, tip_vortex_amplitude=0.0, tower_wake_amplitude=0.0)


def test_defaults_match_rated_conditions():
    p = WakeModelParams()
    assert (p.U_inf, p.rotor_rpm, p.D, p.hub_height) == (11.4, 12.1, 126.0, 90.0)
    assert p.blade_passing_frequency == pytest.approx(3 * 12.1 / 60)
    assert p.tower_frequency == pytest.approx(0.2 * 11.4 / 6.0)


@pytest.mark.parametrize("field", ["deficit_amplitude", "tip_vortex_amplitude",
                                   "tower_wake_amplitude"])
def test_negative_amplitude_names_field(field):
    with pytest.raises(FieldError, match=field):
        WakeModelParams(**{field: -0.1})


@pytest.mark.parametrize("field", ["U_inf", "D", "hub_height"])
def test_non_positive_geometry_rejected(field):
    with pytest.raises(FieldError, match=field):
        WakeModelParams(**{field: 0.0})


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(FieldError, match="bogus"):
        WakeModelParams.from_dict({"bogus": 1})
    assert WakeModelParams.from_dict({"seed": 3}).seed == 3


def test_zero_amplitudes_give_uniform_flow():
    snap = generate_wake_snapshot(WakeModelParams(**QUIET), SMALL_GRID, 1.3)
    arr = snap.array()
    np.testing.assert_array_equal(arr[..., 0], 11.4)
    np.testing.assert_array_equal(arr[..., 1:], 0.0)


def test_rotor_outside_grid_rejected():
    grid = StructuredGrid(4, 4, 4, 10.0, 10.0, 10.0, (0.0, 5.0, 0.0))
    with pytest.raises(FieldError, match="rotor"):
        generate_wake_snapshot(WakeModelParams(), grid, 0.0)


def test_superposition_of_terms():
    t = 2.7
    a, b, c = 0.3, 0.5, 1.5

    def field(da, ta, wa):
        p = WakeModelParams(deficit_amplitude=da, tip_vortex_amplitude=ta, tower_wake_amplitude=wa)
        return generate_wake_snapshot(p, SMALL_GRID, t).data

    base = field(0, 0, 0)
    combined = field(a, b, c)
    parts = field(a, 0, 0) + field(0, b, 0) + field(0, 0, c) - 2 * base
    np.testing.assert_allclose(combined, parts, atol=1e-12)


def test_deficit_is_velocity_loss_behind_rotor():
    p = WakeModelParams(tip_vortex_amplitude=0.0, tower_wake_amplitude=0.0)
    arr = generate_wake_snapshot(p, WAKE_GRID, 0.0).array()
    x = WAKE_GRID.centers(0)
    upstream, downstream = np.argmax(x > -0.4 * D) - 1, np.argmax(x > D)
    j = np.argmin(np.abs(WAKE_GRID.centers(1)))
    k = np.argmin(np.abs(WAKE_GRID.centers(2) - 90.0))
    assert arr[k, j, upstream, 0] == pytest.approx(11.4)
    assert arr[k, j, downstream, 0] < 11.4 * 0.8


def test_seed_is_deterministic():
    p = WakeModelParams(seed=5)
    a = generate_wake_snapshot(p, SMALL_GRID, 0.4).data
    b = generate_wake_snapshot(p, SMALL_GRID, 0.4).data
    c = generate_wake_snapshot(WakeModelParams(seed=6), SMALL_GRID, 0.4).data
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_probe_spectrum_peaks_at_blade_passing():
    p = WakeModelParams()
    probe = StructuredGrid(1, 1, 2, 1.0, 1.0, D / 2, (0.5 * D - 0.5, -0.5, p.hub_height - D / 4))
    times = np.arange(1000) * 0.1
    u = np.array([generate_wake_snapshot(p, probe, t).array()[1, 0, 0, 0] for t in times])
    spec = np.abs(np.fft.rfft(u - u.mean()))
    freqs = np.fft.rfftfreq(times.size, 0.1)
    assert abs(freqs[np.argmax(spec)] - p.blade_passing_frequency) <= freqs[1]


@pytest.mark.parametrize("seed", [0, 1, 7])
def test_first_mode_energy_decreases_downstream(seed):
    sset = generate_wake_set(WakeModelParams(seed=seed), WAKE_GRID, np.arange(64) * 0.25)
    retained = []
    for f in (0.5, 1.0, 1.5, 2.0, 2.5):
        plane = sample_plane_set(sset, PlaneSpec("X", f * D))
        retained.append(cumulative_energy(decompose(assemble_snapshot_matrix(plane)), 1))
    assert all(a > b for a, b in zip(retained, retained[1:]))


def test_affine_field_values(grid3):
    G = np.arange(9.0).reshape(3, 3)
    snap = generate_affine_field(G, [1, 2, 3], grid3)
    x, y, z = (grid3.centers(a) for a in range(3))
    pt = np.array([x[2], y[1], z[3]])
    np.testing.assert_allclose(snap.array()[3, 1, 2], G @ pt + [1, 2, 3], rtol=1e-14)


def test_separable_field_is_exact_sum():
    grid = StructuredGrid(8, 4, 2, 1.0, 1.0, 1.0)
    t1 = SeparableTerm((1, 0, 0), "cos", {"kind": "table", "values": [1.0, -2.0, 0.5]})
    t2 = SeparableTerm((0, 1, 1), "sin", {"kind": "constant", "value": 3.0})
    sset, sigma = generate_separable_field(SeparableSpec(grid, (t1, t2)), [0.0, 1.0, 2.0])
    phi1, phi2 = spatial_shape(t1, grid), spatial_shape(t2, grid)
    np.testing.assert_allclose(np.linalg.norm(phi1), 1.0)
    np.testing.assert_allclose(sset.snapshots[1].data, -2.0 * phi1 + 3.0 * phi2, atol=1e-15)
    np.testing.assert_allclose(sigma, [np.sqrt(5.25), np.sqrt(27.0)])


def test_separable_field_errors():
    grid = StructuredGrid(8, 4, 1, 1.0, 1.0, 1.0)
    same = SeparableTerm((1, 0, 0), "cos")
    with pytest.raises(FieldError, match="orthogonal"):
        generate_separable_field(SeparableSpec(grid, (same, same)), [0.0])
    with pytest.raises(FieldError, match="vanishes"):
        generate_separable_field(SeparableSpec(grid, (SeparableTerm((4, 0, 0), "sin"),)), [0.0])
    with pytest.raises(FieldError, match="table"):
        bad = SeparableTerm((1, 0, 0), "cos", {"kind": "table", "values": [1.0]})
        generate_separable_field(SeparableSpec(grid, (bad,)), [0.0, 1.0])


def test_separable_spec_from_dict():
    spec = SeparableSpec.from_dict({
        "grid": {"nx": 4, "ny": 4, "nz": 1, "dx": 1, "dy": 1, "dz": 1},
        "terms": [{"wavenumber": [1, 0, 0]}, {"wavenumber": [0, 1, 0], "kind": "sin"}],
    })
    assert len(spec.terms) == 2 and spec.terms[1].kind == "sin"
