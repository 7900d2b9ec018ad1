"""Structured-grid snapshots: data model, raw file I/O, plane sampling and
velocity-gradient derived fields.

Data is stored flat, row-major with x fastest::

    index = ((k * ny + j) * nx + i) * components + c

so ``data.reshape(nz, ny, nx, components)`` gives an array indexed
``[k, j, i, c]``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MANIFEST = "manifest.json"
FORMAT_VERSION = 1
DEFAULT_PATTERN = "snapshot_{index:05d}.bin"

AXES = ("X", "Y", "Z")


class FieldError(ValueError):
    """Invalid grid, snapshot or snapshot-set content."""


@dataclass(frozen=True)
class StructuredGrid:
    nx: int
    ny: int
    nz: int
    dx: float
    dy: float
    dz: float
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            n = getattr(self, name)
            if int(n) != n or n < 1:
                raise FieldError(f"{name} must be a positive integer, got {n!r}")
            object.__setattr__(self, name, int(n))
        for name in ("dx", "dy", "dz"):
            h = float(getattr(self, name))
            if not np.isfinite(h) or h <= 0:
                raise FieldError(f"{name} must be positive, got {h!r}")
            object.__setattr__(self, name, h)
        origin = tuple(float(o) for o in self.origin)
        if len(origin) != 3 or not all(np.isfinite(origin)):
            raise FieldError(f"origin must be a finite 3-vector, got {self.origin!r}")
        object.__setattr__(self, "origin", origin)

    @property
    def shape(self) -> tuple[int, int, int]:
        """Counts in storage order (nz, ny, nx)."""
        return (self.nz, self.ny, self.nx)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def counts(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def spacing(self) -> tuple[float, float, float]:
        return (self.dx, self.dy, self.dz)

    def centers(self, axis: int) -> np.ndarray:
        """Cell-center coordinates along axis 0 (x), 1 (y) or 2 (z)."""
        n = self.counts[axis]
        return self.origin[axis] + (np.arange(n) + 0.5) * self.spacing[axis]

    def bounds(self, axis: int) -> tuple[float, float]:
        lo = self.origin[axis]
        return lo, lo + self.counts[axis] * self.spacing[axis]

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Cell-center coordinate arrays X, Y, Z, each shaped (nz, ny, nx)."""
        z, y, x = np.meshgrid(self.centers(2), self.centers(1), self.centers(0), indexing="ij")
        return x, y, z

    def to_dict(self) -> dict:
        return {
            "nx": self.nx, "ny": self.ny, "nz": self.nz,
            "dx": self.dx, "dy": self.dy, "dz": self.dz,
            "origin": list(self.origin),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StructuredGrid":
        try:
            return cls(d["nx"], d["ny"], d["nz"], d["dx"], d["dy"], d["dz"],
                       tuple(d.get("origin", (0.0, 0.0, 0.0))))
        except KeyError as exc:
            raise FieldError(f"grid is missing key {exc.args[0]!r}") from None


@dataclass(frozen=True)
class FieldSnapshot:
    """One time sample of a field on a grid.

    ``components`` is 1 (scalar), 3 (vector) or 9 (a velocity-gradient
    style tensor, row-major ``d u_i / d x_j``).
    """

    grid: StructuredGrid
    components: int
    time: float
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.components not in (1, 3, 9):
            raise FieldError(f"components must be 1, 3 or 9, got {self.components}")
        data = np.ascontiguousarray(self.data, dtype=np.float64).reshape(-1)
        expected = self.grid.n_cells * self.components
        if data.size != expected:
            raise FieldError(f"size mismatch: grid needs {expected} values, got {data.size}")
        if not np.all(np.isfinite(data)):
            raise FieldError("snapshot contains non-finite values")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "time", float(self.time))

    def array(self) -> np.ndarray:
        """Read-only view shaped (nz, ny, nx, components)."""
        return self.data.reshape(*self.grid.shape, self.components)

    @classmethod
    def from_array(cls, grid: StructuredGrid, arr: np.ndarray, time: float = 0.0) -> "FieldSnapshot":
        """Build from an array shaped (nz, ny, nx) or (nz, ny, nx, components)."""
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 3:
            arr = arr[..., None]
        if arr.shape[:3] != grid.shape:
            raise FieldError(f"array shape {arr.shape} does not match grid {grid.shape}")
        return cls(grid, arr.shape[3], time, arr.reshape(-1))


@dataclass(frozen=True)
class PlaneSpec:
    axis: str
    offset: float
    label: str = ""

    def __post_init__(self):
        axis = str(self.axis).upper()
        if axis not in AXES:
            raise FieldError(f"plane axis must be one of {AXES}, got {self.axis!r}")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "offset", float(self.offset))
        if not self.label:
            object.__setattr__(self, "label", f"{axis.lower()}{self.offset:g}")

    @property
    def axis_index(self) -> int:
        return AXES.index(self.axis)


@dataclass(frozen=True)
class SnapshotSet:
    grid: StructuredGrid
    field_name: str
    components: int
    snapshots: tuple[FieldSnapshot, ...]

    def __post_init__(self):
        snaps = tuple(self.snapshots)
        if not snaps:
            raise FieldError("a snapshot set needs at least one snapshot")
        for s in snaps:
            if s.grid != self.grid:
                raise FieldError("snapshot grid differs from the set grid")
            if s.components != self.components:
                raise FieldError("snapshot component count differs from the set")
        times = np.array([s.time for s in snaps])
        if np.any(np.diff(times) <= 0):
            raise FieldError("snapshot times must be strictly increasing")
        object.__setattr__(self, "snapshots", snaps)

    @property
    def times(self) -> list[float]:
        return [s.time for s in self.snapshots]

    def __len__(self) -> int:
        return len(self.snapshots)

    def __iter__(self):
        return iter(self.snapshots)

    def stacked(self) -> np.ndarray:
        """All snapshot data as an (S, n_cells * components) array."""
        return np.stack([s.data for s in self.snapshots])


# -- file I/O ---------------------------------------------------------------


def save_snapshot_set(sset: SnapshotSet, path, pattern: str = DEFAULT_PATTERN,
                      overwrite: bool = False) -> Path:
    path = Path(path)
    if "{index" not in pattern:
        raise FieldError("file pattern must contain '{index}'")
    if (path / MANIFEST).exists() and not overwrite:
        raise FileExistsError(f"{path / MANIFEST} already exists")
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": FORMAT_VERSION,
        "grid": sset.grid.to_dict(),
        "fields": [{"name": sset.field_name, "components": sset.components}],
        "times": sset.times,
        "pattern": pattern,
    }
    for index, snap in enumerate(sset.snapshots):
        with open(path / pattern.format(index=index), "wb") as fh:
            fh.write(snap.data.astype("<f8").tobytes())
    with open(path / MANIFEST, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def load_snapshot_set(path) -> SnapshotSet:
    path = Path(path)
    mpath = path / MANIFEST
    if not mpath.is_file():
        raise FieldError(f"missing manifest: {mpath}")
    with open(mpath, encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FieldError(f"malformed manifest {mpath}: {exc}") from None
    if manifest.get("version") != FORMAT_VERSION:
        raise FieldError(f"unsupported manifest version {manifest.get('version')!r}")
    grid = StructuredGrid.from_dict(manifest["grid"])
    fields = manifest.get("fields") or []
    if len(fields) != 1:
        raise FieldError("manifest must declare exactly one field")
    name, comps = fields[0]["name"], int(fields[0]["components"])
    times = [float(t) for t in manifest.get("times", [])]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise FieldError("manifest times are not strictly increasing")
    pattern = manifest.get("pattern", DEFAULT_PATTERN)

    expected = grid.n_cells * comps
    snaps = []
    for index, t in enumerate(times):
        fpath = path / pattern.format(index=index)
        if not fpath.is_file():
            raise FieldError(f"missing data file: {fpath}")
        nbytes = os.path.getsize(fpath)
        if nbytes != 8 * expected:
            raise FieldError(
                f"size mismatch in {fpath.name}: expected {expected} values, "
                f"file holds {nbytes / 8:g}")
        data = np.fromfile(fpath, dtype="<f8").astype(np.float64)
        snaps.append(FieldSnapshot(grid, comps, t, data))
    return SnapshotSet(grid, name, comps, tuple(snaps))


# -- plane sampling -----------------------------------------------------------


def _layer_weights(coords: np.ndarray, grid: StructuredGrid, axis: int):
    """Linear interpolation indices/weights between cell-center layers.

    Points between the outermost center and the domain face clamp to the
    boundary layer.
    """
    n = grid.counts[axis]
    h = grid.spacing[axis]
    s = (np.asarray(coords, dtype=float) - grid.origin[axis]) / h - 0.5
    s = np.clip(s, 0.0, n - 1.0)
    i0 = np.minimum(np.floor(s).astype(int), max(n - 2, 0))
    w1 = s - i0
    i1 = np.minimum(i0 + 1, n - 1)
    return i0, i1, w1


def sample_plane(snap: FieldSnapshot, plane: PlaneSpec) -> FieldSnapshot:
    """Trilinear sample of ``snap`` on an axis-normal plane.

    Sample points are the cell centers of the two in-plane axes, so only the
    normal direction needs interpolating. The result lives on a grid with
    one cell along the normal, centered on the plane.
    """
    grid = snap.grid
    ax = plane.axis_index
    lo, hi = grid.bounds(ax)
    if not lo <= plane.offset <= hi:
        raise FieldError(
            f"plane {plane.label!r} offset {plane.offset} outside grid bounds [{lo}, {hi}]")
    i0, i1, w1 = _layer_weights(np.array([plane.offset]), grid, ax)
    i0, i1, w1 = int(i0[0]), int(i1[0]), float(w1[0])

    arr = snap.array()                      # [k, j, i, c]
    np_axis = 2 - ax                        # storage axis for x/y/z
    a0 = np.take(arr, [i0], axis=np_axis)
    if w1 == 0.0:
        out = a0
    else:
        a1 = np.take(arr, [i1], axis=np_axis)
        out = (1.0 - w1) * a0 + w1 * a1

    counts = list(grid.counts)
    counts[ax] = 1
    origin = list(grid.origin)
    origin[ax] = plane.offset - 0.5 * grid.spacing[ax]
    pgrid = StructuredGrid(*counts, *grid.spacing, tuple(origin))
    return FieldSnapshot(pgrid, snap.components, snap.time, out.reshape(-1))


def sample_plane_set(sset: SnapshotSet, plane: PlaneSpec) -> SnapshotSet:
    snaps = tuple(sample_plane(s, plane) for s in sset.snapshots)
    return SnapshotSet(snaps[0].grid, sset.field_name, sset.components, snaps)


def plane_image(snap: FieldSnapshot, component: int = 0) -> np.ndarray:
    """2D image of a plane sample: rows follow the second in-plane axis."""
    arr = snap.array()[..., component]
    collapsed = [ax for ax in range(3) if snap.grid.counts[ax] == 1]
    if not collapsed:
        raise FieldError("snapshot is not a plane sample")
    # storage order is (z, y, x); drop the collapsed axis
    return np.squeeze(arr, axis=2 - collapsed[-1])


def default_planes(diameter: float = 126.0, hub_height: float = 90.0,
                   rotor_x: float = 0.0) -> list[PlaneSpec]:
    """Wake-analysis plane layout for a rotor centered at (rotor_x, 0, hub).

    Spanwise (YZ) planes at 0.5D..2.5D downstream, wall-parallel (XY) planes
    at hub and hub +/- D/2, vertical (ZX) planes at y = 0 and y = +D/2.
    """
    D = diameter
    planes = [PlaneSpec("X", rotor_x + f * D, f"yz_{f:g}D") for f in (0.5, 1.0, 1.5, 2.0, 2.5)]
    planes += [
        PlaneSpec("Z", hub_height, "xy_hub"),
        PlaneSpec("Z", hub_height + D / 2, "xy_tip_top"),
        PlaneSpec("Z", hub_height - D / 2, "xy_tip_bottom"),
        PlaneSpec("Y", 0.0, "zx_nacelle"),
        PlaneSpec("Y", D / 2, "zx_tip"),
    ]
    return planes


# -- derived kinematic fields ------------------------------------------------


def compute_gradient(snap: FieldSnapshot) -> FieldSnapshot:
    """Velocity gradient tensor, ``out[..., 3*i + j] = d u_i / d x_j``.

    Second-order central differences inside, second-order one-sided at the
    boundaries (first order when an axis only has two cells; still exact for
    affine fields).
    """
    if snap.components != 3:
        raise FieldError("gradient needs a 3-component vector field")
    grid = snap.grid
    for name, n in zip("xyz", grid.counts):
        if n < 2:
            raise FieldError(f"cannot differentiate along {name}: only {n} cell(s)")
    u = snap.array()
    out = np.empty(grid.shape + (9,))
    for j in range(3):
        np_axis = 2 - j
        edge = 2 if grid.counts[j] >= 3 else 1
        d = np.gradient(u, grid.spacing[j], axis=np_axis, edge_order=edge)
        for i in range(3):
            out[..., 3 * i + j] = d[..., i]
    return FieldSnapshot(grid, 9, snap.time, out.reshape(-1))


def _tensor(grad: FieldSnapshot) -> np.ndarray:
    if grad.components != 9:
        raise FieldError("expected a 9-component gradient field")
    return grad.array().reshape(*grad.grid.shape, 3, 3)


def compute_strain_rate(grad: FieldSnapshot) -> FieldSnapshot:
    """Symmetric part of the gradient, S = (G + G^T) / 2."""
    G = _tensor(grad)
    S = 0.5 * (G + np.swapaxes(G, -1, -2))
    return FieldSnapshot(grad.grid, 9, grad.time, S.reshape(-1))


def compute_rotation_rate(grad: FieldSnapshot) -> FieldSnapshot:
    """Antisymmetric part of the gradient, (G - G^T) / 2."""
    G = _tensor(grad)
    W = 0.5 * (G - np.swapaxes(G, -1, -2))
    return FieldSnapshot(grad.grid, 9, grad.time, W.reshape(-1))


def compute_q_criterion(grad: FieldSnapshot) -> FieldSnapshot:
    """Q = (|Omega|^2 - |S|^2) / 2 with Frobenius norms."""
    G = _tensor(grad)
    Gt = np.swapaxes(G, -1, -2)
    S = 0.5 * (G + Gt)
    W = 0.5 * (G - Gt)
    q = 0.5 * (np.sum(W * W, axis=(-1, -2)) - np.sum(S * S, axis=(-1, -2)))
    return FieldSnapshot(grad.grid, 1, grad.time, q.reshape(-1))


def velocity_magnitude(snap: FieldSnapshot) -> FieldSnapshot:
    if snap.components != 3:
        raise FieldError("velocity magnitude needs a vector field")
    mag = np.linalg.norm(snap.array(), axis=-1)
    return FieldSnapshot(snap.grid, 1, snap.time, mag.reshape(-1))


def map_set(sset: SnapshotSet, fn, name: str) -> SnapshotSet:
    """Apply a snapshot -> snapshot function over a whole set."""
    snaps = tuple(fn(s) for s in sset.snapshots)
    return SnapshotSet(snaps[0].grid, name, snaps[0].components, snaps)
