"""Radial-basis-function mesh morphing.

Boundary control-point displacements are interpolated into the volume with a
polyharmonic kernel (thin-plate spline in 2D, cubic in 3D) augmented by a
linear polynomial, so affine displacement fields are reproduced exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.spatial.distance import cdist, pdist

from .fields import StructuredGrid


class MorphError(ValueError):
    pass


@dataclass(frozen=True)
class ControlPoint:
    position: tuple
    displacement: tuple


def thin_plate(r: np.ndarray) -> np.ndarray:
    out = np.zeros_like(r)
    nz = r > 0
    out[nz] = r[nz] ** 2 * np.log(r[nz])
    return out


def cubic(r: np.ndarray) -> np.ndarray:
    return r ** 3


KERNELS = {"tps": thin_plate, "cubic": cubic}


def default_kernel(dim: int) -> str:
    return "tps" if dim == 2 else "cubic"


@dataclass(frozen=True)
class RbfInterpolant:
    kernel: str
    centers: np.ndarray        # (m, d)
    weights: np.ndarray        # (m, q)
    affine: np.ndarray         # (d + 1, q): constant row then one row per coordinate

    @property
    def dim(self) -> int:
        return self.centers.shape[1]


def _split(points) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(points, tuple) and len(points) == 2:
        pos, disp = points
    else:
        points = list(points)
        pos = [p.position for p in points]
        disp = [p.displacement for p in points]
    return np.asarray(pos, dtype=np.float64), np.asarray(disp, dtype=np.float64)


def build_rbf(points, kernel: str | None = None) -> RbfInterpolant:
    """Fit the interpolant.

    ``points`` is a list of :class:`ControlPoint` or a ``(positions,
    displacements)`` pair of arrays shaped (m, d) and (m, q).
    """
    pos, disp = _split(points)
    if pos.ndim != 2 or pos.shape[1] not in (2, 3):
        raise MorphError(f"control positions must be (m, 2) or (m, 3), got {pos.shape}")
    if disp.ndim == 1:
        disp = disp[:, None]
    if disp.shape[0] != pos.shape[0]:
        raise MorphError("need one displacement per control point")
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(disp))):
        raise MorphError("control points must be finite")
    m, d = pos.shape
    kernel = kernel or default_kernel(d)
    if kernel not in KERNELS:
        raise MorphError(f"unknown kernel {kernel!r}")
    if m < d + 1:
        raise MorphError(f"need at least {d + 1} control points in {d}D, got {m}")
    if m > 1 and pdist(pos).min() == 0.0:
        raise MorphError("duplicate control point positions")

    P = np.hstack([np.ones((m, 1)), pos])
    if np.linalg.matrix_rank(P) < d + 1:
        raise MorphError("control points are affinely degenerate")
    A = np.zeros((m + d + 1, m + d + 1))
    A[:m, :m] = KERNELS[kernel](cdist(pos, pos))
    A[:m, m:] = P
    A[m:, :m] = P.T
    rhs = np.vstack([disp, np.zeros((d + 1, disp.shape[1]))])
    lu, piv = lu_factor(A, check_finite=False)
    diag = np.abs(np.diag(lu))
    if diag.min() <= np.finfo(float).eps * diag.max() * A.shape[0]:
        raise MorphError("singular RBF system")
    sol = lu_solve((lu, piv), rhs, check_finite=False)
    return RbfInterpolant(kernel, pos, sol[:m], sol[m:])


def evaluate_displacement(f: RbfInterpolant, points) -> np.ndarray:
    """Displacement at one point (shape (d,)) or many (shape (k, d))."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[-1] != f.dim:
        raise MorphError(f"points are {pts.shape[-1]}D, interpolant is {f.dim}D")
    phi = KERNELS[f.kernel](cdist(pts, f.centers))
    out = phi @ f.weights + f.affine[0] + pts @ f.affine[1:]
    return out[0] if single else out


def morph_grid(coords, f: RbfInterpolant) -> np.ndarray:
    """Displace node coordinates shaped (..., d)."""
    coords = np.asarray(coords, dtype=np.float64)
    flat = coords.reshape(-1, coords.shape[-1])
    return (flat + evaluate_displacement(f, flat)).reshape(coords.shape)


def grid_nodes(grid: StructuredGrid) -> np.ndarray:
    """Cell centers as a node lattice: (nx, ny, 2) when nz == 1, else (nx, ny, nz, 3)."""
    x, y, z = (grid.centers(a) for a in range(3))
    if grid.nz == 1:
        X, Y = np.meshgrid(x, y, indexing="ij")
        return np.stack([X, Y], axis=-1)
    X, Y, Z = np.meshgrid(x, y, z, indexing="ij")
    return np.stack([X, Y, Z], axis=-1)


def corner_jacobians(nodes: np.ndarray) -> np.ndarray:
    """Jacobian determinants of the bilinear/trilinear cell maps at cell corners.

    Returns shape (cells..., 4) in 2D or (cells..., 8) in 3D.
    """
    nodes = np.asarray(nodes, dtype=np.float64)
    dim = nodes.shape[-1]
    if nodes.ndim != dim + 1 or dim not in (2, 3):
        raise MorphError(f"expected a structured node array, got shape {nodes.shape}")
    if dim == 2:
        p00, p10 = nodes[:-1, :-1], nodes[1:, :-1]
        p01, p11 = nodes[:-1, 1:], nodes[1:, 1:]

        def det2(a, b):
            return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]

        return np.stack([
            det2(p10 - p00, p01 - p00),
            det2(p10 - p00, p11 - p10),
            det2(p11 - p01, p01 - p00),
            det2(p11 - p01, p11 - p10),
        ], axis=-1)

    def corner(a, b, c):
        return nodes[a:nodes.shape[0] - 1 + a, b:nodes.shape[1] - 1 + b, c:nodes.shape[2] - 1 + c]

    dets = []
    for a in (0, 1):
        for b in (0, 1):
            for c in (0, 1):
                e1 = corner(1, b, c) - corner(0, b, c)
                e2 = corner(a, 1, c) - corner(a, 0, c)
                e3 = corner(a, b, 1) - corner(a, b, 0)
                dets.append(np.einsum("...i,...i", e1, np.cross(e2, e3)))
    return np.stack(dets, axis=-1)


def check_mesh_validity(original, morphed) -> tuple[float, int]:
    """(minimum corner Jacobian, number of cells with a negative corner Jacobian)."""
    original = np.asarray(original)
    morphed = np.asarray(morphed)
    if original.shape != morphed.shape:
        raise MorphError("original and morphed node arrays differ in shape")
    jac = corner_jacobians(morphed)
    return float(jac.min()), int(np.count_nonzero(np.any(jac < 0.0, axis=-1)))


def read_control_points(path) -> tuple[np.ndarray, np.ndarray]:
    """CSV with header x,y[,z],dx,dy[,dz]."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MorphError(f"{path}: empty control-point file")
    header = [h.strip() for h in rows[0]]
    if header not in (["x", "y", "dx", "dy"], ["x", "y", "z", "dx", "dy", "dz"]):
        raise MorphError(f"{path}: header must be x,y[,z],dx,dy[,dz]")
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
    d = len(header) // 2
    return data[:, :d], data[:, d:]


def write_control_points(path, positions, displacements) -> None:
    positions = np.asarray(positions, dtype=float)
    d = positions.shape[1]
    header = ["x", "y", "z"][:d] + ["dx", "dy", "dz"][:d]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for p, u in zip(positions, np.asarray(displacements, dtype=float)):
            w.writerow([repr(float(v)) for v in (*p, *u)])
