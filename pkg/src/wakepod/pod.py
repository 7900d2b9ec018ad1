"""Snapshot proper orthogonal decomposition.

Two independent routes produce the same :class:`PodResult`:

* :func:`pod_method_of_snapshots` -- eigen-decomposition of the small S x S
  correlation matrix with cyclic Jacobi rotations;
* :func:`pod_direct_svd` -- one-sided (Hestenes) Jacobi orthogonalisation of
  the snapshot columns.

Neither calls LAPACK's eigen/SVD drivers, so either one can serve as a
cross-check on the other.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fields import (FieldSnapshot, SnapshotSet, StructuredGrid, load_snapshot_set,
                     save_snapshot_set)

RANK_CUTOFF = 1e-12         # relative to the largest eigenvalue (sigma^2)
JACOBI_TOL = 1e-14          # off-diagonal Frobenius norm relative to |C|_F
MAX_SWEEPS = 100


class PodError(ValueError):
    pass


@dataclass(frozen=True)
class SnapshotMatrix:
    """N x S data matrix, one snapshot per column."""

    data: np.ndarray
    weights: np.ndarray | None = None
    mean_subtracted: bool = False
    mean: np.ndarray | None = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise PodError(f"snapshot matrix must be N x S with N, S >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise PodError("snapshot matrix contains non-finite values")
        object.__setattr__(self, "data", data)
        if self.weights is not None:
            w = np.array(self.weights, dtype=np.float64).reshape(-1)
            if w.size != data.shape[0]:
                raise PodError(f"weights length {w.size} != N = {data.shape[0]}")
            if not np.all(w > 0) or not np.all(np.isfinite(w)):
                raise PodError("weights must be finite and strictly positive")
            object.__setattr__(self, "weights", w)
        if self.mean_subtracted:
            if self.mean is None:
                raise PodError("mean_subtracted matrix needs its stored mean")
            mean = np.array(self.mean, dtype=np.float64).reshape(-1)
            if mean.size != data.shape[0]:
                raise PodError("stored mean has the wrong length")
            object.__setattr__(self, "mean", mean)
            sums = np.abs(data.sum(axis=1))
            limit = np.maximum(1e-10 * np.linalg.norm(data, axis=1), 1e-14)
            if np.any(sums > limit):
                raise PodError("rows of a mean-subtracted matrix must sum to zero")
        elif self.mean is not None:
            object.__setattr__(self, "mean", np.array(self.mean, dtype=np.float64).reshape(-1))

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def n_snapshots(self) -> int:
        return self.data.shape[1]

    def weight_vector(self) -> np.ndarray:
        return np.ones(self.n_rows) if self.weights is None else self.weights

    def full(self) -> np.ndarray:
        """Data with the stored mean added back."""
        if self.mean_subtracted:
            return self.data + self.mean[:, None]
        return self.data.copy()


@dataclass(frozen=True)
class PodResult:
    modes: np.ndarray               # N x r, W-orthonormal columns
    singular_values: np.ndarray     # r, descending
    temporal_coeffs: np.ndarray     # r x S
    weights: np.ndarray | None = None
    mean_subtracted: bool = False
    mean: np.ndarray | None = None
    method: str = ""

    @property
    def rank(self) -> int:
        return self.singular_values.size

    @property
    def n_rows(self) -> int:
        return self.modes.shape[0]

    @property
    def n_snapshots(self) -> int:
        return self.temporal_coeffs.shape[1]


# -- assembly ----------------------------------------------------------------


def assemble_snapshot_matrix(sset: SnapshotSet, field: str | None = None,
                             component: int | None = 0, subtract_mean: bool = False,
                             weights=None) -> SnapshotMatrix:
    """Stack the snapshots of a set as matrix columns.

    ``component=None`` keeps every component (interleaved, as stored).
    """
    if field is not None and field != sset.field_name:
        raise PodError(f"unknown field {field!r}; set holds {sset.field_name!r}")
    if component is None:
        cols = [s.data for s in sset.snapshots]
    else:
        if not 0 <= component < sset.components:
            raise PodError(
                f"component {component} out of range for a {sset.components}-component field")
        cols = [s.data[component::sset.components] for s in sset.snapshots]
    data = np.stack(cols, axis=1)
    if not subtract_mean:
        return SnapshotMatrix(data, weights)
    mean = data.mean(axis=1)
    fluct = data - mean[:, None]
    # second pass removes the rounding left in the first mean
    corr = fluct.mean(axis=1)
    fluct -= corr[:, None]
    return SnapshotMatrix(fluct, weights, True, mean + corr)


def gram_matrix(m: SnapshotMatrix) -> np.ndarray:
    """Weighted correlation matrix phi^T W phi (S x S)."""
    w = m.weight_vector()
    return (m.data * w[:, None]).T @ m.data


# -- eigen / singular value kernels -----------------------------------------


def _rotation(theta: float) -> tuple[float, float]:
    if theta == 0.0:
        t = 1.0
    else:
        t = np.sign(theta) / (abs(theta) + np.hypot(1.0, theta))
    c = 1.0 / np.hypot(1.0, t)
    return c, t * c


def jacobi_eigh(A: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = MAX_SWEEPS):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi sweeps.

    Pivots visit the upper triangle row by row. Sweeping stops once the
    off-diagonal Frobenius norm is at most ``tol * |A|_F``. Returns
    ``(eigenvalues, eigenvectors)`` in the original diagonal order; the
    caller sorts.
    """
    A = np.array(A, dtype=np.float64)
    n = A.shape[0]
    if A.shape != (n, n):
        raise PodError("jacobi_eigh needs a square matrix")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    scale = np.linalg.norm(A)
    if n == 1 or scale == 0.0:
        return np.diag(A).copy(), V

    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                if abs(apq) <= 1e-300 * max(abs(A[p, p]), abs(A[q, q]), 1.0):
                    A[p, q] = A[q, p] = 0.0
                    continue
                c, s = _rotation((A[q, q] - A[p, p]) / (2.0 * apq))
                col_p = A[:, p].copy()
                A[:, p] = c * col_p - s * A[:, q]
                A[:, q] = s * col_p + c * A[:, q]
                row_p = A[p, :].copy()
                A[p, :] = c * row_p - s * A[q, :]
                A[q, :] = s * row_p + c * A[q, :]
                A[p, q] = A[q, p] = 0.0
                v_p = V[:, p].copy()
                V[:, p] = c * v_p - s * V[:, q]
                V[:, q] = s * v_p + c * V[:, q]
    else:
        raise PodError(f"Jacobi sweeps did not converge in {max_sweeps} sweeps")
    return np.diag(A).copy(), V


def one_sided_jacobi(B: np.ndarray, tol: float = 4e-16, max_sweeps: int = MAX_SWEEPS):
    """Hestenes one-sided Jacobi: rotate columns of B until mutually orthogonal.

    Returns ``(column_norms, orthogonalised_columns, V)`` with ``B = A V^T``.
    """
    A = np.array(B, dtype=np.float64)
    S = A.shape[1]
    V = np.eye(S)
    # columns this small are numerical null space, far below the rank cutoff
    floor = (1e-13 * np.linalg.norm(A)) ** 2
    for _ in range(max_sweeps):
        rotated = False
        for p in range(S - 1):
            for q in range(p + 1, S):
                alpha = A[:, p] @ A[:, p]
                beta = A[:, q] @ A[:, q]
                if min(alpha, beta) <= floor:
                    continue
                gamma = A[:, p] @ A[:, q]
                if gamma == 0.0 or abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                c, s = _rotation((beta - alpha) / (2.0 * gamma))
                a_p = A[:, p].copy()
                A[:, p] = c * a_p - s * A[:, q]
                A[:, q] = s * a_p + c * A[:, q]
                v_p = V[:, p].copy()
                V[:, p] = c * v_p - s * V[:, q]
                V[:, q] = s * v_p + c * V[:, q]
        if not rotated:
            break
    else:
        raise PodError(f"one-sided Jacobi did not converge in {max_sweeps} sweeps")
    return np.linalg.norm(A, axis=0), A, V


def _fix_signs(modes: np.ndarray, coeffs: np.ndarray) -> None:
    """Make each mode's largest-magnitude entry positive (first on ties)."""
    for n in range(modes.shape[1]):
        idx = int(np.argmax(np.abs(modes[:, n])))
        if modes[idx, n] < 0:
            modes[:, n] *= -1.0
            coeffs[n, :] *= -1.0


def _result(m: SnapshotMatrix, modes, sigma, coeffs, method) -> PodResult:
    _fix_signs(modes, coeffs)
    return PodResult(modes, sigma, coeffs, m.weights, m.mean_subtracted, m.mean, method)


def _empty(m: SnapshotMatrix, method: str) -> PodResult:
    return PodResult(np.zeros((m.n_rows, 0)), np.zeros(0), np.zeros((0, m.n_snapshots)),
                     m.weights, m.mean_subtracted, m.mean, method)


def pod_method_of_snapshots(m: SnapshotMatrix) -> PodResult:
    C = gram_matrix(m)
    eig, V = jacobi_eigh(C)
    order = np.argsort(-eig, kind="stable")
    eig, V = eig[order], V[:, order]
    if eig.size == 0 or eig[0] <= 0.0:
        return _empty(m, "snapshots")
    keep = eig > RANK_CUTOFF * eig[0]
    eig, V = eig[keep], V[:, keep]
    sigma = np.sqrt(np.maximum(eig, 0.0))
    modes = (m.data @ V) / sigma
    coeffs = sigma[:, None] * V.T
    return _result(m, modes, sigma, coeffs, "snapshots")


def pod_direct_svd(m: SnapshotMatrix) -> PodResult:
    sqrt_w = np.sqrt(m.weight_vector())
    norms, A, V = one_sided_jacobi(m.data * sqrt_w[:, None])
    order = np.argsort(-norms, kind="stable")
    norms, A, V = norms[order], A[:, order], V[:, order]
    if norms.size == 0 or norms[0] == 0.0:
        return _empty(m, "svd")
    keep = norms ** 2 > RANK_CUTOFF * norms[0] ** 2
    sigma, A, V = norms[keep], A[:, keep], V[:, keep]
    modes = (A / sigma) / sqrt_w[:, None]
    coeffs = sigma[:, None] * V.T
    return _result(m, modes, sigma, coeffs, "svd")


def decompose(m: SnapshotMatrix, method: str = "snapshots") -> PodResult:
    if method == "snapshots":
        return pod_method_of_snapshots(m)
    if method == "svd":
        return pod_direct_svd(m)
    raise PodError(f"unknown POD method {method!r}")


# -- energy, reconstruction, projection ---------------------------------------


def _check_count(r: PodResult, n: int) -> int:
    if int(n) != n or n < 0:
        raise PodError(f"mode count must be a non-negative integer, got {n!r}")
    if n > r.rank:
        raise PodError(f"requested {n} modes but rank is {r.rank}")
    return int(n)


def cumulative_energy(r: PodResult, n: int) -> float:
    """Retained energy fraction of the first ``n`` modes.

    The truncation loss is ``1 - cumulative_energy(r, n)``. A rank-0 result
    has nothing to lose and reports 1.
    """
    n = _check_count(r, n)
    energy = r.singular_values ** 2
    total = energy.sum()
    if total == 0.0:
        return 1.0
    if n == r.rank:
        return 1.0
    return float(energy[:n].sum() / total)


def energy_table(r: PodResult) -> list[tuple[int, float, float, float, float]]:
    """Rows of (mode_index, sigma, energy_fraction, retained, loss), 1-based."""
    energy = r.singular_values ** 2
    total = energy.sum()
    rows = []
    for n in range(r.rank):
        retained = cumulative_energy(r, n + 1)
        rows.append((n + 1, float(r.singular_values[n]), float(energy[n] / total),
                     retained, 1.0 - retained))
    return rows


def reconstruct(r: PodResult, n: int) -> SnapshotMatrix:
    """Rank-n approximation of the training snapshots (mean restored)."""
    n = _check_count(r, n)
    approx = r.modes[:, :n] @ r.temporal_coeffs[:n]
    if r.mean_subtracted:
        approx = approx + r.mean[:, None]
    return SnapshotMatrix(approx, r.weights)


def project(snap, r: PodResult, n_modes: int | None = None) -> np.ndarray:
    snap = np.asarray(snap, dtype=np.float64).reshape(-1)
    if snap.size != r.n_rows:
        raise PodError(f"snapshot length {snap.size} != mode length {r.n_rows}")
    n = r.rank if n_modes is None else _check_count(r, n_modes)
    if r.mean_subtracted:
        snap = snap - r.mean
    w = np.ones(r.n_rows) if r.weights is None else r.weights
    return r.modes[:, :n].T @ (w * snap)


def expand(coeffs, r: PodResult) -> np.ndarray:
    """Inverse of :func:`project`: field from leading-mode coefficients."""
    coeffs = np.asarray(coeffs, dtype=np.float64).reshape(-1)
    out = r.modes[:, :coeffs.size] @ coeffs
    if r.mean_subtracted:
        out = out + r.mean
    return out


# -- persistence -----------------------------------------------------------------


def save_pod(r: PodResult, path, grid: StructuredGrid, components: int, times,
             n_list=(), overwrite: bool = False) -> Path:
    """Write ``pod.json`` plus ``modes/`` (and ``mean/``) snapshot sets."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if r.rank:
        modes = tuple(FieldSnapshot(grid, components, n + 1, r.modes[:, n]) for n in range(r.rank))
        save_snapshot_set(SnapshotSet(grid, "pod_mode", components, modes), path / "modes",
                          overwrite=overwrite)
    if r.mean_subtracted:
        mean = FieldSnapshot(grid, components, 0.0, r.mean)
        save_snapshot_set(SnapshotSet(grid, "mean", components, (mean,)), path / "mean",
                          overwrite=overwrite)
    payload = {
        "method": r.method,
        "rank": r.rank,
        "singular_values": r.singular_values.tolist(),
        "temporal_coeffs": r.temporal_coeffs.tolist(),
        "mean_subtracted": bool(r.mean_subtracted),
        "weights_used": r.weights is not None,
        "times": [float(t) for t in times],
        "retained": {str(n): cumulative_energy(r, n) for n in n_list if n <= r.rank},
    }
    with open(path / "pod.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    return path


def load_pod(path) -> tuple[PodResult, dict]:
    """Read a directory written by :func:`save_pod`.

    Weights are not persisted; ``weights_used`` is reported in the metadata.
    """
    path = Path(path)
    with open(path / "pod.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    sigma = np.array(meta["singular_values"], dtype=np.float64)
    coeffs = np.array(meta["temporal_coeffs"], dtype=np.float64).reshape(sigma.size, -1)
    if sigma.size:
        modes_set = load_snapshot_set(path / "modes")
        modes = modes_set.stacked().T
        meta["grid"] = modes_set.grid
        meta["components"] = modes_set.components
    else:
        modes = np.zeros((0, 0))
    mean = None
    if meta["mean_subtracted"]:
        mean_set = load_snapshot_set(path / "mean")
        mean = mean_set.snapshots[0].data.copy()
        meta.setdefault("grid", mean_set.grid)
        meta.setdefault("components", mean_set.components)
        if not sigma.size:
            modes = np.zeros((mean.size, 0))
    r = PodResult(modes, sigma, coeffs, None, bool(meta["mean_subtracted"]), mean, meta["method"])
    return r, meta
