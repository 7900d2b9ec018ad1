"""Analytic field generators with known structure.

The wake generator is a transparent sum of terms (rotor deficit, helical tip
vortices, a meandering tower wake). It is a qualitative stand-in for CFD
snapshots, not a wake model with predictive value.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .fields import FieldError, FieldSnapshot, SnapshotSet, StructuredGrid


@dataclass(frozen=True)
class WakeModelParams:
    U_inf: float = 11.4               # m/s
    rotor_rpm: float = 12.1
    D: float = 126.0                  # rotor diameter, m
    hub_height: float = 90.0          # m
    deficit_amplitude: float = 0.35   # fraction of U_inf
    deficit_growth: float = 0.04      # wake width growth, m per m downstream
    tip_vortex_amplitude: float = 0.4  # m/s
    tower_wake_amplitude: float = 2.0  # m/s
    tower_strouhal: float = 0.2
    tower_diameter: float = 6.0       # m
    n_blades: int = 3
    rotor_x: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("deficit_amplitude", "deficit_growth", "tip_vortex_amplitude",
                     "tower_wake_amplitude", "tower_strouhal", "rotor_rpm"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise FieldError(f"{name} must be >= 0, got {value!r}")
        for name in ("U_inf", "D", "hub_height", "tower_diameter"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise FieldError(f"{name} must be > 0, got {value!r}")
        if self.deficit_amplitude > 1:
            raise FieldError("deficit_amplitude is a fraction of U_inf and must be <= 1")
        if int(self.n_blades) != self.n_blades or self.n_blades < 1:
            raise FieldError(f"n_blades must be a positive integer, got {self.n_blades!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "WakeModelParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise FieldError(f"unknown wake parameter(s): {', '.join(sorted(unknown))}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def omega(self) -> float:
        """Rotor angular speed in rad/s."""
        return 2.0 * np.pi * self.rotor_rpm / 60.0

    @property
    def blade_passing_frequency(self) -> float:
        return self.n_blades * self.rotor_rpm / 60.0

    @property
    def tower_frequency(self) -> float:
        return self.tower_strouhal * self.U_inf / self.tower_diameter


def _check_rotor_inside(p: WakeModelParams, grid: StructuredGrid) -> None:
    (x0, x1), (y0, y1), (z0, z1) = (grid.bounds(a) for a in range(3))
    if not (z0 <= p.hub_height <= z1 and y0 <= 0.0 <= y1 and x1 > p.rotor_x):
        raise FieldError(
            "grid does not contain the rotor: need hub height within z bounds, "
            "y = 0 within y bounds and a wake region downstream of rotor_x")


def generate_wake_snapshot(p: WakeModelParams, grid: StructuredGrid, t: float) -> FieldSnapshot:
    """Velocity snapshot (u, v, w) of the synthetic wake at time ``t``."""
    _check_rotor_inside(p, grid)
    x, y, z = grid.mesh()
    D = p.D
    xw = np.maximum(x - p.rotor_x, 0.0)
    onset = 1.0 - np.exp(-xw / (0.05 * D))
    zr = z - p.hub_height
    r = np.hypot(y, zr)
    theta = np.arctan2(zr, y)
    jitter = np.random.default_rng(p.seed).uniform(0.0, 2.0 * np.pi, size=2)

    # rotor deficit: Gaussian whose width grows downstream, momentum-scaled depth
    sigma0 = D / 4.0
    sigma = sigma0 + p.deficit_growth * xw
    deficit = p.deficit_amplitude * (sigma0 / sigma) ** 2 * np.exp(-0.5 * (r / sigma) ** 2) * onset

    # tip vortices: helical ring at the wake edge, blade-passing frequency
    ring = 0.5 * D + 0.5 * p.deficit_growth * xw
    width = 0.08 * D
    # no streamwise phase lag: the convective wavelength (~U/f) is below
    # desk-scale grid spacing and would alias between sampled layers
    phase = p.n_blades * (p.omega * t - theta) + jitter[0]
    envelope = (p.tip_vortex_amplitude * onset * np.exp(-xw / (4.0 * D))
                * np.exp(-0.5 * ((r - ring) / width) ** 2))
    tip_u = envelope * np.cos(phase)
    tip_t = 0.5 * envelope * np.sin(phase)            # tangential, |.| <= amplitude/2

    # tower wake: below hub, meandering laterally at the shedding frequency
    below = 0.5 * (1.0 - np.tanh(zr / (0.05 * D)))
    grow = 1.0 - np.exp(-xw / (1.5 * D))
    tw_width = p.tower_diameter * (1.0 + xw / (0.25 * D))
    wphase = 2.0 * np.pi * p.tower_frequency * t + jitter[1]
    yc = 0.5 * tw_width * np.sin(wphase)
    strip = p.tower_wake_amplitude * below * grow * np.exp(-0.5 * ((y - yc) / tw_width) ** 2)
    tower_u = -strip
    tower_v = 0.5 * strip * np.cos(wphase)

    u = p.U_inf * (1.0 - deficit) + tip_u + tower_u
    v = -tip_t * np.sin(theta) + tower_v
    w = tip_t * np.cos(theta)
    return FieldSnapshot.from_array(grid, np.stack([u, v, w], axis=-1), t)


def generate_wake_set(p: WakeModelParams, grid: StructuredGrid, times: Sequence[float],
                      name: str = "velocity") -> SnapshotSet:
    snaps = tuple(generate_wake_snapshot(p, grid, t) for t in times)
    return SnapshotSet(grid, name, 3, snaps)


def generate_affine_field(gradient, constant, grid: StructuredGrid, time: float = 0.0) -> FieldSnapshot:
    """u(x) = G x + c evaluated at cell centers."""
    G = np.asarray(gradient, dtype=np.float64).reshape(3, 3)
    c = np.asarray(constant, dtype=np.float64).reshape(3)
    x, y, z = grid.mesh()
    pos = np.stack([x, y, z], axis=-1)
    return FieldSnapshot.from_array(grid, pos @ G.T + c, time)


# -- separable fields ------------------------------------------------------------


@dataclass(frozen=True)
class SeparableTerm:
    """One term alpha(t) * phi(x) with a Fourier spatial shape.

    ``wavenumber`` counts periods across the grid along (x, y, z); ``kind``
    picks cos or sin. ``temporal`` is a dict with ``kind`` one of
    ``constant`` (``value``), ``cos``/``sin`` (``amplitude``, ``frequency``,
    ``phase``) or ``table`` (``values``, one per time).
    """

    wavenumber: tuple[int, int, int]
    kind: str = "cos"
    temporal: dict = field(default_factory=lambda: {"kind": "constant", "value": 1.0})


@dataclass(frozen=True)
class SeparableSpec:
    grid: StructuredGrid
    terms: tuple[SeparableTerm, ...]

    @classmethod
    def from_dict(cls, d: dict) -> "SeparableSpec":
        grid = StructuredGrid.from_dict(d["grid"])
        terms = tuple(SeparableTerm(tuple(t["wavenumber"]), t.get("kind", "cos"),
                                    t.get("temporal", {"kind": "constant", "value": 1.0}))
                      for t in d["terms"])
        return cls(grid, terms)


def spatial_shape(term: SeparableTerm, grid: StructuredGrid) -> np.ndarray:
    """Unit-norm Fourier shape sampled on the index lattice, storage order."""
    kx, ky, kz = term.wavenumber
    k, j, i = np.meshgrid(np.arange(grid.nz), np.arange(grid.ny), np.arange(grid.nx),
                          indexing="ij")
    arg = 2.0 * np.pi * (kx * i / grid.nx + ky * j / grid.ny + kz * k / grid.nz)
    if term.kind == "cos":
        shape = np.cos(arg)
    elif term.kind == "sin":
        shape = np.sin(arg)
    else:
        raise FieldError(f"unknown spatial kind {term.kind!r}")
    norm = np.linalg.norm(shape)
    if norm < 1e-8:
        raise FieldError(f"spatial shape {term.kind}{term.wavenumber} vanishes on this grid")
    return (shape / norm).reshape(-1)


def temporal_values(spec: dict, times: np.ndarray) -> np.ndarray:
    kind = spec.get("kind", "constant")
    if kind == "constant":
        return np.full(times.shape, float(spec.get("value", 1.0)))
    if kind in ("cos", "sin"):
        fn = np.cos if kind == "cos" else np.sin
        return float(spec.get("amplitude", 1.0)) * fn(
            2.0 * np.pi * float(spec.get("frequency", 1.0)) * times + float(spec.get("phase", 0.0)))
    if kind == "table":
        values = np.asarray(spec["values"], dtype=np.float64)
        if values.shape != times.shape:
            raise FieldError(f"table has {values.size} values for {times.size} times")
        return values
    raise FieldError(f"unknown temporal kind {kind!r}")


def generate_separable_field(spec: SeparableSpec, times, name: str = "u"):
    """Scalar snapshots sum_n alpha_n(t) phi_n(x) with orthonormal phi_n.

    Returns ``(snapshot_set, sigma)`` where ``sigma[n]`` is the Euclidean
    norm of term n over all snapshots, ``|alpha_n|``. These are the POD
    singular values when the alpha_n sequences are mutually orthogonal too
    (for example whole periods of distinct harmonics).
    """
    if not spec.terms:
        raise FieldError("a separable field needs at least one term")
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    if times.size == 0:
        raise FieldError("times must be nonempty")
    shapes = np.stack([spatial_shape(t, spec.grid) for t in spec.terms], axis=1)
    gram = shapes.T @ shapes
    if np.max(np.abs(gram - np.eye(len(spec.terms)))) > 1e-10:
        raise FieldError("requested spatial shapes are not mutually orthogonal on this grid")
    alphas = np.stack([temporal_values(t.temporal, times) for t in spec.terms])
    data = shapes @ alphas                       # N x S
    snaps = tuple(FieldSnapshot(spec.grid, 1, t, data[:, s]) for s, t in enumerate(times))
    return SnapshotSet(spec.grid, name, 1, snaps), np.linalg.norm(alphas, axis=1)
