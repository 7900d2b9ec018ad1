"""Partitioned fluid-structure coupling kernel.

Newmark time integration of ``M a + C v + K d = F``, fluid surrogates that
return interface forces, and an implicit inner loop that sub-iterates the
interface displacement to convergence with (optionally Aitken-) relaxed
fixed-point updates.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import lu_factor, lu_solve


class FsiError(ValueError):
    pass


class CouplingError(FloatingPointError):
    """Non-finite values appeared inside the coupling loop."""


# -- structure -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StructuralSystem:
    M: np.ndarray
    C: np.ndarray
    K: np.ndarray
    _lu: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=np.float64))
        n = M.shape[0]
        C = np.zeros((n, n)) if self.C is None else np.atleast_2d(np.asarray(self.C, dtype=np.float64))
        K = np.atleast_2d(np.asarray(self.K, dtype=np.float64))
        for name, A in (("M", M), ("C", C), ("K", K)):
            if A.shape != (n, n):
                raise FsiError(f"{name} must be {n} x {n}, got {A.shape}")
            if not np.all(np.isfinite(A)):
                raise FsiError(f"{name} has non-finite entries")
            if not np.allclose(A, A.T, rtol=1e-12, atol=1e-12 * max(np.abs(A).max(), 1.0)):
                raise FsiError(f"{name} must be symmetric")
        try:
            np.linalg.cholesky(M)
        except np.linalg.LinAlgError:
            raise FsiError("M must be positive definite") from None
        eig = np.linalg.eigvalsh(K)
        if eig.min() < -1e-10 * max(np.abs(eig).max(), 1.0):
            raise FsiError("K must be positive semidefinite")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "K", K)

    @property
    def n_dof(self) -> int:
        return self.M.shape[0]

    def effective_lu(self, p: "NewmarkParams"):
        key = (p.beta, p.gamma, p.dt)
        if key not in self._lu:
            A = self.M + p.gamma * p.dt * self.C + p.beta * p.dt ** 2 * self.K
            lu, piv = lu_factor(A, check_finite=False)
            d = np.abs(np.diag(lu))
            if d.min() <= np.finfo(float).eps * d.max() * A.shape[0]:
                raise FsiError("effective Newmark matrix is singular")
            self._lu[key] = (lu, piv)
        return self._lu[key]

    def scaled(self, stiffness_factor: float) -> "StructuralSystem":
        return StructuralSystem(self.M, self.C, stiffness_factor * self.K)


@dataclass(frozen=True)
class NewmarkState:
    d: np.ndarray
    v: np.ndarray
    a: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        for name in ("d", "v", "a"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64))
            object.__setattr__(self, name, arr)
        if not (self.d.shape == self.v.shape == self.a.shape):
            raise FsiError("d, v and a must have the same length")

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.d)) and np.all(np.isfinite(self.v))
                    and np.all(np.isfinite(self.a)))

    def energy(self, sys: StructuralSystem) -> float:
        return 0.5 * (self.v @ sys.M @ self.v + self.d @ sys.K @ self.d)


@dataclass(frozen=True)
class NewmarkParams:
    dt: float
    beta: float = 0.25
    gamma: float = 0.5

    def __post_init__(self):
        if not self.dt > 0:
            raise FsiError(f"dt must be positive, got {self.dt!r}")
        if not 0.0 <= self.beta <= 0.5:
            raise FsiError(f"beta must lie in [0, 0.5], got {self.beta!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise FsiError(f"gamma must lie in [0, 1], got {self.gamma!r}")


def initial_state(sys: StructuralSystem, d0, v0=None, force=None, t0: float = 0.0) -> NewmarkState:
    """State with the acceleration that satisfies the equation of motion at t0."""
    d0 = np.atleast_1d(np.asarray(d0, dtype=np.float64))
    v0 = np.zeros_like(d0) if v0 is None else np.atleast_1d(np.asarray(v0, dtype=np.float64))
    f0 = np.zeros_like(d0) if force is None else np.atleast_1d(np.asarray(force, dtype=np.float64))
    a0 = np.linalg.solve(sys.M, f0 - sys.C @ v0 - sys.K @ d0)
    return NewmarkState(d0, v0, a0, t0)


def _predictors(s: NewmarkState, p: NewmarkParams):
    dpred = s.d + p.dt * s.v + p.dt ** 2 * (0.5 - p.beta) * s.a
    vpred = s.v + p.dt * (1.0 - p.gamma) * s.a
    return dpred, vpred


def newmark_step(sys: StructuralSystem, s: NewmarkState, p: NewmarkParams, force) -> NewmarkState:
    """Advance one step; ``force`` is the load at the new time level."""
    force = np.atleast_1d(np.asarray(force, dtype=np.float64))
    if force.shape != (sys.n_dof,):
        raise FsiError(f"force has length {force.size}, system has {sys.n_dof} dof")
    dpred, vpred = _predictors(s, p)
    a = lu_solve(sys.effective_lu(p), force - sys.C @ vpred - sys.K @ dpred, check_finite=False)
    return NewmarkState(dpred + p.beta * p.dt ** 2 * a, vpred + p.gamma * p.dt * a, a, s.t + p.dt)


def kinematics_from_displacement(s: NewmarkState, p: NewmarkParams, d_new):
    """Velocity and acceleration consistent with ``d_new`` under Newmark."""
    if p.beta == 0.0:
        raise FsiError("implicit coupling needs beta > 0")
    dpred, vpred = _predictors(s, p)
    a = (d_new - dpred) / (p.beta * p.dt ** 2)
    return vpred + p.gamma * p.dt * a, a


# -- fluid surrogates -------------------------------------------------------------


class FluidSurrogate:
    """Interface force as a function of interface kinematics and time."""

    def force(self, d, v, a, t) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class NoLoad(FluidSurrogate):
    def force(self, d, v, a, t):
        return np.zeros_like(d)


@dataclass(frozen=True)
class ConstantLoad(FluidSurrogate):
    load: tuple = (0.0,)

    def force(self, d, v, a, t):
        return np.broadcast_to(np.asarray(self.load, dtype=np.float64), d.shape).copy()


@dataclass(frozen=True)
class HarmonicLoad(FluidSurrogate):
    amplitude: float = 1.0
    omega: float = 1.0

    def force(self, d, v, a, t):
        return np.full(d.shape, self.amplitude * math.sin(self.omega * t))


@dataclass(frozen=True)
class AddedMassPiston(FluidSurrogate):
    """Fluid inertia reacting on a single piston dof: F = -m_a * a."""

    added_mass: float = 0.0

    def __post_init__(self):
        if self.added_mass < 0:
            raise FsiError("added_mass must be >= 0")

    def force(self, d, v, a, t):
        return -self.added_mass * a


@dataclass(frozen=True)
class QuasiSteadyAero(FluidSurrogate):
    """Per-node lift 0.5 rho |V_rel|^2 c C_l ds with V_rel = U_inf - v."""

    U_inf: float = 11.4
    rho: float = 1.2
    chord: float = 1.0
    lift_coeff: float = 1.0
    span: float = 1.0

    def force(self, d, v, a, t):
        vrel = self.U_inf - v
        return 0.5 * self.rho * self.chord * self.lift_coeff * self.span * vrel * np.abs(vrel)


# -- coupling -----------------------------------------------------------------------


@dataclass(frozen=True)
class CouplingConfig:
    tol: float = 1e-8
    max_inner: int = 50
    omega0: float = 0.5
    omega_min: float = 0.05
    omega_max: float = 1.0
    aitken_enabled: bool = True
    relative: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise FsiError("tol must be positive")
        if int(self.max_inner) != self.max_inner or self.max_inner < 1:
            raise FsiError("max_inner must be a positive integer")
        if not 0 < self.omega_min <= self.omega0 <= self.omega_max <= 2:
            raise FsiError("need 0 < omega_min <= omega0 <= omega_max <= 2")

    def clamp(self, omega: float) -> float:
        return min(max(omega, self.omega_min), self.omega_max)


@dataclass
class StepTrace:
    iterations: int = 0
    residuals: list = field(default_factory=list)
    omegas: list = field(default_factory=list)
    converged: bool = False

    @property
    def residual_final(self) -> float:
        return self.residuals[-1] if self.residuals else float("nan")

    @property
    def omega_final(self) -> float:
        return self.omegas[-1] if self.omegas else float("nan")


def aitken_update(omega_k: float, r_k, r_k1, cfg: CouplingConfig) -> float:
    """Aitken's relaxation factor from two successive residuals, clamped."""
    r_k = np.atleast_1d(np.asarray(r_k, dtype=np.float64))
    dr = np.atleast_1d(np.asarray(r_k1, dtype=np.float64)) - r_k
    denom = dr @ dr
    if denom == 0.0:
        return omega_k
    return cfg.clamp(-omega_k * (r_k @ dr) / denom)


def relaxed_fixed_point(operator: Callable, x0, cfg: CouplingConfig):
    """Iterate x <- x + omega (operator(x) - x) until the residual is small.

    The first update of a call is a plain exchange (omega = 1, clamped) when
    Aitken is enabled; Aitken then adapts omega from the last two residuals.
    Without Aitken every update uses ``cfg.omega0``. Returns
    ``(x_last, y_last, trace)`` where ``y_last = operator(x_last)``.
    """
    x = np.atleast_1d(np.asarray(x0, dtype=np.float64)).copy()
    trace = StepTrace()
    r_prev = None
    omega = cfg.clamp(1.0) if cfg.aitken_enabled else cfg.omega0
    y = x
    for k in range(1, cfg.max_inner + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            y = np.atleast_1d(operator(x))
            r = y - x
        if not np.all(np.isfinite(r)):
            raise CouplingError(f"non-finite interface value at inner iteration {k}")
        rnorm = float(np.linalg.norm(r))
        trace.iterations = k
        trace.residuals.append(rnorm)
        limit = cfg.tol * max(float(np.linalg.norm(y)), 1e-300) if cfg.relative else cfg.tol
        if rnorm <= limit:
            trace.converged = True
            return x, y, trace
        if cfg.aitken_enabled and r_prev is not None:
            omega = aitken_update(omega, r_prev, r, cfg)
        trace.omegas.append(omega)
        x = x + omega * r
        r_prev = r
    return x, y, trace


def coupled_step(sys: StructuralSystem, s: NewmarkState, p: NewmarkParams,
                 fluid: FluidSurrogate, cfg: CouplingConfig):
    """One implicit partitioned step.

    The interface displacement is predicted as the last converged value,
    the fluid surrogate maps the interface kinematics to a force and the
    structure answers with a new displacement; the difference is relaxed
    until it drops below ``cfg.tol``. On non-convergence the last structural
    answer is returned with ``trace.converged = False``.
    """
    t_new = s.t + p.dt
    last = {}

    def solid_response(d_iface):
        v_i, a_i = kinematics_from_displacement(s, p, d_iface)
        f = np.asarray(fluid.force(d_iface, v_i, a_i, t_new), dtype=np.float64)
        if not np.all(np.isfinite(f)):
            raise CouplingError("fluid surrogate returned a non-finite force")
        new = newmark_step(sys, s, p, f)
        last["state"], last["force"] = new, f
        return new.d

    _, _, trace = relaxed_fixed_point(solid_response, s.d, cfg)
    return last["state"], trace, last["force"]


def interface_residual(d_solid, d_fluid) -> float:
    d_solid, d_fluid = np.atleast_1d(d_solid), np.atleast_1d(d_fluid)
    if d_solid.shape != d_fluid.shape:
        raise FsiError("interface vectors differ in length")
    return float(np.linalg.norm(d_solid - d_fluid))


def force_imbalance(f_solid, f_fluid) -> float:
    f_solid, f_fluid = np.atleast_1d(f_solid), np.atleast_1d(f_fluid)
    if f_solid.shape != f_fluid.shape:
        raise FsiError("interface vectors differ in length")
    return float(np.linalg.norm(f_solid - f_fluid))


# -- model problems -------------------------------------------------------------------


@dataclass(frozen=True)
class FsiProblem:
    system: StructuralSystem
    fluid: FluidSurrogate
    d0: np.ndarray
    v0: np.ndarray
    newmark: NewmarkParams
    coupling: CouplingConfig
    ramp_factor: float = 1.0      # initial stiffness multiplier
    ramp_steps: int = 0           # linear ramp back to the real stiffness


@dataclass
class FsiHistory:
    t: np.ndarray
    d: np.ndarray
    v: np.ndarray
    a: np.ndarray
    force: np.ndarray
    inner_iters: np.ndarray
    residual_final: np.ndarray
    omega_final: np.ndarray
    converged: np.ndarray
    traces: list

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged))


def chain_system(n: int = 8, node_mass: float = 100.0, spring_k: float = 2.0e4,
                 rayleigh_alpha: float = 1.0, rayleigh_beta: float = 0.01) -> StructuralSystem:
    """Lumped-mass cantilever: n masses in series, the first tied to a wall."""
    K = np.zeros((n, n))
    for i in range(n):
        K[i, i] = 2.0 * spring_k if i < n - 1 else spring_k
        if i + 1 < n:
            K[i, i + 1] = K[i + 1, i] = -spring_k
    M = node_mass * np.eye(n)
    return StructuralSystem(M, rayleigh_alpha * M + rayleigh_beta * K, K)


def _fluid_from_dict(d: dict, n: int) -> FluidSurrogate:
    kind = d.get("kind", "none")
    args = {k: v for k, v in d.items() if k != "kind"}
    if kind == "none":
        return NoLoad()
    if kind == "constant":
        load = args.get("load", 0.0)
        return ConstantLoad(tuple(np.broadcast_to(np.asarray(load, float), (n,))))
    if kind == "harmonic":
        return HarmonicLoad(**args)
    if kind == "piston":
        return AddedMassPiston(**args)
    if kind == "aero":
        return QuasiSteadyAero(**args)
    raise FsiError(f"unknown fluid surrogate {kind!r}")


def build_problem(cfg: dict) -> FsiProblem:
    """Model problem from a config dict (``problem`` = ``piston`` or ``chain``)."""
    cfg = dict(cfg)
    kind = cfg.get("problem", "piston")
    newmark = NewmarkParams(**cfg.get("newmark", {"dt": 0.05}))
    coupling = CouplingConfig(**cfg.get("coupling", {}))
    if kind == "piston":
        m, k, c = cfg.get("mass", 1.0), cfg.get("stiffness", 1.0), cfg.get("damping", 0.0)
        sys = StructuralSystem([[m]], [[c]], [[k]])
        fluid = AddedMassPiston(cfg.get("added_mass", 0.0))
        d0 = np.array([cfg.get("d0", 1.0)], dtype=float)
        v0 = np.array([cfg.get("v0", 0.0)], dtype=float)
    elif kind == "chain":
        chain = cfg.get("chain", {})
        scale = cfg.get("stiffness_scale", 1.0)
        sys = chain_system(**chain)
        if scale != 1.0:
            sys = StructuralSystem(sys.M, sys.C, scale * sys.K)
        n = sys.n_dof
        fluid = _fluid_from_dict(cfg.get("fluid", {"kind": "none"}), n)
        d0 = np.broadcast_to(np.asarray(cfg.get("d0", 0.0), float), (n,)).copy()
        v0 = np.broadcast_to(np.asarray(cfg.get("v0", 0.0), float), (n,)).copy()
    else:
        raise FsiError(f"unknown problem {kind!r}")
    ramp = cfg.get("ramp", {})
    return FsiProblem(sys, fluid, d0, v0, newmark, coupling,
                      float(ramp.get("factor", 1.0)), int(ramp.get("steps", 0)))


def _consistent_start(problem: FsiProblem, sys: StructuralSystem) -> NewmarkState:
    """Initial acceleration solving M a = F(d0, v0, a) - C v0 - K d0.

    The surrogate may depend on the acceleration itself (added mass), so this
    is a small fixed point, iterated with a wide Aitken window.
    """
    d0, v0 = problem.d0, problem.v0
    rhs = -sys.C @ v0 - sys.K @ d0
    init_cfg = CouplingConfig(tol=1e-13 * max(float(np.abs(rhs).max()), 1.0), max_inner=200,
                              omega0=1.0, omega_min=1e-6, omega_max=2.0, aitken_enabled=True)

    def accel(a):
        return np.linalg.solve(sys.M, problem.fluid.force(d0, v0, a, 0.0) + rhs)

    _, a0, trace = relaxed_fixed_point(accel, np.zeros_like(d0), init_cfg)
    if not trace.converged:
        raise FsiError("could not find a consistent initial acceleration")
    return NewmarkState(d0, v0, a0, 0.0)


def run_fsi(problem: FsiProblem, T: float, on_step: Callable | None = None) -> FsiHistory:
    """March the coupled problem to time ``T``.

    If a step raises :class:`CouplingError`, the history up to the previous
    step is attached to the exception as ``exc.history``.
    """
    if not T > 0:
        raise FsiError("end time T must be positive")
    p = problem.newmark
    n_steps = int(round(T / p.dt))
    base = problem.system
    scaled = {}

    def system_at(step):
        if problem.ramp_steps <= 0 or problem.ramp_factor == 1.0:
            return base
        frac = min(step / problem.ramp_steps, 1.0)
        factor = problem.ramp_factor + (1.0 - problem.ramp_factor) * frac
        if factor == 1.0:
            return base
        if factor not in scaled:
            scaled[factor] = base.scaled(factor)
        return scaled[factor]

    state = _consistent_start(problem, system_at(0))
    f0 = problem.fluid.force(state.d, state.v, state.a, 0.0)
    rows = [(state, np.asarray(f0, dtype=float), 0, 0.0, float("nan"), True)]
    traces = []
    for step in range(1, n_steps + 1):
        sys = system_at(step)
        try:
            state, trace, force = coupled_step(sys, state, p, problem.fluid, problem.coupling)
        except CouplingError as exc:
            exc.history = _history(rows, traces)
            exc.step = step
            raise
        traces.append(trace)
        rows.append((state, force, trace.iterations, trace.residual_final, trace.omega_final,
                     trace.converged))
        if on_step is not None:
            on_step(step, state, trace)
        if not state.is_finite():
            exc = CouplingError(f"non-finite state after step {step}")
            exc.history = _history(rows[:-1], traces[:-1])
            exc.step = step
            raise exc
    return _history(rows, traces)


def _history(rows, traces) -> FsiHistory:
    states = [r[0] for r in rows]
    return FsiHistory(
        t=np.array([s.t for s in states]),
        d=np.array([s.d for s in states]),
        v=np.array([s.v for s in states]),
        a=np.array([s.a for s in states]),
        force=np.array([r[1] for r in rows]),
        inner_iters=np.array([r[2] for r in rows], dtype=int),
        residual_final=np.array([r[3] for r in rows]),
        omega_final=np.array([r[4] for r in rows]),
        converged=np.array([r[5] for r in rows], dtype=bool),
        traces=list(traces),
    )


def write_history_csv(h: FsiHistory, path) -> None:
    n = h.d.shape[1]
    header = (["t"] + [f"d{i}" for i in range(n)] + [f"v{i}" for i in range(n)]
              + ["inner_iters", "residual_final", "omega_final", "converged"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(h.t.size):
            w.writerow([repr(float(h.t[k]))] + [repr(float(x)) for x in h.d[k]]
                       + [repr(float(x)) for x in h.v[k]]
                       + [int(h.inner_iters[k]), repr(float(h.residual_final[k])),
                          repr(float(h.omega_final[k])), int(h.converged[k])])


def write_trace_csv(h: FsiHistory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "iteration", "residual", "omega", "converged"])
        for step, tr in enumerate(h.traces, start=1):
            for it, res in enumerate(tr.residuals, start=1):
                omega = tr.omegas[it - 1] if it - 1 < len(tr.omegas) else float("nan")
                w.writerow([step, it, repr(float(res)), repr(float(omega)), int(tr.converged)])
