"""Advance the phase-space density by operator splitting.

One macro step is Strang-ordered with the stiff internal-state term
outermost: half adaptation, half turning, full transport, half turning,
half adaptation, then a signal refresh.  Every sub-operation is written in
non-negative-coefficient form so positivity is preserved under its CFL
bound, and every sub-operation conserves the discrete mass exactly up to
round-off (periodic transport telescopes, the turning integrand is
antisymmetric under swapping the two velocities, and the m-flux carries
zero boundary values because the adaptation rate points inward at both
ends of the truncated m-interval).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .diagnostics import DiagnosticsReport
from .elliptic import solve_signal
from .errors import BadConfig, CflViolation, PositivityError, SpecViolation
from .fields import DensityField, SignalField
from .model import InitialData, ModelSpec, PhaseGrid

#: Relative slack when comparing a step against its CFL bound.
CFL_SLACK = 1e-9


def pbar_of(p: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    """m-integrated density over (x, v)."""
    return np.sum(p, axis=-1) * grid.dm


def number_density(p: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    """Macroscopic density n(x), the (v, m) integral of p."""
    return np.sum(pbar_of(p, grid) * grid.weights, axis=-1)


def total_mass(p: np.ndarray, grid: PhaseGrid) -> float:
    return float(np.sum(p * grid.weights[:, None]) * grid.cell_volume * grid.dm)


# ---------------------------------------------------------------------------
# Turning
# ---------------------------------------------------------------------------

@dataclass
class TurningTensors:
    """Precomputed quadrature arrays for the turning operator.

    ``gain[k, k', j] = w_k' * T(v_k, v_k', m_j)`` and
    ``loss[k, j] = sum_k' w_k' * T(v_k', v_k, m_j)`` so one explicit Euler
    update is p <- p*(1 - dt*loss) + dt*(gain contracted with p).
    """

    gain: np.ndarray
    loss: np.ndarray

    @property
    def max_loss(self) -> float:
        return float(self.loss.max())

    @classmethod
    def build(cls, spec: ModelSpec, grid: PhaseGrid) -> "TurningTensors":
        t = spec.turning_tensor(grid)
        w = grid.weights
        return cls(gain=t * w[None, :, None], loss=np.einsum("lkj,l->kj", t, w))


def turning_apply(p: np.ndarray, spec: ModelSpec, grid: PhaseGrid, dt: float,
                  tensors: TurningTensors | None = None) -> np.ndarray:
    """One explicit Euler step of the velocity-jump operator.

    Positivity needs dt below the inverse of the largest total outflux
    rate (at most V_d * turning_cap).
    """
    tensors = tensors or TurningTensors.build(spec, grid)
    if dt * tensors.max_loss > 1.0 + CFL_SLACK:
        raise CflViolation(
            f"turning step dt = {dt} exceeds positivity bound {1.0 / tensors.max_loss}")
    gain = np.einsum("klj,...lj->...kj", tensors.gain, p)
    return p * (1.0 - dt * tensors.loss) + dt * gain


# ---------------------------------------------------------------------------
# Transport
# ---------------------------------------------------------------------------

def _upwind_shift(arr: np.ndarray, axis: int, sign: int, periodic: bool) -> np.ndarray:
    """Neighbor values entering a cell for flow direction ``sign`` on ``axis``."""
    out = np.roll(arr, sign, axis=axis)
    if not periodic:
        sl = [slice(None)] * arr.ndim
        sl[axis] = 0 if sign > 0 else -1
        out[tuple(sl)] = 0.0
    return out


def transport_apply(p: np.ndarray, grid: PhaseGrid, dt: float) -> np.ndarray:
    """First-order upwind x-transport, one step for every velocity node.

    Mass is conserved exactly on periodic grids; truncated grids lose only
    outflow through the boundary.  Positivity holds for per-axis Courant
    numbers summing to at most one.
    """
    periodic = grid.x_topology == "periodic"
    out = np.empty_like(p)
    for k in range(grid.n_v):
        slab = p[..., k, :]
        courants = grid.velocities[k] * dt / grid.dx
        if np.sum(np.abs(courants)) > 1.0 + CFL_SLACK:
            raise CflViolation(
                f"transport step dt = {dt} exceeds dx/|v| for velocity node {k}")
        stay = 1.0
        acc = np.zeros_like(slab)
        for axis, c in enumerate(courants):
            if c == 0.0:
                continue
            cmag = min(abs(float(c)), 1.0)
            stay -= cmag
            acc += cmag * _upwind_shift(slab, axis, 1 if c > 0 else -1, periodic)
        out[..., k, :] = max(stay, 0.0) * slab + acc
    return out


# ---------------------------------------------------------------------------
# Stiff adaptation in m
# ---------------------------------------------------------------------------

def adaptation_substeps(dt: float, f_edge_max: float, spec: ModelSpec,
                        grid: PhaseGrid) -> int:
    """Substep count keeping each substep below eps*dm/max|F|."""
    if f_edge_max == 0.0:
        return 1
    return max(1, math.ceil(dt * f_edge_max / (spec.epsilon * grid.dm) - CFL_SLACK))


def adaptation_apply(p: np.ndarray, s: np.ndarray, spec: ModelSpec, grid: PhaseGrid,
                     dt: float, n_sub: int | None = None) -> np.ndarray:
    """Conservative flux-form upwind step of the m-drift term.

    The rate F(., S(x))/eps is evaluated at the m-cell edges with zero
    ghost states beyond [0, m_max].  Because the validated sign structure
    puts F > 0 at m = 0 and F < 0 at m = m_max, both boundary fluxes
    vanish and the m-integral of p is exact.  The stiff CFL is met by
    internal substepping.
    """
    f_edge = np.asarray(spec.adaptation_rate(grid.m_edges[None, :], np.asarray(s)[..., None]))
    f_edge = f_edge.reshape(grid.x_shape + (1, grid.m_nodes + 1))

    if np.any(f_edge[..., -1] >= 0.0):
        raise SpecViolation(
            "adaptation rate is non-negative at m_max; the m-truncation is too small "
            f"(max rate at m_max = {float(f_edge[..., -1].max()):.6g})")
    if np.any(f_edge[..., 0] <= 0.0):
        raise SpecViolation("adaptation rate is non-positive at m = 0")

    f_max = float(np.abs(f_edge).max())
    steps = n_sub if n_sub is not None else adaptation_substeps(dt, f_max, spec, grid)
    dt_sub = dt / steps
    if dt_sub * f_max > spec.epsilon * grid.dm * (1.0 + CFL_SLACK):
        raise CflViolation(
            f"adaptation substep {dt_sub} exceeds eps*dm/max|F| = "
            f"{spec.epsilon * grid.dm / f_max}")

    a = dt_sub / (spec.epsilon * grid.dm)
    f_plus = np.maximum(f_edge, 0.0)
    f_minus = np.minimum(f_edge, 0.0)
    # Interior-edge coefficients; the sign structure makes the stay
    # coefficient non-negative under the substep CFL.
    stay = 1.0 - a * (f_plus[..., 1:] - f_minus[..., :-1])
    from_left = a * f_plus[..., 1:-1]
    from_right = -a * f_minus[..., 1:-1]

    out = p
    for _ in range(steps):
        new = out * stay
        new[..., 1:] += from_left * out[..., :-1]
        new[..., :-1] += from_right * out[..., 1:]
        out = new
    return out


# ---------------------------------------------------------------------------
# Macro stepping
# ---------------------------------------------------------------------------

@dataclass
class StepperState:
    """Full solver state: density, lagged signal, model, grid, counters."""

    field: DensityField
    signal: SignalField
    spec: ModelSpec
    grid: PhaseGrid
    tensors: TurningTensors
    mass0: float
    step_count: int = 0
    mass_defect: float = 0.0
    max_mass_defect: float = 0.0
    freeze_signal: bool = False

    @property
    def t(self) -> float:
        return self.field.t

    @classmethod
    def create(cls, grid: PhaseGrid, spec: ModelSpec, initial: InitialData,
               freeze_signal: bool = False) -> "StepperState":
        p0 = initial.p0
        signal = solve_signal(number_density(p0.values, grid), grid)
        return cls(
            field=DensityField(p0.values.copy(), p0.t),
            signal=signal,
            spec=spec,
            grid=grid,
            tensors=TurningTensors.build(spec, grid),
            mass0=initial.mass,
            freeze_signal=freeze_signal,
        )

    def cfl_dt(self) -> float:
        """Largest macro step compatible with transport and turning CFLs."""
        dt_x = self.grid.dx / self.grid.max_speed if self.grid.max_speed > 0 else np.inf
        dt_turn = 1.0 / (self.grid.v_measure * self.spec.turning_cap)
        return min(dt_x, dt_turn)


def macro_step(state: StepperState, dt: float) -> StepperState:
    """One Strang-split macro step; returns a new state.

    The signal is frozen over the step and refreshed from the updated
    density afterwards (unless the state freezes it for oracle runs).
    Positivity is asserted on the result: a negative cell is a scheme bug,
    never something to clip.
    """
    if dt <= 0:
        raise BadConfig(f"macro step dt must be positive, got {dt}")
    grid, spec = state.grid, state.spec
    s = state.signal.values

    p = adaptation_apply(state.field.values, s, spec, grid, 0.5 * dt)
    p = turning_apply(p, spec, grid, 0.5 * dt, state.tensors)
    p = transport_apply(p, grid, dt)
    p = turning_apply(p, spec, grid, 0.5 * dt, state.tensors)
    p = adaptation_apply(p, s, spec, grid, 0.5 * dt)

    pmin = float(p.min())
    if pmin < 0.0:
        raise PositivityError(
            f"negative density {pmin:.3e} after macro step at t = {state.t + dt:.6g}")

    t_new = state.t + dt
    signal = state.signal if state.freeze_signal \
        else solve_signal(number_density(p, grid), grid)

    defect = (total_mass(p, grid) - state.mass0) / state.mass0 if state.mass0 else 0.0
    return replace(
        state,
        field=DensityField(p, t_new),
        signal=signal,
        step_count=state.step_count + 1,
        mass_defect=defect,
        max_mass_defect=max(state.max_mass_defect, abs(defect)),
    )


def output_times(t_start: float, t_end: float, output_every: float) -> list[float]:
    """Strictly increasing output instants k*output_every, plus t_end.

    Times are exact float products of the integer index and the cadence so
    a restarted run regenerates the identical schedule bitwise.
    """
    times = []
    k = math.floor(t_start / output_every + 1e-9) + 1
    while k * output_every < t_end * (1.0 - 1e-12):
        tk = k * output_every
        if tk > t_start:
            times.append(tk)
        k += 1
    times.append(t_end)
    return times


def run(state: StepperState, t_end: float, output_every: float,
        report: DiagnosticsReport | None = None,
        observer=None) -> tuple[StepperState, DiagnosticsReport | None]:
    """Advance to t_end with the largest CFL-safe step, capped per output.

    Each output interval is covered by an integer number of equal macro
    steps; the state's clock is snapped to the exact scheduled instant at
    every interval end so runs and restarts share bitwise-identical
    schedules.  ``report.observe`` fires at t_start (fresh reports only)
    and at every output instant; ``observer(state)`` after each output.
    """
    if t_end < state.t:
        raise BadConfig(f"t_end = {t_end} is before current time {state.t}")
    if report is not None and not report.rows:
        report.observe(state.field.values, state.signal.values, state.t)
        if observer is not None:
            observer(state)
    if t_end == state.t:
        return state, report

    dt_cap = state.cfl_dt()
    for t_next in output_times(state.t, t_end, output_every):
        span = t_next - state.t
        n_steps = max(1, math.ceil(span / dt_cap - 1e-9))
        dt = span / n_steps
        for _ in range(n_steps):
            state = macro_step(state, dt)
        state = replace(state, field=DensityField(state.field.values, t_next))
        if report is not None:
            report.observe(state.field.values, state.signal.values, t_next)
        if observer is not None:
            observer(state)
    return state, report
