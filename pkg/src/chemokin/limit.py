"""Fast-adaptation limit: the reduced velocity-jump model and the eps study.

As the adaptation time scale shrinks, the m-distribution collapses onto a
Dirac at the adapted state m0(S) and the dynamics reduce to a
velocity-jump model whose turning kernel is evaluated at m0(S(x, t)).
This module solves that reduced model, quantifies how far a kinetic
solution is from the Dirac profile (Wasserstein-1 width of the normalized
m-marginal), and runs the eps-family experiment tabulating concentration
width and the L1 gap to the reduced solution.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field, replace as dc_replace
from pathlib import Path

import numpy as np

from .config import RunConfig
from .diagnostics import DiagnosticsReport
from .elliptic import solve_signal
from .errors import BadConfig, CflViolation, EmptyField, NoSignChange, PositivityError
from .fields import BarDensityField, SignalField
from .kinetic import StepperState, output_times, pbar_of, run as kinetic_run
from .model import InitialData, ModelSpec, PhaseGrid, build_scenario

logger = logging.getLogger(__name__)

STUDY_COLUMNS = ("eps", "t", "w1", "l1_gap", "mass",
                 "env_pbar_margin", "env_n_margin", "tail_moment", "xmoment_rate")


# ---------------------------------------------------------------------------
# Adapted-state root
# ---------------------------------------------------------------------------

def m_zero(spec: ModelSpec, s: float, tol: float = 1e-12) -> float:
    """Unique zero of the adaptation rate in (m_minus, m_plus), by bisection.

    Derivative-free so the flat-rooted cubic family costs nothing extra.
    """
    return float(m_zero_field(spec, np.array([float(s)]), tol)[0])


def m_zero_field(spec: ModelSpec, s: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Vectorized bisection of the adaptation rate over an array of signals."""
    s = np.asarray(s, dtype=float)
    lo = np.full(s.shape, spec.m_minus)
    hi = np.full(s.shape, spec.m_plus)
    f_lo = spec.adaptation_rate(lo, s)
    f_hi = spec.adaptation_rate(hi, s)
    if np.any(f_lo <= 0) or np.any(f_hi >= 0):
        bad = np.argmax((f_lo <= 0) | (f_hi >= 0))
        raise NoSignChange(
            "adaptation rate does not change sign over (m_minus, m_plus) at "
            f"S = {s.ravel()[bad]:.6g}")
    span = spec.m_plus - spec.m_minus
    for _ in range(max(1, math.ceil(math.log2(span / tol)))):
        mid = 0.5 * (lo + hi)
        pos = spec.adaptation_rate(mid, s) > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Reduced velocity-jump stepper
# ---------------------------------------------------------------------------

def _advect_slab(slab: np.ndarray, courants: np.ndarray, periodic: bool) -> np.ndarray:
    stay = 1.0
    acc = np.zeros_like(slab)
    for axis, c in enumerate(courants):
        if c == 0.0:
            continue
        cmag = min(abs(float(c)), 1.0)
        stay -= cmag
        shifted = np.roll(slab, 1 if c > 0 else -1, axis=axis)
        if not periodic:
            sl = [slice(None)] * slab.ndim
            sl[axis] = 0 if c > 0 else -1
            shifted[tuple(sl)] = 0.0
        acc += cmag * shifted
    return max(stay, 0.0) * slab + acc


@dataclass
class OdaState:
    """Reduced-model state: m-integrated density plus its lagged signal."""

    field: BarDensityField
    signal: SignalField
    spec: ModelSpec
    grid: PhaseGrid
    mass0: float

    @property
    def t(self) -> float:
        return self.field.t

    @classmethod
    def from_initial(cls, grid: PhaseGrid, spec: ModelSpec,
                     initial: InitialData) -> "OdaState":
        pbar0 = pbar_of(initial.p0.values, grid)
        signal = solve_signal(np.sum(pbar0 * grid.weights, axis=-1), grid)
        return cls(field=BarDensityField(pbar0, initial.p0.t), signal=signal,
                   spec=spec, grid=grid, mass0=initial.mass)


def oda_mass(pbar: np.ndarray, grid: PhaseGrid) -> float:
    return float(np.sum(pbar * grid.weights) * grid.cell_volume)


def _oda_turning(pbar: np.ndarray, lam_x: np.ndarray, kernel: np.ndarray,
                 grid: PhaseGrid, dt: float) -> np.ndarray:
    gain_w = kernel * grid.weights[None, :]
    col_norm = grid.weights @ kernel
    max_loss = float(lam_x.max() * col_norm.max())
    if dt * max_loss > 1.0 + 1e-9:
        raise CflViolation(
            f"reduced-model turning step dt = {dt} exceeds {1.0 / max_loss}")
    gain = np.einsum("kl,...l->...k", gain_w, pbar)
    lam = lam_x[..., None]
    return pbar * (1.0 - dt * lam * col_norm) + dt * lam * gain


def oda_step(state: OdaState, dt: float) -> OdaState:
    """One Strang step of the reduced model: turning, transport, turning.

    The turning kernel is evaluated at the adapted state of the lagged
    signal; the signal refreshes from the updated density afterwards,
    matching the kinetic stepper's lagging so the two solvers collapse
    onto each other when the kernel is m-independent.
    """
    grid, spec = state.grid, state.spec
    m0x = m_zero_field(spec, state.signal.values) if spec.turning.m_dependent \
        else np.full(grid.x_shape, 0.5 * (spec.m_minus + spec.m_plus))
    lam_x = np.asarray(spec.turning.frequency(m0x))
    kernel = spec.turning.kernel_matrix(grid)
    periodic = grid.x_topology == "periodic"

    pbar = _oda_turning(state.field.values, lam_x, kernel, grid, 0.5 * dt)
    out = np.empty_like(pbar)
    for k in range(grid.n_v):
        courants = grid.velocities[k] * dt / grid.dx
        if np.sum(np.abs(courants)) > 1.0 + 1e-9:
            raise CflViolation(f"reduced-model transport exceeds CFL for node {k}")
        out[..., k] = _advect_slab(pbar[..., k], courants, periodic)
    pbar = _oda_turning(out, lam_x, kernel, grid, 0.5 * dt)

    if float(pbar.min()) < 0.0:
        raise PositivityError("negative reduced-model density after step")
    signal = solve_signal(np.sum(pbar * grid.weights, axis=-1), grid)
    return dc_replace(state, field=BarDensityField(pbar, state.t + dt), signal=signal)


def oda_run(state: OdaState, t_end: float, output_every: float,
            observer=None) -> OdaState:
    """Advance the reduced model on the same schedule as the kinetic run."""
    if t_end < state.t:
        raise BadConfig(f"t_end = {t_end} is before current time {state.t}")
    if observer is not None:
        observer(state)
    if t_end == state.t:
        return state
    dt_x = state.grid.dx / state.grid.max_speed if state.grid.max_speed > 0 else np.inf
    dt_cap = min(dt_x, 1.0 / (state.grid.v_measure * state.spec.turning_cap))
    for t_next in output_times(state.t, t_end, output_every):
        span = t_next - state.t
        n_steps = max(1, math.ceil(span / dt_cap - 1e-9))
        dt = span / n_steps
        for _ in range(n_steps):
            state = oda_step(state, dt)
        state = dc_replace(state, field=BarDensityField(state.field.values, t_next))
        if observer is not None:
            observer(state)
    return state


# ---------------------------------------------------------------------------
# Concentration metrics
# ---------------------------------------------------------------------------

@dataclass
class ConcentrationMetrics:
    """Distance of the normalized m-marginals from the adapted Dirac profile.

    Per spatial cell (flattened x index): absolute deviation of the
    m-mean from m0(S(x)), the marginal's standard deviation, and the
    Wasserstein-1 distance to the Dirac at m0(S(x)) (the first absolute
    moment about it, equivalently the integral of |CDF - step|).
    Aggregates are mass-weighted over cells above the vacuum floor.
    """

    included: np.ndarray
    mean_dev: np.ndarray
    std: np.ndarray
    w1: np.ndarray
    w1_aggregate: float
    mean_dev_aggregate: float
    std_aggregate: float
    excluded_cells: int
    excluded_mass: float


def concentration_metrics(p: np.ndarray, s: np.ndarray, spec: ModelSpec,
                          grid: PhaseGrid) -> ConcentrationMetrics:
    marginal = np.einsum("...vm,v->...m", p, grid.weights) * grid.dm
    marginal = marginal.reshape(-1, grid.m_nodes)
    n_x = np.sum(marginal, axis=1)
    total = float(np.sum(n_x) * grid.cell_volume)
    if total <= 0.0:
        raise EmptyField("concentration metrics need positive total mass")

    floor = 1e-12 * total / marginal.shape[0]
    included = n_x * grid.cell_volume > floor
    m0x = m_zero_field(spec, np.asarray(s).reshape(-1))

    m_c = grid.m_centers
    safe_n = np.where(included, n_x, 1.0)
    norm = marginal / safe_n[:, None]
    mean = norm @ m_c
    var = np.einsum("xm,xm->x", norm, (m_c[None, :] - mean[:, None]) ** 2)
    w1 = np.einsum("xm,xm->x", norm, np.abs(m_c[None, :] - m0x[:, None]))

    weight = np.where(included, n_x, 0.0)
    wsum = float(np.sum(weight))
    mean_dev = np.abs(mean - m0x)

    def agg(values: np.ndarray) -> float:
        return float(np.sum(values * weight) / wsum) if wsum > 0 else np.nan

    return ConcentrationMetrics(
        included=included,
        mean_dev=np.where(included, mean_dev, np.nan),
        std=np.where(included, np.sqrt(var), np.nan),
        w1=np.where(included, w1, np.nan),
        w1_aggregate=agg(w1),
        mean_dev_aggregate=agg(mean_dev),
        std_aggregate=agg(np.sqrt(var)),
        excluded_cells=int(np.sum(~included)),
        excluded_mass=float(np.sum(n_x[~included]) * grid.cell_volume),
    )


# ---------------------------------------------------------------------------
# eps-family study
# ---------------------------------------------------------------------------

@dataclass
class StudyRow:
    eps: float
    t: float
    w1: float
    l1_gap: float
    mass: float
    env_pbar_margin: float
    env_n_margin: float
    tail_moment: float
    xmoment_rate: float


@dataclass
class StudyReport:
    rows: list[StudyRow] = dc_field(default_factory=list)
    t_end: float = 0.0

    def final_rows(self) -> list[StudyRow]:
        return [r for r in self.rows if r.t == self.t_end]

    def w1_strictly_decreasing(self) -> bool:
        w = [r.w1 for r in self.final_rows()]
        return all(b < a for a, b in zip(w, w[1:]))

    def l1_gap_ratios(self) -> list[float]:
        g = [r.l1_gap for r in self.final_rows()]
        return [a / b if b > 0 else np.inf for a, b in zip(g, g[1:])]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(STUDY_COLUMNS)
            for r in self.rows:
                writer.writerow([repr(getattr(r, c)) for c in STUDY_COLUMNS])


def _estimate_substeps(spec: ModelSpec, grid: PhaseGrid, dt: float) -> int:
    s_probe = np.linspace(0.0, spec.s_sample_cap, 9)
    ends = np.array([0.0, grid.m_max])
    f_max = float(np.abs(spec.adaptation_rate(ends[:, None], s_probe[None, :])).max())
    return max(1, math.ceil(dt * f_max / (spec.epsilon * grid.dm)))


def _run_one_eps(cfg: RunConfig, eps: float, t_end: float,
                 oda_bars: list[np.ndarray]) -> list[StudyRow]:
    cfg_eps = dc_replace(cfg, model=dc_replace(cfg.model, eps=eps))
    grid, spec, initial = build_scenario(cfg_eps)
    state = StepperState.create(grid, spec, initial)
    report = DiagnosticsReport(initial, spec, grid)

    rows: list[StudyRow] = []
    prev = {"t": state.t, "xm": None}

    def observer(st: StepperState) -> None:
        row = report.rows[-1]
        metrics = concentration_metrics(st.field.values, st.signal.values, spec, grid)
        idx = len(rows)
        gap = float(np.sum(np.abs(pbar_of(st.field.values, grid) - oda_bars[idx])
                           * grid.weights) * grid.cell_volume)
        rate = 0.0
        if prev["xm"] is not None and row.t > prev["t"]:
            rate = (row.x_moment - prev["xm"]) / (row.t - prev["t"])
        prev["t"], prev["xm"] = row.t, row.x_moment
        rows.append(StudyRow(
            eps=eps, t=row.t, w1=metrics.w1_aggregate, l1_gap=gap, mass=row.mass,
            env_pbar_margin=row.margin_pbar, env_n_margin=row.margin_n,
            tail_moment=row.tail_moment, xmoment_rate=rate))

    kinetic_run(state, t_end, cfg.run.output_every, report=report, observer=observer)
    return rows


def eps_study(cfg: RunConfig, eps_list: list[float],
              t_end: float | None = None) -> StudyReport:
    """Run the kinetic solver per eps and the reduced model once; tabulate.

    Rows hold the aggregate Wasserstein-1 concentration width, the L1 gap
    to the reduced solution, mass, envelope margins, the m-tail moment and
    the <x>-moment rate at every output time, per eps.
    """
    if not eps_list or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise BadConfig("eps_list must be non-empty and strictly decreasing")
    t_end = cfg.run.t_end if t_end is None else t_end

    grid, spec, initial = build_scenario(
        dc_replace(cfg, model=dc_replace(cfg.model, eps=min(eps_list))))
    dt_probe = min(cfg.run.output_every,
                   StepperState.create(grid, spec, initial).cfl_dt())
    logger.info("eps study: smallest eps = %g needs ~%d adaptation substeps per "
                "macro half-step", min(eps_list),
                _estimate_substeps(spec, grid, 0.5 * dt_probe))

    oda_state = OdaState.from_initial(grid, spec, initial)
    oda_bars: list[np.ndarray] = []
    oda_run(oda_state, t_end, cfg.run.output_every,
            observer=lambda st: oda_bars.append(st.field.values.copy()))

    report = StudyReport(t_end=t_end)
    if cfg.run.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.run.threads) as pool:
            futures = [pool.submit(_run_one_eps, cfg, eps, t_end, oda_bars)
                       for eps in eps_list]
            for fut in futures:
                report.rows.extend(fut.result())
    else:
        for eps in eps_list:
            report.rows.extend(_run_one_eps(cfg, eps, t_end, oda_bars))
    return report
