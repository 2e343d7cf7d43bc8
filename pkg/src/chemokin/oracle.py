"""Independent reference solvers for frozen-signal linear problems.

With the signal history held fixed, the transport/adaptation/turning
equation is linear and can be integrated along characteristics: positions
stream affinely, the internal state follows its relaxation ODE, and the
density satisfies an integral identity whose right-hand side collects the
slope-damping term and the turning gain/loss, iterated here as a Picard
fixed point.  The kinetic stepper is cross-validated against this solver;
two independent routes agreeing under refinement is the numerical
stand-in for uniqueness.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import BadConfig, LeftDomain, NoContraction
from .fields import DensityField
from .model import ModelSpec, PhaseGrid


# ---------------------------------------------------------------------------
# Frozen signal history
# ---------------------------------------------------------------------------

@dataclass
class SignalHistory:
    """Signal samples S(x, t_k) interpolated bilinearly in (x, t)."""

    times: np.ndarray
    fields: np.ndarray  # (n_times, x_nodes)
    grid: PhaseGrid

    def __post_init__(self) -> None:
        if self.grid.dim != 1:
            raise BadConfig("signal histories are one-dimensional")
        self.times = np.asarray(self.times, dtype=float)
        self.fields = np.atleast_2d(np.asarray(self.fields, dtype=float))
        if self.fields.shape != (self.times.size, self.grid.x_nodes):
            raise BadConfig(
                f"history shape {self.fields.shape} != (n_times, x_nodes)")

    @classmethod
    def constant(cls, s_values: np.ndarray, grid: PhaseGrid) -> "SignalHistory":
        s = np.asarray(s_values, dtype=float)
        return cls(times=np.array([0.0, 1.0]), fields=np.stack([s, s]), grid=grid)

    def _interp_x(self, field: np.ndarray, x: np.ndarray) -> np.ndarray:
        g = self.grid
        u = (x + 0.5 * g.x_extent) / g.dx - 0.5
        if g.x_topology == "periodic":
            i0 = np.floor(u).astype(int)
            frac = u - i0
            i0 %= g.x_nodes
            i1 = (i0 + 1) % g.x_nodes
            return (1.0 - frac) * field[i0] + frac * field[i1]
        u = np.clip(u, 0.0, g.x_nodes - 1.0)
        i0 = np.minimum(np.floor(u).astype(int), g.x_nodes - 2)
        frac = u - i0
        return (1.0 - frac) * field[i0] + frac * field[i0 + 1]

    def eval(self, x: np.ndarray, s: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        t = float(np.clip(s, self.times[0], self.times[-1]))
        k = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0,
                        self.times.size - 2))
        t0, t1 = self.times[k], self.times[k + 1]
        w = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
        lo = self._interp_x(self.fields[k], x)
        hi = self._interp_x(self.fields[k + 1], x)
        return (1.0 - w) * lo + w * hi


# ---------------------------------------------------------------------------
# Characteristic backtrace
# ---------------------------------------------------------------------------

@dataclass
class CharacteristicPath:
    """Backward characteristic through (x, v, m, t), sampled on s in [0, t]."""

    s: np.ndarray
    x: np.ndarray
    m: np.ndarray
    v: np.ndarray


def _rk4_backward(m_end, x_end, v, s_grid: np.ndarray, s_hist: SignalHistory,
                  spec: ModelSpec, substeps: int):
    """Integrate dM/ds = F(M, S(X(s), s))/eps backward along the s grid.

    Returns M at every node of ``s_grid`` (which ends at the path's end
    time).  Vectorized over arbitrary leading shape of ``m_end``/``x_end``.
    """
    eps = spec.epsilon
    t_end = s_grid[-1]

    def rhs(m, s):
        x_s = x_end - v * (t_end - s)
        return spec.adaptation.rate(m, s_hist.eval(x_s, s)) / eps

    out = np.empty((s_grid.size,) + np.shape(m_end))
    out[-1] = m_end
    m = np.asarray(m_end, dtype=float)
    for idx in range(s_grid.size - 1, 0, -1):
        s_hi, s_lo = s_grid[idx], s_grid[idx - 1]
        h = (s_lo - s_hi) / substeps  # negative: backward in s
        s = s_hi
        for _ in range(substeps):
            k1 = rhs(m, s)
            k2 = rhs(m + 0.5 * h * k1, s + 0.5 * h)
            k3 = rhs(m + 0.5 * h * k2, s + 0.5 * h)
            k4 = rhs(m + h * k3, s + h)
            m = m + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            s += h
        out[idx - 1] = m
    return out


def backtrace(x: float, v_idx: int, m: float, t: float, s_hist: SignalHistory,
              spec: ModelSpec, grid: PhaseGrid, tol: float = 1e-10,
              n_samples: int = 16, max_doublings: int = 20) -> CharacteristicPath:
    """Backward characteristic from (x, v, m) at time t down to time 0.

    The position is exact (affine in s); the internal state is integrated
    with classical RK4, doubling the step count until M(0) moves by at
    most ``tol``.  Raises LeftDomain if the state exits [0, m_max], which
    signals a misconfigured m truncation.
    """
    if t < 0:
        raise BadConfig("backtrace needs t >= 0")
    v = grid.velocities[v_idx]
    vx = float(v[0]) if grid.dim == 1 else v
    if t == 0:
        return CharacteristicPath(np.array([0.0]), np.array([x]), np.array([float(m)]), v)

    n = n_samples
    prev_m0 = None
    for _ in range(max_doublings):
        s_grid = np.linspace(0.0, t, n + 1)
        m_path = _rk4_backward(np.float64(m), np.float64(x), vx, s_grid, s_hist,
                               spec, substeps=1)
        m0 = float(m_path[0])
        if prev_m0 is not None and abs(m0 - prev_m0) <= tol:
            break
        prev_m0 = m0
        n *= 2

    slack = 1e-9 * grid.m_max
    if np.any(m_path < -slack) or np.any(m_path > grid.m_max + slack):
        raise LeftDomain(
            f"internal state left [0, {grid.m_max}] along the characteristic "
            f"(range [{float(m_path.min()):.6g}, {float(m_path.max()):.6g}])")

    x_path = x - vx * (t - s_grid)
    return CharacteristicPath(s=s_grid, x=x_path, m=m_path, v=np.atleast_1d(v))


# ---------------------------------------------------------------------------
# Duhamel / Picard fixed point
# ---------------------------------------------------------------------------

def _lagrange_cubic_weights(frac: np.ndarray) -> tuple[np.ndarray, ...]:
    """Cubic Lagrange weights on the uniform stencil {-1, 0, 1, 2}."""
    xm1 = frac + 1.0
    x0 = frac
    x1 = frac - 1.0
    x2 = frac - 2.0
    w0 = -x0 * x1 * x2 / 6.0
    w1 = xm1 * x1 * x2 / 2.0
    w2 = -xm1 * x0 * x2 / 2.0
    w3 = xm1 * x0 * x1 / 6.0
    return w0, w1, w2, w3


def _interp_grid_xm(field: np.ndarray, xq: np.ndarray, mq: np.ndarray,
                    grid: PhaseGrid) -> np.ndarray:
    """Cubic Lagrange interpolation of a (x_nodes, m_nodes) grid function.

    Periodic in x (zero ghost in free mode); zero ghost centers beyond
    m = 0 and m = m_max, matching the boundary values.  Cubic order keeps
    the oracle's own error far below the first-order scheme it checks.
    """
    nx, nm = grid.x_nodes, grid.m_nodes
    periodic = grid.x_topology == "periodic"

    u = (xq + 0.5 * grid.x_extent) / grid.dx - 0.5
    ix = np.floor(u).astype(int)
    wx = _lagrange_cubic_weights(u - ix)
    w = mq / grid.dm - 0.5
    jm = np.floor(w).astype(int)
    wm = _lagrange_cubic_weights(w - jm)

    out = np.zeros(np.broadcast(xq, mq).shape)
    for a in range(4):
        i = ix + (a - 1)
        if periodic:
            i_ok = 1.0
            i = np.mod(i, nx)
        else:
            i_ok = ((i >= 0) & (i < nx)).astype(float)
            i = np.clip(i, 0, nx - 1)
        row = np.zeros_like(out)
        for b in range(4):
            j = jm + (b - 1)
            j_ok = ((j >= 0) & (j < nm)).astype(float)
            row += wm[b] * field[i, np.clip(j, 0, nm - 1)] * j_ok
        out += wx[a] * row * i_ok
    return out


@dataclass
class DuhamelResult:
    field: DensityField
    iterations: int
    sup_diffs: list[float] = dc_field(default_factory=list)
    l1_diffs: list[float] = dc_field(default_factory=list)


def contraction_coefficient(spec: ModelSpec, grid: PhaseGrid) -> float:
    """Lipschitz rate of the Picard map: slope_cap/eps + 2 V_d turning_cap."""
    return spec.slope_cap / spec.epsilon + 2.0 * grid.v_measure * spec.turning_cap


def duhamel_solve(p0: DensityField, s_hist: SignalHistory, spec: ModelSpec,
                  grid: PhaseGrid, t: float, picard_iters: int,
                  n_time: int = 32, rk_substeps: int = 4,
                  tol: float = 1e-10) -> DuhamelResult:
    """Fixed point of the characteristic integral identity on a frozen signal.

    Iterates the representation (pull-back of the initial data plus the
    time integral of slope damping and turning gain/loss along each
    backward characteristic) until successive iterates differ by at most
    ``tol`` in sup norm, or ``picard_iters`` sweeps.  Requires the horizon
    to contract: t * (slope_cap/eps + 2 V_d turning_cap) < 1.
    """
    if grid.dim != 1:
        raise BadConfig("the Duhamel oracle is one-dimensional")
    if spec.slope_cap <= 0 or spec.turning_cap <= 0:
        raise BadConfig("spec must be validated on a grid before oracle use")
    coef = contraction_coefficient(spec, grid)
    if t * coef >= 1.0:
        raise NoContraction(
            f"horizon t = {t} gives contraction factor {t * coef:.3f} >= 1")

    nx, nv, nm = grid.x_nodes, grid.n_v, grid.m_nodes
    lt = max(1, n_time)
    taus = np.linspace(0.0, t, lt + 1)
    dtau = t / lt
    eps = spec.epsilon
    x_col = grid.x_centers[:, None]                  # broadcasts against m
    mq0 = np.ones((nx, 1)) * grid.m_centers[None, :]

    kernel = spec.turning.kernel_matrix(grid)
    gain_w = kernel * grid.weights[None, :]          # (k, k'')
    col_norm = grid.weights @ kernel                 # (k,) discrete loss kernel mass

    # Characteristic tables: for each target velocity k and end index l,
    # positions (l+1, nx) and internal states (l+1, nx, nm) at every
    # earlier node l' <= l.  States may wander outside [0, m_max]; density
    # lookups there read zero, the boundary data of the truncated problem.
    x_tab = [[None] * (lt + 1) for _ in range(nv)]
    m_tab = [[None] * (lt + 1) for _ in range(nv)]
    for k in range(nv):
        vx = float(grid.velocities[k, 0])
        for l in range(lt + 1):
            s_grid = taus[: l + 1]
            if l == 0:
                m_tab[k][l] = mq0[None, :, :].copy()
            else:
                m_tab[k][l] = _rk4_backward(mq0, x_col, vx, s_grid, spec=spec,
                                            s_hist=s_hist, substeps=rk_substeps)
            x_tab[k][l] = grid.x_centers[None, :] - vx * (taus[l] - s_grid)[:, None]

    # Pull-back of the initial data: iterate zero.
    pullback = np.empty((lt + 1, nx, nv, nm))
    for k in range(nv):
        for l in range(lt + 1):
            pullback[l, :, k, :] = _interp_grid_xm(
                p0.values[:, k, :], x_tab[k][l][0][:, None], m_tab[k][l][0], grid)

    iters = [pullback.copy()]
    sup_diffs: list[float] = []
    l1_diffs: list[float] = []
    cell = grid.cell_volume * grid.dm

    done = 0
    for it in range(picard_iters):
        prev = iters[-1]
        nxt = pullback.copy()
        for l in range(1, lt + 1):
            integ = np.empty((l + 1, nx, nv, nm))
            for lp in range(l + 1):
                s_lp = taus[lp]
                for k in range(nv):
                    xs = x_tab[k][l][lp][:, None]
                    ms = m_tab[k][l][lp]
                    lam = spec.turning.frequency(ms)
                    slope = spec.adaptation.rate_m(ms, s_hist.eval(xs, s_lp))
                    gathered = np.stack(
                        [_interp_grid_xm(prev[lp][:, kk, :], xs, ms, grid)
                         for kk in range(nv)], axis=1)       # (nx, nv, nm) sources
                    own = gathered[:, k, :]
                    gain = np.einsum("j,xjm->xm", gain_w[k], gathered)
                    integ[lp, :, k, :] = (-slope / eps) * own \
                        + lam * (gain - col_norm[k] * own)
            wts = np.full(l + 1, dtau)
            wts[0] = wts[-1] = 0.5 * dtau
            nxt[l] += np.einsum("l,lxvm->xvm", wts, integ)
        diff = nxt - prev
        sup_diffs.append(float(np.abs(diff).max()))
        l1_per_node = np.einsum("lxvm,v->l", np.abs(diff), grid.weights) * cell
        l1_diffs.append(float(l1_per_node.max()))
        iters.append(nxt)
        iters.pop(0)
        done = it + 1
        if sup_diffs[-1] <= tol:
            break

    final = iters[-1][lt]
    return DuhamelResult(field=DensityField(final, t), iterations=done,
                         sup_diffs=sup_diffs, l1_diffs=l1_diffs)
