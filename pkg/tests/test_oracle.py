"""Characteristic backtrace and the Picard fixed point vs. independent oracles."""
import numpy as np
import pytest

from chemokin.errors import LeftDomain, NoContraction
from chemokin.fields import DensityField
from chemokin.kinetic import StepperState, macro_step, total_mass
from chemokin.model import (AdaptationModel, ModelSpec, PhaseGrid, TurningModel,
                            package_initial, velocity_set)
from chemokin.oracle import (SignalHistory, backtrace, contraction_coefficient,
                             duhamel_solve)


def make_setup(nx=16, nm=16, extent=4.0, kappa=1.0, lambda0=0.5, eps=1.0,
               t_family="constant", nv=2):
    v, w = velocity_set(1, nv)
    grid = PhaseGrid(dim=1, x_nodes=nx, x_extent=extent, x_topology="periodic",
                     velocities=v, weights=w, m_nodes=nm, m_max=1.7)
    spec = ModelSpec(
        adaptation=AdaptationModel(kind="linear", kappa=kappa, s_ref=0.5,
                                   m_minus=0.2, m_plus=1.2),
        turning=TurningModel(kind=t_family, lambda0=lambda0, beta=0.4,
                             m_c=0.7, delta=0.25),
        epsilon=eps)
    spec.validate_on(grid)
    return grid, spec


# -- backtrace ------------------------------------------------------------------

def test_backtrace_stationary_at_adapted_state():
    grid, spec = make_setup()
    s_val = 0.5
    hist = SignalHistory.constant(np.full(grid.x_nodes, s_val), grid)
    m0 = float(spec.adaptation.equilibrium(s_val))
    path = backtrace(x=0.3, v_idx=1, m=m0, t=1.0, s_hist=hist, spec=spec, grid=grid)
    assert np.allclose(path.m, m0, atol=1e-12)
    v = float(grid.velocities[1, 0])
    assert path.x[0] == pytest.approx(0.3 - v * 1.0)       # exact streaming
    assert np.allclose(np.diff(path.x) / np.diff(path.s), v, atol=1e-12)


def test_backtrace_matches_linear_relaxation_closed_form():
    grid, spec = make_setup(kappa=1.3, eps=0.7)
    s_val = 0.8
    hist = SignalHistory.constant(np.full(grid.x_nodes, s_val), grid)
    m0 = float(spec.adaptation.equilibrium(s_val))
    m_end, t = 0.9, 0.6
    path = backtrace(x=0.0, v_idx=0, m=m_end, t=t, s_hist=hist, spec=spec, grid=grid)
    # relaxation toward m0 forward in time departs from m0 backward in time
    exact = m0 + (m_end - m0) * np.exp(1.3 * (t - path.s) / 0.7)
    assert np.max(np.abs(path.m - exact)) <= 1e-8


def test_backtrace_zero_velocity_stationary_position():
    v = np.array([[0.0]])
    w = np.array([2.0])
    grid = PhaseGrid(dim=1, x_nodes=8, x_extent=4.0, x_topology="periodic",
                     velocities=v, weights=w, m_nodes=8, m_max=1.7)
    spec = ModelSpec(
        adaptation=AdaptationModel(kind="linear", kappa=1.0, s_ref=0.5,
                                   m_minus=0.2, m_plus=1.2),
        turning=TurningModel(kind="constant", lambda0=0.5),
        epsilon=1.0)
    spec.validate_on(grid)
    hist = SignalHistory.constant(np.full(8, 0.8), grid)
    path = backtrace(x=0.6, v_idx=0, m=0.9, t=0.5, s_hist=hist, spec=spec, grid=grid)
    assert np.all(path.x == 0.6)
    m0 = float(spec.adaptation.equilibrium(0.8))
    exact0 = m0 + (0.9 - m0) * np.exp(1.0 * 0.5)
    assert path.m[0] == pytest.approx(exact0, abs=1e-8)


def test_backtrace_leaves_domain_raises():
    grid, spec = make_setup(kappa=2.0)
    hist = SignalHistory.constant(np.full(grid.x_nodes, 0.5), grid)
    # backward flow expands away from the root: exp(kappa t) * 0.5 >> m_max
    with pytest.raises(LeftDomain):
        backtrace(x=0.0, v_idx=0, m=1.2, t=2.0, s_hist=hist, spec=spec, grid=grid)


# -- Duhamel / Picard -----------------------------------------------------------

def test_no_contraction_guard():
    grid, spec = make_setup(kappa=2.0, lambda0=1.0)
    hist = SignalHistory.constant(np.zeros(grid.x_nodes), grid)
    p0 = DensityField(np.ones(grid.field_shape))
    t_bad = 1.1 / contraction_coefficient(spec, grid)
    with pytest.raises(NoContraction):
        duhamel_solve(p0, hist, spec, grid, t_bad, picard_iters=3)


def test_zero_iterations_is_pure_pullback():
    # Vanishing rates: the pull-back is a plain translate by v*t.
    grid, spec = make_setup(nx=16, nm=8, kappa=1e-12, lambda0=0.5)
    hist = SignalHistory.constant(np.full(grid.x_nodes, 0.5), grid)
    rng = np.random.default_rng(2)
    p0 = rng.random(grid.field_shape)
    t = 2.0 * grid.dx  # v = +-0.5: exactly one cell each way
    res = duhamel_solve(DensityField(p0), hist, spec, grid, t, picard_iters=0)
    expected = np.empty_like(p0)
    expected[:, 0, :] = np.roll(p0[:, 0, :], -1, axis=0)
    expected[:, 1, :] = np.roll(p0[:, 1, :], 1, axis=0)
    assert np.max(np.abs(res.field.values - expected)) <= 1e-8
    assert res.iterations == 0


def _cubic_w(frac):
    return (-frac * (frac - 1) * (frac - 2) / 6.0,
            (frac + 1) * (frac - 1) * (frac - 2) / 2.0,
            -(frac + 1) * frac * (frac - 2) / 2.0,
            (frac + 1) * frac * (frac - 1) / 6.0)


def _scalar_interp(field, xq, mq, grid):
    # cubic Lagrange, periodic in x, zero ghosts in m (mirrors the oracle)
    u = (xq + 0.5 * grid.x_extent) / grid.dx - 0.5
    i0 = int(np.floor(u))
    wx = _cubic_w(u - i0)
    wj = mq / grid.dm - 0.5
    j0 = int(np.floor(wj))
    wm = _cubic_w(wj - j0)
    total = 0.0
    for a in range(4):
        i = (i0 + a - 1) % grid.x_nodes
        row = 0.0
        for b in range(4):
            j = j0 + b - 1
            if 0 <= j < grid.m_nodes:
                row += wm[b] * field[i, j]
        total += wx[a] * row
    return total


def _scalar_s(s_field, xq, grid):
    u = (xq + 0.5 * grid.x_extent) / grid.dx - 0.5
    i0 = int(np.floor(u))
    fx = u - i0
    i0 %= grid.x_nodes
    return (1 - fx) * s_field[i0] + fx * s_field[(i0 + 1) % grid.x_nodes]


def brute_force_duhamel(p0, s_field, spec, grid, t, iters, n_time, rk_substeps):
    """Nested-loop mirror of the Picard iteration on a frozen signal."""
    nx, nv, nm = grid.x_nodes, grid.n_v, grid.m_nodes
    taus = np.linspace(0.0, t, n_time + 1)
    dtau = t / n_time
    eps = spec.epsilon
    kernel = spec.turning.kernel_matrix(grid)
    w = grid.weights
    col = w @ kernel

    def rate(m, x, s):
        return float(spec.adaptation.rate(m, _scalar_s(s_field, x, grid))) / eps

    def back_m(m_end, x_end, v, l_end):
        # RK4 along taus[0..l_end], rk_substeps stages per interval
        ms = np.empty(l_end + 1)
        ms[l_end] = m_end
        m = m_end
        for idx in range(l_end, 0, -1):
            h = (taus[idx - 1] - taus[idx]) / rk_substeps
            s = taus[idx]
            for _ in range(rk_substeps):
                def f(mm, ss):
                    return rate(mm, x_end - v * (taus[l_end] - ss), ss)
                k1 = f(m, s)
                k2 = f(m + 0.5 * h * k1, s + 0.5 * h)
                k3 = f(m + 0.5 * h * k2, s + 0.5 * h)
                k4 = f(m + h * k3, s + h)
                m = m + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                s += h
            ms[idx - 1] = m
        return ms

    cur = np.empty((n_time + 1, nx, nv, nm))
    paths = {}
    for l in range(n_time + 1):
        for i in range(nx):
            for k in range(nv):
                v = float(grid.velocities[k, 0])
                for j in range(nm):
                    ms = back_m(grid.m_centers[j], grid.x_centers[i], v, l)
                    paths[(l, i, k, j)] = ms
                    x0 = grid.x_centers[i] - v * taus[l]
                    cur[l, i, k, j] = _scalar_interp(p0[:, k, :], x0, ms[0], grid)
    pullback = cur.copy()

    for _ in range(iters):
        nxt = pullback.copy()
        for l in range(1, n_time + 1):
            for i in range(nx):
                for k in range(nv):
                    v = float(grid.velocities[k, 0])
                    for lp in range(l + 1):
                        acc = np.zeros(nm)
                        x_lp = grid.x_centers[i] - v * (taus[l] - taus[lp])
                        for j in range(nm):
                            m_lp = paths[(l, i, k, j)][lp]
                            lam = float(spec.turning.frequency(m_lp))
                            slope = float(spec.adaptation.rate_m(
                                m_lp, _scalar_s(s_field, x_lp, grid)))
                            own = _scalar_interp(cur[lp][:, k, :], x_lp, m_lp, grid)
                            gain = 0.0
                            for kk in range(nv):
                                gain += kernel[k, kk] * w[kk] * _scalar_interp(
                                    cur[lp][:, kk, :], x_lp, m_lp, grid)
                            acc[j] = (-slope / eps) * own + lam * (gain - col[k] * own)
                        weight = dtau if 0 < lp < l else 0.5 * dtau
                        nxt[l, i, k, :] += weight * acc
        cur = nxt
    return cur[n_time]


def test_duhamel_matches_brute_force_quadrature():
    grid, spec = make_setup(nx=4, nm=4, extent=2.0, kappa=1.0, lambda0=0.5)
    x = grid.x_centers
    s_field = 0.3 + 0.2 * np.cos(2 * np.pi * x / grid.x_extent)
    hist = SignalHistory.constant(s_field, grid)
    rng = np.random.default_rng(9)
    p0 = rng.random(grid.field_shape)
    t, n_time, iters = 0.3, 4, 4
    res = duhamel_solve(DensityField(p0), hist, spec, grid, t,
                        picard_iters=iters, n_time=n_time, rk_substeps=2,
                        tol=0.0)
    brute = brute_force_duhamel(p0, s_field, spec, grid, t, iters, n_time,
                                rk_substeps=2)
    assert np.max(np.abs(res.field.values - brute)) <= 1e-10


def test_picard_contraction_ratio():
    grid, spec = make_setup(nx=16, nm=16, kappa=0.8, lambda0=0.4)
    hist = SignalHistory.constant(np.full(grid.x_nodes, 0.4), grid)
    rng = np.random.default_rng(4)
    p0 = rng.random(grid.field_shape)
    t = 0.45 / contraction_coefficient(spec, grid)
    res = duhamel_solve(DensityField(p0), hist, spec, grid, t,
                        picard_iters=25, n_time=24)
    bound = t * contraction_coefficient(spec, grid)
    diffs = [d for d in res.l1_diffs if d > 1e-13]
    ratios = [b / a for a, b in zip(diffs, diffs[1:])]
    assert ratios, "expected at least two meaningful Picard sweeps"
    assert all(r <= bound * 1.15 for r in ratios), (bound, ratios)


def test_kinetic_agrees_with_oracle_small_scale():
    grid, spec = make_setup(nx=32, nm=32, extent=1.6, kappa=0.25, lambda0=0.4,
                            t_family="separable-uniform")
    x = grid.x_centers
    p0 = (np.exp(-(x / 0.4) ** 2)[:, None, None]
          * np.exp(-0.5 * ((grid.m_centers - 0.8) / 0.22) ** 2)[None, None, :]
          * np.ones((1, grid.n_v, 1)))
    init = package_initial(DensityField(p0.copy()), grid)
    state = StepperState.create(grid, spec, init, freeze_signal=True)
    hist = SignalHistory.constant(state.signal.values, grid)
    t = 0.4
    dt = 2 * grid.dx
    for _ in range(int(round(t / dt))):
        state = macro_step(state, dt)
    res = duhamel_solve(init.p0, hist, spec, grid, t, picard_iters=60, n_time=24)
    gap = float(np.sum(np.abs(state.field.values - res.field.values)
                       * grid.weights[:, None]) * grid.cell_volume * grid.dm)
    assert gap / init.mass <= 0.05
    # the oracle conserves mass like the scheme does
    assert total_mass(res.field.values, grid) == pytest.approx(init.mass, rel=0.02)
