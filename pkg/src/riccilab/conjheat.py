"""Backward conjugate heat solutions along a stored flow.

du/dt = -Lap u + R u is integrated backward from positive terminal data of
unit mass; the substitution s = t_i - t makes the problem forward-parabolic.
Terminal data approximating a point mass are normalized geodesic Gaussians
exp(-d^2/(4 eps))/Z with eps tied to the remaining time, so candidates from
successive terminal times are comparable.

The potential f is derived storage only: f = -ln u - ln(4 pi (T_ref - t))
with T_ref either the trajectory extinction time (limit-candidate reading)
or the terminal time t_i (per-solution reading).  It is never evolved
independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .flow import FlowTrajectory, IntegratorError, TimeRangeError
from .grid import MetricProfile, distance_from_north, integrate

FOUR_PI = 4.0 * math.pi


class NormalizationError(ValueError):
    """Terminal data does not carry unit mass."""


class ResolutionError(ValueError):
    """Requested concentration is below what the grid resolves."""


@dataclass
class ConjugateSolution:
    """Space-time density u(theta, t) on [0, t_i] along a trajectory."""

    traj: FlowTrajectory
    t_terminal: float
    times: np.ndarray          # ascending, last entry == t_terminal
    u: np.ndarray              # (ns, n_nodes), positive
    theta_base: float | None = None
    eps: float | None = None
    increments: np.ndarray | None = None
    warnings: list = field(default_factory=list)

    @property
    def grid(self):
        return self.traj.grid

    @property
    def T(self) -> float:
        return self.traj.T_exact

    @property
    def n_slices(self) -> int:
        return self.times.shape[0]

    def nearest_index(self, t: float) -> int:
        i = int(np.searchsorted(self.times, t))
        if i <= 0:
            return 0
        if i >= self.n_slices:
            return self.n_slices - 1
        return i if self.times[i] - t < t - self.times[i - 1] else i - 1

    def metric_at_index(self, i: int) -> MetricProfile:
        return self.traj.profile_at(float(self.times[i]))

    def mass_series(self) -> np.ndarray:
        out = np.empty(self.n_slices)
        cm = self.grid.cell_mass
        for i in range(self.n_slices):
            e2w = self.traj.interp_e2w(float(self.times[i]))
            out[i] = 2.0 * math.pi * float(np.dot(cm * e2w, self.u[i]))
        return out

    def f_at_index(self, i: int, T_ref: float | None = None) -> np.ndarray:
        """Potential f = -ln u - ln(4 pi (T_ref - t)); requires T_ref > t."""
        T_ref = self.T if T_ref is None else T_ref
        tau = T_ref - float(self.times[i])
        if tau <= 0.0:
            raise ValueError(f"T_ref - t = {tau} must be positive")
        return -np.log(self.u[i]) - math.log(FOUR_PI * tau)

    def f_slices(self, T_ref: float | None = None) -> np.ndarray:
        """Potential on every slice with T_ref - t > 0; others are NaN rows."""
        T_ref = self.T if T_ref is None else T_ref
        out = np.full_like(self.u, np.nan)
        for i in range(self.n_slices):
            if T_ref - float(self.times[i]) > 0.0:
                out[i] = self.f_at_index(i, T_ref)
        return out


def f_of(sol: ConjugateSolution, T_ref: float | None = None) -> np.ndarray:
    """Derived potential per stored time (see ConjugateSolution.f_slices)."""
    return sol.f_slices(T_ref)


def delta_terminal(m: MetricProfile, theta_p: float, eps: float) -> np.ndarray:
    """Unit-mass geodesic Gaussian exp(-d(theta, theta_p)^2 / (4 eps)) / Z.

    d is meridian distance in the metric m.  The normalization uses exact
    summation so that mirrored base points give bitwise-mirrored data.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    grid = m.grid
    if theta_p <= 0.0:
        d = distance_from_north(m)
    elif theta_p >= math.pi:
        # summed pole-outward exactly as the north construction, then
        # reflected, so mirrored bases give bitwise-mirrored data
        inc = 0.5 * (np.exp(m.w[1:]) + np.exp(m.w[:-1])) * grid.dtheta
        d = np.zeros(grid.n_nodes)
        np.cumsum(inc[::-1], out=d[1:])
        d = d[::-1].copy()
    else:
        dist_n = distance_from_north(m)
        k = int(round(theta_p / grid.dtheta))
        k = min(max(k, 0), grid.n_nodes - 1)
        d = np.abs(dist_n - dist_n[k])
    # bump must span a few cells or the Gaussian is invisible to the grid
    cell = float(np.exp(m.w).min()) * grid.dtheta
    if math.sqrt(2.0 * eps) < 2.0 * cell:
        raise ResolutionError(
            f"bump width {math.sqrt(2 * eps):.3e} under 2 grid cells ({cell:.3e})"
        )
    u = np.exp(-d * d / (4.0 * eps))
    z = 2.0 * math.pi * math.fsum(
        (grid.cell_mass[k] * m.e2w[k] * u[k] for k in range(grid.n_nodes))
    )
    return u / z


def solve_backward(
    traj: FlowTrajectory,
    t_i: float,
    terminal: np.ndarray,
    step_safety: float = 0.4,
    mass_tol: float = 1e-8,
    theta_base: float | None = None,
    eps: float | None = None,
) -> ConjugateSolution:
    """Integrate the conjugate equation from (t_i, terminal) down to t = 0."""
    grid = traj.grid
    terminal = grid.check_field(terminal)
    if t_i <= 0.0 or t_i > traj.t_last + 1e-12:
        raise TimeRangeError(f"terminal time {t_i} outside stored trajectory")
    if np.any(terminal <= 0.0):
        raise NormalizationError("terminal data must be strictly positive")
    m_i = traj.profile_at(t_i)
    mass = integrate(m_i, terminal)
    if abs(mass - 1.0) > mass_tol:
        raise NormalizationError(f"terminal mass {mass} != 1")

    dtheta2 = grid.dtheta * grid.dtheta
    i0, i1, _ = traj.bracket(t_i)
    u = terminal.copy()
    rec_times = [t_i]
    rec_u = [u.copy()]
    t_hi = t_i
    # first (possibly partial) interval shares the slope of the bracketing pair
    k = i0
    while True:
        t_lo = float(traj.times[k])
        if t_hi - t_lo > 1e-15:
            e_lo = np.exp(2.0 * traj.w[k])
            e_hi_idx = min(k + 1, traj.n_slices - 1)
            e_hi = np.exp(2.0 * traj.w[e_hi_idx])
            t_hi_slice = float(traj.times[e_hi_idx])
            if e_hi_idx == k:  # t_i at the very last slice
                e_hi = e_lo
                t_hi_slice = t_lo + 1.0
            # interpolant on the whole slice interval, marched on [t_lo, t_hi]
            slope_dt = t_hi_slice - t_lo
            e1_eff = e_lo + (e_hi - e_lo) * ((t_hi - t_lo) / slope_dt)
            kernels.conj_chunk(
                u, e_lo, e1_eff, t_lo, t_hi, dtheta2,
                grid.flux_sin, grid.inv_dtheta_mass, step_safety,
            )
            if not np.all(np.isfinite(u)):
                raise IntegratorError(f"conjugate solve unstable at t={t_lo:.6g}")
            if np.any(u <= 0.0):
                raise IntegratorError(
                    f"positivity lost at t={t_lo:.6g}; reduce the step safety"
                )
            rec_times.append(t_lo)
            rec_u.append(u.copy())
        if k == 0:
            break
        t_hi = t_lo
        k -= 1
    times = np.asarray(rec_times[::-1])
    u_all = np.asarray(rec_u[::-1])
    return ConjugateSolution(
        traj=traj, t_terminal=t_i, times=times, u=u_all,
        theta_base=theta_base, eps=eps,
    )


def admissible_candidate(
    traj: FlowTrajectory,
    schedule: list[float],
    theta_p: float,
    eps_divisor: float = 10.0,
    step_safety: float = 0.4,
) -> ConjugateSolution:
    """Diagonal-limit proxy: backward solves from increasing terminal times.

    Returns the solution from the last terminal time with the Cauchy
    increments sup_{[0, t_1]} |u^{(i+1)} - u^{(i)}| attached; increments that
    fail to decrease attach a warning instead of raising.
    """
    if len(schedule) < 3:
        raise ValueError("need at least 3 terminal times")
    schedule = sorted(schedule)
    if schedule[-1] > traj.t_last:
        raise TimeRangeError("schedule exceeds stored trajectory")
    T = traj.T_exact
    sols = []
    for t_i in schedule:
        eps = (T - t_i) / eps_divisor
        term = delta_terminal(traj.profile_at(t_i), theta_p, eps)
        sols.append(
            solve_backward(
                traj, t_i, term, step_safety=step_safety,
                theta_base=theta_p, eps=eps,
            )
        )
    t_win = schedule[0]
    increments = []
    for a, b in zip(sols, sols[1:]):
        na = int(np.searchsorted(a.times, t_win + 1e-15))
        nb = int(np.searchsorted(b.times, t_win + 1e-15))
        nc = min(na, nb)
        increments.append(float(np.abs(b.u[:nc] - a.u[:nc]).max()))
    increments = np.asarray(increments)
    cand = sols[-1]
    cand.increments = increments
    if np.any(np.diff(increments) >= 0.0):
        cand.warnings.append(
            f"candidate increments not strictly decreasing: {increments.tolist()}"
        )
    return cand


@dataclass(frozen=True)
class DualityReport:
    times: np.ndarray
    pairing: np.ndarray
    drift: float


def duality_check(
    traj: FlowTrajectory,
    phi0: np.ndarray,
    sol: ConjugateSolution,
    step_safety: float = 0.4,
) -> DualityReport:
    """Adjointness test: evolve dphi/dt = Lap phi forward and pair against u.

    The pairing integral phi u dV is conserved by the continuum equations;
    the discrete operators conserve it up to time-integrator error.
    """
    grid = traj.grid
    phi = grid.check_field(phi0).copy()
    dtheta2 = grid.dtheta * grid.dtheta
    cm = grid.cell_mass
    pair = np.empty(sol.n_slices)
    e2w0 = traj.interp_e2w(float(sol.times[0]))
    pair[0] = 2.0 * math.pi * float(np.dot(cm * e2w0, phi * sol.u[0]))
    for i in range(1, sol.n_slices):
        t0 = float(sol.times[i - 1])
        t1 = float(sol.times[i])
        e0 = traj.interp_e2w(t0)
        e1 = traj.interp_e2w(t1)
        kernels.heat_chunk(
            phi, e0, e1, t0, t1, dtheta2, grid.flux_sin,
            grid.inv_dtheta_mass, step_safety,
        )
        pair[i] = 2.0 * math.pi * float(np.dot(cm * e1, phi * sol.u[i]))
    drift = float(np.abs(pair - pair[0]).max())
    return DualityReport(times=sol.times.copy(), pairing=pair, drift=drift)


def smooth_test_field(grid, seed: int, n_modes: int = 6) -> np.ndarray:
    """Seeded smooth field sum c_l cos(l theta); pole-regular by construction."""
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal(n_modes + 1) / (1.0 + np.arange(n_modes + 1) ** 2)
    phi = np.zeros(grid.n_nodes)
    for l, c in enumerate(coef):
        phi += c * np.cos(l * grid.theta)
    return phi
