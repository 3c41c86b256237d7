"""Pointwise entropy density, entropy monotonicity, Harnack checks, and the
two-solution uniqueness experiment.

Normalization audit (frozen here, validated by the round-sphere oracle):
with tau = T_ref - t and all operators in the Kahler convention,

    v  = [ tau (2 Lap f - |grad f|^2 + R) + f - 1 ] u,          W = integral v dV
    dW/dt = integral [ tau (R + Lap f - 1/tau)^2
                       + tau e^{-4w} A(f)^2 ] u dV  >= 0,
    A(f) = 1/2 (f'' - cot(theta) f') - w' f'   (trace-free Hessian scalar).

On the round shrinking solution with the constant conjugate density these
give v == 0, W == 0 and dW/dt == 0 simultaneously; the additive constant in
v is the unique one with that property (the familiar normalization with
constant 2 shifts v by -u and makes the round value -1, not 0).  The same
shift moves the sharp pointwise bound for point-mass solutions: v <= 0 holds
up to a terminal transient of size (1 - ln 2) u that dies out with the
backward time, so nonpositivity checks are windowed away from the terminal
layer.

The trace part of the production density is the squared (1,1) soliton
residual; the A^2 part is the trace-free Hessian energy that appears
separately in the complex splitting.  Their time integrals over a rescaled
window are reported as the blow-up soliton residuals r1, r2, and by
construction r1 + r2 equals the entropy increment over the window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conjheat import ConjugateSolution
from .flow import FlowTrajectory
from .grid import (
    MetricProfile,
    gauss_curvature,
    grad_norm_sq,
    grad_theta,
    integrate,
    laplacian,
)

FOUR_PI = 4.0 * math.pi


def _second_theta(grid, phi: np.ndarray) -> np.ndarray:
    out = np.zeros_like(phi)
    h2 = grid.dtheta * grid.dtheta
    out[1:-1] = (phi[2:] - 2.0 * phi[1:-1] + phi[:-2]) / h2
    return out


def tracefree_hessian_scalar(m: MetricProfile, phi: np.ndarray) -> np.ndarray:
    """A = 1/2 (phi'' - cot(theta) phi') - w' phi'; zero at the poles.

    |trace-free Hessian|^2 (Riemannian norm) = 2 e^{-4w} A^2 for meridian
    fields; the pole limit of A vanishes quadratically for regular fields.
    """
    grid = m.grid
    d1 = grad_theta(grid, phi)
    d2 = _second_theta(grid, phi)
    wp = grad_theta(grid, m.w)
    out = np.zeros_like(phi)
    cot = np.cos(grid.theta[1:-1]) / np.sin(grid.theta[1:-1])
    out[1:-1] = 0.5 * (d2[1:-1] - cot * d1[1:-1]) - wp[1:-1] * d1[1:-1]
    return out


def v_field(
    sol: ConjugateSolution, t: float, T_ref: float | None = None
) -> np.ndarray:
    """Pointwise entropy density at the stored time nearest t."""
    i = sol.nearest_index(t)
    return _v_at_index(sol, i, T_ref)


def _v_at_index(sol, i: int, T_ref: float | None = None) -> np.ndarray:
    T_ref = sol.T if T_ref is None else T_ref
    t = float(sol.times[i])
    tau = T_ref - t
    m = sol.metric_at_index(i)
    u = sol.u[i]
    f = sol.f_at_index(i, T_ref)
    lap_f = laplacian(m, f)
    grad_f = grad_norm_sq(m, f)
    R = gauss_curvature(m)
    return (tau * (2.0 * lap_f - grad_f + R) + f - 1.0) * u


def entropy_W(sol: ConjugateSolution, t: float, T_ref: float | None = None) -> float:
    i = sol.nearest_index(t)
    return _entropy_at_index(sol, i, T_ref)


def _entropy_at_index(sol, i: int, T_ref=None) -> float:
    m = sol.metric_at_index(i)
    return integrate(m, _v_at_index(sol, i, T_ref))


def _production_at_index(sol, i: int, T_ref=None) -> tuple[float, float]:
    """(trace, trace-free) entropy production densities integrated in space."""
    T_ref = sol.T if T_ref is None else T_ref
    t = float(sol.times[i])
    tau = T_ref - t
    m = sol.metric_at_index(i)
    u = sol.u[i]
    f = sol.f_at_index(i, T_ref)
    R = gauss_curvature(m)
    lap_f = laplacian(m, f)
    rho1 = R + lap_f - 1.0 / tau
    a = tracefree_hessian_scalar(m, f)
    e2w = m.e2w
    trace = integrate(m, tau * rho1 * rho1 * u)
    hess = integrate(m, tau * (a * a) / (e2w * e2w) * u)
    return trace, hess


def w_derivative(
    sol: ConjugateSolution, t: float, T_ref: float | None = None
) -> tuple[float, float]:
    """(formula, finite difference) values of dW/dt at the slice nearest t."""
    i = sol.nearest_index(t)
    i = min(max(i, 1), sol.n_slices - 2)
    tr, he = _production_at_index(sol, i, T_ref)
    w_prev = _entropy_at_index(sol, i - 1, T_ref)
    w_next = _entropy_at_index(sol, i + 1, T_ref)
    fd = (w_next - w_prev) / (float(sol.times[i + 1]) - float(sol.times[i - 1]))
    return tr + he, fd


def harnack_ratio(sol: ConjugateSolution, t: float) -> float:
    i = sol.nearest_index(t)
    u = sol.u[i]
    return float(u.max() / u.min())


# ---------------------------------------------------------------------------
# per-run entropy report
# ---------------------------------------------------------------------------

@dataclass
class EntropyReport:
    """Per stored time: entropy, density extrema, productions, ratio."""

    times: np.ndarray
    W: np.ndarray
    v_max: np.ndarray
    u_max: np.ndarray
    u_min: np.ndarray
    ratio: np.ndarray
    dWdt_formula: np.ndarray
    dWdt_fd: np.ndarray
    prod_trace: np.ndarray   # r1 density (time-local)
    prod_hess: np.ndarray    # r2 density (time-local)
    T_ref: float

    def to_csv(self, path, config_hash: str = "") -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write(f"# config_hash={config_hash}\n")
            fh.write("t,W,dWdt_formula,dWdt_fd,v_max,M,m,ratio,r1,r2\n")
            for i in range(self.times.shape[0]):
                row = (
                    self.times[i], self.W[i], self.dWdt_formula[i],
                    self.dWdt_fd[i], self.v_max[i], self.u_max[i],
                    self.u_min[i], self.ratio[i], self.prod_trace[i],
                    self.prod_hess[i],
                )
                fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


def entropy_report(
    sol: ConjugateSolution,
    T_ref: float | None = None,
    stride: int = 1,
) -> EntropyReport:
    T_ref = sol.T if T_ref is None else T_ref
    idx = [i for i in range(0, sol.n_slices, stride) if T_ref > float(sol.times[i])]
    ns = len(idx)
    times = np.array([float(sol.times[i]) for i in idx])
    W = np.empty(ns)
    v_max = np.empty(ns)
    u_max = np.empty(ns)
    u_min = np.empty(ns)
    tr = np.empty(ns)
    he = np.empty(ns)
    for j, i in enumerate(idx):
        m = sol.metric_at_index(i)
        v = _v_at_index(sol, i, T_ref)
        W[j] = integrate(m, v)
        v_max[j] = float(v.max())
        u_max[j] = float(sol.u[i].max())
        u_min[j] = float(sol.u[i].min())
        tr[j], he[j] = _production_at_index(sol, i, T_ref)
    formula = tr + he
    fd = np.full(ns, np.nan)
    if ns >= 3:
        fd[1:-1] = (W[2:] - W[:-2]) / (times[2:] - times[:-2])
    return EntropyReport(
        times=times, W=W, v_max=v_max, u_max=u_max, u_min=u_min,
        ratio=u_max / u_min, dWdt_formula=formula, dWdt_fd=fd,
        prod_trace=tr, prod_hess=he, T_ref=T_ref,
    )


# ---------------------------------------------------------------------------
# differential Harnack residual along meridian curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeridianCurve:
    """Piecewise-linear colatitude path sampled at stored solution times."""

    times: np.ndarray
    thetas: np.ndarray

    def __post_init__(self):
        if self.times.shape != self.thetas.shape:
            raise ValueError("times and thetas must match")


def _interp_theta(grid, values: np.ndarray, theta: float) -> float:
    x = theta / grid.dtheta
    k = min(int(x), grid.n_nodes - 2)
    lam = x - k
    return float((1.0 - lam) * values[k] + lam * values[k + 1])


def admissibility_residual(
    sol: ConjugateSolution,
    curve: MeridianCurve,
    T_ref: float | None = None,
) -> float:
    """min over interior curve samples of
        1/2 (R + |gamma'|^2) - f / (2 (T_ref - t)) + d/dt f(gamma(t), t)
    with |gamma'|^2 in the Kahler convention.  Nonnegative residuals certify
    the differential Harnack inequality along the curve.
    """
    T_ref = sol.T if T_ref is None else T_ref
    grid = sol.grid
    ts = curve.times
    ths = curve.thetas
    n = ts.shape[0]
    if n < 3:
        raise ValueError("curve needs at least 3 samples")
    idx = [sol.nearest_index(float(t)) for t in ts]
    best = math.inf
    # cache fields per needed slice
    cache: dict[int, tuple] = {}

    def fields(i):
        if i not in cache:
            m = sol.metric_at_index(i)
            f = sol.f_at_index(i, T_ref)
            cache[i] = (m, f, gauss_curvature(m), grad_theta(grid, f))
        return cache[i]

    for j in range(1, n - 1):
        i = idx[j]
        t = float(sol.times[i])
        m, f, R, fp = fields(i)
        th = float(ths[j])
        dt_c = float(sol.times[idx[j + 1]]) - float(sol.times[idx[j - 1]])
        if dt_c <= 0:
            continue
        # df/dt along the curve: time part at fixed theta plus transport
        i_p, i_n = idx[j - 1], idx[j + 1]
        f_prev = sol.f_at_index(i_p, T_ref)
        f_next = sol.f_at_index(i_n, T_ref)
        dfdt_fixed = (
            _interp_theta(grid, f_next, th) - _interp_theta(grid, f_prev, th)
        ) / dt_c
        theta_dot = (float(ths[j + 1]) - float(ths[j - 1])) / dt_c
        dfdt = dfdt_fixed + _interp_theta(grid, fp, th) * theta_dot
        e2w = _interp_theta(grid, m.e2w, th)
        speed_sq_k = 0.5 * e2w * theta_dot * theta_dot
        r_val = _interp_theta(grid, R, th)
        f_val = _interp_theta(grid, f, th)
        res = 0.5 * (r_val + speed_sq_k) - f_val / (2.0 * (T_ref - t)) + dfdt
        if res < best:
            best = res
    return float(best)


def default_curve_family(
    sol: ConjugateSolution,
    t_window: tuple[float, float],
    n_speeds: int = 50,
    n_samples: int = 160,
) -> list[MeridianCurve]:
    """50 speeds x 2 directions of pole-clamped piecewise-linear sweeps."""
    t_a, t_b = t_window
    mask = (sol.times >= t_a) & (sol.times <= t_b)
    ts_all = sol.times[mask]
    stride = max(1, ts_all.shape[0] // n_samples)
    ts = ts_all[::stride]
    span = float(ts[-1] - ts[0])
    family = []
    for m in range(1, n_speeds + 1):
        speed = m * math.pi / (n_speeds * span)
        up = np.minimum(math.pi, speed * (ts - ts[0]))
        down = np.maximum(0.0, math.pi - speed * (ts - ts[0]))
        family.append(MeridianCurve(times=ts.copy(), thetas=up))
        family.append(MeridianCurve(times=ts.copy(), thetas=down))
    return family


# ---------------------------------------------------------------------------
# min-max chain, soliton residuals, uniqueness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MinMaxChainReport:
    t1: float
    t2: float
    lhs: float          # max f(., t1)
    rhs: float          # min f(., t2)/sqrt(2) + C
    C: float
    slack: float


def f_min_max_chain(
    sol: ConjugateSolution,
    t2: float,
    T_ref: float | None = None,
) -> MinMaxChainReport:
    """Integrated Harnack chain with the balanced split t2 - t1 = T - t2.

    The constant C is the curve integral (1/sqrt(T-t1)) * 1/2 *
    integral sqrt(T-t) (R + 2 |gamma'|^2_Riem) dt along the constant-speed
    meridian path from the maximizer at t1 to the minimizer at t2; the factor
    2 on the Riemannian speed is the audited weight under which integrating
    the differential Harnack inequality is valid in this normalization.
    """
    T_ref = sol.T if T_ref is None else T_ref
    T = T_ref
    t1 = 2.0 * t2 - T
    if t1 < float(sol.times[0]) - 1e-12:
        raise ValueError("need t2 > (T + t0)/2 for the balanced split")
    i1 = sol.nearest_index(t1)
    i2 = sol.nearest_index(t2)
    t1 = float(sol.times[i1])
    t2 = float(sol.times[i2])
    grid = sol.grid
    f1 = sol.f_at_index(i1, T_ref)
    f2 = sol.f_at_index(i2, T_ref)
    th1 = float(grid.theta[int(np.argmax(f1))])
    th2 = float(grid.theta[int(np.argmin(f2))])
    idxs = list(range(i1, i2 + 1))
    ts = np.array([float(sol.times[i]) for i in idxs])
    span = ts[-1] - ts[0]
    theta_dot = (th2 - th1) / span
    vals = np.empty(ts.shape[0])
    for j, i in enumerate(idxs):
        m = sol.metric_at_index(i)
        th = th1 + theta_dot * (ts[j] - ts[0])
        R = _interp_theta(grid, gauss_curvature(m), th)
        e2w = _interp_theta(grid, m.e2w, th)
        vals[j] = math.sqrt(T - ts[j]) * (R + 2.0 * e2w * theta_dot * theta_dot)
    C = 0.5 * float(np.trapz(vals, ts)) / math.sqrt(T - t1)
    lhs = float(f1.max())
    rhs = float(f2.min()) / math.sqrt(2.0) + C
    return MinMaxChainReport(t1=t1, t2=t2, lhs=lhs, rhs=rhs, C=C, slack=rhs - lhs)


def soliton_residual(
    sol: ConjugateSolution,
    t_i: float,
    window: tuple[float, float] = (0.0, 0.5),
) -> tuple[float, float]:
    """Blow-up soliton residuals on the rescaled window around t_i.

    r1 integrates the squared (1,1) residual, r2 the trace-free Hessian
    energy, both with the entropy-production weights; r1 + r2 equals the
    entropy increment over the window, so both vanish on the round solution
    and decay as t_i approaches the extinction time.
    """
    T = sol.T
    tau_i = T - t_i
    lo = t_i + window[0] * tau_i
    hi = t_i + window[1] * tau_i
    if hi > float(sol.times[-1]) + 1e-12:
        raise ValueError("window exceeds the stored solution")
    mask = (sol.times >= lo - 1e-15) & (sol.times <= hi + 1e-15)
    idx = np.nonzero(mask)[0]
    if idx.shape[0] < 2:
        raise ValueError("window contains fewer than two stored slices")
    ts = np.array([float(sol.times[i]) for i in idx])
    tr = np.empty(ts.shape[0])
    he = np.empty(ts.shape[0])
    for j, i in enumerate(idx):
        tr[j], he[j] = _production_at_index(sol, int(i))
    return float(np.trapz(tr, ts)), float(np.trapz(he, ts))


@dataclass(frozen=True)
class UniquenessReport:
    times: np.ndarray
    rho_max: np.ndarray
    monotone_ok: bool
    worst_drop: float

    def rho_at(self, t: float) -> float:
        i = int(np.argmin(np.abs(self.times - t)))
        return float(self.rho_max[i])


def uniqueness_experiment(
    sol_a: ConjugateSolution,
    sol_b: ConjugateSolution,
    tol: float = 1e-6,
) -> UniquenessReport:
    """Track rho_max(t) = max_theta u_a/u_b; the backward-heat maximum
    principle makes it nondecreasing in t, and it approaches 1 at fixed t as
    the common terminal time moves toward extinction."""
    if sol_a.n_slices != sol_b.n_slices or not np.array_equal(
        sol_a.times, sol_b.times
    ):
        raise ValueError("candidates must share stored times")
    rho = np.empty(sol_a.n_slices)
    for i in range(sol_a.n_slices):
        rho[i] = float(np.max(sol_a.u[i] / sol_b.u[i]))
    drops = np.diff(rho)
    worst = float(drops.min()) if drops.size else 0.0
    return UniquenessReport(
        times=sol_a.times.copy(),
        rho_max=rho,
        monotone_ok=bool(worst >= -tol),
        worst_drop=worst,
    )
