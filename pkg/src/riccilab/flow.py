"""Shrinking conformal Ricci flow on the 2-sphere and its rescaled views.

The metric e^{2w} g_round evolves by dw/dt = -K/2 (the complex-normalization
flow; equivalently d(e^{2w})/dt = -K e^{2w}).  Gauss-Bonnet then forces the
exact area law Vol(t) = Vol(0) - 4 pi t, so the extinction time is
T = Vol(0)/(4 pi) with no fitting.  From the round sphere the solution stays
spatially constant on the grid and e^{2w} = 1 - t exactly, which downstream
modules use as an analytic oracle.

A trajectory stores profiles every ``record_every`` accepted RK4 steps; the
adaptive step dt = safety * min(e^{2w}) * dtheta^2 shrinks with the metric,
so stored slices become dense in log(T - t) toward extinction.  Consumers
interpolate e^{2w} linearly in t between slices.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .grid import (
    DegenerateMetricError,
    Grid,
    MetricProfile,
    gauss_curvature,
)


class IntegratorError(RuntimeError):
    """Time stepping failed (instability or positivity loss)."""


class TimeRangeError(ValueError):
    """Requested time window leaves the stored trajectory."""


FOUR_PI = 4.0 * math.pi


def extinction_time(m0: MetricProfile) -> float:
    """T = Vol / 4 pi, exact on surfaces by the area law."""
    from .grid import volume

    return volume(m0) / FOUR_PI


@dataclass(frozen=True)
class FlowTrajectory:
    """Recorded flow: strictly increasing times and one w-profile per time."""

    grid: Grid
    times: np.ndarray       # (ns,)
    w: np.ndarray           # (ns, n_nodes)
    T_exact: float
    step_safety: float
    kind: str = "flow"      # "flow" | "normalized" | "blowup"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times.setflags(write=False)
        self.w.setflags(write=False)

    @property
    def n_slices(self) -> int:
        return self.times.shape[0]

    @property
    def t_last(self) -> float:
        return float(self.times[-1])

    # -- lookup -----------------------------------------------------------
    def nearest_index(self, t: float) -> int:
        i = int(np.searchsorted(self.times, t))
        if i <= 0:
            return 0
        if i >= self.n_slices:
            return self.n_slices - 1
        return i if self.times[i] - t < t - self.times[i - 1] else i - 1

    def bracket(self, t: float) -> tuple[int, int, float]:
        """Slice pair around t and the linear weight of the right slice."""
        if t < self.times[0] - 1e-12 or t > self.t_last + 1e-12:
            raise TimeRangeError(
                f"t={t} outside stored range [{self.times[0]}, {self.t_last}]"
            )
        i = int(np.searchsorted(self.times, t))
        if i <= 0:
            return 0, 0, 0.0
        if i >= self.n_slices:
            return self.n_slices - 1, self.n_slices - 1, 0.0
        lam = (t - self.times[i - 1]) / (self.times[i] - self.times[i - 1])
        return i - 1, i, float(lam)

    def interp_e2w(self, t: float) -> np.ndarray:
        i0, i1, lam = self.bracket(t)
        e0 = np.exp(2.0 * self.w[i0])
        if i1 == i0:
            return e0
        return (1.0 - lam) * e0 + lam * np.exp(2.0 * self.w[i1])

    def profile_at(self, t: float) -> MetricProfile:
        return MetricProfile(self.grid, 0.5 * np.log(self.interp_e2w(t)))

    def profile_at_index(self, i: int) -> MetricProfile:
        return MetricProfile(self.grid, self.w[i])

    def curvature_at_index(self, i: int) -> np.ndarray:
        return gauss_curvature(self.profile_at_index(i))

    # -- derived series ---------------------------------------------------
    def volume_series(self) -> np.ndarray:
        e2w = np.exp(2.0 * self.w)
        return 2.0 * math.pi * e2w @ self.grid.cell_mass

    def max_abs_curvature_series(self) -> np.ndarray:
        out = np.empty(self.n_slices)
        for i in range(self.n_slices):
            out[i] = np.abs(self.curvature_at_index(i)).max()
        return out

    @property
    def type1_sup(self) -> float:
        tau = self.T_exact - self.times
        return float((self.max_abs_curvature_series() * tau).max())

    # -- persistence -------------------------------------------------------
    def to_json(self) -> str:
        return json.dumps(
            {
                "step": self.step_safety,
                "T_exact": self.T_exact,
                "times": self.times.tolist(),
                "profiles": self.w.tolist(),
            }
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "FlowTrajectory":
        obj = json.loads(text)
        w = np.asarray(obj["profiles"], dtype=float)
        return cls(
            grid=Grid(w.shape[1] - 2),
            times=np.asarray(obj["times"], dtype=float),
            w=w,
            T_exact=float(obj["T_exact"]),
            step_safety=float(obj["step"]),
        )

    @classmethod
    def load(cls, path) -> "FlowTrajectory":
        with open(path) as fh:
            return cls.from_json(fh.read())


def evolve(
    m0: MetricProfile,
    t_max_fraction: float,
    step_safety: float = 0.4,
    record_every: int = 16,
) -> FlowTrajectory:
    """Integrate the flow from m0 up to t_max_fraction * T.

    Raises IntegratorError naming the failing time if the profile stops being
    finite, and DegenerateMetricError if the metric collapses below the
    representable floor before the requested horizon.
    """
    if not 0.0 < t_max_fraction < 1.0:
        raise ValueError("t_max_fraction must lie in (0, 1)")
    if step_safety <= 0.0:
        raise ValueError("step_safety must be positive")
    grid = m0.grid
    T = extinction_time(m0)
    t_end = t_max_fraction * T
    dtheta2 = grid.dtheta * grid.dtheta

    w = m0.w.copy()
    t = 0.0
    times = [0.0]
    slices = [w.copy()]
    while t < t_end:
        t, steps = kernels.flow_chunk(
            w, t, t_end, record_every, dtheta2, grid.flux_sin,
            grid.inv_dtheta_mass, step_safety,
        )
        if not np.all(np.isfinite(w)):
            raise IntegratorError(f"flow integration unstable at t={t:.6g}")
        e2w_min = float(np.exp(2.0 * w.min()))
        if e2w_min < 1e-12:
            raise DegenerateMetricError(
                f"metric collapsed (min e^2w={e2w_min:.2e}) at t={t:.6g}"
            )
        if steps == 0:  # pragma: no cover - defensive
            raise IntegratorError(f"flow integrator stalled at t={t:.6g}")
        times.append(t)
        slices.append(w.copy())
    return FlowTrajectory(
        grid=grid,
        times=np.asarray(times),
        w=np.asarray(slices),
        T_exact=T,
        step_safety=step_safety,
    )


def normalized_view(traj: FlowTrajectory) -> FlowTrajectory:
    """Volume-normalized view g~ = T g /(T - t) in s-time, s = -T ln(1 - t/T)."""
    T = traj.T_exact
    tau = T - traj.times
    s = -T * np.log1p(-traj.times / T)
    w_norm = traj.w + 0.5 * np.log(T / tau)[:, None]
    return FlowTrajectory(
        grid=traj.grid,
        times=s,
        w=w_norm,
        T_exact=math.inf,
        step_safety=traj.step_safety,
        kind="normalized",
        meta={"source_T": T},
    )


def blowup_sequence(
    traj: FlowTrajectory,
    t_i: float,
    window: tuple[float, float] = (-1.0, 0.5),
) -> FlowTrajectory:
    """Parabolic rescaling g_i(t') = (T - t_i)^{-1} g(t_i + t' (T - t_i)).

    The output trajectory lives on the requested rescaled window and has
    extinction time exactly 1.
    """
    T = traj.T_exact
    if not 0.0 <= t_i < traj.t_last:
        raise TimeRangeError(f"t_i={t_i} not inside stored times")
    tau_i = T - t_i
    lo = t_i + window[0] * tau_i
    hi = t_i + window[1] * tau_i
    lo = max(lo, 0.0)
    if hi > traj.t_last + 1e-12:
        raise TimeRangeError(
            f"rescaled window reaches t={hi:.6g} beyond stored {traj.t_last:.6g}"
        )
    mask = (traj.times >= lo - 1e-15) & (traj.times <= hi + 1e-15)
    if mask.sum() < 2:
        raise TimeRangeError("window contains fewer than two stored slices")
    times_r = (traj.times[mask] - t_i) / tau_i
    w_r = traj.w[mask] - 0.5 * math.log(tau_i)
    return FlowTrajectory(
        grid=traj.grid,
        times=times_r,
        w=w_r,
        T_exact=1.0,
        step_safety=traj.step_safety,
        kind="blowup",
        meta={"t_i": t_i, "source_T": T},
    )


def type1_constant(traj: FlowTrajectory) -> float:
    """sup over stored slices of max |K| (T - t)."""
    return traj.type1_sup


@dataclass(frozen=True)
class MetricComparisonReport:
    t: float
    s: float
    ratio: float            # max_nodes e^{2w(s)}/e^{2w(t)} * (T-s)/(T-t)
    hypothesis_ok: bool     # K (T-t) >= -1 held on all stored slices in [t, s]
    bound_ok: bool


def metric_comparison_check(
    traj: FlowTrajectory, t: float, s: float, tol: float = 1e-9
) -> MetricComparisonReport:
    """Forward metric-comparison bound g(s) <= (T-t)/(T-s) g(t) for t < s.

    Valid when Ric (T-t) >= -g on [t, s]; flows of positive curvature satisfy
    the hypothesis trivially.  If it fails the report flags inapplicability
    instead of asserting the bound.
    """
    if s < t:
        raise ValueError("need t <= s")
    T = traj.T_exact
    e_t = traj.interp_e2w(t)
    e_s = traj.interp_e2w(s)
    ratio = float(np.max(e_s / e_t) * (T - s) / (T - t))
    mask = (traj.times >= t - 1e-15) & (traj.times <= s + 1e-15)
    hyp = True
    for i in np.nonzero(mask)[0]:
        kmin = float(traj.curvature_at_index(int(i)).min())
        if kmin * (T - traj.times[i]) < -1.0 - 1e-9:
            hyp = False
            break
    return MetricComparisonReport(
        t=t, s=s, ratio=ratio, hypothesis_ok=hyp,
        bound_ok=(ratio <= 1.0 + tol) if hyp else True,
    )
