"""Conformal-gauge geometry for rotationally symmetric metrics on the 2-sphere.

A metric is stored as exp(2 w(theta)) * g_round, with w sampled on a uniform
colatitude grid theta in [0, pi] (both poles are nodes).  Scalar fields are
plain float arrays on the same nodes.  All pointwise operators use complex
(Kahler) normalization on the surface:

    R       = K                      (Gauss curvature of the metric)
    Lap     = 1/2 * Lap_Riemannian   = 1/2 e^{-2w} Lap_round
    |grad|^2 = 1/2 e^{-2w} (phi')^2

so that on the round sphere shrinking under dw/dt = -K/2 the density
u = (4 pi (T-t))^{-1} solves the conjugate heat equation exactly.

The discrete round Laplacian is written in flux form with cell masses that
integrate sin(theta) exactly over each cell.  Two consequences are load
bearing for the verification gates downstream:

  * sum_k m_k (Lap_round phi)_k = 0 for every field (fluxes telescope), so
    the discrete Gauss-Bonnet identity  integral K dV = 4 pi  holds to
    rounding, and the flow's area law is exact up to time-integrator error;
  * the operator is self-adjoint in the m-weighted inner product, which
    makes the conjugate-solver mass budget and the forward/backward duality
    pairing exact in the same sense.

Grid coefficient arrays are built mirror-symmetrically (theta -> pi - theta
maps coefficients onto themselves bit-exactly), so reflected inputs evolve
to reflected outputs with no symmetry drift.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

# Metric profiles with e^{2w} below this at any node are rejected as collapsed.
E2W_FLOOR = 1e-12


class GeometryError(ValueError):
    """Base class for geometry-level failures."""


class DegenerateMetricError(GeometryError):
    """Metric collapse: e^{2w} fell below the representable floor."""


class DegenerateGridError(GeometryError):
    """Grid too coarse for the pole-regular stencils."""


class GridMismatchError(GeometryError):
    """Field and metric live on different grids."""


def _mirror_fill(a: np.ndarray) -> np.ndarray:
    """Force exact reflection symmetry a[i] == a[n-1-i] by copying the lower half."""
    n = a.shape[0]
    for i in range(n // 2):
        a[n - 1 - i] = a[i]
    return a


@dataclass(frozen=True)
class Grid:
    """Uniform colatitude grid on [0, pi] with ``n_interior`` interior nodes."""

    n_interior: int

    def __post_init__(self):
        if self.n_interior < 4:
            raise DegenerateGridError(
                f"need at least 4 interior nodes, got {self.n_interior}"
            )

    @property
    def n_nodes(self) -> int:
        return self.n_interior + 2

    @cached_property
    def dtheta(self) -> float:
        return math.pi / (self.n_nodes - 1)

    @cached_property
    def theta(self) -> np.ndarray:
        n = self.n_nodes
        th = np.empty(n)
        for k in range(n // 2 + 1):
            th[k] = k * self.dtheta
        for k in range(n // 2):
            th[n - 1 - k] = math.pi - th[k]
        th.setflags(write=False)
        return th

    @cached_property
    def cell_mass(self) -> np.ndarray:
        """Exact integral of sin(theta) over each node's cell; sums to 2."""
        n = self.n_nodes
        h = self.dtheta
        m = np.empty(n)
        half = 2.0 * math.sin(h / 4.0) ** 2  # 1 - cos(h/2), stable form
        m[0] = m[n - 1] = half
        sin_th = np.sin(self.theta[1 : n - 1])
        m[1 : n - 1] = 2.0 * math.sin(h / 2.0) * sin_th
        _mirror_fill(m)
        m.setflags(write=False)
        return m

    @cached_property
    def flux_sin(self) -> np.ndarray:
        """sin(theta) at the half-integer flux points, mirror-exact."""
        n = self.n_nodes
        s = np.empty(n - 1)
        for j in range((n - 1) // 2 + 1):
            s[j] = math.sin(self.theta[j] + 0.5 * self.dtheta)
        for j in range((n - 1) // 2):
            s[n - 2 - j] = s[j]
        s.setflags(write=False)
        return s

    @cached_property
    def inv_dtheta_mass(self) -> np.ndarray:
        """1 / (dtheta * m_k), the flux-divergence weights."""
        w = 1.0 / (self.dtheta * self.cell_mass)
        w.setflags(write=False)
        return w

    def check_field(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_nodes,):
            raise GridMismatchError(
                f"field of shape {values.shape} on grid with {self.n_nodes} nodes"
            )
        return values


class MetricProfile:
    """Immutable rotationally symmetric metric e^{2w} g_round on a Grid."""

    __slots__ = ("grid", "w", "e2w")

    def __init__(self, grid: Grid, w: np.ndarray):
        w = grid.check_field(w)
        if not np.all(np.isfinite(w)):
            raise DegenerateMetricError("non-finite conformal exponent")
        e2w = np.exp(2.0 * w)
        if np.any(e2w < E2W_FLOOR):
            raise DegenerateMetricError(
                f"metric collapse: min e^(2w) = {e2w.min():.3e} < {E2W_FLOOR:.0e}"
            )
        w = w.copy()
        w.setflags(write=False)
        e2w.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "e2w", e2w)

    def __setattr__(self, *a):  # pragma: no cover - immutability guard
        raise AttributeError("MetricProfile is immutable")

    @classmethod
    def round_sphere(cls, grid: Grid, radius_sq: float = 1.0) -> "MetricProfile":
        if radius_sq <= 0:
            raise DegenerateMetricError("radius_sq must be positive")
        return cls(grid, np.full(grid.n_nodes, 0.5 * math.log(radius_sq)))

    @classmethod
    def conformal_cos(cls, grid: Grid, amplitude: float) -> "MetricProfile":
        """The w = a*cos(theta) family; a=0.2 is the standard perturbed seed."""
        return cls(grid, amplitude * np.cos(grid.theta))

    def to_json(self) -> str:
        return json.dumps({"n_nodes": self.grid.n_nodes, "w": self.w.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "MetricProfile":
        obj = json.loads(text)
        grid = Grid(int(obj["n_nodes"]) - 2)
        return cls(grid, np.asarray(obj["w"], dtype=float))


# ---------------------------------------------------------------------------
# pointwise operators
# ---------------------------------------------------------------------------

def round_laplacian(grid: Grid, phi: np.ndarray) -> np.ndarray:
    """Flux-form Laplace-Beltrami of the unit round sphere, phi'' + cot(theta) phi'.

    Pole rows use the single inward flux; combined with the exact cell
    masses this is second-order accurate including at the poles (the pole
    value converges to 2 phi''(0)).
    """
    phi = grid.check_field(phi)
    s = grid.flux_sin
    flux = s * np.diff(phi)
    out = np.empty_like(phi)
    out[0] = flux[0]
    out[1:-1] = flux[1:] - flux[:-1]
    out[-1] = -flux[-1]
    out *= grid.inv_dtheta_mass
    return out


def gauss_curvature(m: MetricProfile) -> np.ndarray:
    """Gauss curvature K = e^{-2w} (1 - Lap_round w); equals R in this gauge."""
    return (1.0 - round_laplacian(m.grid, m.w)) / m.e2w


def laplacian(m: MetricProfile, phi: np.ndarray) -> np.ndarray:
    """Kahler-normalized Laplacian, half the Riemannian one."""
    return 0.5 * round_laplacian(m.grid, phi) / m.e2w


def grad_theta(grid: Grid, phi: np.ndarray) -> np.ndarray:
    """Centered d/dtheta; zero at the poles (regular fields have phi'=0 there)."""
    phi = grid.check_field(phi)
    out = np.zeros_like(phi)
    out[1:-1] = (phi[2:] - phi[:-2]) / (2.0 * grid.dtheta)
    return out


def grad_norm_sq(m: MetricProfile, phi: np.ndarray) -> np.ndarray:
    """|grad phi|^2 in the Kahler convention: 1/2 e^{-2w} (phi')^2."""
    d = grad_theta(m.grid, phi)
    return 0.5 * d * d / m.e2w


def integrate(m: MetricProfile, values: np.ndarray) -> float:
    """integral of a scalar field against dV = e^{2w} dV_round."""
    values = m.grid.check_field(values)
    return 2.0 * math.pi * float(np.dot(m.grid.cell_mass * m.e2w, values))


def volume(m: MetricProfile) -> float:
    """Total area 2 pi * integral e^{2w} sin(theta) dtheta; 4 pi on the unit sphere."""
    return 2.0 * math.pi * float(np.dot(m.grid.cell_mass, m.e2w))


def total_curvature(m: MetricProfile) -> float:
    """integral K dV; equals 4 pi to rounding for every valid profile."""
    return integrate(m, gauss_curvature(m))


def _ew_midpoints(m: MetricProfile) -> np.ndarray:
    return 0.5 * (np.exp(m.w[1:]) + np.exp(m.w[:-1]))


def distance_from_north(m: MetricProfile) -> np.ndarray:
    """Cumulative meridian arclength from theta = 0 to every node (trapezoid)."""
    d = np.zeros(m.grid.n_nodes)
    np.cumsum(_ew_midpoints(m) * m.grid.dtheta, out=d[1:])
    return d


def meridian_distance(m: MetricProfile, theta1: float, theta2: float) -> float:
    """Arclength of the meridian segment [theta1, theta2] in the metric.

    By rotational symmetry this is the geodesic distance between points at
    the two colatitudes on a common meridian.  Partial end cells are handled
    by linear interpolation of e^w, which keeps the value exactly additive
    over concatenated segments.
    """
    if theta2 < theta1:
        raise ValueError("need theta1 <= theta2")
    cum = distance_from_north(m)
    return float(_interp_cumdist(m, cum, theta2) - _interp_cumdist(m, cum, theta1))


def _interp_cumdist(m: MetricProfile, cum: np.ndarray, theta: float) -> float:
    if theta < 0.0 or theta > math.pi + 1e-12:
        raise ValueError(f"colatitude {theta} outside [0, pi]")
    h = m.grid.dtheta
    x = min(theta / h, float(m.grid.n_nodes - 1))
    k = min(int(x), m.grid.n_nodes - 2)
    frac = x - k
    ew0 = math.exp(m.w[k])
    ews = (math.exp(m.w[k + 1]) - ew0) / h
    # integral of the linear interpolant of e^w over the partial cell
    part = frac * h * (ew0 + 0.5 * ews * frac * h)
    return float(cum[k]) + part
