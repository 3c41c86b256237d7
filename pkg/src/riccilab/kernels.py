"""Hot loops for the three RK4 integrators: flow, backward conjugate, forward heat.

All kernels work on raw arrays so they can be jitted; a no-op decorator keeps
them runnable without numba (slow but correct).  Between stored metric slices
the conformal factor E = e^{2w} is interpolated linearly in t and the reaction
coefficient is taken as R_eff = -E'/E, the unique choice that keeps dE/dt =
-R_eff E exact along the interpolant; with the flux-form Laplacian this makes
the conjugate mass and the duality pairing conserved up to RK4 error alone.
"""

from __future__ import annotations

import numpy as np

try:  # pragma: no cover - exercised implicitly
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def deco(f):
            return f

        return deco


@njit(cache=True)
def _lap_round(phi, flux_sin, inv_dm, out):
    n = phi.shape[0]
    left = flux_sin[0] * (phi[1] - phi[0])
    out[0] = left * inv_dm[0]
    for k in range(1, n - 1):
        right = flux_sin[k] * (phi[k + 1] - phi[k])
        out[k] = (right - left) * inv_dm[k]
        left = right
    out[n - 1] = -left * inv_dm[n - 1]


@njit(cache=True)
def _flow_rhs(w, flux_sin, inv_dm, out):
    # dw/dt = -K/2 = -(1 - Lap_round w) e^{-2w} / 2
    _lap_round(w, flux_sin, inv_dm, out)
    n = w.shape[0]
    for k in range(n):
        out[k] = -0.5 * (1.0 - out[k]) * np.exp(-2.0 * w[k])


@njit(cache=True)
def flow_chunk(w, t, t_stop, max_steps, dtheta2, flux_sin, inv_dm, safety):
    """Advance the flow profile in place; returns (t, steps_taken)."""
    n = w.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    steps = 0
    while t < t_stop and steps < max_steps:
        min_e2w = np.exp(2.0 * w[0])
        for k in range(1, n):
            e = np.exp(2.0 * w[k])
            if e < min_e2w:
                min_e2w = e
        dt = safety * min_e2w * dtheta2
        if t + dt >= t_stop:
            dt = t_stop - t
        _flow_rhs(w, flux_sin, inv_dm, k1)
        for k in range(n):
            tmp[k] = w[k] + 0.5 * dt * k1[k]
        _flow_rhs(tmp, flux_sin, inv_dm, k2)
        for k in range(n):
            tmp[k] = w[k] + 0.5 * dt * k2[k]
        _flow_rhs(tmp, flux_sin, inv_dm, k3)
        for k in range(n):
            tmp[k] = w[k] + dt * k3[k]
        _flow_rhs(tmp, flux_sin, inv_dm, k4)
        for k in range(n):
            w[k] += dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k])
        t += dt
        steps += 1
    return t, steps


@njit(cache=True)
def _conj_rhs(u, e0, slope, dt_from_t0, flux_sin, inv_dm, out):
    # du/dt = -Lap_K u + R_eff u with E(t) linear, R_eff = -E'/E
    _lap_round(u, flux_sin, inv_dm, out)
    n = u.shape[0]
    for k in range(n):
        e = e0[k] + slope[k] * dt_from_t0
        out[k] = -0.5 * out[k] / e - slope[k] / e * u[k]


@njit(cache=True)
def conj_chunk(u, e0, e1, t0, t1, dtheta2, flux_sin, inv_dm, safety):
    """March the conjugate density from t1 down to t0 in place (t0 < t1)."""
    n = u.shape[0]
    dt_int = t1 - t0
    slope = np.empty(n)
    for k in range(n):
        slope[k] = (e1[k] - e0[k]) / dt_int
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    t = t1
    while t > t0:
        min_e = e0[0] + slope[0] * (t - t0)
        for k in range(1, n):
            e = e0[k] + slope[k] * (t - t0)
            if e < min_e:
                min_e = e
        h = safety * min_e * dtheta2
        if t - h <= t0:
            h = t - t0
        _conj_rhs(u, e0, slope, t - t0, flux_sin, inv_dm, k1)
        for k in range(n):
            tmp[k] = u[k] - 0.5 * h * k1[k]
        _conj_rhs(tmp, e0, slope, t - 0.5 * h - t0, flux_sin, inv_dm, k2)
        for k in range(n):
            tmp[k] = u[k] - 0.5 * h * k2[k]
        _conj_rhs(tmp, e0, slope, t - 0.5 * h - t0, flux_sin, inv_dm, k3)
        for k in range(n):
            tmp[k] = u[k] - h * k3[k]
        _conj_rhs(tmp, e0, slope, t - h - t0, flux_sin, inv_dm, k4)
        for k in range(n):
            u[k] -= h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k])
        t -= h
    return t


@njit(cache=True)
def _heat_rhs(phi, e0, slope, dt_from_t0, flux_sin, inv_dm, out):
    _lap_round(phi, flux_sin, inv_dm, out)
    n = phi.shape[0]
    for k in range(n):
        e = e0[k] + slope[k] * dt_from_t0
        out[k] = 0.5 * out[k] / e


@njit(cache=True)
def heat_chunk(phi, e0, e1, t0, t1, dtheta2, flux_sin, inv_dm, safety):
    """March the forward heat field from t0 up to t1 in place."""
    n = phi.shape[0]
    dt_int = t1 - t0
    slope = np.empty(n)
    for k in range(n):
        slope[k] = (e1[k] - e0[k]) / dt_int
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    t = t0
    while t < t1:
        min_e = e0[0] + slope[0] * (t - t0)
        for k in range(1, n):
            e = e0[k] + slope[k] * (t - t0)
            if e < min_e:
                min_e = e
        h = safety * min_e * dtheta2
        if t + h >= t1:
            h = t1 - t
        _heat_rhs(phi, e0, slope, t - t0, flux_sin, inv_dm, k1)
        for k in range(n):
            tmp[k] = phi[k] + 0.5 * h * k1[k]
        _heat_rhs(tmp, e0, slope, t + 0.5 * h - t0, flux_sin, inv_dm, k2)
        for k in range(n):
            tmp[k] = phi[k] + 0.5 * h * k2[k]
        _heat_rhs(tmp, e0, slope, t + 0.5 * h - t0, flux_sin, inv_dm, k3)
        for k in range(n):
            tmp[k] = phi[k] + h * k3[k]
        _heat_rhs(tmp, e0, slope, t + h - t0, flux_sin, inv_dm, k4)
        for k in range(n):
            phi[k] += h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k])
        t += h
    return t


@njit(cache=True)
def dp_shortest_path(potential, kinetic_weight, theta_vals, h_sigma, window, source_mask):
    """Layered shortest path for the sigma-form action on a (layer, node) lattice.

    potential[j, k]   : 2 sigma_j^2 R at layer j, node k
    kinetic_weight[j,k]: e^{2w} at layer j, node k
    Edge (j,k) -> (j+1,k2) costs
        h/2 (pot[j,k] + pot[j+1,k2]) + (kin[j,k]+kin[j+1,k2])/2 * (dtheta)^2 / h.
    Sources are layer-0 nodes with source_mask true.  Returns (dist, prev).
    """
    nl, nk = potential.shape
    big = 1e300
    dist = np.full((nl, nk), big)
    prev = np.full((nl, nk), -1, dtype=np.int64)
    for k in range(nk):
        if source_mask[k]:
            dist[0, k] = 0.0
    for j in range(nl - 1):
        for k in range(nk):
            d0 = dist[j, k]
            if d0 >= big:
                continue
            lo = k - window
            if lo < 0:
                lo = 0
            hi = k + window
            if hi > nk - 1:
                hi = nk - 1
            for k2 in range(lo, hi + 1):
                dq = theta_vals[k2] - theta_vals[k]
                cost = 0.5 * h_sigma * (potential[j, k] + potential[j + 1, k2])
                cost += 0.5 * (kinetic_weight[j, k] + kinetic_weight[j + 1, k2]) * dq * dq / h_sigma
                nd = d0 + cost
                if nd < dist[j + 1, k2]:
                    dist[j + 1, k2] = nd
                    prev[j + 1, k2] = k
    return dist, prev
