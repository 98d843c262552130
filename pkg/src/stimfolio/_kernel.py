"""Compiled inner loops of the fracture simulator.

Everything here works on plain float arrays so numba can compile it with the
GIL released; the typed wrappers live in ``stimfolio.fracsim``.
"""

import math

import numpy as np
from numba import njit

SQRT_PI = math.sqrt(math.pi)

STATUS_OK = 0
STATUS_PARTITION_FAILED = 1
STATUS_NONFINITE = 2

_MAX_ITER = 200


@njit(cache=True, nogil=True, error_model="numpy")
def _rate(s, d, kappa, c):
    """Flow into one cluster at wellbore offset ``s`` above the lowest entry pressure."""
    delta = s - d
    if delta <= 0.0:
        return 0.0
    if kappa > 0.0:
        # positive root of kappa*q^2 + c*q - delta, written without cancellation
        return 2.0 * delta / (c + math.sqrt(c * c + 4.0 * kappa * delta))
    return delta / c


@njit(cache=True, nogil=True, error_model="numpy")
def partition_flow_kernel(p_entries, kappa, resist, q_total, rates):
    """Split ``q_total`` between clusters so every cluster sees the same wellbore pressure.

    Cluster ``i`` takes ``q`` solving ``p_w - p_entry[i] = kappa*q^2 + resist[i]*q``
    (zero when ``p_w`` is below its entry pressure). Writes ``rates`` in place and
    returns ``(p_w, status)``.
    """
    n = p_entries.shape[0]
    pmin = p_entries[0]
    for i in range(1, n):
        if p_entries[i] < pmin:
            pmin = p_entries[i]

    symmetric = True
    for i in range(1, n):
        if p_entries[i] != p_entries[0] or resist[i] != resist[0]:
            symmetric = False
            break
    if symmetric:
        q = q_total / n
        for i in range(n):
            rates[i] = q
        if kappa == 0.0 and resist[0] == 0.0:
            return pmin, STATUS_OK
        return pmin + (kappa * q * q + resist[0] * q), STATUS_OK

    d = np.empty(n)
    for i in range(n):
        d[i] = p_entries[i] - pmin

    # clusters with no resistance at all cap the wellbore pressure at their entry
    free_cap = math.inf
    if kappa == 0.0:
        for i in range(n):
            if resist[i] == 0.0 and d[i] < free_cap:
                free_cap = d[i]

    if free_cap < math.inf:
        resistive = 0.0
        for i in range(n):
            if resist[i] > 0.0:
                resistive += _rate(free_cap, d[i], kappa, resist[i])
        if resistive <= q_total:
            n_free = 0
            for i in range(n):
                if resist[i] == 0.0 and d[i] == free_cap:
                    n_free += 1
            share = (q_total - resistive) / n_free
            for i in range(n):
                if resist[i] == 0.0:
                    rates[i] = share if d[i] == free_cap else 0.0
                else:
                    rates[i] = _rate(free_cap, d[i], kappa, resist[i])
            return pmin + free_cap, STATUS_OK
        hi = free_cap
    else:
        dmax = 0.0
        cmax = 0.0
        for i in range(n):
            if d[i] > dmax:
                dmax = d[i]
            if resist[i] > cmax:
                cmax = resist[i]
        hi = dmax + kappa * q_total * q_total + cmax * q_total

    lo = 0.0
    s = hi
    tol = 1e-13 * q_total
    status = STATUS_PARTITION_FAILED
    for _ in range(_MAX_ITER):
        g = -q_total
        dg = 0.0
        for i in range(n):
            if resist[i] == 0.0 and kappa == 0.0:
                continue
            q = _rate(s, d[i], kappa, resist[i])
            g += q
            if q > 0.0:
                dg += 1.0 / (2.0 * kappa * q + resist[i])
        if abs(g) <= tol:
            status = STATUS_OK
            break
        if g > 0.0:
            hi = s
        else:
            lo = s
        if hi - lo <= 4.0 * np.finfo(np.float64).eps * max(hi, 1.0):
            status = STATUS_OK
            break
        step_ok = False
        if dg > 0.0:
            s_new = s - g / dg
            if lo < s_new < hi:
                step_ok = True
        if not step_ok:
            s_new = 0.5 * (lo + hi)
        s = s_new

    total = 0.0
    for i in range(n):
        if resist[i] == 0.0 and kappa == 0.0:
            rates[i] = 0.0
        else:
            rates[i] = _rate(s, d[i], kappa, resist[i])
        total += rates[i]
    if abs(total - q_total) > 1e-10 * q_total:
        status = STATUS_PARTITION_FAILED
    return pmin + s, status


@njit(cache=True, nogil=True, error_model="numpy")
def equilibrium_radius_kernel(volume, toughness, eprime):
    if volume <= 0.0:
        return 0.0
    return (3.0 * eprime * volume / (8.0 * SQRT_PI * toughness)) ** 0.4


@njit(cache=True, nogil=True, error_model="numpy")
def interaction_kernel(p_net, radius, distances, i):
    """Stress added on cluster ``i`` by the pressurised neighbours."""
    total = 0.0
    for j in range(p_net.shape[0]):
        if j == i or radius[j] <= 0.0:
            continue
        ratio = distances[i, j] / radius[j]
        total += p_net[j] * (1.0 + ratio * ratio) ** -1.5
    return total


@njit(cache=True, nogil=True, error_model="numpy")
def simulate_kernel(
    stress, eprime, toughness, leakoff, positions,
    viscosity, q_total, kappa, r_well, min_aperture,
    dt, n_steps, trace,
):
    """Explicit time stepping of simultaneously growing penny-shaped clusters.

    Returns per-cluster ``(radius, volume, p_net, q_last, e_in, e_frac)``, the
    scalars ``(leaked, p_w_last, status)`` and the trace arrays (empty unless
    ``trace``).
    """
    n = stress.shape[0]
    distances = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            distances[i, j] = abs(positions[i] - positions[j])

    radius = np.zeros(n)
    volume = np.zeros(n)
    p_net = np.zeros(n)
    rates = np.zeros(n)
    e_in = np.zeros(n)
    t_expose = np.full(n, -1.0)
    p_entry = np.empty(n)
    resist = np.empty(n)
    leaked = 0.0
    p_w = 0.0
    status = STATUS_OK

    n_trace = n_steps + 1 if trace else 0
    tr_t = np.zeros(n_trace)
    tr_pw = np.zeros(n_trace)
    tr_r = np.zeros((n_trace, n))
    tr_q = np.zeros((n_trace, n))

    visc_coeff = 6.0 * viscosity / math.pi
    for step in range(n_steps):
        t = step * dt
        for i in range(n):
            p_entry[i] = stress[i] + interaction_kernel(p_net, radius, distances, i) + p_net[i]
            if radius[i] > r_well:
                area = math.pi * radius[i] * radius[i]
                width = max(volume[i] / area, min_aperture)
                resist[i] = visc_coeff * math.log(radius[i] / r_well) / (width * width * width)
            else:
                resist[i] = 0.0

        p_w, status = partition_flow_kernel(p_entry, kappa, resist, q_total, rates)
        if status != STATUS_OK:
            break

        for i in range(n):
            inflow = rates[i] * dt
            if t_expose[i] < 0.0 and inflow > 0.0:
                t_expose[i] = t
            loss = 0.0
            if radius[i] > 0.0:
                exposure = max(t - t_expose[i], dt)
                loss = 2.0 * leakoff[i] * math.pi * radius[i] * radius[i] / math.sqrt(exposure) * dt
                loss = min(loss, volume[i] + inflow)
            volume[i] = volume[i] + inflow - loss
            leaked += loss
            e_in[i] += p_w * rates[i] * dt

            r_eq = equilibrium_radius_kernel(volume[i], toughness[i], eprime[i])
            if r_eq > radius[i]:
                radius[i] = r_eq
            if radius[i] > 0.0:
                p_net[i] = 3.0 * eprime[i] * volume[i] / (16.0 * radius[i] ** 3)
            else:
                p_net[i] = 0.0
            if not (math.isfinite(volume[i]) and math.isfinite(radius[i])) or volume[i] < 0.0:
                status = STATUS_NONFINITE

        if trace:
            # row k holds the state after k steps and the rates used during step k
            tr_t[step + 1] = (step + 1) * dt
            tr_pw[step + 1] = p_w
            for i in range(n):
                tr_r[step + 1, i] = radius[i]
                tr_q[step + 1, i] = rates[i]
        if status != STATUS_OK:
            break

    e_frac = np.empty(n)
    for i in range(n):
        e_frac[i] = toughness[i] * toughness[i] / eprime[i] * math.pi * radius[i] * radius[i]
    return radius, volume, p_net, rates, e_in, e_frac, leaked, p_w, status, tr_t, tr_pw, tr_r, tr_q
