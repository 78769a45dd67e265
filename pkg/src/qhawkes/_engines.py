"""Compiled event-loop kernels.

Every function here is resumable: it consumes pre-drawn uniforms from a buffer
and returns a status code when the buffer or the output arrays run out, so the
Python driver can refill and call again.  Status codes:

    0  horizon reached
    1  uniform buffer exhausted
    2  output arrays full
    3  event cap exceeded
    4  intensity exceeded its declared bound (should be impossible; a bug trap)

Thinning is valid here because every intensity component decays monotonically
between events: exponential and power-law excitation terms are decreasing, and
the signed memory Z(t) = A*exp(-omega*(t-t0)) shrinks in magnitude, so Z^2
decreases as well.  The intensity evaluated just after the latest event
therefore dominates until the next one.
"""

from __future__ import annotations

import math

import numba
import numpy as np

DIAG_ZERO = 0
DIAG_EXP = 1
DIAG_POWERLAW = 2

STATUS_DONE = 0
STATUS_NEED_UNIFORMS = 1
STATUS_OUT_FULL = 2
STATUS_CAP = 3
STATUS_BOUND_VIOLATED = 4

# Relative slack when asserting lambda(t) <= bound; covers float round-off only.
_BOUND_SLACK = 1e-9


@numba.njit(cache=True, nogil=True)
def _history_intensity(t_prop, times, signs, n, lam_inf, diag_kind, d0, d1, d2,
                       k0, omega, win_phi, win_k):
    """Intensity at t_prop from raw event history (truncated windows)."""
    win_max = max(win_phi, win_k)
    h = 0.0
    zsum = 0.0
    for i in range(n - 1, -1, -1):
        dt = t_prop - times[i]
        if dt > win_max:
            break
        if dt < 0.0:
            continue
        if dt <= win_phi:
            if diag_kind == DIAG_EXP:
                h += d0 * d1 * math.exp(-d1 * dt)
            elif diag_kind == DIAG_POWERLAW:
                h += d0 * (1.0 + d1 * dt) ** (-d2)
        if k0 > 0.0 and dt <= win_k:
            zsum += signs[i] * k0 * math.exp(-omega * dt)
    return h, zsum


@numba.njit(cache=True, nogil=True)
def history_thinning(times, signs, n, t, bound, uni, pos, t_end, lam_inf,
                     diag_kind, d0, d1, d2, k0, omega, win_phi, win_k, cap):
    """Ogata thinning with intensity recomputed from the event history.

    O(window) work per proposal; exact up to the window truncation, whose
    dropped mass per event is below the caller-chosen tolerance.
    """
    phi0 = 0.0
    if diag_kind == DIAG_EXP:
        phi0 = d0 * d1
    elif diag_kind == DIAG_POWERLAW:
        phi0 = d0
    nmax = times.shape[0]
    while True:
        if pos + 3 > uni.shape[0]:
            return STATUS_NEED_UNIFORMS, pos, n, t, bound
        if n >= nmax:
            return STATUS_OUT_FULL, pos, n, t, bound
        if n >= cap:
            return STATUS_CAP, pos, n, t, bound
        gap = -math.log(uni[pos]) / bound
        pos += 1
        t_prop = t + gap
        if t_prop > t_end:
            return STATUS_DONE, pos, n, t_end, bound
        h, zsum = _history_intensity(t_prop, times, signs, n, lam_inf, diag_kind,
                                     d0, d1, d2, k0, omega, win_phi, win_k)
        lam = lam_inf + h + zsum * zsum
        if lam > bound * (1.0 + _BOUND_SLACK):
            return STATUS_BOUND_VIOLATED, pos, n, t_prop, lam
        accept = uni[pos] * bound <= lam
        pos += 1
        t = t_prop
        if accept:
            sign = 1.0 if uni[pos] < 0.5 else -1.0
            pos += 1
            times[n] = t
            signs[n] = sign
            n += 1
            z_new = zsum + sign * k0
            bound = lam_inf + h + phi0 + z_new * z_new
        else:
            bound = lam


@numba.njit(cache=True, nogil=True)
def markov_thinning(state, n, uni, pos, times, signs, t_end, lam_inf,
                    n_h, beta, k0, omega, cap):
    """Thinning for exponential kernels with O(1) scalar state.

    ``state`` is (h, z, t, bound) packed in a float64[4] array, where h and z
    are the excitation sum and signed memory just after time t.
    """
    h = state[0]
    z = state[1]
    t = state[2]
    bound = state[3]
    nmax = times.shape[0]
    while True:
        if pos + 3 > uni.shape[0]:
            state[0], state[1], state[2], state[3] = h, z, t, bound
            return STATUS_NEED_UNIFORMS, pos, n
        if n >= nmax:
            state[0], state[1], state[2], state[3] = h, z, t, bound
            return STATUS_OUT_FULL, pos, n
        if n >= cap:
            state[0], state[1], state[2], state[3] = h, z, t, bound
            return STATUS_CAP, pos, n
        gap = -math.log(uni[pos]) / bound
        pos += 1
        t_prop = t + gap
        if t_prop > t_end:
            h *= math.exp(-beta * (t_end - t))
            z *= math.exp(-omega * (t_end - t))
            state[0], state[1], state[2], state[3] = h, z, t_end, bound
            return STATUS_DONE, pos, n
        h_p = h * math.exp(-beta * gap)
        z_p = z * math.exp(-omega * gap)
        lam = lam_inf + h_p + z_p * z_p
        if lam > bound * (1.0 + _BOUND_SLACK):
            state[0], state[1], state[2], state[3] = h_p, z_p, t_prop, bound
            return STATUS_BOUND_VIOLATED, pos, n
        accept = uni[pos] * bound <= lam
        pos += 1
        t = t_prop
        h = h_p
        z = z_p
        if accept:
            sign = 1.0 if uni[pos] < 0.5 else -1.0
            pos += 1
            times[n] = t
            signs[n] = sign
            n += 1
            h += n_h * beta
            z += sign * k0
            bound = lam_inf + h + z * z
        else:
            bound = lam


@numba.njit(cache=True, nogil=True)
def mixture_thinning(amps, n, uni, pos, times, signs, scalars, t_end, lam_inf,
                     rates, jumps, k0, omega, cap):
    """Thinning over an exponential-mixture excitation state.

    ``amps[j]`` is the contribution of mixture component j to the excitation
    just after the current time; it decays at ``rates[j]`` and jumps by
    ``jumps[j]`` at each event.  ``scalars`` packs (z, t, bound, h_total).
    Total per-proposal cost is one exp per component.
    """
    z = scalars[0]
    t = scalars[1]
    bound = scalars[2]
    h = scalars[3]
    m = amps.shape[0]
    phi0 = 0.0
    for j in range(m):
        phi0 += jumps[j]
    nmax = times.shape[0]
    while True:
        if pos + 3 > uni.shape[0]:
            scalars[0], scalars[1], scalars[2], scalars[3] = z, t, bound, h
            return STATUS_NEED_UNIFORMS, pos, n
        if n >= nmax:
            scalars[0], scalars[1], scalars[2], scalars[3] = z, t, bound, h
            return STATUS_OUT_FULL, pos, n
        if n >= cap:
            scalars[0], scalars[1], scalars[2], scalars[3] = z, t, bound, h
            return STATUS_CAP, pos, n
        gap = -math.log(uni[pos]) / bound
        pos += 1
        t_prop = t + gap
        if t_prop > t_end:
            gap = t_end - t
            for j in range(m):
                amps[j] *= math.exp(-rates[j] * gap)
            z *= math.exp(-omega * gap)
            scalars[0], scalars[1], scalars[2], scalars[3] = z, t_end, bound, h
            return STATUS_DONE, pos, n
        h_p = 0.0
        for j in range(m):
            amps[j] *= math.exp(-rates[j] * gap)
            h_p += amps[j]
        z_p = z * math.exp(-omega * gap)
        lam = lam_inf + h_p + z_p * z_p
        t = t_prop
        h = h_p
        z = z_p
        if lam > bound * (1.0 + _BOUND_SLACK):
            scalars[0], scalars[1], scalars[2], scalars[3] = z, t, bound, h
            return STATUS_BOUND_VIOLATED, pos, n
        accept = uni[pos] * bound <= lam
        pos += 1
        if accept:
            sign = 1.0 if uni[pos] < 0.5 else -1.0
            pos += 1
            times[n] = t
            signs[n] = sign
            n += 1
            for j in range(m):
                amps[j] += jumps[j]
            h += phi0
            z += sign * k0
            bound = lam_inf + h + z * z
        else:
            bound = lam
