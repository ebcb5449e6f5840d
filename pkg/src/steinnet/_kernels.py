"""Compiled inner loops for the event-driven and grid simulators.

All kernels draw from a numpy ``Generator`` passed in by the caller, in a
fixed order, so a (parameters, seed) pair maps to one realisation.  The
Stein kernels share the draw sequence: one standard exponential for the
waiting time of the superposed clock, then one uniform to pick the stream.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

CROSSED = 0
HORIZON = 1
BUDGET = 2
NEVER = 3

_INF = np.inf


@njit(cache=True, nogil=True)
def _pick_stream(u, cum, rates):
    s = np.searchsorted(cum, u, side="right")
    if s >= cum.size:
        s = cum.size - 1
    while rates[s] == 0.0 and s > 0:
        s -= 1
    return s


@njit(cache=True, nogil=True)
def _grow(times, sources):
    cap = times.size * 2
    t2 = np.empty(cap)
    s2 = np.empty(cap, dtype=np.int64)
    t2[: times.size] = times
    s2[: sources.size] = sources
    return t2, s2


@njit(cache=True, nogil=True)
def stein_events(rng, cum, rates, total, horizon, max_events):
    """Event times and stream ids of the superposed Poisson inputs on [0, horizon]."""
    times = np.empty(64)
    sources = np.empty(64, dtype=np.int64)
    n = 0
    if total <= 0.0:
        return times[:0], sources[:0], HORIZON
    t = 0.0
    while True:
        t += rng.standard_exponential() / total
        if t > horizon:
            return times[:n], sources[:n], HORIZON
        s = _pick_stream(rng.random() * total, cum, rates)
        if n == max_events:
            return times[:n], sources[:n], BUDGET
        if n == times.size:
            times, sources = _grow(times, sources)
        times[n] = t
        sources[n] = s
        n += 1


@njit(cache=True, nogil=True)
def stein_terminal(rng, x0, cum, rates, total, amp, indptr, members, theta, t_end, max_events):
    """State X(t_end) and accumulated jump input, without storing events."""
    k = x0.size
    x = x0.copy()
    jumps = np.zeros(k)
    t = 0.0
    n = 0
    if total > 0.0:
        while True:
            t_next = t + rng.standard_exponential() / total
            if t_next > t_end:
                break
            decay = math.exp(-(t_next - t) / theta)
            for j in range(k):
                x[j] *= decay
            s = _pick_stream(rng.random() * total, cum, rates)
            for q in range(indptr[s], indptr[s + 1]):
                j = members[q]
                x[j] += amp[s]
                jumps[j] += amp[s]
            t = t_next
            n += 1
            if n > max_events:
                return x, jumps, n, BUDGET
    decay = math.exp(-(t_end - t) / theta)
    for j in range(k):
        x[j] *= decay
    return x, jumps, n, HORIZON


@njit(cache=True, nogil=True)
def _evolve(x, release, reset, t, t_new, theta):
    decay = math.exp(-(t_new - t) / theta)
    for j in range(x.size):
        if release[j] > t_new:
            x[j] = reset[j]
        elif release[j] > t:
            x[j] = reset[j] * math.exp(-(t_new - release[j]) / theta)
        else:
            x[j] *= decay


@njit(cache=True, nogil=True)
def stein_window(rng, x0, release, boundary, reset, cum, rates, total, amp, indptr, members,
                 theta, t_max, max_events, record):
    """Run one inter-crossing window of the Stein process with reset.

    ``release[j] > 0`` means component j is held at its reset value until
    that (window-relative) time and ignores inputs meanwhile.  Returns
    (status, tau, state at tau, marks, event count, event times, streams).
    Crossings by jumps need ``x > B``; a component below a negative
    boundary drifts up to it and crosses at a closed-form time.
    """
    k = x0.size
    x = x0.copy()
    marks = np.zeros(k, dtype=np.bool_)
    t_cross = np.empty(k)
    ev_t = np.empty(64 if record else 0)
    ev_s = np.empty(64 if record else 0, dtype=np.int64)
    n = 0
    t = 0.0
    while True:
        if total > 0.0:
            t_next = t + rng.standard_exponential() / total
        else:
            t_next = _INF
        t_c = _INF
        for j in range(k):
            t_cross[j] = _INF
            b = boundary[j]
            if b < 0.0:
                if release[j] > t:
                    t_cross[j] = release[j] + theta * math.log(reset[j] / b)
                elif x[j] <= b:
                    t_cross[j] = t + theta * math.log(x[j] / b)
                if t_cross[j] < t_c:
                    t_c = t_cross[j]
        if t_c < t_next and t_c <= t_max:
            _evolve(x, release, reset, t, t_c, theta)
            for j in range(k):
                if t_cross[j] == t_c:
                    marks[j] = True
                    x[j] = boundary[j]
            return CROSSED, t_c, x, marks, n, ev_t[:n], ev_s[:n]
        if t_next > t_max or t_next == _INF:
            if t_max == _INF:
                return NEVER, t, x, marks, n, ev_t[:n], ev_s[:n]
            _evolve(x, release, reset, t, t_max, theta)
            return HORIZON, t_max, x, marks, n, ev_t[:n], ev_s[:n]
        _evolve(x, release, reset, t, t_next, theta)
        s = _pick_stream(rng.random() * total, cum, rates)
        crossed = False
        for q in range(indptr[s], indptr[s + 1]):
            j = members[q]
            if release[j] > t_next:
                continue
            x[j] += amp[s]
            if x[j] > boundary[j]:
                marks[j] = True
                crossed = True
        if record:
            if n == ev_t.size:
                ev_t, ev_s = _grow(ev_t, ev_s)
            ev_t[n] = t_next
            ev_s[n] = s
        n += 1
        t = t_next
        if crossed:
            return CROSSED, t, x, marks, n, ev_t[:n], ev_s[:n]
        if n >= max_events:
            return BUDGET, t, x, marks, n, ev_t[:n], ev_s[:n]


@njit(cache=True, nogil=True)
def replay(x0, times, sources, amp, indptr, members, theta, query):
    """States at sorted query times; right-continuous at event times."""
    k = x0.size
    out = np.empty((query.size, k))
    x = x0.copy()
    t = 0.0
    e = 0
    for q in range(query.size):
        tq = query[q]
        while e < times.size and times[e] <= tq:
            decay = math.exp(-(times[e] - t) / theta)
            for j in range(k):
                x[j] *= decay
            s = sources[e]
            for p in range(indptr[s], indptr[s + 1]):
                x[members[p]] += amp[s]
            t = times[e]
            e += 1
        decay = math.exp(-(tq - t) / theta)
        for j in range(k):
            out[q, j] = x[j] * decay
    return out


@njit(cache=True, nogil=True)
def jump_sums(k, times, sources, amp, indptr, members, query):
    """Accumulated input amplitudes per component at sorted query times."""
    out = np.empty((query.size, k))
    acc = np.zeros(k)
    e = 0
    for q in range(query.size):
        while e < times.size and times[e] <= query[q]:
            s = sources[e]
            for p in range(indptr[s], indptr[s + 1]):
                acc[members[p]] += amp[s]
            e += 1
        out[q] = acc
    return out


@njit(cache=True, nogil=True)
def decayed_counts(rng, rates, t, theta, reps):
    """Per stream, sum of exp(-(t - s)/theta) over the event times s in [0, t].

    Event counts are Poisson(rate t) and, given the count, the event times
    are iid uniform; the draw order is count then times, stream by stream.
    """
    out = np.zeros((reps, rates.size))
    for r in range(reps):
        for s in range(rates.size):
            if rates[s] == 0.0:
                continue
            count = rng.poisson(rates[s] * t)
            acc = 0.0
            for _ in range(count):
                acc += math.exp(-t * rng.random() / theta)
            out[r, s] = acc
    return out


@njit(cache=True, nogil=True)
def ou_grid(y0, coef, drift, noise):
    """y[i+1] = coef * y[i] + drift + noise[i] (per component)."""
    m, k = noise.shape
    out = np.empty((m + 1, k))
    out[0] = y0
    for i in range(m):
        for j in range(k):
            out[i + 1, j] = coef[j] * out[i, j] + drift[j] + noise[i, j]
    return out


BRIDGE_SKIP = 1e-15


@njit(cache=True, nogil=True)
def ou_window(rng, y0, release, boundary, reset, gamma, chol, psi_diag, theta, h, t_max,
              bridge, max_steps):
    """Run one window of the OU process with reset on a grid of step h.

    Exact Gaussian transitions; a component crosses when its grid value is
    >= B, or (bridge on) with the Brownian-bridge exceedance probability
    between grid values, in which case the window ends at the step
    midpoint with the other components drawn from the exact OU bridge.
    Returns (status, tau, state, winner, ties, steps).
    """
    k = y0.size
    y = y0.copy()
    ynew = np.empty(k)
    xi = np.empty(k)
    e = math.exp(-h / theta)
    sd = math.sqrt(theta / 2.0 * (1.0 - e * e))
    step_var = theta / 2.0 * (1.0 - e * e)
    e1 = math.exp(-h / (2.0 * theta))
    c_mid = e1 / (1.0 + e1 * e1)
    sd_mid = math.sqrt(theta / 2.0 * (1.0 - e1 * e1) / (1.0 + e1 * e1))
    i = 0
    t = 0.0
    while True:
        t_next = (i + 1) * h
        if t_next > t_max:
            return HORIZON, t, y, -1, 0, i
        if i >= max_steps:
            return BUDGET, t, y, -1, 0, i
        for j in range(k):
            xi[j] = rng.standard_normal()
        for j in range(k):
            acc = 0.0
            for l in range(j + 1):
                acc += chol[j, l] * xi[l]
            ynew[j] = e * y[j] + gamma[j] * theta * (1.0 - e) + sd * acc
            if release[j] > t_next:
                ynew[j] = reset[j]
        winner = -1
        n_bridge = 0
        if bridge:
            for j in range(k):
                if release[j] > t or ynew[j] >= boundary[j]:
                    continue
                if y[j] >= boundary[j]:
                    p = 1.0
                else:
                    v = psi_diag[j] * step_var
                    p = math.exp(-2.0 * (boundary[j] - y[j]) * (boundary[j] - ynew[j]) / v) if v > 0.0 else 0.0
                if p > BRIDGE_SKIP and rng.random() < p:
                    n_bridge += 1
                    if winner < 0:
                        winner = j
        if winner >= 0:
            t_mid = t + 0.5 * h
            mid = np.empty(k)
            for j in range(k):
                xi[j] = rng.standard_normal()
            for j in range(k):
                acc = 0.0
                for l in range(j + 1):
                    acc += chol[j, l] * xi[l]
                full_mean = e * y[j] + gamma[j] * theta * (1.0 - e)
                mid[j] = (e1 * y[j] + gamma[j] * theta * (1.0 - e1)
                          + c_mid * (ynew[j] - full_mean) + sd_mid * acc)
                if release[j] > t_mid:
                    mid[j] = reset[j]
            mid[winner] = max(mid[winner], boundary[winner])
            ties = 0
            for j in range(k):
                if j != winner and mid[j] >= boundary[j]:
                    ties += 1
            return CROSSED, t_mid, mid, winner, ties, i + 1
        best = -1
        best_over = -_INF
        n_grid = 0
        for j in range(k):
            if release[j] <= t_next and ynew[j] >= boundary[j]:
                n_grid += 1
                over = ynew[j] - boundary[j]
                if over > best_over:
                    best_over = over
                    best = j
        if best >= 0:
            return CROSSED, t_next, ynew.copy(), best, n_grid - 1, i + 1
        for j in range(k):
            y[j] = ynew[j]
        t = t_next
        i += 1
