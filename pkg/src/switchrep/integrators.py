"""Fixed-step RK4 for the switched scalar replicator equation.

This is the numerical counterpart of the closed-form solution in
``switched``; it never evaluates the logistic formula, so comparing the
two is a genuine cross-check.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .switched import SwitchSchedule


@njit(cache=True, nogil=True)
def _rk4_logistic(alpha, x, t, span, h, out_t, out_x, pos, record):
    nsub = int(math.ceil(span / h - 1e-9))
    if nsub < 1:
        nsub = 1
    dt = span / nsub
    for j in range(nsub):
        k1 = alpha * x * (1.0 - x)
        y = x + 0.5 * dt * k1
        k2 = alpha * y * (1.0 - y)
        y = x + 0.5 * dt * k2
        k3 = alpha * y * (1.0 - y)
        y = x + dt * k3
        k4 = alpha * y * (1.0 - y)
        x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if record:
            out_t[pos] = t + (j + 1) * dt
            out_x[pos] = x
            pos += 1
    return x, pos


def _breakpoints(s: SwitchSchedule, t_end: float, extra=()) -> np.ndarray:
    n_periods = int(math.floor(t_end / s.period)) + 1
    base = np.arange(n_periods + 1)[:, None] * s.period
    sw = (base + np.asarray(s.boundaries[:-1])[None, :]).ravel()
    pts = np.concatenate([sw[(sw > 0) & (sw < t_end)], np.asarray(extra, dtype=float), [t_end]])
    pts = np.unique(pts[(pts > 0) & (pts <= t_end)])
    return pts


def rk4_switched(s: SwitchSchedule, x0: float, t_end: float, step: float = 1e-3, sample_times=None, every_step=False):
    """Integrate dx/dt = alpha_sigma(t) x (1-x) from x(0) = x0.

    Steps are shortened so that every switching instant (and every requested
    sample time) is an exact step boundary. Returns ``(t, x)``: all step
    points when ``every_step`` is set, otherwise the requested sample times
    (t = 0 included).
    """
    if step <= 0 or t_end <= 0:
        raise ValueError("step and t_end must be positive")
    samples = np.asarray([] if sample_times is None else sample_times, dtype=float)
    pts = _breakpoints(s, t_end, samples[samples > 0])
    alphas = s.alphas
    if every_step:
        cap = int(np.sum(np.ceil(np.diff(np.concatenate([[0.0], pts])) / step - 1e-9)) + len(pts) + 1)
        out_t = np.empty(cap)
        out_x = np.empty(cap)
        out_t[0], out_x[0] = 0.0, x0
        pos = 1
    else:
        out_t = out_x = np.empty(0)
        pos = 0
        keep = set(samples.tolist())
        got_t, got_x = [0.0], [x0]
    x, t = float(x0), 0.0
    # the active window only changes at breakpoints, so look it up by midpoint
    bounds = np.asarray(s.boundaries)
    for tb in pts:
        phase = ((t + tb) / 2.0) % s.period
        i = int(np.searchsorted(bounds[1:-1], phase, side="right"))
        x, pos = _rk4_logistic(alphas[i], x, t, tb - t, step, out_t, out_x, pos, every_step)
        t = tb
        if not every_step and tb in keep:
            got_t.append(tb)
            got_x.append(x)
    if every_step:
        return out_t[:pos], out_x[:pos]
    return np.array(got_t), np.array(got_x)
