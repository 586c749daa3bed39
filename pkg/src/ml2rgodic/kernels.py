"""Numba kernels: compensated power sums and streaming Euler/level simulation.

The scalar kernels cover the additive-noise 1-d models (OU, double well);
the vector kernels cover the EWA posterior in dimension p.  All kernels are
chunked: they consume one block of pre-drawn standard normals and carry the
running state in and out, so a level of any length runs in bounded memory
and the draw order is fixed by the stream, never by chunk sizes.

Blow-up signalling: kernels return the 1-based index of the first step that
produced a non-finite state, or 0 if the whole block was clean.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def accumulate_power_sums(gamma1, a, clamp, k0, k1, sums, comp):
    """Kahan-add gamma_k^l for k in (k0, k1] into sums[l-1], l = 1..len(sums)."""
    lmax = sums.shape[0]
    for k in range(k0 + 1, k1 + 1):
        g = gamma1 * k ** (-a)
        if g > clamp:
            g = clamp
        p = 1.0
        for l in range(lmax):
            p *= g
            y = p - comp[l]
            t = sums[l] + y
            comp[l] = (t - sums[l]) - y
            sums[l] = t


@njit(cache=True, nogil=True, inline="always")
def _step(gamma1, a, clamp, k):
    g = gamma1 * k ** (-a)
    return g if g < clamp else clamp


@njit(cache=True, nogil=True)
def coarse_chunk(drift, f, sigma, gamma1, a, clamp, k0, z, state):
    """Advance a coarse level by len(z) steps.

    state = [x, value, H]; the empirical measure weights the pre-step state
    by the step about to be taken, via the running-mean recursion
    value <- value + (eta/H)(f(x) - value).
    """
    x, val, H = state[0], state[1], state[2]
    fail = 0
    for i in range(z.shape[0]):
        k = k0 + i + 1
        g = _step(gamma1, a, clamp, k)
        H += g
        val += (g / H) * (f(x) - val)
        x = x + g * drift(x) + sigma * np.sqrt(g) * z[i]
        if not np.isfinite(x):
            fail = k
            break
    state[0], state[1], state[2] = x, val, H
    return fail


@njit(cache=True, nogil=True)
def pair_chunk(drift, f, sigma, gamma1, a, clamp, M, k0, z, state):
    """Advance a coupled coarse/fine correcting level by len(z)//M coarse steps.

    state = [xc, xf, value, H].  The coarse increment over step k is the sum
    of its M fine sub-increments, an exact identity by construction.  The
    accumulator averages (mean of M fine pre-step values) - (coarse pre-step
    value) with weight gamma_k of this level's schedule.
    """
    xc, xf, val, H = state[0], state[1], state[2], state[3]
    n_steps = z.shape[0] // M
    fail = 0
    for i in range(n_steps):
        k = k0 + i + 1
        g = _step(gamma1, a, clamp, k)
        gf = g / M
        sq = np.sqrt(gf)
        fsum = 0.0
        dwc = 0.0
        for m in range(M):
            fsum += f(xf)
            dw = sq * z[i * M + m]
            xf = xf + gf * drift(xf) + sigma * dw
            dwc += dw
        H += g
        val += (g / H) * (fsum / M - f(xc) - val)
        xc = xc + g * drift(xc) + sigma * dwc
        if not (np.isfinite(xc) and np.isfinite(xf)):
            fail = k
            break
    state[0], state[1], state[2], state[3] = xc, xf, val, H
    return fail


@njit(cache=True, nogil=True)
def ewa_drift(theta, X, Y, beta, tau2):
    r = Y - X @ theta
    return (2.0 / beta) * (X.T @ r) - 2.0 * theta / (tau2 + theta * theta)


@njit(cache=True, nogil=True)
def ewa_coarse_chunk(X, Y, beta, tau2, sig, gamma1, a, clamp, k0, z, x, val, H):
    """Coarse level for the EWA diffusion; val accumulates the p coordinate means.

    z has shape (steps, p); sig is the constant diffusion coefficient (sqrt(2)).
    Returns (fail, H).
    """
    fail = 0
    Hc = H
    for i in range(z.shape[0]):
        k = k0 + i + 1
        g = _step(gamma1, a, clamp, k)
        Hc += g
        w = g / Hc
        for j in range(x.shape[0]):
            val[j] += w * (x[j] - val[j])
        b = ewa_drift(x, X, Y, beta, tau2)
        ok = True
        sq = sig * np.sqrt(g)
        for j in range(x.shape[0]):
            x[j] = x[j] + g * b[j] + sq * z[i, j]
            if not np.isfinite(x[j]):
                ok = False
        if not ok:
            fail = k
            break
    return fail, Hc


@njit(cache=True, nogil=True)
def ewa_pair_chunk(X, Y, beta, tau2, sig, gamma1, a, clamp, M, k0, z, xc, xf, val, H):
    """Coupled correcting level for the EWA diffusion; z has shape (steps*M, p)."""
    p = xc.shape[0]
    n_steps = z.shape[0] // M
    fail = 0
    Hc = H
    vbuf = np.empty(p)
    dwc = np.empty(p)
    for i in range(n_steps):
        k = k0 + i + 1
        g = _step(gamma1, a, clamp, k)
        gf = g / M
        sq = sig * np.sqrt(gf)
        for j in range(p):
            vbuf[j] = 0.0
            dwc[j] = 0.0
        for m in range(M):
            b = ewa_drift(xf, X, Y, beta, tau2)
            for j in range(p):
                vbuf[j] += xf[j]
                dw = sq * z[i * M + m, j]
                xf[j] = xf[j] + gf * b[j] + dw
                dwc[j] += dw
        Hc += g
        w = g / Hc
        bc = ewa_drift(xc, X, Y, beta, tau2)
        ok = True
        for j in range(p):
            val[j] += w * (vbuf[j] / M - xc[j] - val[j])
            xc[j] = xc[j] + g * bc[j] + dwc[j]
            if not (np.isfinite(xc[j]) and np.isfinite(xf[j])):
                ok = False
        if not ok:
            fail = k
            break
    return fail, Hc


@njit(cache=True, nogil=True)
def ou_drift(x):
    return -0.5 * x


@njit(cache=True, nogil=True)
def double_well_drift(x):
    return -2.0 * x + 2.0 * x / (1.0 + x * x)


@njit(cache=True, nogil=True)
def square_f(x):
    return x * x
