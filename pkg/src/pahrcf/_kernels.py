"""Compiled per-pixel loops for image formation.

Everything here works on plain arrays so the public API in
:mod:`pahrcf.beamform` can stay readable while full images remain tractable
(an MV solve of size L per pixel).
"""

import numpy as np
from numba import config, njit, prange

# workqueue is always available and avoids the TBB version probe warning
config.THREADING_LAYER = "workqueue"


@njit(cache=True)
def delayed_window(samples, delay, valid, shift_lo, shift_hi, out):
    """Fill ``out[n, i]`` with channel ``i`` linearly interpolated at ``delay[i] + shift_lo + n``.

    Positions outside the record and elements with ``valid[i]`` False give 0.
    """
    m, nsamp = samples.shape
    for i in range(m):
        for n in range(shift_hi - shift_lo + 1):
            out[n, i] = 0.0
        if not valid[i]:
            continue
        d = delay[i]
        base = np.floor(d)
        frac = d - base
        i0 = int(base)
        for n in range(shift_hi - shift_lo + 1):
            j = i0 + shift_lo + n
            if j < 0 or j > nsamp - 1:
                continue
            if frac == 0.0 or j == nsamp - 1:
                if frac == 0.0:
                    out[n, i] = samples[i, j]
                # j + frac beyond the last sample stays 0
            else:
                out[n, i] = samples[i, j] + frac * (samples[i, j + 1] - samples[i, j])


@njit(cache=True)
def smoothed_covariance(snap, sub_len, out):
    """Spatially smoothed, temporally averaged covariance of a (T, M) snapshot block.

    ``out[p, q] = sum_n sum_l snap[n, l + p] * conj(snap[n, l + q]) / (T * (M - L + 1))``
    for real or complex (analytic) snapshots.
    Each lag ``d = q - p`` is handled with a prefix sum over element index, so
    the cost is O(T * M * L) rather than O(T * (M - L + 1) * L^2).
    """
    t, m = snap.shape
    nsub = m - sub_len + 1
    scale = 1.0 / (t * nsub)
    prefix = np.empty(m + 1, dtype=snap.dtype)
    for d in range(sub_len):
        prefix[0] = 0.0
        for j in range(m - d):
            acc = snap[0, j] * np.conj(snap[0, j + d])
            for n in range(1, t):
                acc += snap[n, j] * np.conj(snap[n, j + d])
            prefix[j + 1] = prefix[j] + acc
        for p in range(sub_len - d):
            v = (prefix[p + nsub] - prefix[p]) * scale
            out[p, p + d] = v
            out[p + d, p] = np.conj(v)


@njit(cache=True)
def cholesky_solve_ones(a, work, w):
    """Solve ``a @ w = 1`` for Hermitian positive-definite ``a``.

    ``work`` receives the lower Cholesky factor. Returns False if a
    non-positive pivot shows up.
    """
    n = a.shape[0]
    for j in range(n):
        d = a[j, j].real
        for k in range(j):
            d -= (work[j, k] * np.conj(work[j, k])).real
        if not d > 0.0:
            return False
        ljj = np.sqrt(d)
        work[j, j] = ljj
        for i in range(j + 1, n):
            s = a[i, j]
            for k in range(j):
                s -= work[i, k] * np.conj(work[j, k])
            work[i, j] = s / ljj
    for i in range(n):
        s = work[0, 0] * 0.0 + 1.0
        for k in range(i):
            s -= work[i, k] * w[k]
        w[i] = s / work[i, i]
    for i in range(n - 1, -1, -1):
        s = w[i]
        for k in range(i + 1, n):
            s -= np.conj(work[k, i]) * w[k]
        w[i] = s / work[i, i]
    return True


@njit(cache=True)
def _pixel(samples, delay, valid, shift_lo, shift_hi, sub_len, dl_const, snap, cov, work, w, res):
    m = samples.shape[0]
    t = shift_hi - shift_lo + 1
    delayed_window(samples, delay, valid, shift_lo, shift_hi, snap)
    c = -shift_lo  # row of the zero-shift snapshot
    das = snap[c, 0] * 0.0
    energy = 0.0
    for i in range(m):
        v = snap[c, i]
        das += v
        energy += (v * np.conj(v)).real
    cf = 0.0
    if energy > 0.0:
        cf = min(1.0, (das * np.conj(das)).real / (m * energy))
    smoothed_covariance(snap[:t], sub_len, cov)
    trace = 0.0
    for p in range(sub_len):
        trace += cov[p, p].real
    mv = das * 0.0
    if trace >= 1e-300:
        gamma = dl_const * trace
        for p in range(sub_len):
            cov[p, p] += gamma
        if cholesky_solve_ones(cov, work, w):
            tot = w[0] * 0.0
            for p in range(sub_len):
                tot += w[p]
            nsub = m - sub_len + 1
            # W^H (mean of the subarray snapshots), subarray mean via running sum
            run = snap[c, 0] * 0.0
            for j in range(nsub):
                run += snap[c, j]
            acc = np.conj(w[0]) * run
            for p in range(1, sub_len):
                run += snap[c, p + nsub - 1] - snap[c, p - 1]
                acc += np.conj(w[p]) * run
            mv = acc / (np.conj(tot) * nsub)
    hrcf = 0.0
    if energy > 0.0:
        hrcf = m * (mv * np.conj(mv)).real / energy
    res[0] = das
    res[1] = cf
    res[2] = mv
    res[3] = hrcf


@njit(cache=True, parallel=True)
def beamform_grid(samples, delays, valid, pixel_samples, sub_len, half_window, dl_const, out):
    """Per pixel: out[..., 0..3] = DAS, CF, MV output, HRCF."""
    nz, nx, m = delays.shape
    nsamp = samples.shape[1]
    for iz in prange(nz):
        k = pixel_samples[iz]
        lo = max(-half_window, -k)
        hi = min(half_window, nsamp - 1 - k)
        if hi < 0 or lo > 0:
            # pixel outside the record: keep just the zero-shift sample
            lo = 0
            hi = 0
        snap = np.empty((hi - lo + 1, m), dtype=samples.dtype)
        cov = np.empty((sub_len, sub_len), dtype=samples.dtype)
        work = np.empty((sub_len, sub_len), dtype=samples.dtype)
        w = np.empty(sub_len, dtype=samples.dtype)
        res = np.empty(4, dtype=samples.dtype)
        for ix in range(nx):
            _pixel(samples, delays[iz, ix], valid[iz, ix], lo, hi, sub_len, dl_const, snap, cov, work, w, res)
            for q in range(4):
                out[iz, ix, q] = res[q]
