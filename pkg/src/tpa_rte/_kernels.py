"""Compiled ray-marching kernels.

Every path integral in the package reduces to marching a straight ray
backwards from an origin point ``o`` along ``o - s d``, ``0 <= s <= L``,
and sampling cell-centered fields by clamped bilinear interpolation.  Rays
are passed as flat arrays so the same code serves the ordinate sweeps, the
collimated beam and the radial rays of a point source.

Rays are independent and write disjoint outputs, so the loop over rays
runs in parallel; each ray's sum stays sequential, which keeps results
bitwise identical for any thread count.

Ray ``r`` is split into ``nseg[r]`` equal segments (``nseg = 0`` means a
degenerate ray of zero length).  Optical depth uses the trapezoid rule.  The
source lift ``int exp(-depth(s)) q(s) ds`` is integrated segment by segment
with the exponential taken exactly for the piecewise linear depth and the
source replaced by its segment mean.  For ``q = c * sig`` this telescopes to
``c * (1 - exp(-depth))``, so the discrete scheme keeps the maximum
principle of the continuous one.
"""
import math

import numpy as np
import os

import numba
from numba import njit, prange

# prefer OpenMP or the built-in pool; an outdated TBB only produces warnings
if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


@njit(cache=True, inline="always")
def _cell(fx, fy, nx, ny):
    cx = min(max(fx, 0.0), nx - 1.0)
    cy = min(max(fy, 0.0), ny - 1.0)
    i = min(int(cx), nx - 2)
    j = min(int(cy), ny - 2)
    return i, j, cx - i, cy - j


@njit(cache=True, inline="always")
def _interp(f, i, j, a, b):
    return ((1.0 - a) * (1.0 - b) * f[j, i] + a * (1.0 - b) * f[j, i + 1]
            + (1.0 - a) * b * f[j + 1, i] + a * b * f[j + 1, i + 1])


@njit(cache=True, inline="always")
def _seg_weight(ds, dD, e):
    # ds * (1 - exp(-dD)) / dD, free of cancellation for small dD
    if dD < 1e-4:
        return ds * (1.0 - 0.5 * dD + dD * dD / 6.0)
    return ds * (1.0 - e) / dD


@njit(cache=True, fastmath=True, parallel=True)
def ray_depth(sig, ox, oy, dx, dy, length, nseg, hx, hy, depth_out):
    """Trapezoid line integral of ``sig`` along every ray."""
    ny, nx = sig.shape
    for r in prange(ox.shape[0]):
        n = nseg[r]
        if n == 0:
            depth_out[r] = 0.0
            continue
        ds = length[r] / n
        fx = ox[r] / hx - 0.5
        fy = oy[r] / hy - 0.5
        gx = ds * dx[r] / hx
        gy = ds * dy[r] / hy
        acc = 0.0
        for m in range(n + 1):
            i, j, a, b = _cell(fx - m * gx, fy - m * gy, nx, ny)
            v = _interp(sig, i, j, a, b)
            if m == 0 or m == n:
                acc += 0.5 * v
            else:
                acc += v
        depth_out[r] = acc * ds


@njit(cache=True, fastmath=True, parallel=True)
def ray_lift(sig, q, qidx, ox, oy, dx, dy, length, nseg, hx, hy,
             depth_out, lift_out):
    """Depth and source lift in one pass (exponential evaluated per sample)."""
    ny, nx = sig.shape
    for r in prange(ox.shape[0]):
        n = nseg[r]
        if n == 0:
            depth_out[r] = 0.0
            lift_out[r] = 0.0
            continue
        ds = length[r] / n
        fx = ox[r] / hx - 0.5
        fy = oy[r] / hy - 0.5
        gx = ds * dx[r] / hx
        gy = ds * dy[r] / hy
        k = qidx[r]
        depth = 0.0
        att = 1.0
        lift = 0.0
        s_prev = 0.0
        q_prev = 0.0
        for m in range(n + 1):
            i, j, a, b = _cell(fx - m * gx, fy - m * gy, nx, ny)
            s_cur = _interp(sig, i, j, a, b)
            q_cur = _interp(q[k], i, j, a, b)
            if m > 0:
                dD = 0.5 * ds * (s_prev + s_cur)
                e = math.exp(-dD)
                lift += 0.5 * (q_prev + q_cur) * att * _seg_weight(ds, dD, e)
                depth += dD
                att *= e
            s_prev = s_cur
            q_prev = q_cur
        depth_out[r] = depth
        lift_out[r] = lift


@njit(cache=True, fastmath=True, parallel=True)
def ray_coefficients(sig, ox, oy, dx, dy, length, nseg, offsets, hx, hy,
                     coef_out, depth_out):
    """Per-sample lift coefficients for a fixed attenuation field.

    After this call the lift of any source ``q`` is
    ``sum_m coef[offsets[r] + m] * q(sample m)``, see :func:`ray_apply`.
    """
    ny, nx = sig.shape
    for r in prange(ox.shape[0]):
        n = nseg[r]
        base = offsets[r]
        if n == 0:
            depth_out[r] = 0.0
            continue
        ds = length[r] / n
        fx = ox[r] / hx - 0.5
        fy = oy[r] / hy - 0.5
        gx = ds * dx[r] / hx
        gy = ds * dy[r] / hy
        depth = 0.0
        att = 1.0
        s_prev = 0.0
        for m in range(n + 1):
            coef_out[base + m] = 0.0
        for m in range(n + 1):
            i, j, a, b = _cell(fx - m * gx, fy - m * gy, nx, ny)
            s_cur = _interp(sig, i, j, a, b)
            if m > 0:
                dD = 0.5 * ds * (s_prev + s_cur)
                e = math.exp(-dD)
                w = 0.5 * att * _seg_weight(ds, dD, e)
                coef_out[base + m - 1] += w
                coef_out[base + m] += w
                depth += dD
                att *= e
            s_prev = s_cur
        depth_out[r] = depth


@njit(cache=True, fastmath=True, parallel=True)
def ray_apply(q, qidx, ox, oy, dx, dy, length, nseg, offsets, coef, hx, hy,
              out):
    """Lift of ``q`` using coefficients from :func:`ray_coefficients`."""
    ny = q.shape[1]
    nx = q.shape[2]
    for r in prange(ox.shape[0]):
        n = nseg[r]
        if n == 0:
            out[r] = 0.0
            continue
        base = offsets[r]
        ds = length[r] / n
        fx = ox[r] / hx - 0.5
        fy = oy[r] / hy - 0.5
        gx = ds * dx[r] / hx
        gy = ds * dy[r] / hy
        qk = q[qidx[r]]
        acc = 0.0
        for m in range(n + 1):
            i, j, a, b = _cell(fx - m * gx, fy - m * gy, nx, ny)
            acc += coef[base + m] * _interp(qk, i, j, a, b)
        out[r] = acc


@njit(cache=True, parallel=True)
def bilinear(f, px, py, hx, hy, out):
    """Clamped bilinear interpolation of ``f`` (ny, nx) at flat points."""
    ny, nx = f.shape
    for r in prange(px.shape[0]):
        i, j, a, b = _cell(px[r] / hx - 0.5, py[r] / hy - 0.5, nx, ny)
        out[r] = _interp(f, i, j, a, b)


def segment_counts(length, step):
    """Number of equal segments so that spacing never exceeds ``step``."""
    n = np.ceil(np.asarray(length, dtype=float) / step - 1e-12)
    n = np.maximum(n, 1).astype(np.int64)
    n[np.asarray(length) <= 0.0] = 0
    return n
