# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled tile rasterizer kernels. Same per-pixel semantics as the numpy
fallback in raster_py: global (depth, index) compositing order, alpha_min
skip, alpha_max clamp, and transmittance-floor early stop. Tiles own their
pixels, so results are bit-identical for any thread count."""

from cython.parallel import prange
from libc.math cimport exp


def forward(double[:, ::1] mean2, double[:, ::1] qcov, double[::1] opac,
            double[:, ::1] chans, long long[::1] pair_splat,
            long long[::1] tile_start, long long[::1] tile_end,
            int width, int height, int tile, double[::1] bg,
            double alpha_min, double alpha_max, double t_eps, int threads,
            double[:, :, ::1] out, double[:, ::1] t_end,
            long long[:, ::1] stop_pos, int[:, ::1] contrib):
    cdef int ntx = (width + tile - 1) // tile
    cdef int nty = (height + tile - 1) // tile
    cdef int n_tiles = ntx * nty
    cdef int n_chan = chans.shape[1]
    cdef Py_ssize_t tid, pos, s
    cdef int tx, ty, x0, y0, x1, y1, xx, yy, c, cnt
    cdef long long s0, s1
    cdef double px, py, dx, dy, power, delta, t_run, test_t

    for tid in prange(n_tiles, nogil=True, num_threads=threads, schedule='dynamic'):
        ty = <int>(tid // ntx)
        tx = <int>(tid % ntx)
        x0 = tx * tile
        y0 = ty * tile
        x1 = x0 + tile
        if x1 > width:
            x1 = width
        y1 = y0 + tile
        if y1 > height:
            y1 = height
        s0 = tile_start[tid]
        s1 = tile_end[tid]
        for yy in range(y0, y1):
            py = yy + 0.5
            for xx in range(x0, x1):
                px = xx + 0.5
                t_run = 1.0
                cnt = 0
                pos = s0
                while pos < s1:
                    s = pair_splat[pos]
                    dx = px - mean2[s, 0]
                    dy = py - mean2[s, 1]
                    power = 0.5 * (qcov[s, 0] * dx * dx + qcov[s, 2] * dy * dy) \
                        + qcov[s, 1] * dx * dy
                    delta = opac[s] * exp(-power)
                    if delta > alpha_max:
                        delta = alpha_max
                    if delta < alpha_min:
                        pos = pos + 1
                        continue
                    test_t = t_run * (1.0 - delta)
                    if test_t < t_eps:
                        break
                    for c in range(n_chan):
                        out[yy, xx, c] += chans[s, c] * delta * t_run
                    cnt = cnt + 1
                    t_run = test_t
                    pos = pos + 1
                for c in range(n_chan):
                    out[yy, xx, c] += bg[c] * t_run
                t_end[yy, xx] = t_run
                stop_pos[yy, xx] = pos - s0
                contrib[yy, xx] = cnt


def backward(double[:, ::1] mean2, double[:, ::1] qcov, double[::1] opac,
             double[:, ::1] chans, long long[::1] pair_splat,
             long long[::1] tile_start, long long[::1] tile_end,
             int width, int height, int tile, double[::1] bg,
             double alpha_min, double alpha_max, double t_eps, int threads,
             double[:, ::1] t_end, long long[:, ::1] stop_pos,
             double[:, :, ::1] d_out, double[:, ::1] d_alpha,
             double[:, ::1] pd_mean, double[:, ::1] pd_q,
             double[::1] pd_opac, double[:, ::1] pd_chan):
    cdef int ntx = (width + tile - 1) // tile
    cdef int nty = (height + tile - 1) // tile
    cdef int n_tiles = ntx * nty
    cdef int n_chan = chans.shape[1]
    cdef Py_ssize_t tid, pos, s
    cdef int tx, ty, x0, y0, x1, y1, xx, yy, c
    cdef long long s0, s1, consumed
    cdef double px, py, dx, dy, power, g, raw, delta, one, t_run, t_i
    cdef double dot, k_end, s_acc, d_delta, d_p, wgt, gx, gy

    for tid in prange(n_tiles, nogil=True, num_threads=threads, schedule='dynamic'):
        ty = <int>(tid // ntx)
        tx = <int>(tid % ntx)
        x0 = tx * tile
        y0 = ty * tile
        x1 = x0 + tile
        if x1 > width:
            x1 = width
        y1 = y0 + tile
        if y1 > height:
            y1 = height
        s0 = tile_start[tid]
        s1 = tile_end[tid]
        if s0 == s1:
            continue
        for yy in range(y0, y1):
            py = yy + 0.5
            for xx in range(x0, x1):
                px = xx + 0.5
                consumed = stop_pos[yy, xx]
                if consumed == 0:
                    continue
                t_run = t_end[yy, xx]
                k_end = -d_alpha[yy, xx]
                for c in range(n_chan):
                    k_end = k_end + d_out[yy, xx, c] * bg[c]
                s_acc = t_run * k_end
                pos = s0 + consumed - 1
                while pos >= s0:
                    s = pair_splat[pos]
                    dx = px - mean2[s, 0]
                    dy = py - mean2[s, 1]
                    power = 0.5 * (qcov[s, 0] * dx * dx + qcov[s, 2] * dy * dy) \
                        + qcov[s, 1] * dx * dy
                    g = exp(-power)
                    raw = opac[s] * g
                    delta = raw
                    if delta > alpha_max:
                        delta = alpha_max
                    if delta < alpha_min:
                        pos = pos - 1
                        continue
                    one = 1.0 - delta
                    t_i = t_run / one
                    dot = 0.0
                    for c in range(n_chan):
                        dot = dot + d_out[yy, xx, c] * chans[s, c]
                    d_delta = t_i * dot - s_acc / one
                    if raw <= alpha_max:
                        pd_opac[pos] += d_delta * g
                        d_p = -d_delta * delta
                        gx = qcov[s, 0] * dx + qcov[s, 1] * dy
                        gy = qcov[s, 1] * dx + qcov[s, 2] * dy
                        pd_mean[pos, 0] += -d_p * gx
                        pd_mean[pos, 1] += -d_p * gy
                        pd_q[pos, 0] += d_p * 0.5 * dx * dx
                        pd_q[pos, 1] += d_p * dx * dy
                        pd_q[pos, 2] += d_p * 0.5 * dy * dy
                    wgt = delta * t_i
                    for c in range(n_chan):
                        pd_chan[pos, c] += d_out[yy, xx, c] * wgt
                    s_acc = s_acc + wgt * dot
                    t_run = t_i
                    pos = pos - 1
