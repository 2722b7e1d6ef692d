"""Pure-numpy tile rasterizer kernels: the fallback twin of the compiled
extension. Per-pixel semantics are identical: splats composited in global
(depth, index) order, weight ``delta = opacity * exp(-power)`` clamped to
``alpha_max``, contributions below ``alpha_min`` skipped, and a pixel stops
before any splat that would push its transmittance under ``t_eps``.

Kernels are sequential; the ``threads`` argument is accepted for interface
parity and ignored.
"""

import numpy as np


def forward(mean2, qcov, opac, chans, pair_splat, tile_start, tile_end,
            width, height, tile, bg, alpha_min, alpha_max, t_eps, threads=1):
    n_chan = chans.shape[1]
    out = np.zeros((height, width, n_chan))
    t_end = np.ones((height, width))
    stop_pos = np.zeros((height, width), dtype=np.int64)
    contrib = np.zeros((height, width), dtype=np.int32)

    ntx = (width + tile - 1) // tile
    nty = (height + tile - 1) // tile
    for ty in range(nty):
        for tx in range(ntx):
            tid = ty * ntx + tx
            x0, y0 = tx * tile, ty * tile
            w = min(tile, width - x0)
            h = min(tile, height - y0)
            s0, s1 = tile_start[tid], tile_end[tid]
            if s0 == s1:
                out[y0:y0 + h, x0:x0 + w] = bg
                continue
            px = (x0 + np.arange(w) + 0.5)[None, :].repeat(h, axis=0).reshape(-1)
            py = (y0 + np.arange(h) + 0.5)[:, None].repeat(w, axis=1).reshape(-1)
            t_run = np.ones(h * w)
            stopped = np.zeros(h * w, dtype=bool)
            acc = np.zeros((h * w, n_chan))
            cnt = np.zeros(h * w, dtype=np.int32)
            spos = np.zeros(h * w, dtype=np.int64)
            for pos in range(s0, s1):
                if stopped.all():
                    break
                s = pair_splat[pos]
                dx = px - mean2[s, 0]
                dy = py - mean2[s, 1]
                power = 0.5 * (qcov[s, 0] * dx * dx + qcov[s, 2] * dy * dy) \
                    + qcov[s, 1] * dx * dy
                delta = np.minimum(opac[s] * np.exp(-power), alpha_max)
                live = ~stopped
                consider = live & (delta >= alpha_min)
                test_t = t_run * (1.0 - delta)
                newstop = consider & (test_t < t_eps)
                apply = consider & ~newstop
                acc[apply] += chans[s][None, :] * (delta[apply] * t_run[apply])[:, None]
                cnt[apply] += 1
                t_run[apply] = test_t[apply]
                stopped |= newstop
                spos[live & ~newstop] = pos - s0 + 1
            block = (acc + bg[None, :] * t_run[:, None]).reshape(h, w, n_chan)
            out[y0:y0 + h, x0:x0 + w] = block
            t_end[y0:y0 + h, x0:x0 + w] = t_run.reshape(h, w)
            stop_pos[y0:y0 + h, x0:x0 + w] = spos.reshape(h, w)
            contrib[y0:y0 + h, x0:x0 + w] = cnt.reshape(h, w)
    return out, t_end, stop_pos, contrib


def backward(mean2, qcov, opac, chans, pair_splat, tile_start, tile_end,
             width, height, tile, bg, alpha_min, alpha_max, t_eps,
             t_end, stop_pos, d_out, d_alpha, threads=1):
    n_pairs = pair_splat.shape[0]
    n_chan = chans.shape[1]
    pd_mean = np.zeros((n_pairs, 2))
    pd_q = np.zeros((n_pairs, 3))
    pd_opac = np.zeros(n_pairs)
    pd_chan = np.zeros((n_pairs, n_chan))

    ntx = (width + tile - 1) // tile
    nty = (height + tile - 1) // tile
    for ty in range(nty):
        for tx in range(ntx):
            tid = ty * ntx + tx
            s0, s1 = tile_start[tid], tile_end[tid]
            if s0 == s1:
                continue
            x0, y0 = tx * tile, ty * tile
            w = min(tile, width - x0)
            h = min(tile, height - y0)
            px = (x0 + np.arange(w) + 0.5)[None, :].repeat(h, axis=0).reshape(-1)
            py = (y0 + np.arange(h) + 0.5)[:, None].repeat(w, axis=1).reshape(-1)
            do_tile = d_out[y0:y0 + h, x0:x0 + w].reshape(-1, n_chan)
            da_tile = d_alpha[y0:y0 + h, x0:x0 + w].reshape(-1)
            t_run = t_end[y0:y0 + h, x0:x0 + w].reshape(-1).copy()
            spos = stop_pos[y0:y0 + h, x0:x0 + w].reshape(-1)
            k_end = do_tile @ bg - da_tile
            s_acc = t_run * k_end
            for pos in range(s1 - 1, s0 - 1, -1):
                rel = pos - s0
                seen = spos > rel
                if not seen.any():
                    continue
                s = pair_splat[pos]
                dx = px - mean2[s, 0]
                dy = py - mean2[s, 1]
                power = 0.5 * (qcov[s, 0] * dx * dx + qcov[s, 2] * dy * dy) \
                    + qcov[s, 1] * dx * dy
                g = np.exp(-power)
                raw = opac[s] * g
                clamped = raw > alpha_max
                delta = np.minimum(raw, alpha_max)
                act = seen & (delta >= alpha_min)
                if not act.any():
                    continue
                one = 1.0 - delta
                t_i = np.where(act, t_run / one, t_run)
                dot = do_tile @ chans[s]
                d_delta = t_i * dot - s_acc / one
                live_grad = act & ~clamped
                d_p = np.where(live_grad, -d_delta * delta, 0.0)
                pd_opac[pos] = np.sum(np.where(live_grad, d_delta * g, 0.0))
                gx = qcov[s, 0] * dx + qcov[s, 1] * dy
                gy = qcov[s, 1] * dx + qcov[s, 2] * dy
                pd_mean[pos, 0] = np.sum(-d_p * gx)
                pd_mean[pos, 1] = np.sum(-d_p * gy)
                pd_q[pos, 0] = np.sum(d_p * 0.5 * dx * dx)
                pd_q[pos, 1] = np.sum(d_p * dx * dy)
                pd_q[pos, 2] = np.sum(d_p * 0.5 * dy * dy)
                wgt = np.where(act, delta * t_i, 0.0)
                pd_chan[pos] = do_tile.T @ wgt
                s_acc = np.where(act, s_acc + wgt * dot, s_acc)
                t_run = np.where(act, t_i, t_run)
    return pd_mean, pd_q, pd_opac, pd_chan
