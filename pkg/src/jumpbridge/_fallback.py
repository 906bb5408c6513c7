"""Pure-NumPy twin of ``_kernels.pyx``.

Paths of a chunk advance in lockstep, one vectorized Euler step at a time.
Every floating-point operation mirrors the compiled loop (same operands, same
association order), so both backends produce bitwise-identical output.
"""

from __future__ import annotations

import math

import numpy as np

EXP_CP = 0
TEMPERED = 1


def simulate_chunk(x0, rate, A, B, dt, p, m1, compensated, kind, lam_over_eta, inv_eta,
                   ss_unit, beta, inv_alpha, pool_a, pool_b, rec_idx,
                   out_rec, out_term, out_min, out_cost, out_rej, status):
    n_paths, K = pool_a.shape
    n = A.shape[0]
    rows = np.arange(n_paths)
    alive = np.ones(n_paths, dtype=bool)
    x = np.full(n_paths, float(x0))
    xmin = x.copy()
    cost = np.zeros(n_paths)
    rej = np.zeros(n_paths, dtype=np.int64)
    i = np.zeros(n_paths, dtype=np.intp)
    if kind == EXP_CP:
        if K < 1:
            status[:] = 1
            return
        e_next = pool_a[:, 0].copy()
        lam_t = np.zeros(n_paths)
        i[:] = 1

    # record slots per grid index
    rec_idx = np.asarray(rec_idx)
    starts = np.searchsorted(rec_idx, np.arange(n + 2))
    out_rec[:, starts[0]:starts[1]] = x[:, None]

    for k in range(n):
        scale = 1.0 + p * x
        scale = np.where(scale < 0.0, 0.0, scale)
        jump = np.zeros(n_paths)
        if kind == EXP_CP:
            lam_t = lam_t + lam_over_eta * scale * dt
            hit = rows[alive & (lam_t > e_next)]
            while hit.size:
                dead = i[hit] + 1 >= K
                if dead.any():
                    alive[hit[dead]] = False
                    hit = hit[~dead]
                ih = i[hit]
                jump[hit] = jump[hit] + pool_a[hit, ih] * inv_eta
                e_next[hit] = e_next[hit] + pool_a[hit, ih + 1]
                i[hit] = ih + 2
                hit = hit[lam_t[hit] > e_next[hit]]
        else:
            pend = rows[alive & (scale > 0.0)]
            if p == 0.0:
                ss = np.full(n_paths, ss_unit * 1.0)
            else:
                # scalar libm pow keeps the rounding identical to the compiled loop
                ss = np.zeros(n_paths)
                ss[pend] = [ss_unit * math.pow(s, inv_alpha) for s in scale[pend].tolist()]
            while pend.size:
                dead = i[pend] >= K
                if dead.any():
                    alive[pend[dead]] = False
                    pend = pend[~dead]
                ip = i[pend]
                cand = ss[pend] * pool_a[pend, ip]
                ok = pool_b[pend, ip] >= beta * cand
                i[pend] = ip + 1
                jump[pend[ok]] = cand[ok]
                rej[pend[~ok]] += 1
                pend = pend[~ok]
        u = -(A[k] * x + B[k])
        if compensated:
            x = x + (-rate * x + u + m1 * scale) * dt + (jump - m1 * scale * dt)
        else:
            x = x + (-rate * x + u) * dt + jump
        cost = cost + 0.5 * u * u * dt
        xmin = np.where(x < xmin, x, xmin)
        a, b = starts[k + 1], starts[k + 2]
        if b > a:
            out_rec[:, a:b] = x[:, None]

    status[:] = np.where(alive, 0, 1)
    ok = alive
    out_term[ok] = x[ok]
    out_min[ok] = xmin[ok]
    out_cost[ok] = cost[ok]
    out_rej[ok] = rej[ok]


def linear_recurrence(a, b, x0, out):
    """out[0] = x0, out[k+1] = out[k] + a[k] * out[k] + b[k]."""
    x = float(x0)
    out[0] = x
    for k, (ak, bk) in enumerate(zip(a.tolist(), b.tolist())):
        x = x + ak * x + bk
        out[k + 1] = x
