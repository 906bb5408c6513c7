# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Euler loop for a chunk of independent paths.

Random inputs arrive as per-path pools of pre-transformed variates, so the
loop itself only does additions, multiplications, comparisons and one pow();
the NumPy fallback in ``_fallback.py`` performs the identical operations in
the identical order.
"""

from libc.math cimport pow

cdef enum:
    EXP_CP = 0
    TEMPERED = 1


cdef inline int _path(
    Py_ssize_t pth,
    double x0, double rate, const double[::1] A, const double[::1] B,
    double dt, double p, double m1, int compensated,
    int kind, double lam_over_eta, double inv_eta,
    double ss_unit, double beta, double inv_alpha,
    const double[:, ::1] pool_a, const double[:, ::1] pool_b,
    const Py_ssize_t[::1] rec_idx,
    double[:, ::1] out_rec, double[::1] out_term, double[::1] out_min,
    double[::1] out_cost, long long[::1] out_rej,
) noexcept nogil:
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t K = pool_a.shape[1]
    cdef Py_ssize_t n_rec = rec_idx.shape[0]
    cdef Py_ssize_t k, i, r = 0
    cdef double x = x0, xmin = x0, cost = 0.0, lam_t = 0.0, e_next = 0.0
    cdef double scale, u, jump, ss, cand
    cdef long long rej = 0

    if kind == EXP_CP:
        if K < 1:
            return 1
        e_next = pool_a[pth, 0]
        i = 1
    else:
        i = 0
    while r < n_rec and rec_idx[r] == 0:
        out_rec[pth, r] = x
        r += 1

    for k in range(n):
        scale = 1.0 + p * x
        if scale < 0.0:
            scale = 0.0
        jump = 0.0
        if kind == EXP_CP:
            lam_t = lam_t + lam_over_eta * scale * dt
            while lam_t > e_next:
                if i + 1 >= K:
                    return 1
                jump = jump + pool_a[pth, i] * inv_eta
                e_next = e_next + pool_a[pth, i + 1]
                i += 2
        elif scale > 0.0:
            ss = ss_unit * pow(scale, inv_alpha)
            while True:
                if i >= K:
                    return 1
                cand = ss * pool_a[pth, i]
                if pool_b[pth, i] >= beta * cand:
                    i += 1
                    jump = cand
                    break
                i += 1
                rej += 1
        u = -(A[k] * x + B[k])
        if compensated:
            x = x + (-rate * x + u + m1 * scale) * dt + (jump - m1 * scale * dt)
        else:
            x = x + (-rate * x + u) * dt + jump
        cost = cost + 0.5 * u * u * dt
        if x < xmin:
            xmin = x
        while r < n_rec and rec_idx[r] == k + 1:
            out_rec[pth, r] = x
            r += 1

    out_term[pth] = x
    out_min[pth] = xmin
    out_cost[pth] = cost
    out_rej[pth] = rej
    return 0


def simulate_chunk(double x0, double rate, const double[::1] A, const double[::1] B,
                   double dt, double p, double m1, bint compensated,
                   int kind, double lam_over_eta, double inv_eta,
                   double ss_unit, double beta, double inv_alpha,
                   const double[:, ::1] pool_a, const double[:, ::1] pool_b,
                   const Py_ssize_t[::1] rec_idx,
                   double[:, ::1] out_rec, double[::1] out_term, double[::1] out_min,
                   double[::1] out_cost, long long[::1] out_rej, int[::1] status):
    """Run every path of the chunk; status[j] = 1 flags an exhausted pool."""
    cdef Py_ssize_t j, n_paths = pool_a.shape[0]
    with nogil:
        for j in range(n_paths):
            status[j] = _path(j, x0, rate, A, B, dt, p, m1, compensated, kind,
                              lam_over_eta, inv_eta, ss_unit, beta, inv_alpha,
                              pool_a, pool_b, rec_idx, out_rec, out_term, out_min,
                              out_cost, out_rej)


def linear_recurrence(const double[::1] a, const double[::1] b, double x0, double[::1] out):
    """out[0] = x0, out[k+1] = out[k] + a[k] * out[k] + b[k]."""
    cdef Py_ssize_t k, n = a.shape[0]
    cdef double x = x0
    with nogil:
        out[0] = x
        for k in range(n):
            x = x + a[k] * x + b[k]
            out[k + 1] = x
