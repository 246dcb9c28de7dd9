# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled path kernels and the projected SOR sweep.

Each path is simulated to completion before the next one starts, so the
inner loop runs without the GIL and touches only scalars.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log1p, exp, expm1, cos, sin, fabs, M_PI

cnp.import_array()

BACKEND = "cython"

ctypedef unsigned long long u64
cdef extern from *:
    """
    typedef unsigned __int128 reflect_u128;
    """
    # declared narrower for Cython's type checker; C sees the 128-bit type
    ctypedef unsigned long long u128 "reflect_u128"

cdef u64 M0 = 0xD2E7470EE14C6C93ULL
cdef u64 M1 = 0xCA5A826395121157ULL
cdef u64 W0 = 0x9E3779B97F4A7C15ULL
cdef u64 W1 = 0xBB67AE8584CAA73BULL

# parameter layout, see params.py
cdef enum:
    A1 = 0
    B11 = 1
    B22 = 2
    SIG = 3
    SIG_KIND = 4
    Q11 = 5
    Q12 = 6
    Q22 = 7
    C1 = 8
    C2 = 12
    PHI = 16
    RHO = 20
    K_PLUS = 21
    K_MINUS = 22


cdef inline void philox(u64 c0, u64 c1, u64 c2, u64 c3, u64 k0, u64 k1, u64* out) noexcept nogil:
    cdef u128 p0, p1
    cdef u64 t0, t2
    cdef int r
    for r in range(10):
        if r:
            k0 += W0
            k1 += W1
        p0 = <u128>M0 * c0
        p1 = <u128>M1 * c2
        t0 = (<u64>(p1 >> 64)) ^ c1 ^ k0
        t2 = (<u64>(p0 >> 64)) ^ c3 ^ k1
        c1 = <u64>p1
        c3 = <u64>p0
        c0 = t0
        c2 = t2
    out[0] = c0
    out[1] = c1
    out[2] = c2
    out[3] = c3


cdef inline void normals(u64 seed, u64 stream, u64 step, u64 path, double* z) noexcept nogil:
    cdef u64 w[4]
    philox(step, path, 0, 0, seed, stream, w)
    cdef double u1 = <double>(w[0] >> 11) * (1.0 / 9007199254740992.0)
    cdef double u2 = <double>(w[1] >> 11) * (1.0 / 9007199254740992.0)
    cdef double r = sqrt(-2.0 * log1p(-u1))
    cdef double th = 2.0 * M_PI * u2
    z[0] = r * cos(th)
    z[1] = r * sin(th)


def philox_block(u64 c0, u64 c1, u64 c2, u64 c3, u64 k0, u64 k1):
    cdef u64 w[4]
    philox(c0, c1, c2, c3, k0, k1, w)
    return (w[0], w[1], w[2], w[3])


def normal_pairs(u64 seed, u64 stream, u64 step, const u64[::1] paths):
    cdef Py_ssize_t i, n = paths.shape[0]
    out = np.empty((2, n))
    cdef double[:, ::1] o = out
    cdef double z[2]
    for i in range(n):
        normals(seed, stream, step, paths[i], z)
        o[0, i] = z[0]
        o[1, i] = z[1]
    return out[0], out[1]


cdef inline double curve(const double* p, int k, double y) noexcept nogil:
    cdef double z
    if p[k] == 0:
        return p[k + 1] + p[k + 2] * y + p[k + 3] * y * y
    z = y - p[k + 2]
    return p[k + 1] * ((z if z > 0 else 0.0) + log1p(exp(-fabs(z)))) + p[k + 3] * y


cdef inline double cost(const double* p, double x1, double x2) noexcept nogil:
    return p[Q11] * x1 * x1 + p[Q12] * x1 * x2 + p[Q22] * x2 * x2 + curve(p, C1, x1) + curve(p, C2, x2)


cdef inline int euler(const double* p, double x1, double x2, double z1, double z2, double dt, double sq,
                      double* y) noexcept nogil:
    """One Euler step; returns 1 if a linear-volatility step was rejected."""
    cdef int kind = <int>p[SIG_KIND]
    cdef double s = p[SIG], s1, s2
    cdef double b1 = p[A1] + p[B11] * x1
    cdef double b2 = curve(p, PHI, x1) + p[B22] * x2
    if kind == 0:
        s1 = s
        s2 = s
    elif kind == 1:
        s1 = s * x1
        s2 = s * x2
    else:
        s1 = 0.0
        s2 = s
    y[0] = x1 + b1 * dt + s1 * sq * z1
    y[1] = x2 + b2 * dt + s2 * sq * z2
    if kind == 1 and (y[0] <= 0 or y[1] <= 0):
        y[0] = x1
        y[1] = x2
        return 1
    return 0


cdef inline void rows(const double* L, const double* R, int n2, double x2min, double h2, double y2,
                      double* lo, double* hi) noexcept nogil:
    cdef double t = (y2 - x2min) / h2
    cdef int j = <int>t
    if j > n2 - 2:
        j = n2 - 2
    cdef double a = t - j
    lo[0] = (1 - a) * L[j] + a * L[j + 1]
    hi[0] = (1 - a) * R[j] + a * R[j + 1]


def simulate_record(const double[::1] p, const double[::1] L, const double[::1] R, double x2min, double x2max,
                    double h2, const double[:, ::1] x0, const double[::1] v0, const u64[::1] path_ids,
                    long n_steps, double dt, long stride, u64 seed, u64 stream):
    cdef Py_ssize_t P = x0.shape[0], n_rec = n_steps // stride + 1
    cdef int n2 = L.shape[0]
    rec_arr = np.empty((6, P, n_rec))
    cdef double[:, :, ::1] rec = rec_arr
    rej_arr = np.zeros(P, dtype=np.int64)
    cdef long long[::1] rej = rej_arr
    buf_arr = np.empty((n_steps, 7))
    cdef double[:, ::1] buf = buf_arr
    cdef Py_ssize_t i, cnt
    cdef long k
    cdef double x1, x2, xip, xim, lo, hi, d, sq = sqrt(dt)
    cdef double z[2]
    cdef double y[2]
    cdef long bad = -1
    events = []
    for i in range(P):
        x1 = x0[i, 0]
        x2 = x0[i, 1]
        xip = v0[i] if v0[i] > 0 else 0.0
        xim = -v0[i] if v0[i] < 0 else 0.0
        rec[0, i, 0] = x1
        rec[1, i, 0] = x2
        rec[2, i, 0] = xip - xim
        rec[3, i, 0] = xip + xim
        rec[4, i, 0] = xip
        rec[5, i, 0] = xim
        cnt = 0
        with nogil:
            for k in range(1, n_steps + 1):
                normals(seed, stream, <u64>k, path_ids[i], z)
                rej[i] += euler(&p[0], x1, x2, z[0], z[1], dt, sq, y)
                if y[1] < x2min or y[1] > x2max:
                    bad = i
                    break
                rows(&L[0], &R[0], n2, x2min, h2, y[1], &lo, &hi)
                if y[0] > hi:
                    d = hi - y[0]
                elif y[0] < lo:
                    d = lo - y[0]
                else:
                    d = 0.0
                if d != 0.0:
                    buf[cnt, 0] = i
                    buf[cnt, 1] = k
                    buf[cnt, 2] = y[0]
                    buf[cnt, 3] = y[1]
                    buf[cnt, 4] = x1
                    buf[cnt, 5] = x2
                    buf[cnt, 6] = d
                    cnt += 1
                    if d > 0:
                        xip += d
                    else:
                        xim -= d
                x1 = y[0] + d
                x2 = y[1]
                if k % stride == 0:
                    rec[0, i, k // stride] = x1
                    rec[1, i, k // stride] = x2
                    rec[2, i, k // stride] = xip - xim
                    rec[3, i, k // stride] = xip + xim
                    rec[4, i, k // stride] = xip
                    rec[5, i, k // stride] = xim
        if bad >= 0:
            return rec_arr, None, rej_arr, bad
        if cnt:
            events.append(buf_arr[:cnt].copy())
    ev = np.concatenate(events) if events else np.empty((0, 7))
    return rec_arr, ev, rej_arr, -1


def cost_multi(const double[::1] p, const double[:, ::1] Ls, const double[:, ::1] Rs, double x2min, double x2max,
               double h2, const double[:, ::1] x0s, const u64[::1] path_ids, long n_steps, double dt, u64 seed,
               u64 stream):
    cdef Py_ssize_t K = Ls.shape[0], P = path_ids.shape[0], q, i
    cdef int n2 = Ls.shape[1]
    run_arr = np.zeros((K, P))
    var_arr = np.zeros((K, P))
    rej_arr = np.zeros((K, P), dtype=np.int64)
    cdef double[:, ::1] run = run_arr
    cdef double[:, ::1] var = var_arr
    cdef long long[:, ::1] rej = rej_arr
    x1_arr = np.empty(K)
    x2_arr = np.empty(K)
    hp_arr = np.empty(K)
    cdef double[::1] x1 = x1_arr
    cdef double[::1] x2 = x2_arr
    cdef double[::1] hprev = hp_arr
    cdef double rho = p[RHO], kp = p[K_PLUS], km = p[K_MINUS], sq = sqrt(dt)
    cdef double fac = exp(-rho * dt), disc, nd, lo, hi, d, hnew
    cdef double z[2]
    cdef double y[2]
    cdef long k
    cdef long bad = -1
    with nogil:
        for i in range(P):
            for q in range(K):
                x1[q] = x0s[q, 0]
                x2[q] = x0s[q, 1]
                hprev[q] = cost(&p[0], x1[q], x2[q])
            disc = 1.0
            for k in range(1, n_steps + 1):
                normals(seed, stream, <u64>k, path_ids[i], z)
                nd = disc * fac
                for q in range(K):
                    rej[q, i] += euler(&p[0], x1[q], x2[q], z[0], z[1], dt, sq, y)
                    if y[1] < x2min or y[1] > x2max:
                        bad = i
                        break
                    rows(&Ls[q, 0], &Rs[q, 0], n2, x2min, h2, y[1], &lo, &hi)
                    if y[0] > hi:
                        d = hi - y[0]
                        var[q, i] += disc * km * (-d)
                    elif y[0] < lo:
                        d = lo - y[0]
                        var[q, i] += disc * kp * d
                    else:
                        d = 0.0
                    x1[q] = y[0] + d
                    x2[q] = y[1]
                    hnew = cost(&p[0], x1[q], x2[q])
                    run[q, i] += 0.5 * dt * (disc * hprev[q] + nd * hnew)
                    hprev[q] = hnew
                if bad >= 0:
                    break
                disc = nd
            if bad >= 0:
                break
    return run_arr, var_arr, rej_arr, bad


cdef inline double bilinear(const double[:, ::1] F, double x1min, double h1, double x2min, double h2,
                            double y1, double y2) noexcept nogil:
    cdef int n2 = F.shape[0], n1 = F.shape[1]
    cdef double s = (y1 - x1min) / h1, t = (y2 - x2min) / h2
    if s < 0:
        s = 0
    if s > n1 - 1.0:
        s = n1 - 1.0
    if t < 0:
        t = 0
    if t > n2 - 1.0:
        t = n2 - 1.0
    cdef int i = <int>s, j = <int>t
    if i > n1 - 2:
        i = n1 - 2
    if j > n2 - 2:
        j = n2 - 2
    cdef double a = s - i, b = t - j
    return (1 - a) * (1 - b) * F[j, i] + a * (1 - b) * F[j, i + 1] + (1 - a) * b * F[j + 1, i] + a * b * F[j + 1, i + 1]


def stopped_functional(const double[::1] p, const double[:, ::1] level, const double[:, ::1] F1,
                       const double[:, ::1] F2, geom, double lo, double hi, double shift_lo, double shift_hi,
                       double w_c, double w_d, double disc_rate, double pay_lo, double pay_hi, x0,
                       const u64[::1] path_ids, long n_steps, double dt, u64 seed, u64 stream):
    cdef double x1min = geom[0], h1 = geom[1], x2min = geom[2], h2 = geom[3], x2max = geom[4]
    cdef double x10 = x0[0], x20 = x0[1]
    cdef Py_ssize_t P = path_ids.shape[0], i
    val_arr = np.zeros(P)
    side_arr = np.zeros(P, dtype=np.int64)
    tau_arr = np.full(P, np.inf)
    cdef double[::1] value = val_arr
    cdef long long[::1] side = side_arr
    cdef double[::1] tau = tau_arr
    cdef double x1, x2, fprev, fnew, disc, nd, t, sq = sqrt(dt), fac = exp(-disc_rate * dt)
    cdef double z[2]
    cdef double y[2]
    cdef long k
    cdef long bad = -1
    cdef int s
    with nogil:
        for i in range(P):
            x1 = x10
            x2 = x20
            disc = 1.0
            s = _stop(level, x1min, h1, x2min, h2, x1, x2, lo, hi, shift_lo, shift_hi)
            if s:
                side[i] = s
                tau[i] = 0.0
                value[i] = pay_lo if s == 1 else pay_hi
                continue
            fprev = bilinear(F1, x1min, h1, x2min, h2, x1, x2)
            for k in range(1, n_steps + 1):
                normals(seed, stream, <u64>k, path_ids[i], z)
                euler(&p[0], x1, x2, z[0], z[1], dt, sq, y)
                if y[1] < x2min or y[1] > x2max:
                    bad = i
                    break
                t = k * dt
                nd = disc * fac
                fnew = bilinear(F1, x1min, h1, x2min, h2, y[0], y[1])
                if w_c != 0.0:
                    fnew = fnew + bilinear(F2, x1min, h1, x2min, h2, y[0], y[1]) * (w_c * expm1(w_d * t) / w_d)
                value[i] += 0.5 * dt * (disc * fprev + nd * fnew)
                x1 = y[0]
                x2 = y[1]
                fprev = fnew
                disc = nd
                s = _stop(level, x1min, h1, x2min, h2, x1, x2, lo, hi, shift_lo, shift_hi)
                if s:
                    side[i] = s
                    tau[i] = t
                    value[i] += (pay_lo if s == 1 else pay_hi) * disc
                    break
            if bad >= 0:
                break
    return val_arr, side_arr, tau_arr, bad


cdef inline int _stop(const double[:, ::1] level, double x1min, double h1, double x2min, double h2, double x1,
                      double x2, double lo, double hi, double shift_lo, double shift_hi) noexcept nogil:
    if bilinear(level, x1min, h1, x2min, h2, x1 + shift_lo, x2) <= lo:
        return 1
    if bilinear(level, x1min, h1, x2min, h2, x1 + shift_hi, x2) >= hi:
        return 2
    return 0


def psor(const double[:, ::1] diag, const double[:, ::1] e, const double[:, ::1] w, const double[:, ::1] n,
         const double[:, ::1] s, const double[:, ::1] rhs, U_in, double lower, double upper, double omega,
         double tol, long max_sweeps):
    U_arr = np.array(U_in, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] U = U_arr
    cdef Py_ssize_t n2 = U.shape[0], n1 = U.shape[1], i, j
    cdef double change = 0.0, gs, new, dlt
    cdef long sweep
    with nogil:
        for sweep in range(1, max_sweeps + 1):
            change = 0.0
            for j in range(1, n2 - 1):
                for i in range(1, n1 - 1):
                    gs = (rhs[j, i] + e[j, i] * U[j, i + 1] + w[j, i] * U[j, i - 1] + n[j, i] * U[j + 1, i]
                          + s[j, i] * U[j - 1, i]) / diag[j, i]
                    new = U[j, i] + omega * (gs - U[j, i])
                    if new < lower:
                        new = lower
                    elif new > upper:
                        new = upper
                    dlt = fabs(new - U[j, i])
                    if dlt > change:
                        change = dlt
                    U[j, i] = new
            for i in range(1, n1 - 1):
                new = 2 * U[1, i] - U[2, i]
                new = lower if new < lower else (upper if new > upper else new)
                dlt = fabs(new - U[0, i])
                if dlt > change:
                    change = dlt
                U[0, i] = new
                new = 2 * U[n2 - 2, i] - U[n2 - 3, i]
                new = lower if new < lower else (upper if new > upper else new)
                dlt = fabs(new - U[n2 - 1, i])
                if dlt > change:
                    change = dlt
                U[n2 - 1, i] = new
            for j in range(n2):
                dlt = fabs(U[j, 1] - U[j, 0])
                if dlt > change:
                    change = dlt
                U[j, 0] = U[j, 1]
                dlt = fabs(U[j, n1 - 2] - U[j, n1 - 1])
                if dlt > change:
                    change = dlt
                U[j, n1 - 1] = U[j, n1 - 2]
            if change < tol:
                break
    return U_arr, sweep, change
