"""Pure numpy implementations of the hot loops.

Path kernels are vectorised across paths and loop over time steps; the
obstacle solver uses red-black ordering so each half sweep is one array
expression.  Same contracts as the compiled module.
"""
import numpy as np

from ..rng import normal_pair
from .params import (
    A1, B11, B22, C1, C2, K_MINUS, K_PLUS, PHI, Q11, Q12, Q22, RHO, SIG, SIG_KIND, SIG_CONST, SIG_LINEAR,
)

BACKEND = "python"


def _curve(p, k, y):
    kind = p[k]
    if kind == 0:
        return p[k + 1] + p[k + 2] * y + p[k + 3] * y * y
    return p[k + 1] * np.logaddexp(0.0, y - p[k + 2]) + p[k + 3] * y


def running_cost(p, x1, x2):
    return p[Q11] * x1 * x1 + p[Q12] * x1 * x2 + p[Q22] * x2 * x2 + _curve(p, C1, x1) + _curve(p, C2, x2)


def _drift(p, x1, x2):
    return p[A1] + p[B11] * x1, _curve(p, PHI, x1) + p[B22] * x2


def _vol(p, x1, x2):
    kind = int(p[SIG_KIND])
    s = p[SIG]
    if kind == SIG_CONST:
        return np.full_like(x1, s), np.full_like(x2, s)
    if kind == SIG_LINEAR:
        return s * x1, s * x2
    return np.zeros_like(x1), np.full_like(x2, s)


def _row_lookup(L, R, x2min, h2, y2):
    n2 = L.shape[-1]
    t = (y2 - x2min) / h2
    j = np.minimum(t.astype(np.int64), n2 - 2)
    a = t - j
    return (1 - a) * L[..., j] + a * L[..., j + 1], (1 - a) * R[..., j] + a * R[..., j + 1]


def _euler(p, x1, x2, z1, z2, dt, sq):
    b1, b2 = _drift(p, x1, x2)
    s1, s2 = _vol(p, x1, x2)
    return x1 + b1 * dt + s1 * sq * z1, x2 + b2 * dt + s2 * sq * z2


def _advance(p, x1, x2, z1, z2, dt, sq, linear, rejected):
    y1, y2 = _euler(p, x1, x2, z1, z2, dt, sq)
    if linear:
        bad = (y1 <= 0) | (y2 <= 0)
        if bad.any():
            rejected += bad
            y1 = np.where(bad, x1, y1)
            y2 = np.where(bad, x2, y2)
    return y1, y2


def _check_rows(y2, x2min, x2max):
    out = (y2 < x2min) | (y2 > x2max)
    if out.any():
        return int(np.flatnonzero(out)[0])
    return -1


def simulate_record(p, L, R, x2min, x2max, h2, x0, v0, path_ids, n_steps, dt, stride, seed, stream):
    """Projected Euler paths with recorded states and push events.

    Returns ``(rec, events, rejected, bad_path)``; ``bad_path`` is the first
    path index that left the x2 range (or -1).
    """
    P = x0.shape[0]
    sq = np.sqrt(dt)
    linear = int(p[SIG_KIND]) == SIG_LINEAR
    x1, x2 = x0[:, 0].copy(), x0[:, 1].copy()
    xip = np.maximum(v0, 0.0).astype(float)
    xim = np.maximum(-v0, 0.0).astype(float)
    n_rec = n_steps // stride + 1
    rec = np.empty((6, P, n_rec))
    rec[:, :, 0] = np.stack([x1, x2, xip - xim, xip + xim, xip, xim])
    rejected = np.zeros(P, dtype=np.int64)
    ev = []
    ids = np.asarray(path_ids, dtype=np.uint64)
    for k in range(1, n_steps + 1):
        z1, z2 = normal_pair(seed, stream, k, ids)
        y1, y2 = _advance(p, x1, x2, z1, z2, dt, sq, linear, rejected)
        bad = _check_rows(y2, x2min, x2max)
        if bad >= 0:
            return rec, None, rejected, bad
        lo, hi = _row_lookup(L, R, x2min, h2, y2)
        d = np.where(y1 > hi, hi - y1, np.where(y1 < lo, lo - y1, 0.0))
        hit = np.flatnonzero(d != 0.0)
        if hit.size:
            ev.append(np.column_stack([hit, np.full(hit.size, k), y1[hit], y2[hit], x1[hit], x2[hit], d[hit]]))
        x1, x2 = y1 + d, y2
        xip += np.maximum(d, 0.0)
        xim += np.maximum(-d, 0.0)
        if k % stride == 0:
            rec[:, :, k // stride] = np.stack([x1, x2, xip - xim, xip + xim, xip, xim])
    events = np.concatenate(ev) if ev else np.empty((0, 7))
    if events.size:
        events = events[np.lexsort((events[:, 1], events[:, 0]))]
    return rec, events, rejected, -1


def cost_multi(p, Ls, Rs, x2min, x2max, h2, x0s, path_ids, n_steps, dt, seed, stream):
    """Discounted running and variation cost for K region variants driven by common noise.

    ``Ls``, ``Rs`` have shape (K, n2); ``x0s`` (K, 2) are already projected.
    Returns ``(run, var, rejected, bad)`` with run/var of shape (K, P).
    """
    K = Ls.shape[0]
    ids = np.asarray(path_ids, dtype=np.uint64)
    P = ids.size
    sq = np.sqrt(dt)
    rho = p[RHO]
    kp, km = p[K_PLUS], p[K_MINUS]
    linear = int(p[SIG_KIND]) == SIG_LINEAR
    x1 = np.repeat(x0s[:, 0:1], P, axis=1)
    x2 = np.repeat(x0s[:, 1:2], P, axis=1)
    run = np.zeros((K, P))
    var = np.zeros((K, P))
    rejected = np.zeros((K, P), dtype=np.int64)
    disc = 1.0
    fac = np.exp(-rho * dt)
    h_prev = running_cost(p, x1, x2)
    for k in range(1, n_steps + 1):
        z1, z2 = normal_pair(seed, stream, k, ids)
        y1, y2 = _advance(p, x1, x2, z1[None, :], z2[None, :], dt, sq, linear, rejected)
        bad = _check_rows(y2.ravel(), x2min, x2max)
        if bad >= 0:
            return run, var, rejected, bad % P
        lo = np.empty_like(y1)
        hi = np.empty_like(y1)
        for q in range(K):
            lo[q], hi[q] = _row_lookup(Ls[q], Rs[q], x2min, h2, y2[q])
        d = np.where(y1 > hi, hi - y1, np.where(y1 < lo, lo - y1, 0.0))
        var += disc * (kp * np.maximum(d, 0.0) + km * np.maximum(-d, 0.0))
        x1, x2 = y1 + d, y2
        nd = disc * fac
        h_new = running_cost(p, x1, x2)
        run += 0.5 * dt * (disc * h_prev + nd * h_new)
        h_prev, disc = h_new, nd
    return run, var, rejected, -1


def _bilinear(F, x1min, h1, x2min, h2, y1, y2):
    n2, n1 = F.shape
    s = np.clip((y1 - x1min) / h1, 0.0, n1 - 1.0)
    t = np.clip((y2 - x2min) / h2, 0.0, n2 - 1.0)
    i = np.minimum(s.astype(np.int64), n1 - 2)
    j = np.minimum(t.astype(np.int64), n2 - 2)
    a, b = s - i, t - j
    return (1 - a) * (1 - b) * F[j, i] + a * (1 - b) * F[j, i + 1] + (1 - a) * b * F[j + 1, i] + a * b * F[j + 1, i + 1]


def stopped_functional(p, level, F1, F2, geom, lo, hi, shift_lo, shift_hi, w_c, w_d, disc_rate, pay_lo, pay_hi,
                       x0, path_ids, n_steps, dt, seed, stream):
    """Uncontrolled paths stopped when the level field leaves (lo, hi).

    Accumulates ``int e^{-r t} (F1 + F2 w(t)) dt`` up to the stop, plus the
    discounted payoff of the side that stopped.  ``w(t) = w_c (e^{w_d t} - 1)/w_d``
    (``w_c = 0`` disables the second integrand).  Returns ``(value, side, tau, bad)``.
    """
    x1min, h1, x2min, h2, x2max = geom
    ids = np.asarray(path_ids, dtype=np.uint64)
    P = ids.size
    sq = np.sqrt(dt)
    linear = int(p[SIG_KIND]) == SIG_LINEAR
    x1 = np.full(P, float(x0[0]))
    x2 = np.full(P, float(x0[1]))
    value = np.zeros(P)
    side = np.zeros(P, dtype=np.int64)
    tau = np.full(P, np.inf)
    alive = np.ones(P, dtype=bool)
    rejected = np.zeros(P, dtype=np.int64)

    def weight(t):
        if w_c == 0.0:
            return 0.0
        return w_c * np.expm1(w_d * t) / w_d

    def integrand(y1, y2, t):
        f = _bilinear(F1, x1min, h1, x2min, h2, y1, y2)
        if w_c != 0.0:
            f = f + _bilinear(F2, x1min, h1, x2min, h2, y1, y2) * weight(t)
        return f

    def check(y1, y2, t, disc, mask):
        lv_lo = _bilinear(level, x1min, h1, x2min, h2, y1 + shift_lo, y2)
        lv_hi = _bilinear(level, x1min, h1, x2min, h2, y1 + shift_hi, y2)
        s_lo = mask & (lv_lo <= lo)
        s_hi = mask & ~s_lo & (lv_hi >= hi)
        value[s_lo] += pay_lo * disc
        value[s_hi] += pay_hi * disc
        side[s_lo], side[s_hi] = 1, 2
        tau[s_lo | s_hi] = t
        return mask & ~(s_lo | s_hi)

    alive = check(x1, x2, 0.0, 1.0, alive)
    f_prev = integrand(x1, x2, 0.0)
    disc = 1.0
    fac = np.exp(-disc_rate * dt)
    for k in range(1, n_steps + 1):
        if not alive.any():
            break
        z1, z2 = normal_pair(seed, stream, k, ids)
        y1, y2 = _advance(p, x1, x2, z1, z2, dt, sq, linear, rejected)
        out = alive & ((y2 < x2min) | (y2 > x2max))
        if out.any():
            return value, side, tau, int(np.flatnonzero(out)[0])
        t = k * dt
        nd = disc * fac
        f_new = integrand(y1, y2, t)
        value[alive] += (0.5 * dt * (disc * f_prev + nd * f_new))[alive]
        x1 = np.where(alive, y1, x1)
        x2 = np.where(alive, y2, x2)
        f_prev, disc = f_new, nd
        alive = check(x1, x2, t, disc, alive)
    return value, side, tau, -1


def psor(diag, e, w, n, s, rhs, U, lower, upper, omega, tol, max_sweeps):
    """Projected SOR on the interior; zero slope across the x1 edges, clamped linear extrapolation at the x2 edges.

    Red-black ordering.  Returns ``(U, sweeps, change)``.
    """
    U = U.copy()
    n2, n1 = U.shape
    J, I = np.mgrid[1 : n2 - 1, 1 : n1 - 1]
    colours = [((J + I) % 2 == c) for c in (0, 1)]
    Di, Ei, Wi, Ni, Si, Ri = (a[1:-1, 1:-1] for a in (diag, e, w, n, s, rhs))
    change = np.inf
    for sweep in range(1, max_sweeps + 1):
        change = 0.0
        for mask in colours:
            core = U[1:-1, 1:-1]
            gs = (Ri + Ei * U[1:-1, 2:] + Wi * U[1:-1, :-2] + Ni * U[2:, 1:-1] + Si * U[:-2, 1:-1]) / Di
            new = np.clip(core + omega * (gs - core), lower, upper)
            delta = np.abs(new - core)[mask]
            if delta.size:
                change = max(change, float(delta.max()))
            core[mask] = new[mask]
        for j, (a, b) in ((0, (1, 2)), (n2 - 1, (n2 - 2, n2 - 3))):
            ext = np.clip(2 * U[a, 1:-1] - U[b, 1:-1], lower, upper)
            change = max(change, float(np.max(np.abs(ext - U[j, 1:-1]))))
            U[j, 1:-1] = ext
        for a, b in ((0, 1), (n1 - 1, n1 - 2)):
            change = max(change, float(np.max(np.abs(U[:, b] - U[:, a]))))
            U[:, a] = U[:, b]
        if change < tol:
            return U, sweep, change
    return U, max_sweeps, change
