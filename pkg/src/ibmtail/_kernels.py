"""Compiled per-path loops used by the samplers and estimators.

Draw layout per path (all kernels): draw 0 is the importance-sampling sign,
the remaining draws feed the path. Kernels take the Philox key words and a
global path offset, so a block of paths can be computed anywhere.
"""
import math

import numba as nb
import numpy as np

from .rng import fill_normals, ndtri, philox4x64, word_to_uniform

KIND_SUP = 0
KIND_MAX = 1
KIND_LP = 2

# exp(-40) ~ 4e-18: bridge crossing probabilities below this are dropped
_SKIP_EXPONENT = 40.0


@nb.njit(nogil=True, cache=True)
def _sign_draw(k0, k1, path, raw, buf):
    fill_normals(k0, k1, path, 0, raw, buf)
    return 1.0 if buf[0] > 0.0 else -1.0


@nb.njit(nogil=True, cache=True)
def step_paths(k0, k1, path_offset, n_paths, init_L, T, L, out):
    """Exact state-vector paths; ``out`` has shape (n_paths, n_points, m+1)."""
    d = init_L.shape[0]
    n = out.shape[1]
    raw = np.empty(4, np.uint64)
    buf = np.empty(4)
    z = np.empty(d)
    x = np.empty(d)
    for ip in range(n_paths):
        path = path_offset + ip
        block = 0
        fill_normals(k0, k1, path, block, raw, buf)
        pos = 1
        for i in range(n):
            for r in range(d):
                if pos == 4:
                    block += 1
                    fill_normals(k0, k1, path, block, raw, buf)
                    pos = 0
                z[r] = buf[pos]
                pos += 1
            if i == 0:
                for r in range(d):
                    acc = 0.0
                    for c in range(r + 1):
                        acc += init_L[r, c] * z[c]
                    x[r] = acc
            else:
                Ti = T[i - 1]
                Li = L[i - 1]
                for r in range(d - 1, -1, -1):
                    acc = 0.0
                    for c in range(r + 1):
                        acc += Ti[r, c] * x[c] + Li[r, c] * z[c]
                    x[r] = acc
            for r in range(d):
                out[ip, i, r] = x[r]


@nb.njit(nogil=True, cache=True)
def step_norms(k0, k1, path_offset, n_paths, init_L, T, L, jump_T, jump_L,
               drift, symmetric, kind, p, trap_w, stop_level,
               out_norm, out_xend, out_sign):
    """Norm of drifted X_m paths with early exit once the norm exceeds ``stop_level``.

    The path evaluated is X_m(t_i) + s * drift[i], s the per-path sign (always
    +1 unless ``symmetric``). After an early exit the state is carried to t = 1
    by one exact transition so that X_m(1) is still available; the reported
    norm is then a partial value already above ``stop_level``.
    """
    d = init_L.shape[0]
    n = drift.shape[0]
    raw = np.empty(4, np.uint64)
    buf = np.empty(4)
    z = np.empty(d)
    x = np.empty(d)
    stop_p = stop_level ** p if kind == KIND_LP else stop_level
    for ip in range(n_paths):
        path = path_offset + ip
        block = 0
        fill_normals(k0, k1, path, block, raw, buf)
        s = 1.0
        if symmetric and buf[0] <= 0.0:
            s = -1.0
        out_sign[ip] = s
        pos = 1
        acc = 0.0
        stopped_at = -1
        for i in range(n):
            for r in range(d):
                if pos == 4:
                    block += 1
                    fill_normals(k0, k1, path, block, raw, buf)
                    pos = 0
                z[r] = buf[pos]
                pos += 1
            if i == 0:
                for r in range(d):
                    a = 0.0
                    for c in range(r + 1):
                        a += init_L[r, c] * z[c]
                    x[r] = a
            else:
                Ti = T[i - 1]
                Li = L[i - 1]
                for r in range(d - 1, -1, -1):
                    a = 0.0
                    for c in range(r + 1):
                        a += Ti[r, c] * x[c] + Li[r, c] * z[c]
                    x[r] = a
            v = x[d - 1] + s * drift[i]
            if kind == KIND_SUP:
                v = abs(v)
                if v > acc:
                    acc = v
            elif kind == KIND_MAX:
                if v > acc:
                    acc = v
            else:
                acc += trap_w[i] * abs(v) ** p
            if acc > stop_p and i < n - 1:
                stopped_at = i
                break
        if stopped_at >= 0:
            for r in range(d):
                if pos == 4:
                    block += 1
                    fill_normals(k0, k1, path, block, raw, buf)
                    pos = 0
                z[r] = buf[pos]
                pos += 1
            Ti = jump_T[stopped_at]
            Li = jump_L[stopped_at]
            for r in range(d - 1, -1, -1):
                a = 0.0
                for c in range(r + 1):
                    a += Ti[r, c] * x[c] + Li[r, c] * z[c]
                x[r] = a
        out_xend[ip] = x[d - 1]
        out_norm[ip] = acc ** (1.0 / p) if kind == KIND_LP else acc


@nb.njit(nogil=True, cache=True)
def bridge_stay_two_sided(x, y, h, b):
    """P(Brownian bridge from x to y over time h stays inside (-b, b))."""
    if abs(x) >= b or abs(y) >= b:
        return 0.0
    w = 2.0 * b
    dd = y - x
    ss = x + y + w
    total = 0.0
    for k in range(0, 201):
        term = 0.0
        for sgn in range(2):
            if k == 0 and sgn == 1:
                break
            kk = float(k) if sgn == 0 else -float(k)
            e1 = 2.0 * kk * w * (dd + kk * w) / h
            e2 = ((ss + 2.0 * kk * w) ** 2 - dd * dd) / (2.0 * h)
            t1 = math.exp(-e1) if e1 < 745.0 else 0.0
            t2 = math.exp(-e2) if e2 < 745.0 else 0.0
            total += t1 - t2
            term = max(term, t1, t2)
        if k > 0 and term < 1e-20:
            break
    if total < 0.0:
        return 0.0
    if total > 1.0:
        return 1.0
    return total


@nb.njit(nogil=True, cache=True)
def bridge_stay_one_sided(x, y, h, b):
    if x >= b or y >= b:
        return 0.0
    return -math.expm1(-2.0 * (b - x) * (b - y) / h)


@nb.njit(inline="always")
def _draw(k0, k1, path, idx, cache_block, raw):
    blk = idx // 4
    if blk != cache_block[0]:
        philox4x64(np.uint64(blk), np.uint64(path), np.uint64(0), np.uint64(0), k0, k1, raw)
        cache_block[0] = blk
    return ndtri(word_to_uniform(raw[idx % 4]))


@nb.njit(nogil=True, cache=True)
def levy_bm_crossing(k0, k1, path_offset, n_paths, levels, thresholds, two_sided,
                     shift, symmetric, out_grid, out_stay, out_xend, out_sign):
    """Barrier crossing of Brownian motion plus linear drift on the dyadic grid k/2^levels.

    The path is built by midpoint (Levy) refinement from W(1). A dyadic
    interval is refined only while a Brownian bridge between its endpoints
    could cross the lowest undecided threshold with probability above
    exp(-40); otherwise no grid point inside it can matter. For each threshold
    ``out_grid`` flags a grid point beyond it and ``out_stay`` is the exact
    conditional probability, given the grid values, that the continuous path
    stays below it (zero when a grid point is already beyond).
    """
    n_thr = thresholds.shape[0]
    surv = np.empty(n_thr)
    raw = np.empty(4, np.uint64)
    buf = np.empty(4)
    cache_block = np.empty(1, np.int64)
    depth = 2 * (levels + 2)
    st_lev = np.empty(depth, np.int64)
    st_idx = np.empty(depth, np.int64)
    st_xl = np.empty(depth)
    st_xr = np.empty(depth)
    for ip in range(n_paths):
        path = path_offset + ip
        fill_normals(k0, k1, path, 0, raw, buf)
        s = 1.0
        if symmetric and buf[0] <= 0.0:
            s = -1.0
        out_sign[ip] = s
        w1 = buf[1]
        out_xend[ip] = w1
        x1 = w1 + s * shift
        for j in range(n_thr):
            surv[j] = 1.0
        nd = 0
        v = abs(x1) if two_sided else x1
        while nd < n_thr and thresholds[nd] < v:
            nd += 1
        cache_block[0] = -1
        top = 0
        if nd < n_thr:
            st_lev[0] = 0
            st_idx[0] = 0
            st_xl[0] = 0.0
            st_xr[0] = x1
            top = 1
        while top > 0 and nd < n_thr:
            top -= 1
            lev = st_lev[top]
            idx = st_idx[top]
            xl = st_xl[top]
            xr = st_xr[top]
            h = 1.0 / (1 << lev)
            if lev == levels:
                for j in range(nd, n_thr):
                    b = thresholds[j]
                    if two_sided:
                        surv[j] *= bridge_stay_two_sided(xl, xr, h, b)
                    else:
                        surv[j] *= bridge_stay_one_sided(xl, xr, h, b)
                continue
            b = thresholds[nd]
            e = 2.0 * (b - xl) * (b - xr) / h
            if two_sided:
                e = min(e, 2.0 * (b + xl) * (b + xr) / h)
            if e > _SKIP_EXPONENT:
                continue
            node = (1 << lev) + idx
            z = _draw(k0, k1, path, 2 + node, cache_block, raw)
            mid = 0.5 * (xl + xr) + math.sqrt(0.25 * h) * z
            v = abs(mid) if two_sided else mid
            while nd < n_thr and thresholds[nd] < v:
                nd += 1
            st_lev[top] = lev + 1
            st_idx[top] = 2 * idx + 1
            st_xl[top] = mid
            st_xr[top] = xr
            top += 1
            st_lev[top] = lev + 1
            st_idx[top] = 2 * idx
            st_xl[top] = xl
            st_xr[top] = mid
            top += 1
        for j in range(n_thr):
            if j < nd:
                out_grid[ip, j] = 1
                out_stay[ip, j] = 0.0
            else:
                out_grid[ip, j] = 0
                out_stay[ip, j] = surv[j]


@nb.njit(nogil=True, cache=True)
def kl_norms(k0, k1, path_offset, n_paths, sqrt_lam, shift, symmetric, stop_sq,
             out_sq, out_xi1, out_sign):
    """Squared L2 norm sum_n lambda_n Z_n^2 of KL coefficients, first one shifted.

    Draw n (n >= 1) is Z_n. Stops once the running sum exceeds ``stop_sq``.
    """
    n_terms = sqrt_lam.shape[0]
    raw = np.empty(4, np.uint64)
    buf = np.empty(4)
    for ip in range(n_paths):
        path = path_offset + ip
        block = 0
        fill_normals(k0, k1, path, block, raw, buf)
        s = 1.0
        if symmetric and buf[0] <= 0.0:
            s = -1.0
        out_sign[ip] = s
        xi = sqrt_lam[0] * buf[1]
        out_xi1[ip] = xi
        acc = (xi + s * shift) ** 2
        pos = 2
        for n in range(1, n_terms):
            if acc > stop_sq:
                break
            if pos == 4:
                block += 1
                fill_normals(k0, k1, path, block, raw, buf)
                pos = 0
            c = sqrt_lam[n] * buf[pos]
            acc += c * c
            pos += 1
        out_sq[ip] = acc
