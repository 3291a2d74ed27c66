"""Numba-compiled hot kernels.

Same contracts as _numpy.py. Parallel loops are arranged so that each
thread owns a disjoint output slice and accumulates sequentially, which
makes results bit-identical for any thread count. Inner loops run along
the contiguous width axis with a small row accumulator so the 3x3 stencil
vectorizes.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True, fastmath=True, parallel=True)
def _conv2d_forward(xp, k, b, out):
    B, Cin, Hp, Wp = xp.shape
    Cout = k.shape[0]
    H = Hp - 2
    W = Wp - 2
    for idx in prange(B * Cout):
        s = idx // Cout
        co = idx % Cout
        for y in range(H):
            row = np.empty(W, out.dtype)
            for x in range(W):
                row[x] = b[co]
            for ci in range(Cin):
                for ky in range(3):
                    base = xp[s, ci, y + ky]
                    w0 = k[co, ci, ky, 0]
                    w1 = k[co, ci, ky, 1]
                    w2 = k[co, ci, ky, 2]
                    for x in range(W):
                        row[x] += w0 * base[x] + w1 * base[x + 1] + w2 * base[x + 2]
            for x in range(W):
                out[s, co, y, x] = row[x]


def conv2d_forward(x, k, b):
    B, Cin, H, W = x.shape
    xp = np.zeros((B, Cin, H + 2, W + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    out = np.empty((B, k.shape[0], H, W), dtype=x.dtype)
    _conv2d_forward(xp, k, b, out)
    return out


@njit(cache=True, fastmath=True, parallel=True)
def _conv2d_input_grad(gp, k, gx):
    B, Cout, Hp, Wp = gp.shape
    Cin = k.shape[1]
    H = Hp - 2
    W = Wp - 2
    for idx in prange(B * Cin):
        s = idx // Cin
        ci = idx % Cin
        for y in range(H):
            row = np.zeros(W, gx.dtype)
            for co in range(Cout):
                for ky in range(3):
                    base = gp[s, co, y + ky]
                    # full correlation with the flipped kernel
                    w0 = k[co, ci, 2 - ky, 2]
                    w1 = k[co, ci, 2 - ky, 1]
                    w2 = k[co, ci, 2 - ky, 0]
                    for x in range(W):
                        row[x] += w0 * base[x] + w1 * base[x + 1] + w2 * base[x + 2]
            for x in range(W):
                gx[s, ci, y, x] = row[x]


def conv2d_input_grad(g, k):
    B, Cout, H, W = g.shape
    gp = np.zeros((B, Cout, H + 2, W + 2), dtype=g.dtype)
    gp[:, :, 1:-1, 1:-1] = g
    gx = np.empty((B, k.shape[1], H, W), dtype=g.dtype)
    _conv2d_input_grad(gp, k, gx)
    return gx


@njit(cache=True, fastmath=True, parallel=True)
def _conv2d_param_grad(xp, g, gk, gb):
    B, Cout, H, W = g.shape
    Cin = xp.shape[1]
    for co in prange(Cout):
        acc_b = 0.0
        for s in range(B):
            for y in range(H):
                gr = g[s, co, y]
                for x in range(W):
                    acc_b += gr[x]
        gb[co] = acc_b
        for ci in range(Cin):
            for ky in range(3):
                a0 = 0.0
                a1 = 0.0
                a2 = 0.0
                for s in range(B):
                    for y in range(H):
                        gr = g[s, co, y]
                        base = xp[s, ci, y + ky]
                        for x in range(W):
                            a0 += gr[x] * base[x]
                            a1 += gr[x] * base[x + 1]
                            a2 += gr[x] * base[x + 2]
                gk[co, ci, ky, 0] = a0
                gk[co, ci, ky, 1] = a1
                gk[co, ci, ky, 2] = a2


def conv2d_param_grad(x, g):
    B, Cin, H, W = x.shape
    Cout = g.shape[1]
    xp = np.zeros((B, Cin, H + 2, W + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    gk = np.empty((Cout, Cin, 3, 3), dtype=x.dtype)
    gb = np.empty(Cout, dtype=x.dtype)
    _conv2d_param_grad(xp, g, gk, gb)
    return gk, gb


@njit(cache=True, fastmath=True, parallel=True)
def _saxpy_update(p, g, lr):
    for i in prange(p.size):
        p[i] -= lr * g[i]


def sgd_update(param, grad, lr: float):
    """In-place p -= lr * g without temporaries."""
    _saxpy_update(param.reshape(-1), np.ascontiguousarray(grad).reshape(-1),
                  param.dtype.type(lr))


@njit(cache=True)
def _siddon_trace(x0, y0, x1, y1, nx, ny, cell_w, cell_h, org_x, org_y):
    dx = x1 - x0
    dy = y1 - y0
    length = np.sqrt(dx * dx + dy * dy)
    cap = nx + ny + 4
    pix = np.empty(cap, np.int64)
    seg = np.empty(cap, np.float64)
    if length == 0.0:
        return pix[:0], seg[:0]
    # collect parameter values of all grid-line crossings inside (0, 1)
    ts = np.empty(cap + 2, np.float64)
    m = 0
    ts[m] = 0.0
    m += 1
    ts[m] = 1.0
    m += 1
    if dx != 0.0:
        for i in range(nx + 1):
            t = (org_x + i * cell_w - x0) / dx
            if 0.0 < t < 1.0:
                ts[m] = t
                m += 1
    if dy != 0.0:
        for j in range(ny + 1):
            t = (org_y + j * cell_h - y0) / dy
            if 0.0 < t < 1.0:
                ts[m] = t
                m += 1
    tv = np.sort(ts[:m])
    n = 0
    for a in range(m - 1):
        t0 = tv[a]
        t1 = tv[a + 1]
        if t1 <= t0:
            continue
        tm = 0.5 * (t0 + t1)
        i = int(np.floor((x0 + tm * dx - org_x) / cell_w))
        j = int(np.floor((y0 + tm * dy - org_y) / cell_h))
        if 0 <= i < nx and 0 <= j < ny:
            pix[n] = j * nx + i
            seg[n] = (t1 - t0) * length
            n += 1
    return pix[:n].copy(), seg[:n].copy()


def siddon_trace(x0, y0, x1, y1, nx, ny, cell_w, cell_h, org_x, org_y):
    return _siddon_trace(float(x0), float(y0), float(x1), float(y1),
                         nx, ny, float(cell_w), float(cell_h),
                         float(org_x), float(org_y))
