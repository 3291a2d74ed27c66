"""Pure-numpy reference implementations of the hot kernels.

Selected by setting BOLOTOMO_KERNELS=numpy (see kernels/__init__.py).
Semantics are the contract; the numba twins in _numba.py must match them
to floating-point roundoff.
"""

import numpy as np


def conv2d_forward(x, k, b):
    """3x3 cross-correlation, stride 1, zero 'same' padding.

    x: (B, Cin, H, W), k: (Cout, Cin, 3, 3), b: (Cout,) -> (B, Cout, H, W)
    """
    B, Cin, H, W = x.shape
    Cout = k.shape[0]
    xp = np.zeros((B, Cin, H + 2, W + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    out = np.empty((B, Cout, H, W), dtype=x.dtype)
    out[:] = b[None, :, None, None]
    for ky in range(3):
        for kx in range(3):
            # (B,Cin,H,W) window . (Cout,Cin) -> (B,Cout,H,W)
            win = xp[:, :, ky:ky + H, kx:kx + W]
            out += np.einsum("oc,bchw->bohw", k[:, :, ky, kx], win, optimize=True)
    return out


def conv2d_input_grad(g, k):
    """Gradient of conv2d_forward w.r.t. x. g: (B, Cout, H, W) -> (B, Cin, H, W)."""
    B, Cout, H, W = g.shape
    Cin = k.shape[1]
    gp = np.zeros((B, Cout, H + 2, W + 2), dtype=g.dtype)
    gp[:, :, 1:-1, 1:-1] = g
    gx = np.zeros((B, Cin, H, W), dtype=g.dtype)
    for ky in range(3):
        for kx in range(3):
            win = gp[:, :, ky:ky + H, kx:kx + W]
            # full correlation with the flipped kernel
            gx += np.einsum("oc,bohw->bchw", k[:, :, 2 - ky, 2 - kx], win, optimize=True)
    return gx


def conv2d_param_grad(x, g):
    """Gradients w.r.t. kernel and bias. Returns (gk, gb)."""
    B, Cin, H, W = x.shape
    Cout = g.shape[1]
    xp = np.zeros((B, Cin, H + 2, W + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    gk = np.empty((Cout, Cin, 3, 3), dtype=x.dtype)
    for ky in range(3):
        for kx in range(3):
            win = xp[:, :, ky:ky + H, kx:kx + W]
            gk[:, :, ky, kx] = np.einsum("bohw,bchw->oc", g, win, optimize=True)
    gb = g.sum(axis=(0, 2, 3))
    return gk, gb


def sgd_update(param, grad, lr: float):
    """In-place p -= lr * g."""
    param -= lr * grad


def siddon_trace(x0, y0, x1, y1, nx, ny, cell_w, cell_h, org_x, org_y):
    """Chord lengths of the segment (x0,y0)-(x1,y1) through an nx-by-ny cell grid.

    Returns (flat_pixel_index, length) arrays ordered along the ray; pixels
    are indexed row-major as j*nx + i. Segments outside the grid contribute
    nothing; callers clip to the domain beforehand for exact row sums.
    """
    dx = x1 - x0
    dy = y1 - y0
    length = np.hypot(dx, dy)
    if length == 0.0:
        return np.empty(0, np.int64), np.empty(0, np.float64)
    ts = [0.0, 1.0]
    if dx != 0.0:
        t = (org_x + np.arange(nx + 1) * cell_w - x0) / dx
        ts.append(t[(t > 0.0) & (t < 1.0)])
    if dy != 0.0:
        t = (org_y + np.arange(ny + 1) * cell_h - y0) / dy
        ts.append(t[(t > 0.0) & (t < 1.0)])
    ts = np.unique(np.concatenate([np.atleast_1d(np.asarray(v, np.float64)) for v in ts]))
    mids = (ts[:-1] + ts[1:]) * 0.5
    segs = np.diff(ts) * length
    mx = x0 + mids * dx
    my = y0 + mids * dy
    i = np.floor((mx - org_x) / cell_w).astype(np.int64)
    j = np.floor((my - org_y) / cell_h).astype(np.int64)
    ok = (i >= 0) & (i < nx) & (j >= 0) & (j < ny) & (segs > 0.0)
    return (j[ok] * nx + i[ok]).astype(np.int64), segs[ok]
