"""Hot numeric kernels: numba fast path with a pure-numpy fallback.

The numba path is used when numba imports successfully, unless the
environment variable ``CVLPS_NUMBA`` is set to ``0``/``false``/``off``.
``set_numba()`` switches backends at runtime (tests and the benchmark use
it). Both paths compute identical sums in compatible orders; tests pin
their agreement to 1e-12 per sample.

All convolutions are circular (wrap-around) cross-correlations with
stride 1; higher strides are plain subsampling of the stride-1 result and
live elsewhere.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap if not (args and callable(args[0])) else args[0]


_env = os.environ.get("CVLPS_NUMBA", "1").strip().lower()
_enabled = _HAVE_NUMBA and _env not in ("0", "false", "off")


def numba_enabled() -> bool:
    return _enabled


def set_numba(flag: bool) -> bool:
    """Enable/disable the numba path; returns the effective setting."""
    global _enabled
    _enabled = bool(flag) and _HAVE_NUMBA
    return _enabled


# ---------------------------------------------------------------------------
# circular cross-correlation, 1D: x [B,C,N], w [O,C,K] -> [B,O,N]


@njit(cache=True)
def _nb_conv1_fwd(x, w):
    B, C, N = x.shape
    O, _, K = w.shape
    out = np.zeros((B, O, N))
    for b in range(B):
        for o in range(O):
            for n in range(N):
                acc = 0.0
                for c in range(C):
                    for u in range(K):
                        acc += x[b, c, (n + u) % N] * w[o, c, u]
                out[b, o, n] = acc
    return out


@njit(cache=True)
def _nb_conv1_gx(g, w, N):
    B, O, _ = g.shape
    _, C, K = w.shape
    gx = np.zeros((B, C, N))
    for b in range(B):
        for c in range(C):
            for m in range(N):
                acc = 0.0
                for o in range(O):
                    for u in range(K):
                        acc += g[b, o, (m - u) % N] * w[o, c, u]
                gx[b, c, m] = acc
    return gx


@njit(cache=True)
def _nb_conv1_gw(g, x, K):
    B, O, N = g.shape
    _, C, _ = x.shape
    gw = np.zeros((O, C, K))
    for o in range(O):
        for c in range(C):
            for u in range(K):
                acc = 0.0
                for b in range(B):
                    for n in range(N):
                        acc += g[b, o, n] * x[b, c, (n + u) % N]
                gw[o, c, u] = acc
    return gw


def _np_conv1_fwd(x, w):
    K = w.shape[2]
    xs = np.stack([np.roll(x, -u, axis=-1) for u in range(K)], axis=2)
    return np.einsum("bcun,ocu->bon", xs, w)


def _np_conv1_gx(g, w, N):
    K = w.shape[2]
    gs = np.stack([np.roll(g, u, axis=-1) for u in range(K)], axis=2)
    return np.einsum("boum,ocu->bcm", gs, w)


def _np_conv1_gw(g, x, K):
    xs = np.stack([np.roll(x, -u, axis=-1) for u in range(K)], axis=2)
    return np.einsum("bon,bcun->ocu", g, xs)


def conv1_fwd(x, w):
    return _nb_conv1_fwd(x, w) if _enabled else _np_conv1_fwd(x, w)


def conv1_gx(g, w, N):
    return _nb_conv1_gx(g, w, N) if _enabled else _np_conv1_gx(g, w, N)


def conv1_gw(g, x, K):
    return _nb_conv1_gw(g, x, K) if _enabled else _np_conv1_gw(g, x, K)


# ---------------------------------------------------------------------------
# circular cross-correlation, 2D: x [B,C,H,W], w [O,C,P,Q] -> [B,O,H,W]


@njit(cache=True)
def _nb_conv2_fwd(x, w):
    B, C, H, W = x.shape
    O, _, P, Q = w.shape
    out = np.zeros((B, O, H, W))
    for b in range(B):
        for o in range(O):
            for i in range(H):
                for j in range(W):
                    acc = 0.0
                    for c in range(C):
                        for p in range(P):
                            ii = (i + p) % H
                            for q in range(Q):
                                acc += x[b, c, ii, (j + q) % W] * w[o, c, p, q]
                    out[b, o, i, j] = acc
    return out


@njit(cache=True)
def _nb_conv2_gx(g, w, H, W):
    B, O, _, _ = g.shape
    _, C, P, Q = w.shape
    gx = np.zeros((B, C, H, W))
    for b in range(B):
        for c in range(C):
            for i in range(H):
                for j in range(W):
                    acc = 0.0
                    for o in range(O):
                        for p in range(P):
                            ii = (i - p) % H
                            for q in range(Q):
                                acc += g[b, o, ii, (j - q) % W] * w[o, c, p, q]
                    gx[b, c, i, j] = acc
    return gx


@njit(cache=True)
def _nb_conv2_gw(g, x, P, Q):
    B, O, H, W = g.shape
    _, C, _, _ = x.shape
    gw = np.zeros((O, C, P, Q))
    for o in range(O):
        for c in range(C):
            for p in range(P):
                for q in range(Q):
                    acc = 0.0
                    for b in range(B):
                        for i in range(H):
                            ii = (i + p) % H
                            for j in range(W):
                                acc += g[b, o, i, j] * x[b, c, ii, (j + q) % W]
                    gw[o, c, p, q] = acc
    return gw


def _np_conv2_fwd(x, w):
    _, _, P, Q = w.shape
    out = np.zeros((x.shape[0], w.shape[0]) + x.shape[2:])
    for p in range(P):
        for q in range(Q):
            xs = np.roll(np.roll(x, -p, axis=-2), -q, axis=-1)
            out += np.einsum("bchw,oc->bohw", xs, w[:, :, p, q])
    return out


def _np_conv2_gx(g, w, H, W):
    _, C, P, Q = w.shape
    gx = np.zeros((g.shape[0], C, H, W))
    for p in range(P):
        for q in range(Q):
            gs = np.roll(np.roll(g, p, axis=-2), q, axis=-1)
            gx += np.einsum("bohw,oc->bchw", gs, w[:, :, p, q])
    return gx


def _np_conv2_gw(g, x, P, Q):
    O, C = g.shape[1], x.shape[1]
    gw = np.zeros((O, C, P, Q))
    for p in range(P):
        for q in range(Q):
            xs = np.roll(np.roll(x, -p, axis=-2), -q, axis=-1)
            gw[:, :, p, q] = np.einsum("bohw,bchw->oc", g, xs)
    return gw


def conv2_fwd(x, w):
    return _nb_conv2_fwd(x, w) if _enabled else _np_conv2_fwd(x, w)


def conv2_gx(g, w, H, W):
    return _nb_conv2_gx(g, w, H, W) if _enabled else _np_conv2_gx(g, w, H, W)


def conv2_gw(g, x, P, Q):
    return _nb_conv2_gw(g, x, P, Q) if _enabled else _np_conv2_gw(g, x, P, Q)


# ---------------------------------------------------------------------------
# sliding max-modulus index, circular windows, stride 1
# Ties resolve to the lowest window offset (first strict maximum kept).


@njit(cache=True)
def _nb_absmax1(sq, K):
    B, C, N = sq.shape
    idx = np.zeros((B, C, N), dtype=np.int64)
    for b in range(B):
        for c in range(C):
            for n in range(N):
                best = -1.0
                bi = 0
                for u in range(K):
                    v = sq[b, c, (n + u) % N]
                    if v > best:
                        best = v
                        bi = (n + u) % N
                idx[b, c, n] = bi
    return idx


def _np_absmax1(sq, K):
    stacked = np.stack([np.roll(sq, -u, axis=-1) for u in range(K)], axis=-1)
    off = np.argmax(stacked, axis=-1)
    N = sq.shape[-1]
    return (np.arange(N) + off) % N


def absmax_index_1d(sq, K):
    """Per circular window [n, n+K) of |z|^2, the winning absolute index."""
    return _nb_absmax1(sq, K) if _enabled else _np_absmax1(sq, K)


@njit(cache=True)
def _nb_absmax2(sq, KH, KW):
    B, C, H, W = sq.shape
    idx = np.zeros((B, C, H, W), dtype=np.int64)
    for b in range(B):
        for c in range(C):
            for i in range(H):
                for j in range(W):
                    best = -1.0
                    bi = 0
                    for p in range(KH):
                        ii = (i + p) % H
                        for q in range(KW):
                            jj = (j + q) % W
                            v = sq[b, c, ii, jj]
                            if v > best:
                                best = v
                                bi = ii * W + jj
                    idx[b, c, i, j] = bi
    return idx


def _np_absmax2(sq, KH, KW):
    H, W = sq.shape[-2:]
    planes = []
    for p in range(KH):
        for q in range(KW):
            planes.append(np.roll(np.roll(sq, -p, axis=-2), -q, axis=-1))
    off = np.argmax(np.stack(planes, axis=-1), axis=-1)
    dp, dq = off // KW, off % KW
    ii = (np.arange(H)[:, None] + dp) % H
    jj = (np.arange(W)[None, :] + dq) % W
    return ii * W + jj


def absmax_index_2d(sq, KH, KW):
    """Flat (row-major) absolute index of the max of |z|^2 per circular window."""
    return _nb_absmax2(sq, KH, KW) if _enabled else _np_absmax2(sq, KH, KW)


# ---------------------------------------------------------------------------
# boxcar average of rank-1 outer products k k^H (sample covariance per pixel)


@njit(cache=True)
def _nb_boxcar_outer(k, win):
    H, W, D = k.shape
    r = (win - 1) // 2
    T = np.zeros((H, W, D, D), dtype=np.complex128)
    for i in range(H):
        for j in range(W):
            for dp in range(-r, r + 1):
                ii = (i + dp) % H
                for dq in range(-r, r + 1):
                    jj = (j + dq) % W
                    for a in range(D):
                        ka = k[ii, jj, a]
                        for b in range(D):
                            T[i, j, a, b] += ka * np.conj(k[ii, jj, b])
            for a in range(D):
                for b in range(D):
                    T[i, j, a, b] /= win * win
    return T


def _np_boxcar_outer(k, win):
    outer = np.einsum("hwa,hwb->hwab", k, np.conj(k))
    r = (win - 1) // 2
    acc = np.zeros_like(outer)
    for dp in range(-r, r + 1):
        for dq in range(-r, r + 1):
            acc += np.roll(np.roll(outer, -dp, axis=0), -dq, axis=1)
    return acc / (win * win)


def boxcar_outer(k, win):
    """Mean of k k^H over a centered win x win circular boxcar, k [H,W,D]."""
    return _nb_boxcar_outer(k, win) if _enabled else _np_boxcar_outer(k, win)
