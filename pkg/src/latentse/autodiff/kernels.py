"""GRU sequence kernels with backend selection.

The per-step recurrence is the hot loop of training; it runs either in
the compiled Cython extension or in the numpy reference implementation.
Selection happens once at import: the extension is used when it built,
unless LATENTSE_PURE_PYTHON is set. Input projections and weight-gradient
assembly are batched matrix products shared by both backends.
"""

import os

import numpy as np

from . import _gru_ref

if os.environ.get("LATENTSE_PURE_PYTHON"):
    _backend = _gru_ref
    COMPILED = False
else:
    try:
        from . import _gru_cy as _backend  # type: ignore[no-redef]

        COMPILED = True
    except ImportError:
        _backend = _gru_ref
        COMPILED = False

BACKEND_NAME = "compiled" if COMPILED else "python"


def _contig(a, dtype):
    return np.ascontiguousarray(a, dtype=dtype)


def gru_forward(x, h0, w_z, w_r, w_c, b_z, b_r, b_c, backend=None):
    """Full-sequence GRU forward pass.

    x is time-major (T, B, I); each weight block is (H, I + H) with the
    input columns first. Returns the hidden sequence (T, B, H) and the
    cache consumed by gru_backward.
    """
    backend = backend or _backend
    steps, batch, in_dim = x.shape
    hidden = h0.shape[1]
    dtype = x.dtype
    wx = [w[:, :in_dim] for w in (w_z, w_r, w_c)]
    u = [_contig(w[:, in_dim:], dtype) for w in (w_z, w_r, w_c)]
    flat = x.reshape(steps * batch, in_dim)
    gx = [_contig((flat @ w.T).reshape(steps, batch, hidden), dtype) for w in wx]
    hs, zs, rs, cs = backend.recurrence_forward(
        gx[0], gx[1], gx[2], _contig(h0, dtype), u[0], u[1], u[2],
        _contig(b_z, dtype), _contig(b_r, dtype), _contig(b_c, dtype),
    )
    cache = (x, h0, hs, zs, rs, cs, wx, u)
    return hs, cache


def gru_backward(dhs, cache, backend=None):
    """Gradients of a scalar loss w.r.t. every gru_forward input.

    Returns (dx, dh0, dw_z, dw_r, dw_c, db_z, db_r, db_c).
    """
    backend = backend or _backend
    x, h0, hs, zs, rs, cs, wx, u = cache
    steps, batch, in_dim = x.shape
    hidden = h0.shape[1]
    dtype = x.dtype
    dsz, dsr, dsc, dh0 = backend.recurrence_backward(
        _contig(dhs, dtype), hs, zs, rs, cs, _contig(h0, dtype), u[0], u[1], u[2]
    )
    h_prev = np.concatenate([h0[None], hs[:-1]], axis=0)
    x_flat = x.reshape(steps * batch, in_dim)
    hp_flat = h_prev.reshape(steps * batch, hidden)
    rh_flat = (rs * h_prev).reshape(steps * batch, hidden)
    grads_w = []
    for ds, hpart in ((dsz, hp_flat), (dsr, hp_flat), (dsc, rh_flat)):
        ds_flat = ds.reshape(steps * batch, hidden)
        grads_w.append(np.hstack([ds_flat.T @ x_flat, ds_flat.T @ hpart]))
    dx = (
        dsz.reshape(-1, hidden) @ wx[0]
        + dsr.reshape(-1, hidden) @ wx[1]
        + dsc.reshape(-1, hidden) @ wx[2]
    ).reshape(steps, batch, in_dim)
    db = [ds.sum(axis=(0, 1)) for ds in (dsz, dsr, dsc)]
    return dx, dh0, grads_w[0], grads_w[1], grads_w[2], db[0], db[1], db[2]
