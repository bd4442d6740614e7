"""Pure-numpy GRU recurrence, the fallback for the compiled kernel.

Both backends expose the same two functions and must agree numerically;
the shared input-projection and weight-gradient algebra lives in
kernels.py. Shapes: time-major sequences (T, B, H), hidden weights
(H, H) with gate outputs on rows.
"""

import numpy as np
from scipy.special import expit


def recurrence_forward(gx_z, gx_r, gx_c, h0, u_z, u_r, u_c, b_z, b_r, b_c):
    """Run the gated recurrence given precomputed input projections.

    Returns the hidden sequence plus the gate activations needed by the
    backward pass.
    """
    steps = gx_z.shape[0]
    hs = np.empty_like(gx_z)
    zs = np.empty_like(gx_z)
    rs = np.empty_like(gx_z)
    cs = np.empty_like(gx_z)
    h = h0
    for t in range(steps):
        z = expit(gx_z[t] + h @ u_z.T + b_z)
        r = expit(gx_r[t] + h @ u_r.T + b_r)
        c = np.tanh(gx_c[t] + (r * h) @ u_c.T + b_c)
        h = z * h + (1.0 - z) * c
        zs[t], rs[t], cs[t], hs[t] = z, r, c, h
    return hs, zs, rs, cs


def recurrence_backward(dhs, hs, zs, rs, cs, h0, u_z, u_r, u_c):
    """Backpropagate through time.

    Returns gradients of the three gate pre-activations per step plus the
    gradient of the initial hidden state.
    """
    steps = dhs.shape[0]
    dsz = np.empty_like(dhs)
    dsr = np.empty_like(dhs)
    dsc = np.empty_like(dhs)
    carry = np.zeros_like(h0)
    for t in range(steps - 1, -1, -1):
        h_prev = hs[t - 1] if t > 0 else h0
        z, r, c = zs[t], rs[t], cs[t]
        dh = dhs[t] + carry
        dc = dh * (1.0 - z)
        dsc[t] = dc * (1.0 - c * c)
        d_rh = dsc[t] @ u_c
        dsr[t] = (d_rh * h_prev) * r * (1.0 - r)
        dsz[t] = (dh * (h_prev - c)) * z * (1.0 - z)
        carry = dh * z + d_rh * r + dsr[t] @ u_r + dsz[t] @ u_z
    return dsz, dsr, dsc, carry
