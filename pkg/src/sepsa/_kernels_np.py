"""Pure-NumPy implementations of the per-sample training kernels.

These are the fallback backend for :mod:`sepsa.backend`; the Cython module
``sepsa._kernels_cy`` provides the same functions with the same in-place
semantics. All arrays are float64 and C-contiguous.
"""

import numpy as np


def forward_sample(w1, b1, w, x, z, h, yhat):
    """Single-sample forward pass, writing into preallocated buffers.

    z = w1 @ x + b1, h = [max(z, 0); 1], yhat = w @ h.
    """
    np.dot(w1, x, out=z)
    z += b1
    np.maximum(z, 0.0, out=h[: z.shape[0]])
    h[-1] = 1.0
    np.dot(w, h, out=yhat)


def head_matvec(w, h, yhat):
    """yhat = w @ h into a preallocated buffer."""
    np.dot(w, h, out=yhat)


def rls_update(b, w, h, resid, v):
    """One rank-1 recursive least-squares step, in place.

    Downdates the gain matrix ``b`` by the matrix-inversion-lemma formula
        b <- b - (b h h' b) / (1 + h' b h)
    then moves every head row against its residual using the *downdated*
    gain: w[i] <- w[i] - (b_new @ h) * resid[i], where resid = yhat - y.
    ``b_new @ h`` equals ``(b_old @ h) / (1 + h' b_old h)``, so no second
    matvec is needed. ``v`` is a length-p scratch buffer.

    Returns the denominator 1 + h' b h (callers check it for finiteness).
    """
    np.dot(b, h, out=v)
    denom = 1.0 + float(h @ v)
    b -= np.outer(v, v) / denom
    # mirror-average: the update is symmetric analytically, this pins it
    b[:] = (b + b.T) * 0.5
    v /= denom
    w -= np.outer(resid, v)
    return denom


def grad_theta_sample(gw1, gb1, x, z, w, resid, scale):
    """Accumulate ``scale`` times the extractor gradient for one sample.

    dz = 1[z > 0] * (w[:, :m]' @ resid); gw1 += scale * dz x'; gb1 += scale * dz.
    The subgradient at z == 0 is taken as 0.
    """
    m = z.shape[0]
    dz = w[:, :m].T @ resid
    dz[z <= 0.0] = 0.0
    if scale != 1.0:
        dz *= scale
    gw1 += np.outer(dz, x)
    gb1 += dz
