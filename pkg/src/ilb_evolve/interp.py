"""Batched cubic Hermite interpolation on a shared knot vector.

``slopes="pchip"`` gives the Fritsch-Butland shape-preserving slopes (the
same rule as :class:`scipy.interpolate.PchipInterpolator`), which keep
monotone data monotone; ``slopes="centered"`` gives plain second-order
three-point slopes for data with interior extrema.
"""

import numpy as np


def _secants(xk, y):
    h = np.diff(xk)
    return h, np.diff(y, axis=-1) / h


def _edge_slope(h0, h1, d0, d1):
    return ((2 * h0 + h1) * d0 - h0 * d1) / (h0 + h1)


def pchip_slopes(xk, y):
    h, d = _secants(xk, y)
    m = np.zeros_like(y)
    if y.shape[-1] == 2:
        m[..., 0] = m[..., 1] = d[..., 0]
        return m
    w1 = 2 * h[1:] + h[:-1]
    w2 = h[1:] + 2 * h[:-1]
    dl, dr = d[..., :-1], d[..., 1:]
    same = (np.sign(dl) * np.sign(dr)) > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        whmean = (w1 / dl + w2 / dr) / (w1 + w2)
        m[..., 1:-1] = np.where(same, 1.0 / whmean, 0.0)
    for end, (h0, h1, d0, d1) in (
        (0, (h[0], h[1], d[..., 0], d[..., 1])),
        (-1, (h[-1], h[-2], d[..., -1], d[..., -2])),
    ):
        me = _edge_slope(h0, h1, d0, d1)
        me = np.where(np.sign(me) != np.sign(d0), 0.0, me)
        flip = (np.sign(d0) != np.sign(d1)) & (np.abs(me) > 3 * np.abs(d0))
        m[..., end] = np.where(flip, 3 * d0, me)
    return m


def centered_slopes(xk, y):
    h, d = _secants(xk, y)
    m = np.empty_like(y)
    if y.shape[-1] == 2:
        m[..., 0] = m[..., 1] = d[..., 0]
        return m
    m[..., 1:-1] = (d[..., :-1] * h[1:] + d[..., 1:] * h[:-1]) / (h[:-1] + h[1:])
    m[..., 0] = _edge_slope(h[0], h[1], d[..., 0], d[..., 1])
    m[..., -1] = _edge_slope(h[-1], h[-2], d[..., -1], d[..., -2])
    return m


def _interval(xk, q):
    n = len(xk) - 1
    h = np.diff(xk)
    if np.ptp(h) <= 1e-12 * h[0]:
        # uniform knots: direct index, no search
        u = (q - xk[0]) * (1.0 / h[0])
        i = np.clip(u, 0, n - 1).astype(np.intp)
        return i, u - i
    i = np.clip(np.searchsorted(xk, q, side="right") - 1, 0, n - 1)
    return i, (q - xk[i]) / h[i]


def hermite_eval(xk, y, q, slopes="pchip"):
    """Interpolate rows of ``y`` (knots ``xk``) at the matching rows of ``q``.

    ``y`` has shape ``(..., G)`` and ``q`` shape ``(..., Q)``; leading axes
    broadcast.  Queries outside the knot range extrapolate the end cubics.
    """
    xk = np.asarray(xk, dtype=float)
    y = np.asarray(y, dtype=float)
    q = np.asarray(q, dtype=float)
    m = pchip_slopes(xk, y) if slopes == "pchip" else centered_slopes(xk, y)
    lead = np.broadcast_shapes(y.shape[:-1], q.shape[:-1])
    G = y.shape[-1]
    y = np.ascontiguousarray(np.broadcast_to(y, lead + (G,))).reshape(-1, G)
    m = np.ascontiguousarray(np.broadcast_to(m, lead + (G,))).reshape(-1, G)
    q = np.broadcast_to(q, lead + q.shape[-1:]).reshape(len(y), -1)
    i, t = _interval(xk, q)
    h = np.diff(xk)[i]
    flat = i + G * np.arange(len(y))[:, None]
    yf, mf = y.reshape(-1), m.reshape(-1)
    y0, y1 = yf[flat], yf[flat + 1]
    m0, m1 = mf[flat] * h, mf[flat + 1] * h
    d = y1 - y0
    # cubic Hermite in Horner form
    out = y0 + t * (m0 + t * ((3 * d - 2 * m0 - m1) + t * (m0 + m1 - 2 * d)))
    return out.reshape(lead + out.shape[-1:])
