"""Compiled single-pass loops for the hottest elementwise ops."""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def fake_quant_scalar(x, alpha, beta, q, out, inside):
    """out = (clamp(round(x / alpha) - beta, 0, q) + beta) * alpha; inside marks unclamped."""
    xf = x.ravel()
    of = out.ravel()
    mf = inside.ravel()
    for i in range(xf.size):
        c = np.round(xf[i] / alpha) - beta
        if c < 0.0:
            c = 0.0
            mf[i] = False
        elif c > q:
            c = q
            mf[i] = False
        else:
            mf[i] = True
        of[i] = (c + beta) * alpha


@numba.njit(cache=True, nogil=True)
def masked_copy(g, inside, out):
    gf = g.ravel()
    mf = inside.ravel()
    of = out.ravel()
    for i in range(gf.size):
        of[i] = gf[i] if mf[i] else 0.0
