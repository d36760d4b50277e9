"""Compiled inner loops for the bilateral and non-local-means filters.

Both kernels take an edge-replicated, padded ``(Hp, Wp, C)`` float64 array.
Floating-point work is ordered so that a straightforward per-pixel loop
doing the same sums in the same order gives bit-identical results:

* colour distances accumulate channel by channel, starting from 0.0;
* NLM patch distances sum each patch row left to right, then add the row
  sums top to bottom;
* weights and weighted values accumulate over offsets in row-major order.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def bilateral_padded(padded, height, width, pad, offsets_y, offsets_x, spatial_w, two_sr2):
    channels = padded.shape[2]
    out = np.empty((height, width, channels))
    num = np.empty(channels)
    for y in range(height):
        for x in range(width):
            cy = y + pad
            cx = x + pad
            for c in range(channels):
                num[c] = 0.0
            den = 0.0
            for k in range(offsets_y.shape[0]):
                qy = cy + offsets_y[k]
                qx = cx + offsets_x[k]
                s = 0.0
                for c in range(channels):
                    diff = padded[qy, qx, c] - padded[cy, cx, c]
                    s += diff * diff
                w = spatial_w[k] * math.exp(-s / two_sr2)
                for c in range(channels):
                    num[c] += w * padded[qy, qx, c]
                den += w
            for c in range(channels):
                out[y, x, c] = num[c] / den
    return out


@njit(cache=True)
def nlm_padded(padded, height, width, half_t, half_s, h2):
    """Offset-major NLM: one pass over the image per search offset."""
    channels = padded.shape[2]
    pad = half_t + half_s
    t = 2 * half_t + 1
    norm = float(t * t * channels)
    rows = height + 2 * half_t
    cols = width + 2 * half_t
    sq = np.empty((rows, cols))
    hsum = np.empty((rows, width))
    num = np.zeros((height, width, channels))
    den = np.zeros((height, width))
    for dy in range(-half_s, half_s + 1):
        for dx in range(-half_s, half_s + 1):
            for r in range(rows):
                for c in range(cols):
                    s = 0.0
                    for ch in range(channels):
                        diff = padded[r + half_s, c + half_s, ch] - padded[r + half_s + dy, c + half_s + dx, ch]
                        s += diff * diff
                    sq[r, c] = s
            for r in range(rows):
                for x in range(width):
                    acc = 0.0
                    for px in range(t):
                        acc += sq[r, x + px]
                    hsum[r, x] = acc
            for y in range(height):
                for x in range(width):
                    acc = 0.0
                    for py in range(t):
                        acc += hsum[y + py, x]
                    w = math.exp(-(acc / norm) / h2)
                    for ch in range(channels):
                        num[y, x, ch] += w * padded[y + pad + dy, x + pad + dx, ch]
                    den[y, x] += w
    out = np.empty((height, width, channels))
    for y in range(height):
        for x in range(width):
            for ch in range(channels):
                out[y, x, ch] = num[y, x, ch] / den[y, x]
    return out
