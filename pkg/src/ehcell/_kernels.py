"""Compiled inner loops for the per-slot simulation.

Random draws stay in numpy so streams are identical with or without these
kernels; only deterministic arithmetic lives here.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

NONE = -1


@njit(cache=True)
def pair_units(mt_xy, bs_xy, side, gain, scale, half_alpha):
    """``scale * d^alpha * gain`` with wrap-around distance ``d``."""
    n, m = gain.shape
    out = np.empty((n, m))
    quartic = half_alpha == 2.0
    for i in range(n):
        x, y = mt_xy[i, 0], mt_xy[i, 1]
        for j in range(m):
            dx = abs(x - bs_xy[j, 0])
            if side - dx < dx:
                dx = side - dx
            dy = abs(y - bs_xy[j, 1])
            if side - dy < dy:
                dy = side - dy
            d2 = dx * dx + dy * dy
            pl = d2 * d2 if quartic else d2 ** half_alpha
            out[i, j] = pl * gain[i, j] * scale
    return out


@njit(cache=True)
def associate_available(req, broadcast, coef, expo):
    """Cheapest BS with ``p + coef p^expo <= broadcast``; NONE if there is none."""
    n, m = req.shape
    out = np.full(n, NONE, dtype=np.int64)
    sq = expo == 1.5
    for i in range(n):
        best = np.inf
        for j in range(m):
            p = req[i, j]
            if p >= best:
                continue
            load = coef * p * math.sqrt(p) if sq else coef * p ** expo
            if p + load <= broadcast[j]:
                best = p
                out[i] = j
    return out


@njit(cache=True)
def argmin_rows(req):
    n, m = req.shape
    out = np.full(n, NONE, dtype=np.int64)
    for i in range(n):
        best = np.inf
        for j in range(m):
            if req[i, j] < best:
                best = req[i, j]
                out[i] = j
    return out


@njit(cache=True)
def serve_prefix(assoc, req, broadcast):
    """Cheapest-first admission per BS; returns (served, consumed units)."""
    n = assoc.shape[0]
    m = broadcast.shape[0]
    served = np.zeros(n, dtype=np.bool_)
    used = np.zeros(m, dtype=np.int64)
    full = np.zeros(m, dtype=np.bool_)
    cnt = 0
    for i in range(n):
        if assoc[i] != NONE:
            cnt += 1
    idx = np.empty(cnt, dtype=np.int64)
    pv = np.empty(cnt)
    k = 0
    for i in range(n):
        if assoc[i] != NONE:
            idx[k] = i
            pv[k] = req[i, assoc[i]]
            k += 1
    order = np.argsort(pv, kind="mergesort")
    for t in range(cnt):
        i = idx[order[t]]
        j = assoc[i]
        if full[j]:
            continue
        c = int(math.ceil(pv[order[t]]))
        if used[j] + c <= broadcast[j]:
            used[j] += c
            served[i] = True
        else:
            full[j] = True
    return served, used


@njit(cache=True)
def first_come(req, broadcast, arrival):
    """Each MT in ``arrival`` order takes the cheapest BS whose live battery covers ``ceil(p)``."""
    n, m = req.shape
    live = broadcast.astype(np.int64).copy()
    out = np.full(n, NONE, dtype=np.int64)
    for k in arrival:
        best = np.inf
        pick = NONE
        for j in range(m):
            p = req[k, j]
            if p < best and math.ceil(p) <= live[j]:
                best = p
                pick = j
        if pick != NONE:
            live[pick] -= int(math.ceil(best))
            out[k] = pick
    return out, broadcast.astype(np.int64) - live
