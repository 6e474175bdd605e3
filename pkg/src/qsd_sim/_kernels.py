"""Jitted inner loop for one-dimensional chains with affine drift.

The kernel advances the whole self-interacting chain: Euler proposal, kill
test against the open interval, restart draw from the configured policy,
and occupation bookkeeping.  All randomness (one Gaussian and up to two
uniforms per step) is pre-generated by the caller from counter-based
streams, so runs are reproducible and replayable bit for bit.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

__all__ = ["qsd_chain_1d", "POLICY_FULL", "POLICY_WINDOW", "POLICY_QUANTIZED", "POLICY_FIXED"]

POLICY_FULL = 0
POLICY_WINDOW = 1
POLICY_QUANTIZED = 2
POLICY_FIXED = 3


@njit(cache=True, nogil=True)
def _bisect_right(arr, v, lo, hi):
    # First index in [lo, hi) whose value exceeds v.
    while lo < hi:
        mid = (lo + hi) // 2
        if arr[mid] <= v:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True, nogil=True)
def qsd_chain_1d(
    x0,
    n_steps,
    gam,          # gamma_1 .. gamma_{n_steps+1}
    cumgam,       # Gamma_0 .. Gamma_{n_steps+1}
    z,            # standard normals, one per step
    u1,           # uniforms for the restart draw, one per step
    u2,           # uniforms for the in-cell draw (quantized-uniform only)
    drift_a,
    drift_c,
    sig,
    dom_a,
    dom_b,
    policy_code,
    wrule_code,   # 0: floor(sqrt(n)), 1: floor(param * n)
    wparam,
    cell_lo,
    cell_w,
    cell_law_code,  # 0: dirac at representative, 1: uniform over cell
    cell_weights,   # inout, one slot per cell
    cell_reps,      # inout, NaN marks "no representative yet"
    fixed_code,     # 0: atoms, 1: sin-profile inverse CDF, 2: uniform
    fixed_atoms,
    fixed_cumw,
    fixed_a,
    fixed_b,
    pts,          # out, length n_steps + 1
    theta,        # out, length n_steps
    kill_steps,   # out, capacity n_steps
    kill_src,     # out, capacity n_steps
):
    """Run the chain; returns the number of kills."""
    n_cells = cell_weights.shape[0]
    pts[0] = x0
    q_tot = 0.0
    if policy_code == POLICY_QUANTIZED:
        # The start point carries the first step's weight.
        c0 = int((x0 - cell_lo) / cell_w)
        if c0 < 0:
            c0 = 0
        if c0 >= n_cells:
            c0 = n_cells - 1
        if math.isnan(cell_reps[c0]):
            cell_reps[c0] = x0
        cell_weights[c0] += gam[0]
        for i in range(n_cells):
            q_tot += cell_weights[i]
    nk = 0
    x = x0
    for k in range(n_steps):
        dt = gam[k]
        prop = x + (drift_a * x + drift_c) * dt + sig * math.sqrt(dt) * z[k]
        if dom_a < prop < dom_b:
            theta[k] = 0
            land = prop
        else:
            theta[k] = 1
            u = u1[k]
            if policy_code == POLICY_FULL:
                v = u * cumgam[k + 1]
                j = _bisect_right(cumgam, v, 1, k + 2) - 1
                if j > k:
                    j = k
                land = pts[j]
                src = j
            elif policy_code == POLICY_WINDOW:
                m = k + 1  # records held: indices 0 .. k
                if wrule_code == 0:
                    t = int(math.floor(math.sqrt(m)))
                else:
                    t = int(math.floor(wparam * m))
                if t > m - 1:
                    t = m - 1
                base = cumgam[t]
                v = base + u * (cumgam[k + 1] - base)
                j = _bisect_right(cumgam, v, t + 1, k + 2) - 1
                if j > k:
                    j = k
                if j < t:
                    j = t
                land = pts[j]
                src = j
            elif policy_code == POLICY_QUANTIZED:
                v = u * q_tot
                acc = 0.0
                cell = n_cells - 1
                for i in range(n_cells):
                    acc += cell_weights[i]
                    if v < acc:
                        cell = i
                        break
                if cell_law_code == 0:
                    land = cell_reps[cell]
                else:
                    land = cell_lo + (cell + u2[k]) * cell_w
                src = cell
            else:  # POLICY_FIXED
                if fixed_code == 0:
                    j = _bisect_right(fixed_cumw, u, 0, fixed_atoms.shape[0])
                    if j > fixed_atoms.shape[0] - 1:
                        j = fixed_atoms.shape[0] - 1
                    land = fixed_atoms[j]
                    src = j
                elif fixed_code == 1:
                    land = fixed_a + (fixed_b - fixed_a) / math.pi * math.acos(1.0 - 2.0 * u)
                    src = -1
                else:
                    land = fixed_a + u * (fixed_b - fixed_a)
                    src = -1
            kill_steps[nk] = k + 1
            kill_src[nk] = src
            nk += 1
        pts[k + 1] = land
        if policy_code == POLICY_QUANTIZED:
            w = gam[k + 1]
            cell = int((land - cell_lo) / cell_w)
            if cell < 0:
                cell = 0
            if cell >= n_cells:
                cell = n_cells - 1
            if math.isnan(cell_reps[cell]):
                cell_reps[cell] = land
            cell_weights[cell] += w
            q_tot += w
        x = land
    return nk
