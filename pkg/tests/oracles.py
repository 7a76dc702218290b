"""Slow, structurally independent reference implementations for tests.

Everything here is written with plain loops and textbook formulas so a
disagreement with the library points at the library, not at a shared
mistake.
"""

from __future__ import annotations

import cmath

import numpy as np


def naive_dft(x) -> list[complex]:
    """Direct O(n^2) DFT, returning the nonnegative-frequency half."""
    n = len(x)
    out = []
    for k in range(n // 2 + 1):
        acc = 0j
        for i in range(n):
            acc += x[i] * cmath.exp(-2j * cmath.pi * k * i / n)
        out.append(acc)
    return out


def eer_bruteforce(scores, labels) -> float:
    """EER by sweeping midpoint thresholds and counting, with the same
    ">= accepts" convention.

    Thresholds are midpoints between adjacent distinct scores plus
    sentinels below and above everything, which visits every achievable
    confusion table.  The crossing of FAR - FRR is located by scanning and
    resolved by linear interpolation.
    """
    scores = [float(s) for s in scores]
    labels = [bool(l) for l in labels]
    distinct = sorted(set(scores))
    thresholds = [distinct[0] - 1.0]
    for a, b in zip(distinct, distinct[1:]):
        thresholds.append((a + b) / 2.0)
    thresholds.append(distinct[-1] + 1.0)

    n_target = sum(1 for l in labels if l)
    n_nontarget = len(labels) - n_target
    points = []
    for t in thresholds:
        false_accepts = 0
        false_rejects = 0
        for s, l in zip(scores, labels):
            if l and s < t:
                false_rejects += 1
            if not l and s >= t:
                false_accepts += 1
        points.append((false_accepts / n_nontarget, false_rejects / n_target))

    prev_far, prev_frr = points[0]
    for far, frr in points:
        if far == frr:
            return far
        if far < frr:
            # crossing happened between the previous point and this one
            gap_prev = prev_far - prev_frr
            gap_here = far - frr
            lam = gap_prev / (gap_prev - gap_here)
            return prev_far + lam * (far - prev_far)
        prev_far, prev_frr = far, frr
    raise AssertionError("FAR - FRR never crossed zero")


def numeric_gradient(fn, params: dict[str, np.ndarray], h: float = 1e-5
                     ) -> dict[str, np.ndarray]:
    """Central finite differences of a scalar function of named tensors."""
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        flat = p.ravel()
        gflat = g.ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            f_plus = fn()
            flat[idx] = orig - h
            f_minus = fn()
            flat[idx] = orig
            gflat[idx] = (f_plus - f_minus) / (2.0 * h)
        grads[name] = g
    return grads


def interp_resize_1d(values, ratio, pad_mode="repeat_edge"):
    """Scalar-loop reference for per-frame vertical resizing."""
    n = len(values)
    m = int(round(n * ratio))
    resized = []
    for j in range(m):
        pos = j * (n - 1) / (m - 1)
        i = int(pos)
        if i >= n - 1:
            resized.append(values[n - 1])
        else:
            frac = pos - i
            resized.append(values[i] * (1 - frac) + values[i + 1] * frac)
    if m >= n:
        return resized[:n]
    if pad_mode == "repeat_edge":
        pad_value = resized[-1]
    else:
        pad_value = min(values)
    return resized + [pad_value] * (n - m)
