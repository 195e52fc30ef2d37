"""Array storage for orbit points and the distance arithmetic on it.

The central coordinate of every point is kept as a short expansion
``comps[i, 0] + comps[i, 1] + ... + comps[i, L-1]``.  Column 0 holds the
coarse position of a first-level orbit point; each later column holds the
offset introduced by one level of the tower.  Two points that descend from
the same parent point share their leading columns bit for bit, so their
difference is carried exactly by the trailing columns even when it is far
below the resolution of a double near 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class PointCloud:
    charts: np.ndarray  # (N,) int chart index
    comps: np.ndarray  # (N, L) central expansion
    xs: np.ndarray  # (N, s_dim)
    xu: np.ndarray  # (N, u_dim)
    deriv: np.ndarray | None = None  # (N,) central derivative from the base point

    def __len__(self) -> int:
        return len(self.charts)

    @property
    def depth(self) -> int:
        return self.comps.shape[1]

    def central(self) -> np.ndarray:
        """Rounded central coordinates (sum of the expansion, small terms first)."""
        return sum_columns(self.comps)

    def padded(self, depth: int) -> np.ndarray:
        if depth == self.depth:
            return self.comps
        out = np.zeros((len(self), depth))
        out[:, : self.depth] = self.comps
        return out

    def take(self, idx) -> "PointCloud":
        return PointCloud(self.charts[idx], self.comps[idx], self.xs[idx], self.xu[idx],
                          None if self.deriv is None else self.deriv[idx])


def sum_columns(comps: np.ndarray) -> np.ndarray:
    out = np.zeros(comps.shape[0])
    for k in range(comps.shape[1] - 1, -1, -1):
        out = out + comps[:, k]
    return out


def exp_diff(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise value(a) - value(b) for two expansions of equal depth."""
    out = np.zeros(a.shape[0])
    for k in range(a.shape[1] - 1, -1, -1):
        out = out + (a[:, k] - b[:, k])
    return out


def strong_sq(xs_a, xs_b, xu_a, xu_b) -> np.ndarray:
    out = np.zeros(xs_a.shape[0])
    if xs_a.shape[1]:
        out = out + np.sum((xs_a - xs_b) ** 2, axis=1)
    if xu_a.shape[1]:
        out = out + np.sum((xu_a - xu_b) ** 2, axis=1)
    return out


def chart_order(cloud: PointCloud) -> np.ndarray:
    """Permutation sorting by chart, then by central value (lexicographic on the expansion)."""
    keys = [cloud.comps[:, k] for k in range(cloud.depth - 1, -1, -1)]
    keys.append(cloud.charts)
    return np.lexsort(keys)


def min_gap(cloud: PointCloud, scale: float) -> float:
    """Minimal same-chart distance, in ambient units (scale = chart metric factor).

    Points in different charts are at least the chart separation apart and are
    handled by the caller.  Sweep over the central order: a pair (i, i+k) can
    only beat the current best if its central separation alone does.
    """
    n = len(cloud)
    if n < 2:
        return math.inf
    order = chart_order(cloud)
    ch = cloud.charts[order]
    comps = cloud.comps[order]
    xs, xu = cloud.xs[order], cloud.xu[order]
    best = math.inf
    k = 1
    while k < n:
        same = ch[k:] == ch[:-k]
        if not same.any():
            break
        i = np.nonzero(same)[0]
        dc = np.abs(exp_diff(comps[i + k], comps[i]))
        alive = dc * scale < best
        if not alive.any():
            break
        i, dc = i[alive], dc[alive]
        d2 = dc * dc + strong_sq(xs[i + k], xs[i], xu[i + k], xu[i])
        best = min(best, float(np.sqrt(d2.min())) * scale)
        k += 1
    return best


def brute_min_gap(cloud: PointCloud, scale: float) -> float:
    """O(N^2) same-chart minimum, used as an oracle."""
    n = len(cloud)
    best = math.inf
    for i in range(n):
        j = np.arange(i + 1, n)
        j = j[cloud.charts[j] == cloud.charts[i]]
        if len(j) == 0:
            continue
        a = np.repeat(cloud.comps[i : i + 1], len(j), axis=0)
        dc = exp_diff(cloud.comps[j], a)
        d2 = dc * dc + strong_sq(cloud.xs[j], cloud.xs[[i] * len(j)], cloud.xu[j], cloud.xu[[i] * len(j)])
        best = min(best, float(np.sqrt(d2.min())) * scale)
    return best


def ball_counts(centers: PointCloud, targets: PointCloud, radius: float, scale: float) -> np.ndarray:
    """Number of target points within the closed ball of the given radius around each center."""
    depth = max(centers.depth, targets.depth)
    cc, tc = centers.padded(depth), targets.padded(depth)
    order = np.lexsort([tc[:, k] for k in range(depth - 1, -1, -1)] + [targets.charts])
    t_ch = targets.charts[order]
    tc = tc[order]
    t_xs, t_xu = targets.xs[order], targets.xu[order]
    half = radius / scale
    counts = np.zeros(len(centers), dtype=np.int64)

    # chart blocks of the sorted targets
    bounds = {}
    if len(t_ch):
        change = np.nonzero(np.diff(t_ch))[0] + 1
        starts = np.concatenate([[0], change])
        ends = np.concatenate([change, [len(t_ch)]])
        for s, e in zip(starts, ends):
            bounds[int(t_ch[s])] = (int(s), int(e))

    for chart in np.unique(centers.charts):
        q = np.nonzero(centers.charts == chart)[0]
        if int(chart) not in bounds:
            continue
        s, e = bounds[int(chart)]
        qc = cc[q]
        lo = _first_index(tc, s, e, qc, -half)
        hi = _first_index(tc, s, e, qc, half, inclusive=True)
        for qi, a, b in zip(q, lo, hi):
            if b <= a:
                continue
            rows = np.arange(a, b)
            ref = np.repeat(cc[qi : qi + 1], len(rows), axis=0)
            dc = exp_diff(tc[rows], ref)
            d2 = dc * dc + strong_sq(t_xs[rows], np.repeat(centers.xs[qi : qi + 1], len(rows), 0),
                                     t_xu[rows], np.repeat(centers.xu[qi : qi + 1], len(rows), 0))
            counts[qi] = int(np.count_nonzero(np.sqrt(d2) * scale <= radius))
    return counts


def _first_index(tc, s, e, qc, shift, inclusive=False):
    """Vectorized bisection: first row r in [s, e) with value(tc[r]) - value(q) > shift
    (>= shift when not inclusive)."""
    nq = qc.shape[0]
    lo = np.full(nq, s, dtype=np.int64)
    hi = np.full(nq, e, dtype=np.int64)
    while True:
        active = lo < hi
        if not active.any():
            return lo
        mid = (lo + hi) // 2
        m = np.where(active, mid, s)
        d = exp_diff(tc[m], qc)
        below = d <= shift if inclusive else d < shift
        lo = np.where(active & below, mid + 1, lo)
        hi = np.where(active & ~below, mid, hi)
