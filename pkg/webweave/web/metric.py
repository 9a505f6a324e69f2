"""The compactified point metric, the path metric and the Hausdorff metric on finite path sets.

Points map into the compact square through
``(x, t) -> (tanh(x) / (1 + |t|), tanh(t))``. Path distance is the sup over
all times of the first coordinate gap between the two paths, each held
constant outside its knots, maxed with the gap between start times.
"""

from __future__ import annotations

from collections import namedtuple
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from webweave.web.exceptions import EmptyPathSetError, WebweaveParameterError, WebweaveWindowError
from webweave.web.paths import Path, PathSet

SEARCH_TOL = 1e-10
SAMPLES_PER_PIECE = 16

CompactPoint = namedtuple("CompactPoint", ("phi", "psi"))


@dataclass(frozen=True)
class MetricResult:
    value: float
    witness: tuple | None = None

    def __float__(self):
        return self.value


def compactify(x, t) -> CompactPoint:
    return CompactPoint(float(np.tanh(x) / (1.0 + abs(t))), float(np.tanh(t)))


def rho(p1, p2) -> float:
    (x1, t1), (x2, t2) = p1, p2
    c1, c2 = compactify(x1, t1), compactify(x2, t2)
    return max(abs(c1.phi - c2.phi), abs(c1.psi - c2.psi))


def _phi_gap(t, p1: Path, p2: Path):
    t = np.asarray(t, dtype=np.float64)
    return (np.tanh(p1.extended(t)) - np.tanh(p2.extended(t))) / (1.0 + np.abs(t))


def _piece_slope(path: Path, lo, hi):
    if hi <= path.t_first or lo >= path.t_last:
        return 0.0
    mid = 0.5 * (lo + hi)
    k = int(np.clip(np.searchsorted(path.times, mid) - 1, 0, path.times.size - 2))
    return abs((path.xs[k + 1] - path.xs[k]) / (path.times[k + 1] - path.times[k]))


def phi_supremum(p1: Path, p2: Path):
    """``(sup_t |Phi(f1(t), t) - Phi(f2(t), t)|, argmax)`` over all real t.

    Both extended paths are constant outside their knots, where the gap
    only changes through ``1 / (1 + |t|)``; the sup therefore lies in the
    hull of both knot sets and ``t = 0``, whose ends are breakpoints.
    """
    lo, hi = min(p1.t_first, p2.t_first, 0.0), max(p1.t_last, p2.t_last, 0.0)
    breaks = np.union1d(np.union1d(p1.times, p2.times), [0.0])
    breaks = breaks[(breaks >= lo) & (breaks <= hi)]
    gaps = np.abs(_phi_gap(breaks, p1, p2))
    best = int(np.argmax(gaps))
    best_value, best_time = float(gaps[best]), float(breaks[best])
    if breaks.size < 2:
        return best_value, best_time

    fractions = np.linspace(0.0, 1.0, SAMPLES_PER_PIECE + 2)[1:-1]
    starts, ends = breaks[:-1], breaks[1:]
    samples = starts[:, None] + (ends - starts)[:, None] * fractions[None, :]
    sampled = np.abs(_phi_gap(samples, p1, p2))
    piece_best = sampled.max(axis=1)
    spacing = (ends - starts) / (SAMPLES_PER_PIECE + 1)

    for n in np.argsort(-piece_best):
        a, b = float(starts[n]), float(ends[n])
        # |d/dt gap| <= |slope1| + |slope2| + 2 on a linear piece
        lipschitz = _piece_slope(p1, a, b) + _piece_slope(p2, a, b) + 2.0
        if piece_best[n] + lipschitz * spacing[n] < best_value:
            continue
        row = sampled[n]
        padded = np.concatenate(([-np.inf], row, [-np.inf]))
        # a gap changing sign inside a piece leaves one hump on each side
        peaks = np.flatnonzero((row >= padded[:-2]) & (row >= padded[2:]))
        for m in peaks[np.argsort(-row[peaks])]:
            if row[m] + lipschitz * spacing[n] < best_value:
                break
            bracket_lo = a if m == 0 else float(samples[n, m - 1])
            bracket_hi = b if m == SAMPLES_PER_PIECE - 1 else float(samples[n, m + 1])
            found = minimize_scalar(
                lambda s: -abs(float(_phi_gap(s, p1, p2))),
                bounds=(bracket_lo, bracket_hi),
                method="bounded",
                options={"xatol": SEARCH_TOL},
            )
            for value, time in ((-found.fun, float(found.x)), (float(row[m]), float(samples[n, m]))):
                if value > best_value:
                    best_value, best_time = value, time
    return best_value, best_time


def path_distance(p1: Path, p2: Path) -> MetricResult:
    if p1.backward != p2.backward:
        raise WebweaveParameterError("Cannot compare a forward path with a backward path.")
    if p1.t_last < p2.t_first or p2.t_last < p1.t_first:
        raise WebweaveWindowError(
            f"Paths live on disjoint windows [{p1.t_first}, {p1.t_last}] and [{p2.t_first}, {p2.t_last}]."
        )
    phi, at = phi_supremum(p1, p2)
    psi = abs(np.tanh(p1.start_time) - np.tanh(p2.start_time))
    if psi > phi:
        return MetricResult(float(psi), (p1.start_time, p2.start_time))
    return MetricResult(float(phi), (at,))


def distance_matrix(K1: PathSet, K2: PathSet) -> np.ndarray:
    return np.array([[path_distance(g1, g2).value for g2 in K2] for g1 in K1]).reshape(len(K1), len(K2))


def directed_hausdorff(K1: PathSet, K2: PathSet) -> float:
    """``sup_{g1 in K1} inf_{g2 in K2} d(g1, g2)``."""
    if len(K1) == 0 or len(K2) == 0:
        raise EmptyPathSetError("Hausdorff distance needs non-empty path sets.")
    return float(distance_matrix(K1, K2).min(axis=1).max())


def hausdorff_distance(K1: PathSet, K2: PathSet) -> MetricResult:
    if len(K1) == 0 or len(K2) == 0:
        raise EmptyPathSetError("Hausdorff distance needs non-empty path sets.")
    matrix = distance_matrix(K1, K2)
    row_best = matrix.argmin(axis=1)
    col_best = matrix.argmin(axis=0)
    forward = matrix[np.arange(len(K1)), row_best]
    backward = matrix[col_best, np.arange(len(K2))]
    if forward.max() >= backward.max():
        i = int(forward.argmax())
        pair = (i, int(row_best[i]))
    else:
        j = int(backward.argmax())
        pair = (int(col_best[j]), j)
    value = float(matrix[pair])
    return MetricResult(value, path_distance(K1[pair[0]], K2[pair[1]]).witness)


def double_hausdorff_distance(first, second) -> MetricResult:
    """Distance between (forward, backward) pairs: the larger of the two Hausdorff distances."""
    forward = hausdorff_distance(first[0], second[0])
    backward = hausdorff_distance(first[1], second[1])
    return forward if forward.value >= backward.value else backward
