"""Counting statistics on path sets: eta, its dual, the N sets, closed forms and point types.

A path touches ``[a, b] x {t0}`` when it has started by ``t0`` and its value
there lies in the closed interval. ``eta`` counts the distinct positions
those paths reach at ``t0 + t``.
"""

from __future__ import annotations

import math
from collections import Counter, namedtuple
from dataclasses import dataclass

import numpy as np
import singer
from scipy.special import erf

from webweave.web.exceptions import WebweaveParameterError, WebweaveWindowError
from webweave.web.paths import TIME_TOL, PathSet

LOGGER = singer.get_logger()

CONTINUUM_TOL = 1e-12

PointType = namedtuple("PointType", ("m_in", "m_out"))
EtaHat = namedtuple("EtaHat", ("value", "empty"))


@dataclass(frozen=True)
class CountingQuery:
    t0: float
    t: float
    a: float
    b: float

    def __post_init__(self):
        if not self.t > 0:
            raise WebweaveParameterError(f"Counting query needs t > 0, got {self.t}")
        if self.a > self.b:
            raise WebweaveParameterError(f"Counting query needs a <= b, got a={self.a}, b={self.b}")

    @property
    def t_end(self):
        return self.t0 + self.t

    def as_dict(self):
        return {"t0": self.t0, "t": self.t, "a": self.a, "b": self.b}


@dataclass(frozen=True)
class NSetResult:
    n_all: tuple
    n_plus: tuple
    n_minus: tuple
    l: float | None
    r: float | None

    @property
    def empty(self) -> bool:
        return not self.n_all

    @property
    def outer_mismatch(self) -> bool:
        """True when some endpoint is reached by neither the leftmost nor the rightmost touching path."""
        outer = set(self.n_plus) | set(self.n_minus)
        return any(v not in outer for v in self.n_all)


def _distinct(values, exact):
    values = np.sort(np.asarray(values, dtype=np.float64))
    if values.size == 0:
        return values
    if exact:
        return np.unique(values)
    keep = np.concatenate(([True], np.diff(values) > CONTINUUM_TOL))
    return values[keep]


def _check_window(K: PathSet, lo, hi):
    if len(K) == 0:
        return
    first, last = K.time_window
    if lo < first - TIME_TOL or hi > last + TIME_TOL:
        raise WebweaveWindowError(f"Query times [{lo}, {hi}] exceed the path set window [{first}, {last}].")


def _touching(K: PathSet, q: CountingQuery):
    """Values at ``t0`` and ``t0 + t`` of the forward paths touching ``[a, b] x {t0}``."""
    _check_window(K, q.t0, q.t_end)
    if len(K) == 0:
        return np.empty(0), np.empty(0)
    at_start = K.values_at(q.t0)
    with np.errstate(invalid="ignore"):
        touch = (K.start_times <= q.t0 + TIME_TOL) & (at_start >= q.a) & (at_start <= q.b)
    at_end = K.values_at(q.t_end)[touch]
    if not np.all(np.isfinite(at_end)):
        raise WebweaveWindowError(f"A path touching the query interval ends before t0 + t = {q.t_end}.")
    return at_start[touch], at_end


def eta(K: PathSet, q: CountingQuery) -> int:
    _, ends = _touching(K, q)
    return int(_distinct(ends, K.lattice).size)


def eta_intervals(K: PathSet, t0, t, intervals) -> np.ndarray:
    """``eta`` for several ``[a, b]`` at one ``(t0, t)``, sharing the path evaluations."""
    intervals = [(float(a), float(b)) for a, b in intervals]
    widest = CountingQuery(t0, t, min(a for a, _ in intervals), max(b for _, b in intervals))
    starts, ends = _touching(K, widest)
    out = np.empty(len(intervals), dtype=np.int64)
    for n, (a, b) in enumerate(intervals):
        inside = (starts >= a) & (starts <= b)
        out[n] = _distinct(ends[inside], K.lattice).size
    return out


def eta_hat(K: PathSet, q: CountingQuery) -> EtaHat:
    count = eta(K, q)
    return EtaHat(count - 1, count == 0)


def eta_dual(K_backward: PathSet, q: CountingQuery) -> int:
    """Distinct points of ``[a, b] x {t0}`` hit by backward paths alive at ``t0 + t``."""
    if not K_backward.backward:
        raise WebweaveParameterError("eta_dual takes a backward path set.")
    _check_window(K_backward, q.t0, q.t_end)
    if len(K_backward) == 0:
        return 0
    at_top = K_backward.values_at(q.t_end)
    at_bottom = K_backward.values_at(q.t0)
    with np.errstate(invalid="ignore"):
        hit = (
            (K_backward.start_times >= q.t_end - TIME_TOL)
            & np.isfinite(at_top)
            & (at_bottom >= q.a)
            & (at_bottom <= q.b)
        )
    return int(_distinct(at_bottom[hit], K_backward.lattice).size)


def theta(u, t):
    """Probability that two independent standard Brownian motions ``u`` apart have not met by time ``t``."""
    u = np.asarray(u, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any(u < 0) or np.any(t <= 0):
        raise WebweaveParameterError(f"theta needs u >= 0 and t > 0, got u={u}, t={t}")
    value = erf(u / (2.0 * np.sqrt(t)))
    return float(value) if value.ndim == 0 else value


def expected_eta(a, b, t) -> float:
    if b < a or not t > 0:
        raise WebweaveParameterError(f"expected_eta needs b >= a and t > 0, got a={a}, b={b}, t={t}")
    return 1.0 + (b - a) / math.sqrt(math.pi * t)


def n_sets(K: PathSet, q: CountingQuery) -> NSetResult:
    starts, ends = _touching(K, q)
    if starts.size == 0:
        return NSetResult((), (), (), None, None)
    left, right = float(starts.min()), float(starts.max())
    return NSetResult(
        tuple(_distinct(ends, K.lattice).tolist()),
        tuple(_distinct(ends[starts == right], K.lattice).tolist()),
        tuple(_distinct(ends[starts == left], K.lattice).tolist()),
        left,
        right,
    )


def grid_aligned(window, q: CountingQuery) -> bool:
    """Whether ``q`` is an interior query of the simple lattice in ``window``.

    Integer times and endpoints on the forward sublattice of row ``t0``,
    with ``t`` columns of lateral margin so every dual path reaching
    ``[a, b] x {t0}`` from row ``t0 + t`` starts inside the window.
    """
    values = (q.t0, q.t, q.a, q.b)
    if any(float(v) != int(v) for v in values):
        return False
    t0, t, a, b = (int(v) for v in values)
    return (
        (a + t0) % 2 == 0
        and (b + t0) % 2 == 0
        and window.t_min <= t0
        and t0 + t <= window.t_max
        and window.x_min <= a - t
        and b + t <= window.x_max
    )


def duality_violations(forward: PathSet, dual: PathSet, queries) -> list:
    """Queries where ``eta`` differs from ``1 + eta_dual``; each entry is ``(query, eta, eta_dual)``."""
    out = []
    for q in queries:
        count, dual_count = eta(forward, q), eta_dual(dual, q)
        if count != 1 + dual_count:
            out.append((q, count, dual_count))
    return out


def _require_grid(K: PathSet):
    if K.grid is None:
        raise WebweaveParameterError("Point typing needs a lattice-built path set with a grid view.")
    return K.grid


def _column(times, t):
    k = int(np.searchsorted(times, t - TIME_TOL))
    if k >= times.size or abs(times[k] - t) > TIME_TOL:
        raise WebweaveWindowError(f"Time {t} is not a grid time of the path set.")
    return k


def _count_per_site(sites, keys, other):
    """For each site, the number of distinct ``other`` values among entries with that key."""
    if keys.size == 0:
        return np.zeros(sites.size, dtype=np.int64)
    pairs = np.unique(np.stack([keys, other]), axis=1)
    return np.searchsorted(pairs[0], sites, side="right") - np.searchsorted(pairs[0], sites, side="left")


def row_types(K: PathSet, t, probe_depth: int):
    """``(sites, m_in, m_out)`` for every occupied site of row ``t``.

    ``m_in`` counts distinct positions at ``t - 1`` among paths through the
    site that started by ``t - probe_depth``; ``m_out`` counts distinct
    positions at ``t + 1``.
    """
    times, values = _require_grid(K)
    k = _column(times, t)
    if k - probe_depth < 0 or k + 1 >= times.size:
        raise WebweaveWindowError(f"Row {t} has less than {probe_depth} rows of margin below or 1 row above.")
    now = values[:, k]
    live = np.isfinite(now)
    sites = np.unique(now[live])
    old = live & (K.start_times <= times[k - probe_depth] + TIME_TOL) & np.isfinite(values[:, k - 1])
    onward = live & np.isfinite(values[:, k + 1])
    m_in = _count_per_site(sites, now[old], values[old, k - 1])
    m_out = _count_per_site(sites, now[onward], values[onward, k + 1])
    return sites, m_in, m_out


def classify_point(K: PathSet, point, probe_depth: int = 1) -> PointType:
    x, t = point
    if probe_depth < 1:
        raise WebweaveParameterError(f"probe_depth must be a positive integer, got {probe_depth}")
    sites, m_in, m_out = row_types(K, t, probe_depth)
    n = int(np.searchsorted(sites, x))
    if n >= sites.size or sites[n] != x:
        raise WebweaveParameterError(f"No path passes through ({x}, {t}).")
    return PointType(int(m_in[n]), int(m_out[n]))


def dual_row_types(K_dual: PathSet, sites, t, probe_depth: int):
    """Backward germ counts ``(m_in, m_out)`` at forward-lattice sites of row ``t``.

    Dual paths live on the other sublattice, so none passes through a
    forward site and ``m_in`` is 0. ``m_out`` counts the distinct positions
    at ``t - probe_depth`` of the dual paths leaving the site: those at
    ``x - 1`` and ``x + 1`` on row ``t`` and the one in the wedge ``(x, t - 1)``.
    """
    times, values = _require_grid(K_dual)
    k = _column(times, t)
    if k - probe_depth < 0:
        raise WebweaveWindowError(f"Row {t} has less than {probe_depth} rows of margin below.")
    sites = np.asarray(sites, dtype=np.float64)
    bottom = values[:, k - probe_depth]
    now, below = values[:, k], values[:, k - 1]
    at_row = np.isfinite(now) & np.isfinite(bottom)
    in_wedge = np.isfinite(below) & np.isfinite(bottom)
    keys = np.concatenate([now[at_row] + 1, now[at_row] - 1, below[in_wedge]])
    other = np.concatenate([bottom[at_row], bottom[at_row], bottom[in_wedge]])
    m_out = _count_per_site(sites, keys, other)
    if k + 1 < times.size:
        above = values[:, k + 1]
        on_site = np.isfinite(now) & np.isfinite(above)
        m_in = _count_per_site(sites, now[on_site], above[on_site])
    else:
        m_in = np.zeros_like(m_out)
    return m_in, m_out


def classify_dual_point(K_dual: PathSet, point, probe_depth: int = 1) -> PointType:
    x, t = point
    m_in, m_out = dual_row_types(K_dual, [x], t, probe_depth)
    return PointType(int(m_in[0]), int(m_out[0]))


TypeDualityResult = namedtuple("TypeDualityResult", ("sites", "violations", "census", "dual_census"))


def _probe_rows(window, probe_depth):
    return range(window.t_min + max(probe_depth, 2), window.t_max)


def _probe_sites(window, t, probe_depth, sites):
    margin = probe_depth + 1
    inside = (sites >= window.x_min + margin) & (sites <= window.x_max - margin)
    return sites[inside & ((sites + t) % 2 == 0)]


def type_census(K: PathSet, window, probe_depth: int = 1) -> Counter:
    """Tally of forward point types over the interior sites of ``window``."""
    census = Counter()
    for t in _probe_rows(window, probe_depth):
        sites, m_in, m_out = row_types(K, t, probe_depth)
        keep = np.isin(sites, _probe_sites(window, t, probe_depth, sites))
        census.update(zip(m_in[keep].tolist(), m_out[keep].tolist()))
    return census


def check_type_duality(forward: PathSet, dual: PathSet, window, probe_depth: int = 1) -> TypeDualityResult:
    """Check ``m_in(dual) = m_out - 1`` and ``m_out(dual) = m_in + 1`` at every interior site.

    Needs forward walks from every site of the window and dual walks from
    every dual site, all built on one simple field.
    """
    census, dual_census = Counter(), Counter()
    probed, bad = 0, 0
    for t in _probe_rows(window, probe_depth):
        sites, m_in, m_out = row_types(forward, t, probe_depth)
        keep = np.isin(sites, _probe_sites(window, t, probe_depth, sites))
        sites, m_in, m_out = sites[keep], m_in[keep], m_out[keep]
        dual_in, dual_out = dual_row_types(dual, sites, t, probe_depth)
        census.update(zip(m_in.tolist(), m_out.tolist()))
        dual_census.update(zip(dual_in.tolist(), dual_out.tolist()))
        probed += sites.size
        wrong = (dual_in != m_out - 1) | (dual_out != m_in + 1)
        bad += int(np.count_nonzero(wrong))
        if np.any(wrong):
            LOGGER.debug("Type duality fails at row %s, sites %s", t, sites[wrong].tolist())
    return TypeDualityResult(probed, bad, census, dual_census)


def coalescence_points(K: PathSet) -> list:
    """Sites ``(x, t)`` where paths arriving from distinct positions first share a site."""
    times, values = _require_grid(K)
    points = []
    for k in range(1, times.size):
        now, before = values[:, k], values[:, k - 1]
        moving = np.isfinite(now) & np.isfinite(before)
        if not moving.any():
            continue
        sites = np.unique(now[moving])
        arrivals = _count_per_site(sites, now[moving], before[moving])
        points.extend((float(x), float(times[k])) for x in sites[arrivals >= 2])
    return points
