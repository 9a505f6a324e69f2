"""Continuous-time coalescing walks driven by per-site Poisson clocks, and their duals on Z + 1/2.

Every clock event at site ``i`` carries a mark ``+1`` or ``-1``: a walker at
``i`` jumps to ``i + mark``. A dual walker at ``k + 1/2`` moving down in time
is pushed across by any arrow over ``k + 1/2``: events at ``k`` marked ``+1``
send it to ``k - 1/2``, events at ``k + 1`` marked ``-1`` send it to
``k + 3/2``. Walker positions of the two families never cross.

Paths are drawn as polygons through the departure vertices
``(site, time the walker leaves it)``; a forward walker started strictly
between events gets an initial constant segment.
"""

from __future__ import annotations

import threading
from collections import namedtuple

import numpy as np
import singer

from webweave.web import rng
from webweave.web.exceptions import WebweaveParameterError
from webweave.web.paths import BACKWARD_DUAL, FORWARD, Path, PathSet

LOGGER = singer.get_logger()

# clocks run this many mean inter-event gaps past each end of the window
CLOCK_PAD_EVENTS = 20.0

Walker = namedtuple("Walker", ("jump_times", "sites", "backward"))


def _site_key(site):
    # spawn keys must be nonnegative
    return 2 * site if site >= 0 else -2 * site - 1


class ClockField:
    """Per-site Poisson event times with jump marks, generated on demand.

    With a seed, the events of site ``i`` are a pure function of
    ``(seed, i)``. With ``events`` injected, sites not listed carry no events.
    """

    def __init__(self, rate, t_min, t_max, seed=None, events=None):
        if not rate > 0:
            raise WebweaveParameterError(f"Clock rate must be positive, got {rate}")
        if not t_min < t_max:
            raise WebweaveParameterError(f"Clock window needs t_min < t_max, got [{t_min}, {t_max}]")
        if seed is None and events is None:
            raise WebweaveParameterError("A ClockField needs a seed or injected events.")
        self.rate = float(rate)
        self.t_min = float(t_min)
        self.t_max = float(t_max)
        self.seed = None if seed is None else rng.check_seed(seed)
        pad = CLOCK_PAD_EVENTS / self.rate
        self.clock_lo, self.clock_hi = self.t_min - pad, self.t_max + pad
        self._cache = {}
        self._lock = threading.Lock()
        for site, site_events in (events or {}).items():
            ordered = sorted(site_events)
            self._cache[int(site)] = (
                np.array([t for t, _ in ordered], dtype=np.float64),
                np.array([m for _, m in ordered], dtype=np.int64),
            )

    def events(self, site):
        site = int(site)
        cached = self._cache.get(site)
        if cached is not None:
            return cached
        if self.seed is None:
            return np.empty(0), np.empty(0, dtype=np.int64)
        gen = rng.generator(self.seed, rng.CLOCK_STREAM, _site_key(site))
        span = self.clock_hi - self.clock_lo
        count = gen.poisson(self.rate * span)
        times = np.sort(self.clock_lo + span * gen.random(count))
        marks = np.where(gen.random(count) < 0.5, -1, 1)
        with self._lock:
            self._cache.setdefault(site, (times, marks))
        return self._cache[site]

    def event_times(self, sites):
        """All event times inside the window at the given sites, sorted."""
        stacked = [self.events(s)[0] for s in sites]
        times = np.concatenate(stacked) if stacked else np.empty(0)
        return np.sort(times[(times >= self.t_min) & (times <= self.t_max)])


def forward_walker(clocks: ClockField, site, s0, jump_at_start=False) -> Walker:
    """Departure times and visited sites of a walker started at ``(site, s0)``.

    The walk runs until its first departure after ``clocks.t_max`` (kept so
    the polygon can be clipped) or until the clocks run out.
    """
    site, t = int(site), float(s0)
    jump_times, sites = [], [site]
    side = "left" if jump_at_start else "right"
    while True:
        times, marks = clocks.events(site)
        k = int(np.searchsorted(times, t, side=side))
        side = "right"
        if k == times.size:
            break
        t = float(times[k])
        site += int(marks[k])
        jump_times.append(t)
        sites.append(site)
        if t > clocks.t_max:
            break
    return Walker(np.array(jump_times), np.array(sites, dtype=np.int64), False)


def _dual_arrow(clocks, k, t):
    """Latest arrow over ``k + 1/2`` strictly before ``t``: ``(time, new k)`` or None."""
    best = None
    left_times, left_marks = clocks.events(k)
    right_times, right_marks = clocks.events(k + 1)
    # ties go to the lower site index, which is scanned first
    for times, marks, mark, target in ((left_times, left_marks, 1, k - 1), (right_times, right_marks, -1, k + 1)):
        idx = int(np.searchsorted(times, t, side="left")) - 1
        while idx >= 0 and marks[idx] != mark:
            idx -= 1
        if idx >= 0 and (best is None or times[idx] > best[0]):
            best = (float(times[idx]), target)
    return best


def dual_walker(clocks: ClockField, k, s_top) -> Walker:
    """Backward walker started at ``(k + 1/2, s_top)``; ``sites`` holds the integer ``k``."""
    k, t = int(k), float(s_top)
    jump_times, sites = [], [k]
    while True:
        arrow = _dual_arrow(clocks, k, t)
        if arrow is None:
            break
        t, k = arrow
        jump_times.append(t)
        sites.append(k)
        if t < clocks.t_min:
            break
    return Walker(np.array(jump_times), np.array(sites, dtype=np.int64), True)


def _clip(knot_t, knot_x, lo, hi):
    knot_t, knot_x = np.asarray(knot_t, dtype=np.float64), np.asarray(knot_x, dtype=np.float64)
    inside = (knot_t > lo) & (knot_t < hi)
    bounds = [b for b in (lo, hi) if knot_t[0] <= b <= knot_t[-1]]
    times = np.unique(np.concatenate([knot_t[inside], bounds]))
    return times, np.interp(times, knot_t, knot_x)


def forward_polygon(clocks: ClockField, walker: Walker, s0) -> Path:
    knot_t = [float(s0)]
    knot_x = [float(walker.sites[0])]
    for n, departure in enumerate(walker.jump_times):
        if departure > knot_t[-1]:
            knot_t.append(float(departure))
            knot_x.append(float(walker.sites[n]))
    if knot_t[-1] < clocks.t_max:
        # clocks exhausted: end at the last site visited
        knot_t.append(clocks.t_max)
        knot_x.append(float(walker.sites[-1]))
    times, xs = _clip(knot_t, knot_x, float(s0), clocks.t_max)
    return Path(times, xs)


def dual_polygon(clocks: ClockField, walker: Walker, s_top) -> Path:
    knot_t = [float(s_top)]
    knot_x = [walker.sites[0] + 0.5]
    for n, departure in enumerate(walker.jump_times):
        if departure < knot_t[-1]:
            knot_t.append(float(departure))
            knot_x.append(walker.sites[n] + 0.5)
    if knot_t[-1] > clocks.t_min:
        knot_t.append(clocks.t_min)
        knot_x.append(walker.sites[-1] + 0.5)
    times, xs = _clip(knot_t[::-1], knot_x[::-1], clocks.t_min, float(s_top))
    return Path(times, xs, backward=True)


def trace_continuous(clocks: ClockField, site, s0):
    """Forward paths from ``(site, s0)``.

    Two paths come back when ``s0`` is exactly an event time at ``site``:
    one with an initial constant segment and one without.
    """
    times, _ = clocks.events(site)
    paths = [forward_polygon(clocks, forward_walker(clocks, site, s0), s0)]
    if np.any(times == s0):
        paths.append(forward_polygon(clocks, forward_walker(clocks, site, s0, jump_at_start=True), s0))
    return paths


def simulate_continuous(window, rate, seed=None, clocks=None, starts=None, dual_starts=None):
    """Forward walks from every site at ``t_min`` and duals from every ``k + 1/2`` at ``t_max``.

    ``starts`` (``(site, time)`` pairs) and ``dual_starts`` (``(k, time)``
    pairs for dual site ``k + 1/2``) override the defaults.
    """
    if not rate > 0:
        raise WebweaveParameterError(f"Poisson rate must be positive, got {rate}")
    clocks = clocks or ClockField(rate, window.t_min, window.t_max, seed=seed)
    if starts is None:
        starts = [(i, window.t_min) for i in range(window.x_min, window.x_max + 1)]
    if dual_starts is None:
        dual_starts = [(k, window.t_max) for k in range(window.x_min, window.x_max)]

    forward = []
    for site, s0 in starts:
        forward.extend(trace_continuous(clocks, site, s0))
    backward = [dual_polygon(clocks, dual_walker(clocks, k, s_top), s_top) for k, s_top in dual_starts]
    LOGGER.debug("Continuous run: %d forward and %d dual paths", len(forward), len(backward))
    return (
        PathSet(forward, FORWARD, lattice=True, non_crossing=True),
        PathSet(backward, BACKWARD_DUAL, backward=True, lattice=True, non_crossing=True),
    )


def walker_site(walker: Walker, s):
    """Site occupied at times ``s`` (arrays allowed) between jumps."""
    s = np.asarray(s, dtype=np.float64)
    if walker.backward:
        # jumps in decreasing time: count those at or above s
        passed = np.searchsorted(-walker.jump_times, -s, side="right")
        return walker.sites[passed] + 0.5
    passed = np.searchsorted(walker.jump_times, s, side="right")
    return walker.sites[passed].astype(np.float64)


def check_walker_duality(clocks: ClockField, starts, dual_starts) -> int:
    """Number of forward/dual walker pairs whose order flips between consecutive clock events."""
    forward = [(forward_walker(clocks, i, s0), s0) for i, s0 in starts]
    duals = [(dual_walker(clocks, k, s_top), s_top) for k, s_top in dual_starts]
    sites = set()
    for walker, _ in forward + duals:
        sites.update(int(x) for x in walker.sites)
        sites.update(int(x) + 1 for x in walker.sites)
    events = clocks.event_times(sorted(sites))
    grid = np.concatenate([[clocks.t_min], events, [clocks.t_max]])
    probes = 0.5 * (grid[:-1] + grid[1:])

    violations = 0
    for walker, s0 in forward:
        for dual, s_top in duals:
            live = probes[(probes > s0) & (probes < s_top)]
            if live.size < 2:
                continue
            sign = np.sign(walker_site(walker, live) - walker_site(dual, live))
            if np.any(sign != sign[0]):
                violations += 1
    return violations
