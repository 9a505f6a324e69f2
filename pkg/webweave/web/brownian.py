"""Coalescing Brownian skeletons on a time grid, exact pair meeting times, and the forward/backward push.

Paths are built one label at a time. Each new Brownian path runs freely
until it first meets or crosses an already built path of lower label, and
from that grid time on it copies that path's values. The double skeleton
also pushes every new path off the already built paths running the other
way in time.
"""

from __future__ import annotations

import math
from collections import namedtuple
from dataclasses import dataclass

import numpy as np
import singer
from scipy.special import erfcinv

from webweave.web import rng
from webweave.web.exceptions import WebweaveParameterError, WebweaveResourceLimitError
from webweave.web.lattice import DEFAULT_MEMORY_BUDGET_SITES
from webweave.web.paths import BACKWARD_DUAL, FORWARD, TIME_TOL, Path, PathSet

LOGGER = singer.get_logger()

FORWARD_NOISE = 0
BACKWARD_NOISE = 1
PAIR_NOISE = 2

MAX_PUSH_PASSES = 8

CoalescenceEvent = namedtuple("CoalescenceEvent", ("time", "into", "label"))


@dataclass(frozen=True)
class SkeletonSpec:
    """Ordered starts ``(x, t)`` on a grid from ``floor`` (default: earliest start) to ``horizon``.

    The order of ``starts`` is the label order of the merge rule.
    """

    starts: tuple
    grid_dt: float
    horizon: float
    seed: int
    floor: float | None = None

    def __post_init__(self):
        starts = tuple((float(x), float(t)) for x, t in self.starts)
        object.__setattr__(self, "starts", starts)
        if not starts:
            raise WebweaveParameterError("A skeleton needs at least one start.")
        if not all(math.isfinite(x) and math.isfinite(t) for x, t in starts):
            raise WebweaveParameterError("Skeleton starts must be finite.")
        if not self.grid_dt > 0:
            raise WebweaveParameterError(f"grid_dt must be positive, got {self.grid_dt}")
        latest = max(t for _, t in starts)
        if not self.horizon > latest:
            raise WebweaveParameterError(f"Horizon {self.horizon} must exceed the latest start time {latest}.")
        if self.time_floor > min(t for _, t in starts):
            raise WebweaveParameterError(f"Floor {self.floor} lies above the earliest start time.")
        if self.grid_dt >= self.horizon - self.time_floor:
            raise WebweaveParameterError(
                f"grid_dt {self.grid_dt} is not smaller than the time span {self.horizon - self.time_floor}."
            )
        rng.check_seed(self.seed)

    @property
    def time_floor(self) -> float:
        return min(t for _, t in self.starts) if self.floor is None else float(self.floor)

    @property
    def columns(self) -> int:
        return int(round((self.horizon - self.time_floor) / self.grid_dt)) + 1

    def grid_times(self) -> np.ndarray:
        return self.time_floor + self.grid_dt * np.arange(self.columns)


@dataclass(frozen=True)
class SkeletonResult:
    paths: PathSet
    coalescence_events: list


def _start_columns(spec: SkeletonSpec, times):
    requested = np.array([t for _, t in spec.starts])
    columns = np.clip(np.rint((requested - spec.time_floor) / spec.grid_dt).astype(np.int64), 0, times.size - 1)
    moved = np.abs(times[columns] - requested)
    if np.any(moved > TIME_TOL * max(1.0, abs(spec.horizon))):
        LOGGER.warning(
            "Snapped %s start time(s) to the grid, largest shift %.3g",
            int(np.count_nonzero(moved > TIME_TOL)),
            float(moved.max()),
        )
    return columns


def _check_budget(rows, columns, memory_budget_sites):
    if rows * columns > memory_budget_sites:
        raise WebweaveResourceLimitError(
            f"Skeleton grid of {rows} paths x {columns} times exceeds the memory budget of {memory_budget_sites} sites."
        )


def _free_paths(x0, start_columns, columns, dt, generator):
    """Independent Brownian paths on the grid, NaN before each start column."""
    steps = generator.standard_normal((x0.size, columns - 1)) * math.sqrt(dt)
    column_index = np.arange(columns - 1)
    steps[column_index[None, :] < start_columns[:, None]] = 0.0
    walk = np.zeros((x0.size, columns))
    np.cumsum(steps, axis=1, out=walk[:, 1:])
    values = x0[:, None] + walk
    values[np.arange(columns)[None, :] < start_columns[:, None]] = np.nan
    return values


def _first_meeting(gap):
    """First index where ``gap`` vanishes or flips sign; NaN entries never count."""
    with np.errstate(invalid="ignore"):
        touch = gap == 0
        touch[1:] |= gap[1:] * gap[:-1] < 0
    hits = np.flatnonzero(touch)
    return int(hits[0]) if hits.size else None


def _merge_candidates(values, label, start):
    """Lower labels path ``label`` can meet first: its two live neighbors at the start, and later starters."""
    column = values[:label, start]
    live = np.flatnonzero(np.isfinite(column))
    later = np.flatnonzero(~np.isfinite(column) & np.isfinite(values[:label, start:]).any(axis=1))
    x = values[label, start]
    picked = list(later)
    if live.size:
        above = live[column[live] >= x]
        below = live[column[live] <= x]
        if above.size:
            picked.append(above[np.argmin(column[above])])
        if below.size:
            picked.append(below[np.argmax(column[below])])
    return sorted(set(int(i) for i in picked))


def _coalesce(values, label, start, times):
    """Merge row ``label`` into the lowest lower label it first meets; returns the event or None.

    The first grid step with any meeting decides. Inside that step the
    earliest interpolated crossing wins, even over a lower label crossed
    later in the step, and the row then follows the lowest label sharing
    the winner's value at the end of the step.

    ``values`` rows are laid out in the path's own direction of time, so the
    same rule serves forward paths and time-reversed backward paths.
    """
    best = None
    for other in _merge_candidates(values, label, start):
        gap = values[label, start:] - values[other, start:]
        hit = _first_meeting(gap)
        if hit is None:
            continue
        column = start + hit
        if gap[hit] == 0 or hit == 0:
            tau = times[column]
        else:
            before, after = gap[hit - 1], gap[hit]
            tau = times[column - 1] + (times[column] - times[column - 1]) * before / (before - after)
        key = (column, tau, other)
        if best is None or key < best:
            best = key
    if best is None:
        return None
    column, tau, other = best
    # every lower label sharing the target's value at the merge column has coalesced with it
    shared = np.flatnonzero(values[:label, column] == values[other, column])
    into = int(shared.min()) if shared.size else other
    values[label, column:] = values[into, column:]
    return CoalescenceEvent(float(tau), into, label)


def sample_skeleton(spec: SkeletonSpec, memory_budget_sites=DEFAULT_MEMORY_BUDGET_SITES) -> SkeletonResult:
    times = spec.grid_times()
    n = len(spec.starts)
    _check_budget(n, times.size, memory_budget_sites)
    start_columns = _start_columns(spec, times)
    x0 = np.array([x for x, _ in spec.starts])
    values = _free_paths(x0, start_columns, times.size, spec.grid_dt, rng.generator(spec.seed, FORWARD_NOISE))

    events = []
    for label in range(1, n):
        event = _coalesce(values, label, int(start_columns[label]), times)
        if event is not None:
            events.append(event)
    LOGGER.debug("Skeleton of %s paths on %s grid times: %s coalescences", n, times.size, len(events))
    return SkeletonResult(PathSet.from_grid(times, values, FORWARD, non_crossing=True), events)


def pair_coalescence_time(x1, x2, seed, size=None):
    """Exact first meeting time of two independent standard Brownian motions.

    The gap is a Brownian motion of variance 2 started at ``u = |x1 - x2|``;
    its hitting time of 0 satisfies ``P(T <= t) = erfc(u / (2 sqrt(t)))``,
    inverted as ``T = u**2 / (4 erfcinv(U)**2)``.
    """
    u = abs(float(x1) - float(x2))
    uniforms = rng.generator(seed, PAIR_NOISE).random(size)
    if u == 0:
        return 0.0 if size is None else np.zeros(size)
    uniforms = np.maximum(uniforms, np.finfo(np.float64).tiny)
    samples = u * u / (4.0 * erfcinv(uniforms) ** 2)
    return float(samples) if size is None else samples


def push_off(mover, barrier, overlap):
    """Push ``mover`` off ``barrier`` over the first ``overlap + 1`` entries.

    Both arrays run in the mover's own direction of time, starting at the
    mover's start. The mover stays on its starting side by adding the
    running record of its deficit; past the overlap that shift stays
    constant.
    """
    mover = np.array(mover, dtype=np.float64)
    gap = mover[: overlap + 1] - np.asarray(barrier[: overlap + 1], dtype=np.float64)
    if gap[0] == 0:
        raise WebweaveParameterError("Cannot push a path off a barrier it starts on.")
    if gap[0] > 0:
        shift = np.maximum.accumulate(np.maximum(-gap, 0.0))
    else:
        shift = -np.maximum.accumulate(np.maximum(gap, 0.0))
    pushed = mover[: overlap + 1] + shift
    # rounding can leave a pushed entry a few ulps past the barrier
    wrong = np.sign(gap[0]) * (pushed - barrier[: overlap + 1]) < 0
    pushed[wrong] = np.asarray(barrier[: overlap + 1], dtype=np.float64)[wrong]
    mover[: overlap + 1] = pushed
    mover[overlap + 1 :] += shift[-1]
    return mover


def reflect_cr(raw_forward, backward):
    """Push a forward path off a backward path that starts later.

    Takes two Paths on a common grid, or two arrays on a common grid with
    NaN outside each path's domain. With Paths, the forward knots inside
    the overlap must also be knots of the backward path.
    """
    if isinstance(raw_forward, Path):
        return _reflect_paths(raw_forward, backward)
    forward = np.asarray(raw_forward, dtype=np.float64)
    barrier = np.asarray(backward, dtype=np.float64)
    defined = np.flatnonzero(np.isfinite(forward))
    start = int(defined[0])
    barrier_end = int(np.flatnonzero(np.isfinite(barrier))[-1])
    out = forward.copy()
    if barrier_end <= start:
        return out
    out[start : defined[-1] + 1] = push_off(forward[start : defined[-1] + 1], barrier[start:], barrier_end - start)
    return out


def _reflect_paths(forward: Path, backward: Path) -> Path:
    if forward.backward or not backward.backward:
        raise WebweaveParameterError("reflect_cr takes a forward path and a backward path.")
    t2, t1 = forward.start_time, backward.start_time
    if t2 >= t1:
        return forward
    if backward.t_first > t2 + TIME_TOL:
        raise WebweaveParameterError(f"Backward path must reach down to the forward start time {t2}.")
    inside = forward.times <= t1 + TIME_TOL
    overlap = int(np.count_nonzero(inside)) - 1
    barrier = backward(forward.times[inside])
    return Path(forward.times, push_off(forward.xs, barrier, overlap))


def _side_violations(mover, barrier, overlap):
    gap = mover[: overlap + 1] - barrier[: overlap + 1]
    side = np.sign(gap[0])
    return np.flatnonzero(side * gap < 0)


def _push_all(mover, barriers, barrier_ends, label):
    """Iterated pairwise pushes of one path off every barrier it overlaps, then a clamp."""
    order = [i for i in range(len(barriers)) if barrier_ends[i] > 0]
    for _ in range(MAX_PUSH_PASSES):
        for i in order:
            mover = push_off(mover, barriers[i], barrier_ends[i])
        if not any(_side_violations(mover, barriers[i], barrier_ends[i]).size for i in order):
            return mover
    for i in order:
        bad = _side_violations(mover, barriers[i], barrier_ends[i])
        if bad.size:
            LOGGER.warning("Clamped path %s onto barrier %s at %s grid times after %s push passes",
                           label, i, bad.size, MAX_PUSH_PASSES)
            mover[bad] = barriers[i][bad]
    return mover


def sample_double_skeleton(spec: SkeletonSpec, memory_budget_sites=DEFAULT_MEMORY_BUDGET_SITES):
    """Forward and backward coalescing paths from every start, pushed off each other.

    Returns ``(forward, backward)`` PathSets on the grid from ``spec.floor``
    to ``spec.horizon``; backward paths run from their start down to the
    floor.
    """
    times = spec.grid_times()
    n = len(spec.starts)
    columns = times.size
    _check_budget(2 * n, columns, memory_budget_sites)
    start_columns = _start_columns(spec, times)
    x0 = np.array([x for x, _ in spec.starts])

    forward = _free_paths(x0, start_columns, columns, spec.grid_dt, rng.generator(spec.seed, FORWARD_NOISE))
    # backward rows are kept in reversed time so the forward merge rule applies unchanged
    reversed_starts = columns - 1 - start_columns
    backward = _free_paths(x0, reversed_starts, columns, spec.grid_dt, rng.generator(spec.seed, BACKWARD_NOISE))
    reversed_times = -times[::-1]

    for label in range(n):
        start = int(start_columns[label])
        barriers = [backward[i, ::-1][start:] for i in range(label)]
        ends = [int(start_columns[i]) - start for i in range(label)]
        forward[label, start:] = _push_all(forward[label, start:], barriers, ends, label)
        if label:
            _coalesce(forward, label, start, times)

        start = int(reversed_starts[label])
        barriers = [forward[i, ::-1][start:] for i in range(label)]
        ends = [int(reversed_starts[i]) - start for i in range(label)]
        backward[label, start:] = _push_all(backward[label, start:], barriers, ends, label)
        if label:
            _coalesce(backward, label, start, reversed_times)

    return (
        PathSet.from_grid(times, forward, FORWARD, non_crossing=True),
        PathSet.from_grid(times, backward[:, ::-1].copy(), BACKWARD_DUAL, backward=True, non_crossing=True),
    )
