"""Discrete coalescing random walks, their graphical duals and diffusive rescaling.

A walk from lattice site ``(i, j)`` follows ``Y(j + 1) = Y(j) + D[Y(j), j]``
where ``D`` is one shared field of increments, so two walks that land on
the same site share their future. The dual walks live on the sites with
``i + j`` odd and step backward in time, forced by the forward increment
directly below them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import singer

from webweave.web import rng
from webweave.web.exceptions import (
    UnsupportedLawError,
    WebweaveParameterError,
    WebweaveResourceLimitError,
    WebweaveWindowError,
)
from webweave.web.laws import SIMPLE, SIMPLE_LAW, check_law
from webweave.web.paths import BACKWARD_DUAL, FORWARD, GridView, Path, PathSet

LOGGER = singer.get_logger()

DEFAULT_MEMORY_BUDGET_SITES = 50_000_000

ALL_IN_WINDOW = "all-in-window"
DUAL_STARTS_ALL = "all"
DUAL_STARTS_TOP = "top"


@dataclass(frozen=True)
class LatticeWindow:
    x_min: int
    x_max: int
    t_min: int
    t_max: int

    def __post_init__(self):
        if self.x_min >= self.x_max or self.t_min >= self.t_max:
            raise WebweaveParameterError(f"Invalid window {self}: need x_min < x_max and t_min < t_max.")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def rows(self) -> int:
        """Number of time rows carrying increments (``t_min`` to ``t_max - 1``)."""
        return self.t_max - self.t_min

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.t_min, self.t_max + 1, dtype=np.float64)

    def contains(self, i, j) -> bool:
        return self.x_min <= i <= self.x_max and self.t_min <= j <= self.t_max

    def sites(self, parity=0, rows=None):
        """Sites ``(i, j)`` with ``(i + j) % 2 == parity`` for each requested row."""
        rows = range(self.t_min, self.t_max + 1) if rows is None else rows
        xs, ts = [], []
        for j in rows:
            first = self.x_min + ((parity - self.x_min - j) % 2)
            column = np.arange(first, self.x_max + 1, 2, dtype=np.int64)
            xs.append(column)
            ts.append(np.full(column.size, j, dtype=np.int64))
        if not xs:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        return np.concatenate(xs), np.concatenate(ts)


@dataclass(frozen=True)
class ScalingParams:
    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise WebweaveParameterError(f"Scaling delta must be positive, got {self.delta}")


@dataclass(frozen=True, eq=False)
class IncrementField:
    """Walk increments on a window, regenerable site by site.

    ``increments[i - x_min, j - t_min]`` is the step taken from site
    ``(i, j)``. A field built from a seed answers lookups outside its
    stored columns by regenerating the site, so walks may leave the window
    sideways; an injected field (``seed is None``) refuses them.
    """

    window: LatticeWindow
    law: tuple
    seed: int | None
    increments: np.ndarray = field(repr=False)

    def __post_init__(self):
        expected = (self.window.width, self.window.rows)
        if self.increments.shape != expected:
            raise WebweaveParameterError(f"Increment array has shape {self.increments.shape}, expected {expected}.")
        self.increments.flags.writeable = False

    @classmethod
    def from_array(cls, window: LatticeWindow, increments, law=SIMPLE_LAW) -> IncrementField:
        increments = np.array(increments, dtype=np.int64)
        if law.name == SIMPLE and not np.all(np.isin(increments, (-1, 1))):
            raise UnsupportedLawError("Simple-law fields take increments in {-1, +1} only.")
        return cls(window, law, None, increments)

    @classmethod
    def constant(cls, window: LatticeWindow, value: int = 1) -> IncrementField:
        return cls.from_array(window, np.full((window.width, window.rows), value))

    @property
    def is_simple(self) -> bool:
        return self.law.name == SIMPLE

    def increment_at(self, i, j) -> np.ndarray:
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        w = self.window
        if np.any((j < w.t_min) | (j >= w.t_max)):
            raise WebweaveWindowError(f"Increment requested at time rows outside [{w.t_min}, {w.t_max}).")
        i, j = np.broadcast_arrays(i, j)
        inside = (i >= w.x_min) & (i <= w.x_max)
        out = np.empty(i.shape, dtype=np.int64)
        out[inside] = self.increments[i[inside] - w.x_min, j[inside] - w.t_min]
        if not np.all(inside):
            if self.seed is None:
                raise WebweaveWindowError(f"A walk left the injected field's columns [{w.x_min}, {w.x_max}].")
            out[~inside] = rng.site_increments(self.law, self.seed, i[~inside], j[~inside])
        return out


def generate_field(window: LatticeWindow, law, seed: int, memory_budget_sites=DEFAULT_MEMORY_BUDGET_SITES):
    check_law(law)
    seed = rng.check_seed(seed)
    sites = window.width * window.rows
    if sites > memory_budget_sites:
        raise WebweaveResourceLimitError(
            f"Window {window} holds {sites} sites, over the memory budget of {memory_budget_sites} sites."
        )
    columns, rows = np.meshgrid(
        np.arange(window.x_min, window.x_max + 1), np.arange(window.t_min, window.t_max), indexing="ij"
    )
    increments = rng.site_increments(law, seed, columns, rows)
    LOGGER.debug("Generated %s field on %s with seed %s", law.name, window, seed)
    return IncrementField(window, law, seed, increments)


def _check_start(field_, i, j):
    w = field_.window
    if not (w.x_min <= i <= w.x_max and w.t_min <= j < w.t_max):
        raise WebweaveWindowError(f"Start ({i}, {j}) is outside window {w} or leaves no step to trace.")
    if field_.is_simple and (i + j) % 2 != 0:
        raise WebweaveWindowError(f"Start ({i}, {j}) is off the simple lattice (i + j must be even).")


def _trace_grid(field_, start_x, start_t):
    """Positions of all walks on the window's integer times, NaN before each start."""
    w = field_.window
    times = w.times
    values = np.full((start_x.size, times.size), np.nan)
    position = start_x.astype(np.int64).copy()
    for k, j in enumerate(range(w.t_min, w.t_max + 1)):
        live = start_t <= j
        values[live, k] = position[live]
        if j == w.t_max:
            break
        if np.any(live):
            position[live] += field_.increment_at(position[live], j)
    return times, values


def trace_forward(field_: IncrementField, start) -> Path:
    i, j = (int(v) for v in start)
    _check_start(field_, i, j)
    times, values = _trace_grid(field_, np.array([i]), np.array([j]))
    defined = np.isfinite(values[0])
    return Path(times[defined], values[0, defined])


def _resolve_starts(field_, starts):
    if isinstance(starts, str):
        if starts != ALL_IN_WINDOW:
            raise WebweaveParameterError(f"Unknown start set {starts!r}")
        w = field_.window
        rows = range(w.t_min, w.t_max)
        if field_.is_simple:
            return w.sites(parity=0, rows=rows)
        return _all_sites(w, rows)
    starts = [(int(i), int(j)) for i, j in starts]
    for i, j in starts:
        _check_start(field_, i, j)
    if not starts:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    xs, ts = zip(*starts)
    return np.array(xs, dtype=np.int64), np.array(ts, dtype=np.int64)


def _all_sites(window, rows):
    columns, times = np.meshgrid(np.arange(window.x_min, window.x_max + 1), np.asarray(list(rows)), indexing="ij")
    return columns.T.reshape(-1), times.T.reshape(-1)


def build_ensemble(field_: IncrementField, starts=ALL_IN_WINDOW) -> PathSet:
    start_x, start_t = _resolve_starts(field_, starts)
    times, values = _trace_grid(field_, start_x, start_t)
    return PathSet(
        None,
        FORWARD,
        grid=GridView(times, values),
        lattice=True,
        non_crossing=field_.is_simple,
    )


def build_dual(field_: IncrementField, starts=DUAL_STARTS_TOP) -> PathSet:
    """Backward walks on the dual sites, each step forced by the forward increment below it.

    From dual site ``(k, j)`` the walk moves to ``(k - D[k, j - 1], j - 1)``,
    the side the forward edge out of ``(k, j - 1)`` leaves free. Walks start
    from the top row by default; ``starts="all"`` starts one from every dual
    site, which the dual counts below the top row need.
    """
    if not field_.is_simple:
        raise UnsupportedLawError("Graphical duality is implemented for the simple law only.")
    w = field_.window
    if starts == DUAL_STARTS_ALL:
        rows = range(w.t_min + 1, w.t_max + 1)
    elif starts == DUAL_STARTS_TOP:
        rows = [w.t_max]
    else:
        raise WebweaveParameterError(f"Unknown dual start set {starts!r}")
    start_x, start_t = w.sites(parity=1, rows=rows)

    times = w.times
    values = np.full((start_x.size, times.size), np.nan)
    position = start_x.copy()
    for k in range(times.size - 1, -1, -1):
        j = w.t_min + k
        live = start_t >= j
        values[live, k] = position[live]
        if k == 0:
            break
        if np.any(live):
            position[live] -= field_.increment_at(position[live], j - 1)
    return PathSet(
        None,
        BACKWARD_DUAL,
        backward=True,
        grid=GridView(times, values),
        lattice=True,
        non_crossing=True,
    )


def rescale(paths: PathSet, s: ScalingParams) -> PathSet:
    """Diffusive rescaling: every knot ``(t, x)`` goes to ``(delta**2 t, delta x)``."""
    delta = s.delta
    kwargs = {"backward": paths.backward, "lattice": paths.lattice, "non_crossing": paths.non_crossing}
    if paths.grid is not None:
        times, values = paths.grid
        return PathSet(None, paths.label, grid=GridView(times * delta**2, values * delta), **kwargs)
    scaled = [Path(p.times * delta**2, p.xs * delta, backward=p.backward) for p in paths]
    return PathSet(scaled, paths.label, **kwargs)


def walk_positions(law, seeds, start_x, steps, start_t=0):
    """Independent single walks, one per seed, traced on each seed's own field.

    Returns an array of shape ``(len(seeds), steps + 1)``.
    """
    seeds = np.asarray(seeds, dtype=np.uint64)
    position = np.broadcast_to(np.asarray(start_x, dtype=np.int64), seeds.shape).copy()
    out = np.empty((seeds.size, steps + 1), dtype=np.int64)
    out[:, 0] = position
    for step in range(steps):
        position += rng.site_increments(law, seeds, position, start_t + step)
        out[:, step + 1] = position
    return out


def pair_meeting_steps(law, seeds, x1, x2, steps, start_t=0):
    """First step at which two walks on the same field share a site; ``steps + 1`` if never."""
    seeds = np.asarray(seeds, dtype=np.uint64)
    first = np.full(seeds.shape, x1, dtype=np.int64)
    second = np.full(seeds.shape, x2, dtype=np.int64)
    met = np.where(first == second, 0, steps + 1)
    for step in range(steps):
        open_ = met > steps
        if not np.any(open_):
            break
        first[open_] += rng.site_increments(law, seeds[open_], first[open_], start_t + step)
        second[open_] += rng.site_increments(law, seeds[open_], second[open_], start_t + step)
        met[open_ & (first == second)] = step + 1
    return met
