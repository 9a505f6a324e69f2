"""Piecewise-linear space-time paths and finite path collections."""

from __future__ import annotations

from collections import namedtuple
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from webweave.web.exceptions import EmptyPathSetError, WebweaveParameterError, WebweaveWindowError

# time comparisons snap to knots within this tolerance
TIME_TOL = 1e-9

FORWARD = "forward"
BACKWARD_DUAL = "backward-dual"

GridView = namedtuple("GridView", ("times", "values"))


def _frozen(values):
    values = np.array(values, dtype=np.float64)
    values.flags.writeable = False
    return values


@dataclass(frozen=True, eq=False)
class Path:
    """A polygonal path through the knots ``(times[k], xs[k])``.

    Knots are always stored in increasing time. A forward path starts at its
    first knot; a backward path starts at its last knot and runs down in time.
    """

    times: np.ndarray
    xs: np.ndarray
    backward: bool = False

    def __post_init__(self):
        times = _frozen(self.times).reshape(-1)
        xs = _frozen(self.xs).reshape(-1)
        if times.size == 0:
            raise WebweaveParameterError("A path needs at least one knot.")
        if times.size != xs.size:
            raise WebweaveParameterError(f"Knot arrays differ in length: {times.size} times, {xs.size} values.")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(xs))):
            raise WebweaveParameterError("Path knots must be finite.")
        if np.any(np.diff(times) <= 0):
            raise WebweaveParameterError("Path knot times must be strictly increasing.")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "xs", xs)

    @property
    def start_time(self) -> float:
        return float(self.times[-1] if self.backward else self.times[0])

    @property
    def start_value(self) -> float:
        return float(self.xs[-1] if self.backward else self.xs[0])

    @property
    def t_first(self) -> float:
        return float(self.times[0])

    @property
    def t_last(self) -> float:
        return float(self.times[-1])

    def covers(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        return (t >= self.t_first - TIME_TOL) & (t <= self.t_last + TIME_TOL)

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        if not np.all(self.covers(t)):
            raise WebweaveWindowError(
                f"Path defined on [{self.t_first}, {self.t_last}] evaluated outside its range at {t}"
            )
        value = np.interp(t, self.times, self.xs)
        return float(value) if value.ndim == 0 else value

    def extended(self, t):
        """Value of the path held constant before its first and after its last knot."""
        value = np.interp(np.asarray(t, dtype=np.float64), self.times, self.xs)
        return float(value) if value.ndim == 0 else value

    def __len__(self):
        return self.times.size

    def __repr__(self):
        direction = "backward" if self.backward else "forward"
        return f"Path({direction}, start=({self.start_value}, {self.start_time}), knots={self.times.size})"


def _row_to_path(times, row, backward):
    defined = np.flatnonzero(np.isfinite(row))
    if defined.size == 0:
        raise WebweaveParameterError("Grid row has no defined values.")
    lo, hi = defined[0], defined[-1] + 1
    return Path(times[lo:hi], row[lo:hi], backward=backward)


class PathSet:
    """A finite, immutable collection of paths sharing one direction.

    ``grid`` is an optional dense view: a common increasing time grid and a
    ``(len(paths), len(times))`` array with NaN outside each path's domain.
    Lattice and skeleton constructions always provide it; counting and
    crossing checks use it to stay vectorized.
    """

    def __init__(self, paths=None, label=FORWARD, *, backward=None, lattice=False, non_crossing=False, grid=None):
        self.label = label
        self.lattice = lattice
        self.non_crossing = non_crossing
        self._grid = grid
        if grid is not None:
            times = _frozen(grid.times)
            values = _frozen(grid.values)
            if values.ndim != 2 or values.shape[1] != times.size:
                raise WebweaveParameterError(f"Grid values of shape {values.shape} do not match {times.size} times.")
            self._grid = GridView(times, values)
        self._paths = tuple(paths) if paths is not None else None
        if self._paths is None and self._grid is None:
            raise WebweaveParameterError("A PathSet needs paths or a grid.")
        if backward is None:
            backward = label == BACKWARD_DUAL
        self.backward = backward
        if self._paths is not None and any(p.backward != backward for p in self._paths):
            raise WebweaveParameterError("All paths in a PathSet must share one direction.")

    @classmethod
    def from_grid(cls, times, values, label=FORWARD, **kwargs):
        return cls(None, label, grid=GridView(times, values), **kwargs)

    @property
    def grid(self):
        return self._grid

    @cached_property
    def paths(self):
        if self._paths is not None:
            return self._paths
        times, values = self._grid
        return tuple(_row_to_path(times, row, self.backward) for row in values)

    def __len__(self):
        if self._paths is not None:
            return len(self._paths)
        return self._grid.values.shape[0]

    def __iter__(self):
        return iter(self.paths)

    def __getitem__(self, index):
        return self.paths[index]

    def __repr__(self):
        return f"PathSet(label={self.label!r}, paths={len(self)}, window={self.time_window})"

    @cached_property
    def start_times(self) -> np.ndarray:
        if self._grid is not None:
            times, values = self._grid
            defined = np.isfinite(values)
            if self.backward:
                index = values.shape[1] - 1 - np.argmax(defined[:, ::-1], axis=1)
            else:
                index = np.argmax(defined, axis=1)
            return times[index]
        return np.array([p.start_time for p in self.paths])

    @cached_property
    def time_window(self):
        if len(self) == 0:
            raise EmptyPathSetError("Empty PathSet has no time window.")
        if self._grid is not None:
            times, values = self._grid
            defined = np.flatnonzero(np.isfinite(values).any(axis=0))
            return float(times[defined[0]]), float(times[defined[-1]])
        return min(p.t_first for p in self.paths), max(p.t_last for p in self.paths)

    def _grid_column(self, t):
        times = self._grid.times
        k = int(np.searchsorted(times, t))
        for candidate in (k - 1, k):
            if 0 <= candidate < times.size and abs(times[candidate] - t) <= TIME_TOL * max(1.0, abs(t)):
                return candidate, None
        if k == 0 or k >= times.size:
            return None, None
        return k - 1, (t - times[k - 1]) / (times[k] - times[k - 1])

    def values_at(self, t) -> np.ndarray:
        """Path values at time ``t``; NaN for paths not defined there."""
        t = float(t)
        if self._grid is not None:
            k, frac = self._grid_column(t)
            values = self._grid.values
            if k is None:
                return np.full(values.shape[0], np.nan)
            if frac is None:
                return values[:, k].copy()
            return values[:, k] + frac * (values[:, k + 1] - values[:, k])
        out = np.full(len(self), np.nan)
        for n, path in enumerate(self.paths):
            if path.covers(t):
                out[n] = path(t)
        return out

    def rows(self, t_lo, t_hi):
        """Grid columns inside ``[t_lo, t_hi]`` as ``(times, values)``."""
        if self._grid is None:
            raise WebweaveParameterError("PathSet has no grid view.")
        times, values = self._grid
        keep = (times >= t_lo - TIME_TOL) & (times <= t_hi + TIME_TOL)
        return times[keep], values[:, keep]


def strict_crossing(p: Path, q: Path):
    """First time interval on which ``p - q`` flips strictly from one sign to the other.

    Both paths are compared on the union of their knots inside the common
    domain; returns the right end of the offending interval, or None.
    """
    lo, hi = max(p.t_first, q.t_first), min(p.t_last, q.t_last)
    if hi < lo:
        return None
    times = np.union1d(p.times, q.times)
    times = times[(times >= lo) & (times <= hi)]
    if times.size < 2:
        return None
    sign = np.sign(p.extended(times) - q.extended(times))
    flips = np.flatnonzero(sign[:-1] * sign[1:] < 0)
    return float(times[flips[0] + 1]) if flips.size else None


def _grid_crossing_count(values_a, values_b, same_set, chunk=256):
    count = 0
    n_a = values_a.shape[0]
    for lo in range(0, n_a, chunk):
        block = values_a[lo : lo + chunk]
        # (chunk, n_b, columns); NaN signs never count as flips
        sign = np.sign(values_b[None, :, :] - block[:, None, :])
        bad = np.any(sign[:, :, :-1] * sign[:, :, 1:] < 0, axis=2)
        if same_set:
            rows = np.arange(lo, lo + block.shape[0])[:, None]
            bad &= np.arange(values_b.shape[0])[None, :] > rows
        count += int(np.count_nonzero(bad))
    return count


def _ranked_crossing_count(values_a, values_b):
    # valid when both families are internally non-crossing and never tie
    # across families (forward and dual lattices have opposite parity)
    count = 0
    for k in range(values_a.shape[1] - 1):
        a_now, a_next = values_a[:, k], values_a[:, k + 1]
        b_now, b_next = values_b[:, k], values_b[:, k + 1]
        live_a = np.isfinite(a_now) & np.isfinite(a_next)
        live_b = np.isfinite(b_now) & np.isfinite(b_next)
        if not (live_a.any() and live_b.any()):
            continue
        below_now = np.searchsorted(np.sort(b_now[live_b]), a_now[live_a], side="left")
        below_next = np.searchsorted(np.sort(b_next[live_b]), a_next[live_a], side="left")
        count += int(np.abs(below_now - below_next).sum())
    return count


def count_strict_crossings(first: PathSet, second: PathSet | None = None) -> int:
    """Number of path pairs that strictly cross.

    With one argument, pairs inside the set; with two, pairs across the sets.
    Sets sharing a grid are compared column by column.
    """
    same_set = second is None
    second = first if second is None else second
    if (
        first.grid is not None
        and second.grid is not None
        and np.array_equal(first.grid.times, second.grid.times)
    ):
        if not same_set and first.lattice and second.lattice and first.non_crossing and second.non_crossing:
            return _ranked_crossing_count(first.grid.values, second.grid.values)
        return _grid_crossing_count(first.grid.values, second.grid.values, same_set)
    count = 0
    for n, p in enumerate(first.paths):
        others = second.paths[n + 1 :] if same_set else second.paths
        count += sum(1 for q in others if strict_crossing(p, q) is not None)
    return count
