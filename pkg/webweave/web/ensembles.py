"""Seeded path-set samplers used by the Monte Carlo diagnostics.

Every model maps a replica seed to a forward PathSet in diffusive
coordinates, and can restrict the sampled starts to a few start regions
``((x_lo, x_hi), (t_lo, t_hi))``. For lattice walks that restriction is
exact for the counting and tightness events: a walk through a lattice site
shares its future with the walk started at that site.
"""

from __future__ import annotations

import math
from functools import reduce

import numpy as np
import singer

from webweave.web import rng
from webweave.web.brownian import SkeletonSpec, sample_skeleton
from webweave.web.exceptions import WebweaveParameterError
from webweave.web.lattice import (
    ALL_IN_WINDOW,
    DEFAULT_MEMORY_BUDGET_SITES,
    LatticeWindow,
    ScalingParams,
    build_ensemble,
    generate_field,
    pair_meeting_steps,
    rescale,
    walk_positions,
)
from webweave.web.laws import SIMPLE, law_variance, parse_law
from webweave.web.paths import FORWARD, PathSet

LOGGER = singer.get_logger()

MARGINAL_STREAM = 3
PAIR_STREAM = 4

# walks traced together; each holds its whole trajectory
SEED_CHUNK = 4096

MARGINAL_TIME = 1.0
# the marginal path (label 1) runs behind a lower-label path one unit to its right
MARGINAL_STARTS = ((1.0, 0.0), (0.0, 0.0))

# meeting pairs are censored after this much rescaled time
PAIR_HORIZON = 4.0


class LatticeWalkModel:
    """Coalescing walks of one increment law, rescaled by ``delta``.

    ``x_range`` and ``t_range`` are in rescaled units and fix the lattice
    window; walks may still leave it sideways.
    """

    lattice = True

    def __init__(self, law, delta, x_range, t_range, memory_budget_sites=DEFAULT_MEMORY_BUDGET_SITES):
        self.law = law
        self.scaling = ScalingParams(float(delta))
        self.memory_budget_sites = memory_budget_sites
        d = self.scaling.delta
        self.window = LatticeWindow(
            math.floor(x_range[0] / d),
            math.ceil(x_range[1] / d),
            math.floor(t_range[0] / d**2 + 1e-9),
            math.ceil(t_range[1] / d**2 - 1e-9),
        )

    @property
    def delta(self):
        return self.scaling.delta

    @property
    def sigma(self):
        return math.sqrt(law_variance(self.law))

    def __repr__(self):
        return f"LatticeWalkModel(law={self.law.name}, delta={self.delta}, window={self.window})"

    def lattice_starts(self, regions):
        d, w = self.delta, self.window
        sites = set()
        for (x_lo, x_hi), (t_lo, t_hi) in regions:
            rows = range(max(math.ceil(t_lo / d**2 - 1e-9), w.t_min), min(math.floor(t_hi / d**2 + 1e-9), w.t_max - 1) + 1)
            columns = range(max(math.ceil(x_lo / d - 1e-9), w.x_min), min(math.floor(x_hi / d + 1e-9), w.x_max) + 1)
            for j in rows:
                sites.update((i, j) for i in columns if self.law.name != SIMPLE or (i + j) % 2 == 0)
        return sorted(sites, key=lambda s: (s[1], s[0]))

    def sample(self, seed, regions=None) -> PathSet:
        field_ = generate_field(self.window, self.law, seed, self.memory_budget_sites)
        starts = ALL_IN_WINDOW if regions is None else self.lattice_starts(regions)
        return rescale(build_ensemble(field_, starts), self.scaling)

    def _step_lattice(self):
        """Spacing of the sites where two walks can meet."""
        support = [int(s) for s in self.law.support]
        return reduce(math.gcd, (abs(a - b) for a in support for b in support), 0)

    def marginal_samples(self, seeds, delta=None):
        """Walk position at rescaled time 1, normalised to unit variance, one per seed."""
        d = self.delta if delta is None else float(delta)
        steps = max(int(round(1.0 / d**2)), 1)
        seeds = [rng.stream_seed(s, MARGINAL_STREAM) for s in seeds]
        chunks = [seeds[lo : lo + SEED_CHUNK] for lo in range(0, len(seeds), SEED_CHUNK)]
        positions = np.concatenate([walk_positions(self.law, chunk, 0, steps)[:, -1] for chunk in chunks] or [np.empty(0)])
        return positions * d / self.sigma

    def pair_separation(self, u, delta=None):
        """Rescaled starting distance actually used for a pair requested ``u`` apart."""
        d = self.delta if delta is None else float(delta)
        step = self._step_lattice()
        sites = max(step, step * int(round(u * self.sigma / (d * step))))
        return sites, sites * d / self.sigma

    def pair_meeting_times(self, seeds, u, delta=None, horizon=PAIR_HORIZON):
        """Rescaled meeting times of two walks ``u`` apart; ``inf`` when censored at ``horizon``."""
        d = self.delta if delta is None else float(delta)
        sites, _ = self.pair_separation(u, d)
        steps = int(math.ceil(horizon / d**2))
        seeds = [rng.stream_seed(s, PAIR_STREAM) for s in seeds]
        met = pair_meeting_steps(self.law, seeds, 0, sites, steps).astype(np.float64)
        met[met > steps] = np.inf
        return met * d**2


class BrownianModel:
    """Coalescing Brownian skeleton from a row of evenly spaced starts at each start time."""

    lattice = False

    def __init__(
        self,
        x_range,
        spacing,
        start_times,
        grid_dt,
        horizon,
        floor=None,
        memory_budget_sites=DEFAULT_MEMORY_BUDGET_SITES,
    ):
        if not spacing > 0:
            raise WebweaveParameterError(f"Start spacing must be positive, got {spacing}")
        count = int(round((x_range[1] - x_range[0]) / spacing)) + 1
        xs = x_range[0] + spacing * np.arange(count)
        self.starts = tuple((float(x), float(t)) for t in start_times for x in xs)
        self.grid_dt = float(grid_dt)
        self.horizon = float(horizon)
        self.floor = floor
        self.memory_budget_sites = memory_budget_sites
        # validates the start set and the grid once
        self.spec(0)

    def __repr__(self):
        return f"BrownianModel(starts={len(self.starts)}, grid_dt={self.grid_dt}, horizon={self.horizon})"

    def spec(self, seed, starts=None, horizon=None, floor=None) -> SkeletonSpec:
        if starts is None:
            return SkeletonSpec(self.starts, self.grid_dt, self.horizon, seed, self.floor)
        return SkeletonSpec(starts, self.grid_dt, self.horizon if horizon is None else horizon, seed, floor)

    def sample(self, seed, regions=None) -> PathSet:
        return sample_skeleton(self.spec(seed), self.memory_budget_sites).paths

    @property
    def marginal_time(self):
        floor = min(t for _, t in self.starts) if self.floor is None else float(self.floor)
        return min(MARGINAL_TIME, self.horizon - floor)

    def marginal_samples(self, seeds, delta=None):
        """Skeleton value at the grid time nearest ``marginal_time``, normalised to unit variance.

        The sampled path starts at 0 with label 1, behind a lower-label path
        started at 1, so the merge rule acts on it before it is read.
        """
        out = np.empty(len(seeds))
        for n, s in enumerate(seeds):
            spec = self.spec(rng.stream_seed(s, MARGINAL_STREAM), MARGINAL_STARTS, self.marginal_time, 0.0)
            grid = sample_skeleton(spec, self.memory_budget_sites).paths.grid
            out[n] = grid.values[1, -1] / math.sqrt(grid.times[-1])
        return out

    def pair_separation(self, u, delta=None):
        return None, float(u)

    def pair_meeting_times(self, seeds, u, delta=None, horizon=PAIR_HORIZON):
        """Coalescence times of a two-start skeleton ``u`` apart; ``inf`` when censored at ``horizon``.

        The time is the crossing time interpolated inside the grid step where
        the merge rule first joins the two rows.
        """
        starts = ((0.0, 0.0), (float(u), 0.0))
        times = np.full(len(seeds), np.inf)
        for n, s in enumerate(seeds):
            spec = self.spec(rng.stream_seed(s, PAIR_STREAM), starts, horizon, 0.0)
            events = sample_skeleton(spec, self.memory_budget_sites).coalescence_events
            if events:
                times[n] = events[0].time
        times[times > horizon] = np.inf
        LOGGER.debug("Skeleton pairs %s apart: %s of %s met by %s", u, int(np.isfinite(times).sum()), len(seeds), horizon)
        return times


class ConstantModel:
    """The same non-random paths for every seed: constant paths at ``xs`` over ``times``."""

    lattice = False

    def __init__(self, xs, times):
        times = np.asarray(times, dtype=np.float64)
        xs = np.asarray(xs, dtype=np.float64)
        self.paths = PathSet.from_grid(times, np.repeat(xs[:, None], times.size, axis=1), FORWARD, non_crossing=True)

    def __repr__(self):
        return f"ConstantModel(paths={len(self.paths)})"

    def sample(self, seed, regions=None) -> PathSet:
        return self.paths


def parse_model(config, memory_budget_sites=DEFAULT_MEMORY_BUDGET_SITES):
    """Build a model from its config block, keyed by ``type``."""
    kind = (config or {}).get("type")
    if kind == "walk":
        return LatticeWalkModel(
            parse_law(config["law"]),
            config["delta"],
            config["x_range"],
            config["t_range"],
            memory_budget_sites,
        )
    if kind == "skeleton":
        return BrownianModel(
            config["x_range"],
            config["spacing"],
            config["start_times"],
            config["grid_dt"],
            config["horizon"],
            config.get("floor"),
            memory_budget_sites,
        )
    if kind == "constant":
        return ConstantModel(config["xs"], config["times"])

    raise WebweaveParameterError(f"Cannot create a path model from config: {config!r}")
