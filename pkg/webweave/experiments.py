"""Experiment runners behind the CLI.

Each runner takes a :class:`RunContext`, writes its tables and plot data
through the context's :class:`ResultBundle` and returns the ``results``
block of the summary. Replica ``r`` of experiment ``e`` always gets the seed
``rng.replica_seeds(seed, code(e), replicas)[r]``.
"""

from __future__ import annotations

import asyncio
import concurrent.futures
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
import singer
from singer import metrics

from webweave.output import ResultBundle
from webweave.web import rng
from webweave.web.brownian import (
    BACKWARD_NOISE,
    FORWARD_NOISE,
    SkeletonSpec,
    pair_coalescence_time,
    reflect_cr,
    sample_double_skeleton,
    sample_skeleton,
)
from webweave.web.continuous import ClockField, check_walker_duality, simulate_continuous
from webweave.web.counting import (
    CountingQuery,
    check_type_duality,
    coalescence_points,
    eta,
    eta_dual,
    expected_eta,
    grid_aligned,
    theta,
)
from webweave.web.diagnostics import (
    MIN_BOX_POINTS,
    binomial,
    box_dimension,
    check_I1,
    estimate_B,
    estimate_Bprime,
    estimate_tightness,
    eta_mean,
    eta_samples,
    graph_points,
    label_permutation_check,
    record_projection,
    verify_counting_bound,
    verify_submultiplicativity,
    verify_walkbound,
)
from webweave.web.ensembles import BrownianModel, parse_model
from webweave.web.exceptions import WebweaveParameterError
from webweave.web.lattice import (
    DEFAULT_MEMORY_BUDGET_SITES,
    DUAL_STARTS_ALL,
    LatticeWindow,
    ScalingParams,
    build_dual,
    build_ensemble,
    generate_field,
    rescale,
    walk_positions,
)
from webweave.web.laws import SIMPLE_LAW, law_variance, parse_law
from webweave.web.metric import hausdorff_distance, path_distance, phi_supremum
from webweave.web.paths import Path, PathSet, count_strict_crossings

LOGGER = singer.get_logger()

EXPERIMENT_CODES = {
    "simulate": 1,
    "eta-stats": 2,
    "duality-check": 3,
    "converge": 4,
    "tightness": 5,
    "dimension": 6,
    "metric": 7,
    "cr-reflect": 8,
    "walk-bound": 9,
    "type-duality": 10,
}

# extra spawn keys under an experiment stream, kept clear of replica indices
REFINED_STREAM = 1
QUERY_STREAM = 2**20
PERMUTATION_STREAM = 2**20 + 1
THETA_STREAM = 2**20 + 2

ETA_COLUMNS = ("t0", "t", "a", "b", "eta", "replica", "seed")


@dataclass
class RunContext:
    experiment: str
    params: dict
    seed: int
    seeds: list
    runner: ReplicaRunner
    bundle: ResultBundle
    memory_budget_sites: int

    @property
    def code(self):
        return EXPERIMENT_CODES[self.experiment]

    @property
    def replicas(self):
        return len(self.seeds)


class ReplicaRunner:
    """Evaluates ``fn(seed)`` for every replica seed and returns the results in seed order."""

    def __init__(self, experiment, threads=1):
        self.experiment = experiment
        self.threads = max(int(threads), 1)

    def __call__(self, fn, seeds):
        seeds = list(seeds)
        with metrics.record_counter(self.experiment) as counter:
            if self.threads == 1 or len(seeds) < 2:
                results = []
                for seed in seeds:
                    results.append(fn(seed))
                    counter.increment()
                return results
            return self._run_threaded(fn, seeds, counter)

    @staticmethod
    async def _replica(loop, fn, seed, counter):
        result = await loop.run_in_executor(None, fn, seed)
        counter.increment()
        return result

    def _run_threaded(self, fn, seeds, counter):
        executor = concurrent.futures.ThreadPoolExecutor(max_workers=self.threads)
        loop = asyncio.new_event_loop()
        loop.set_default_executor(executor)

        async def gather_all():
            # one task per replica; gather keeps seed order
            return await asyncio.gather(*(self._replica(loop, fn, seed, counter) for seed in seeds))

        try:
            return loop.run_until_complete(gather_all())
        finally:
            loop.run_until_complete(loop.shutdown_asyncgens())
            loop.close()


def _query(block):
    return CountingQuery(float(block["t0"]), float(block["t"]), float(block["a"]), float(block["b"]))


def _window(block):
    return LatticeWindow(int(block["x_min"]), int(block["x_max"]), int(block["t_min"]), int(block["t_max"]))


def _reports(reports):
    return [r.as_dict() for r in reports]


def _path_rows(family, paths):
    for n, path in enumerate(paths):
        for t, x in zip(path.times.tolist(), path.xs.tolist()):
            yield (family, n, t, x)


def _eta_rows(q, samples, seeds):
    for replica, (value, seed) in enumerate(zip(samples.tolist(), seeds)):
        yield (q.t0, q.t, q.a, q.b, value, replica, seed)


# simulate


def _simulate_walk(ctx, seed):
    params = ctx.params
    if "law" not in params or "window" not in params:
        raise WebweaveParameterError("simulate kind 'walk' needs 'law' and 'window'.")
    scaling = ScalingParams(float(params.get("delta", 1.0)))
    field_ = generate_field(_window(params["window"]), parse_law(params["law"]), seed, ctx.memory_budget_sites)
    forward = build_ensemble(field_)
    dual = build_dual(field_) if field_.is_simple else None
    summary = {
        "forward_paths": len(forward),
        "dual_paths": 0 if dual is None else len(dual),
        "coalescence_points": len(coalescence_points(forward)),
        "crossings": 0 if dual is None else count_strict_crossings(forward, dual),
    }
    return summary, rescale(forward, scaling), None if dual is None else rescale(dual, scaling)


def _simulate_continuous(ctx, seed):
    params = ctx.params
    if "rate" not in params or "window" not in params:
        raise WebweaveParameterError("simulate kind 'continuous' needs 'rate' and 'window'.")
    window = _window(params["window"])
    clocks = ClockField(params["rate"], window.t_min, window.t_max, seed=seed)
    starts = [(i, window.t_min) for i in range(window.x_min, window.x_max + 1)]
    dual_starts = [(k, window.t_max) for k in range(window.x_min, window.x_max)]
    forward, dual = simulate_continuous(window, params["rate"], clocks=clocks, starts=starts, dual_starts=dual_starts)
    summary = {
        "forward_paths": len(forward),
        "dual_paths": len(dual),
        "coalescence_points": 0,
        "crossings": check_walker_duality(clocks, starts, dual_starts),
    }
    return summary, forward, dual


def _skeleton_spec(params, seed):
    missing = [k for k in ("starts", "grid_dt", "horizon") if k not in params]
    if missing:
        raise WebweaveParameterError(f"Skeleton runs need {', '.join(missing)}.")
    return SkeletonSpec(
        [tuple(s) for s in params["starts"]],
        params["grid_dt"],
        params["horizon"],
        seed,
        params.get("floor"),
    )


def _simulate_skeleton(ctx, seed):
    result = sample_skeleton(_skeleton_spec(ctx.params, seed), ctx.memory_budget_sites)
    summary = {
        "forward_paths": len(result.paths),
        "dual_paths": 0,
        "coalescence_points": len(result.coalescence_events),
        "crossings": count_strict_crossings(result.paths),
    }
    return summary, result.paths, None


def _simulate_double_skeleton(ctx, seed):
    forward, backward = sample_double_skeleton(_skeleton_spec(ctx.params, seed), ctx.memory_budget_sites)
    summary = {
        "forward_paths": len(forward),
        "dual_paths": len(backward),
        "coalescence_points": 0,
        "crossings": count_strict_crossings(forward, backward),
    }
    return summary, forward, backward


SIMULATORS = {
    "walk": _simulate_walk,
    "continuous": _simulate_continuous,
    "skeleton": _simulate_skeleton,
    "double-skeleton": _simulate_double_skeleton,
}


def run_simulate(ctx: RunContext):
    simulator = SIMULATORS[ctx.params["kind"]]
    # only the first replica's paths are written out
    first = {}

    def replica(seed):
        summary, forward, dual = simulator(ctx, seed)
        if seed == ctx.seeds[0]:
            first["paths"] = (forward, dual)
        return summary

    summaries = ctx.runner(replica, ctx.seeds)
    columns = ("replica", "seed", "forward_paths", "dual_paths", "coalescence_points", "crossings")
    ctx.bundle.add_table(
        "replicas.csv", columns, [{"replica": r, "seed": s, **row} for r, (s, row) in enumerate(zip(ctx.seeds, summaries))]
    )
    forward, dual = first["paths"]
    rows = list(_path_rows("forward", forward))
    if dual is not None:
        rows.extend(_path_rows("backward", dual))
    ctx.bundle.add_table("paths.csv", ("family", "path", "t", "x"), rows)
    return {
        "kind": ctx.params["kind"],
        "replicas": ctx.replicas,
        "forward_paths": sum(s["forward_paths"] for s in summaries),
        "dual_paths": sum(s["dual_paths"] for s in summaries),
        "coalescence_points": sum(s["coalescence_points"] for s in summaries),
        "crossings": sum(s["crossings"] for s in summaries),
    }


# eta-stats and walk-bound


def _tail_series(samples, kmax):
    n = samples.size
    series = []
    for k in range(1, kmax + 1):
        p, se = binomial(samples >= k + 1, n)
        series.append((k, p, se))
    return series


def run_eta_stats(ctx: RunContext):
    params = ctx.params
    model = parse_model(params["model"], ctx.memory_budget_sites)
    q = _query(params["query"])
    samples = eta_samples(model, q, ctx.seeds, ctx.runner)
    ctx.bundle.add_table("eta.csv", ETA_COLUMNS, _eta_rows(q, samples, ctx.seeds))

    mean = eta_mean(samples)
    expected = expected_eta(q.a, q.b, q.t)
    results = {
        "query": q.as_dict(),
        "model": repr(model),
        "mean": {**mean.as_dict(), "expected": expected, "passed": bool(abs(mean.estimate - expected) <= 3 * mean.std_error)},
        "counting_bound": _reports(verify_counting_bound(model, q, params["ks"], samples=samples)),
    }
    if params.get("submultiplicative_ks"):
        results["submultiplicativity"] = _reports(
            verify_submultiplicativity(model, q, params["submultiplicative_ks"], samples=samples)
        )

    kmax = max(params["ks"])
    ctx.bundle.add_plot("eta_tail.dat", _tail_series(samples, kmax))
    ctx.bundle.add_plot("eta_bound.dat", [(k, theta(q.b - q.a, q.t) ** k, 0.0) for k in range(1, kmax + 1)])

    if params.get("compare_half_dt"):
        results["grid_refinement"] = _grid_refinement(ctx, params["model"], q, mean)
    if params.get("label_permutation"):
        if not isinstance(model, BrownianModel):
            raise WebweaveParameterError("label_permutation needs a skeleton model.")
        permutation_seed = rng.stream_seed(ctx.seed, ctx.code, PERMUTATION_STREAM)
        report = label_permutation_check(
            model.starts, q, model.grid_dt, model.horizon, ctx.seeds, permutation_seed, ctx.runner
        )
        results["label_permutation"] = report.as_dict()
    LOGGER.info("eta mean %.6g +- %.3g over %s replicas (expected %.6g)", mean.estimate, mean.std_error,
                mean.replicas, expected)
    return results


def _grid_refinement(ctx, block, q, coarse):
    if block.get("type") != "skeleton":
        raise WebweaveParameterError("compare_half_dt needs a skeleton model.")
    refined_model = parse_model({**block, "grid_dt": block["grid_dt"] / 2.0}, ctx.memory_budget_sites)
    seeds = [rng.stream_seed(s, REFINED_STREAM) for s in ctx.seeds]
    refined = eta_mean(eta_samples(refined_model, q, seeds, ctx.runner))
    difference = refined.estimate - coarse.estimate
    combined = math.hypot(refined.std_error, coarse.std_error)
    LOGGER.info("eta mean %.6g at grid_dt %s, %.6g at %s", coarse.estimate, block["grid_dt"], refined.estimate,
                block["grid_dt"] / 2.0)
    return {
        "coarse_grid_dt": block["grid_dt"],
        "coarse_mean": coarse.estimate,
        "grid_dt": block["grid_dt"] / 2.0,
        "mean": refined.estimate,
        "std_error": refined.std_error,
        "difference": difference,
        "combined_se": combined,
        "passed": bool(abs(difference) < 3 * combined),
    }


def run_walk_bound(ctx: RunContext):
    params = ctx.params
    model = parse_model(params["model"], ctx.memory_budget_sites)
    q = _query(params["query"])
    samples = eta_samples(model, q, ctx.seeds, ctx.runner)
    ctx.bundle.add_table("eta.csv", ETA_COLUMNS, _eta_rows(q, samples, ctx.seeds))
    report = verify_walkbound(model, q, params["k"], samples=samples)
    ctx.bundle.add_plot(
        "walk_bound.dat",
        [(params["k"], report.estimate, report.std_error),
         (params["k"], report.parameters["bound"], report.parameters["bound_se"])],
    )
    return {"query": q.as_dict(), "model": repr(model), "walk_bound": report.as_dict()}


# duality-check and type-duality


def _query_battery(ctx, window):
    """Random interior grid-aligned queries, one battery shared by every field."""
    params = ctx.params
    if "query_count" not in params or "max_t" not in params:
        raise WebweaveParameterError("duality-check needs 'queries' or both 'query_count' and 'max_t'.")
    max_t = int(params["max_t"])
    if window.x_max - window.x_min < 2 * max_t or window.t_max - window.t_min < max_t:
        raise WebweaveParameterError(f"Window {window} is too small for queries with t up to {max_t}.")
    gen = rng.generator(ctx.seed, ctx.code, QUERY_STREAM)
    queries = []
    for _ in range(int(params["query_count"])):
        t = int(gen.integers(1, max_t + 1))
        t0 = int(gen.integers(window.t_min, window.t_max - t + 1))
        lo, hi = window.x_min + t, window.x_max - t
        # endpoints on the forward sublattice of row t0
        lo += (lo + t0) % 2
        hi -= (hi + t0) % 2
        a = lo + 2 * int(gen.integers(0, (hi - lo) // 2 + 1))
        b = a + 2 * int(gen.integers(0, (hi - a) // 2 + 1))
        queries.append(CountingQuery(t0, t, a, b))
    return queries


def run_duality_check(ctx: RunContext):
    params = ctx.params
    window = _window(params["window"])
    if "queries" in params:
        queries = [_query(block) for block in params["queries"]]
    else:
        queries = _query_battery(ctx, window)
    aligned = [q for q in queries if grid_aligned(window, q)]
    skipped = len(queries) - len(aligned)
    if skipped:
        LOGGER.warning("Skipping %s query(ies) that are not interior and grid-aligned in %s", skipped, window)

    def replica(seed):
        field_ = generate_field(window, SIMPLE_LAW, seed, ctx.memory_budget_sites)
        forward, dual = build_ensemble(field_), build_dual(field_, DUAL_STARTS_ALL)
        return [(eta(forward, q), eta_dual(dual, q)) for q in aligned]

    counts = ctx.runner(replica, ctx.seeds)
    rows = []
    violations = 0
    for r, (seed, pairs) in enumerate(zip(ctx.seeds, counts)):
        for q, (forward_count, dual_count) in zip(aligned, pairs):
            violations += int(forward_count != 1 + dual_count)
            rows.append((r, seed, q.t0, q.t, q.a, q.b, forward_count, dual_count))
    ctx.bundle.add_table("duality.csv", ("replica", "seed", "t0", "t", "a", "b", "eta", "eta_dual"), rows)
    LOGGER.info("Duality checked on %s fields x %s queries: %s violation(s)", ctx.replicas, len(aligned), violations)
    return {
        "fields": ctx.replicas,
        "queries": len(aligned),
        "skipped_queries": skipped,
        "checks": len(rows),
        "violations": violations,
        "passed": violations == 0,
    }


def run_type_duality(ctx: RunContext):
    params = ctx.params
    window = _window(params["window"])
    depth = int(params["probe_depth"])

    def replica(seed):
        field_ = generate_field(window, SIMPLE_LAW, seed, ctx.memory_budget_sites)
        return check_type_duality(build_ensemble(field_), build_dual(field_, DUAL_STARTS_ALL), window, depth)

    results = ctx.runner(replica, ctx.seeds)
    census, dual_census = Counter(), Counter()
    for result in results:
        census.update(result.census)
        dual_census.update(result.dual_census)
    rows = [("forward", m_in, m_out, n) for (m_in, m_out), n in sorted(census.items())]
    rows.extend(("dual", m_in, m_out, n) for (m_in, m_out), n in sorted(dual_census.items()))
    ctx.bundle.add_table("types.csv", ("family", "m_in", "m_out", "count"), rows)
    violations = sum(r.violations for r in results)
    return {
        "fields": ctx.replicas,
        "probe_depth": depth,
        "sites": sum(r.sites for r in results),
        "violations": violations,
        "passed": violations == 0,
        "census": {f"{m_in},{m_out}": n for (m_in, m_out), n in sorted(census.items())},
        "dual_census": {f"{m_in},{m_out}": n for (m_in, m_out), n in sorted(dual_census.items())},
    }


# converge and tightness


def _trend_rows(table):
    return [[row[c] for c in table.columns] for row in table.rows]


def _theta_checks(ctx, points):
    out = []
    for index, (u, t) in enumerate(points):
        seed = rng.stream_seed(ctx.seed, ctx.code, THETA_STREAM, index)
        times = pair_coalescence_time(0.0, u, seed, size=ctx.replicas)
        p, se = binomial(times > t, ctx.replicas)
        expected = theta(u, t)
        out.append({"u": u, "t": t, "p": p, "std_error": se, "expected": expected,
                    "passed": bool(abs(p - expected) <= 3 * se)})
    return out


def run_converge(ctx: RunContext):
    params = ctx.params
    model = parse_model(params["model"], ctx.memory_budget_sites)
    if not hasattr(model, "marginal_samples"):
        raise WebweaveParameterError(f"{model!r} has no marginal law to check.")
    results = {"model": repr(model)}

    i1 = check_I1(model, params["starts"], params["delta_seq"], ctx.seeds, ctx.runner)
    results["i1"] = _reports(i1)
    ctx.bundle.add_table(
        "i1.csv",
        ("delta", "ks_statistic", "std_error", "p_value", "replicas", "passed"),
        [(r.parameters["delta"], r.estimate, r.std_error, r.parameters["marginal_p_value"], r.replicas, r.passed)
         for r in i1],
    )
    pair_columns = ("delta", "u", "ks_statistic", "p_value", "met_by_1", "met_by_1_se", "met_by_1_expected")
    ctx.bundle.add_table(
        "i1_pairs.csv",
        pair_columns,
        [{"delta": r.parameters["delta"], **pair} for r in i1 for pair in r.parameters["pairs"]],
    )
    if params["delta_seq"]:
        ctx.bundle.add_plot("i1_marginal.dat", [(r.parameters["delta"], r.estimate, r.std_error) for r in i1])

    table = estimate_B(model, params["t"], params["eps_seq"], params["probes"], ctx.seeds, ctx.runner)
    results["b"] = table._asdict()
    ctx.bundle.add_table("b_trend.csv", table.columns, _trend_rows(table))
    ctx.bundle.add_plot("b_p1.dat", [(r["eps"], r["p1"], r["p1_se"]) for r in table.rows])
    ctx.bundle.add_plot("b_p2_over_eps.dat", [(r["eps"], r["p2_over_eps"], r["p2_over_eps_se"]) for r in table.rows])

    if "bprime" in params:
        block = params["bprime"]
        table = estimate_Bprime(
            model, block["beta"], block["t_seq"], params["eps_seq"], params["probes"], ctx.seeds, ctx.runner
        )
        results["bprime"] = table._asdict()
        ctx.bundle.add_table("bprime_trend.csv", table.columns, _trend_rows(table))

    if params.get("theta_points"):
        results["theta"] = _theta_checks(ctx, params["theta_points"])
        ctx.bundle.add_table("theta.csv", ("u", "t", "p", "std_error", "expected", "passed"), results["theta"])
    return results


def run_tightness(ctx: RunContext):
    params = ctx.params
    model = parse_model(params["model"], ctx.memory_budget_sites)
    table = estimate_tightness(model, params["t_seq"], params["u"], params["L"], params["T"], ctx.seeds, ctx.runner)
    ctx.bundle.add_table("tightness.csv", table.columns, _trend_rows(table))
    ctx.bundle.add_plot("tightness.dat", [(r["t"], r["g"], r["g_se"]) for r in table.rows])
    return {
        "model": repr(model),
        "tightness": table._asdict(),
        "passed": not table.parameters["trend_violations"],
    }


# dimension


def _require(target, *keys):
    missing = [k for k in keys if k not in target]
    if missing:
        raise WebweaveParameterError(f"Dimension target {target['kind']!r} needs {', '.join(missing)}.")


def _walk_path(law, seed, delta, duration):
    steps = max(int(round(duration / delta**2)), 1)
    positions = walk_positions(law, [seed], 0, steps)[0]
    sigma = math.sqrt(law_variance(law))
    return Path(np.arange(steps + 1) * delta**2, positions * delta / sigma)


def _target_points(target, seed, scales):
    kind = target["kind"]
    law = parse_law(target["law"]) if "law" in target else SIMPLE_LAW
    if kind == "walk-graph":
        _require(target, "delta", "duration")
        path = _walk_path(law, seed, target["delta"], target["duration"])
        return graph_points([path], target.get("spacing", min(scales) / 4.0))
    if kind == "record-projection":
        _require(target, "delta", "t0", "a", "b")
        x_path = _walk_path(law, rng.stream_seed(seed, 0), target["delta"], target["t0"])
        y_path = _walk_path(law, rng.stream_seed(seed, 1), target["delta"], target["t0"])
        return record_projection(x_path, y_path, target["a"], target["b"], target["t0"])
    _require(target, "points")
    # cell midpoints of the unit interval, so a scale 1/m meets exactly m cells per side
    if kind == "line":
        n = int(target["points"])
        s = (np.arange(n) + 0.5) / n
        return np.column_stack([s, s])
    side = int(math.ceil(math.sqrt(target["points"])))
    grid = (np.arange(side) + 0.5) / side
    xs, ts = np.meshgrid(grid, grid, indexing="ij")
    return np.column_stack([xs.ravel(), ts.ravel()])


def run_dimension(ctx: RunContext):
    params = ctx.params
    targets, scales = params["targets"], params["scales"]

    def replica(seed):
        out = []
        for target in targets:
            points = _target_points(target, seed, scales)
            out.append(box_dimension(points, scales, target.get("min_points", MIN_BOX_POINTS)))
        return out

    series = ctx.runner(replica, ctx.seeds)
    fit_rows, count_rows, summaries = [], [], []
    for index, target in enumerate(targets):
        fits = [s[index] for s in series]
        dims = np.array([f.fitted_dimension for f in fits])
        if dims.size > 1:
            std_error = float(dims.std(ddof=1) / math.sqrt(dims.size))
        else:
            std_error = fits[0].std_error
        entry = {
            "target": index,
            "kind": target["kind"],
            "dimension": float(dims.mean()),
            "std_error": std_error,
            "saturated": any(f.saturated for f in fits),
        }
        if "expected" in target:
            tolerance = target.get("tolerance", 0.0)
            entry["expected"] = target["expected"]
            entry["passed"] = bool(abs(entry["dimension"] - target["expected"]) <= tolerance)
        summaries.append(entry)
        for r, (seed, fit) in enumerate(zip(ctx.seeds, fits)):
            fit_rows.append((index, target["kind"], r, seed, fit.fitted_dimension, fit.fit_r2, fit.std_error,
                             fit.saturated))
            count_rows.extend((index, r, s, c) for s, c in zip(fit.scales, fit.counts))
        log_counts = np.log(np.array([f.counts for f in fits], dtype=np.float64))
        spread = log_counts.std(axis=0, ddof=1) / math.sqrt(len(fits)) if len(fits) > 1 else np.zeros(len(scales))
        ctx.bundle.add_plot(
            f"box_counts_{index}.dat",
            zip(np.log(1.0 / np.array(fits[0].scales)).tolist(), log_counts.mean(axis=0).tolist(), spread.tolist()),
        )
    ctx.bundle.add_table(
        "dimension.csv",
        ("target", "kind", "replica", "seed", "fitted_dimension", "fit_r2", "std_error", "saturated"),
        fit_rows,
    )
    ctx.bundle.add_table("box_counts.csv", ("target", "replica", "scale", "count"), count_rows)
    return {"targets": summaries, "scales": sorted(scales, reverse=True)}


# metric


def _random_path(gen, knots, t_range):
    lo, hi = t_range
    times = np.unique(gen.uniform(lo, hi, size=knots + 1))
    return Path(times, gen.normal(0.0, 2.0, size=times.size))


def _grid_supremum(p1, p2, grid_points):
    lo = min(p1.t_first, p2.t_first, 0.0)
    hi = max(p1.t_last, p2.t_last, 0.0)
    t = np.linspace(lo, hi, grid_points)
    gap = (np.tanh(p1.extended(t)) - np.tanh(p2.extended(t))) / (1.0 + np.abs(t))
    return float(np.abs(gap).max())


def _brute_hausdorff(K1, K2):
    d12 = max(min(path_distance(p, q).value for q in K2) for p in K1)
    d21 = max(min(path_distance(p, q).value for p in K1) for q in K2)
    return max(d12, d21)


def run_metric(ctx: RunContext):
    params = ctx.params
    knots, t_range = int(params["knots"]), params["t_range"]
    if not t_range[0] < t_range[1]:
        raise WebweaveParameterError(f"t_range must be increasing, got {t_range}")
    grid_points, set_size = int(params["grid_points"]), int(params["set_size"])

    def replica(seed):
        gen = rng.generator(seed)
        f, g, h = (_random_path(gen, knots, t_range) for _ in range(3))
        fg, gf = path_distance(f, g).value, path_distance(g, f).value
        fh, hg = path_distance(f, h).value, path_distance(h, g).value
        sup, _ = phi_supremum(f, g)
        sets = [PathSet([_random_path(gen, knots, t_range) for _ in range(set_size)]) for _ in range(3)]
        dh = [hausdorff_distance(sets[0], sets[1]).value, hausdorff_distance(sets[1], sets[2]).value,
              hausdorff_distance(sets[0], sets[2]).value]
        return {
            "symmetry": fg != gf,
            "triangle": fg > fh + hg + 1e-9,
            "soundness": _grid_supremum(f, g, grid_points) > sup + 1e-8,
            "hausdorff_symmetry": dh[0] != hausdorff_distance(sets[1], sets[0]).value,
            "hausdorff_triangle": dh[2] > dh[0] + dh[1] + 1e-9,
            "hausdorff_brute_force": abs(dh[0] - _brute_hausdorff(sets[0], sets[1])) > 1e-12,
        }

    checks = ctx.runner(replica, ctx.seeds)
    names = ("symmetry", "triangle", "soundness", "hausdorff_symmetry", "hausdorff_triangle", "hausdorff_brute_force")
    violations = {name: sum(int(c[name]) for c in checks) for name in names}
    ctx.bundle.add_table(
        "metric.csv", ("replica", "seed", *names), [(r, s, *(c[n] for n in names)) for r, (s, c) in
                                                    enumerate(zip(ctx.seeds, checks))]
    )
    return {"triples": ctx.replicas, "violations": violations, "passed": not any(violations.values())}


# cr-reflect

# a forward path from (1, 0) dipping below a zero backward path started at t = 4
CR_FIXTURE = {
    "forward": (1.0, 0.0, -1.0, 0.5, 2.0),
    "backward": (0.0, 0.0, 0.0, 0.0, 0.0),
    "expected": (1.0, 0.0, 0.0, 1.5, 3.0),
}


def _brownian_row(x0, columns, dt, generator):
    steps = generator.standard_normal(columns - 1) * math.sqrt(dt)
    return x0 + np.concatenate([[0.0], np.cumsum(steps)])


def _sign_flips(forward, backward):
    gap = np.sign(forward - backward)
    gap = gap[gap != 0]
    return int(np.count_nonzero(gap != gap[0])) if gap.size else 0


def run_cr_reflect(ctx: RunContext):
    params = ctx.params
    (x2, t2), (x1, t1) = params["forward_start"], params["backward_start"]
    dt = float(params["grid_dt"])
    if not t2 < t1:
        raise WebweaveParameterError(f"The forward start time {t2} must precede the backward start time {t1}.")
    if x1 == x2:
        raise WebweaveParameterError("Forward and backward paths must start at different positions.")
    columns = int(round((t1 - t2) / dt)) + 1
    if columns < 2:
        raise WebweaveParameterError(f"grid_dt {dt} leaves no step between {t2} and {t1}.")

    def replica(seed):
        forward = _brownian_row(x2, columns, dt, rng.generator(seed, FORWARD_NOISE))
        backward = _brownian_row(x1, columns, dt, rng.generator(seed, BACKWARD_NOISE))[::-1]
        out = {"violations": _sign_flips(reflect_cr(forward, backward), backward)}
        if "double_skeleton" in params:
            block = params["double_skeleton"]
            spec = SkeletonSpec([tuple(s) for s in block["starts"]], dt, block["horizon"], seed, block.get("floor"))
            pair = sample_double_skeleton(spec, ctx.memory_budget_sites)
            out["double_skeleton_crossings"] = count_strict_crossings(*pair)
        return out

    runs = ctx.runner(replica, ctx.seeds)
    fixture = reflect_cr(np.array(CR_FIXTURE["forward"]), np.array(CR_FIXTURE["backward"]))
    fixture_matches = bool(np.array_equal(fixture, np.array(CR_FIXTURE["expected"])))
    columns_out = ["replica", "seed", "violations"]
    if "double_skeleton" in params:
        columns_out.append("double_skeleton_crossings")
    ctx.bundle.add_table(
        "cr_reflect.csv", columns_out, [{"replica": r, "seed": s, **run} for r, (s, run) in enumerate(zip(ctx.seeds, runs))]
    )
    violations = sum(run["violations"] for run in runs)
    results = {
        "pair_runs": ctx.replicas,
        "violations": violations,
        "fixture": {"result": fixture.tolist(), "expected": list(CR_FIXTURE["expected"]), "matches": fixture_matches},
    }
    crossings = 0
    if "double_skeleton" in params:
        crossings = sum(run["double_skeleton_crossings"] for run in runs)
        results["double_skeleton_crossings"] = crossings
    results["passed"] = violations == 0 and fixture_matches and crossings == 0
    return results


EXPERIMENTS = {
    "simulate": run_simulate,
    "eta-stats": run_eta_stats,
    "duality-check": run_duality_check,
    "converge": run_converge,
    "tightness": run_tightness,
    "dimension": run_dimension,
    "metric": run_metric,
    "cr-reflect": run_cr_reflect,
    "walk-bound": run_walk_bound,
    "type-duality": run_type_duality,
}


def run(config, version):
    """Run the experiment named in a validated config and write its result bundle."""
    experiment = config["experiment"]
    seeds = rng.replica_seeds(config["seed"], EXPERIMENT_CODES[experiment], config["replicas"])
    ctx = RunContext(
        experiment,
        config["parameters"],
        config["seed"],
        seeds,
        ReplicaRunner(experiment, config.get("threads", 1)),
        ResultBundle(config["output_dir"]),
        config.get("memory_budget_sites", DEFAULT_MEMORY_BUDGET_SITES),
    )
    LOGGER.info("Starting %s: %s replica(s), seed %s, %s thread(s)", experiment, len(seeds), config["seed"],
                ctx.runner.threads)
    with metrics.job_timer(experiment):
        results = EXPERIMENTS[experiment](ctx)
    summary = ctx.bundle.finish(config, results, version)
    LOGGER.info("Finished %s", experiment)
    return summary
