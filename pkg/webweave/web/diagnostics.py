"""Monte Carlo estimators, goodness-of-fit checks and dimension estimates.

Every estimator takes a model (see ``webweave.web.ensembles``), a list of
replica seeds and an optional ``runner(fn, seeds)`` that evaluates ``fn``
once per seed and returns the results in seed order. The default runner is
a plain loop; the CLI passes one backed by a thread pool.

Probabilities carry binomial standard errors. Limits in the underlying
conditions become trend tests over a finite parameter sequence: each value
may exceed the previous one by at most ``z`` combined standard errors.
"""

from __future__ import annotations

import math
from collections import namedtuple
from dataclasses import asdict, dataclass, field
from itertools import combinations

import numpy as np
import singer
from scipy import stats

from webweave.web import rng
from webweave.web.brownian import SkeletonSpec, sample_skeleton
from webweave.web.counting import CountingQuery, eta, eta_intervals, n_sets, theta
from webweave.web.exceptions import WebweaveDiagnosticError, WebweaveParameterError, WebweaveWindowError
from webweave.web.paths import TIME_TOL, Path, PathSet

LOGGER = singer.get_logger()

MIN_REPLICAS = 100
MIN_BOX_POINTS = 1000
MIN_SCALE_DECADES = 1.5

# standard deviation of the limiting Kolmogorov distribution of sqrt(n) * D
KOLMOGOROV_SD = 0.2603

PERMUTED_STREAM = 5

TrendTable = namedtuple("TrendTable", ("columns", "rows", "replicas", "parameters"))


@dataclass(frozen=True)
class DiagnosticReport:
    estimate: float
    std_error: float
    replicas: int
    parameters: dict = field(default_factory=dict)
    passed: bool | None = None

    def __post_init__(self):
        if not self.std_error >= 0:
            raise WebweaveDiagnosticError(f"Standard error must be nonnegative, got {self.std_error}")

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class BoxCountSeries:
    scales: tuple
    counts: tuple
    fitted_dimension: float
    fit_r2: float
    std_error: float
    cap: float
    saturated: bool

    def as_dict(self):
        return asdict(self)


def serial_runner(fn, seeds):
    return [fn(seed) for seed in seeds]


def _check_replicas(seeds):
    if len(seeds) < MIN_REPLICAS:
        raise WebweaveDiagnosticError(f"Need at least {MIN_REPLICAS} replicas for a published estimate, got {len(seeds)}.")


def binomial(hits, n):
    """Proportion and binomial standard error."""
    p = float(np.sum(hits)) / n
    return p, math.sqrt(max(p * (1.0 - p), 0.0) / n)


def decreasing_within(values, std_errors, z=2.0):
    """Indices where a value exceeds its predecessor by more than ``z`` combined standard errors."""
    bad = []
    for n in range(1, len(values)):
        slack = z * math.hypot(std_errors[n - 1], std_errors[n])
        if values[n] > values[n - 1] + slack:
            bad.append(n)
    return bad


def _kolmogorov_se(n):
    return KOLMOGOROV_SD / math.sqrt(n)


def censored_ks(times, cdf):
    """One-sample KS distance over the observed range of ``times``; ``inf`` entries are censored.

    The sup runs over the finite sample points only, with ranks taken in
    the full sample, so censored replicas never count as jumps of ``cdf``
    to 1. The p-value uses the uncensored null distribution and is
    conservative.
    """
    times = np.asarray(times, dtype=np.float64)
    n = times.size
    observed = np.sort(times[np.isfinite(times)])
    if observed.size == 0:
        return 0.0, 1.0
    expected = cdf(observed)
    ranks = np.arange(1, observed.size + 1)
    statistic = max(float(np.max(ranks / n - expected)), float(np.max(expected - (ranks - 1) / n)), 0.0)
    return statistic, float(stats.kstwo.sf(statistic, n))


def check_I1(model, starts, delta_seq, seeds, runner=serial_runner):
    """Marginal and pair-meeting goodness of fit per scale.

    For each delta: the KS distance of the time-1 marginal against N(0, 1),
    and for every pair of starts the KS test of the meeting time against
    ``P(T <= s) = 1 - theta(u, s)``. Reports come back ordered by
    decreasing delta, with ``passed`` set from the marginal trend.
    """
    _check_replicas(seeds)
    starts = [(float(x), float(t)) for x, t in starts]
    if not 1 <= len(starts) <= 4:
        raise WebweaveParameterError(f"check_I1 takes one to four starts, got {len(starts)}.")
    n = len(seeds)
    reports = []
    for delta in sorted(delta_seq, reverse=True) if delta_seq else [None]:
        marginal = np.asarray(model.marginal_samples(seeds, delta), dtype=np.float64)
        marginal_test = stats.kstest(marginal, "norm")
        pairs = []
        for (x1, t1), (x2, t2) in combinations(starts, 2):
            if abs(t1 - t2) > TIME_TOL or x1 == x2:
                continue
            _, u = model.pair_separation(abs(x2 - x1), delta)
            times = model.pair_meeting_times(seeds, abs(x2 - x1), delta)
            statistic, p_value = censored_ks(times, lambda s, u=u: 1.0 - theta(u, np.maximum(s, 1e-300)))
            met, met_se = binomial(times <= 1.0, n)
            pairs.append(
                {
                    "u": u,
                    "ks_statistic": statistic,
                    "p_value": p_value,
                    "censored": int(np.count_nonzero(np.isinf(times))),
                    "met_by_1": met,
                    "met_by_1_se": met_se,
                    "met_by_1_expected": 1.0 - theta(u, 1.0),
                }
            )
        reports.append(
            DiagnosticReport(
                float(marginal_test.statistic),
                _kolmogorov_se(n),
                n,
                {
                    "delta": delta,
                    "model": repr(model),
                    "marginal_p_value": float(marginal_test.pvalue),
                    "pairs": pairs,
                },
            )
        )
    trend_bad = decreasing_within([r.estimate for r in reports], [r.std_error for r in reports])
    return [
        DiagnosticReport(r.estimate, r.std_error, r.replicas, r.parameters, not trend_bad) for r in reports
    ]


def _probe_regions(probes, width_lo, width_hi):
    return [((a + width_lo, a + width_hi), (t0, t0)) for a, t0 in probes]


def _check_probes(probes):
    probes = [(float(a), float(t0)) for a, t0 in probes]
    if not probes:
        raise WebweaveDiagnosticError("The probe grid is empty.")
    return probes


def _max_over_probes(indicators, n):
    """Largest per-probe proportion, its standard error and the probe index; ``indicators`` is (replicas, probes)."""
    proportions = indicators.mean(axis=0)
    best = int(np.argmax(proportions))
    p, se = binomial(indicators[:, best], n)
    return p, se, best


def estimate_B(model, t, eps_seq, probes, seeds, runner=serial_runner) -> TrendTable:
    """Largest probe frequency of ``eta >= 2`` and ``eta >= 3`` on ``[a, a + eps]`` per eps."""
    _check_replicas(seeds)
    probes = _check_probes(probes)
    eps_seq = sorted((float(e) for e in eps_seq), reverse=True)
    if not eps_seq or eps_seq[-1] <= 0:
        raise WebweaveParameterError("eps_seq needs positive values.")
    regions = _probe_regions(probes, 0.0, eps_seq[0])

    def replica(seed):
        K = model.sample(seed, regions)
        out = np.empty((len(eps_seq), len(probes)), dtype=np.int64)
        for m, (a, t0) in enumerate(probes):
            out[:, m] = eta_intervals(K, t0, t, [(a, a + e) for e in eps_seq])
        return out

    counts = np.stack(runner(replica, seeds))
    n = len(seeds)
    rows = []
    for k, eps in enumerate(eps_seq):
        p1, se1, probe1 = _max_over_probes(counts[:, k, :] >= 2, n)
        p2, se2, probe2 = _max_over_probes(counts[:, k, :] >= 3, n)
        rows.append(
            {
                "eps": eps,
                "p1": p1,
                "p1_se": se1,
                "p2": p2,
                "p2_se": se2,
                "p2_over_eps": p2 / eps,
                "p2_over_eps_se": se2 / eps,
                "theta": theta(eps, t),
                "probe_p1": probe1,
                "probe_p2": probe2,
                "empty": int(np.count_nonzero(counts[:, k, :] == 0)),
            }
        )
    parameters = {
        "t": t,
        "probes": [list(p) for p in probes],
        "model": repr(model),
        "p1_trend_violations": decreasing_within([r["p1"] for r in rows], [r["p1_se"] for r in rows]),
        "p2_over_eps_trend_violations": decreasing_within(
            [r["p2_over_eps"] for r in rows], [r["p2_over_eps_se"] for r in rows]
        ),
    }
    LOGGER.info("estimate_B over %s eps values and %s probes: %s replicas", len(eps_seq), len(probes), n)
    return TrendTable(tuple(rows[0]), rows, n, parameters)


def estimate_Bprime(model, beta, t_seq, eps_seq, probes, seeds, runner=serial_runner) -> TrendTable:
    """Per eps, the largest frequency over ``t > beta`` and probes of ``|N| > 1`` and of ``N != N+ u N-``.

    The counted interval is ``[a - eps, a + eps]``.
    """
    _check_replicas(seeds)
    probes = _check_probes(probes)
    t_seq = [float(t) for t in t_seq if t > beta]
    if not t_seq:
        raise WebweaveParameterError(f"No time in t_seq exceeds beta = {beta}.")
    eps_seq = sorted((float(e) for e in eps_seq), reverse=True)
    regions = _probe_regions(probes, -eps_seq[0], eps_seq[0])

    def replica(seed):
        K = model.sample(seed, regions)
        many = np.zeros((len(eps_seq), len(t_seq), len(probes)), dtype=bool)
        split = np.zeros_like(many)
        for k, eps in enumerate(eps_seq):
            for s, t in enumerate(t_seq):
                for m, (a, t0) in enumerate(probes):
                    result = n_sets(K, CountingQuery(t0, t, a - eps, a + eps))
                    many[k, s, m] = len(result.n_all) > 1
                    split[k, s, m] = result.outer_mismatch
        return many, split

    results = runner(replica, seeds)
    many = np.stack([r[0] for r in results])
    split = np.stack([r[1] for r in results])
    n = len(seeds)
    rows = []
    for k, eps in enumerate(eps_seq):
        p1, se1, _ = _max_over_probes(many[:, k].reshape(n, -1), n)
        p2, se2, _ = _max_over_probes(split[:, k].reshape(n, -1), n)
        rows.append(
            {
                "eps": eps,
                "p1": p1,
                "p1_se": se1,
                "p2_over_eps": p2 / eps,
                "p2_over_eps_se": se2 / eps,
            }
        )
    parameters = {
        "beta": beta,
        "t_seq": t_seq,
        "probes": [list(p) for p in probes],
        "model": repr(model),
        "p1_trend_violations": decreasing_within([r["p1"] for r in rows], [r["p1_se"] for r in rows]),
        "p2_over_eps_trend_violations": decreasing_within(
            [r["p2_over_eps"] for r in rows], [r["p2_over_eps_se"] for r in rows]
        ),
    }
    return TrendTable(tuple(rows[0]), rows, n, parameters)


def tightness_probes(u, t, L, T):
    """Rectangle anchors ``(x0, t0)`` on ``[-L, L] x [-T, T]``, spaced ``u/2`` in space and ``t`` in time.

    ``x0`` is the centre of each rectangle, ``t0`` its start time, as
    ``tightness_event`` reads them.
    """
    xs = -L + (u / 2.0) * np.arange(int(math.ceil(2 * L / (u / 2.0))) + 1)
    ts = -T + t * np.arange(int(math.ceil(2 * T / t)) + 1)
    return [(float(x), float(s)) for s in ts for x in xs]


def tightness_event(K: PathSet, x0, t0, t, u) -> bool:
    """Whether a path touches ``[x0 - u/4, x0 + u/4] x [t0, t0 + t]`` and later ``|x - x0| >= u/2`` by ``t0 + 2t``."""
    if K.grid is None:
        raise WebweaveParameterError("The tightness event is evaluated on grid path sets.")
    if len(K) == 0:
        return False
    first, last = K.time_window
    if t0 < first - TIME_TOL or t0 + 2 * t > last + TIME_TOL:
        raise WebweaveWindowError(
            f"Rectangle times [{t0}, {t0 + 2 * t}] exceed the path set window [{first}, {last}]."
        )
    times, values = K.rows(t0, t0 + 2 * t)
    with np.errstate(invalid="ignore"):
        deviation = np.abs(values - x0)
        early = times <= t0 + t + TIME_TOL
        touch = (deviation <= u / 4.0) & early[None, :]
        # a segment jumping across the small rectangle between two grid times
        lo = np.minimum(values[:, :-1], values[:, 1:])
        hi = np.maximum(values[:, :-1], values[:, 1:])
        across = (lo <= x0 + u / 4.0) & (hi >= x0 - u / 4.0) & early[None, :-1]
        touch[:, :-1] |= across
        leave = deviation >= u / 2.0
    later = np.zeros_like(leave)
    later[:, :-1] = np.logical_or.accumulate(leave[:, :0:-1], axis=1)[:, ::-1]
    return bool(np.any(touch & later))


def estimate_tightness(model, t_seq, u, L, T, seeds, runner=serial_runner) -> TrendTable:
    """``g(t) = max over probes of P(A_{t,u}) / t`` for each t, probes from :func:`tightness_probes`."""
    _check_replicas(seeds)
    if not u > 0:
        raise WebweaveParameterError(f"u must be positive, got {u}")
    t_seq = sorted((float(t) for t in t_seq), reverse=True)
    probes = {t: tightness_probes(u, t, L, T) for t in t_seq}
    regions = [((x0 - u / 4.0, x0 + u / 4.0), (t0, t0 + t)) for t in t_seq for x0, t0 in probes[t]]

    def replica(seed):
        K = model.sample(seed, regions)
        return [np.array([tightness_event(K, x0, t0, t, u) for x0, t0 in probes[t]]) for t in t_seq]

    results = runner(replica, seeds)
    n = len(seeds)
    rows = []
    for s, t in enumerate(t_seq):
        hits = np.stack([r[s] for r in results])
        p, se, best = _max_over_probes(hits, n)
        rows.append({"t": t, "g": p / t, "g_se": se / t, "p": p, "probe": best})
    parameters = {
        "u": u,
        "L": L,
        "T": T,
        "model": repr(model),
        "trend_violations": decreasing_within([r["g"] for r in rows], [r["g_se"] for r in rows]),
    }
    return TrendTable(tuple(rows[0]), rows, n, parameters)


def graph_points(paths, spacing) -> np.ndarray:
    """Points ``(x, t)`` along every path's polygon at time steps of ``spacing``, knots included."""
    if not spacing > 0:
        raise WebweaveParameterError(f"spacing must be positive, got {spacing}")
    chunks = []
    for path in paths:
        times = np.union1d(np.arange(path.t_first, path.t_last, spacing), path.times)
        chunks.append(np.column_stack([path(times), times]))
    if not chunks:
        return np.empty((0, 2))
    return np.unique(np.concatenate(chunks), axis=0)


def box_dimension(points, scales, min_points=MIN_BOX_POINTS) -> BoxCountSeries:
    """Box-counting dimension: least-squares slope of log count against log(1 / scale)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if points.shape[0] < min_points:
        raise WebweaveDiagnosticError(f"Box counting needs at least {min_points} points, got {points.shape[0]}.")
    if np.all(points == points[0]):
        raise WebweaveDiagnosticError("Box counting got a degenerate point set (all points identical).")
    scales = np.unique(np.asarray(scales, dtype=np.float64))[::-1]
    if scales.size < 3 or scales[-1] <= 0:
        raise WebweaveParameterError("Box counting needs at least three distinct positive scales.")
    if math.log10(scales[0] / scales[-1]) < MIN_SCALE_DECADES - 1e-12:
        raise WebweaveParameterError(f"Scales must span at least {MIN_SCALE_DECADES} decades.")
    origin = points.min(axis=0)
    counts = np.array(
        [np.unique(np.floor((points - origin) / s).astype(np.int64), axis=0).shape[0] for s in scales]
    )
    fit = stats.linregress(np.log(1.0 / scales), np.log(counts))
    cap = math.log(points.shape[0]) / math.log(1.0 / scales[-1]) if scales[-1] < 1 else math.inf
    saturated = bool(counts[-1] >= points.shape[0])
    if saturated or fit.slope > cap:
        LOGGER.warning("Box counts saturate at the smallest scale %s: %s points, %s boxes", scales[-1],
                       points.shape[0], counts[-1])
    return BoxCountSeries(
        tuple(scales.tolist()),
        tuple(int(c) for c in counts),
        float(fit.slope),
        float(fit.rvalue**2),
        float(fit.stderr),
        cap,
        saturated or fit.slope > cap,
    )


def record_projection(x_path: Path, y_path: Path, a, b, t0) -> np.ndarray:
    """Points ``(a x(s) + b y(s), s)`` at the knot times ``s <= t0`` where ``x`` equals its running maximum."""
    if a == 0 and b == 0:
        raise WebweaveParameterError("record_projection needs |a| + |b| > 0.")
    for path in (x_path, y_path):
        if path.t_first > TIME_TOL or path.t_last < t0 - TIME_TOL:
            raise WebweaveWindowError(f"Both paths must cover [0, {t0}].")
    keep = x_path.times <= t0 + TIME_TOL
    times, xs = x_path.times[keep], x_path.xs[keep]
    records = xs >= np.maximum.accumulate(xs)
    times = times[records]
    return np.column_stack([a * xs[records] + b * y_path(times), times])


def eta_samples(model, q: CountingQuery, seeds, runner=serial_runner) -> np.ndarray:
    """One ``eta`` per replica, sampling only starts on ``[a, b] x {t0}``."""
    regions = [((q.a, q.b), (q.t0, q.t0))]
    return np.array(runner(lambda seed: eta(model.sample(seed, regions), q), seeds), dtype=np.int64)


def _samples(model, q, seeds, runner, samples):
    if samples is None:
        _check_replicas(seeds)
        samples = eta_samples(model, q, seeds, runner)
    samples = np.asarray(samples)
    if samples.size < MIN_REPLICAS:
        raise WebweaveDiagnosticError(f"Need at least {MIN_REPLICAS} replicas, got {samples.size}.")
    return samples


def eta_mean(samples) -> DiagnosticReport:
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.size
    se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return DiagnosticReport(float(samples.mean()), se, n, {"empty": int(np.count_nonzero(samples == 0))})


def verify_counting_bound(model, q: CountingQuery, ks, seeds=(), runner=serial_runner, samples=None):
    """``P(eta_hat >= k) <= theta(b - a, t)**k`` within 3 standard errors, one report per k."""
    samples = _samples(model, q, seeds, runner, samples)
    n = samples.size
    base = theta(q.b - q.a, q.t)
    reports = []
    for k in ks:
        p, se = binomial(samples >= k + 1, n)
        bound = base**k
        reports.append(
            DiagnosticReport(p, se, n, {"k": k, "bound": bound, **q.as_dict()}, bool(p <= bound + 3 * se))
        )
    return reports


def verify_submultiplicativity(model, q: CountingQuery, ks, seeds=(), runner=serial_runner, samples=None):
    """``P(eta_hat >= k) <= P(eta_hat >= k - 1) P(eta_hat >= 1)`` within 3 combined standard errors."""
    samples = _samples(model, q, seeds, runner, samples)
    n = samples.size
    p1, se1 = binomial(samples >= 2, n)
    reports = []
    for k in ks:
        if k < 2:
            raise WebweaveParameterError(f"Submultiplicativity is checked for k >= 2, got {k}")
        pk, sek = binomial(samples >= k + 1, n)
        prev, se_prev = binomial(samples >= k, n)
        bound = prev * p1
        combined = math.sqrt(sek**2 + (p1 * se_prev) ** 2 + (prev * se1) ** 2)
        reports.append(
            DiagnosticReport(
                pk, sek, n, {"k": k, "bound": bound, "combined_se": combined, **q.as_dict()},
                bool(pk <= bound + 3 * combined),
            )
        )
    return reports


def verify_walkbound(model, q: CountingQuery, k, seeds=(), runner=serial_runner, samples=None) -> DiagnosticReport:
    """``P(eta >= k) <= P(eta >= 2)**(k - 1)`` within 3 combined standard errors."""
    if k < 2:
        raise WebweaveParameterError(f"The walk bound needs k >= 2, got {k}")
    samples = _samples(model, q, seeds, runner, samples)
    n = samples.size
    p2, se2 = binomial(samples >= 2, n)
    if p2 > 0 and se2 >= p2 / 10.0:
        raise WebweaveDiagnosticError(
            f"{n} replicas leave the P(eta >= 2) = {p2:.4g} estimate with SE {se2:.3g}, above a tenth of it."
        )
    pk, sek = binomial(samples >= k, n)
    bound = p2 ** (k - 1)
    bound_se = (k - 1) * p2 ** (k - 2) * se2
    combined = math.hypot(sek, bound_se)
    return DiagnosticReport(
        pk,
        sek,
        n,
        {"k": k, "bound": bound, "bound_se": bound_se, "combined_se": combined, "p2": p2, **q.as_dict()},
        bool(pk <= bound + 3 * combined),
    )


def label_permutation_check(starts, q: CountingQuery, grid_dt, horizon, seeds, permutation_seed,
                            runner=serial_runner) -> DiagnosticReport:
    """Two-sample KS test of eta between the given label order and one random permutation of it."""
    _check_replicas(seeds)
    starts = [tuple(s) for s in starts]
    order = rng.generator(permutation_seed).permutation(len(starts))
    permuted = [starts[i] for i in order]

    def replica(seed):
        plain = sample_skeleton(SkeletonSpec(starts, grid_dt, horizon, seed)).paths
        shuffled = sample_skeleton(SkeletonSpec(permuted, grid_dt, horizon, rng.stream_seed(seed, PERMUTED_STREAM)))
        return eta(plain, q), eta(shuffled.paths, q)

    pairs = np.array(runner(replica, seeds))
    test = stats.ks_2samp(pairs[:, 0], pairs[:, 1])
    n = len(seeds)
    return DiagnosticReport(
        float(test.statistic),
        KOLMOGOROV_SD * math.sqrt(2.0 / n),
        n,
        {"p_value": float(test.pvalue), "permutation": order.tolist(), **q.as_dict()},
        bool(test.pvalue > 0.01),
    )
