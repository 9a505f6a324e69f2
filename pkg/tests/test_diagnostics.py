import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from webweave.web.counting import CountingQuery
from webweave.web.diagnostics import (
    DiagnosticReport,
    binomial,
    box_dimension,
    censored_ks,
    check_I1,
    decreasing_within,
    estimate_B,
    estimate_Bprime,
    estimate_tightness,
    eta_mean,
    eta_samples,
    graph_points,
    label_permutation_check,
    record_projection,
    tightness_event,
    tightness_probes,
    verify_counting_bound,
    verify_submultiplicativity,
    verify_walkbound,
)
from webweave.web.ensembles import BrownianModel, ConstantModel, LatticeWalkModel
from webweave.web.exceptions import WebweaveDiagnosticError, WebweaveParameterError, WebweaveWindowError
from webweave.web.laws import SIMPLE_LAW
from webweave.web.paths import Path, PathSet

SEEDS = range(100)
THREE_LINES = ConstantModel([0.0, 1.0, 2.0], [0.0, 1.0])
QUERY = CountingQuery(0.0, 1.0, 0.0, 2.0)


def midpoints(n):
    return (np.arange(n) + 0.5) / n


def test_binomial():
    p, se = binomial([1, 0, 1, 1], 4)
    assert p == 0.75
    assert se == pytest.approx(math.sqrt(0.75 * 0.25 / 4))
    assert binomial(np.zeros(10, dtype=bool), 10) == (0.0, 0.0)


def test_decreasing_within():
    assert decreasing_within([0.5, 0.4, 0.6], [0.01, 0.01, 0.01]) == [2]
    assert decreasing_within([0.5, 0.52, 0.4], [0.01, 0.01, 0.01]) == []
    assert decreasing_within([0.5], [0.01]) == []


def test_report_rejects_negative_errors():
    with pytest.raises(WebweaveDiagnosticError):
        DiagnosticReport(0.5, -0.1, 10)


def test_eta_samples_and_mean():
    samples = eta_samples(THREE_LINES, QUERY, SEEDS)
    assert samples.tolist() == [3] * 100
    report = eta_mean([1, 2, 3])
    assert report.estimate == 2.0
    assert report.std_error == pytest.approx(1.0 / math.sqrt(3.0))
    assert report.parameters == {"empty": 0}


def test_counting_bound_flags_a_model_with_too_many_paths():
    reports = verify_counting_bound(THREE_LINES, QUERY, [1, 3], seeds=SEEDS)
    assert [r.parameters["k"] for r in reports] == [1, 3]
    assert reports[0].estimate == 1.0
    assert reports[0].parameters["bound"] == pytest.approx(math.erf(1.0))
    assert reports[0].passed is False
    assert reports[1].estimate == 0.0
    assert reports[1].passed is True


def test_submultiplicativity():
    reports = verify_submultiplicativity(THREE_LINES, QUERY, [2, 3], seeds=SEEDS)
    assert [r.passed for r in reports] == [True, True]
    with pytest.raises(WebweaveParameterError):
        verify_submultiplicativity(THREE_LINES, QUERY, [1], seeds=SEEDS)


def test_walk_bound():
    samples = np.array([1] * 5000 + [2] * 4000 + [3] * 1000)
    report = verify_walkbound(None, QUERY, 3, samples=samples)
    assert report.parameters["p2"] == 0.5
    assert report.parameters["bound"] == 0.25
    assert report.estimate == pytest.approx(0.1)
    assert report.passed


def test_walk_bound_needs_a_sharp_pair_estimate():
    noisy = np.array([2] + [1] * 99)
    with pytest.raises(WebweaveDiagnosticError):
        verify_walkbound(None, QUERY, 2, samples=noisy)
    with pytest.raises(WebweaveParameterError):
        verify_walkbound(None, QUERY, 1, samples=noisy)


def test_too_few_samples():
    with pytest.raises(WebweaveDiagnosticError):
        verify_walkbound(None, QUERY, 2, samples=np.ones(50))
    with pytest.raises(WebweaveDiagnosticError):
        verify_counting_bound(THREE_LINES, QUERY, [1], seeds=range(10))


def test_estimate_B_on_walks():
    model = LatticeWalkModel(SIMPLE_LAW, 0.2, (-0.5, 1.5), (0.0, 1.0))
    table = estimate_B(model, 1.0, [0.2, 0.4], [(0.0, 0.0)], SEEDS)
    assert table.replicas == 100
    assert table.columns[0] == "eps"
    assert [row["eps"] for row in table.rows] == [0.4, 0.2]
    # two walks start in [0, 0.4]; only one in [0, 0.2]
    assert 0.0 < table.rows[0]["p1"] < 1.0
    assert table.rows[1]["p1"] == 0.0
    assert all(row["p2"] == 0.0 for row in table.rows)
    assert all(row["empty"] == 0 for row in table.rows)
    assert table.rows[1]["theta"] == pytest.approx(math.erf(0.1))


def test_estimate_B_needs_probes():
    model = ConstantModel([0.0], [0.0, 1.0])
    with pytest.raises(WebweaveDiagnosticError):
        estimate_B(model, 1.0, [0.1], [], SEEDS)
    with pytest.raises(WebweaveParameterError):
        estimate_B(model, 1.0, [0.1, 0.0], [(0.0, 0.0)], SEEDS)


def test_estimate_Bprime():
    model = ConstantModel([0.0, 0.1], [0.0, 1.0, 2.0])
    table = estimate_Bprime(model, 0.5, [0.25, 1.0, 2.0], [0.2, 0.05], [(0.0, 0.0)], SEEDS)
    assert table.parameters["t_seq"] == [1.0, 2.0]
    assert [row["p1"] for row in table.rows] == [1.0, 0.0]
    assert [row["p2_over_eps"] for row in table.rows] == [0.0, 0.0]
    with pytest.raises(WebweaveParameterError):
        estimate_Bprime(model, 5.0, [1.0], [0.2], [(0.0, 0.0)], SEEDS)


def test_tightness_probes():
    probes = tightness_probes(1.0, 0.25, 1.0, 0.5)
    assert len(probes) == 25
    assert probes[0] == (-1.0, -0.5)
    assert probes[-1] == (1.0, 0.5)


def test_tightness_anchors_are_rectangle_centres():
    xs = sorted({x for x, _ in tightness_probes(1.0, 0.25, 1.0, 0.5)})
    assert np.allclose(np.diff(xs), 0.5)
    # a path just left of -L sits in the rectangle centred on the first anchor
    K = PathSet.from_grid([-0.5, -0.25, 0.0], [[-1.2, -1.2, -0.4]])
    assert tightness_event(K, xs[0], -0.5, 0.25, 1.0)
    assert not tightness_event(K, xs[0] + 0.5, -0.5, 0.25, 1.0)


def test_tightness_event_by_hand():
    times = [0.0, 0.5, 1.0]
    leaving = PathSet.from_grid(times, [[0.0, 0.0, 1.0]])
    staying = PathSet.from_grid(times, [[0.0, 0.0, 0.4]])
    jumping = PathSet.from_grid(times, [[-1.0, 1.0, 1.0]])
    assert tightness_event(leaving, 0.0, 0.0, 0.5, 1.0)
    assert not tightness_event(staying, 0.0, 0.0, 0.5, 1.0)
    # the first segment runs through the small rectangle between grid times
    assert tightness_event(jumping, 0.0, 0.0, 0.5, 1.0)
    with pytest.raises(WebweaveWindowError):
        tightness_event(leaving, 0.0, 0.5, 0.5, 1.0)


def test_tightness_of_a_constant_path():
    model = ConstantModel([0.0], np.linspace(-0.5, 1.0, 7))
    table = estimate_tightness(model, [0.25], 1.0, 0.5, 0.5, SEEDS)
    assert table.columns == ("t", "g", "g_se", "p", "probe")
    assert table.rows[0]["g"] == 0.0
    assert table.parameters["trend_violations"] == []


def test_graph_points():
    points = graph_points([Path([0.0, 1.0], [0.0, 2.0])], 0.5)
    assert points.tolist() == [[0.0, 0.0], [1.0, 0.5], [2.0, 1.0]]
    assert graph_points([], 0.5).shape == (0, 2)
    with pytest.raises(WebweaveParameterError):
        graph_points([], 0.0)


def test_box_dimension_of_a_line():
    points = np.column_stack([midpoints(1000), np.zeros(1000)])
    series = box_dimension(points, [0.5, 0.1, 0.05, 0.01])
    assert series.counts == (2, 10, 20, 100)
    assert series.fitted_dimension == pytest.approx(1.0, abs=1e-9)
    assert series.fit_r2 == pytest.approx(1.0)
    assert not series.saturated


def test_box_dimension_of_a_square():
    side = midpoints(200)
    xs, ys = np.meshgrid(side, side)
    points = np.column_stack([xs.ravel(), ys.ravel()])
    series = box_dimension(points, [0.01, 0.05, 0.1, 0.5])
    assert series.scales == (0.5, 0.1, 0.05, 0.01)
    assert series.counts == (4, 100, 400, 10000)
    assert series.fitted_dimension == pytest.approx(2.0, abs=1e-9)
    assert series.cap > 2.0


def test_box_dimension_flags_saturation():
    points = np.column_stack([midpoints(1000), midpoints(1000)])
    series = box_dimension(points, [0.1, 0.01, 0.001, 0.0001])
    assert series.saturated


@pytest.mark.parametrize(
    "points, scales, min_points, error",
    [
        (np.zeros((10, 2)) + np.arange(10)[:, None], [0.5, 0.1, 0.01], 1000, WebweaveDiagnosticError),
        (np.zeros((10, 2)), [0.5, 0.1, 0.01], 1, WebweaveDiagnosticError),
        (np.arange(20.0).reshape(10, 2), [0.5, 0.01], 1, WebweaveParameterError),
        (np.arange(20.0).reshape(10, 2), [0.1, 0.05, 0.02], 1, WebweaveParameterError),
    ],
)
def test_box_dimension_rejects_bad_input(points, scales, min_points, error):
    with pytest.raises(error):
        box_dimension(points, scales, min_points)


def test_record_projection():
    x_path = Path([0.0, 1.0, 2.0, 3.0], [0.0, 1.0, 0.5, 2.0])
    y_path = Path([0.0, 3.0], [0.0, 3.0])
    assert record_projection(x_path, y_path, 1.0, 0.0, 3.0).tolist() == [[0.0, 0.0], [1.0, 1.0], [2.0, 3.0]]
    assert record_projection(x_path, y_path, 1.0, 1.0, 3.0).tolist() == [[0.0, 0.0], [2.0, 1.0], [5.0, 3.0]]
    assert record_projection(x_path, y_path, 1.0, 0.0, 1.5).tolist() == [[0.0, 0.0], [1.0, 1.0]]
    with pytest.raises(WebweaveParameterError):
        record_projection(x_path, y_path, 0.0, 0.0, 3.0)
    with pytest.raises(WebweaveWindowError):
        record_projection(x_path, y_path, 1.0, 0.0, 4.0)


def test_check_I1_on_the_skeleton():
    model = BrownianModel((0.0, 1.0), 1.0, [0.0], 0.01, 1.0)
    reports = check_I1(model, [(0.0, 0.0), (1.0, 0.0)], [], range(200))
    assert len(reports) == 1
    report = reports[0]
    assert report.parameters["delta"] is None
    assert report.estimate < 0.2
    assert report.std_error == pytest.approx(0.2603 / math.sqrt(200))
    assert report.passed
    (pair,) = report.parameters["pairs"]
    assert pair["u"] == 1.0
    assert pair["met_by_1_expected"] == pytest.approx(1.0 - math.erf(0.5))
    assert pair["p_value"] > 1e-4


def test_check_I1_sees_a_coarse_skeleton_grid():
    # a grid step of 0.5 misses most crossings of a pair one unit apart
    coarse = BrownianModel((0.0, 1.0), 1.0, [0.0], 0.5, 1.0)
    (report,) = check_I1(coarse, [(0.0, 0.0), (1.0, 0.0)], [], range(400))
    (pair,) = report.parameters["pairs"]
    assert pair["met_by_1"] < pair["met_by_1_expected"] - 3 * pair["met_by_1_se"]


def test_check_I1_orders_scales():
    model = LatticeWalkModel(SIMPLE_LAW, 0.5, (-1.0, 1.0), (0.0, 1.0))
    reports = check_I1(model, [(0.0, 0.0)], [0.25, 0.5], SEEDS)
    assert [r.parameters["delta"] for r in reports] == [0.5, 0.25]
    assert all(r.parameters["pairs"] == [] for r in reports)


def test_check_I1_arguments():
    model = BrownianModel((0.0, 1.0), 1.0, [0.0], 0.1, 1.0)
    with pytest.raises(WebweaveDiagnosticError):
        check_I1(model, [(0.0, 0.0)], [], range(10))
    with pytest.raises(WebweaveParameterError):
        check_I1(model, [(float(x), 0.0) for x in range(5)], [], SEEDS)


def test_label_permutation_check_runs():
    report = label_permutation_check(
        [(0.0, 0.0), (0.5, 0.0), (1.0, 0.0)], CountingQuery(0.0, 1.0, 0.0, 1.0), 0.05, 1.0, SEEDS, 7
    )
    assert report.replicas == 100
    assert sorted(report.parameters["permutation"]) == [0, 1, 2]
    assert 0.0 <= report.estimate <= 1.0
    assert report.std_error == pytest.approx(0.2603 * math.sqrt(0.02))


def test_censored_ks_ignores_censored_replicas():
    uniform = lambda s: np.clip(s, 0.0, 1.0)  # noqa: E731
    statistic, _ = censored_ks([0.5, np.inf, np.inf], uniform)
    assert statistic == pytest.approx(0.5)
    assert censored_ks([np.inf, np.inf], uniform) == (0.0, 1.0)
    statistic, p_value = censored_ks(np.linspace(0.05, 0.95, 10), uniform)
    assert statistic == pytest.approx(0.05)
    assert p_value > 0.5


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 2**64 - 1))
def test_label_permutation_check_is_seeded(permutation_seed):
    args = ([(0.0, 0.0), (0.5, 0.0), (1.0, 0.2), (-0.5, 0.5)], CountingQuery(0.5, 0.5, -1.0, 1.0), 0.1, 1.0, SEEDS)
    report = label_permutation_check(*args, permutation_seed)
    assert report == label_permutation_check(*args, permutation_seed)
    assert sorted(report.parameters["permutation"]) == [0, 1, 2, 3]
    assert 0.0 <= report.estimate <= 1.0


def test_label_order_does_not_change_the_eta_law():
    starts = [(-1.0, 0.0), (-0.5, 0.0), (0.0, 0.0), (0.5, 0.2), (1.0, 0.2), (0.25, 0.4)]
    report = label_permutation_check(starts, CountingQuery(0.5, 0.5, -1.0, 1.0), 0.02, 1.0, range(300), 11)
    assert report.parameters["p_value"] > 1e-3


def test_a_single_start_has_nothing_to_permute():
    report = label_permutation_check([(0.0, 0.0)], CountingQuery(0.0, 1.0, -1.0, 1.0), 0.1, 1.0, SEEDS, 3)
    assert report.parameters["permutation"] == [0]
    assert report.estimate == 0.0
    assert report.passed
