import numpy as np
import pytest

from webweave.web.counting import coalescence_points, theta
from webweave.web.diagnostics import censored_ks
from webweave.web.exceptions import (
    UnsupportedLawError,
    WebweaveParameterError,
    WebweaveResourceLimitError,
    WebweaveWindowError,
)
from webweave.web.lattice import (
    IncrementField,
    LatticeWindow,
    ScalingParams,
    build_dual,
    build_ensemble,
    generate_field,
    pair_meeting_steps,
    rescale,
    trace_forward,
    walk_positions,
)
from webweave.web.laws import SIMPLE_LAW, law_variance, parse_law
from webweave.web.paths import count_strict_crossings

GENERAL_LAW = parse_law({"name": "general", "support": [-2, -1, 1, 2]})
WIDE_LAW = parse_law({"name": "general", "support": [-3, 3]})


def test_window_validation():
    with pytest.raises(WebweaveParameterError):
        LatticeWindow(3, 3, 0, 1)
    with pytest.raises(WebweaveParameterError):
        LatticeWindow(0, 1, 2, 1)


def test_window_sites_by_parity():
    window = LatticeWindow(0, 4, 0, 1)
    xs, ts = window.sites(parity=0, rows=[0, 1])
    assert xs.tolist() == [0, 2, 4, 1, 3]
    assert ts.tolist() == [0, 0, 0, 1, 1]


def test_field_is_consistent_across_windows(simple_field):
    small = generate_field(LatticeWindow(5, 10, 3, 8), SIMPLE_LAW, simple_field.seed)
    assert np.array_equal(simple_field.increments[5:11, 3:8], small.increments)


def test_field_respects_memory_budget(window):
    with pytest.raises(WebweaveResourceLimitError):
        generate_field(window, SIMPLE_LAW, 1, memory_budget_sites=10)


def test_injected_field_takes_unit_steps_only():
    with pytest.raises(UnsupportedLawError):
        IncrementField.from_array(LatticeWindow(0, 1, 0, 1), [[2], [1]])


def test_constant_field_walk():
    field_ = IncrementField.constant(LatticeWindow(0, 20, 0, 20))
    path = trace_forward(field_, (0, 0))
    assert path.times.tolist() == list(range(21))
    assert path.xs.tolist() == list(range(21))


def test_injected_field_refuses_to_leave_its_columns():
    field_ = IncrementField.constant(LatticeWindow(0, 20, 0, 20))
    with pytest.raises(WebweaveWindowError):
        trace_forward(field_, (10, 0))


def test_simple_starts_must_be_on_the_even_sublattice(simple_field):
    with pytest.raises(WebweaveWindowError):
        trace_forward(simple_field, (1, 0))


def test_seeded_walks_may_leave_the_window_sideways(simple_field):
    path = trace_forward(simple_field, (0, 0))
    assert path.times.size == 41
    assert np.all(np.abs(np.diff(path.xs)) == 1)


def test_funnel_ensemble_coalesces(funnel_field):
    K = build_ensemble(funnel_field)
    # one walk per even site of rows 0..9
    assert len(K) == 5 * 6 + 5 * 5
    assert count_strict_crossings(K) == 0
    ends = K.values_at(10.0)
    assert set(ends[K.start_times == 0].tolist()) == {4.0}
    assert (5.0, 1.0) in coalescence_points(K)


def test_walks_through_a_shared_site_share_their_future(simple_field):
    K = build_ensemble(simple_field, starts=[(10, 0), (12, 0), (14, 0)])
    _, values = K.grid
    for a in range(3):
        for b in range(a + 1, 3):
            met = np.flatnonzero(values[a] == values[b])
            if met.size:
                assert np.array_equal(values[a, met[0]:], values[b, met[0]:])


def test_forward_and_dual_never_cross(simple_field):
    forward, dual = build_ensemble(simple_field), build_dual(simple_field)
    assert count_strict_crossings(forward, dual) == 0
    assert count_strict_crossings(forward) == 0
    assert count_strict_crossings(dual) == 0


def test_dual_starts_on_the_odd_sublattice(simple_field):
    dual = build_dual(simple_field, "top")
    assert len(dual) == 20
    assert dual.backward
    starts = dual.values_at(40.0)
    assert np.all((starts + 40) % 2 == 1)


def test_dual_needs_the_simple_law(window):
    field_ = generate_field(window, GENERAL_LAW, 3)
    with pytest.raises(UnsupportedLawError):
        build_dual(field_)


def test_general_law_walks_start_everywhere(window):
    field_ = generate_field(window, GENERAL_LAW, 3)
    K = build_ensemble(field_, starts=[(1, 0), (2, 0)])
    assert len(K) == 2
    assert not K.non_crossing


def test_rescale():
    field_ = IncrementField.constant(LatticeWindow(0, 4, 0, 4))
    K = rescale(build_ensemble(field_, starts=[(0, 0)]), ScalingParams(0.5))
    path = K.paths[0]
    assert path.times.tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert path.xs.tolist() == [0.0, 0.5, 1.0, 1.5, 2.0]


def test_scaling_needs_positive_delta():
    with pytest.raises(WebweaveParameterError):
        ScalingParams(0.0)


def test_walk_positions():
    positions = walk_positions(SIMPLE_LAW, [1, 2, 3], 5, 50)
    assert positions.shape == (3, 51)
    assert np.all(positions[:, 0] == 5)
    assert np.all(np.abs(np.diff(positions, axis=1)) == 1)
    assert np.array_equal(positions, walk_positions(SIMPLE_LAW, [1, 2, 3], 5, 50))


def test_pair_meeting_steps():
    assert pair_meeting_steps(SIMPLE_LAW, [1, 2], 0, 0, 10).tolist() == [0, 0]
    met = pair_meeting_steps(SIMPLE_LAW, list(range(200)), 0, 2, 50)
    assert np.all(met >= 1)
    assert np.all(met <= 51)
    assert np.any(met <= 50)


def test_dual_starts_on_the_top_row_by_default(simple_field):
    dual, top = build_dual(simple_field), build_dual(simple_field, "top")
    assert len(dual) == 20
    assert np.array_equal(dual.grid.values, top.grid.values, equal_nan=True)
    assert np.all(np.isfinite(dual.grid.values))


def test_wide_steps_jump_over_each_other():
    increments = np.full((7, 1), 3)
    increments[2, 0] = -3
    field_ = IncrementField.from_array(LatticeWindow(0, 6, 0, 1), increments, law=WIDE_LAW)
    K = build_ensemble(field_, starts=[(0, 0), (2, 0)])
    assert K.grid.values.tolist() == [[0.0, 3.0], [2.0, -1.0]]
    assert count_strict_crossings(K) == 1


def test_seeded_wide_walks_cross(window):
    field_ = generate_field(window, WIDE_LAW, 7)
    K = build_ensemble(field_, starts=[(i, 0) for i in range(41)])
    assert count_strict_crossings(K) > 0


def test_coalescence_points_match_pairwise_meetings():
    K = build_ensemble(generate_field(LatticeWindow(0, 50, 0, 50), SIMPLE_LAW, 99))
    times, values = K.grid
    expected = set()
    for k in range(1, times.size):
        now, before = values[:, k], values[:, k - 1]
        live = np.isfinite(before)
        met = (now[:, None] == now[None, :]) & (before[:, None] != before[None, :])
        met &= live[:, None] & live[None, :]
        rows, _ = np.nonzero(met)
        expected.update((float(x), float(times[k])) for x in np.unique(now[rows]))
    points = coalescence_points(K)
    assert expected
    assert len(points) == len(set(points))
    assert set(points) == expected


@pytest.mark.parametrize("law", [SIMPLE_LAW, GENERAL_LAW])
def test_field_mean_is_within_the_clt_band(law):
    field_ = generate_field(LatticeWindow(0, 999, 0, 1000), law, 2024)
    n = field_.increments.size
    assert n == 1_000_000
    assert abs(field_.increments.mean()) < 4 * np.sqrt(law_variance(law) / n)
    assert field_.increments.var() == pytest.approx(law_variance(law), abs=0.02)


def test_pair_meeting_steps_follow_theta():
    delta = 0.05
    steps = pair_meeting_steps(SIMPLE_LAW, list(range(500)), 0, 20, 1600).astype(np.float64)
    steps[steps > 1600] = np.inf
    _, p = censored_ks(steps * delta**2, lambda s: 1.0 - theta(20 * delta, s))
    assert p > 1e-3


def test_rescale_composes():
    K = build_ensemble(generate_field(LatticeWindow(0, 20, 0, 20), SIMPLE_LAW, 5), starts=[(0, 0), (10, 4)])
    twice = rescale(rescale(K, ScalingParams(0.5)), ScalingParams(0.2))
    once = rescale(K, ScalingParams(0.1))
    assert np.allclose(twice.grid.times, once.grid.times)
    assert np.allclose(twice.grid.values, once.grid.values, equal_nan=True)
