import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from webweave.web.exceptions import EmptyPathSetError, WebweaveParameterError, WebweaveWindowError
from webweave.web.metric import (
    compactify,
    directed_hausdorff,
    double_hausdorff_distance,
    hausdorff_distance,
    path_distance,
    phi_supremum,
    rho,
)
from webweave.web.paths import Path, PathSet

# knot times on a half-unit grid keep the slopes, and so the search error, bounded
KNOT_TIMES = [-1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0]


@st.composite
def paths(draw):
    inner = draw(st.lists(st.sampled_from(KNOT_TIMES[1:-1]), unique=True, max_size=4))
    times = sorted([KNOT_TIMES[0], *inner, KNOT_TIMES[-1]])
    xs = draw(st.lists(st.floats(-3.0, 3.0), min_size=len(times), max_size=len(times)))
    return Path(times, xs)


def constant(x, lo=0.0, hi=1.0, backward=False):
    return Path([lo, hi], [x, x], backward=backward)


def test_compactify_and_rho():
    assert compactify(0.0, 0.0) == (0.0, 0.0)
    assert compactify(1.0, 1.0).phi == pytest.approx(math.tanh(1.0) / 2.0)
    assert rho((0.0, 0.0), (1.0, 0.0)) == pytest.approx(math.tanh(1.0))
    assert rho((0.0, 0.0), (0.0, 2.0)) == pytest.approx(math.tanh(2.0))


def test_parallel_paths_differ_most_at_time_zero():
    result = path_distance(constant(1.0), constant(0.0))
    assert result.value == pytest.approx(math.tanh(1.0), abs=1e-12)
    assert result.witness == (0.0,)


def test_paths_held_constant_back_to_time_zero():
    value, at = phi_supremum(constant(1.0, 2.0, 3.0), constant(0.0, 2.0, 3.0))
    assert value == pytest.approx(math.tanh(1.0), abs=1e-12)
    assert at == 0.0


def test_start_time_gap_can_dominate():
    result = path_distance(constant(0.0, 0.0, 1.0), constant(0.0, 1.0, 2.0))
    assert result.value == pytest.approx(math.tanh(1.0))
    assert result.witness == (0.0, 1.0)


def test_sup_inside_a_piece():
    # the gap peaks where the crossing path is farthest away, inside the first piece
    rising = Path([-1.0, 1.0], [-2.0, 2.0])
    value, at = phi_supremum(rising, constant(0.0, -1.0, 1.0))
    t = np.linspace(-1.0, 1.0, 200_001)
    brute = np.max(np.abs(np.tanh(2.0 * t)) / (1.0 + np.abs(t)))
    assert value == pytest.approx(brute, abs=1e-8)
    assert value >= brute - 1e-12
    assert -1.0 <= at <= 1.0


def test_mixed_directions_are_rejected():
    with pytest.raises(WebweaveParameterError):
        path_distance(constant(0.0), constant(0.0, backward=True))


def test_disjoint_windows_are_rejected():
    with pytest.raises(WebweaveWindowError):
        path_distance(constant(0.0, 0.0, 1.0), constant(0.0, 2.0, 3.0))


def test_backward_paths_compare_by_their_start():
    result = path_distance(constant(0.0, 0.0, 1.0, backward=True), constant(0.0, 0.0, 2.0, backward=True))
    assert result.value == pytest.approx(math.tanh(2.0) - math.tanh(1.0))


def test_hausdorff_distance():
    near = PathSet([constant(0.0)])
    far = PathSet([constant(0.0), constant(1.0)])
    assert directed_hausdorff(near, far) == 0.0
    assert directed_hausdorff(far, near) == pytest.approx(math.tanh(1.0))
    result = hausdorff_distance(near, far)
    assert result.value == pytest.approx(math.tanh(1.0))
    assert result.witness == (0.0,)


def test_hausdorff_needs_paths():
    with pytest.raises(EmptyPathSetError):
        hausdorff_distance(PathSet([]), PathSet([constant(0.0)]))


def test_double_hausdorff_takes_the_larger_family():
    forward = (PathSet([constant(0.0)]), PathSet([constant(0.0)]))
    backward_near = PathSet([constant(0.0, backward=True)])
    backward_far = PathSet([constant(0.5, backward=True)])
    first = (forward[0], backward_near)
    second = (forward[1], backward_far)
    assert double_hausdorff_distance(first, second).value == pytest.approx(math.tanh(0.5))


@settings(max_examples=60, deadline=None)
@given(paths(), paths())
def test_distance_is_symmetric(f, g):
    assert path_distance(f, g).value == path_distance(g, f).value
    assert path_distance(f, f).value == 0.0


@settings(max_examples=60, deadline=None)
@given(paths(), paths(), paths())
def test_triangle_inequality(f, g, h):
    assert path_distance(f, g).value <= path_distance(f, h).value + path_distance(h, g).value + 1e-7


@settings(max_examples=40, deadline=None)
@given(paths(), paths())
def test_sup_is_never_below_a_dense_grid(f, g):
    value, _ = phi_supremum(f, g)
    t = np.linspace(-1.0, 2.0, 3001)
    grid = np.abs(np.tanh(f.extended(t)) - np.tanh(g.extended(t))) / (1.0 + np.abs(t))
    assert value >= grid.max() - 1e-9


@settings(max_examples=30, deadline=None)
@given(st.lists(paths(), min_size=1, max_size=3), st.lists(paths(), min_size=1, max_size=3), st.lists(paths(), max_size=3))
def test_enlarging_the_target_set_never_increases_the_directed_distance(first, second, extra):
    K1, K2 = PathSet(first), PathSet(second)
    enlarged = PathSet(second + extra)
    assert directed_hausdorff(K1, enlarged) <= directed_hausdorff(K1, K2)
    assert directed_hausdorff(PathSet(first + extra), K2) >= directed_hausdorff(K1, K2)
