import json
import threading

import pytest

from webweave.experiments import EXPERIMENT_CODES, EXPERIMENTS, ReplicaRunner, run
from webweave.web import rng


@pytest.mark.parametrize("threads", [1, 4])
def test_runner_keeps_seed_order(threads):
    runner = ReplicaRunner("order", threads)
    assert runner(lambda seed: seed * 2, range(20)) == [2 * s for s in range(20)]


def test_threaded_runner_uses_worker_threads():
    names = ReplicaRunner("threads", 3)(lambda _: threading.current_thread().name, range(6))
    assert threading.current_thread().name not in names


def test_every_experiment_has_a_runner():
    assert set(EXPERIMENTS) == set(EXPERIMENT_CODES)
    assert len(set(EXPERIMENT_CODES.values())) == len(EXPERIMENT_CODES)


def config(tmp_path, experiment, parameters, replicas=2, seed=5):
    return {
        "experiment": experiment,
        "seed": seed,
        "replicas": replicas,
        "output_dir": str(tmp_path / experiment),
        "parameters": parameters,
    }


def test_replica_seeds_are_recorded(tmp_path):
    summary = run(
        config(tmp_path, "simulate", {"kind": "skeleton", "starts": [[0, 0], [1, 0]], "grid_dt": 0.05, "horizon": 1.0}),
        "test",
    )
    rows = (tmp_path / "simulate" / "replicas.csv").read_text().splitlines()
    seeds = rng.replica_seeds(5, EXPERIMENT_CODES["simulate"], 2)
    assert [int(r.split(",")[1]) for r in rows[1:]] == seeds
    assert summary["results"]["crossings"] == 0


@pytest.mark.parametrize(
    "parameters",
    [
        {"kind": "double-skeleton", "starts": [[0, 0], [0.5, 0.5], [-0.5, 0.25]], "grid_dt": 0.01, "horizon": 1.5,
         "floor": 0.0},
        {"kind": "continuous", "rate": 1.0, "window": {"x_min": -4, "x_max": 4, "t_min": 0, "t_max": 3}},
    ],
)
def test_simulations_never_cross(tmp_path, parameters):
    summary = run(config(tmp_path, "simulate", parameters), "test")
    assert summary["results"]["crossings"] == 0
    assert summary["results"]["dual_paths"] > 0


def test_type_duality_run(tmp_path):
    parameters = {"window": {"x_min": 0, "x_max": 20, "t_min": 0, "t_max": 20}, "probe_depth": 2}
    results = run(config(tmp_path, "type-duality", parameters), "test")["results"]
    assert results["violations"] == 0
    assert results["passed"]
    assert results["sites"] > 0
    assert set(results["census"]) <= {"0,1", "1,1", "2,1"}


def test_cr_reflect_run(tmp_path):
    parameters = {
        "forward_start": [0.3, 0.0],
        "backward_start": [0.0, 1.0],
        "grid_dt": 0.01,
        "double_skeleton": {"starts": [[0.0, 0.0], [0.5, 0.5], [-0.5, 0.25]], "horizon": 1.5, "floor": 0.0},
    }
    results = run(config(tmp_path, "cr-reflect", parameters, replicas=3), "test")["results"]
    assert results["fixture"]["matches"]
    assert results["fixture"]["result"] == [1.0, 0.0, 0.0, 1.5, 3.0]
    assert results["violations"] == 0
    assert results["double_skeleton_crossings"] == 0
    assert results["passed"]


def test_dimension_run_on_reference_sets(tmp_path):
    parameters = {
        "targets": [
            {"kind": "line", "points": 1000, "expected": 1.0, "tolerance": 0.01},
            {"kind": "square", "points": 40000, "expected": 2.0, "tolerance": 0.01},
        ],
        "scales": [0.5, 0.1, 0.05, 0.01],
    }
    results = run(config(tmp_path, "dimension", parameters, replicas=1), "test")["results"]
    line, square = results["targets"]
    assert line["dimension"] == pytest.approx(1.0)
    assert square["dimension"] == pytest.approx(2.0)
    assert line["passed"] and square["passed"]
    assert results["scales"] == [0.5, 0.1, 0.05, 0.01]
    plot = (tmp_path / "dimension" / "box_counts_0.dat").read_text().splitlines()
    assert plot[0] == "# x y y_err"
    assert len(plot) == 5


def test_metric_run(tmp_path):
    parameters = {"knots": 4, "t_range": [-1.0, 2.0], "grid_points": 2001, "set_size": 3}
    results = run(config(tmp_path, "metric", parameters, replicas=5), "test")["results"]
    assert results["triples"] == 5
    assert set(results["violations"]) == {
        "symmetry", "triangle", "soundness", "hausdorff_symmetry", "hausdorff_triangle", "hausdorff_brute_force"
    }
    assert results["passed"]


def test_eta_stats_on_constant_paths(tmp_path):
    parameters = {
        "model": {"type": "constant", "xs": [0, 1, 2], "times": [0, 1]},
        "query": {"t0": 0, "t": 1, "a": 0, "b": 2},
        "ks": [1, 2],
    }
    summary = run(config(tmp_path, "eta-stats", parameters, replicas=100), "test")
    results = summary["results"]
    assert results["mean"]["estimate"] == 3.0
    assert results["mean"]["std_error"] == 0.0
    assert [r["passed"] for r in results["counting_bound"]] == [False, False]
    written = json.loads((tmp_path / "eta-stats" / "summary.json").read_text())
    assert {f["path"] for f in written["files"]} == {"eta.csv", "eta_tail.dat", "eta_bound.dat"}


def test_eta_stats_records_the_half_step_rerun(tmp_path):
    parameters = {
        "model": {"type": "skeleton", "x_range": [0, 1], "spacing": 0.25, "start_times": [0], "grid_dt": 0.05,
                  "horizon": 1.0},
        "query": {"t0": 0, "t": 1, "a": 0, "b": 1},
        "ks": [1],
        "compare_half_dt": True,
    }
    results = run(config(tmp_path, "eta-stats", parameters, replicas=100), "test")["results"]
    refinement = results["grid_refinement"]
    assert (refinement["coarse_grid_dt"], refinement["grid_dt"]) == (0.05, 0.025)
    assert refinement["coarse_mean"] == results["mean"]["estimate"]
    assert refinement["difference"] == pytest.approx(refinement["mean"] - refinement["coarse_mean"])
    assert 1.0 <= refinement["mean"] <= 5.0


def test_tightness_run(tmp_path):
    parameters = {
        "model": {"type": "constant", "xs": [0], "times": [-0.5, -0.25, 0, 0.25, 0.5, 0.75, 1.0]},
        "t_seq": [0.25],
        "u": 1.0,
        "L": 0.5,
        "T": 0.5,
    }
    results = run(config(tmp_path, "tightness", parameters, replicas=100), "test")["results"]
    assert results["passed"]
    assert results["tightness"]["rows"][0]["g"] == 0.0
