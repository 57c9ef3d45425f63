import csv

import numpy as np
import pytest

from lsbl.core import Rng
from lsbl.datagen import GenConfig, StructureSpec, generate
from lsbl.experiments import (
    REPORT_COLUMNS,
    SolverSpec,
    evaluate_dataset,
    run_solver,
    score,
    sweep_snr,
    sweep_sparsity,
    write_reports,
)
from lsbl.network import init_model
from lsbl.radar import RadarConfig, TargetSpec, build_dictionary


def data(l=1, kind="unstructured", count=30, k=(2, 4)):
    cfg = GenConfig(m=12, n=20, l=l, structure=StructureSpec(kind, *k), count=count)
    return cfg, generate(cfg, Rng(0))


def test_unknown_solver():
    with pytest.raises(ValueError):
        SolverSpec("lista")
    assert SolverSpec("lsbl", {"label": "nw1"}).label == "nw1"
    assert SolverSpec("omp").label == "omp"


@pytest.mark.parametrize("name", ["sbl", "msbl", "pcsbl", "omp", "cosamp", "bp", "mmse"])
def test_every_solver_returns_true_shape(name):
    _, ds = data(l=2, kind="joint_sparse")
    a, x, y, nv = ds.batch(np.arange(ds.count))
    out = run_solver(SolverSpec(name, {"iterations": 20}), a, y, x, np.maximum(nv, 1e-6))
    assert out.shape == x.shape and np.all(np.isfinite(out))


def test_lsbl_needs_model_and_embedding_equals_sbl():
    _, ds = data()
    a, x, y, _ = ds.batch(np.arange(ds.count))
    with pytest.raises(ValueError):
        run_solver(SolverSpec("lsbl"), a, y, x, 1e-6)
    model = init_model("NW1", 20, 1, 8)
    lsbl = run_solver(SolverSpec("lsbl"), a, y, x, 1e-6, model)
    sbl = run_solver(SolverSpec("sbl", {"iterations": 8}), a, y, x, 1e-6)
    assert np.max(np.abs(lsbl - sbl)) <= 1e-8


def test_columnwise_sbl_matches_per_column_runs():
    _, ds = data(l=3, kind="joint_sparse", count=4)
    a, x, y, _ = ds.batch(np.arange(4))
    both = run_solver(SolverSpec("sbl", {"iterations": 10}), a, y, x, 1e-6)
    one = run_solver(SolverSpec("sbl", {"iterations": 10}), a, y[:, :, 1:2], x[:, :, 1:2], 1e-6)
    assert np.allclose(both[:, :, 1:2], one, atol=1e-12)


def test_mmse_and_greedy_use_oracle_information():
    _, ds = data()
    a, x, y, _ = ds.batch(np.arange(ds.count))
    mmse = run_solver(SolverSpec("mmse"), a, y, x, 0.0)
    assert np.allclose(mmse, x, atol=1e-10)
    omp = run_solver(SolverSpec("omp"), a, y, x, 0.0)
    assert np.all(np.count_nonzero(omp, axis=1) <= np.count_nonzero(x, axis=1))


def test_noise_floor_option():
    _, ds = data(count=3)
    a, x, y, _ = ds.batch(np.arange(3))
    low = run_solver(SolverSpec("sbl", {"iterations": 5}), a, y, x, 1e-6)
    high = run_solver(SolverSpec("sbl", {"iterations": 5, "noise_floor": 1.0}), a, y, x, 1e-6)
    assert not np.allclose(low, high)


def test_score_drops_empty_samples():
    x = np.zeros((3, 4, 1))
    x[1, 2] = 1.0
    x[2, 0] = 1.0
    est = x.copy()
    est[2, 0] = 0.5
    r = score(x, est, 3, "demo")
    assert r.p == 2 and r.rmse == pytest.approx(0.125) and r.failure_rate == 0.0


def test_sweeps_and_csv(tmp_path):
    cfg, ds = data()
    solvers = [SolverSpec("omp"), SolverSpec("lsbl", {"label": "net"})]
    models = {"net": init_model("NW1", 20, 1, 3)}
    reports = sweep_sparsity(cfg, [2, 5], 40, solvers, Rng(1), a=ds.a, models=models)
    assert [(r.sweep, r.solver, r.p) for r in reports] == [
        (2.0, "omp", 40), (2.0, "net", 40), (5.0, "omp", 40), (5.0, "net", 40)]
    again = sweep_sparsity(cfg, [5], 40, solvers, Rng(1), a=ds.a, models=models)
    assert again == reports[2:]
    path = tmp_path / "r.csv"
    write_reports(reports, path)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == REPORT_COLUMNS and len(rows) == 5
    assert float(rows[1][2]) == reports[0].rmse


def test_snr_sweep():
    scene = build_dictionary(RadarConfig())
    solvers = [SolverSpec("mmse", {"prior_var": 0.5}), SolverSpec("pcsbl", {"iterations": 5})]
    reports = sweep_snr(scene, TargetSpec(), [10.0, 30.0], 10, solvers, Rng(2), power=30.0)
    assert [r.sweep for r in reports] == [10.0, 10.0, 30.0, 30.0]
    assert reports[2].rmse < reports[0].rmse


def test_evaluate_dataset_mode():
    _, ds = data()
    reports = evaluate_dataset(ds, [SolverSpec("omp")], 0, mode="threshold")
    assert reports[0].solver == "omp" and reports[0].p == ds.count
