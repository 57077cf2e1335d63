import json

import numpy as np
import pytest

import oracles
from frgt.cli import build_configs, main, parse_kv_config
from frgt.evaluate import (EvalReport, coverage_study, coverage_table, evaluate_checkpoint,
                           evaluate_samples, export_fields, metrics, rmse_change)
from frgt.graphstore import load_bundle
from frgt.meshgraph import FLUID, WALL, MeshGraph
from frgt.synthflow import load_split
from frgt.trainer import TrainConfig, load_samples


def test_metrics_examples():
    t = np.random.default_rng(0).standard_normal((20, 3))
    m = metrics(t, t)
    assert m["rmse"] == [0, 0, 0] and m["max_abs"] == [0, 0, 0] and m["r2"] == [1, 1, 1]
    m = metrics(t + 0.5, t)
    np.testing.assert_allclose(m["rmse"], 0.5, rtol=1e-12)
    np.testing.assert_allclose(m["max_abs"], 0.5, rtol=1e-12)
    m = metrics(np.broadcast_to(t.mean(0), t.shape), t)
    np.testing.assert_allclose(m["r2"], 0.0, atol=1e-12)


def test_metrics_constant_target_r2_undefined():
    t = np.ones((5, 3))
    assert metrics(t + 1, t)["r2"] == [None, None, None]


def test_metrics_match_scalar_loop():
    rng = np.random.default_rng(1)
    p, t = rng.standard_normal((50, 3)), rng.standard_normal((50, 3))
    m = metrics(p, t)
    rmse, mx, r2 = oracles.metrics_loop(p.tolist(), t.tolist())
    np.testing.assert_allclose(m["rmse"], rmse, rtol=0, atol=1e-10)
    np.testing.assert_allclose(m["max_abs"], mx, rtol=0, atol=1e-10)
    np.testing.assert_allclose(m["r2"], r2, rtol=0, atol=1e-10)
    assert all(r <= 1 for r in m["r2"])


def test_metrics_shape_mismatch():
    with pytest.raises(ValueError):
        metrics(np.zeros((2, 3)), np.zeros((3, 3)))


def _report(rmse):
    return EvalReport(aggregate={"rmse": rmse, "max_abs": rmse, "r2": [1, 1, 1]})


def test_coverage_study_arithmetic():
    base, half = _report([2.0, 4.0, 1.0]), _report([3.0, 5.0, 1.0])
    ch = coverage_study({1.0: base, 0.5: half})
    assert ch[1.0] == [0.0, 0.0, 0.0]
    assert ch[0.5] == [50.0, 25.0, 0.0]
    assert rmse_change(half, base) == ch[0.5]
    assert "+50.00" in coverage_table(ch)
    with pytest.raises(ValueError, match="baseline"):
        coverage_study({0.5: half})


def _two_node_graph():
    return MeshGraph(positions=np.array([[0.0, 0.0], [1.0, 0.5]]), node_type=np.array([WALL, FLUID], np.uint8),
                     edges=np.array([[0, 1], [1, 0]]), edge_feat=np.array([[1, .5, 1.118, 0], [-1, -.5, 1.118, 0]]),
                     sdf=np.array([0.0, 1.0]), pressure_obs=np.array([1.0, np.nan]),
                     target=np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]),
                     sense_mask=np.array([True, False]))


def test_export_vtk_readable(tmp_path):
    meshio = pytest.importorskip("meshio")
    g = _two_node_graph()
    pred = g.target + 0.25
    export_fields(g, pred, tmp_path / "f.vtk", "vtk")
    m = meshio.read(tmp_path / "f.vtk")
    assert len(m.points) == 2
    np.testing.assert_allclose(m.point_data["p"].ravel(), pred[:, 0])
    np.testing.assert_allclose(m.point_data["u_mag"].ravel(), np.hypot(pred[:, 1], pred[:, 2]))
    np.testing.assert_allclose(m.point_data["err_u_y"].ravel(), 0.25)


def test_export_csv_round_trip(tmp_path, small_case):
    pred = small_case.target.astype(np.float32) * np.float32(1.01)
    export_fields(small_case, pred, tmp_path / "f.csv", "csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "x,y,p,ux,uy,p_true,ux_true,uy_true"
    assert len(lines) == small_case.n_nodes + 1
    back = np.loadtxt(tmp_path / "f.csv", delimiter=",", skiprows=1)
    assert np.array_equal(back[:, 2:5].astype(np.float32), pred)
    assert np.array_equal(back[:, 5:].astype(np.float32), small_case.target.astype(np.float32))


def test_export_bad_shape(tmp_path):
    with pytest.raises(ValueError):
        export_fields(_two_node_graph(), np.zeros((3, 3)), tmp_path / "x.vtk")


def test_kv_config(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# tiny\nd = 16\nheads=4\nL=2\nepochs = 3  # short\nlr0=1e-3\nattn_layer_norm=false\n")
    assert parse_kv_config(p)["d"] == "16"
    cfg, tcfg = build_configs(p, seed=9)
    assert (cfg.d, cfg.L, cfg.attn_layer_norm, tcfg.epochs, tcfg.lr0, tcfg.seed) == (16, 2, False, 3, 1e-3, 9)
    p.write_text("depth = 3\n")
    with pytest.raises(ValueError, match="depth"):
        build_configs(p)


def test_cli_usage_errors(capsys):
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["grad-check", "--bogus"])
    assert e.value.code == 2


def test_cli_runtime_error_exit_1(tmp_path, capsys):
    assert main(["eval", "--ckpt", str(tmp_path / "nope"), "--data", str(tmp_path)]) == 1
    assert "error:" in capsys.readouterr().err


def test_cli_grad_check(capsys):
    assert main(["grad-check"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "segment_softmax" in out


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["gen-data", "--seed", "2", "--n-cases", "4", "--out", str(data),
                 "--split-frac", "train=0.5,val=0.25,test=0.25", "--n-theta", "16", "--n-r", "3"]) == 0
    cfg = root / "tiny.txt"
    cfg.write_text("L=2\nT=1\nd=16\nheads=4\nepochs=2\n")
    runs = []
    for name in ("a", "b"):
        assert main(["train", "--data", str(data), "--config", str(cfg), "--out", str(root / name),
                     "--seed", "1", "--deterministic"]) == 0
        runs.append(root / name)
    return root, data, runs


def test_cli_deterministic_training(pipeline):
    _, _, (a, b) = pipeline
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()


def test_cli_infer_eval_export(pipeline):
    root, data, (a, _) = pipeline
    bundle = load_split(data, "test")[0]
    out = root / "pred"
    assert main(["infer", "--ckpt", str(a / "last"), "--bundle", str(bundle), "--out", str(out)]) == 0
    summary = json.loads((out / "metrics.json").read_text())
    assert np.isfinite(summary["metrics"]["rmse"]).all() and summary["inference_seconds"] > 0
    assert main(["eval", "--ckpt", str(a / "last"), "--data", str(data), "--report", str(root / "r.json")]) == 0
    assert json.loads((root / "r.json").read_text())["aggregate"]["rmse"]
    for fmt in ("vtk", "csv"):
        assert main(["export", "--bundle", str(bundle), "--pred", str(out), "--format", fmt]) == 0
        assert (out / f"pred.{fmt}").exists()


def test_cli_coverage_study(pipeline):
    root, data, (a, b) = pipeline
    rep = root / "cov.json"
    assert main(["coverage-study", "--ckpts", f"1.0={a / 'last'}", f"0.6={b / 'last'}",
                 "--data", str(data), "--report", str(rep)]) == 0
    assert json.loads(rep.read_text())["changes_percent"]["1.0"] == [0.0, 0.0, 0.0]


def test_eval_after_save_equals_inline(pipeline):
    from frgt.evaluate import load_model
    _, data, (a, _) = pipeline
    params, cfg, tcfg = load_model(a / "last")
    inline = evaluate_samples(params, cfg, load_samples(load_split(data, "val"), tcfg))
    saved = evaluate_checkpoint(a / "last", load_split(data, "val"))
    assert inline.aggregate == saved.aggregate


def test_run_directory_resolves_to_best(pipeline, tmp_path):
    from frgt.evaluate import resolve_checkpoint
    _, _, (a, _) = pipeline
    assert resolve_checkpoint(a) == a / "best"
    assert resolve_checkpoint(a / "last") == a / "last"
    (tmp_path / "last").mkdir()
    (tmp_path / "last" / "manifest.json").write_text("{}")
    assert resolve_checkpoint(tmp_path) == tmp_path / "last"
    assert resolve_checkpoint(tmp_path / "none") == tmp_path / "none"
