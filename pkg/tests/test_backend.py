import math

import pytest

from posegraph_vo import backend as backend_mod
from posegraph_vo.backend import BackendOptions, OptimizationFailed, run_backend
from posegraph_vo.cli import main
from posegraph_vo.evaluation import rmse
from posegraph_vo.loops import LoopDetection
from posegraph_vo.optimizer import OptReport, TerminationReason
from posegraph_vo.sim import (
    SimConfig,
    emit_window,
    emit_windows,
    generate_ground_truth,
    loop_windows,
    oracle_detections,
    oracle_verifier,
)

CFG = SimConfig(
    seed=5, radius=20.0, length=1.15 * 2 * math.pi * 20.0,
    noise_trans=0.02, noise_rot=0.002, drift_bias=(0, 0, 0.005, 0, 0, 0),
)


@pytest.fixture(scope="module")
def scene():
    gt = generate_ground_truth(CFG)
    ws = list(emit_windows(gt, CFG))
    dets = oracle_detections(gt, CFG)
    table = {tuple(w.frame_ids): w for w in loop_windows(gt, dets, CFG)}
    return gt, ws, dets, table


def test_loop_closing_improves_rmse(scene):
    gt, ws, dets, table = scene
    raw = run_backend(ws, dets, table, options=BackendOptions(loop_closing=False))
    closed = run_backend(ws, dets, table, oracle_verifier(gt, CFG))
    assert raw.reports == [] and raw.loops == []
    assert closed.loops and len(closed.reports) == len(closed.loops)
    assert rmse(closed.trajectory(), gt) < rmse(raw.trajectory(), gt)


def test_callable_window_source_matches_table(scene):
    gt, ws, dets, table = scene
    a = run_backend(ws, dets, table).trajectory()
    b = run_backend(ws, dets, lambda frames: emit_window(gt, frames, CFG)).trajectory()
    assert all(x == y for x, y in zip(a, b))


def test_missing_windows_or_rejection_skip_loops(scene):
    gt, ws, dets, table = scene
    assert run_backend(ws, dets, {}).loops == []
    assert run_backend(ws, dets, table, lambda c: False).loops == []
    # a match frame with too little history is skipped, not an error
    early = [LoopDetection(q, 0) for q in range(60, 70)]
    assert run_backend(ws, early, table).loops == []


def test_window_relax_and_periodic_optimization(scene):
    gt, ws, dets, table = scene
    res = run_backend(ws[:40], options=BackendOptions(window_relax=True, optimize_every=10, loop_closing=False))
    assert len(res.reports) == 4
    assert len(res.graph.nodes) == 42


def test_numerical_failure_reports_pre_failure_graph(scene, monkeypatch, tmp_path):
    gt, ws, dets, table = scene

    def failing(graph, cfg=None):
        graph.nodes[max(graph.nodes)] = graph.nodes[0]
        rep = OptReport()
        rep.reason = TerminationReason.NUMERICAL_FAILURE
        return rep

    monkeypatch.setattr(backend_mod, "optimize", failing)
    with pytest.raises(OptimizationFailed) as exc:
        run_backend(ws, dets, table)
    g = exc.value.graph
    assert g.nodes[max(g.nodes)] != g.nodes[0]
    assert any(c.kind.value == "loop" for c in g.constraints)

    cfg = tmp_path / "c.txt"
    cfg.write_text("radius = 20\nlength = 150\ndrift_bias = 0,0,0.005,0,0,0\n")
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "s")]) == 0
    s = tmp_path / "s"
    code = main([
        "run", "--windows", str(s / "windows.txt"), "--detections", str(s / "detections.txt"),
        "--out", str(tmp_path / "o"),
    ])
    assert code == 3
    assert (tmp_path / "o" / "graph.g2o").exists()
    assert not (tmp_path / "o" / "estimate.txt").exists()
