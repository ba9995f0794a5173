import numpy as np
import pytest

from conftest import random_pose
from posegraph_vo.graph import (
    Constraint,
    ConstraintKind,
    GlobalPoseGraph,
    GraphError,
    load_g2o,
    save_g2o,
)
from posegraph_vo.lie import Pose, compose, inverse, se3_exp, se3_log
from posegraph_vo.windowed import window_from_poses


def trajectory(rng, m, step=1.0):
    poses = [Pose.identity()]
    for _ in range(m - 1):
        poses.append(compose(poses[-1], random_pose(rng, trans=step, max_angle=0.2)))
    return poses


def windows_of(poses, n=3):
    return [window_from_poses(range(k - n + 1, k + 1), poses[k - n + 1 : k + 1]) for k in range(n - 1, len(poses))]


def test_bootstrap_window(rng):
    poses = trajectory(rng, 3)
    g = GlobalPoseGraph()
    g.append_window(windows_of(poses)[0])
    assert g.node_ids == [0, 1, 2]
    assert len(g.constraints) == 6
    assert g.fixed == {0}
    assert g.nodes[0] == Pose.identity()
    for a, b in zip(g.trajectory(), poses):
        assert a.allclose(b, atol=1e-12)


def test_sliding_window_counts(rng):
    poses = trajectory(rng, 4)
    g = GlobalPoseGraph()
    for w in windows_of(poses):
        g.append_window(w)
    assert len(g.nodes) == 4
    assert len(g.constraints) == 12

    g2 = GlobalPoseGraph(skip_duplicates=True)
    for w in windows_of(poses):
        g2.append_window(w)
    # the pair 1<->2 is shared by both windows
    assert len(g2.constraints) == 10


def test_interior_degree(rng):
    poses = trajectory(rng, 9)
    g = GlobalPoseGraph()
    for w in windows_of(poses):
        g.append_window(w)
    assert g.degree(4) == 12


def test_window_rejections(rng):
    poses = trajectory(rng, 6)
    ws = windows_of(poses)
    g = GlobalPoseGraph()
    g.append_window(ws[0])
    with pytest.raises(GraphError):
        g.append_window(ws[2])  # skips frame 3
    with pytest.raises(GraphError):
        g.add_constraint(Constraint(0, 99, Pose.identity()))
    with pytest.raises(GraphError):
        Constraint(1, 1, Pose.identity())
    with pytest.raises(GraphError):
        g.add_node(0, Pose.identity())


def test_edge_error_translation_example():
    g = GlobalPoseGraph()
    g.add_node(0, Pose.identity())
    g.add_node(1, Pose(np.eye(3), [1.0, 0, 0]))
    c = Constraint(0, 1, Pose(np.eye(3), [2.0, 0, 0]))
    np.testing.assert_allclose(g.edge_error(c), [-1.0, 0, 0, 0, 0, 0], atol=1e-15)


def test_edge_error_matrix_oracle(rng):
    g = GlobalPoseGraph()
    for k in range(5):
        g.add_node(k, random_pose(rng, trans=3.0, max_angle=1.0))
    for _ in range(30):
        i, j = rng.choice(5, size=2, replace=False)
        meas = random_pose(rng, trans=3.0, max_angle=1.0)
        g.add_constraint(Constraint(int(i), int(j), meas))
    E = g.errors()
    for c, e in zip(g.constraints, E):
        M = np.linalg.inv(c.relative.matrix()) @ np.linalg.inv(g.nodes[c.i].matrix()) @ g.nodes[c.j].matrix()
        np.testing.assert_allclose(se3_exp(e).matrix(), M, atol=1e-10)
        np.testing.assert_allclose(e, g.edge_error(c), atol=1e-10)


def test_chi2_zero_for_consistent_and_weighted(rng):
    poses = trajectory(rng, 8)
    g = GlobalPoseGraph()
    for w in windows_of(poses):
        g.append_window(w)
    assert g.total_chi2() < 1e-20
    d = se3_exp([0.1, 0, 0, 0, 0, 0])
    g.add_loop_constraints([Constraint(0, 7, compose(compose(inverse(poses[0]), poses[7]), d), ConstraintKind.LOOP)])
    assert g.total_chi2() == pytest.approx(0.01, rel=1e-9)
    g.weights[ConstraintKind.LOOP] = 4.0
    assert g.total_chi2() == pytest.approx(0.04, rel=1e-9)


def test_chi2_gauge_invariant(rng):
    poses = trajectory(rng, 6)
    g = GlobalPoseGraph()
    for w in windows_of(poses):
        g.append_window(w)
    for k in g.nodes:
        g.nodes[k] = compose(g.nodes[k], se3_exp(rng.normal(size=6) * 0.05))
    base = g.total_chi2()
    G = random_pose(rng, trans=10.0)
    moved = g.copy()
    moved.nodes = {k: compose(G, p) for k, p in g.nodes.items()}
    assert moved.total_chi2() == pytest.approx(base, rel=1e-9)


def test_initialize_chain(rng):
    poses = trajectory(rng, 7)
    g = GlobalPoseGraph()
    for w in windows_of(poses):
        g.append_window(w)
    ref = g.trajectory()
    for k in g.nodes:
        if k:
            g.nodes[k] = Pose.identity()
    g.initialize_chain()
    for a, b in zip(g.trajectory(), ref):
        assert a == b


def test_initialize_chain_broken():
    g = GlobalPoseGraph()
    g.add_node(0, Pose.identity())
    g.add_node(1, Pose.identity())
    g.add_node(2, Pose.identity())
    g.add_constraint(Constraint(0, 2, Pose.identity()))
    g.add_constraint(Constraint(0, 1, Pose.identity()))
    with pytest.raises(GraphError, match="chain broken"):
        g.initialize_chain()


def test_connectivity():
    g = GlobalPoseGraph()
    for k in range(3):
        g.add_node(k, Pose.identity())
    g.add_constraint(Constraint(0, 1, Pose.identity()))
    assert not g.is_connected()
    g.add_constraint(Constraint(2, 1, Pose.identity()))
    assert g.is_connected()


def test_g2o_round_trip(tmp_path, rng):
    poses = trajectory(rng, 6)
    g = GlobalPoseGraph()
    for w in windows_of(poses):
        g.append_window(w)
    g.add_loop_constraints([Constraint(0, 5, random_pose(rng), ConstraintKind.LOOP)])
    g.weights[ConstraintKind.LOOP] = 2.5
    g.fixed.add(3)
    path = tmp_path / "g.g2o"
    save_g2o(g, path)
    back = load_g2o(path)
    assert back.node_ids == g.node_ids
    assert back.fixed == g.fixed
    assert [(c.i, c.j, c.kind) for c in back.constraints] == [(c.i, c.j, c.kind) for c in g.constraints]
    for k in g.nodes:
        assert back.nodes[k].allclose(g.nodes[k], atol=1e-14)
    for a, b in zip(back.constraints, g.constraints):
        np.testing.assert_allclose(se3_log(compose(inverse(a.relative), b.relative)), 0, atol=1e-14)
    assert back.total_chi2() == pytest.approx(g.total_chi2(), rel=1e-9, abs=1e-18)


def test_g2o_reports_bad_line(tmp_path):
    path = tmp_path / "bad.g2o"
    path.write_text("VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\nVERTEX_SE3:QUAT 1 0 0 nan 0 0 0 1\n")
    with pytest.raises(ValueError, match=":2"):
        load_g2o(path)


def test_chi2_single_violation_and_brute_force(rng):
    g = GlobalPoseGraph()
    g.add_node(0, Pose.identity())
    g.add_node(1, random_pose(rng))
    xi = np.array([0.1, -0.2, 0.3, 0.05, 0.02, -0.01])
    g.add_constraint(Constraint(0, 1, compose(g.nodes[1], se3_exp(-xi))))
    assert g.total_chi2() == pytest.approx(xi @ xi, rel=1e-12)

    for k in range(2, 8):
        g.add_node(k, random_pose(rng, trans=3.0))
    for _ in range(25):
        i, j = rng.choice(8, size=2, replace=False)
        g.add_constraint(Constraint(int(i), int(j), random_pose(rng), ConstraintKind(rng.choice(["local", "loop"]))))
    g.weights[ConstraintKind.LOOP] = 3.0
    total = 0.0
    for c in g.constraints:
        e = se3_log(compose(compose(inverse(c.relative), inverse(g.nodes[c.i])), g.nodes[c.j]))
        total += (3.0 if c.kind is ConstraintKind.LOOP else 1.0) * float(e @ e)
    assert g.total_chi2() == pytest.approx(total, rel=1e-10)


def test_satisfied_constraint_has_zero_error(rng):
    g = GlobalPoseGraph()
    g.add_node(0, random_pose(rng))
    Tij = random_pose(rng)
    g.add_node(1, compose(g.nodes[0], Tij))
    assert np.abs(g.edge_error(Constraint(0, 1, Tij))).max() < 1e-12


def test_add_loop_constraints_semantics(rng):
    poses = trajectory(rng, 10)
    g = GlobalPoseGraph()
    for w in windows_of(poses):
        g.append_window(w)
    before = list(g.constraints)
    g.add_loop_constraints([])
    assert g.constraints == before
    c = Constraint(1, 9, compose(inverse(poses[1]), poses[9]), ConstraintKind.LOOP)
    # drift the estimate so the loop edge disagrees
    g.nodes[9] = compose(g.nodes[9], se3_exp([0.5, 0, 0, 0, 0.02, 0]))
    chi0 = g.total_chi2()
    g.add_loop_constraints([c])
    chi1 = g.total_chi2()
    assert chi1 > chi0
    g.add_loop_constraints([c])
    assert len(g.constraints) == len(before) + 2
    assert g.total_chi2() - chi1 == pytest.approx(chi1 - chi0, rel=1e-12)


def test_initialize_chain_on_noisy_windows():
    from posegraph_vo.sim import SimConfig, emit_windows, generate_ground_truth

    cfg = SimConfig(seed=1, radius=20.0, length=40.0, noise_rot=0.01, noise_trans=0.05)
    g = GlobalPoseGraph()
    for w in emit_windows(generate_ground_truth(cfg), cfg):
        g.append_window(w)
    g.initialize_chain()
    firsts, others = set(), []
    for c in g.constraints:
        e = np.linalg.norm(g.edge_error(c))
        if c.j == c.i + 1 and (c.i, c.j) not in firsts:
            firsts.add((c.i, c.j))
            assert e < 1e-12
        else:
            others.append(e)
    assert max(others) > 1e-3


def test_initialize_chain_single_node():
    g = GlobalPoseGraph()
    g.add_node(0, Pose.identity())
    g.initialize_chain()
    assert g.nodes[0] == Pose.identity()
