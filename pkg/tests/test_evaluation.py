import math

import numpy as np
import pytest

from conftest import random_pose
from posegraph_vo.evaluation import (
    LENGTHS,
    DegenerateAlignment,
    EvalError,
    align_se3,
    evaluate,
    kitti_rel_errors,
    rmse,
)
from posegraph_vo.lie import Pose, compose, inverse, se3_exp
from posegraph_vo.sim import SimConfig, generate_ground_truth
from posegraph_vo.trajectory import Trajectory


def noisy(gt, rng, sigma):
    return Trajectory(tuple(compose(p, se3_exp(rng.normal(size=6) * sigma)) for p in gt))


def rel_errors_oracle(est, gt, lengths=LENGTHS):
    """Direct summation: walk forward from every start, one segment at a time."""
    P = [np.array(p.t) for p in gt]
    t_sum = r_sum = 0.0
    count = 0
    for s in range(len(gt)):
        for L in lengths:
            acc, e = 0.0, s
            while e + 1 < len(gt) and acc < L:
                acc += float(np.linalg.norm(P[e + 1] - P[e]))
                e += 1
            if acc < L:
                continue
            dg = np.linalg.inv(gt[s].matrix()) @ gt[e].matrix()
            de = np.linalg.inv(est[s].matrix()) @ est[e].matrix()
            E = np.linalg.inv(de) @ dg
            c = (np.trace(E[:3, :3]) - 1) / 2
            t_sum += np.linalg.norm(E[:3, 3]) / L
            r_sum += math.acos(max(-1.0, min(1.0, c))) / L
            count += 1
    return 100 * t_sum / count, 100 * math.degrees(r_sum / count), count


@pytest.fixture(scope="module")
def circle_gt():
    return generate_ground_truth(SimConfig(radius=80.0, length=499.0))


def test_align_identity(circle_gt):
    G = align_se3(circle_gt, circle_gt)
    np.testing.assert_allclose(G.matrix(), np.eye(4), atol=1e-10)


def test_align_recovers_rigid_transform(circle_gt, rng):
    for _ in range(10):
        G0 = random_pose(rng, trans=50.0)
        est = circle_gt.transformed(G0)
        G = align_se3(est, circle_gt)
        assert G.allclose(inverse(G0), atol=1e-9)


def test_alignment_is_optimal(circle_gt, rng):
    est = noisy(circle_gt, rng, 0.3).transformed(random_pose(rng, trans=5.0, max_angle=0.3))
    best = rmse(est, circle_gt)
    raw = rmse(est, circle_gt, align=False)
    assert best <= raw
    G = align_se3(est, circle_gt)
    for _ in range(100):
        other = compose(G, se3_exp(rng.normal(size=6) * 0.05))
        assert best <= rmse(est.transformed(other), circle_gt, align=False) + 1e-12


def test_rmse_examples(circle_gt, rng):
    assert rmse(circle_gt, circle_gt) < 1e-10
    d = np.array([0.3, -0.4, 1.2])
    shifted = Trajectory(tuple(Pose(p.R, p.t + d) for p in circle_gt))
    assert rmse(shifted, circle_gt, align=False) == pytest.approx(np.linalg.norm(d), rel=1e-12)
    est = noisy(circle_gt, rng, 0.2)
    G = align_se3(est, circle_gt)
    P = est.transformed(G).positions()
    ref = math.sqrt(np.mean(np.sum((P - circle_gt.positions()) ** 2, axis=1)))
    assert rmse(est, circle_gt) == pytest.approx(ref, rel=1e-12)


def test_collinear_alignment_flagged():
    gt = generate_ground_truth(SimConfig(path="straight", length=120.0))
    with pytest.raises(DegenerateAlignment):
        align_se3(gt, gt)
    G = align_se3(gt, gt, allow_degenerate=True)
    assert rmse(gt.transformed(G), gt, align=False) < 1e-9


def test_rel_errors_zero_for_identical(circle_gt):
    r = kitti_rel_errors(circle_gt, circle_gt)
    assert r.valid
    assert r.t_rel == 0.0 or r.t_rel < 1e-10
    assert r.r_rel < 1e-10
    assert set(r.per_length) == set(LENGTHS[:4])


def test_scaled_straight_path_gives_one_percent():
    gt = generate_ground_truth(SimConfig(path="straight", length=900.0))
    est = Trajectory(tuple(Pose(p.R, 1.01 * p.t) for p in gt))
    r = kitti_rel_errors(est, gt)
    assert r.t_rel == pytest.approx(1.0, abs=1e-6)
    assert r.r_rel == 0.0
    assert set(r.per_length) == set(LENGTHS)


def test_rel_errors_match_direct_summation(circle_gt, rng):
    # integrate the noise so that it behaves like drift
    poses = [circle_gt[0]]
    for k in range(1, len(circle_gt)):
        step = compose(inverse(circle_gt[k - 1]), circle_gt[k])
        poses.append(compose(poses[-1], compose(step, se3_exp(rng.normal(size=6) * 0.002))))
    est = Trajectory(tuple(poses))
    assert len(est) == 500
    r = kitti_rel_errors(est, circle_gt)
    t_ref, r_ref, count = rel_errors_oracle(est, circle_gt)
    assert r.segments == count
    assert abs(r.t_rel - t_ref) < 1e-9
    assert abs(r.r_rel - r_ref) < 1e-9


def test_rel_errors_invariances(circle_gt, rng):
    est = noisy(circle_gt, rng, 0.05)
    base = kitti_rel_errors(est, circle_gt)
    G = random_pose(rng, trans=100.0)
    moved = kitti_rel_errors(est.transformed(G), circle_gt.transformed(G))
    assert moved.t_rel == pytest.approx(base.t_rel, rel=1e-9)
    assert moved.r_rel == pytest.approx(base.r_rel, rel=1e-9)
    # stationary tail frames add no segments
    tail_est = Trajectory(tuple(est) + (est[len(est) - 1],) * 20)
    tail_gt = Trajectory(tuple(circle_gt) + (circle_gt[len(circle_gt) - 1],) * 20)
    extended = kitti_rel_errors(tail_est, tail_gt)
    assert extended.segments == base.segments
    assert extended.t_rel == pytest.approx(base.t_rel, rel=1e-12)


def test_short_trajectory_flagged():
    gt = generate_ground_truth(SimConfig(path="straight", length=50.0))
    r = kitti_rel_errors(gt, gt)
    assert not r.valid and r.per_length == {}


def test_length_mismatch():
    gt = generate_ground_truth(SimConfig(path="straight", length=50.0))
    with pytest.raises(EvalError):
        kitti_rel_errors(gt, Trajectory(tuple(gt)[:-1]))


def test_report_outputs(circle_gt, rng):
    rep = evaluate(noisy(circle_gt, rng, 0.05), circle_gt)
    assert rep.t_rel > 0 and rep.r_rel > 0 and rep.rmse > 0
    csv = rep.to_csv().splitlines()
    assert csv[0] == "metric,length_m,value"
    assert float(csv[1].split(",")[2]) == rep.t_rel
    assert len(csv) == 4 + 2 * len(rep.per_length)
    assert "t_rel" in rep.to_table() and "RMSE" in rep.to_table()
    assert set(rep.per_length) <= set(LENGTHS)
