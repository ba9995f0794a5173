"""Trajectory alignment and KITTI-style error metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lie import Pose
from .trajectory import Trajectory

LENGTHS = (100, 200, 300, 400, 500, 600, 700, 800)


class EvalError(ValueError):
    pass


class DegenerateAlignment(EvalError):
    pass


def align_se3(est: Trajectory, gt: Trajectory, allow_degenerate: bool = False) -> Pose:
    """Rigid ``G`` minimizing ``sum |G p_est - p_gt|^2`` (no scale).

    Raises :class:`DegenerateAlignment` when the estimated positions are
    collinear, unless ``allow_degenerate`` is set; the returned ``G`` is then
    one of the equally good minimizers.
    """
    if len(est) != len(gt):
        raise EvalError(f"length mismatch: {len(est)} estimated vs {len(gt)} ground-truth poses")
    if len(est) == 0:
        raise EvalError("empty trajectories")
    X, Y = est.positions(), gt.positions()
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - mx, Y - my
    sv = np.linalg.svd(Xc, compute_uv=False) if len(X) > 1 else np.zeros(1)
    if not allow_degenerate and (len(sv) < 2 or sv[1] <= 1e-9 * max(sv[0], 1.0)):
        raise DegenerateAlignment("estimated positions are collinear; rotation is not determined")
    C = Yc.T @ Xc
    U, _, Vt = np.linalg.svd(C)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    R = U @ D @ Vt
    return Pose(R, my - R @ mx)


def rmse(est: Trajectory, gt: Trajectory, align: bool = True, allow_degenerate: bool = False) -> float:
    """Root mean squared position error, after optimal rigid alignment if ``align``."""
    if len(est) != len(gt):
        raise EvalError(f"length mismatch: {len(est)} vs {len(gt)}")
    X = est.positions()
    if align:
        G = align_se3(est, gt, allow_degenerate=allow_degenerate)
        X = X @ G.R.T + G.t
    d = X - gt.positions()
    return float(np.sqrt(np.mean(np.einsum("ij,ij->i", d, d))))


def _rotation_error(E: np.ndarray) -> np.ndarray:
    R = E[..., :3, :3]
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    w = np.stack([R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]], -1)
    # atan2 keeps small angles accurate where arccos loses half the digits
    return np.arctan2(0.5 * np.linalg.norm(w, axis=-1), np.clip(c, -1.0, 1.0))


@dataclass
class RelErrors:
    t_rel: float  # percent
    r_rel: float  # degrees per 100 m
    per_length: dict[int, tuple[float, float]]  # length -> (t %, r deg/100m)
    segments: int
    valid: bool


def kitti_rel_errors(
    est: Trajectory, gt: Trajectory, lengths=LENGTHS, stride: int = 1
) -> RelErrors:
    """Average relative errors over sub-trajectories of fixed ground-truth length.

    For every start frame (every ``stride``-th) and length ``L`` the end
    frame is the first whose accumulated ground-truth distance from the
    start is ``>= L``.  Translation error is ``|t(E)| / L`` in percent and
    rotation error the angle of ``E`` per 100 m in degrees, where
    ``E = (est_s^-1 est_e)^-1 (gt_s^-1 gt_e)``.
    """
    if len(est) != len(gt):
        raise EvalError(f"length mismatch: {len(est)} vs {len(gt)}")
    P = gt.positions()
    dist = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(P, axis=0), axis=1))])
    Mg, Me = gt.matrices(), est.matrices()
    Mg_inv, Me_inv = np.linalg.inv(Mg), np.linalg.inv(Me)
    starts = np.arange(0, len(gt), stride)

    per_length: dict[int, tuple[float, float]] = {}
    t_all, r_all = [], []
    for L in lengths:
        ends = np.searchsorted(dist, dist[starts] + L, side="left")
        ok = ends < len(gt)
        s, e = starts[ok], ends[ok]
        if s.size == 0:
            continue
        dg = Mg_inv[s] @ Mg[e]
        de = Me_inv[s] @ Me[e]
        E = np.linalg.inv(de) @ dg
        t_err = np.linalg.norm(E[:, :3, 3], axis=1) / L
        r_err = _rotation_error(E) / L
        t_all.append(t_err)
        r_all.append(r_err)
        per_length[L] = (100.0 * float(t_err.mean()), 100.0 * math.degrees(float(r_err.mean())))
    if not t_all:
        return RelErrors(0.0, 0.0, {}, 0, False)
    t_cat, r_cat = np.concatenate(t_all), np.concatenate(r_all)
    return RelErrors(
        100.0 * float(t_cat.mean()),
        100.0 * math.degrees(float(r_cat.mean())),
        per_length,
        int(t_cat.size),
        True,
    )


@dataclass
class EvalReport:
    t_rel: float
    r_rel: float
    rmse: float
    per_length: dict[int, tuple[float, float]] = field(default_factory=dict)
    alignment: Pose = field(default_factory=Pose.identity)
    segments_valid: bool = True
    alignment_degenerate: bool = False

    def to_csv(self) -> str:
        rows = ["metric,length_m,value"]
        rows.append(f"t_rel_percent,all,{self.t_rel:.17g}")
        rows.append(f"r_rel_deg_per_100m,all,{self.r_rel:.17g}")
        rows.append(f"rmse_m,all,{self.rmse:.17g}")
        for L in sorted(self.per_length):
            t, r = self.per_length[L]
            rows.append(f"t_rel_percent,{L},{t:.17g}")
            rows.append(f"r_rel_deg_per_100m,{L},{r:.17g}")
        return "\n".join(rows) + "\n"

    def to_table(self) -> str:
        out = [
            f"t_rel  {self.t_rel:10.4f} %",
            f"r_rel  {self.r_rel:10.4f} deg/100m",
            f"RMSE   {self.rmse:10.4f} m",
        ]
        if not self.segments_valid:
            out.append("(trajectory shorter than 100 m: no relative-error segments)")
        if self.alignment_degenerate:
            out.append("(positions collinear: alignment rotation not unique)")
        if self.per_length:
            out.append("")
            out.append(f"{'length':>8} {'t_err %':>10} {'r_err deg/100m':>15}")
            for L in sorted(self.per_length):
                t, r = self.per_length[L]
                out.append(f"{L:>8} {t:>10.4f} {r:>15.4f}")
        return "\n".join(out) + "\n"


def evaluate(est: Trajectory, gt: Trajectory, stride: int = 1) -> EvalReport:
    rel = kitti_rel_errors(est, gt, stride=stride)
    degenerate = False
    try:
        G = align_se3(est, gt)
    except DegenerateAlignment:
        degenerate = True
        G = align_se3(est, gt, allow_degenerate=True)
    X = est.positions() @ G.R.T + G.t
    d = X - gt.positions()
    err = float(np.sqrt(np.mean(np.einsum("ij,ij->i", d, d))))
    return EvalReport(rel.t_rel, rel.r_rel, err, rel.per_length, G, rel.valid, degenerate)
