"""Levenberg-Marquardt over SE(3) node poses.

Nodes are perturbed on the right, ``T <- T exp(delta)``.  For the edge error
``e = log(E)`` with ``E = T_ij^-1 T_i^-1 T_j``::

    de/d(delta_j) =  Jr^-1(e)
    de/d(delta_i) = -Jr^-1(e) Ad(T_j^-1 T_i)

Damping is Marquardt-style: ``(H + lambda diag(H)) delta = -b``.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .graph import Constraint, GlobalPoseGraph, GraphError, _error_transforms
from .lie import (
    Pose,
    compose,
    inverse,
    orthonormalize,
    se3_adjoint_batch,
    se3_exp,
    se3_exp_batch,
    se3_log_batch,
    se3_right_jacobian_inv_approx_batch,
    se3_right_jacobian_inv_batch,
)

log = logging.getLogger(__name__)

MAX_LAMBDA = 1e16


class NumericalFailure(RuntimeError):
    pass


class TerminationReason(str, enum.Enum):
    CONVERGED_CHI2 = "converged_chi2"
    CONVERGED_STEP = "converged_step"
    MAX_ITERATIONS = "max_iterations"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class LMConfig:
    max_iterations: int = 100
    initial_lambda: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    absolute_chi2_tol: float = 1e-12
    relative_decrease_tol: float = 1e-9
    step_norm_tol: float = 1e-10
    exact_jacobians: bool = True

    def __post_init__(self):
        for name in (
            "max_iterations",
            "initial_lambda",
            "lambda_up",
            "lambda_down",
            "absolute_chi2_tol",
            "relative_decrease_tol",
            "step_norm_tol",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"LMConfig.{name} must be positive")
        if not self.lambda_up > 1.0 or not self.lambda_down > 1.0:
            raise ValueError("lambda_up and lambda_down must exceed 1")


@dataclass
class OptReport:
    iterations: int = 0
    chi2_initial: float = 0.0
    chi2_final: float = 0.0
    trace: list[float] = field(default_factory=list)
    reason: TerminationReason = TerminationReason.MAX_ITERATIONS
    rejected: int = 0

    def to_csv(self) -> str:
        lines = ["iteration,chi2"]
        lines += [f"{k},{c:.17g}" for k, c in enumerate(self.trace)]
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        return (
            f"LM {self.reason.value}: {self.iterations} iterations, "
            f"chi2 {self.chi2_initial:.6g} -> {self.chi2_final:.6g}"
        )


# ---------------------------------------------------------------------------
# Jacobians
# ---------------------------------------------------------------------------


def _batched_jacobians(graph: GlobalPoseGraph, exact: bool = True):
    """Errors ``(m, 6)`` and Jacobian blocks ``(m, 6, 6)`` for every constraint."""
    R, t = _error_transforms(graph)
    e = se3_log_batch(R, t, check=False)
    Jr_inv = se3_right_jacobian_inv_batch(e) if exact else se3_right_jacobian_inv_approx_batch(e)
    cs = graph.constraints
    Ri = np.stack([graph.nodes[c.i].R for c in cs])
    ti = np.stack([graph.nodes[c.i].t for c in cs])
    Rj = np.stack([graph.nodes[c.j].R for c in cs])
    tj = np.stack([graph.nodes[c.j].t for c in cs])
    # T_j^-1 T_i
    RjT = np.swapaxes(Rj, 1, 2)
    Rji = RjT @ Ri
    tji = np.einsum("mij,mj->mi", RjT, ti - tj)
    Ji = -Jr_inv @ se3_adjoint_batch(Rji, tji)
    Jj = Jr_inv
    return e, Ji, Jj


def analytic_jacobians(graph: GlobalPoseGraph, c: Constraint, exact: bool = True):
    """``(de/d delta_i, de/d delta_j)`` for right perturbations of the endpoints."""
    sub = GlobalPoseGraph({c.i: graph.nodes[c.i], c.j: graph.nodes[c.j]}, [c])
    _, Ji, Jj = _batched_jacobians(sub, exact=exact)
    return Ji[0], Jj[0]


def numeric_jacobians(graph: GlobalPoseGraph, c: Constraint, h: float = 1e-6):
    """Central differences of the edge error over each local coordinate."""
    if not h > 0:
        raise ValueError("step h must be positive")
    Ti, Tj = graph.nodes[c.i], graph.nodes[c.j]
    Minv = inverse(c.relative)

    def err(A: Pose, B: Pose) -> np.ndarray:
        E = compose(compose(Minv, inverse(A)), B)
        return se3_log_batch(E.R[None], E.t[None], check=False)[0]

    Ji = np.zeros((6, 6))
    Jj = np.zeros((6, 6))
    for k in range(6):
        d = np.zeros(6)
        d[k] = h
        plus, minus = se3_exp(d), se3_exp(-d)
        Ji[:, k] = (err(compose(Ti, plus), Tj) - err(compose(Ti, minus), Tj)) / (2 * h)
        Jj[:, k] = (err(Ti, compose(Tj, plus)) - err(Ti, compose(Tj, minus))) / (2 * h)
    return Ji, Jj


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def _assemble(graph: GlobalPoseGraph, index: dict[int, int], exact: bool):
    e, Ji, Jj = _batched_jacobians(graph, exact=exact)
    w = np.array([graph.weight(c) for c in graph.constraints])
    vi = np.array([index.get(c.i, -1) for c in graph.constraints])
    vj = np.array([index.get(c.j, -1) for c in graph.constraints])
    nvar = 6 * len(index)

    blocks = {
        "ii": (np.einsum("m,mki,mkj->mij", w, Ji, Ji), vi, vi),
        "ij": (np.einsum("m,mki,mkj->mij", w, Ji, Jj), vi, vj),
        "ji": (np.einsum("m,mki,mkj->mij", w, Jj, Ji), vj, vi),
        "jj": (np.einsum("m,mki,mkj->mij", w, Jj, Jj), vj, vj),
    }
    rows, cols, vals = [], [], []
    ar = np.arange(6)
    for data, a, b in blocks.values():
        keep = (a >= 0) & (b >= 0)
        if not np.any(keep):
            continue
        r = (6 * a[keep])[:, None, None] + ar[None, :, None]
        c = (6 * b[keep])[:, None, None] + ar[None, None, :]
        rows.append(np.broadcast_to(r, data[keep].shape).ravel())
        cols.append(np.broadcast_to(c, data[keep].shape).ravel())
        vals.append(data[keep].ravel())
    if rows:
        H = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(nvar, nvar),
        ).tocsc()
    else:
        H = sp.csc_matrix((nvar, nvar))

    b = np.zeros(nvar)
    gi = np.einsum("m,mki,mk->mi", w, Ji, e)
    gj = np.einsum("m,mki,mk->mi", w, Jj, e)
    for g, v in ((gi, vi), (gj, vj)):
        keep = v >= 0
        idx = (6 * v[keep])[:, None] + ar[None, :]
        np.add.at(b, idx.ravel(), g[keep].ravel())
    chi2 = float(np.sum(w * np.einsum("mi,mi->m", e, e)))
    return H, b, chi2


def solve_normal_equations(H, b: np.ndarray, lam: float) -> np.ndarray:
    """Solve ``(H + lam diag(H)) delta = -b``.

    Uses a sparse LU factorization with a minimum-degree ordering on
    ``A^T + A``; the system is symmetric so this is a fill-reducing
    symmetric elimination.  Raises :class:`NumericalFailure` when the
    factorization breaks down or yields non-finite values.
    """
    H = sp.csc_matrix(H)
    d = H.diagonal()
    A = (H + sp.diags(lam * d)).tocsc()
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A")
        x = lu.solve(-np.asarray(b, dtype=float))
    except RuntimeError as exc:
        raise NumericalFailure(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise NumericalFailure("non-finite step")
    return x


# ---------------------------------------------------------------------------
# LM driver
# ---------------------------------------------------------------------------


def _apply_step(graph: GlobalPoseGraph, index: dict[int, int], delta: np.ndarray) -> dict[int, Pose]:
    ids = list(index)
    dR, dt = se3_exp_batch(delta.reshape(-1, 6))
    out = {}
    for k, node in enumerate(ids):
        T = graph.nodes[node]
        R = orthonormalize(T.R @ dR[k])
        out[node] = Pose(R, T.R @ dt[k] + T.t)
    return out


def optimize(graph: GlobalPoseGraph, cfg: LMConfig | None = None) -> OptReport:
    """Minimize the graph energy in place; fixed nodes are never touched.

    Returns an :class:`OptReport`.  ``reason`` is ``NUMERICAL_FAILURE`` if
    the damped system cannot be solved even at maximum damping; node poses
    then hold the last accepted state.
    """
    cfg = cfg or LMConfig()
    if not graph.fixed:
        raise GraphError("optimization needs at least one fixed node")
    if not graph.is_connected():
        raise GraphError("pose graph is not connected")

    free = [k for k in graph.node_ids if k not in graph.fixed]
    index = {k: v for v, k in enumerate(free)}
    report = OptReport()
    chi2 = graph.total_chi2()
    report.chi2_initial = report.chi2_final = chi2
    report.trace.append(chi2)
    if chi2 <= cfg.absolute_chi2_tol or not free or not graph.constraints:
        report.reason = TerminationReason.CONVERGED_CHI2
        return report

    lam = cfg.initial_lambda
    H, b, _ = _assemble(graph, index, cfg.exact_jacobians)
    while report.iterations < cfg.max_iterations:
        report.iterations += 1
        try:
            delta = solve_normal_equations(H, b, lam)
        except NumericalFailure:
            if lam >= MAX_LAMBDA:
                report.reason = TerminationReason.NUMERICAL_FAILURE
                break
            lam = min(lam * cfg.lambda_up, MAX_LAMBDA)
            report.rejected += 1
            continue

        step_norm = float(np.linalg.norm(delta))
        if step_norm < cfg.step_norm_tol:
            report.reason = TerminationReason.CONVERGED_STEP
            break

        trial = _apply_step(graph, index, delta)
        saved = {k: graph.nodes[k] for k in trial}
        graph.nodes.update(trial)
        new_chi2 = graph.total_chi2()
        if np.isfinite(new_chi2) and new_chi2 < chi2:
            decrease = (chi2 - new_chi2) / chi2
            chi2 = new_chi2
            report.trace.append(chi2)
            lam = max(lam / cfg.lambda_down, 1e-16)
            log.debug("iter %d accepted chi2=%.6g lambda=%.3g", report.iterations, chi2, lam)
            if chi2 <= cfg.absolute_chi2_tol or decrease < cfg.relative_decrease_tol:
                report.reason = TerminationReason.CONVERGED_CHI2
                break
            H, b, _ = _assemble(graph, index, cfg.exact_jacobians)
        else:
            graph.nodes.update(saved)
            report.rejected += 1
            if lam >= MAX_LAMBDA:
                # no descent even with a vanishing step: stationary point
                report.reason = TerminationReason.CONVERGED_STEP
                break
            lam = min(lam * cfg.lambda_up, MAX_LAMBDA)
    report.chi2_final = chi2
    return report
