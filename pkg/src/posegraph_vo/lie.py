"""SE(3)/SO(3) arithmetic on numpy arrays.

Twists are 6-vectors ordered ``[rho, phi]``: translational part first, then
the rotation vector.  The ``*_batch`` functions work on stacks of shape
``(m, 3)`` / ``(m, 3, 3)`` and back the scalar API; the optimizer uses them
directly.

Euler edges use the intrinsic Z-Y-X convention: ``euler = (roll, pitch, yaw)``
and ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

EULER_CONVENTION = "ZYX-intrinsic"

# log/exp switch to Taylor series below this angle
SMALL_ANGLE = 1e-6
# so3_log extracts the axis from the symmetric part this close to pi
NEAR_PI = 1e-4
# Q-matrix coefficients switch to series below this angle
SERIES_ANGLE = 1e-2
ORTHO_TOL = 1e-9
GIMBAL_TOL = 1e-6
RENORMALIZE_EVERY = 64


class LieError(ValueError):
    """Input is not a valid group element."""


class GimbalLockError(LieError):
    """Euler extraction too close to pitch = +-pi/2."""


def skew(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def skew_batch(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee(S) -> np.ndarray:
    return np.array([S[2, 1], S[0, 2], S[1, 0]], dtype=float)


def _vee_batch(S: np.ndarray) -> np.ndarray:
    return np.stack([S[..., 2, 1], S[..., 0, 2], S[..., 1, 0]], axis=-1)


# ---------------------------------------------------------------------------
# batch kernels
# ---------------------------------------------------------------------------


def so3_exp_batch(phi: np.ndarray) -> np.ndarray:
    """Rodrigues formula over a stack of rotation vectors ``(m, 3)``."""
    phi = np.asarray(phi, dtype=float)
    theta2 = np.einsum("...i,...i->...", phi, phi)
    theta = np.sqrt(theta2)
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    K = skew_batch(phi)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + a[..., None, None] * K + b[..., None, None] * (K @ K)


def check_rotation_batch(R: np.ndarray, tol: float = ORTHO_TOL) -> None:
    RRt = R @ np.swapaxes(R, -1, -2)
    dev = np.abs(RRt - np.eye(3)).max(axis=(-1, -2))
    det = np.linalg.det(R)
    if np.any(dev > tol) or np.any(np.abs(det - 1.0) > tol):
        worst = float(np.max(dev))
        raise LieError(f"not a rotation: |R R^T - I| = {worst:.3e}, det = {np.min(det):.12f}")


def so3_log_batch(R: np.ndarray, check: bool = True) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if check:
        check_rotation_batch(R)
    w = _vee_batch(R - np.swapaxes(R, -1, -2))  # 2 sin(theta) * axis
    s = 0.5 * np.linalg.norm(w, axis=-1)
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(s, np.clip(c, -1.0, 1.0))

    small = theta < SMALL_ANGLE
    near_pi = (np.pi - theta) < NEAR_PI
    regular = ~(small | near_pi)

    out = np.empty(R.shape[:-2] + (3,))
    if np.any(small):
        # theta/sin(theta) ~ 1 + theta^2/6
        out[small] = 0.5 * w[small] * (1.0 + theta[small, None] ** 2 / 6.0)
    if np.any(regular):
        th = theta[regular]
        out[regular] = w[regular] * (th / (2.0 * np.sin(th)))[:, None]
    if np.any(near_pi):
        for idx in zip(*np.nonzero(near_pi)):
            out[idx] = _log_near_pi(R[idx], theta[idx], w[idx])
    return out


def _log_near_pi(R: np.ndarray, theta: float, w: np.ndarray) -> np.ndarray:
    # symmetric part: cos(t) I + (1 - cos(t)) a a^T
    c = math.cos(theta)
    B = (0.5 * (R + R.T) - c * np.eye(3)) / (1.0 - c)
    k = int(np.argmax(np.diag(B)))
    axis = B[:, k] / math.sqrt(max(B[k, k], 0.0))
    axis /= np.linalg.norm(axis)
    if float(axis @ w) < 0.0:
        axis = -axis
    elif float(axis @ w) == 0.0:
        # exactly pi: first nonzero component positive
        nz = axis[np.abs(axis) > 1e-15]
        if nz.size and nz[0] < 0.0:
            axis = -axis
    return theta * axis


def _series_coeffs(theta: np.ndarray):
    """(a, b) with Jl = I + a K + b K^2 for K = skew(phi)."""
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(t)) / (t * t))
    b = np.where(small, 1.0 / 6.0 - t2 / 120.0, (t - np.sin(t)) / (t**3))
    return a, b


def so3_left_jacobian_batch(phi: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(phi, axis=-1)
    a, b = _series_coeffs(theta)
    K = skew_batch(phi)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + a[..., None, None] * K + b[..., None, None] * (K @ K)


def so3_left_jacobian_inv_batch(phi: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(phi, axis=-1)
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    half = 0.5 * t
    # (1 - (t/2) cot(t/2)) / t^2, finite at t = pi
    coef = np.where(
        small,
        1.0 / 12.0 + theta**2 / 720.0,
        (1.0 - half * np.cos(half) / np.sin(half)) / (t * t),
    )
    K = skew_batch(phi)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye - 0.5 * K + coef[..., None, None] * (K @ K)


def se3_exp_batch(xi: np.ndarray):
    xi = np.asarray(xi, dtype=float)
    rho, phi = xi[..., :3], xi[..., 3:]
    R = so3_exp_batch(phi)
    t = np.einsum("...ij,...j->...i", so3_left_jacobian_batch(phi), rho)
    return R, t


def se3_log_batch(R: np.ndarray, t: np.ndarray, check: bool = True) -> np.ndarray:
    phi = so3_log_batch(R, check=check)
    rho = np.einsum("...ij,...j->...i", so3_left_jacobian_inv_batch(phi), t)
    return np.concatenate([rho, phi], axis=-1)


def _q_matrix_batch(rho: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Off-diagonal block of the SE(3) left Jacobian."""
    theta = np.linalg.norm(phi, axis=-1)
    small = theta < SERIES_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    s, c = np.sin(t), np.cos(t)
    c1 = np.where(small, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0, (t - s) / t**3)
    c2 = np.where(
        small,
        1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0,
        (t * t + 2.0 * c - 2.0) / (2.0 * t**4),
    )
    c3 = np.where(
        small,
        1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0,
        (2.0 * t - 3.0 * s + t * c) / (2.0 * t**5),
    )
    P = skew_batch(phi)
    Rh = skew_batch(rho)
    PR = P @ Rh
    RP = Rh @ P
    PRP = PR @ P
    return (
        0.5 * Rh
        + c1[..., None, None] * (PR + RP + PRP)
        + c2[..., None, None] * (P @ PR + RP @ P - 3.0 * PRP)
        + c3[..., None, None] * (PRP @ P + P @ PRP)
    )


def se3_left_jacobian_batch(xi: np.ndarray) -> np.ndarray:
    rho, phi = xi[..., :3], xi[..., 3:]
    J = so3_left_jacobian_batch(phi)
    out = np.zeros(xi.shape[:-1] + (6, 6))
    out[..., :3, :3] = J
    out[..., 3:, 3:] = J
    out[..., :3, 3:] = _q_matrix_batch(rho, phi)
    return out


def se3_left_jacobian_inv_batch(xi: np.ndarray) -> np.ndarray:
    rho, phi = xi[..., :3], xi[..., 3:]
    Jinv = so3_left_jacobian_inv_batch(phi)
    Q = _q_matrix_batch(rho, phi)
    out = np.zeros(xi.shape[:-1] + (6, 6))
    out[..., :3, :3] = Jinv
    out[..., 3:, 3:] = Jinv
    out[..., :3, 3:] = -Jinv @ Q @ Jinv
    return out


def se3_right_jacobian_inv_batch(xi: np.ndarray) -> np.ndarray:
    return se3_left_jacobian_inv_batch(-np.asarray(xi, dtype=float))


def se3_right_jacobian_inv_approx_batch(xi: np.ndarray) -> np.ndarray:
    """First-order ``I + ad(xi)/2``; adequate once errors are small."""
    return np.eye(6) + 0.5 * se3_ad_batch(xi)


def se3_ad_batch(xi: np.ndarray) -> np.ndarray:
    rho, phi = xi[..., :3], xi[..., 3:]
    out = np.zeros(xi.shape[:-1] + (6, 6))
    P = skew_batch(phi)
    out[..., :3, :3] = P
    out[..., 3:, 3:] = P
    out[..., :3, 3:] = skew_batch(rho)
    return out


def se3_adjoint_batch(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.zeros(R.shape[:-2] + (6, 6))
    out[..., :3, :3] = R
    out[..., 3:, 3:] = R
    out[..., :3, 3:] = skew_batch(t) @ R
    return out


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(R)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``x -> R x + t``.

    ``ops`` counts compositions since the rotation was last projected back
    onto SO(3); it is bookkeeping only and ignored by comparisons.
    """

    R: np.ndarray
    t: np.ndarray
    ops: int = field(default=0, compare=False, repr=False)
    quat: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        R = _frozen(self.R)
        t = _frozen(self.t).reshape(3)
        if R.shape != (3, 3):
            raise LieError(f"rotation must be 3x3, got {R.shape}")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T, check: bool = True) -> Pose:
        T = np.asarray(T, dtype=float)
        if T.shape == (4, 4):
            if check and not np.array_equal(T[3], [0.0, 0.0, 0.0, 1.0]):
                raise LieError("bottom row of a homogeneous pose must be (0, 0, 0, 1)")
        elif T.shape != (3, 4):
            raise LieError(f"expected 3x4 or 4x4 matrix, got {T.shape}")
        if check:
            check_rotation_batch(T[:3, :3])
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_quaternion(cls, q, t) -> Pose:
        """``q = (qx, qy, qz, qw)``; normalized before use."""
        q = np.asarray(q, dtype=float)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0.0:
            raise LieError("degenerate quaternion")
        x, y, z, w = q / n
        R = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
            ]
        )
        return cls(R, t, quat=_frozen(q))

    def quaternion(self) -> np.ndarray:
        """``(qx, qy, qz, qw)`` with ``qw >= 0``; echoes the source quaternion if any."""
        if self.quat is not None:
            return np.array(self.quat)
        return rotation_to_quaternion(self.R)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def inverse(self) -> Pose:
        Rt = self.R.T
        return Pose(Rt, -Rt @ self.t, ops=self.ops)

    def __matmul__(self, other: Pose) -> Pose:
        if not isinstance(other, Pose):
            return NotImplemented
        return compose(self, other)

    def renormalized(self) -> Pose:
        return Pose(orthonormalize(self.R), self.t)

    def allclose(self, other: Pose, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.R, other.R, rtol=0.0, atol=atol)
            and np.allclose(self.t, other.t, rtol=0.0, atol=atol)
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.R, other.R) and np.array_equal(self.t, other.t)

    __hash__ = None


def rotation_to_quaternion(R) -> np.ndarray:
    """Shepperd's method; returns ``(qx, qy, qz, qw)`` with ``qw >= 0``."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    diag = np.diag(R)
    k = int(np.argmax(np.append(diag, tr)))
    if k == 3:
        w = 0.5 * math.sqrt(1.0 + tr)
        q = np.array([(R[2, 1] - R[1, 2]), (R[0, 2] - R[2, 0]), (R[1, 0] - R[0, 1]), 0.0]) / (4 * w)
        q[3] = w
    else:
        i, j, l = k, (k + 1) % 3, (k + 2) % 3
        v = 0.5 * math.sqrt(max(1.0 + R[i, i] - R[j, j] - R[l, l], 0.0))
        q = np.empty(4)
        q[i] = v
        q[j] = (R[j, i] + R[i, j]) / (4 * v)
        q[l] = (R[l, i] + R[i, l]) / (4 * v)
        q[3] = (R[l, j] - R[j, l]) / (4 * v)
    if q[3] < 0:
        q = -q
    return q


def compose(A: Pose, B: Pose) -> Pose:
    R = A.R @ B.R
    ops = max(A.ops, B.ops) + 1
    if ops > RENORMALIZE_EVERY:
        return Pose(orthonormalize(R), A.R @ B.t + A.t)
    return Pose(R, A.R @ B.t + A.t, ops=ops)


def inverse(T: Pose) -> Pose:
    return T.inverse()


def so3_exp(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float).reshape(3)
    return so3_exp_batch(phi[None])[0]


def so3_log(R) -> np.ndarray:
    """Rotation vector with norm in ``[0, pi]``.

    Raises :class:`LieError` for matrices that are not orthonormal within
    ``1e-9``.  At exactly pi the axis sign is chosen so that its first
    nonzero component is positive.
    """
    R = np.asarray(R, dtype=float)
    return so3_log_batch(R[None])[0]


def se3_exp(xi) -> Pose:
    xi = np.asarray(xi, dtype=float).reshape(6)
    R, t = se3_exp_batch(xi[None])
    return Pose(R[0], t[0])


def se3_log(T: Pose) -> np.ndarray:
    return se3_log_batch(T.R[None], T.t[None])[0]


def adjoint(T: Pose) -> np.ndarray:
    return se3_adjoint_batch(T.R[None], T.t[None])[0]


def rotation_angle(R) -> float:
    c = 0.5 * (np.trace(R) - 1.0)
    s = 0.5 * np.linalg.norm(vee(np.asarray(R) - np.asarray(R).T))
    return math.atan2(s, min(max(c, -1.0), 1.0))


# ---------------------------------------------------------------------------
# Euler edges
# ---------------------------------------------------------------------------


def _wrap(a: float) -> float:
    """Map to (-pi, pi]."""
    a = math.remainder(a, 2.0 * math.pi)
    return math.pi if a == -math.pi else a


@dataclass(frozen=True)
class EulerEdge:
    euler: tuple[float, float, float]  # (roll, pitch, yaw), radians
    translation: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "euler", tuple(float(a) for a in self.euler))
        object.__setattr__(self, "translation", tuple(float(a) for a in self.translation))
        if len(self.euler) != 3 or len(self.translation) != 3:
            raise ValueError("EulerEdge needs 3 angles and 3 translation components")


def euler_to_rotation(roll: float, pitch: float, yaw: float) -> np.ndarray:
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    Rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    Ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return Rz @ Ry @ Rx


def rotation_to_euler(R) -> tuple[float, float, float]:
    R = np.asarray(R, dtype=float)
    pitch = math.asin(min(max(-R[2, 0], -1.0), 1.0))
    if abs(abs(pitch) - math.pi / 2) < GIMBAL_TOL:
        raise GimbalLockError(f"pitch {pitch:.9f} within {GIMBAL_TOL} of +-pi/2")
    # atan2 form is better conditioned than asin away from the poles
    pitch = math.atan2(-R[2, 0], math.hypot(R[0, 0], R[1, 0]))
    roll = math.atan2(R[2, 1], R[2, 2])
    yaw = math.atan2(R[1, 0], R[0, 0])
    return _wrap(roll), _wrap(pitch), _wrap(yaw)


def pose_from_euler_edge(e: EulerEdge) -> Pose:
    return Pose(euler_to_rotation(*e.euler), np.array(e.translation))


def euler_edge_from_pose(T: Pose) -> EulerEdge:
    return EulerEdge(rotation_to_euler(T.R), tuple(T.t.tolist()))


# ---------------------------------------------------------------------------
# pixel reprojection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


class Projection(NamedTuple):
    pixel: np.ndarray  # (u, v); NaN when invalid
    depth: float  # z of the transformed point
    valid: bool


def project_pixel(p_i, depth: float, T_ij: Pose, K: CameraIntrinsics) -> Projection:
    """Warp a pixel of view i into view j: ``p_j ~ K T_ij (depth * K^-1 p_i)``.

    ``p_i`` may be ``(u, v)`` or homogeneous ``(u, v, w)``.  ``T_ij`` is
    applied to the back-projected point as given.  Points landing at
    ``z <= 0`` are reported with ``valid=False``.
    """
    if not depth > 0:
        raise ValueError(f"depth must be positive, got {depth}")
    p = np.asarray(p_i, dtype=float)
    if p.shape == (2,):
        p = np.append(p, 1.0)
    p = p / p[2]
    Kinv = np.linalg.inv(K.matrix())
    X = T_ij.R @ (depth * (Kinv @ p)) + T_ij.t
    z = float(X[2])
    if z <= 0.0:
        return Projection(np.array([np.nan, np.nan]), z, False)
    q = K.matrix() @ X
    return Projection(q[:2] / q[2], z, True)
