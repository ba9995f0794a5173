"""Trajectories and the KITTI odometry pose format (12 floats per line)."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .lie import Pose, orthonormalize

log = logging.getLogger(__name__)

# rotations off SO(3) by more than this are projected back on load
REPROJECT_TOL = 1e-10
WARN_TOL = 1e-6


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    """Camera-to-world poses for frames ``0..len-1``."""

    poses: tuple[Pose, ...]

    def __init__(self, poses: Sequence[Pose]):
        object.__setattr__(self, "poses", tuple(poses))

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self) -> Iterator[Pose]:
        return iter(self.poses)

    def __getitem__(self, k):
        return self.poses[k]

    def positions(self) -> np.ndarray:
        return np.array([p.t for p in self.poses]).reshape(-1, 3)

    def matrices(self) -> np.ndarray:
        return np.array([p.matrix() for p in self.poses]).reshape(-1, 4, 4)

    def transformed(self, G: Pose) -> Trajectory:
        """Every pose left-multiplied by ``G``."""
        return Trajectory([G @ p for p in self.poses])

    def path_length(self) -> float:
        P = self.positions()
        return float(np.linalg.norm(np.diff(P, axis=0), axis=1).sum()) if len(P) > 1 else 0.0


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def format_kitti_line(p: Pose) -> str:
    return " ".join(_fmt(v) for v in p.matrix()[:3].ravel())


def save_kitti_poses(traj: Trajectory | Sequence[Pose], path: str | Path) -> None:
    Path(path).write_text("".join(format_kitti_line(p) + "\n" for p in traj))


def load_kitti_poses(path: str | Path) -> Trajectory:
    """Parse a KITTI pose file.

    Rotations are projected back onto SO(3) when they deviate by more than
    ``1e-10`` (with a warning above ``1e-6``); cleanly serialized files load
    untouched so that save/load round trips are exact.
    """
    poses = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) != 12:
            raise FormatError(f"{path}:{lineno}: expected 12 fields, got {len(tok)}")
        try:
            vals = np.array([float(v) for v in tok])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
        if not np.all(np.isfinite(vals)):
            raise FormatError(f"{path}:{lineno}: non-finite value")
        M = vals.reshape(3, 4)
        R = M[:, :3]
        dev = float(np.abs(R @ R.T - np.eye(3)).max())
        if dev > REPROJECT_TOL or abs(np.linalg.det(R) - 1.0) > REPROJECT_TOL:
            if dev > WARN_TOL:
                log.warning("%s:%d: rotation off SO(3) by %.3g, re-orthonormalized", path, lineno, dev)
            R = orthonormalize(R)
        poses.append(Pose(R, M[:, 3]))
    return Trajectory(poses)
