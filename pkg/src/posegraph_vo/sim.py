"""Deterministic front-end simulator.

Stands in for the learned pose network: ground-truth paths in the KITTI
camera convention (x right, y down, z forward; motion in the x-z plane),
noisy windowed pose graphs, and place-recognition detections derived from
ground-truth proximity.

Edge noise model, for views at window positions ``p < q`` or ``p > q``::

    T_ab = T_a^-1 T_b @ exp(noise) @ exp((q - p) * drift_bias)

with ``noise ~ N(0, diag(noise_trans^2 I3, noise_rot^2 I3))`` drawn
independently per edge from a generator seeded by ``(seed, *frame_ids)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .lie import (
    EULER_CONVENTION,
    Pose,
    compose,
    euler_edge_from_pose,
    inverse,
    pose_from_euler_edge,
    EulerEdge,
    rotation_angle,
    se3_exp,
)
from .loops import LoopCandidate, LoopDetection, crossed_windows
from .trajectory import FormatError, Trajectory
from .windowed import WindowedPoseGraph, build_window

PATHS = ("circle", "figure_eight", "straight", "waypoints")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    n: int = 3
    path: str = "circle"
    radius: float = 50.0
    length: float = 0.0  # total path length in meters; 0 = one lap / figure
    waypoints: tuple[tuple[float, float], ...] = ()  # (x, z) pairs
    step: float = 1.0
    noise_rot: float = 0.0
    noise_trans: float = 0.0
    drift_bias: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)  # [rho, phi] per frame
    loop_radius: float = 7.0
    min_loop_separation: int = 50
    verify_max_angle: float = math.pi / 4

    def __post_init__(self):
        object.__setattr__(self, "drift_bias", tuple(float(v) for v in self.drift_bias))
        object.__setattr__(
            self, "waypoints", tuple(tuple(float(c) for c in w) for w in self.waypoints)
        )
        if self.path not in PATHS:
            raise ConfigError(f"path: expected one of {PATHS}, got {self.path!r}")
        if self.n < 2:
            raise ConfigError(f"n: window size must be >= 2, got {self.n}")
        if self.noise_rot < 0 or self.noise_trans < 0:
            raise ConfigError("noise_rot/noise_trans: standard deviations must be >= 0")
        if not self.step > 0:
            raise ConfigError(f"step: must be positive, got {self.step}")
        if len(self.drift_bias) != 6:
            raise ConfigError("drift_bias: expected 6 components (rho, phi)")
        if self.path in ("circle", "figure_eight") and not self.radius > 0:
            raise ConfigError("radius: must be positive")
        if self.path == "straight" and not self.length > 0:
            raise ConfigError("length: straight path needs a positive length")
        if self.path == "waypoints" and len(self.waypoints) < 2:
            raise ConfigError("waypoints: need at least 2 (x, z) points")
        if self.loop_radius <= 0 or self.min_loop_separation < 0:
            raise ConfigError("loop_radius must be positive, min_loop_separation >= 0")

    def total_length(self) -> float:
        if self.length > 0:
            return self.length
        if self.path == "circle":
            return 2 * math.pi * self.radius
        if self.path == "figure_eight":
            return 4 * math.pi * self.radius
        pts = np.array(self.waypoints)
        return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def _yaw_pose(x: float, z: float, heading: float) -> Pose:
    c, s = math.cos(heading), math.sin(heading)
    R = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return Pose(R, np.array([x, 0.0, z]))


def _sample(cfg: SimConfig, s: float) -> tuple[float, float, float]:
    """(x, z, heading) at arc length ``s``; heading 0 faces +z."""
    r = cfg.radius
    if cfg.path == "circle":
        u = s / r
        return r - r * math.cos(u), r * math.sin(u), u
    if cfg.path == "figure_eight":
        lap = 2 * math.pi * r
        k, rem = divmod(s, lap)
        u = rem / r
        if int(k) % 2 == 0:
            return r - r * math.cos(u), r * math.sin(u), u
        return -r + r * math.cos(u), r * math.sin(u), -u
    if cfg.path == "straight":
        return 0.0, s, 0.0
    pts = np.array(cfg.waypoints)
    seg = np.diff(pts, axis=0)
    seglen = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seglen)])
    k = int(min(np.searchsorted(cum, s, side="right") - 1, len(seg) - 1))
    while seglen[k] == 0.0 and k > 0:
        k -= 1
    d = seg[k] / seglen[k]
    p = pts[k] + d * (s - cum[k])
    return float(p[0]), float(p[1]), math.atan2(d[0], d[1])


def generate_ground_truth(cfg: SimConfig) -> Trajectory:
    total = cfg.total_length()
    if not total > 0:
        raise ConfigError("degenerate path: zero length")
    frames = int(math.floor(total / cfg.step + 1e-9)) + 1
    return Trajectory([_yaw_pose(*_sample(cfg, k * cfg.step)) for k in range(frames)])


def _edge_noise(cfg: SimConfig, rng: np.random.Generator) -> Pose:
    xi = np.concatenate([rng.normal(size=3) * cfg.noise_trans, rng.normal(size=3) * cfg.noise_rot])
    return se3_exp(xi)


def emit_window(gt: Trajectory, frame_ids: Sequence[int], cfg: SimConfig) -> WindowedPoseGraph:
    """One simulated front-end output over arbitrary frames."""
    frame_ids = [int(f) for f in frame_ids]
    rng = np.random.default_rng([cfg.seed, *frame_ids])
    bias = np.array(cfg.drift_bias)
    has_bias = bool(np.any(bias))
    n = len(frame_ids)
    edges = {}
    for a, b in itertools.permutations(range(1, n + 1), 2):
        fa, fb = frame_ids[a - 1], frame_ids[b - 1]
        T = compose(inverse(gt[fa]), gt[fb])
        noise = _edge_noise(cfg, rng)
        if cfg.noise_rot > 0 or cfg.noise_trans > 0:
            T = compose(T, noise)
        if has_bias:
            T = compose(T, se3_exp((b - a) * bias))
        edges[(a, b)] = T
    return build_window(frame_ids, edges)


def emit_windows(gt: Trajectory, cfg: SimConfig) -> Iterator[WindowedPoseGraph]:
    """Sliding windows over frames ``k-n+1..k`` for ``k = n-1, ..., len-1``."""
    if len(gt) < cfg.n:
        raise ConfigError(f"trajectory has {len(gt)} frames, window needs {cfg.n}")
    for k in range(cfg.n - 1, len(gt)):
        yield emit_window(gt, range(k - cfg.n + 1, k + 1), cfg)


def oracle_detections(gt: Trajectory, cfg: SimConfig) -> list[LoopDetection]:
    """Nearest earlier frame within ``loop_radius`` for each query frame.

    Only frames more than ``min_loop_separation`` indices back qualify.
    Score is ``1 - distance / loop_radius``.
    """
    P = gt.positions()
    out = []
    for q in range(len(P)):
        last = q - cfg.min_loop_separation - 1
        if last < 0:
            continue
        d = np.linalg.norm(P[: last + 1] - P[q], axis=1)
        m = int(np.argmin(d))
        if d[m] < cfg.loop_radius:
            out.append(LoopDetection(q, m, 1.0 - float(d[m]) / cfg.loop_radius))
    return out


def oracle_verifier(gt: Trajectory, cfg: SimConfig):
    """Accept a candidate iff the true poses are within ``loop_radius`` and
    ``verify_max_angle`` of each other."""

    def verify(c: LoopCandidate) -> bool:
        if not (0 <= c.i < len(gt) and 0 <= c.j < len(gt)):
            return False
        rel = compose(inverse(gt[c.i]), gt[c.j])
        return bool(np.linalg.norm(rel.t) < cfg.loop_radius and rotation_angle(rel.R) < cfg.verify_max_angle)

    return verify


def loop_windows(gt: Trajectory, detections: Sequence[LoopDetection], cfg: SimConfig):
    """Crossed windows for every detection that has enough history."""
    out: dict[tuple[int, ...], WindowedPoseGraph] = {}
    for d in detections:
        if d.match_frame < cfg.n - 1:
            continue
        for frames in crossed_windows(d.match_frame, d.query_frame, cfg.n):
            key = tuple(frames)
            if key not in out:
                out[key] = emit_window(gt, frames, cfg)
    return list(out.values())


# ---------------------------------------------------------------------------
# window edge file
# ---------------------------------------------------------------------------

HEADER = "# windowed-pose-graph n={n} euler={conv} fields=frame_i,frame_j,roll,pitch,yaw,tx,ty,tz"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_window_file(
    path: str | Path,
    n: int,
    local: Sequence[WindowedPoseGraph],
    loop: Sequence[WindowedPoseGraph] = (),
) -> None:
    lines = [HEADER.format(n=n, conv=EULER_CONVENTION)]
    for kind, ws in (("local", local), ("loop", loop)):
        for w in ws:
            lines.append(f"WINDOW {kind} " + " ".join(str(f) for f in w.frame_ids))
            for (a, b), T in sorted(w.edges.items()):
                e = euler_edge_from_pose(T)
                vals = " ".join(_fmt(v) for v in e.euler + e.translation)
                lines.append(f"{w.frame_ids[a - 1]} {w.frame_ids[b - 1]} {vals}")
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class WindowFile:
    n: int
    local: list[WindowedPoseGraph] = field(default_factory=list)
    loop: dict[tuple[int, ...], WindowedPoseGraph] = field(default_factory=dict)


def load_window_file(path: str | Path) -> WindowFile:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("# windowed-pose-graph"):
        raise FormatError(f"{path}:1: missing windowed-pose-graph header")
    meta = dict(tok.split("=", 1) for tok in text[0].split()[2:] if "=" in tok)
    if meta.get("euler") != EULER_CONVENTION:
        raise FormatError(f"{path}:1: unsupported Euler convention {meta.get('euler')!r}")
    try:
        n = int(meta["n"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}:1: bad window size") from exc
    out = WindowFile(n)

    def flush(kind, frames, records, lineno):
        if kind is None:
            return
        index = {f: v for v, f in enumerate(frames, start=1)}
        try:
            edges = [((index[a], index[b]), T) for a, b, T in records]
            w = build_window(frames, edges)
        except (KeyError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: bad window {frames}: {exc}") from exc
        if w.n != n:
            raise FormatError(f"{path}:{lineno}: window {frames} has {w.n} views, header says {n}")
        if kind == "local":
            out.local.append(w)
        else:
            out.loop[tuple(frames)] = w

    kind, frames, records, start = None, [], [], 0
    for lineno, raw in enumerate(text[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        if tok[0] == "WINDOW":
            flush(kind, frames, records, start)
            if len(tok) < 3 or tok[1] not in ("local", "loop"):
                raise FormatError(f"{path}:{lineno}: malformed WINDOW line")
            try:
                kind, frames, records, start = tok[1], [int(t) for t in tok[2:]], [], lineno
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            continue
        if kind is None:
            raise FormatError(f"{path}:{lineno}: edge record before any WINDOW line")
        if len(tok) != 8:
            raise FormatError(f"{path}:{lineno}: expected 8 fields, got {len(tok)}")
        try:
            a, b = int(tok[0]), int(tok[1])
            vals = [float(v) for v in tok[2:]]
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
        if not all(math.isfinite(v) for v in vals):
            raise FormatError(f"{path}:{lineno}: non-finite value")
        records.append((a, b, pose_from_euler_edge(EulerEdge(vals[:3], vals[3:]))))
    flush(kind, frames, records, start)
    return out
