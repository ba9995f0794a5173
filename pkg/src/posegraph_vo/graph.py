"""Global pose graph: absolute pose nodes tied together by relative constraints.

Edge error for a constraint ``i -> j`` with measurement ``T_ij``::

    e_ij = log(T_ij^-1 T_i^-1 T_j)

and the energy is the (optionally per-kind weighted) sum of ``e^T e``.
"""

from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable

import numpy as np

from .lie import Pose, compose, inverse, se3_log, se3_log_batch

if TYPE_CHECKING:
    from .windowed import WindowedPoseGraph

log = logging.getLogger(__name__)


class GraphError(ValueError):
    pass


class ConstraintKind(str, enum.Enum):
    LOCAL = "local"
    LOOP = "loop"


@dataclass(frozen=True)
class Constraint:
    i: int
    j: int
    relative: Pose
    kind: ConstraintKind = ConstraintKind.LOCAL

    def __post_init__(self):
        if self.i == self.j:
            raise GraphError(f"constraint endpoints must differ, got {self.i} -> {self.j}")
        object.__setattr__(self, "kind", ConstraintKind(self.kind))


@dataclass
class GlobalPoseGraph:
    """Mutable node/constraint store.

    ``nodes`` maps dense frame ids to absolute poses (camera-to-world).  The
    first node ever inserted is fixed; more can be added to ``fixed``.
    ``skip_duplicates`` makes :meth:`append_window` drop ordered pairs that
    an earlier window already constrained; by default every window edge is
    kept as its own measurement, which gives interior nodes degree
    ``4 * (n - 1)`` (12 for three-view windows).
    """

    nodes: dict[int, Pose] = field(default_factory=dict)
    constraints: list[Constraint] = field(default_factory=list)
    fixed: set[int] = field(default_factory=set)
    weights: dict[ConstraintKind, float] = field(
        default_factory=lambda: {ConstraintKind.LOCAL: 1.0, ConstraintKind.LOOP: 1.0}
    )
    skip_duplicates: bool = False

    def copy(self) -> GlobalPoseGraph:
        return GlobalPoseGraph(
            dict(self.nodes),
            list(self.constraints),
            set(self.fixed),
            dict(self.weights),
            self.skip_duplicates,
        )

    @property
    def node_ids(self) -> list[int]:
        return sorted(self.nodes)

    def add_node(self, node_id: int, pose: Pose, fixed: bool = False) -> None:
        if node_id in self.nodes:
            raise GraphError(f"node {node_id} already exists")
        if not self.nodes:
            fixed = True
        self.nodes[node_id] = pose
        if fixed:
            self.fixed.add(node_id)

    def add_constraint(self, c: Constraint) -> None:
        for k in (c.i, c.j):
            if k not in self.nodes:
                raise GraphError(f"constraint {c.i}->{c.j} references missing node {k}")
        self.constraints.append(c)

    def degree(self, node_id: int) -> int:
        return sum((c.i == node_id) + (c.j == node_id) for c in self.constraints)

    def pair_set(self) -> set[tuple[int, int]]:
        return {(c.i, c.j) for c in self.constraints}

    # -- construction ------------------------------------------------------

    def append_window(self, w: WindowedPoseGraph) -> None:
        """Insert a sliding window; only its newest frame may be unseen.

        The first window bootstraps the graph: its first frame becomes the
        fixed origin and the others are chained from it.  Afterwards each new
        frame is placed at ``T_prev @ T_(prev, new)`` using this window's
        edge.
        """
        ids = list(w.frame_ids)
        if any(b != a + 1 for a, b in zip(ids, ids[1:])):
            raise GraphError(f"sliding window frames must be contiguous, got {ids}")
        if not self.nodes:
            self.add_node(ids[0], Pose.identity(), fixed=True)
            for a in range(1, w.n):
                prev = self.nodes[ids[a - 1]]
                self.add_node(ids[a], compose(prev, w.edge(a, a + 1)))
        else:
            newest = max(self.nodes)
            missing = [f for f in ids if f not in self.nodes]
            if missing and (missing != [ids[-1]] or ids[-1] != newest + 1):
                raise GraphError(
                    f"window {ids} must overlap existing nodes except frame {newest + 1}"
                )
            if missing:
                prev = self.nodes[ids[-2]]
                self.add_node(ids[-1], compose(prev, w.edge(w.n - 1, w.n)))

        existing = self.pair_set() if self.skip_duplicates else set()
        for (a, b), T in w.edges.items():
            pair = (ids[a - 1], ids[b - 1])
            if pair in existing:
                continue
            self.constraints.append(Constraint(pair[0], pair[1], T, ConstraintKind.LOCAL))

    def add_loop_constraints(self, constraints: Iterable[Constraint]) -> None:
        constraints = list(constraints)
        for c in constraints:
            for k in (c.i, c.j):
                if k not in self.nodes:
                    raise GraphError(f"loop constraint {c.i}->{c.j}: node {k} missing")
        self.constraints.extend(constraints)

    def initialize_chain(self) -> None:
        """Re-seed every non-origin node by chaining consecutive-frame constraints.

        For each pair ``(k-1, k)`` the first inserted local constraint is
        used, so that the pose matches the incremental initialization of
        :meth:`append_window`.
        """
        ids = self.node_ids
        if not ids:
            return
        first: dict[tuple[int, int], Pose] = {}
        for c in self.constraints:
            if c.kind is ConstraintKind.LOCAL and c.j == c.i + 1:
                first.setdefault((c.i, c.j), c.relative)
        origin = ids[0]
        if origin not in self.fixed:
            raise GraphError("chain origin must be a fixed node")
        for prev, k in zip(ids, ids[1:]):
            if k != prev + 1 or (prev, k) not in first:
                raise GraphError(f"no consecutive-frame constraint {prev}->{k}; chain broken")
            self.nodes[k] = compose(self.nodes[prev], first[(prev, k)])

    # -- energy ------------------------------------------------------------

    def edge_error(self, c: Constraint) -> np.ndarray:
        Ti, Tj = self.nodes[c.i], self.nodes[c.j]
        E = compose(compose(inverse(c.relative), inverse(Ti)), Tj)
        return se3_log(E)

    def weight(self, c: Constraint) -> float:
        return self.weights.get(c.kind, 1.0)

    def total_chi2(self) -> float:
        if not self.constraints:
            return 0.0
        e = self.errors()
        w = np.array([self.weight(c) for c in self.constraints])
        return float(np.sum(w * np.einsum("ij,ij->i", e, e)))

    def errors(self) -> np.ndarray:
        """Stacked edge errors ``(m, 6)`` in constraint order."""
        R, t = _error_transforms(self)
        return se3_log_batch(R, t, check=False)

    def is_connected(self) -> bool:
        if len(self.nodes) <= 1:
            return True
        adj: dict[int, set[int]] = {k: set() for k in self.nodes}
        for c in self.constraints:
            adj[c.i].add(c.j)
            adj[c.j].add(c.i)
        start = next(iter(self.nodes))
        seen = {start}
        queue = deque([start])
        while queue:
            for nb in adj[queue.popleft()]:
                if nb not in seen:
                    seen.add(nb)
                    queue.append(nb)
        return len(seen) == len(self.nodes)

    def trajectory(self) -> list[Pose]:
        return [self.nodes[k] for k in self.node_ids]


def _stack(poses: list[Pose]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([p.R for p in poses]), np.stack([p.t for p in poses])


def _error_transforms(graph: GlobalPoseGraph):
    """Batched ``T_ij^-1 T_i^-1 T_j`` as ``(R, t)`` stacks."""
    cs = graph.constraints
    Ri, ti = _stack([graph.nodes[c.i] for c in cs])
    Rj, tj = _stack([graph.nodes[c.j] for c in cs])
    Rm, tm = _stack([c.relative for c in cs])
    RmT = np.swapaxes(Rm, 1, 2)
    RiT = np.swapaxes(Ri, 1, 2)
    # T_i^-1 T_j
    Rd = RiT @ Rj
    td = np.einsum("mij,mj->mi", RiT, tj - ti)
    R = RmT @ Rd
    t = np.einsum("mij,mj->mi", RmT, td - tm)
    return R, t


# ---------------------------------------------------------------------------
# g2o text format
# ---------------------------------------------------------------------------

_IDENTITY_INFO_UT = [1.0 if r == c else 0.0 for r in range(6) for c in range(r, 6)]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_g2o(graph: GlobalPoseGraph, path: str | Path) -> None:
    """Write ``VERTEX_SE3:QUAT`` / ``EDGE_SE3:QUAT`` / ``FIX`` lines.

    Loop constraints are preceded by a ``# loop`` comment line, which g2o
    readers skip; :func:`load_g2o` uses it to restore the constraint kind.
    The information block carries the per-kind weight times identity.
    """
    lines = []
    for k in graph.node_ids:
        p = graph.nodes[k]
        vals = list(p.t) + list(p.quaternion())
        lines.append(f"VERTEX_SE3:QUAT {k} " + " ".join(_fmt(v) for v in vals))
    for c in graph.constraints:
        if c.kind is ConstraintKind.LOOP:
            lines.append("# loop")
        w = graph.weight(c)
        info = [w * v for v in _IDENTITY_INFO_UT]
        vals = list(c.relative.t) + list(c.relative.quaternion()) + info
        lines.append(f"EDGE_SE3:QUAT {c.i} {c.j} " + " ".join(_fmt(v) for v in vals))
    for k in sorted(graph.fixed):
        lines.append(f"FIX {k}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_g2o(path: str | Path) -> GlobalPoseGraph:
    graph = GlobalPoseGraph()
    fixed: list[int] = []
    pending_loop = False
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            pending_loop = line[1:].strip() == "loop"
            continue
        tok = line.split()
        try:
            if tok[0] == "VERTEX_SE3:QUAT":
                if len(tok) != 9:
                    raise GraphError(f"expected 9 fields, got {len(tok)}")
                vals = [float(v) for v in tok[2:]]
                _check_finite(vals)
                graph.nodes[int(tok[1])] = Pose.from_quaternion(vals[3:7], vals[0:3])
            elif tok[0] == "EDGE_SE3:QUAT":
                if len(tok) != 3 + 7 + 21:
                    raise GraphError(f"expected 31 fields, got {len(tok)}")
                vals = [float(v) for v in tok[3:]]
                _check_finite(vals)
                kind = ConstraintKind.LOOP if pending_loop else ConstraintKind.LOCAL
                T = Pose.from_quaternion(vals[3:7], vals[0:3])
                graph.constraints.append(Constraint(int(tok[1]), int(tok[2]), T, kind))
                graph.weights[kind] = vals[7]
            elif tok[0] == "FIX":
                fixed.extend(int(v) for v in tok[1:])
            else:
                raise GraphError(f"unknown record {tok[0]!r}")
        except (ValueError, IndexError) as exc:
            raise GraphError(f"{path}:{lineno}: {exc}") from exc
        pending_loop = False
    for c in graph.constraints:
        for k in (c.i, c.j):
            if k not in graph.nodes:
                raise GraphError(f"{path}: edge {c.i}->{c.j} references missing vertex {k}")
    graph.fixed = set(fixed)
    return graph


def _check_finite(vals: list[float]) -> None:
    if not all(np.isfinite(vals)):
        raise GraphError("non-finite value")
