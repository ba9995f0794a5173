"""Windowed pose graphs: complete directed graphs over a short run of views.

Views are numbered 1..n inside a window; ``edges[(i, j)]`` is the relative
motion from view i to view j, i.e. ``T_i^-1 T_j`` for absolute poses
``T_i``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .lie import Pose, compose, inverse, se3_log


class WindowError(ValueError):
    pass


@dataclass(frozen=True)
class WindowedPoseGraph:
    n: int
    edges: Mapping[tuple[int, int], Pose]
    frame_ids: tuple[int, ...]

    def edge(self, i: int, j: int) -> Pose:
        return self.edges[(i, j)]

    def view_of(self, frame: int) -> int:
        return self.frame_ids.index(frame) + 1

    def relabeled(self, perm: Sequence[int]) -> WindowedPoseGraph:
        """View ``v`` becomes view ``perm[v - 1]``."""
        edges = {(perm[i - 1], perm[j - 1]): T for (i, j), T in self.edges.items()}
        frames = [0] * self.n
        for v, f in enumerate(self.frame_ids, start=1):
            frames[perm[v - 1] - 1] = f
        return WindowedPoseGraph(self.n, edges, tuple(frames))


def build_window(frame_ids: Sequence[int], edge_poses) -> WindowedPoseGraph:
    """Validate and freeze a window.

    ``edge_poses`` is a mapping or an iterable of ``((i, j), Pose)`` items
    keyed by 1-based view indices.  Every ordered pair of distinct views must
    appear exactly once.
    """
    n = len(frame_ids)
    if n < 2:
        raise WindowError(f"a window needs at least 2 views, got {n}")
    if len(set(frame_ids)) != n:
        raise WindowError(f"repeated frame in window {list(frame_ids)}")
    items = edge_poses.items() if isinstance(edge_poses, Mapping) else edge_poses
    edges: dict[tuple[int, int], Pose] = {}
    for (i, j), T in items:
        i, j = int(i), int(j)
        if not (1 <= i <= n and 1 <= j <= n) or i == j:
            raise WindowError(f"invalid edge ({i}, {j}) for a {n}-view window")
        if (i, j) in edges:
            raise WindowError(f"duplicate edge ({i}, {j})")
        if not isinstance(T, Pose):
            raise WindowError(f"edge ({i}, {j}) is not a Pose")
        edges[(i, j)] = T
    expected = n * (n - 1)
    if len(edges) != expected:
        missing = sorted(set(itertools.permutations(range(1, n + 1), 2)) - set(edges))
        raise WindowError(f"window needs {expected} edges, got {len(edges)}; missing {missing}")
    return WindowedPoseGraph(n, edges, tuple(int(f) for f in frame_ids))


def window_from_poses(frame_ids: Sequence[int], poses: Sequence[Pose]) -> WindowedPoseGraph:
    """Exactly consistent window induced by absolute poses."""
    inv = [inverse(p) for p in poses]
    n = len(poses)
    edges = {
        (i, j): compose(inv[i - 1], poses[j - 1])
        for i, j in itertools.permutations(range(1, n + 1), 2)
    }
    return build_window(frame_ids, edges)


def enumerate_cycles(
    n: int, length: int | Sequence[int] = 3, orientations: str = "both", rotations: bool = False
) -> list[tuple[int, ...]]:
    """Directed simple cycles over views 1..n.

    Cycles are deduplicated up to cyclic rotation, keeping the representative
    that starts at the smallest view.  ``orientations="one"`` additionally
    merges a cycle with its reversal.  ``rotations=True`` keeps every
    rotation instead, which makes the loss invariant under any relabeling of
    the views.  ``length`` may be a single cycle length or several.
    """
    lengths = [length] if isinstance(length, int) else list(length)
    if orientations not in ("both", "one"):
        raise ValueError(f"orientations must be 'both' or 'one', got {orientations!r}")
    out: list[tuple[int, ...]] = []
    for L in lengths:
        if L < 3 or L > n:
            continue
        for combo in itertools.combinations(range(1, n + 1), L):
            head, rest = combo[0], combo[1:]
            for tail in itertools.permutations(rest):
                if orientations == "one" and tail[0] > tail[-1]:
                    continue
                cyc = (head,) + tail
                if rotations:
                    out.extend(cyc[k:] + cyc[:k] for k in range(L))
                else:
                    out.append(cyc)
    return out


def cycle_product(g: WindowedPoseGraph, cycle: Sequence[int]) -> np.ndarray:
    """Homogeneous product ``T_ab T_bc ... T_za`` around the cycle."""
    M = np.eye(4)
    for a, b in zip(cycle, list(cycle[1:]) + [cycle[0]]):
        M = M @ g.edge(a, b).matrix()
    return M


def cycle_consistency_loss(g: WindowedPoseGraph, cycles=None) -> float:
    """Sum over cycles of the entrywise l1 norm of ``(product - I)[:3, :4]``."""
    if cycles is None:
        cycles = enumerate_cycles(g.n)
    total = 0.0
    eye = np.eye(4)[:3]
    for cyc in cycles:
        total += float(np.abs(cycle_product(g, cyc)[:3] - eye).sum())
    return total


def chained_poses(g: WindowedPoseGraph) -> list[Pose]:
    poses = [Pose.identity()]
    for v in range(1, g.n):
        poses.append(compose(poses[-1], g.edge(v, v + 1)))
    return poses


def window_chi2(g: WindowedPoseGraph, poses: Sequence[Pose]) -> float:
    total = 0.0
    for (i, j), T in g.edges.items():
        e = se3_log(compose(compose(inverse(T), inverse(poses[i - 1])), poses[j - 1]))
        total += float(e @ e)
    return total


def relax_window(g: WindowedPoseGraph, cfg=None) -> list[Pose]:
    """Absolute poses in the window frame (view 1 at identity) that best fit every edge.

    Runs the LM optimizer from the chained initialization, so the returned
    poses never have a higher window chi2 than the chain.  For two views the
    result is the least-squares compromise between ``T_12`` and
    ``T_21^-1``.  It equals their geodesic midpoint when both are pure
    rotations; with translation the energy is not bi-invariant and the
    midpoint is in general not its minimizer.
    """
    from .graph import Constraint, GlobalPoseGraph
    from .optimizer import LMConfig, NumericalFailure, TerminationReason, optimize

    init = chained_poses(g)
    graph = GlobalPoseGraph()
    for v, p in enumerate(init):
        graph.add_node(v, p, fixed=(v == 0))
    for (i, j), T in g.edges.items():
        graph.add_constraint(Constraint(i - 1, j - 1, T))
    report = optimize(graph, cfg or LMConfig())
    if report.reason is TerminationReason.NUMERICAL_FAILURE:
        raise NumericalFailure("window relaxation failed")
    return graph.trajectory()


def relaxed_window(g: WindowedPoseGraph, cfg=None) -> WindowedPoseGraph:
    """Consistent window whose edges are induced by :func:`relax_window`."""
    return window_from_poses(g.frame_ids, relax_window(g, cfg))


def interframe_motion(g: WindowedPoseGraph) -> Pose:
    """Forward motion from the second-newest view to the newest.

    Taken from the backward edge ``(n, n-1)`` and inverted, i.e. the
    ``T_{1->0}`` style measurement turned into the chaining direction.
    """
    return inverse(g.edge(g.n, g.n - 1))
