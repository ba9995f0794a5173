"""Incremental back-end: ingest windows, close loops, optimize."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .graph import GlobalPoseGraph
from .loops import (
    LoopCandidate,
    LoopConfig,
    LoopDetection,
    LoopFilter,
    Verifier,
    always_true,
    build_loop_constraints,
    crossed_windows,
    verify_candidate,
)
from .optimizer import LMConfig, OptReport, TerminationReason, optimize
from .trajectory import Trajectory
from .windowed import WindowedPoseGraph, relaxed_window

log = logging.getLogger(__name__)

LoopWindowSource = Callable[[Sequence[int]], "WindowedPoseGraph | None"]


class OptimizationFailed(RuntimeError):
    def __init__(self, message: str, graph: GlobalPoseGraph):
        super().__init__(message)
        self.graph = graph


@dataclass
class BackendOptions:
    loop_closing: bool = True
    window_relax: bool = False
    optimize_every: int = 0  # frames; 0 = only when a loop closes
    lm: LMConfig = field(default_factory=LMConfig)
    loops: LoopConfig = field(default_factory=LoopConfig)


@dataclass
class BackendResult:
    graph: GlobalPoseGraph
    loops: list[LoopCandidate]
    reports: list[OptReport]

    def trajectory(self) -> Trajectory:
        return Trajectory(self.graph.trajectory())


def _lookup(table: Mapping[tuple[int, ...], WindowedPoseGraph]) -> LoopWindowSource:
    return lambda frames: table.get(tuple(frames))


def run_backend(
    windows: Sequence[WindowedPoseGraph],
    detections: Sequence[LoopDetection] = (),
    loop_windows: Mapping[tuple[int, ...], WindowedPoseGraph] | LoopWindowSource | None = None,
    verifier: Verifier = always_true,
    options: BackendOptions | None = None,
) -> BackendResult:
    """Per frame: append its window, feed its detections; on an accepted loop
    add the crossed-window constraints and optimize the whole graph.

    ``loop_windows`` supplies front-end output for crossed frame lists,
    either as a table keyed by frame tuple or as a callable.  Candidates
    whose windows are unavailable (too little history, missing from the
    table) are not accepted.  Raises :class:`OptimizationFailed` carrying
    the graph as it was before the failing optimization.
    """
    opts = options or BackendOptions()
    if loop_windows is None:
        source: LoopWindowSource = lambda frames: None
    elif callable(loop_windows):
        source = loop_windows
    else:
        source = _lookup(loop_windows)

    by_query: dict[int, list[LoopDetection]] = {}
    for d in detections:
        by_query.setdefault(d.query_frame, []).append(d)

    graph = GlobalPoseGraph()
    state = LoopFilter(opts.loops)
    reports: list[OptReport] = []

    def run_optimizer() -> None:
        before = graph.copy()
        report = optimize(graph, opts.lm)
        reports.append(report)
        log.info("%s", report.summary())
        if report.reason is TerminationReason.NUMERICAL_FAILURE:
            raise OptimizationFailed(report.summary(), before)

    for w in windows:
        graph.append_window(relaxed_window(w, opts.lm) if opts.window_relax else w)
        newest = w.frame_ids[-1]
        if opts.optimize_every and newest % opts.optimize_every == 0 and len(graph.nodes) > 1:
            run_optimizer()
        if not opts.loop_closing:
            continue
        for d in by_query.get(newest, ()):
            cand = state.feed(d)
            if cand is None:
                continue
            try:
                f1, f2 = crossed_windows(cand.i, cand.j, w.n)
            except ValueError:
                continue
            w1, w2 = source(f1), source(f2)
            if w1 is None or w2 is None:
                log.debug("no crossed windows for loop %d-%d", cand.i, cand.j)
                continue
            cand = verify_candidate(cand, verifier)
            if not cand.verified:
                continue
            state.accept(cand)
            graph.add_loop_constraints(build_loop_constraints(w1, w2, graph))
            log.info("loop closed %d <-> %d", cand.i, cand.j)
            run_optimizer()
    return BackendResult(graph, list(state.accepted), reports)
