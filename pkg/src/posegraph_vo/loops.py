"""Loop-closure handling: detection filtering, verification, crossed windows."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .graph import Constraint, ConstraintKind, GlobalPoseGraph
from .windowed import WindowedPoseGraph


class LoopError(ValueError):
    pass


@dataclass(frozen=True)
class LoopDetection:
    query_frame: int
    match_frame: int
    score: float = 1.0

    def __post_init__(self):
        if not self.match_frame < self.query_frame:
            raise LoopError(
                f"match frame {self.match_frame} must precede query frame {self.query_frame}"
            )


@dataclass(frozen=True)
class LoopCandidate:
    i: int  # earlier (matched) frame
    j: int  # later (query) frame
    consecutive_count: int
    verified: bool = False


@dataclass(frozen=True)
class LoopConfig:
    min_consecutive: int = 6
    match_band: int = 10  # max change of match frame between consecutive detections
    max_query_gap: int = 1
    cooldown: int = 50  # frames


Verifier = Callable[[LoopCandidate], bool]


def always_true(candidate: LoopCandidate) -> bool:
    return True


@dataclass
class _Run:
    last_query: int
    last_match: int
    count: int


@dataclass
class LoopFilter:
    """Consecutive-detection bookkeeping.

    A run is a chain of detections on successive query frames whose match
    frames stay within ``match_band`` of each other.  A candidate is emitted
    for every detection that brings its run to ``min_consecutive`` or more,
    unless a candidate for the same region was accepted within the last
    ``cooldown`` frames.
    """

    cfg: LoopConfig = field(default_factory=LoopConfig)
    runs: list[_Run] = field(default_factory=list)
    accepted: list[LoopCandidate] = field(default_factory=list)
    last_query: int = -1

    def feed(self, d: LoopDetection) -> LoopCandidate | None:
        if d.query_frame < self.last_query:
            raise LoopError(
                f"detections out of order: query {d.query_frame} after {self.last_query}"
            )
        self.last_query = d.query_frame
        cfg = self.cfg
        self.runs = [r for r in self.runs if d.query_frame - r.last_query <= cfg.max_query_gap]

        run = None
        for r in self.runs:
            if abs(d.match_frame - r.last_match) <= cfg.match_band:
                if run is None or r.count > run.count:
                    run = r
        if run is None:
            run = _Run(d.query_frame, d.match_frame, 1)
            self.runs.append(run)
        elif run.last_query == d.query_frame:
            # second hit on the same query frame does not lengthen the run
            run.last_match = d.match_frame
        else:
            run.last_query = d.query_frame
            run.last_match = d.match_frame
            run.count += 1

        if run.count < cfg.min_consecutive or self._cooling(d):
            return None
        return LoopCandidate(d.match_frame, d.query_frame, run.count)

    def _cooling(self, d: LoopDetection) -> bool:
        for a in self.accepted:
            elapsed = d.query_frame - a.j
            if elapsed < self.cfg.cooldown and abs(d.match_frame - a.i) <= (
                self.cfg.cooldown + self.cfg.match_band
            ):
                return True
        return False

    def accept(self, candidate: LoopCandidate) -> None:
        self.accepted.append(candidate)


def verify_candidate(candidate: LoopCandidate, verifier: Verifier = always_true) -> LoopCandidate:
    return replace(candidate, verified=bool(verifier(candidate)))


def process_detections(
    detections: Iterable[LoopDetection],
    verifier: Verifier = always_true,
    cfg: LoopConfig | None = None,
) -> list[LoopCandidate]:
    """Run a whole trace through filter and verifier; returns accepted loops."""
    state = LoopFilter(cfg or LoopConfig())
    for d in detections:
        cand = state.feed(d)
        if cand is None:
            continue
        cand = verify_candidate(cand, verifier)
        if cand.verified:
            state.accept(cand)
    return state.accepted


def crossed_windows(i: int, j: int, n: int) -> tuple[list[int], list[int]]:
    """Frame lists ``[i, j-1, ..., j-n+1]`` and ``[j, i-1, ..., i-n+1]``."""
    if n < 2:
        raise LoopError(f"window size must be at least 2, got {n}")
    if not i < j:
        raise LoopError(f"loop frames must satisfy i < j, got {i}, {j}")
    if i < n - 1:
        raise LoopError(f"frame {i} has insufficient history for a {n}-view window")
    first = [i] + [j - k for k in range(1, n)]
    second = [j] + [i - k for k in range(1, n)]
    return first, second


def build_loop_constraints(
    w1: WindowedPoseGraph,
    w2: WindowedPoseGraph,
    graph: GlobalPoseGraph | None = None,
) -> list[Constraint]:
    """Constraints from two crossed windows.

    View 1 of each window is the spliced frame; every edge touching it
    becomes a loop constraint.  Edges among the remaining views become local
    constraints unless ``graph`` already holds that ordered pair.
    """
    existing = graph.pair_set() if graph is not None else set()
    out: list[Constraint] = []
    for w in (w1, w2):
        for (a, b), T in w.edges.items():
            fi, fj = w.frame_ids[a - 1], w.frame_ids[b - 1]
            if a == 1 or b == 1:
                out.append(Constraint(fi, fj, T, ConstraintKind.LOOP))
            elif (fi, fj) not in existing:
                out.append(Constraint(fi, fj, T, ConstraintKind.LOCAL))
                existing.add((fi, fj))
    return out


# ---------------------------------------------------------------------------
# text formats
# ---------------------------------------------------------------------------


def load_detections(path: str | Path) -> list[LoopDetection]:
    """Lines ``query_frame match_frame score``; ``#`` starts a comment."""
    out = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) != 3:
            raise LoopError(f"{path}:{lineno}: expected 3 fields, got {len(tok)}")
        try:
            out.append(LoopDetection(int(tok[0]), int(tok[1]), float(tok[2])))
        except ValueError as exc:
            raise LoopError(f"{path}:{lineno}: {exc}") from exc
    return out


def save_detections(detections: Sequence[LoopDetection], path: str | Path) -> None:
    text = "".join(f"{d.query_frame} {d.match_frame} {d.score:.17g}\n" for d in detections)
    Path(path).write_text(text)


def save_loop_log(candidates: Sequence[LoopCandidate], path: str | Path) -> None:
    Path(path).write_text("".join(f"{c.i} {c.j}\n" for c in candidates))


def group_by_query(detections: Iterable[LoopDetection]) -> dict[int, list[LoopDetection]]:
    return {q: list(ds) for q, ds in itertools.groupby(detections, key=lambda d: d.query_frame)}
