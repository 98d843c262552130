"""Efficiency / energy-variance frontier and design picks."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from stimfolio.designs import DESIGN_COLUMNS, Design, design_from_row

log = logging.getLogger(__name__)

NOMINAL = "nominal"
MEAN = "mean"


@dataclass(frozen=True)
class ScoredDesign:
    design: Design
    eta: float
    ev: float
    mode: str = NOMINAL

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta!r}")
        if not self.ev >= 0:
            raise ValueError(f"ev must be >= 0, got {self.ev!r}")

    def sort_key(self):
        return (self.eta, self.ev, self.design.vector(), self.design.spacing_mode)


def nondominated(maximize: Sequence[float], minimize: Sequence[float], tiebreak=None) -> list[int]:
    """Indices of the points not dominated in (max ``maximize``, min ``minimize``).

    A point is dominated when another is at least as good in both objectives
    and strictly better in one. Among exact duplicates only the one that comes
    first under ``tiebreak`` (an index key) is kept. The result is ordered by
    ascending ``maximize``.
    """
    n = len(maximize)
    if n == 0:
        return []
    tb = tiebreak if tiebreak is not None else (lambda i: i)
    order = sorted(range(n), key=lambda i: (-maximize[i], minimize[i], tb(i)))
    keep = []
    best = math.inf
    for i in order:
        if minimize[i] < best:
            keep.append(i)
            best = minimize[i]
    keep.reverse()
    return keep


def pareto_frontier(points: Sequence[ScoredDesign]) -> list[ScoredDesign]:
    """Designs with maximal efficiency for their energy variance, ascending in eta."""
    if not points:
        raise ValueError("pareto_frontier needs at least one point")
    idx = nondominated(
        [p.eta for p in points],
        [p.ev for p in points],
        tiebreak=lambda i: (points[i].design.vector(), points[i].design.spacing_mode),
    )
    return [points[i] for i in idx]


def bin_edges(start: float, interval: float, stop: float) -> np.ndarray:
    """Left edges ``start + k*interval`` that do not exceed ``stop``."""
    if interval <= 0:
        raise ValueError("interval must be > 0")
    if stop < start:
        return np.empty(0)
    # tolerate round-off when stop sits exactly on an edge
    n = int(math.floor((stop - start) / interval * (1 + 1e-12) + 1e-9)) + 1
    return start + interval * np.arange(n)


def pick_frontier_designs(
    frontier: Sequence[ScoredDesign],
    start: float = 2.5e-4,
    interval: float = 0.1e-4,
    stop: float | None = None,
) -> list[ScoredDesign]:
    """Lowest-EV frontier design in each efficiency bin ``[e, e + interval)``.

    Bins start at ``start`` and continue while the left edge is at most ``stop``
    (default: the largest efficiency on the frontier). Empty bins are skipped.
    """
    if not frontier:
        return []
    max_eta = max(p.eta for p in frontier)
    top = max_eta if stop is None else stop
    if max_eta < start:
        log.warning("no frontier design reaches efficiency %.3g (max %.3g); nothing picked", start, max_eta)
        return []
    picks: list[ScoredDesign] = []
    seen = set()
    for edge in bin_edges(start, interval, top):
        in_bin = [p for p in frontier if edge <= p.eta < edge + interval]
        if not in_bin:
            continue
        best = min(in_bin, key=lambda p: (p.ev, p.eta, p.design.vector(), p.design.spacing_mode))
        if best.design not in seen:
            seen.add(best.design)
            picks.append(best)
    return picks


def pick_exl_designs(performances, entry_loss_threshold: float = 1.38e7, n: int = 6, n_clusters: int = 5):
    """The ``n`` lowest-risk designs whose equal-split entry loss reaches the threshold."""
    if n < 1:
        raise ValueError("n must be >= 1")
    qualifying = [p for p in performances if p.design.nominal_entry_loss(n_clusters) >= entry_loss_threshold]
    qualifying.sort(key=lambda p: (p.risk, p.design.vector(), p.design.spacing_mode))
    if len(qualifying) < n:
        log.warning("only %d extreme-limited-entry designs qualify (wanted %d)", len(qualifying), n)
    return qualifying[:n]


def write_scored_csv(path: Path, scored: Sequence[ScoredDesign], extra: dict[str, Sequence] | None = None) -> None:
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(extra) + ["eta", "ev"] + list(DESIGN_COLUMNS))
        for k, s in enumerate(scored):
            writer.writerow(
                [extra[c][k] for c in extra]
                + [repr(float(s.eta)), repr(float(s.ev))]
                + [repr(v) for v in s.design.vector()]
                + [s.design.spacing_mode]
            )


def read_scored_csv(path: Path, mode: str = NOMINAL) -> tuple[list[ScoredDesign], list[dict]]:
    """Scored designs plus the raw rows (for any extra columns)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    scored = [ScoredDesign(design_from_row(r), float(r["eta"]), float(r["ev"]), mode) for r in rows]
    return scored, rows
