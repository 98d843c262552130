"""Design portfolios: return/risk algebra, random mixing and combination lines.

A design's return is its mean energy efficiency over formation realizations and
its risk is the sum of the standard deviations of efficiency and energy
variance. Designs are treated as independent assets, so the portfolio
covariance matrix is diagonal.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from stimfolio.designs import Design
from stimfolio.formation import FormationRealization
from stimfolio.fracsim import SimConfig, SimulationError, simulate
from stimfolio.frontier import nondominated

log = logging.getLogger(__name__)

WEIGHT_SUM_TOL = 1e-9

MIN_GRADIENT = "min_gradient"
DOMINANCE = "dominance"
ANCHOR_RULES = (MIN_GRADIENT, DOMINANCE)


@dataclass(frozen=True)
class DesignPerformance:
    design: Design
    return_r: float
    std_eta: float
    std_ev: float
    risk: float = field(init=False)

    def __post_init__(self):
        if self.std_eta < 0 or self.std_ev < 0:
            raise ValueError("standard deviations must be >= 0")
        object.__setattr__(self, "risk", self.std_eta + self.std_ev)


@dataclass(frozen=True)
class Portfolio:
    """Weights over designs identified by integer ids.

    ``member_returns`` and ``member_risks`` are the per-design values the
    portfolio was built from, kept so it can be recomputed on its own.
    """

    members: tuple[int, ...]
    weights: tuple[float, ...]
    member_returns: tuple[float, ...]
    member_risks: tuple[float, ...]
    return_p: float
    risk_p: float

    @classmethod
    def build(cls, members, weights, returns, risks) -> "Portfolio":
        w = np.asarray(weights, dtype=float)
        r = np.asarray(returns, dtype=float)
        s = np.asarray(risks, dtype=float)
        return cls(
            members=tuple(int(m) for m in members),
            weights=tuple(float(x) for x in w),
            member_returns=tuple(float(x) for x in r),
            member_risks=tuple(float(x) for x in s),
            return_p=expected_return(w, r),
            risk_p=portfolio_risk(w, s),
        )

    def weight_map(self) -> dict[int, float]:
        out: dict[int, float] = {}
        for m, w in zip(self.members, self.weights):
            out[m] = out.get(m, 0.0) + w
        return out


@dataclass(frozen=True)
class CombinationLine:
    anchor: Portfolio
    tangent: Portfolio
    gradient: float
    rule: str = MIN_GRADIENT

    def __post_init__(self):
        if not self.anchor.risk_p < self.tangent.risk_p:
            raise ValueError("anchor must be less risky than the tangent portfolio")
        if not (math.isfinite(self.gradient) and self.gradient > 0):
            raise ValueError(f"gradient must be finite and > 0, got {self.gradient!r}")

    def value_at(self, risk: float) -> float:
        """Return on the line at ``risk``."""
        return self.anchor.return_p + self.gradient * (risk - self.anchor.risk_p)


@dataclass(frozen=True)
class Combination:
    lam: float
    return_p: float
    risk_p: float
    #: Eq.-4 risk of the merged weights; never above ``risk_p``
    risk_exact: float
    weights: dict


def _check_weights(weights, values) -> tuple[np.ndarray, np.ndarray]:
    w = np.asarray(weights, dtype=float)
    v = np.asarray(values, dtype=float)
    if w.shape != v.shape or w.ndim != 1:
        raise ValueError("weights and values must be 1-d and of equal length")
    if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
        raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
    return w, v


def expected_return(weights, returns) -> float:
    w, r = _check_weights(weights, returns)
    return float(np.dot(w, r))


def portfolio_risk(weights, risks) -> float:
    """Standard deviation of a portfolio of independent designs."""
    w, s = _check_weights(weights, risks)
    if np.any(s < 0):
        raise ValueError("risks must be >= 0")
    return float(math.sqrt(np.dot(w * w, s * s)))


def performance_from_samples(design: Design, etas, evs) -> DesignPerformance:
    """Return and risk of a design from per-realization eta and EV samples."""
    etas = np.asarray(etas, dtype=float)
    evs = np.asarray(evs, dtype=float)
    return DesignPerformance(
        design=design,
        return_r=float(np.mean(etas)),
        std_eta=float(np.std(etas)),
        std_ev=float(np.std(evs)),
    )


def evaluate_design(
    design: Design, realizations: Sequence[FormationRealization], config: SimConfig
) -> DesignPerformance:
    if len(realizations) < 2:
        raise ValueError("evaluate_design needs at least 2 realizations")
    etas, evs = [], []
    for k, realization in enumerate(realizations):
        try:
            res = simulate(design, realization, config)
        except SimulationError as exc:
            raise SimulationError(f"realization {k}: {exc}") from exc
        etas.append(res.energy_efficiency)
        evs.append(res.energy_variance)
    return performance_from_samples(design, etas, evs)


def random_portfolios(
    pool: Sequence[DesignPerformance],
    k: int = 6,
    n_mix: int = 12500,
    seed: int = 0,
    ids: Sequence[int] | None = None,
) -> list[Portfolio]:
    """Random mixtures of ``k`` distinct pool designs with uniform-simplex weights.

    ``ids`` names the pool entries in the returned portfolios (default: their
    positions in ``pool``). Members are listed in ascending id order.
    """
    if k < 1 or n_mix < 1:
        raise ValueError("k and n_mix must be >= 1")
    if len(pool) < k:
        raise ValueError(f"pool of {len(pool)} designs is smaller than k={k}")
    ids = np.arange(len(pool)) if ids is None else np.asarray(ids, dtype=int)
    returns = np.array([p.return_r for p in pool])
    risks = np.array([p.risk for p in pool])

    rng = np.random.default_rng(seed)
    chosen = np.argsort(rng.random((n_mix, len(pool))), axis=1)[:, :k]
    weights = rng.dirichlet(np.ones(k), size=n_mix)

    out = []
    for row, w in zip(chosen, weights):
        order = np.argsort(ids[row], kind="stable")
        row, w = row[order], w[order]
        out.append(Portfolio.build(ids[row], w, returns[row], risks[row]))
    return out


def portfolio_frontier(portfolios: Sequence[Portfolio]) -> list[Portfolio]:
    """Efficient portfolios (max return, min risk), ascending in risk."""
    if not portfolios:
        raise ValueError("portfolio_frontier needs at least one portfolio")
    idx = nondominated(
        [p.return_p for p in portfolios],
        [p.risk_p for p in portfolios],
        tiebreak=lambda i: (portfolios[i].members, portfolios[i].weights),
    )
    return [portfolios[i] for i in idx]


def _best_tangent(anchor: Portfolio, frontier: Sequence[Portfolio]):
    best, best_slope = None, -math.inf
    for p in frontier:
        if p.risk_p <= anchor.risk_p:
            continue
        slope = (p.return_p - anchor.return_p) / (p.risk_p - anchor.risk_p)
        if slope > best_slope:
            best, best_slope = p, slope
    return best, best_slope


def _dominance_choice(lines: list[CombinationLine]) -> CombinationLine:
    """Line with the least risk over the return range every line covers."""
    lo = max(l.anchor.return_p for l in lines)
    hi = min(l.tangent.return_p for l in lines)
    targets = np.linspace(lo, hi, 21) if hi > lo else np.array([0.5 * (lo + hi)])

    def mean_risk(line):
        return float(np.mean(line.anchor.risk_p + (targets - line.anchor.return_p) / line.gradient))

    return min(lines, key=lambda l: (mean_risk(l), l.gradient))


def tangent_lines(anchors: Sequence[Portfolio], frontier: Sequence[Portfolio]) -> list[CombinationLine]:
    """One supporting line per usable anchor, through its max-slope frontier point."""
    if not frontier:
        raise ValueError("frontier must be non-empty")
    lines = []
    for a in anchors:
        t, slope = _best_tangent(a, frontier)
        if t is None:
            log.warning("anchor (risk %.3g) is not less risky than any frontier portfolio; skipped", a.risk_p)
            continue
        if not slope > 0:
            log.warning("anchor (return %.3g) has no frontier portfolio above it; skipped", a.return_p)
            continue
        lines.append(CombinationLine(anchor=a, tangent=t, gradient=slope))
    return lines


def tangent_combination(
    anchors: Sequence[Portfolio], frontier: Sequence[Portfolio], rule: str = MIN_GRADIENT
) -> CombinationLine:
    """Combination line from a low-risk anchor to its tangency on ``frontier``.

    Every anchor gets its max-slope tangent. ``min_gradient`` then keeps the
    flattest of those lines; ``dominance`` keeps the one with least risk over
    the shared return range. The other rule's choice is logged when it differs.
    """
    if rule not in ANCHOR_RULES:
        raise ValueError(f"unknown anchor rule {rule!r}")
    lines = tangent_lines(anchors, frontier)
    if not lines:
        raise ValueError("no anchor yields a valid tangent line")
    flattest = min(lines, key=lambda l: (l.gradient, l.anchor.risk_p))
    dominant = _dominance_choice(lines)
    if flattest is not dominant:
        log.info(
            "anchor rules disagree: min_gradient slope %.4g vs dominance slope %.4g",
            flattest.gradient, dominant.gradient,
        )
    chosen = flattest if rule == MIN_GRADIENT else dominant
    return CombinationLine(chosen.anchor, chosen.tangent, chosen.gradient, rule)


def combine(line: CombinationLine, lam: float) -> Combination:
    """Blend ``(1 - lam)`` of the anchor with ``lam`` of the tangent portfolio."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam!r}")
    a, t = line.anchor, line.tangent
    if lam == 0.0:
        ret, risk = a.return_p, a.risk_p
    elif lam == 1.0:
        ret, risk = t.return_p, t.risk_p
    else:
        ret = (1.0 - lam) * a.return_p + lam * t.return_p
        risk = (1.0 - lam) * a.risk_p + lam * t.risk_p

    weights: dict[int, float] = {}
    member_risk: dict[int, float] = {}
    for port, share in ((a, 1.0 - lam), (t, lam)):
        if share == 0.0:
            continue
        for m, w, s in zip(port.members, port.weights, port.member_risks):
            weights[m] = weights.get(m, 0.0) + share * w
            member_risk[m] = s
    ids = sorted(weights)
    w = np.array([weights[m] for m in ids])
    s = np.array([member_risk[m] for m in ids])
    exact = float(math.sqrt(np.dot(w * w, s * s)))
    return Combination(lam=lam, return_p=ret, risk_p=risk, risk_exact=exact, weights={m: weights[m] for m in ids})


def normalize_to_base(perf: tuple[float, float], base: DesignPerformance) -> tuple[float, float]:
    """Express ``(return, risk)`` as multiples of the base case's values."""
    if not (base.return_r > 0 and base.risk > 0):
        raise ValueError("base case must have positive return and risk")
    ret, risk = perf
    return ret / base.return_r, risk / base.risk


def lambda_grid(n: int = 11) -> np.ndarray:
    if n < 2:
        raise ValueError("need at least 2 lambda samples")
    grid = np.linspace(0.0, 1.0, n)
    grid[0], grid[-1] = 0.0, 1.0
    return grid


def recompute(portfolio: Portfolio, returns: Mapping[int, float] | None = None, risks: Mapping[int, float] | None = None):
    """``(return, risk)`` of a portfolio recomputed from its weights."""
    r = [returns[m] for m in portfolio.members] if returns is not None else portfolio.member_returns
    s = [risks[m] for m in portfolio.members] if risks is not None else portfolio.member_risks
    return expected_return(portfolio.weights, r), portfolio_risk(portfolio.weights, s)
