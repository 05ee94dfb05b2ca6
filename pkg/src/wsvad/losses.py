"""Training objective: selected-instance log loss + temporal smoothness +
an antagonistic top-1 term that drives the two bags' peak scores apart."""

from __future__ import annotations

from dataclasses import dataclass, field

from .autodiff import adjacent_diff, value
from .selection import ScoreBagPair, SelectionResult, ais_loss


@dataclass(frozen=True)
class LossConfig:
    use_antagonistic: bool = True
    use_sparsity: bool = False     # ablation: sparsity replaces the antagonistic term
    smooth_on_both: bool = False   # smooth the negative bag's scores too
    ais_eps: float = 1e-7


@dataclass
class LossBreakdown:
    """Per-term values for one pair; ``total`` sums only the enabled terms.

    ``node`` carries the graph tensor behind ``total`` so callers can run
    backward; the float fields are for logging.
    """

    ais: float
    smooth: float
    antagonistic: float
    sparsity: float
    total: float
    node: object = field(default=None, repr=False, compare=False)


def smooth_loss(scores):
    """Mean squared step between consecutive scores; 0 iff constant."""
    d = adjacent_diff(scores)
    n = value(scores).shape[0] - 1
    return (d * d).sum() * (1.0 / n)


def antagonistic_loss(pos_scores, neg_scores):
    """Top-1 separation pressure, written as three pulls: widen the gap
    between the best positive and best negative score, push the best
    negative down, and pull the best positive up. Ranges over [0, 4]."""
    p = pos_scores.max()
    n = neg_scores.max()
    return (1.0 - (p - n)) + n + (1.0 - p)


def sparsity_loss(pos_scores):
    """Mean positive-bag score; anomalies should stay rare within a bag."""
    return pos_scores.mean()


def total_loss(pair: ScoreBagPair, sel: SelectionResult, cfg: LossConfig = LossConfig()) -> LossBreakdown:
    """Assemble the pair objective; every term is reported even when it is
    not part of the sum."""
    ais = ais_loss(pair, sel, cfg.ais_eps)
    smooth = smooth_loss(pair.pos_scores)
    if cfg.smooth_on_both:
        smooth = (smooth + smooth_loss(pair.neg_scores)) * 0.5
    antagonistic = antagonistic_loss(pair.pos_scores, pair.neg_scores)
    sparsity = sparsity_loss(pair.pos_scores)

    total = ais + smooth
    if cfg.use_sparsity:
        total = total + sparsity
    elif cfg.use_antagonistic:
        total = total + antagonistic

    return LossBreakdown(
        ais=float(value(ais)),
        smooth=float(value(smooth)),
        antagonistic=float(value(antagonistic)),
        sparsity=float(value(sparsity)),
        total=float(value(total)),
        node=total,
    )
