"""Adaptive instance selection.

A MIL step sees one positive (anomalous) and one negative (normal) bag. The
selector estimates how far training has progressed from the two score
sequences alone, converts that confidence into an instance budget K, and
picks the K instances with the largest feature magnitude from each bag. The
selection itself is score-free bookkeeping: gradients never flow through
omega, K, or the chosen indices, only through the selected scores inside
``ais_loss``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import gather, log, value


@dataclass(frozen=True)
class SelectionConfig:
    threshold: float = 0.9            # positive scores at/above this count as confident
    adaptive: bool = True             # False pins K = 1 (classic top-1 MIL)
    magnitude_source: str = "attended"  # rank by "attended" or "raw" features

    def __post_init__(self):
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError(f"threshold must be in (0, 1], got {self.threshold}")
        if self.magnitude_source not in ("attended", "raw"):
            raise ValueError(f"magnitude_source must be 'attended' or 'raw', got {self.magnitude_source!r}")


@dataclass
class ScoreBagPair:
    """Scores and features for one positive/negative bag pair."""

    pos_scores: object
    neg_scores: object
    pos_features: object
    neg_features: object


@dataclass(frozen=True)
class SelectionResult:
    omega: float
    k: int
    pos_topk: tuple[int, ...]
    neg_topk: tuple[int, ...]


def confidence(pair: ScoreBagPair) -> float:
    """Training maturity in [0, 1].

    High when the negative bag's scores sit near zero and both score
    sequences vary little between neighbouring clips; raw values below 0 or
    above 1 clamp to the ends.
    """
    sn = value(pair.neg_scores)
    sp = value(pair.pos_scores)
    t = sn.shape[0]
    if sn.ndim != 1 or sp.ndim != 1 or sp.shape[0] != t:
        raise ValueError(f"score sequences must be 1-d and equally long, got {sp.shape} and {sn.shape}")
    if t < 2:
        raise ValueError(f"confidence needs at least 2 clips, got {t}")
    roughness = np.abs(np.diff(sn)).sum() + np.abs(np.diff(sp)).sum()
    raw = 1.0 - sn.mean() - roughness / (2 * t - 2)
    return float(min(1.0, max(0.0, raw)))


def adaptive_k(omega: float, pos_scores, threshold: float = 0.9) -> int:
    """Instance budget: confidence times the count of confident positive
    scores, rounded half-up, clamped to [1, T]."""
    sp = value(pos_scores)
    count = int((sp >= threshold).sum())
    k = math.floor(omega * count + 0.5)
    return max(1, min(sp.shape[0], k))


def topk_by_magnitude(features, k: int) -> tuple[int, ...]:
    """Indices of the k rows with the largest L2 norm, descending; ties keep
    the lower index first."""
    feats = value(features)
    if feats.ndim != 2:
        raise ValueError(f"features must be 2-d, got shape {feats.shape}")
    if not 1 <= k <= feats.shape[0]:
        raise ValueError(f"k must be in [1, {feats.shape[0]}], got {k}")
    norms = np.linalg.norm(feats, axis=1)
    order = np.argsort(-norms, kind="stable")
    return tuple(int(i) for i in order[:k])


def select(pair: ScoreBagPair, cfg: SelectionConfig = SelectionConfig()) -> SelectionResult:
    """Full selection for one pair; with ``cfg.adaptive`` off, K pins to 1
    and the step reduces to classic top-1 MIL."""
    omega = confidence(pair)
    k = adaptive_k(omega, pair.pos_scores, cfg.threshold) if cfg.adaptive else 1
    return SelectionResult(
        omega=omega,
        k=k,
        pos_topk=topk_by_magnitude(pair.pos_features, k),
        neg_topk=topk_by_magnitude(pair.neg_features, k),
    )


def ais_loss(pair: ScoreBagPair, sel: SelectionResult, eps: float = 1e-7):
    """Negative log-likelihood of the selected mean scores: pushes the
    positive bag's selected mean toward 1 and the negative bag's toward 0.
    The eps guard keeps both logs finite at the score boundaries."""
    m_p = gather(pair.pos_scores, sel.pos_topk).mean()
    m_n = gather(pair.neg_scores, sel.neg_topk).mean()
    return -(log(m_p + eps) + log((1.0 - m_n) + eps))
