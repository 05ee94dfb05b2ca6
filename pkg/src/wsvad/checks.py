"""End-to-end gradient verification for the full scoring-plus-loss graph."""

from __future__ import annotations

import numpy as np

from .autodiff import GradCheckReport, grad_check, no_grad, record_kink_margins
from .losses import LossConfig, total_loss
from .model import AnomalyScorer, HfcConfig, MtaConfig
from .selection import ScoreBagPair, SelectionConfig, select


def full_graph_grad_check(t: int = 8, d: int = 16, mode: str = "residual", seed: int = 3,
                          k_max: int = 5, eps: float = 1e-5, tol: float = 1e-4,
                          margin_min: float = 2e-4, max_attempts: int = 20) -> GradCheckReport:
    """Finite-difference check of d(total loss)/d(every parameter).

    Builds a small model on random features, freezes the instance selection
    once (selection indices are constants during differentiation, exactly as
    in a training step), then compares analytic gradients against central
    differences with dropout off.

    Central differences are only valid where the graph is smooth, so inputs
    are redrawn (seed, seed+1, ...) until every leaky ReLU argument and every
    max-reduction runner-up gap clears ``margin_min``. A +/-eps parameter
    perturbation moves any pre-activation by at most ~10*eps here, so the
    default floor of 20*eps keeps the differences on one side of every kink
    and argmax. The attention kernels are drawn away from their zero init
    for the same reason.
    """
    # pure mode multiplies features by s ~ lambda1 * sum(lrelu(conv)); small
    # kernels would shrink every head pre-activation toward its kink, so the
    # draw range is widened there until s sits near 1
    kernel_range = 0.5 if mode == "residual" else 15.0
    for attempt in range(max_attempts):
        rng = np.random.default_rng(seed + attempt)
        mta_cfg = MtaConfig(k_max=k_max, mode=mode)
        hfc_cfg = HfcConfig.for_feature_dim(d)
        model = AnomalyScorer(hfc_cfg, mta_cfg, seed=seed + attempt)
        for k in mta_cfg.kernel_sizes:
            model.params[f"mta.conv{k}.weight"].data[...] = rng.uniform(-kernel_range, kernel_range, size=k)
            model.params[f"mta.conv{k}.bias"].data[...] = rng.uniform(-kernel_range, kernel_range, size=1)

        pos_feats = rng.standard_normal((t, d)) + 0.5
        neg_feats = rng.standard_normal((t, d))

        with no_grad():
            p_scores, p_att = model.score_bag(pos_feats)
            n_scores, n_att = model.score_bag(neg_feats)
        sel = select(ScoreBagPair(p_scores, n_scores, p_att, n_att), SelectionConfig())

        def build():
            sp, pa = model.score_bag(pos_feats)
            sn, na = model.score_bag(neg_feats)
            return total_loss(ScoreBagPair(sp, sn, pa, na), sel, LossConfig()).node

        with record_kink_margins() as margins:
            build()
        if margins and min(margins) < margin_min:
            continue
        return grad_check(build, model.params.tensors(), eps=eps, tol=tol)

    raise RuntimeError(
        f"no kink-safe input found in {max_attempts} draws (margin_min={margin_min})"
    )
