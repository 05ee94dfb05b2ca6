"""Paired-bag MIL training.

Each batch pairs ``batch_pairs`` anomalous bags with the same number of
normal bags (i-th with i-th after a seeded shuffle). Per pair, one
inference-mode pass (dropout off) feeds instance selection, then a
training-mode pass builds the loss graph on the selected indices. Adam with
coupled L2 weight decay updates the parameters once per batch on the mean
pair loss. Runs are bit-reproducible: the same seed yields identical logs
and checkpoints.
"""

from __future__ import annotations

import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import ConfigurationError, backward, no_grad
from .data import ClipFeatureBag
from .evaluation import evaluate_bags
from .losses import LossConfig, total_loss
from .model import (
    STATE_MAGIC,
    AnomalyScorer,
    ModelParameters,
    load_checkpoint,
    read_container,
    save_checkpoint,
    write_container,
)
from .selection import ScoreBagPair, SelectionConfig, select

LOG_COLUMNS = ("epoch", "ais", "smooth", "antagonistic", "sparsity", "total", "auc", "omega", "k")


class TrainingError(RuntimeError):
    """Training hit a non-recoverable numeric state."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    weight_decay: float = 0.0005
    batch_pairs: int = 32
    epochs: int = 200
    seed: int = 7
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_every: int = 1

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigurationError("lr and weight_decay must be non-negative")
        if self.batch_pairs < 1 or self.epochs < 0 or self.eval_every < 1:
            raise ConfigurationError("batch_pairs and eval_every must be >= 1, epochs >= 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise ConfigurationError("invalid Adam moment settings")


class TrainState:
    """Adam accumulators plus run bookkeeping."""

    def __init__(self, params: ModelParameters):
        self.step = 0
        self.best_auc = -1.0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}


def adam_step(params: ModelParameters, state: TrainState, cfg: TrainConfig) -> None:
    """One Adam update from the gradients currently held by ``params``.

    Weight decay enters as a coupled L2 term (g + wd * theta) before the
    moment updates; moments are bias-corrected by the shared step counter.
    """
    state.step += 1
    bc1 = 1.0 - cfg.adam_beta1 ** state.step
    bc2 = 1.0 - cfg.adam_beta2 ** state.step
    for name, p in params.items():
        g = p.grad
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for parameter {name!r} at step {state.step}")
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p.data
        m = state.m[name]
        v = state.v[name]
        m *= cfg.adam_beta1
        m += (1.0 - cfg.adam_beta1) * g
        v *= cfg.adam_beta2
        v += (1.0 - cfg.adam_beta2) * (g * g)
        p.data -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)


@dataclass
class EpochStats:
    """Per-pair means over one epoch."""

    ais: float
    smooth: float
    antagonistic: float
    sparsity: float
    total: float
    omega: float
    k: float
    n_batches: int


def _pair_step(pos_bag, neg_bag, model, sel_cfg, loss_cfg, dropout_rng):
    with no_grad():
        p_scores, p_att = model.score_bag(pos_bag.features)
        n_scores, n_att = model.score_bag(neg_bag.features)
    if sel_cfg.magnitude_source == "attended":
        sel_pair = ScoreBagPair(p_scores, n_scores, p_att, n_att)
    else:
        sel_pair = ScoreBagPair(p_scores, n_scores, pos_bag.features, neg_bag.features)
    sel = select(sel_pair, sel_cfg)

    sp, pa = model.score_bag(pos_bag.features, training=True, rng=dropout_rng)
    sn, na = model.score_bag(neg_bag.features, training=True, rng=dropout_rng)
    breakdown = total_loss(ScoreBagPair(sp, sn, pa, na), sel, loss_cfg)
    return breakdown, sel


def train_epoch(pos_bags, neg_bags, model: AnomalyScorer, state: TrainState, cfg: TrainConfig,
                sel_cfg: SelectionConfig, loss_cfg: LossConfig,
                shuffle_rng, dropout_rng) -> EpochStats:
    """One pass over min(len(pos), len(neg)) // batch_pairs batches."""
    if len(pos_bags) < cfg.batch_pairs or len(neg_bags) < cfg.batch_pairs:
        raise ConfigurationError(
            f"batch_pairs={cfg.batch_pairs} needs at least that many bags per class, "
            f"got {len(pos_bags)} anomalous / {len(neg_bags)} normal"
        )
    pos_order = shuffle_rng.permutation(len(pos_bags))
    neg_order = shuffle_rng.permutation(len(neg_bags))
    n_batches = min(len(pos_bags), len(neg_bags)) // cfg.batch_pairs

    sums = np.zeros(7)  # ais, smooth, antagonistic, sparsity, total, omega, k
    n_pairs = 0
    for b in range(n_batches):
        model.params.zero_grads()
        batch_node = None
        for i in range(cfg.batch_pairs):
            idx = b * cfg.batch_pairs + i
            pos_bag = pos_bags[pos_order[idx]]
            neg_bag = neg_bags[neg_order[idx]]
            breakdown, sel = _pair_step(pos_bag, neg_bag, model, sel_cfg, loss_cfg, dropout_rng)
            batch_node = breakdown.node if batch_node is None else batch_node + breakdown.node
            sums += (
                breakdown.ais,
                breakdown.smooth,
                breakdown.antagonistic,
                breakdown.sparsity,
                breakdown.total,
                sel.omega,
                sel.k,
            )
            n_pairs += 1
        backward(batch_node * (1.0 / cfg.batch_pairs))
        adam_step(model.params, state, cfg)
    means = sums / n_pairs
    return EpochStats(*means, n_batches=n_batches)


# ---------------------------------------------------------------------------
# full runs


@dataclass
class FitResult:
    log_path: Path
    best_checkpoint: Path
    final_checkpoint: Path
    state_path: Path
    best_auc: float
    rows: list[dict] = field(repr=False, default_factory=list)


def save_train_state(path, state: TrainState) -> Path:
    arrays = {f"m.{k}": v for k, v in state.m.items()}
    arrays.update({f"v.{k}": v for k, v in state.v.items()})
    return write_container(path, STATE_MAGIC, {"step": state.step, "best_auc": state.best_auc}, arrays)


def load_train_state(path, params: ModelParameters) -> TrainState:
    config, arrays = read_container(path, STATE_MAGIC)
    state = TrainState(params)
    state.step = int(config["step"])
    state.best_auc = float(config["best_auc"])
    for name in params.names():
        for prefix, store in (("m", state.m), ("v", state.v)):
            key = f"{prefix}.{name}"
            if key not in arrays or arrays[key].shape != store[name].shape:
                raise TrainingError(f"optimizer state for {name!r} missing or mis-shaped in {path}")
            store[name] = arrays[key]
    return state


def _format_row(row: dict) -> str:
    cells = []
    for col in LOG_COLUMNS:
        v = row[col]
        if v is None:
            cells.append("")
        elif col == "epoch":
            cells.append(str(v))
        else:
            cells.append(repr(float(v)))
    return ",".join(cells)


def fit(train_bags, test_bags, model: AnomalyScorer, cfg: TrainConfig, out_dir,
        sel_cfg: SelectionConfig = SelectionConfig(),
        loss_cfg: LossConfig = LossConfig(),
        resume_from=None,
        progress=None) -> FitResult:
    """Train, evaluating every ``eval_every`` epochs; keeps the best-AUC and
    the final checkpoint plus a CSV log row per epoch.

    ``resume_from`` points at a previous run's output directory; its final
    checkpoint and optimizer state are loaded so the step counter continues.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.csv"
    best_path = out / "best.lwck"
    final_path = out / "final.lwck"
    state_path = out / "final_state.lwts"

    pos_bags = [b for b in train_bags if b.label == 1]
    neg_bags = [b for b in train_bags if b.label == 0]

    state = TrainState(model.params)
    if resume_from is not None:
        prev = Path(resume_from)
        restored = load_checkpoint(prev / "final.lwck", expected_config=model.config_dict())
        model.params.load_arrays(restored.params.state_arrays())
        state = load_train_state(prev / "final_state.lwts", model.params)

    seq = np.random.SeedSequence(cfg.seed)
    shuffle_seed, dropout_seed = seq.spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    dropout_rng = np.random.default_rng(dropout_seed)

    rows: list[dict] = []
    best_auc = state.best_auc
    saved_best = False
    with open(log_path, "w") as log:
        log.write(",".join(LOG_COLUMNS) + "\n")
        for epoch in range(1, cfg.epochs + 1):
            stats = train_epoch(
                pos_bags, neg_bags, model, state, cfg, sel_cfg, loss_cfg, shuffle_rng, dropout_rng
            )
            auc_value = None
            if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
                auc_value = evaluate_bags(test_bags, model).overall_auc
                if auc_value > best_auc:
                    best_auc = auc_value
                    save_checkpoint(best_path, model)
                    saved_best = True
            row = {
                "epoch": epoch,
                "ais": stats.ais,
                "smooth": stats.smooth,
                "antagonistic": stats.antagonistic,
                "sparsity": stats.sparsity,
                "total": stats.total,
                "auc": auc_value,
                "omega": stats.omega,
                "k": stats.k,
            }
            rows.append(row)
            log.write(_format_row(row) + "\n")
            log.flush()
            if progress is not None:
                progress(row)

    save_checkpoint(final_path, model)
    state.best_auc = best_auc
    save_train_state(state_path, state)
    if not saved_best:
        # nothing was ever evaluated (epochs=0 or no eval epochs improved):
        # the final weights double as the best ones
        shutil.copyfile(final_path, best_path)
    return FitResult(
        log_path=log_path,
        best_checkpoint=best_path,
        final_checkpoint=final_path,
        state_path=state_path,
        best_auc=best_auc,
        rows=rows,
    )
