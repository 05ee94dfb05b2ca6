"""Flat key=value run configuration.

One file drives a whole run: ``key=value`` lines, ``#`` comments, unknown
keys rejected. The same ``key=value`` strings work as command-line
overrides, and the effective configuration can be echoed back out in a form
that parses to an equal config.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .autodiff import ConfigurationError
from .losses import LossConfig
from .model import AnomalyScorer, HfcConfig, MtaConfig
from .selection import SelectionConfig
from .training import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    # data / paths
    train_manifest: str = ""
    test_manifest: str = ""
    out_dir: str = "runs/default"
    feature_dim: int = 2048
    # model
    use_mta: bool = True
    k_max: int = 5
    lambda1: float = 0.1
    leaky_slope: float = 0.5
    mta_mode: str = "residual"
    head_shape: str = "hourglass"
    hidden_narrow: int = 64
    hidden_wide: int = 128
    dropout: float = 0.5
    # selection
    use_ais: bool = True
    score_threshold: float = 0.9
    magnitude_source: str = "attended"
    # losses
    use_antagonistic: bool = True
    use_sparsity: bool = False
    smooth_on_both: bool = False
    # optimization
    lr: float = 0.001
    weight_decay: float = 0.0005
    batch_pairs: int = 32
    epochs: int = 200
    seed: int = 7
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_every: int = 1

    def mta_config(self) -> MtaConfig | None:
        if not self.use_mta:
            return None
        return MtaConfig(k_max=self.k_max, lambda1=self.lambda1, slope=self.leaky_slope, mode=self.mta_mode)

    def hfc_config(self) -> HfcConfig:
        return HfcConfig.for_feature_dim(
            self.feature_dim,
            head_shape=self.head_shape,
            narrow=self.hidden_narrow,
            wide=self.hidden_wide,
            dropout=self.dropout,
            slope=self.leaky_slope,
        )

    def selection_config(self) -> SelectionConfig:
        return SelectionConfig(
            threshold=self.score_threshold,
            adaptive=self.use_ais,
            magnitude_source=self.magnitude_source,
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(
            use_antagonistic=self.use_antagonistic,
            use_sparsity=self.use_sparsity,
            smooth_on_both=self.smooth_on_both,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            weight_decay=self.weight_decay,
            batch_pairs=self.batch_pairs,
            epochs=self.epochs,
            seed=self.seed,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps,
            eval_every=self.eval_every,
        )

    def build_model(self) -> AnomalyScorer:
        return AnomalyScorer(self.hfc_config(), self.mta_config(), seed=self.seed)


_FIELDS = {f.name: f.type for f in fields(RunConfig)}
_TRUE_WORDS = {"true", "1", "yes", "on"}
_FALSE_WORDS = {"false", "0", "no", "off"}


def _parse_value(key: str, text: str):
    kind = _FIELDS.get(key)
    if kind is None:
        raise ConfigurationError(f"unknown config key {key!r}")
    text = text.strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low in _TRUE_WORDS:
                return True
            if low in _FALSE_WORDS:
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        return text
    except ValueError:
        raise ConfigurationError(f"config key {key!r} expects a {kind}, got {text!r}") from None


def _parse_pair(line: str) -> tuple[str, str]:
    if "=" not in line:
        raise ConfigurationError(f"expected key=value, got {line!r}")
    key, text = line.split("=", 1)
    return key.strip(), text


def load_run_config(path=None, overrides=()) -> RunConfig:
    """Read a config file (optional) and apply ``key=value`` overrides on top."""
    values: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        for raw in path.read_text().splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, text = _parse_pair(line)
            values[key] = _parse_value(key, text)
    for raw in overrides:
        key, text = _parse_pair(raw)
        values[key] = _parse_value(key, text)
    return RunConfig(**values)


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def run_config_to_text(cfg: RunConfig) -> str:
    lines = [f"{f.name}={_format_value(getattr(cfg, f.name))}" for f in fields(RunConfig)]
    return "\n".join(lines) + "\n"


def write_run_config(path, cfg: RunConfig) -> Path:
    path = Path(path)
    path.write_text(run_config_to_text(cfg))
    return path
