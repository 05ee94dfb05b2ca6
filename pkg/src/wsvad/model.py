"""The clip-scoring network.

Two stages run per bag of T clip feature rows. The temporal attention stage
pools each clip's features to one scalar, slides 1-d convolutions of every
odd width from ``k_max`` down to 3 along the clip axis, passes each response
through a leaky ReLU, and sums them into per-clip attention logits scaled by
``lambda1``; ``residual`` mode rescales clips by (1 + attention), so
zero-valued kernels leave features untouched, while ``pure`` mode rescales
by the attention alone. The scoring head then maps every (attended) clip
row through a narrow-then-wide MLP ending in a sigmoid, one anomaly score
per clip. The hourglass widening (64 -> 128) is what keeps the head small
next to a conventional wide-then-narrow head.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import (
    ConfigurationError,
    DimensionError,
    Parameter,
    Tensor,
    conv1d_same,
    dropout,
    global_avg_pool,
    leaky_relu,
    linear,
    scale_rows,
    sigmoid,
)

MTA_MODES = ("residual", "pure")
HEAD_SHAPES = ("hourglass", "conventional")


@dataclass(frozen=True)
class MtaConfig:
    """Multi-width temporal attention settings."""

    k_max: int = 5          # largest conv width; also generates k_max-2, ... down to 3
    lambda1: float = 0.1    # attention scale
    slope: float = 0.5      # leaky ReLU slope
    mode: str = "residual"  # "residual" rescales by 1 + attention, "pure" by attention

    def __post_init__(self):
        if self.k_max < 3 or self.k_max % 2 == 0:
            raise ConfigurationError(f"k_max must be odd and >= 3, got {self.k_max}")
        if self.lambda1 <= 0:
            raise ConfigurationError(f"lambda1 must be positive, got {self.lambda1}")
        if not 0.0 <= self.slope < 1.0:
            raise ConfigurationError(f"slope must be in [0, 1), got {self.slope}")
        if self.mode not in MTA_MODES:
            raise ConfigurationError(f"mode must be one of {MTA_MODES}, got {self.mode!r}")

    @property
    def kernel_sizes(self) -> tuple[int, ...]:
        return tuple(range(self.k_max, 2, -2))


@dataclass(frozen=True)
class HfcConfig:
    """Per-clip scoring head settings; dims run input -> hidden -> hidden -> 1."""

    dims: tuple[int, ...] = (2048, 64, 128, 1)
    dropout: float = 0.5
    head_shape: str = "hourglass"
    slope: float = 0.5

    def __post_init__(self):
        dims = tuple(int(v) for v in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) != 4:
            raise ConfigurationError(f"head dims must have 4 entries, got {dims}")
        if any(v < 1 for v in dims):
            raise ConfigurationError(f"head dims must be positive, got {dims}")
        if dims[-1] != 1:
            raise ConfigurationError(f"head must end in one score unit, got {dims}")
        if self.head_shape not in HEAD_SHAPES:
            raise ConfigurationError(f"head_shape must be one of {HEAD_SHAPES}, got {self.head_shape!r}")
        if self.head_shape == "hourglass" and not dims[1] < dims[2]:
            raise ConfigurationError(f"hourglass head needs ascending middle widths, got {dims}")
        if self.head_shape == "conventional" and not dims[1] > dims[2]:
            raise ConfigurationError(f"conventional head needs descending middle widths, got {dims}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 0.0 <= self.slope < 1.0:
            raise ConfigurationError(f"slope must be in [0, 1), got {self.slope}")

    @classmethod
    def for_feature_dim(cls, feature_dim, head_shape="hourglass", narrow=64, wide=128,
                        dropout=0.5, slope=0.5):
        if head_shape == "hourglass":
            dims = (feature_dim, narrow, wide, 1)
        else:
            dims = (feature_dim, wide, narrow, 1)
        return cls(dims=dims, dropout=dropout, head_shape=head_shape, slope=slope)


class ModelParameters:
    """Registry of named trainable tensors with a countable audit surface."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def register(self, name: str, values) -> Parameter:
        if name in self._params:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        p = Parameter(np.asarray(values, dtype=np.float64), name=name)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Parameter]:
        return list(self._params.values())

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def count_entries(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise CheckpointError(f"parameter names mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in self._params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise CheckpointError(
                    f"parameter {name!r} shape {arr.shape} does not match expected {p.data.shape}"
                )
            p.data[...] = arr


def init_parameters(mta_cfg: MtaConfig | None, hfc_cfg: HfcConfig, seed: int = 0) -> ModelParameters:
    """Fresh registry: zero attention kernels (identity start in residual
    mode), uniform +/- 1/sqrt(fan_in) for the head's weights and biases."""
    rng = np.random.default_rng(seed)
    params = ModelParameters()
    if mta_cfg is not None:
        for k in mta_cfg.kernel_sizes:
            params.register(f"mta.conv{k}.weight", np.zeros(k))
            params.register(f"mta.conv{k}.bias", np.zeros(1))
    dims = hfc_cfg.dims
    for i, (din, dout) in enumerate(zip(dims, dims[1:])):
        bound = 1.0 / np.sqrt(din)
        params.register(f"head.{i}.weight", rng.uniform(-bound, bound, size=(din, dout)))
        params.register(f"head.{i}.bias", rng.uniform(-bound, bound, size=dout))
    return params


def count_parameters(mta_cfg: MtaConfig | None, hfc_cfg: HfcConfig) -> int:
    """Closed-form trainable parameter count for the configured model."""
    total = 0
    if mta_cfg is not None:
        total += sum(k + 1 for k in mta_cfg.kernel_sizes)
    dims = hfc_cfg.dims
    total += sum(din * dout + dout for din, dout in zip(dims, dims[1:]))
    return total


def mta_forward(x, cfg: MtaConfig, params: ModelParameters):
    """Attend a (T, D) bag along the clip axis; returns rescaled features."""
    xv = x.data if isinstance(x, Tensor) else np.asarray(x)
    t = xv.shape[0]
    if t < cfg.k_max:
        raise ConfigurationError(f"bag has {t} clips but the largest kernel needs {cfg.k_max}")
    g = global_avg_pool(x)
    logits = None
    for k in cfg.kernel_sizes:
        c = conv1d_same(g, params[f"mta.conv{k}.weight"], params[f"mta.conv{k}.bias"])
        a = leaky_relu(c, cfg.slope)
        logits = a if logits is None else logits + a
    s = logits * cfg.lambda1
    if cfg.mode == "pure":
        return scale_rows(x, s)
    return scale_rows(x, s + 1.0)


def hfc_forward(y, cfg: HfcConfig, params: ModelParameters, training: bool = False, rng=None):
    """Score each clip row of a (T, D) tensor; returns scores of shape (T,).

    Layer pattern: linear -> leaky ReLU -> dropout for both hidden layers,
    then linear -> sigmoid. Dropout only fires when ``training``.
    """
    yv = y.data if isinstance(y, Tensor) else np.asarray(y)
    if yv.ndim != 2 or yv.shape[1] != cfg.dims[0]:
        raise DimensionError(f"head expects (T, {cfg.dims[0]}) features, got shape {yv.shape}")
    t = yv.shape[0]
    h = y
    n_layers = len(cfg.dims) - 1
    for i in range(n_layers):
        h = linear(h, params[f"head.{i}.weight"], params[f"head.{i}.bias"])
        if i < n_layers - 1:
            h = leaky_relu(h, cfg.slope)
            h = dropout(h, cfg.dropout, training, rng)
    return sigmoid(h).reshape(t)


class AnomalyScorer:
    """Configs plus parameters, bundled behind a per-bag scoring call."""

    def __init__(self, hfc_cfg: HfcConfig, mta_cfg: MtaConfig | None = None,
                 seed: int = 0, params: ModelParameters | None = None):
        self.hfc_cfg = hfc_cfg
        self.mta_cfg = mta_cfg
        self.params = params if params is not None else init_parameters(mta_cfg, hfc_cfg, seed)
        expected = count_parameters(mta_cfg, hfc_cfg)
        actual = self.params.count_entries()
        if expected != actual:
            raise ConfigurationError(
                f"parameter registry holds {actual} entries but the configuration implies {expected}"
            )

    @property
    def use_mta(self) -> bool:
        return self.mta_cfg is not None

    @property
    def feature_dim(self) -> int:
        return self.hfc_cfg.dims[0]

    def score_bag(self, features, training: bool = False, rng=None):
        """Returns (clip scores (T,), attended features (T, D))."""
        attended = mta_forward(features, self.mta_cfg, self.params) if self.use_mta else features
        scores = hfc_forward(attended, self.hfc_cfg, self.params, training=training, rng=rng)
        return scores, attended

    def config_dict(self) -> dict:
        return {
            "mta": asdict(self.mta_cfg) if self.mta_cfg is not None else None,
            "hfc": asdict(self.hfc_cfg),
        }


# ---------------------------------------------------------------------------
# checkpoint container
#
# layout (little endian): magic | u16 version | u32 json length | config JSON
# | u32 tensor count | per tensor: u16 name length, name utf-8, u8 ndim,
# ndim x u32 dims, payload f64.

CHECKPOINT_MAGIC = b"LWCK"
STATE_MAGIC = b"LWTS"
CONTAINER_VERSION = 1


class CheckpointError(ValueError):
    """A checkpoint file is malformed or does not match the expected config."""


def write_container(path, magic: bytes, config: dict, arrays: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    cfg_bytes = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<HI", CONTAINER_VERSION, len(cfg_bytes)))
        fh.write(cfg_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return path


def read_container(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    blob = path.read_bytes()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError(f"{path}: truncated while reading {what}")
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    if take(len(magic), "magic") != magic:
        raise CheckpointError(f"{path}: bad magic, expected {magic!r}")
    version, cfg_len = struct.unpack("<HI", take(6, "header"))
    if version != CONTAINER_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    config = json.loads(take(cfg_len, "config block").decode("utf-8"))
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1, "ndim"))
        shape = tuple(struct.unpack("<I", take(4, "dim"))[0] for _ in range(ndim))
        n_values = int(np.prod(shape)) if shape else 1
        payload = take(8 * n_values, f"tensor {name!r}")
        arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    if pos != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after last tensor")
    return config, arrays


def _normalize_config(config: dict) -> dict:
    # round-trip through JSON so tuples compare equal to lists
    return json.loads(json.dumps(config, sort_keys=True))


def save_checkpoint(path, model: AnomalyScorer) -> Path:
    return write_container(path, CHECKPOINT_MAGIC, model.config_dict(), model.params.state_arrays())


def load_checkpoint(path, expected_config: dict | None = None) -> AnomalyScorer:
    """Rebuild a model from a checkpoint; rejects config mismatches."""
    config, arrays = read_container(path, CHECKPOINT_MAGIC)
    if expected_config is not None and _normalize_config(expected_config) != _normalize_config(config):
        raise CheckpointError(
            f"{path}: checkpoint config {config} does not match expected {_normalize_config(expected_config)}"
        )
    mta_cfg = MtaConfig(**config["mta"]) if config.get("mta") else None
    hfc_raw = dict(config["hfc"])
    hfc_raw["dims"] = tuple(hfc_raw["dims"])
    hfc_cfg = HfcConfig(**hfc_raw)
    params = init_parameters(mta_cfg, hfc_cfg, seed=0)
    params.load_arrays(arrays)
    return AnomalyScorer(hfc_cfg, mta_cfg, params=params)
