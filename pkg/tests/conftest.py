"""Shared fixtures: a small synthetic corpus and a briefly trained model."""

from __future__ import annotations

import pytest

from wsvad.data import SyntheticSpec, load_bags, make_synthetic
from wsvad.model import AnomalyScorer, HfcConfig, MtaConfig
from wsvad.training import TrainConfig, fit

TINY_SPEC = SyntheticSpec(
    n_normal=12,
    n_abnormal=12,
    n_test_normal=6,
    n_test_abnormal=6,
    clip_count=16,
    feature_dim=24,
    anomaly_span=(2, 5),
    seed=5,
)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_data")
    train_manifest, test_manifest = make_synthetic(TINY_SPEC, root)
    return {"root": root, "train": train_manifest, "test": test_manifest}


@pytest.fixture(scope="session")
def tiny_bags(tiny_dataset):
    return {
        "train": load_bags(tiny_dataset["train"]),
        "test": load_bags(tiny_dataset["test"]),
    }


def make_tiny_model(seed: int = 7) -> AnomalyScorer:
    return AnomalyScorer(
        HfcConfig.for_feature_dim(TINY_SPEC.feature_dim),
        MtaConfig(),
        seed=seed,
    )


@pytest.fixture(scope="session")
def trained_tiny(tiny_bags, tmp_path_factory):
    """A model fitted for a few epochs on the tiny corpus, plus its run dir."""
    out = tmp_path_factory.mktemp("tiny_run")
    model = make_tiny_model()
    cfg = TrainConfig(epochs=8, batch_pairs=8, seed=7)
    result = fit(tiny_bags["train"], tiny_bags["test"], model, cfg, out)
    return {"model": model, "result": result, "out": out, "cfg": cfg}
