"""Shared fixtures: the desk-scale dataset and trained models.

Training the desk-scale models takes tens of minutes, so artifacts are cached
under tests/_artifacts keyed by a generation tag; delete the directory (or set
RICSHIELD_TEST_CACHE=0) to force a full rebuild. Every cached artifact is
produced by exactly the code paths under test.
"""

import os

import numpy as np
import pytest

from ricshield import dataset, harness, models

# bump when dataset knobs or the training protocol change
GENERATION = "g5e-3_duty_v1"
SEED = 42
PER_CLASS = harness.DESK_SAMPLES_PER_CLASS


def _cache_root():
    if os.environ.get("RICSHIELD_TEST_CACHE", "1") == "0":
        return None
    return os.path.join(os.path.dirname(__file__), "_artifacts", GENERATION)


@pytest.fixture(scope="session")
def artifact_dir(tmp_path_factory):
    root = _cache_root()
    if root is None:
        root = str(tmp_path_factory.mktemp("artifacts"))
    os.makedirs(root, exist_ok=True)
    return root


@pytest.fixture(scope="session")
def plain_dataset(artifact_dir):
    path = os.path.join(artifact_dir, "plain")
    if not os.path.exists(os.path.join(path, dataset.MANIFEST_NAME)):
        dataset.make_dataset(PER_CLASS, SEED, path)
    return path


def _encrypted(artifact_dir, plain_dir, patch):
    path = os.path.join(artifact_dir, f"enc_p{patch}")
    if not os.path.exists(os.path.join(path, dataset.MANIFEST_NAME)):
        dataset.encrypt_dataset(plain_dir, path, patch, SEED)
    return path


@pytest.fixture(scope="session")
def enc16_dataset(artifact_dir, plain_dataset):
    return _encrypted(artifact_dir, plain_dataset, 16)


@pytest.fixture(scope="session")
def splits16(enc16_dataset):
    return harness.load_splits(enc16_dataset, SEED)


def _trained(artifact_dir, enc_dir, arch, patch, verbose=True):
    path = os.path.join(artifact_dir, f"{arch}_p{patch}.nnck")
    if os.path.exists(path):
        return models.load_model(path)
    splits = harness.load_splits(enc_dir, SEED)
    if arch == "vit":
        model = models.build_vit(models.ViTConfig(patch_size=patch), SEED)
    else:
        model = models.build_cnn(models.CnnConfig(), SEED)
    cfg = harness.desk_train_config(SEED)
    history = models.train(model, splits.train, splits.val, cfg, verbose=verbose)
    models.save_model(model, path)
    history.to_csv(os.path.join(artifact_dir, f"{arch}_p{patch}_history.csv"))
    return model


@pytest.fixture(scope="session")
def trained_vit16(artifact_dir, enc16_dataset):
    return _trained(artifact_dir, enc16_dataset, "vit", 16)


@pytest.fixture(scope="session")
def trained_cnn16(artifact_dir, enc16_dataset):
    return _trained(artifact_dir, enc16_dataset, "cnn", 16)
