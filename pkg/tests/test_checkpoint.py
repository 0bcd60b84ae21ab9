import json

import numpy as np
import pytest

from app.errors import CorruptCheckpoint, KeySetMismatch, VersionMismatch
from app.nn import Checkpoint, Network, build_network, load_checkpoint, miniature_config, save_checkpoint
from app.nn.checkpoint import MANIFEST, WEIGHTS


@pytest.fixture
def checkpoint():
    config = miniature_config(n_stages=3)
    rng = np.random.default_rng(0)
    params = build_network(config, rng)
    # non-default running statistics must survive the round trip too
    params["egm/head/bn1/moving_mean"] = rng.normal(size=params["egm/head/bn1/moving_mean"].shape)
    return Checkpoint(config, params, best_validation_accuracy=0.75, epoch_of_best=4)


def sample_batch(config):
    rng = np.random.default_rng(7)
    return rng.normal(size=(2, config.input_length, 1)), rng.normal(size=(2, config.input_length, 1))


def test_round_trip_is_bitwise(checkpoint, tmp_path):
    save_checkpoint(checkpoint, tmp_path / "ckpt")
    loaded = load_checkpoint(tmp_path / "ckpt")
    assert loaded.config == checkpoint.config
    assert (loaded.best_validation_accuracy, loaded.epoch_of_best) == (0.75, 4)
    assert loaded.params.keys() == checkpoint.params.keys()
    for name, tensor in checkpoint.params.items():
        assert loaded.params[name].tobytes() == tensor.tobytes(), name
    assert loaded.params.trainable_names() == checkpoint.params.trainable_names()

    egm, fft = sample_batch(checkpoint.config)
    before = Network(checkpoint.config, checkpoint.params).predict_proba(egm, fft)
    after = Network(loaded.config, loaded.params).predict_proba(egm, fft)
    assert np.array_equal(before, after)


def test_manifest_offsets_are_contiguous(checkpoint, tmp_path):
    save_checkpoint(checkpoint, tmp_path)
    entries = json.loads((tmp_path / MANIFEST).read_text())["tensors"]
    offset = 0
    for entry in entries:
        assert entry["offset"] == offset
        offset += entry["len"]
    assert (tmp_path / WEIGHTS).stat().st_size == 4 * offset


def test_truncated_blob(checkpoint, tmp_path):
    save_checkpoint(checkpoint, tmp_path)
    blob = (tmp_path / WEIGHTS).read_bytes()
    (tmp_path / WEIGHTS).write_bytes(blob[:-40])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path)


def test_missing_or_garbled_manifest(checkpoint, tmp_path):
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path / "nothing")
    save_checkpoint(checkpoint, tmp_path)
    (tmp_path / MANIFEST).write_text("{")
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path)


def test_version_mismatch(checkpoint, tmp_path):
    save_checkpoint(checkpoint, tmp_path)
    manifest = json.loads((tmp_path / MANIFEST).read_text())
    manifest["format_version"] = 2
    (tmp_path / MANIFEST).write_text(json.dumps(manifest))
    with pytest.raises(VersionMismatch):
        load_checkpoint(tmp_path)


def test_key_set_mismatch(checkpoint, tmp_path):
    save_checkpoint(checkpoint, tmp_path)
    with pytest.raises(KeySetMismatch):
        load_checkpoint(tmp_path, expected_config=miniature_config(n_stages=4))
    assert load_checkpoint(tmp_path, expected_config=miniature_config(n_stages=3)).config.n_stages == 3
