"""Dataset generation, manifests, and directory encryption round trips."""

import os

import numpy as np
import pytest

from ricshield import dataset, spectro
from ricshield.dataset import (DatasetManifest, SampleRecord, encrypt_dataset,
                               decrypt_dataset, load_images, load_manifest,
                               make_dataset, parse_manifest, serialize_manifest)
from ricshield.signals import Label, SynthConfig

FAST_SYNTH = SynthConfig(capture_duration_s=0.005)


def tree_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in sorted(files):
            path = os.path.join(dirpath, name)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = fh.read()
    return out


def test_make_dataset_counts_and_manifest(tmp_path):
    manifest = make_dataset(2, 7, str(tmp_path / "ds"), synth=FAST_SYNTH)
    assert len(manifest.entries) == 6
    assert manifest.counts() == {Label.SOI: 2, Label.CWI: 2, Label.CI: 2}
    reloaded = load_manifest(str(tmp_path / "ds"))
    assert reloaded.entries == manifest.entries
    images, labels = load_images(str(tmp_path / "ds"))
    assert images.shape == (6, 128, 128, 3)
    assert np.array_equal(np.sort(labels), [0, 0, 1, 1, 2, 2])


def test_make_dataset_is_byte_identical_across_runs(tmp_path):
    make_dataset(1, 99, str(tmp_path / "a"), synth=FAST_SYNTH)
    make_dataset(1, 99, str(tmp_path / "b"), synth=FAST_SYNTH)
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_make_dataset_gain_range_and_per_class_dirs(tmp_path):
    manifest = make_dataset(3, 5, str(tmp_path / "ds"), synth=FAST_SYNTH)
    for e in manifest.entries:
        if e.label == Label.SOI:
            assert e.gain_db == 0.0
        else:
            assert 30.0 <= e.gain_db <= 40.0
        assert e.path.startswith(e.label.name.lower() + "/")


def test_make_dataset_rejects_bad_per_class(tmp_path):
    with pytest.raises(ValueError):
        make_dataset(0, 1, str(tmp_path / "x"))


def test_manifest_text_round_trip():
    manifest = DatasetManifest(seed=3, per_class=1, patch_size=8, entries=[
        SampleRecord("soi/a.sgrm", Label.SOI, 0.0, 123, key_id="ab" * 16)])
    text = serialize_manifest(manifest)
    back = parse_manifest(text)
    assert back == manifest
    with pytest.raises(ValueError):
        parse_manifest("not a manifest line\n" + text)


def test_encrypt_dataset_round_trip_via_escrow(tmp_path):
    plain = str(tmp_path / "plain")
    enc = str(tmp_path / "enc")
    keys = str(tmp_path / "keys")
    back = str(tmp_path / "back")
    make_dataset(1, 11, plain, synth=FAST_SYNTH)
    manifest = encrypt_dataset(plain, enc, 16, 42, keys_out=keys)
    assert manifest.patch_size == 16
    key_ids = [e.key_id for e in manifest.entries]
    assert len(set(key_ids)) == len(key_ids)  # fresh key per image
    for kid in key_ids:
        assert os.path.exists(os.path.join(keys, f"{kid}.skey"))
    # ciphertext differs from plaintext
    p_imgs, _ = load_images(plain)
    e_imgs, _ = load_images(enc)
    assert not np.array_equal(p_imgs, e_imgs)
    decrypt_dataset(enc, back, keys)
    b_imgs, _ = load_images(back)
    assert np.array_equal(b_imgs, p_imgs)


def test_encrypt_dataset_deterministic(tmp_path):
    plain = str(tmp_path / "plain")
    make_dataset(1, 4, plain, synth=FAST_SYNTH)
    encrypt_dataset(plain, str(tmp_path / "e1"), 8, 77)
    encrypt_dataset(plain, str(tmp_path / "e2"), 8, 77)
    assert tree_bytes(tmp_path / "e1") == tree_bytes(tmp_path / "e2")


def test_decrypt_requires_encrypted_manifest(tmp_path):
    plain = str(tmp_path / "plain")
    make_dataset(1, 4, plain, synth=FAST_SYNTH)
    with pytest.raises(ValueError):
        decrypt_dataset(plain, str(tmp_path / "out"), str(tmp_path / "keys"))
