"""Labeled spectrogram datasets on disk: generation, encryption, manifests.

A dataset directory holds one SGRM file per sample plus a flat key=value
manifest. Everything is reproducible from (per_class, seed): each sample gets
its own sub-seed, and encrypted variants record the per-image key id (never
the key itself).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import crypt, rng, spectro
from .signals import Label, SynthConfig, synth_capture

MANIFEST_NAME = "manifest.txt"
SCHEMA_VERSION = 1


@dataclass
class SampleRecord:
    path: str  # relative to the dataset directory
    label: Label
    gain_db: float
    subseed: int
    key_id: str = ""  # hex, only for encrypted datasets


@dataclass
class DatasetManifest:
    seed: int
    per_class: int
    entries: list[SampleRecord] = field(default_factory=list)
    patch_size: int = 0  # nonzero once encrypted
    schema_version: int = SCHEMA_VERSION

    def counts(self) -> dict[Label, int]:
        out = {label: 0 for label in Label}
        for e in self.entries:
            out[e.label] += 1
        return out

    def labels(self) -> np.ndarray:
        return np.array([int(e.label) for e in self.entries], dtype=np.int64)


def serialize_manifest(manifest: DatasetManifest) -> str:
    lines = [
        f"schema_version={manifest.schema_version}",
        f"seed={manifest.seed}",
        f"per_class={manifest.per_class}",
        f"patch_size={manifest.patch_size}",
        f"count={len(manifest.entries)}",
    ]
    for i, e in enumerate(manifest.entries):
        lines.append(f"sample.{i}.path={e.path}")
        lines.append(f"sample.{i}.label={e.label.name}")
        lines.append(f"sample.{i}.gain_db={e.gain_db!r}")
        lines.append(f"sample.{i}.subseed={e.subseed}")
        if e.key_id:
            lines.append(f"sample.{i}.key_id={e.key_id}")
    return "\n".join(lines) + "\n"


def parse_manifest(text: str) -> DatasetManifest:
    kv: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"manifest line {lineno} is not key=value: {line!r}")
        k, _, v = line.partition("=")
        kv[k.strip()] = v.strip()
    count = int(kv["count"])
    manifest = DatasetManifest(
        seed=int(kv["seed"]),
        per_class=int(kv["per_class"]),
        patch_size=int(kv.get("patch_size", "0")),
        schema_version=int(kv.get("schema_version", "1")),
    )
    for i in range(count):
        manifest.entries.append(SampleRecord(
            path=kv[f"sample.{i}.path"],
            label=Label.parse(kv[f"sample.{i}.label"]),
            gain_db=float(kv[f"sample.{i}.gain_db"]),
            subseed=int(kv[f"sample.{i}.subseed"]),
            key_id=kv.get(f"sample.{i}.key_id", ""),
        ))
    return manifest


def save_manifest(manifest: DatasetManifest, out_dir: str) -> str:
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_manifest(manifest))
    return path


def load_manifest(directory: str) -> DatasetManifest:
    with open(os.path.join(directory, MANIFEST_NAME), "r", encoding="utf-8") as fh:
        return parse_manifest(fh.read())


def synth_sample(label: Label, gain_db: float, subseed: int,
                 synth: SynthConfig | None = None,
                 stft: spectro.StftConfig | None = None) -> spectro.Spectrogram:
    """One labeled spectrogram, fully determined by (label, gain_db, subseed)."""
    base = synth or SynthConfig()
    cfg = replace(base, label=label, interferer_gain_db=gain_db, rng_seed=subseed)
    return spectro.spectrogram(synth_capture(cfg), stft, label=label)


def make_dataset(per_class: int, seed: int, out_dir: str,
                 synth: SynthConfig | None = None,
                 stft: spectro.StftConfig | None = None) -> DatasetManifest:
    """Write per_class samples for each of SOI / CWI / CI plus a manifest.

    Interferer gains are uniform in [30, 40] dB; every sample's content is a
    pure function of its sub-seed, so reruns are byte-identical.
    """
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    os.makedirs(out_dir, exist_ok=True)
    stream = rng.substream(seed, "dataset")
    manifest = DatasetManifest(seed=seed, per_class=per_class)
    for label in Label:
        subdir = label.name.lower()
        os.makedirs(os.path.join(out_dir, subdir), exist_ok=True)
        for i in range(per_class):
            subseed = stream.next()
            if label == Label.SOI:
                gain = 0.0
            else:
                gain = float(rng.numpy_generator(subseed, "gain").uniform(30.0, 40.0))
            image = synth_sample(label, gain, subseed, synth, stft)
            rel = f"{subdir}/{label.name.lower()}_{i:05d}.sgrm"
            spectro.save(image, os.path.join(out_dir, rel))
            manifest.entries.append(SampleRecord(rel, label, gain, subseed))
    save_manifest(manifest, out_dir)
    return manifest


def encrypt_dataset(in_dir: str, out_dir: str, patch_size: int, seed: int,
                    keys_out: str | None = None, *,
                    grid_only: bool = False) -> DatasetManifest:
    """Encrypt every sample with a fresh per-image key drawn from one stream.

    Keys are discarded unless `keys_out` names an escrow directory (test mode),
    in which case each key is written as <key_id hex>.skey.
    """
    manifest = load_manifest(in_dir)
    os.makedirs(out_dir, exist_ok=True)
    if keys_out:
        os.makedirs(keys_out, exist_ok=True)
    key_stream = rng.substream(seed, "keys")
    out = DatasetManifest(seed=seed, per_class=manifest.per_class, patch_size=patch_size)
    for entry in manifest.entries:
        image = spectro.load(os.path.join(in_dir, entry.path), label=entry.label)
        key = crypt.fresh_key(key_stream, patch_size)
        enc = crypt.encrypt(image, key, grid_only=grid_only)
        rel_dir = os.path.dirname(entry.path)
        if rel_dir:
            os.makedirs(os.path.join(out_dir, rel_dir), exist_ok=True)
        spectro.save(spectro.Spectrogram(enc.pixels, label=entry.label),
                     os.path.join(out_dir, entry.path))
        key_id = enc.key_id.hex()
        if keys_out:
            crypt.save_key(key, os.path.join(keys_out, f"{key_id}.skey"))
        out.entries.append(replace(entry, key_id=key_id))
    save_manifest(out, out_dir)
    return out


def decrypt_dataset(in_dir: str, out_dir: str, keys_dir: str) -> DatasetManifest:
    """Inverse of encrypt_dataset given the escrowed keys (test mode only)."""
    manifest = load_manifest(in_dir)
    if manifest.patch_size == 0:
        raise ValueError("manifest does not describe an encrypted dataset")
    os.makedirs(out_dir, exist_ok=True)
    out = DatasetManifest(seed=manifest.seed, per_class=manifest.per_class)
    for entry in manifest.entries:
        key = crypt.load_key(os.path.join(keys_dir, f"{entry.key_id}.skey"))
        image = spectro.load(os.path.join(in_dir, entry.path), label=entry.label)
        enc = crypt.EncryptedSpectrogram(image.pixels, manifest.patch_size,
                                         bytes.fromhex(entry.key_id), label=entry.label)
        plain = crypt.decrypt(enc, key)
        rel_dir = os.path.dirname(entry.path)
        if rel_dir:
            os.makedirs(os.path.join(out_dir, rel_dir), exist_ok=True)
        spectro.save(plain, os.path.join(out_dir, entry.path))
        out.entries.append(replace(entry, key_id=""))
    save_manifest(out, out_dir)
    return out


def load_images(directory: str, entries: list[SampleRecord] | None = None
                ) -> tuple[np.ndarray, np.ndarray]:
    """Stack a dataset (or a subset of entries) into (N,H,W,C) pixels + labels."""
    manifest_entries = entries if entries is not None else load_manifest(directory).entries
    if not manifest_entries:
        raise ValueError(f"no samples listed for {directory}")
    images = []
    labels = np.empty(len(manifest_entries), dtype=np.int64)
    for i, entry in enumerate(manifest_entries):
        images.append(spectro.load(os.path.join(directory, entry.path)).pixels)
        labels[i] = int(entry.label)
    return np.stack(images), labels
