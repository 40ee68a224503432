"""Keyed shuffling cipher for spectrograms: grid relocation, then per-grid pixel shuffling.

Keys are compact (master seed + patch size); both permutation stages are
re-derived on demand from one SplitMix64 stream, so a key file is 14 bytes and
the derivation is portable. Both stages are bijections, so decryption is exact.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import rng as rng_mod
from .rng import SplitMix64, fisher_yates, fisher_yates_from_draws
from .signals import Label
from .spectro import Spectrogram

SKEY_MAGIC = b"SKEY"
SKEY_VERSION = 1


class GridSizeError(ValueError):
    """Patch size does not tile the image."""


@dataclass(frozen=True)
class ShuffleKey:
    master_seed: int
    patch_size: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "master_seed", int(self.master_seed))
        object.__setattr__(self, "patch_size", int(self.patch_size))
        if not 0 <= self.master_seed < 2 ** 64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.patch_size < 1:
            raise ValueError("patch_size must be positive")

    def key_id(self) -> bytes:
        """16-byte opaque identifier; reveals nothing about the seed."""
        raw = struct.pack("<QI", self.master_seed, self.patch_size)
        return hashlib.blake2b(raw, digest_size=16).digest()


@dataclass
class EncryptedSpectrogram:
    pixels: np.ndarray  # same shape/range as the plaintext
    patch_size: int
    key_id: bytes
    label: Label | None = None

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=np.float32)


def _check_divides(patch: int, height: int, width: int) -> None:
    if height % patch != 0:
        raise GridSizeError(f"patch_size {patch} does not divide height {height}")
    if width % patch != 0:
        raise GridSizeError(f"patch_size {patch} does not divide width {width}")


def grid_rows(pixels: np.ndarray, patch: int) -> np.ndarray:
    """Flatten an image into (G, patch*patch*C) rows.

    Grids are taken in row-major grid order; within a grid, positions are
    flattened in (row, column, channel) order. The ViT patch extractor uses
    this same geometry, which is what aligns one encrypted grid with exactly
    one transformer patch.
    """
    h, w, c = pixels.shape
    _check_divides(patch, h, w)
    gh, gw = h // patch, w // patch
    blocks = pixels.reshape(gh, patch, gw, patch, c).transpose(0, 2, 1, 3, 4)
    return blocks.reshape(gh * gw, patch * patch * c)


def from_grid_rows(rows: np.ndarray, height: int, width: int, channels: int,
                   patch: int) -> np.ndarray:
    gh, gw = height // patch, width // patch
    blocks = rows.reshape(gh, gw, patch, patch, channels).transpose(0, 2, 1, 3, 4)
    return blocks.reshape(height, width, channels)


def derive_permutations(key: ShuffleKey, height: int, width: int,
                        channels: int) -> tuple[np.ndarray, np.ndarray]:
    """Expand a key into its grid permutation and per-grid pixel permutations.

    Normative derivation: one SplitMix64 stream seeded with the master seed
    drives a Fisher-Yates shuffle over the G grid indices, then (continuing
    the same stream) one Fisher-Yates shuffle per grid, in grid-index order,
    over the patch*patch*channels flattened positions.

    Results are memoized per (key, dims) and returned read-only.
    """
    _check_divides(key.patch_size, height, width)
    return _derive_cached(key.master_seed, key.patch_size, height, width, channels)


@lru_cache(maxsize=512)
def _derive_cached(master_seed: int, patch: int, height: int, width: int,
                   channels: int) -> tuple[np.ndarray, np.ndarray]:
    grids = (height // patch) * (width // patch)
    positions = patch * patch * channels
    draws = rng_mod.splitmix64_block(
        master_seed, max(0, grids - 1) + grids * max(0, positions - 1)).tolist()
    order, offset = fisher_yates_from_draws(grids, draws, 0)
    grid_perm = np.array(order, dtype=np.int64)
    pixel_perms = np.empty((grids, positions), dtype=np.int64)
    for g in range(grids):
        perm, offset = fisher_yates_from_draws(positions, draws, offset)
        pixel_perms[g] = perm
    grid_perm.flags.writeable = False
    pixel_perms.flags.writeable = False
    return grid_perm, pixel_perms


def encrypt(image: Spectrogram, key: ShuffleKey, *,
            grid_only: bool = False) -> EncryptedSpectrogram:
    """Grid shuffle then pixel shuffle; `grid_only` skips the pixel stage.

    Destination grid g receives source grid grid_perm[g]; position q of the
    destination grid receives incoming position pixel_perms[g][q].
    """
    h, w, c = image.pixels.shape
    grid_perm, pixel_perms = derive_permutations(key, h, w, c)
    rows = grid_rows(image.pixels, key.patch_size)[grid_perm]
    if not grid_only:
        rows = np.take_along_axis(rows, pixel_perms, axis=1)
    out = from_grid_rows(rows, h, w, c, key.patch_size)
    return EncryptedSpectrogram(out, key.patch_size, key.key_id(), label=image.label)


def decrypt(enc: EncryptedSpectrogram, key: ShuffleKey, *,
            grid_only: bool = False) -> Spectrogram:
    """Exact inverse of encrypt under the same key."""
    if key.patch_size != enc.patch_size:
        raise GridSizeError(
            f"key patch_size {key.patch_size} != ciphertext patch_size {enc.patch_size}"
        )
    h, w, c = enc.pixels.shape
    grid_perm, pixel_perms = derive_permutations(key, h, w, c)
    rows = grid_rows(enc.pixels, key.patch_size)
    if not grid_only:
        inverse = np.argsort(pixel_perms, axis=1)
        rows = np.take_along_axis(rows, inverse, axis=1)
    rows = rows[np.argsort(grid_perm)]
    out = from_grid_rows(rows, h, w, c, key.patch_size)
    return Spectrogram(out, label=enc.label)


def fresh_key(seed_stream: SplitMix64 | int, patch_size: int) -> ShuffleKey:
    """New key with a master seed drawn from the given stream.

    Pass a SplitMix64 to draw successive distinct keys; an integer builds a
    single-use stream (handy at call sites that only need one key).
    """
    stream = seed_stream if isinstance(seed_stream, SplitMix64) else SplitMix64(seed_stream)
    return ShuffleKey(stream.next(), patch_size)


def key_to_bytes(key: ShuffleKey) -> bytes:
    """Normative SKEY encoding: magic, u16le version, u64le seed, u32le patch."""
    return SKEY_MAGIC + struct.pack("<HQI", SKEY_VERSION, key.master_seed, key.patch_size)


def key_from_bytes(blob: bytes) -> ShuffleKey:
    if len(blob) != 18 or blob[:4] != SKEY_MAGIC:
        raise ValueError("not an SKEY blob")
    version, seed, patch = struct.unpack("<HQI", blob[4:])
    if version != SKEY_VERSION:
        raise ValueError(f"unsupported SKEY version {version}")
    return ShuffleKey(seed, patch)


def save_key(key: ShuffleKey, path) -> None:
    with open(path, "wb") as fh:
        fh.write(key_to_bytes(key))


def load_key(path) -> ShuffleKey:
    with open(path, "rb") as fh:
        return key_from_bytes(fh.read())
