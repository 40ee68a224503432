"""IQ-to-spectrogram conversion and the SGRM image file format.

The rendering is fixed: magnitude-squared STFT (periodic Hann 256, hop 128),
dB relative to the image's own maximum, clipped to [-80, 0] dB, mapped to
[0, 1], bilinearly resampled to 128x128 and replicated to 3 channels. Row 0
is -fs/2 after an fftshift, so frequency grows downward the array.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .signals import IqBuffer, Label

SGRM_MAGIC = b"SGRM"


@dataclass
class StftConfig:
    window: int = 256
    hop: int = 128
    floor_db: float = -80.0
    out_height: int = 128
    out_width: int = 128
    channels: int = 3


@dataclass
class Spectrogram:
    """Unit-interval intensity image, optionally labeled."""

    pixels: np.ndarray  # (H, W, C) float32 in [0, 1]
    label: Label | None = None

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 3:
            raise ValueError("pixels must be a (H, W, C) array")
        lo, hi = float(self.pixels.min()), float(self.pixels.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"pixel values outside [0, 1]: min={lo}, max={hi}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


def _hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel-center coordinates and edge clamping."""
    in_h, in_w = img.shape
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, in_h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
    bot = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def spectrogram(iq: IqBuffer, stft: StftConfig | None = None,
                label: Label | None = None) -> Spectrogram:
    """Render a capture to the fixed 128x128x3 unit-interval image."""
    cfg = stft or StftConfig()
    x = iq.samples
    if x.size < cfg.window:
        raise ValueError(
            f"buffer of {x.size} samples is shorter than one STFT window ({cfg.window})"
        )
    n_frames = 1 + (x.size - cfg.window) // cfg.hop
    idx = np.arange(cfg.window)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    frames = x[idx] * _hann_periodic(cfg.window)[None, :]
    power = np.abs(np.fft.fft(frames, axis=1)) ** 2  # (frames, window)
    power = np.fft.fftshift(power, axes=1).T  # (freq rows, time cols), row 0 = -fs/2

    peak = power.max()
    if peak == 0.0:
        pixels = np.zeros((cfg.out_height, cfg.out_width), dtype=np.float64)
    else:
        db = 10.0 * np.log10(np.maximum(power, peak * 10.0 ** (cfg.floor_db / 10.0)) / peak)
        unit = (db - cfg.floor_db) / (-cfg.floor_db)
        pixels = _bilinear_resize(unit, cfg.out_height, cfg.out_width)
        pixels = np.clip(pixels, 0.0, 1.0)
    stacked = np.repeat(pixels[:, :, None], cfg.channels, axis=2)
    return Spectrogram(stacked.astype(np.float32), label=label)


def row_center_frequency_hz(row: int, sample_rate_hz: float,
                            stft: StftConfig | None = None) -> float:
    """Baseband frequency at the center of an output row (for oracles and axes)."""
    cfg = stft or StftConfig()
    src = (row + 0.5) * (cfg.window / cfg.out_height) - 0.5
    return (src - cfg.window / 2) * sample_rate_hz / cfg.window


def to_bytes(image: Spectrogram) -> bytes:
    """Normative SGRM encoding: magic, u32le H/W/C, float32le row-major pixels."""
    h, w, c = image.pixels.shape
    header = SGRM_MAGIC + struct.pack("<III", h, w, c)
    return header + np.ascontiguousarray(image.pixels, dtype="<f4").tobytes()


def from_bytes(blob: bytes, label: Label | None = None) -> Spectrogram:
    if len(blob) < 16 or blob[:4] != SGRM_MAGIC:
        raise ValueError("not an SGRM image (bad magic or truncated header)")
    h, w, c = struct.unpack("<III", blob[4:16])
    expected = 16 + h * w * c * 4
    if len(blob) != expected:
        raise ValueError(f"SGRM payload length {len(blob)} != expected {expected}")
    pixels = np.frombuffer(blob, dtype="<f4", offset=16).reshape(h, w, c)
    return Spectrogram(pixels.copy(), label=label)


def save(image: Spectrogram, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(image))


def load(path, label: Label | None = None) -> Spectrogram:
    with open(path, "rb") as fh:
        return from_bytes(fh.read(), label=label)
