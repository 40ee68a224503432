"""Spectrogram rendering contract and the SGRM byte format."""

import numpy as np
import pytest

from ricshield import spectro
from ricshield.signals import IqBuffer, Label, SynthConfig, synth_capture, synth_cw
from ricshield.spectro import (Spectrogram, StftConfig, from_bytes, load,
                               row_center_frequency_hz, save, spectrogram, to_bytes)

FS = 7.68e6


def test_all_zero_input_yields_all_zero_image():
    buf = IqBuffer(np.full(4096, 1e-300 * 0.0 + 0j), FS)
    img = spectrogram(buf)
    assert img.pixels.shape == (128, 128, 3)
    assert not img.pixels.any()


def test_too_short_buffer_rejected():
    with pytest.raises(ValueError):
        spectrogram(IqBuffer(np.ones(255, dtype=complex), FS))


def test_shape_and_range_for_any_input():
    gen = np.random.default_rng(0)
    for _ in range(3):
        buf = IqBuffer(gen.normal(size=3000) + 1j * gen.normal(size=3000), FS)
        img = spectrogram(buf)
        assert img.pixels.shape == (128, 128, 3)
        assert img.pixels.min() >= 0.0 and img.pixels.max() <= 1.0
        # channels are replicas
        assert np.array_equal(img.pixels[:, :, 0], img.pixels[:, :, 1])
        assert np.array_equal(img.pixels[:, :, 0], img.pixels[:, :, 2])


def test_cw_tone_lands_on_the_right_row():
    # oracle: brightest row maps back to within one resampled-bin width of 1 MHz
    buf = synth_cw(1e6, 0.0, 160_000, FS)
    img = spectrogram(buf)
    row = int(img.pixels[:, :, 0].sum(axis=1).argmax())
    one_bin = FS / 128
    assert abs(row_center_frequency_hz(row, FS) - 1e6) <= one_bin


def test_pixel_range_invariant_on_synthesized_captures():
    for label in Label:
        img = spectrogram(synth_capture(SynthConfig(label=label, rng_seed=9)))
        assert img.pixels.min() >= 0.0 and img.pixels.max() <= 1.0


def test_spectrogram_rejects_bad_pixels():
    with pytest.raises(ValueError):
        Spectrogram(np.full((4, 4, 3), 1.5, dtype=np.float32))


def test_sgrm_round_trip_is_byte_exact(tmp_path):
    img = spectrogram(synth_capture(SynthConfig(label=Label.CWI, rng_seed=4)),
                      label=Label.CWI)
    blob = to_bytes(img)
    assert blob[:4] == b"SGRM"
    assert blob[4:16] == (128).to_bytes(4, "little") + (128).to_bytes(4, "little") \
        + (3).to_bytes(4, "little")
    back = from_bytes(blob)
    assert np.array_equal(back.pixels, img.pixels)
    path = tmp_path / "x.sgrm"
    save(img, path)
    assert path.read_bytes() == blob
    assert np.array_equal(load(path).pixels, img.pixels)


def test_sgrm_header_is_row_major_float32le():
    pixels = np.arange(2 * 3 * 1, dtype=np.float32).reshape(2, 3, 1) / 10
    blob = to_bytes(Spectrogram(pixels))
    decoded = np.frombuffer(blob, dtype="<f4", offset=16)
    assert np.array_equal(decoded, pixels.ravel())


def test_sgrm_rejects_garbage():
    with pytest.raises(ValueError):
        from_bytes(b"NOPE" + b"\x00" * 20)
    good = to_bytes(Spectrogram(np.zeros((2, 2, 1), dtype=np.float32)))
    with pytest.raises(ValueError):
        from_bytes(good[:-1])


def test_class_separability_of_mean_ridges():
    # CWI ridge stays on one row; CI ridge wanders across rows
    stft = StftConfig()
    def ridge_rows(label, seed):
        img = spectrogram(synth_capture(SynthConfig(label=label, rng_seed=seed)), stft)
        return img.pixels[:, :, 0].argmax(axis=0)  # per-column brightest row

    for seed in (21, 22, 23):
        cwi = ridge_rows(Label.CWI, seed)
        ci = ridge_rows(Label.CI, seed)
        assert np.std(cwi) < 2.0  # constant-frequency ridge
        assert np.unique(ci).size > 10  # time-varying ridge visits many rows
