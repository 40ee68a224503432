"""Complex-baseband synthesis for the three traffic classes.

SOI is a QPSK-OFDM uplink stand-in (300 occupied subcarriers out of a 512-FFT
at 7.68 Msps, i.e. 25 PRBs / ~5 MHz), CWI is a fixed tone, CI a linear chirp.
Everything is a pure function of its arguments including seeds.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng


class Label(enum.IntEnum):
    """Traffic classes: clean uplink, tone-jammed, chirp-jammed."""

    SOI = 0
    CWI = 1
    CI = 2

    @classmethod
    def parse(cls, text: str) -> "Label":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown class label {text!r}") from None


class AliasingError(ValueError):
    """Requested frequency falls outside the representable +/- fs/2 band."""


@dataclass
class IqBuffer:
    """Raw complex baseband capture."""

    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.samples.size == 0:
            raise ValueError("IqBuffer requires at least one sample")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")
        if not np.all(np.isfinite(self.samples.view(np.float64))):
            raise ValueError("IqBuffer samples must be finite")

    def __len__(self) -> int:
        return self.samples.size

    def power(self) -> float:
        """Mean |x|^2 of the buffer."""
        return float(np.mean(np.abs(self.samples) ** 2))

    def power_db(self) -> float:
        return float(10.0 * np.log10(self.power()))


@dataclass
class SynthConfig:
    """Knobs for one synthesized capture."""

    sample_rate_hz: float = 7.68e6
    fft_size: int = 512
    occupied_subcarriers: int = 300
    cp_len: int = 36
    capture_duration_s: float = 0.02
    interferer_gain_db: float = 35.0
    noise_power_db: float | None = -20.0
    label: Label = Label.SOI
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.occupied_subcarriers > self.fft_size:
            raise ValueError("occupied_subcarriers cannot exceed fft_size")
        if self.capture_duration_s <= 0:
            raise ValueError("capture_duration_s must be positive")

    @property
    def num_samples(self) -> int:
        return int(round(self.capture_duration_s * self.sample_rate_hz))


def _check_band(freq_hz: float, sample_rate_hz: float) -> None:
    if abs(freq_hz) >= sample_rate_hz / 2:
        raise AliasingError(
            f"frequency {freq_hz:g} Hz is at or beyond Nyquist ({sample_rate_hz / 2:g} Hz)"
        )


def synth_cw(freq_offset_hz: float, gain_db: float, num_samples: int,
             sample_rate_hz: float) -> IqBuffer:
    """Constant tone: A * exp(j 2 pi f t / fs) with A = 10^(gain_db/20)."""
    _check_band(freq_offset_hz, sample_rate_hz)
    if num_samples <= 0:
        raise ValueError("num_samples must be positive")
    amplitude = 10.0 ** (gain_db / 20.0)
    t = np.arange(num_samples, dtype=np.float64)
    phase = 2.0 * np.pi * freq_offset_hz * t / sample_rate_hz
    return IqBuffer(amplitude * np.exp(1j * phase), sample_rate_hz)


def synth_chirp(f0_hz: float, f1_hz: float, gain_db: float, num_samples: int,
                sample_rate_hz: float) -> IqBuffer:
    """Linear FM sweep from f0 to f1 over the buffer duration.

    phase(t) = 2 pi (f0 t + (f1-f0)/(2T) t^2), T = num_samples / fs.
    """
    _check_band(f0_hz, sample_rate_hz)
    _check_band(f1_hz, sample_rate_hz)
    if num_samples <= 0:
        raise ValueError("num_samples must be positive")
    amplitude = 10.0 ** (gain_db / 20.0)
    t = np.arange(num_samples, dtype=np.float64) / sample_rate_hz
    duration = num_samples / sample_rate_hz
    phase = 2.0 * np.pi * (f0_hz * t + (f1_hz - f0_hz) / (2.0 * duration) * t * t)
    return IqBuffer(amplitude * np.exp(1j * phase), sample_rate_hz)


def synth_soi(config: SynthConfig) -> IqBuffer:
    """OFDM-style uplink signal: QPSK on the centered subcarriers, CP prepended.

    The occupied grid is the `occupied_subcarriers` bins closest to DC with DC
    itself left empty. The OFDM component is normalized to unit average power,
    then complex white Gaussian noise at `noise_power_db` (relative to that
    unit power) is added; `noise_power_db=None` skips the noise entirely.
    """
    cfg = config
    sym_len = cfg.fft_size + cfg.cp_len
    if cfg.num_samples < sym_len:
        raise ValueError(
            f"capture of {cfg.num_samples} samples is shorter than one OFDM symbol ({sym_len})"
        )
    gen = rng.numpy_generator(cfg.rng_seed, "soi")
    n_sym = -(-cfg.num_samples // sym_len)

    signal = np.zeros(n_sym * sym_len, dtype=np.complex128)
    if cfg.occupied_subcarriers > 0:
        half = cfg.occupied_subcarriers // 2
        # bins +1..+half and -half..-1 around DC; odd counts take the extra bin
        # on the positive side
        pos = np.arange(1, cfg.occupied_subcarriers - half + 1)
        neg = np.arange(cfg.fft_size - half, cfg.fft_size)
        bins = np.concatenate([pos, neg])
        qpsk = (gen.integers(0, 2, size=(n_sym, bins.size)) * 2 - 1
                + 1j * (gen.integers(0, 2, size=(n_sym, bins.size)) * 2 - 1)) / np.sqrt(2.0)
        grid = np.zeros((n_sym, cfg.fft_size), dtype=np.complex128)
        grid[:, bins] = qpsk
        time_syms = np.fft.ifft(grid, axis=1)
        with_cp = np.concatenate([time_syms[:, -cfg.cp_len:], time_syms], axis=1)
        signal = with_cp.reshape(-1)
        signal = signal / np.sqrt(np.mean(np.abs(signal) ** 2))
    signal = signal[: cfg.num_samples]

    if cfg.noise_power_db is not None:
        noise_power = 10.0 ** (cfg.noise_power_db / 10.0)
        noise = gen.normal(size=cfg.num_samples) + 1j * gen.normal(size=cfg.num_samples)
        signal = signal + noise * np.sqrt(noise_power / 2.0)
    return IqBuffer(signal, cfg.sample_rate_hz)


def mix(soi: IqBuffer, interferer: IqBuffer) -> IqBuffer:
    """Additive baseband superposition of two captures."""
    if len(soi) != len(interferer):
        raise ValueError(f"length mismatch: {len(soi)} vs {len(interferer)}")
    if soi.sample_rate_hz != interferer.sample_rate_hz:
        raise ValueError(
            f"sample rate mismatch: {soi.sample_rate_hz} vs {interferer.sample_rate_hz}"
        )
    return IqBuffer(soi.samples + interferer.samples, soi.sample_rate_hz)


# Interferer placement used by the dataset generator and the RAN emulator.
# Tones sit inside the occupied band; chirps sweep across it repeatedly
# (sawtooth LFM, the usual swept-jammer waveform) with a per-sample period.
CW_OFFSET_RANGE_HZ = (-2.2e6, 2.2e6)
CHIRP_START_RANGE_HZ = (-2.6e6, -1.4e6)
CHIRP_STOP_RANGE_HZ = (1.4e6, 2.6e6)
CHIRP_PERIOD_RANGE_S = (1.5e-3, 4.0e-3)


def synth_sweeping_jammer(f0_hz: float, f1_hz: float, gain_db: float, period_s: float,
                          num_samples: int, sample_rate_hz: float) -> IqBuffer:
    """Sawtooth LFM jammer: the f0->f1 sweep repeats every period_s seconds
    (phase resets at each flyback) until the buffer is full."""
    per_sweep = max(1, int(round(period_s * sample_rate_hz)))
    sweep = synth_chirp(f0_hz, f1_hz, gain_db, per_sweep, sample_rate_hz).samples
    reps = -(-num_samples // per_sweep)
    return IqBuffer(np.tile(sweep, reps)[:num_samples], sample_rate_hz)


# Capture-level propagation/traffic model. Uplink TCP traffic is bursty, so a
# per-sample fraction of OFDM symbols is active; the receiver noise floor
# moves a little between captures; and each capture sees its own flat channel,
# so the RECEIVED jammer power varies well beyond the transmit-gain range.
ACTIVITY_RANGE = (0.55, 0.95)
NOISE_JITTER_DB = 5.0
SOI_CHANNEL_RANGE_DB = (-3.0, 3.0)
JAMMER_CHANNEL_RANGE_DB = (-15.0, 0.0)
CHIRP_DUTY_RANGE = (0.25, 1.0)  # swept jammers are commonly pulsed


def synth_capture(config: SynthConfig) -> IqBuffer:
    """One labeled capture: bursty SOI traffic through a flat channel, noise,
    plus the configured interferer through its own channel, if any.

    The OFDM component from synth_soi is gated symbol-by-symbol (Bernoulli
    activity with a per-sample rate) and scaled by a per-capture channel gain;
    the jammer's received power is its transmit gain plus an independent
    channel attenuation. Everything is drawn from the capture's own seed, so a
    (label, gain, seed) triple fully determines the buffer.
    """
    cfg = config
    soi = synth_soi(replace(cfg, noise_power_db=None))
    gen = rng.numpy_generator(cfg.rng_seed, "traffic")
    sym_len = cfg.fft_size + cfg.cp_len
    n_sym = -(-cfg.num_samples // sym_len)
    activity = gen.uniform(*ACTIVITY_RANGE)
    mask = np.repeat(gen.random(n_sym) < activity, sym_len)[: cfg.num_samples]
    soi_gain = 10.0 ** (gen.uniform(*SOI_CHANNEL_RANGE_DB) / 20.0)
    samples = soi.samples * mask * soi_gain

    if cfg.noise_power_db is not None:
        floor_db = cfg.noise_power_db + gen.uniform(-NOISE_JITTER_DB, NOISE_JITTER_DB)
        noise_power = 10.0 ** (floor_db / 10.0)
        noise = gen.normal(size=cfg.num_samples) + 1j * gen.normal(size=cfg.num_samples)
        samples = samples + noise * np.sqrt(noise_power / 2.0)
    capture = IqBuffer(samples, cfg.sample_rate_hz)
    if cfg.label == Label.SOI:
        return capture

    gen = rng.numpy_generator(cfg.rng_seed, "interferer")
    received_db = cfg.interferer_gain_db + gen.uniform(*JAMMER_CHANNEL_RANGE_DB)
    if cfg.label == Label.CWI:
        offset = gen.uniform(*CW_OFFSET_RANGE_HZ)
        jam = synth_cw(offset, received_db, cfg.num_samples, cfg.sample_rate_hz)
    else:
        f0 = gen.uniform(*CHIRP_START_RANGE_HZ)
        f1 = gen.uniform(*CHIRP_STOP_RANGE_HZ)
        if gen.uniform() < 0.5:
            f0, f1 = f1, f0
        period = gen.uniform(*CHIRP_PERIOD_RANGE_S)
        jam = synth_sweeping_jammer(f0, f1, received_db, period,
                                    cfg.num_samples, cfg.sample_rate_hz)
        duty = gen.uniform(*CHIRP_DUTY_RANGE)
        per_sweep = max(1, int(round(period * cfg.sample_rate_hz)))
        in_period = np.arange(cfg.num_samples) % per_sweep
        jam = IqBuffer(jam.samples * (in_period < duty * per_sweep),
                       cfg.sample_rate_hz)
    return mix(capture, jam)
