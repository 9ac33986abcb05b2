"""STFT analysis/synthesis, mixing, soft masking and WAV I/O.

Framing follows the separation experiments: 512-point DFT, square-root
periodic Hann window for both analysis and synthesis, hop of a quarter
window.  The signal is zero-padded by ``n_fft - hop`` samples on both ends
so every original sample sits under a full set of overlapping frames, which
makes ``istft(stft(x))`` reproduce ``x`` to rounding error.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

from .numerics import EPS


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("waveform samples must be one-dimensional")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class ComplexSpectrogram:
    """One-sided STFT split into magnitude and phase (bins x frames)."""

    magnitude: np.ndarray
    phase: np.ndarray
    n_fft: int
    hop: int
    sample_rate: int
    length: int

    def __post_init__(self):
        if self.magnitude.shape != self.phase.shape:
            raise ValueError("magnitude and phase shapes differ")
        if self.magnitude.shape[0] != self.n_fft // 2 + 1:
            raise ValueError(
                f"{self.magnitude.shape[0]} bins inconsistent with n_fft={self.n_fft}"
            )

    @property
    def n_bins(self) -> int:
        return self.magnitude.shape[0]

    @property
    def n_frames(self) -> int:
        return self.magnitude.shape[1]

    def complex(self) -> np.ndarray:
        return self.magnitude * np.exp(1j * self.phase)

    def with_complex(self, Z) -> "ComplexSpectrogram":
        """Same framing, new complex contents."""
        return ComplexSpectrogram(
            magnitude=np.abs(Z), phase=_phase(Z), n_fft=self.n_fft, hop=self.hop,
            sample_rate=self.sample_rate, length=self.length,
        )


def _phase(Z):
    ph = np.angle(Z)
    # keep the range half-open at -pi
    return np.where(ph <= -np.pi, np.pi, ph)


def sqrt_hann_window(n: int) -> np.ndarray:
    """Square root of the periodic Hann window of length ``n``."""
    if n < 2:
        raise ValueError("window length must be >= 2")
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    return np.sqrt(np.maximum(hann, 0.0))


def _check_framing(n_fft, hop):
    if n_fft < 2 or n_fft % 2:
        raise ValueError("n_fft must be an even integer >= 2")
    if hop < 1 or n_fft % hop:
        raise ValueError(f"hop {hop} must divide n_fft {n_fft}")
    if hop > n_fft // 2:
        raise ValueError("hop must be at most n_fft / 2 for the square-root Hann window")


def _padding(length, n_fft, hop):
    pad = n_fft - hop
    total = length + 2 * pad
    tail = (-(total - n_fft)) % hop
    return pad, tail


def stft(w: Waveform, n_fft: int = 512, hop: int | None = None) -> ComplexSpectrogram:
    hop = n_fft // 4 if hop is None else hop
    _check_framing(n_fft, hop)
    x = w.samples
    if x.size == 0:
        raise ValueError("cannot analyse an empty signal")
    pad, tail = _padding(x.size, n_fft, hop)
    xp = np.concatenate([np.zeros(pad), x, np.zeros(pad + tail)])
    frames = np.lib.stride_tricks.sliding_window_view(xp, n_fft)[::hop]
    Z = np.fft.rfft(frames * sqrt_hann_window(n_fft), axis=1).T
    return ComplexSpectrogram(
        magnitude=np.abs(Z), phase=_phase(Z), n_fft=n_fft, hop=hop,
        sample_rate=w.sample_rate, length=x.size,
    )


def overlap_window_sum(n_frames: int, n_fft: int, hop: int) -> np.ndarray:
    """Overlap-added squared window; the synthesis normalizer."""
    win2 = sqrt_hann_window(n_fft) ** 2
    total = (n_frames - 1) * hop + n_fft
    acc = np.zeros(total)
    for t in range(n_frames):
        acc[t * hop : t * hop + n_fft] += win2
    return acc


def istft(spec: ComplexSpectrogram) -> Waveform:
    n_fft, hop = spec.n_fft, spec.hop
    _check_framing(n_fft, hop)
    pad, tail = _padding(spec.length, n_fft, hop)
    expected = (spec.length + 2 * pad + tail - n_fft) // hop + 1
    if spec.n_frames != expected:
        raise ValueError(
            f"{spec.n_frames} frames inconsistent with length {spec.length} "
            f"(expected {expected})"
        )
    frames = np.fft.irfft(spec.complex(), n=n_fft, axis=0).T * sqrt_hann_window(n_fft)
    total = (spec.n_frames - 1) * hop + n_fft
    out = np.zeros(total)
    for t in range(spec.n_frames):
        out[t * hop : t * hop + n_fft] += frames[t]
    out /= np.maximum(overlap_window_sum(spec.n_frames, n_fft, hop), EPS)
    return Waveform(out[pad : pad + spec.length], spec.sample_rate)


def rms(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(x**2))) if x.size else 0.0


def make_mixture(s1: Waveform, s2: Waveform, snr_db: float = 0.0):
    """Mix two sources at ``snr_db`` (level of ``s1`` relative to ``s2``).

    ``s2`` is rescaled so the RMS ratio over the overlapping region matches
    ``snr_db``; the shorter source is zero-padded.  Returns
    ``(mixture, s1, scaled_s2)``, all of the same length.
    """
    if s1.sample_rate != s2.sample_rate:
        raise ValueError(f"sample rates differ: {s1.sample_rate} vs {s2.sample_rate}")
    n = min(len(s1), len(s2))
    r1, r2 = rms(s1.samples[:n]), rms(s2.samples[:n])
    if r1 == 0 or r2 == 0:
        raise ValueError("cannot mix a silent source")
    gain = r1 / (r2 * 10.0 ** (snr_db / 20.0))
    total = max(len(s1), len(s2))
    a = np.zeros(total)
    b = np.zeros(total)
    a[: len(s1)] = s1.samples
    b[: len(s2)] = s2.samples * gain
    sr = s1.sample_rate
    return Waveform(a + b, sr), Waveform(a, sr), Waveform(b, sr)


def soft_masks(source_mags) -> list:
    """Per-bin ratios ``X_i / sum_j X_j``; inputs must be strictly positive."""
    mags = [np.asarray(m, dtype=np.float64) for m in source_mags]
    if not mags:
        raise ValueError("need at least one source estimate")
    shape = mags[0].shape
    for i, m in enumerate(mags):
        if m.shape != shape:
            raise ValueError(f"source {i} has shape {m.shape}, expected {shape}")
        if np.any(m <= 0):
            raise ValueError(f"source {i} estimate is not strictly positive")
    total = sum(mags)
    return [m / total for m in mags]


def mask_reconstruct(source_mags, mix_spec: ComplexSpectrogram, return_masks=False):
    """Soft-mask the mixture and resynthesize one waveform per source.

    Each source keeps the mixture phase: ``istft(mask_i * |X| * exp(i*phase))``.
    """
    for i, m in enumerate(source_mags):
        if np.shape(m) != mix_spec.magnitude.shape:
            raise ValueError(
                f"source {i} has shape {np.shape(m)}, mixture is {mix_spec.magnitude.shape}"
            )
    masks = soft_masks(source_mags)
    Zmix = mix_spec.complex()
    waves = [istft(mix_spec.with_complex(mask * Zmix)) for mask in masks]
    if return_masks:
        return waves, masks
    return waves


def read_wav(path) -> Waveform:
    """Read a PCM16, PCM32 or float32 WAV file as mono float64 in [-1, 1]."""
    sr, data = wavfile.read(path)
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    else:
        raise ValueError(f"{path}: unsupported sample type {data.dtype}")
    if x.ndim == 2:
        warnings.warn(f"{path}: downmixing {x.shape[1]} channels to mono", stacklevel=2)
        x = x.mean(axis=1)
    return Waveform(x, int(sr))


def write_wav(path, w: Waveform, subtype: str = "PCM_16") -> None:
    """Write mono WAV; ``subtype`` is ``"PCM_16"`` or ``"FLOAT"`` (32-bit)."""
    if subtype == "PCM_16":
        data = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    elif subtype == "FLOAT":
        data = w.samples.astype("<f4")
    else:
        raise ValueError(f"unknown subtype {subtype!r}")
    wavfile.write(path, int(w.sample_rate), data)
