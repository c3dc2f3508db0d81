"""STFT analysis, power spectrograms and phase-reuse resynthesis.

Frames are rows: a clip of T samples analysed with window length L and hop H
gives ``(T - L) // H + 1`` frames of ``L // 2 + 1`` one-sided bins.  Trailing
samples that do not fill a whole frame are dropped.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
WINDOW_LEN = 1024
HOP = 256


class AudioFormatError(ValueError):
    pass


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    name: str = ""

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError(f"AudioClip expects mono 1-D samples, got shape {x.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(x)):
            raise ValueError("AudioClip samples must be finite")
        object.__setattr__(self, "samples", x)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class StftFrames:
    power: np.ndarray  # frames x n, |X|^2
    phase: np.ndarray  # frames x n, angle(X)
    window_len: int
    hop: int
    sample_rate: int = SAMPLE_RATE

    @property
    def n_frames(self) -> int:
        return self.power.shape[0]

    @property
    def n_bins(self) -> int:
        return self.power.shape[1]

    def complex(self) -> np.ndarray:
        return np.sqrt(self.power) * np.exp(1j * self.phase)

    def check(self) -> None:
        if self.power.shape != self.phase.shape or self.power.ndim != 2:
            raise ValueError(f"power {self.power.shape} and phase {self.phase.shape} must be equal 2-D shapes")
        if self.n_bins != self.window_len // 2 + 1:
            raise ValueError(f"{self.n_bins} bins inconsistent with window_len {self.window_len}")
        if np.any(self.power < 0):
            raise ValueError("power spectrogram has negative entries")


def sine_window(length: int) -> np.ndarray:
    """w[l] = sin(pi (l + 1/2) / length); sample-centred, strictly positive."""
    if length < 2 or length % 2:
        raise ValueError(f"sine window length must be even and >= 2, got {length}")
    return np.sin(np.pi * (np.arange(length) + 0.5) / length)


def n_frames(n_samples: int, window_len: int = WINDOW_LEN, hop: int = HOP) -> int:
    if n_samples < window_len:
        return 0
    return (n_samples - window_len) // hop + 1


def _cola_gain(window: np.ndarray, hop: int) -> float:
    """Constant value of sum_s w^2[l - s*hop] over the interior."""
    return float(np.sum(window**2) / hop)


def _check_params(window_len: int, hop: int) -> None:
    if window_len % 4 or hop != window_len // 4:
        raise ValueError(f"expected hop = window_len / 4 (75% overlap), got window {window_len}, hop {hop}")


def stft(clip: AudioClip, window_len: int = WINDOW_LEN, hop: int = HOP) -> StftFrames:
    _check_params(window_len, hop)
    x = clip.samples
    count = n_frames(len(x), window_len, hop)
    if count == 0:
        raise ValueError(f"clip of {len(x)} samples is shorter than one window ({window_len})")
    w = sine_window(window_len)
    idx = np.arange(window_len)[None, :] + hop * np.arange(count)[:, None]
    spec = np.fft.rfft(x[idx] * w, axis=1)
    return StftFrames(np.abs(spec) ** 2, np.angle(spec), window_len, hop, clip.sample_rate)


def istft_complex(spec: np.ndarray, window_len: int, hop: int, sample_rate: int = SAMPLE_RATE) -> AudioClip:
    """Weighted overlap-add with the sine synthesis window.

    Output is normalised by the constant interior COLA gain, so the first and
    last ``window_len - hop`` samples are tapered rather than exact.
    """
    _check_params(window_len, hop)
    if spec.ndim != 2 or spec.shape[1] != window_len // 2 + 1:
        raise ValueError(f"spectrum shape {spec.shape} inconsistent with window_len {window_len}")
    w = sine_window(window_len)
    frames = np.fft.irfft(spec, n=window_len, axis=1) * w
    count = spec.shape[0]
    out = np.zeros((count - 1) * hop + window_len) if count else np.zeros(0)
    for i in range(count):
        out[i * hop : i * hop + window_len] += frames[i]
    out /= _cola_gain(w, hop)
    return AudioClip(out, sample_rate)


def istft(frames: StftFrames) -> AudioClip:
    frames.check()
    return istft_complex(frames.complex(), frames.window_len, frames.hop, frames.sample_rate)


def resynthesize(power_est: np.ndarray, phase: np.ndarray, window_len: int = WINDOW_LEN, hop: int = HOP,
                 sample_rate: int = SAMPLE_RATE) -> AudioClip:
    """Combine an estimated power spectrogram with a reference phase and invert."""
    power_est = np.asarray(power_est, dtype=np.float64)
    phase = np.asarray(phase, dtype=np.float64)
    if power_est.shape != phase.shape:
        raise ValueError(f"power {power_est.shape} and phase {phase.shape} differ in shape")
    neg = np.argwhere(power_est < 0)
    if neg.size:
        raise ValueError(f"negative power estimate at index {tuple(int(i) for i in neg[0])}")
    return istft_complex(np.sqrt(power_est) * np.exp(1j * phase), window_len, hop, sample_rate)


def interior(n_samples: int, window_len: int = WINDOW_LEN, hop: int = HOP) -> slice:
    """Samples covered by the full window overlap (exact after round trip)."""
    edge = window_len - hop
    return slice(edge, max(edge, n_samples - edge))


# ---------------------------------------------------------------- WAV I/O


def read_wav(path, expected_rate: int | None = SAMPLE_RATE) -> AudioClip:
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            channels, width, rate = wf.getnchannels(), wf.getsampwidth(), wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise AudioFormatError(f"{path}: unreadable WAV ({exc})") from exc
    if channels != 1 or width != 2:
        raise AudioFormatError(f"{path}: expected 16-bit PCM mono, got {channels} channel(s), {8 * width}-bit")
    if expected_rate is not None and rate != expected_rate:
        raise AudioFormatError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(samples, rate, path.stem)


def write_wav(path, clip: AudioClip) -> None:
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(pcm.tobytes())
