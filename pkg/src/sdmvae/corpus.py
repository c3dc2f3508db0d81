"""Datasets: WAV directories split by speaker, and a synthetic speech-like generator."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .signal import HOP, SAMPLE_RATE, WINDOW_LEN, AudioClip, AudioFormatError, read_wav, stft


class ConfigurationError(ValueError):
    pass


@dataclass
class DatasetSplit:
    train: list[AudioClip] = field(default_factory=list)
    validation: list[AudioClip] = field(default_factory=list)
    test: list[AudioClip] = field(default_factory=list)
    fingerprint: str = ""

    def speakers(self, part: str) -> set[str]:
        return {speaker_of(c.name) for c in getattr(self, part)}


@dataclass
class SpectrogramBatch:
    power: np.ndarray  # frames x n
    phase: np.ndarray
    offsets: np.ndarray  # clip i owns rows offsets[i]:offsets[i+1]
    names: list[str]

    @property
    def n_frames(self) -> int:
        return self.power.shape[0]

    def clip_power(self, i: int) -> np.ndarray:
        return self.power[self.offsets[i] : self.offsets[i + 1]]


def speaker_of(name: str) -> str:
    """Speaker id from a ``<speaker>_<utt>`` file stem."""
    return name.split("_", 1)[0]


def split_counts(n_speakers: int, ratios=(0.7, 0.15, 0.15)) -> tuple[int, int, int]:
    """Floor the train/validation shares; the remainder goes to test."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not np.isclose(sum(ratios), 1.0):
        raise ConfigurationError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    n_train = int(np.floor(n_speakers * ratios[0] + 1e-9))
    n_val = int(np.floor(n_speakers * ratios[1] + 1e-9))
    return n_train, n_val, n_speakers - n_train - n_val


def split_by_speaker(clips: list[AudioClip], ratios=(0.7, 0.15, 0.15), seed: int = 0,
                     fingerprint: str = "") -> DatasetSplit:
    speakers = sorted({speaker_of(c.name) for c in clips})
    n_train, n_val, n_test = split_counts(len(speakers), ratios)
    for part, count in (("train", n_train), ("validation", n_val), ("test", n_test)):
        if count == 0:
            raise ConfigurationError(f"{part} split is empty ({len(speakers)} speakers, ratios {tuple(ratios)})")
    order = np.random.default_rng(seed).permutation(len(speakers))
    shuffled = [speakers[i] for i in order]
    assign = {s: "train" for s in shuffled[:n_train]}
    assign.update({s: "validation" for s in shuffled[n_train : n_train + n_val]})
    assign.update({s: "test" for s in shuffled[n_train + n_val :]})
    split = DatasetSplit(fingerprint=fingerprint)
    for clip in sorted(clips, key=lambda c: c.name):
        getattr(split, assign[speaker_of(clip.name)]).append(clip)
    return split


def fingerprint_files(paths) -> str:
    h = hashlib.sha256()
    for p in sorted(Path(p) for p in paths):
        h.update(f"{p.name}:{p.stat().st_size}\n".encode())
    return h.hexdigest()[:16]


def fingerprint_synthetic(seed: int, n_clips: int, duration_s: float, n_speakers: int) -> str:
    h = hashlib.sha256(f"synthetic:{seed}:{n_clips}:{duration_s!r}:{n_speakers}".encode())
    return h.hexdigest()[:16]


def list_wavs(path) -> list[Path]:
    root = Path(path)
    if not root.is_dir():
        raise ConfigurationError(f"{root} is not a directory")
    return sorted(root.glob("*.wav"))


def load_clips(path, sample_rate: int = SAMPLE_RATE) -> list[AudioClip]:
    files = list_wavs(path)
    if not files:
        raise ConfigurationError(f"no .wav files in {path}")
    clips = []
    for f in files:
        try:
            clips.append(read_wav(f, expected_rate=sample_rate))
        except AudioFormatError:
            raise
        except OSError as exc:
            raise AudioFormatError(f"{f}: {exc}") from exc
    return clips


def load_wav_dir(path, ratios=(0.7, 0.15, 0.15), seed: int = 0) -> DatasetSplit:
    """Speaker-disjoint split of ``<speaker>_<utt>.wav`` files (16 kHz PCM16 mono)."""
    clips = load_clips(path)
    return split_by_speaker(clips, ratios, seed, fingerprint_files(list_wavs(path)))


# F1-F4 (Hz) of a small vowel inventory; speakers scale these by a vocal-tract factor.
VOWELS = np.array([
    [730.0, 1090.0, 2440.0, 3400.0],
    [270.0, 2290.0, 3010.0, 3500.0],
    [300.0, 870.0, 2240.0, 3300.0],
    [530.0, 1840.0, 2480.0, 3450.0],
    [570.0, 840.0, 2410.0, 3350.0],
    [660.0, 1720.0, 2410.0, 3400.0],
])


def _speaker_traits(seed: int, speaker: int) -> tuple[float, float]:
    rng = np.random.default_rng([seed, speaker, 7])
    return rng.uniform(0.9, 1.12), rng.uniform(90.0, 240.0)


def synth_speech_like(seed: int, n_clips: int, duration_s: float = 1.0, n_speakers: int | None = None,
                      sample_rate: int = SAMPLE_RATE) -> list[AudioClip]:
    """Harmonic source with a wandering F0 (80-300 Hz) shaped by 2-4 formants.

    Each clip strings together vowels from a shared inventory, gliding between
    their formant frequencies; formant gains drift slowly and a syllable-rate
    envelope gates the source.  Speakers (assigned round-robin, clips named
    ``spkNN_uttNNN``) differ by vocal-tract scaling and mean F0.  Every
    harmonic stays below 4 kHz and clips are peak-normalised to 0.95.
    """
    if duration_s < 0.5:
        raise ValueError(f"duration must be at least 0.5 s, got {duration_s}")
    if n_speakers is None:
        n_speakers = max(3, n_clips // 5)
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    clips = []
    for i in range(n_clips):
        speaker = i % n_speakers
        tract, f0_mean = _speaker_traits(seed, speaker)
        base = f0_mean * rng.uniform(0.9, 1.1)
        wobble = base * rng.uniform(0.03, 0.12) * np.sin(2 * np.pi * rng.uniform(0.5, 3.0) * t + rng.uniform(0, 2 * np.pi))
        f0 = np.clip(base + wobble + base * rng.uniform(-0.1, 0.1) * t / duration_s, 80.0, 300.0)
        phase = 2 * np.pi * np.cumsum(f0) / sample_rate

        n_segments = int(np.ceil(duration_s / 0.25)) + 1
        knots = np.linspace(0.0, duration_s, n_segments)
        targets = VOWELS[rng.integers(0, len(VOWELS), n_segments)] * tract
        n_formants = int(rng.integers(2, 5))
        centres = [np.minimum(np.interp(t, knots, targets[:, j]), 3800.0) for j in range(n_formants)]
        widths = rng.uniform(60.0, 200.0, n_formants)
        gains = [rng.uniform(0.5, 1.0) / (j + 1) * (1 + 0.3 * np.sin(2 * np.pi * rng.uniform(0.2, 2.0) * t + rng.uniform(0, 2 * np.pi)))
                 for j in range(n_formants)]

        x = np.zeros(n)
        for h in range(1, int(3900.0 // f0.max()) + 1):
            fh = h * f0
            amp = sum(g / (1.0 + ((fh - c) / w) ** 2) for g, c, w in zip(gains, centres, widths))
            x += amp * np.sin(h * phase)
        rate = rng.uniform(2.0, 5.0)
        envelope = 0.15 + 0.85 * np.sin(np.pi * rate * t + rng.uniform(0, np.pi)) ** 2
        x = x * envelope
        x = x / np.max(np.abs(x)) + 1e-3 * rng.standard_normal(n)
        x = 0.95 * x / np.max(np.abs(x))
        clips.append(AudioClip(x, sample_rate, f"spk{speaker:02d}_utt{i // n_speakers:03d}"))
    return clips


def synthetic_split(seed: int, n_clips: int, duration_s: float = 1.0, n_speakers: int | None = None,
                    ratios=(0.7, 0.15, 0.15)) -> DatasetSplit:
    if n_speakers is None:
        n_speakers = max(3, n_clips // 5)
    clips = synth_speech_like(seed, n_clips, duration_s, n_speakers)
    return split_by_speaker(clips, ratios, seed, fingerprint_synthetic(seed, n_clips, duration_s, n_speakers))


def frames_of(clips: list[AudioClip], window_len: int = WINDOW_LEN, hop: int = HOP) -> SpectrogramBatch:
    """Stack STFT power/phase frames of every clip; rows are i.i.d. data points."""
    if not clips:
        raise ConfigurationError("cannot extract frames from an empty split")
    spectra = [stft(c, window_len, hop) for c in clips]
    counts = [f.n_frames for f in spectra]
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(int)
    return SpectrogramBatch(np.vstack([f.power for f in spectra]), np.vstack([f.phase for f in spectra]),
                            offsets, [c.name for c in clips])
