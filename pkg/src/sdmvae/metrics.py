"""Sparsity (Hoyer) and reconstruction-quality measures, plus the evaluation loop."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .signal import AudioClip, interior, resynthesize, stft

SISDR_CAP = 100.0
POWER_FLOOR = 1e-10


def hoyer(v) -> float:
    """(sqrt(d) - |v|_1 / |v|_2) / (sqrt(d) - 1); NaN for the all-zero vector."""
    v = np.asarray(v, dtype=np.float64).ravel()
    d = v.size
    if d < 2:
        raise ValueError(f"hoyer needs at least 2 entries, got {d}")
    l2 = np.linalg.norm(v)
    if l2 == 0.0:
        return math.nan
    root = math.sqrt(d)
    score = (root - np.abs(v).sum() / l2) / (root - 1.0)
    return float(min(1.0, max(0.0, score)))


def hoyer_rows(codes: np.ndarray) -> np.ndarray:
    """Row-wise Hoyer scores; all-zero rows give NaN."""
    codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    d = codes.shape[1]
    if d < 2:
        raise ValueError(f"hoyer needs at least 2 entries, got {d}")
    l1 = np.abs(codes).sum(axis=1)
    l2 = np.linalg.norm(codes, axis=1)
    out = np.full(len(codes), np.nan)
    ok = l2 > 0
    out[ok] = (np.sqrt(d) - l1[ok] / l2[ok]) / (np.sqrt(d) - 1.0)
    return np.clip(out, 0.0, 1.0)


def log_spectral_distance(s, s_hat) -> float:
    """Mean over frames of the RMS (over bins) dB difference, after flooring at 1e-10."""
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    s_hat = np.atleast_2d(np.asarray(s_hat, dtype=np.float64))
    if s.shape != s_hat.shape:
        raise ValueError(f"shape mismatch: {s.shape} vs {s_hat.shape}")
    diff = 10.0 * np.log10(np.maximum(s, POWER_FLOOR) / np.maximum(s_hat, POWER_FLOOR))
    return float(np.mean(np.sqrt(np.mean(diff**2, axis=1))))


def si_sdr(reference, estimate) -> float:
    """Scale-invariant SDR in dB, capped at 100 dB; NaN for a silent reference."""
    ref = np.asarray(getattr(reference, "samples", reference), dtype=np.float64)
    est = np.asarray(getattr(estimate, "samples", estimate), dtype=np.float64)
    if ref.shape != est.shape:
        raise ValueError(f"length mismatch: {ref.shape} vs {est.shape}")
    ref_energy = ref @ ref
    if ref_energy == 0.0:
        return math.nan
    target = (est @ ref) / ref_energy * ref
    residual = est - target
    res_energy = residual @ residual
    num = target @ target
    if res_energy <= num * 10 ** (-SISDR_CAP / 10):
        return SISDR_CAP
    return float(min(SISDR_CAP, 10.0 * np.log10(num / res_energy)))


@dataclass
class ClipScores:
    name: str
    n_frames: int
    hoyer: float
    lsd: float
    sisdr: float


@dataclass
class EvalReport:
    rows: list[ClipScores] = field(default_factory=list)
    frame_hoyer: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def hoyer_mean(self) -> float:
        return float(np.nanmean(self.frame_hoyer)) if np.any(np.isfinite(self.frame_hoyer)) else math.nan

    @property
    def hoyer_std(self) -> float:
        return float(np.nanstd(self.frame_hoyer)) if np.any(np.isfinite(self.frame_hoyer)) else math.nan

    @property
    def lsd_mean(self) -> float:
        return float(np.mean([r.lsd for r in self.rows]))

    @property
    def sisdr_mean(self) -> float:
        vals = [r.sisdr for r in self.rows if np.isfinite(r.sisdr)]
        return float(np.mean(vals)) if vals else math.nan

    def summary(self) -> dict:
        return {"clips": len(self.rows), "frames": int(self.frame_hoyer.size),
                "hoyer_mean": self.hoyer_mean, "hoyer_std": self.hoyer_std,
                "lsd_mean": self.lsd_mean, "sisdr_mean": self.sisdr_mean}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["clip", "frames", "hoyer", "lsd_db", "sisdr_db"])
            for r in self.rows:
                w.writerow([r.name, r.n_frames, repr(r.hoyer), repr(r.lsd), repr(r.sisdr)])
            w.writerow(["__mean__", int(self.frame_hoyer.size), repr(self.hoyer_mean), repr(self.lsd_mean),
                        repr(self.sisdr_mean)])

    def format(self) -> str:
        s = self.summary()
        return (f"clips={s['clips']} frames={s['frames']} hoyer={s['hoyer_mean']:.4f}+-{s['hoyer_std']:.4f} "
                f"lsd={s['lsd_mean']:.3f} dB si-sdr={s['sisdr_mean']:.3f} dB")


def read_report_means(path) -> dict:
    """Aggregate row of a report CSV written by :meth:`EvalReport.to_csv`."""
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["clip"] == "__mean__":
                return {"hoyer": float(row["hoyer"]), "lsd": float(row["lsd_db"]), "sisdr": float(row["sisdr_db"])}
    raise ValueError(f"{path}: no aggregate row")


def score_clip(clip: AudioClip, power, phase, power_est, codes, window_len: int, hop: int,
               name: str = "") -> tuple[ClipScores, np.ndarray]:
    est = resynthesize(power_est, phase, window_len, hop, clip.sample_rate)
    region = interior(len(est), window_len, hop)
    sisdr = si_sdr(clip.samples[: len(est)][region], est.samples[region])
    frame_h = hoyer_rows(codes)
    h = float(np.nanmean(frame_h)) if np.any(np.isfinite(frame_h)) else math.nan
    return ClipScores(name or clip.name, len(power), h, log_spectral_distance(power, power_est), sisdr), frame_h


def evaluate(model, clips, window_len: int = 1024, hop: int = 256) -> EvalReport:
    """Analysis-resynthesis of every clip through the posterior mean; no sampling."""
    report = EvalReport()
    hoyers = []
    for i, clip in enumerate(clips):
        frames = stft(clip, window_len, hop)
        power_est, codes = model.reconstruct(frames.power)
        row, frame_h = score_clip(clip, frames.power, frames.phase, power_est, codes, window_len, hop,
                                  clip.name or f"clip{i:04d}")
        report.rows.append(row)
        hoyers.append(frame_h)
    report.frame_hoyer = np.concatenate(hoyers) if hoyers else np.zeros(0)
    return report
