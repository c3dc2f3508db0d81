"""Command line: ``sdmvae train|eval|resynth|compare``.

Exit codes: 0 success, 1 usage/configuration error, 2 runtime failure.
Set ``SDMVAE_OUTPUT_DIR`` to override the output directory of ``train``.

Example config::

    [experiment]
    variant = sdm_dct        # standard | sdm_dct | sdm_identity
    m = 32
    k = 64
    seed = 0
    output_dir = runs/sdm_dct_k64

    [stft]
    window_len = 1024
    hop = 256

    [train]
    batch_size = 128
    patience = 20
    max_epochs = 500
    lr = 1e-4
    normalize_input = true

    [data]
    source = synthetic      # or: wav
    path =                  # wav directory when source = wav
    n_clips = 60
    duration_s = 1.0
    split = 0.7, 0.15, 0.15
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import (ConfigurationError, DatasetSplit, fingerprint_files, frames_of, list_wavs, load_clips,
                     load_wav_dir, synthetic_split)
from .metrics import evaluate, read_report_means
from .model import VARIANTS, build_model, fit_input_normalization, load_checkpoint, save_checkpoint
from .signal import AudioFormatError, read_wav, resynthesize, stft, write_wav
from .trainer import TrainConfig, TrainingDivergedError, fit, write_log

log = logging.getLogger("sdmvae")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
OUTPUT_ENV = "SDMVAE_OUTPUT_DIR"


class UsageError(Exception):
    pass


@dataclass
class ExperimentConfig:
    variant: str = "sdm_dct"
    m: int = 32
    k: int = 32
    seed: int = 0
    output_dir: Path = Path("runs/experiment")
    window_len: int = 1024
    hop: int = 256
    train: TrainConfig = field(default_factory=TrainConfig)
    normalize_input: bool = True
    source: str = "synthetic"
    data_path: Path | None = None
    n_clips: int = 60
    duration_s: float = 1.0
    n_speakers: int | None = None
    split: tuple[float, float, float] = (0.7, 0.15, 0.15)

    @property
    def dictionary_kind(self) -> str | None:
        return {"sdm_dct": "dct", "sdm_identity": "identity"}.get(self.variant)

    def to_ini(self) -> configparser.ConfigParser:
        cp = configparser.ConfigParser()
        cp["experiment"] = {"variant": self.variant, "m": str(self.m), "k": str(self.k), "seed": str(self.seed),
                            "output_dir": str(self.output_dir)}
        cp["stft"] = {"window_len": str(self.window_len), "hop": str(self.hop)}
        cp["train"] = {"batch_size": str(self.train.batch_size), "patience": str(self.train.patience),
                       "max_epochs": str(self.train.max_epochs), "lr": repr(self.train.lr),
                       "normalize_input": str(self.normalize_input).lower()}
        cp["data"] = {"source": self.source, "path": "" if self.data_path is None else str(self.data_path),
                      "n_clips": str(self.n_clips), "duration_s": repr(self.duration_s),
                      "n_speakers": "" if self.n_speakers is None else str(self.n_speakers),
                      "split": ", ".join(repr(r) for r in self.split)}
        return cp


def _get(cp, section, key, cast, default):
    if not cp.has_option(section, key) or cp.get(section, key).strip() == "":
        return default
    raw = cp.get(section, key).strip()
    try:
        return cast(raw)
    except ValueError as exc:
        raise UsageError(f"[{section}] {key}: cannot parse {raw!r} ({exc})") from None


def _bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def load_config(path, apply_env: bool = True) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file {path} not found")
    return parse_config(path.read_text(), path.parent, apply_env, origin=str(path))


def parse_config(text: str, base: Path = Path("."), apply_env: bool = True, origin: str = "<config>") -> ExperimentConfig:
    """Parse INI text; relative paths resolve against ``base``."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=origin)
    except configparser.Error as exc:
        raise UsageError(f"{origin}: {exc}") from None
    d = ExperimentConfig()
    variant = _get(cp, "experiment", "variant", str, d.variant)
    if variant not in VARIANTS:
        raise UsageError(f"[experiment] variant: {variant!r} is not one of {', '.join(VARIANTS)}")
    m = _get(cp, "experiment", "m", int, d.m)
    k = _get(cp, "experiment", "k", int, m)
    if variant == "sdm_identity" and k != m:
        raise UsageError(f"[experiment] k: identity dictionary needs k = m, got m={m}, k={k}")
    if m < 2 or k < 1:
        raise UsageError(f"[experiment] m/k: need m >= 2 and k >= 1, got m={m}, k={k}")
    seed = _get(cp, "experiment", "seed", int, d.seed)
    out = Path(_get(cp, "experiment", "output_dir", str, str(d.output_dir)))
    if apply_env and os.environ.get(OUTPUT_ENV):
        out = Path(os.environ[OUTPUT_ENV])
    elif not out.is_absolute():
        out = base / out

    window_len = _get(cp, "stft", "window_len", int, d.window_len)
    hop = _get(cp, "stft", "hop", int, d.hop)
    if window_len < 4 or window_len % 4 or hop != window_len // 4:
        raise UsageError(f"[stft] hop: need an even window divisible by 4 and hop = window_len/4, got {window_len}/{hop}")

    try:
        train = TrainConfig(
            batch_size=_get(cp, "train", "batch_size", int, 128),
            patience=_get(cp, "train", "patience", int, 20),
            max_epochs=_get(cp, "train", "max_epochs", int, 500),
            rng_seed=seed, variant=variant, m=m, k=k,
            lr=_get(cp, "train", "lr", float, 1e-4))
    except ValueError as exc:
        raise UsageError(f"[train] {exc}") from None
    if train.lr < 0:
        raise UsageError("[train] lr: must be non-negative")

    source = _get(cp, "data", "source", str, d.source)
    if source not in ("synthetic", "wav"):
        raise UsageError(f"[data] source: expected 'synthetic' or 'wav', got {source!r}")
    data_path = _get(cp, "data", "path", str, None)
    if data_path is not None and not Path(data_path).is_absolute():
        data_path = base / data_path
    if source == "wav" and data_path is None:
        raise UsageError("[data] path: required when source = wav")
    split = _get(cp, "data", "split", lambda r: tuple(float(x) for x in r.split(",")), d.split)
    if len(split) != 3 or not np.isclose(sum(split), 1.0) or min(split) < 0:
        raise UsageError(f"[data] split: need three non-negative ratios summing to 1, got {split}")
    n_clips = _get(cp, "data", "n_clips", int, d.n_clips)
    duration = _get(cp, "data", "duration_s", float, d.duration_s)
    if source == "synthetic" and (n_clips < 3 or duration < 0.5):
        raise UsageError("[data] n_clips/duration_s: need at least 3 clips of at least 0.5 s")
    return ExperimentConfig(variant, m, k, seed, out, window_len, hop, train,
                            _get(cp, "train", "normalize_input", _bool, True), source,
                            None if data_path is None else Path(data_path), n_clips, duration,
                            _get(cp, "data", "n_speakers", int, None), split)


def load_dataset(cfg: ExperimentConfig) -> DatasetSplit:
    if cfg.source == "wav":
        return load_wav_dir(cfg.data_path, cfg.split, cfg.seed)
    return synthetic_split(cfg.seed, cfg.n_clips, cfg.duration_s, cfg.n_speakers, cfg.split)


def _write_text(path: Path, text: str) -> None:
    path.write_text(text if text.endswith("\n") else text + "\n")


# ---------------------------------------------------------------- commands


def cmd_train(config_path) -> int:
    cfg = load_config(config_path)
    data = load_dataset(cfg)
    train_frames = frames_of(data.train, cfg.window_len, cfg.hop).power
    val_frames = frames_of(data.validation, cfg.window_len, cfg.hop).power
    model = build_model(cfg.variant, cfg.m, cfg.k, n_bins=cfg.window_len // 2 + 1, seed=cfg.seed)
    if cfg.normalize_input:
        fit_input_normalization(model.params, train_frames)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    log.info("training %s (m=%d, k=%d) on %d frames, validating on %d", cfg.variant, cfg.m, cfg.k,
             len(train_frames), len(val_frames))
    result = fit(model, train_frames, val_frames, cfg.train,
                 on_epoch=lambda r: log.info("epoch %d train %.4f val %.4f", r.epoch, r.train_loss, r.val_loss))
    buf = io.StringIO()
    cfg.to_ini().write(buf)
    _write_text(out / "config.ini", buf.getvalue())
    _write_text(out / "fingerprint.txt", data.fingerprint)
    write_log(out / "train_log.csv", result.history)
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "wall_time"])
        for r in result.history:
            w.writerow([r.epoch, f"{r.wall_time:.3f}"])
    save_checkpoint(out / "model.ckpt", result.model,
                    {"seed": cfg.seed, "window_len": cfg.window_len, "hop": cfg.hop,
                     "data_fingerprint": data.fingerprint, "best_epoch": result.best_epoch,
                     "config_ini": buf.getvalue()})
    print(f"best epoch {result.best_epoch} val loss {result.best_val_loss:.4f}; wrote {out}")
    return EXIT_OK


def _checkpoint(path):
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"checkpoint {path} not found")
    return load_checkpoint(path)


def _eval_clips(model, data: str):
    """Clips named by ``data``: a WAV directory, or synthetic[:train|validation|test]."""
    if data.startswith("synthetic"):
        part = data.split(":", 1)[1] if ":" in data else "test"
        if part not in ("train", "validation", "test"):
            raise UsageError(f"unknown split {part!r}; use synthetic:train|validation|test")
        ini = model.config.get("config_ini")
        if not ini:
            raise UsageError("checkpoint carries no config echo; pass a WAV directory instead")
        split = load_dataset(parse_config(ini, apply_env=False, origin="checkpoint config echo"))
        return getattr(split, part), f"{split.fingerprint}:{part}"
    path = Path(data)
    if not path.is_dir():
        raise UsageError(f"data {data!r} is neither a directory nor 'synthetic[:split]'")
    return load_clips(path), fingerprint_files(list_wavs(path))


def cmd_eval(checkpoint, data: str, out: str | None = None) -> int:
    model = _checkpoint(checkpoint)
    clips, fingerprint = _eval_clips(model, data)
    if not clips:
        raise UsageError("no clips to evaluate")
    window_len = model.config.get("window_len", 1024)
    hop = model.config.get("hop", 256)
    report = evaluate(model, clips, window_len, hop)
    out_dir = Path(out) if out else Path(checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    report.to_csv(out_dir / "eval_report.csv")
    summary = report.summary()
    lines = [f"{k} = {v}" for k, v in summary.items()] + [f"variant = {model.variant}", f"data = {data}",
                                                         f"data_fingerprint = {fingerprint}"]
    _write_text(out_dir / "eval_summary.txt", "\n".join(lines))
    _write_text(out_dir / "eval_fingerprint.txt", fingerprint)
    print(report.format())
    return EXIT_OK


def cmd_resynth(checkpoint, in_wav, out_wav) -> int:
    model = _checkpoint(checkpoint)
    try:
        clip = read_wav(in_wav)
    except FileNotFoundError:
        raise UsageError(f"input {in_wav} not found") from None
    window_len = model.config.get("window_len", 1024)
    hop = model.config.get("hop", 256)
    frames = stft(clip, window_len, hop)
    power_est, _ = model.reconstruct(frames.power)
    est = resynthesize(power_est, frames.phase, window_len, hop, clip.sample_rate)
    write_wav(out_wav, est)
    print(f"wrote {out_wav}: {len(est)} samples ({len(clip) - len(est)} trimmed)")
    return EXIT_OK


def _label(cfg: configparser.ConfigParser) -> str:
    variant = cfg.get("experiment", "variant")
    m, k = cfg.get("experiment", "m"), cfg.get("experiment", "k")
    if variant == "sdm_dct":
        return f"SDM-VAE DCT (k={k}), m={m}"
    if variant == "sdm_identity":
        return f"SDM-VAE I, m={m}"
    return f"VAE, m={m}"


def cmd_compare(directory) -> int:
    root = Path(directory)
    if not root.is_dir():
        raise UsageError(f"{root} is not a directory")
    runs = sorted(p for p in root.iterdir() if (p / "config.ini").is_file())
    if len(runs) < 2:
        raise UsageError(f"need at least two experiments under {root}, found {len(runs)}")
    rows, incomplete, fingerprints = [], [], {}
    for run in runs:
        if not (run / "eval_report.csv").is_file():
            incomplete.append(run.name)
            continue
        cp = configparser.ConfigParser()
        cp.read(run / "config.ini")
        fp_file = run / "eval_fingerprint.txt"
        fingerprints[run.name] = fp_file.read_text().strip() if fp_file.is_file() else ""
        means = read_report_means(run / "eval_report.csv")
        rows.append((run.name, _label(cp), means))
    if incomplete:
        print("incomplete experiments (no eval_report.csv): " + ", ".join(incomplete), file=sys.stderr)
        return EXIT_RUNTIME
    if len(set(fingerprints.values())) != 1 or "" in fingerprints.values():
        detail = ", ".join(f"{k}={v or '?'}" for k, v in fingerprints.items())
        print(f"refusing to compare: evaluation data differ ({detail})", file=sys.stderr)
        return EXIT_RUNTIME
    with open(root / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["experiment", "method", "hoyer", "lsd_db", "sisdr_db"])
        for name, label, m in rows:
            w.writerow([name, label, repr(m["hoyer"]), repr(m["lsd"]), repr(m["sisdr"])])
    width = max(len(label) for _, label, _ in rows)
    lines = [f"{'method':<{width}} | {'Hoyer':>6} | {'LSD dB':>7} | {'SI-SDR dB':>9}", "-" * (width + 33)]
    lines += [f"{label:<{width}} | {m['hoyer']:6.3f} | {m['lsd']:7.3f} | {m['sisdr']:9.3f}" for _, label, m in rows]
    table = "\n".join(lines)
    _write_text(root / "comparison.txt", table)
    print(table)
    return EXIT_OK


# ---------------------------------------------------------------- entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sdmvae", description="Sparse dictionary-model VAE for speech power spectrograms.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("config")
    p = sub.add_parser("eval", help="analysis-resynthesis evaluation")
    p.add_argument("checkpoint")
    p.add_argument("data", help="WAV directory, or synthetic[:train|validation|test]")
    p.add_argument("--out", help="report directory (default: the checkpoint's directory)")
    p = sub.add_parser("resynth", help="resynthesize one WAV file")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("output")
    p = sub.add_parser("compare", help="tabulate evaluated experiments under a directory")
    p.add_argument("directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "train":
            return cmd_train(args.config)
        if args.command == "eval":
            return cmd_eval(args.checkpoint, args.data, args.out)
        if args.command == "resynth":
            return cmd_resynth(args.checkpoint, args.input, args.output)
        return cmd_compare(args.directory)
    except (UsageError, ConfigurationError) as exc:
        print(f"sdmvae: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDivergedError, FloatingPointError, AudioFormatError, ValueError, OSError) as exc:
        print(f"sdmvae: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
