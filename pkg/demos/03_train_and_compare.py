"""Train a standard VAE and a sparse dictionary-model VAE on synthetic speech.

A reduced run (a few minutes on one core).  The acceptance suite runs the
same comparison at full size.
"""

import numpy as np

from sdmvae.corpus import frames_of, synthetic_split
from sdmvae.metrics import evaluate
from sdmvae.model import build_model, fit_input_normalization
from sdmvae.trainer import TrainConfig, fit

split = synthetic_split(seed=0, n_clips=120, duration_s=1.0)
train = frames_of(split.train).power
val = frames_of(split.validation).power
print(len(train), "training frames,", len(val), "validation frames,", len(split.test), "test clips")
print("test speakers", sorted(split.speakers("test")))

rows = []
for variant, k in [("standard", 32), ("sdm_dct", 64)]:
    model = build_model(variant, m=32, k=k, seed=0)
    # per-bin log-power statistics of the training set, frozen from here on
    fit_input_normalization(model.params, train)
    before = evaluate(model, split.test)
    cfg = TrainConfig(variant=variant, m=32, k=k, lr=1e-3, max_epochs=100, patience=20)
    result = fit(model, train, val, cfg)
    after = evaluate(result.model, split.test)
    print(f"{variant:13s} best epoch {result.best_epoch:3d}  LSD {before.lsd_mean:6.2f} -> {after.lsd_mean:5.2f} dB")
    rows.append((variant, k, after))

print()
print(f"{'model':13s} {'k':>3s} {'Hoyer':>6s} {'LSD':>6s} {'SI-SDR':>7s}")
for variant, k, r in rows:
    print(f"{variant:13s} {k:3d} {r.hoyer_mean:6.3f} {r.lsd_mean:6.2f} {r.sisdr_mean:7.2f}")

# codes of one frame from the DCT model: a few large entries, the rest near zero
codes = result.model.posterior_mean(frames_of(split.test[:1]).power)
print("\nlargest |code| entries of frame 10:", np.round(np.sort(np.abs(codes[10]))[::-1][:6], 3))
