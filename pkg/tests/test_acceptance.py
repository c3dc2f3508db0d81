"""Acceptance gate.  Each test appends one PASS/FAIL line to the terminal summary.

The sparsity-trend test trains four models on 120 synthetic clips and takes
several minutes on one core.
"""

import time
import wave

import numpy as np
import pytest

from sdmvae.autodiff import backward
from sdmvae.cli import EXIT_OK, main
from sdmvae.corpus import frames_of, synthetic_split
from sdmvae.dictionary import apply, build_dct, build_identity
from sdmvae.metrics import evaluate, hoyer
from sdmvae.model import (GaussianPosterior, build_model, fit_input_normalization, kl_diag_gauss, kl_standard_normal,
                          load_checkpoint, update_gamma)
from sdmvae.signal import AudioClip, _cola_gain, interior, istft, sine_window, stft, write_wav
from sdmvae.trainer import EarlyStopping, TrainConfig, fit, write_log

from conftest import ACCEPTANCE_LINES


def record(name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------- gradients


def fd_rel_errors(model, s, eps, rng, entries=4, step=1e-5):
    """Per-tensor max relative error between backward() and central differences."""
    params = model.params
    for t in params:
        t.zero_grad()
    backward(model.loss_terms(s, eps).loss)
    errors = {}
    for name, t in params.items():
        base = t.data.copy()
        idxs = {tuple(int(rng.integers(0, d)) for d in t.shape) for _ in range(entries)}
        analytic, numeric = [], []
        for idx in idxs:
            vals = []
            for sign in (1, -1):
                pert = base.copy()
                pert[idx] += sign * step
                t.assign(pert)
                vals.append(model.loss_terms(s, eps).loss.item())
            t.assign(base)
            numeric.append((vals[0] - vals[1]) / (2 * step))
            analytic.append(t.grad[idx])
        a, n = np.array(analytic), np.array(numeric)
        errors[name] = float(np.max(np.abs(a - n)) / max(np.max(np.abs(a)), np.max(np.abs(n)), 1e-8))
    return errors


def test_gradient_correctness():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst, triples = 0.0, 0
    for variant in ("standard", "sdm_dct", "sdm_identity"):
        for trial in range(20):
            model = build_model(variant, 8, 8, n_bins=64, hidden=16, seed=trial)
            for t in model.params:  # move biases off zero so every path is exercised
                t.assign(t.data + 0.1 * rng.standard_normal(t.shape))
            s = rng.exponential(size=(3, 64)) * rng.uniform(0.1, 10)
            eps = rng.standard_normal((3, model.code_dim))
            worst = max(worst, max(fd_rel_errors(model, s, eps, rng).values()))
            triples += 1
    elapsed = time.perf_counter() - start
    record("gradient correctness", worst < 1e-4 and elapsed < 60,
           f"{triples} triples, worst tensor rel err {worst:.2e} (< 1e-4), {elapsed:.1f}s (< 60s)")


# ---------------------------------------------------------------- KL


def mc_kl(mu, sigma, gamma, rng, n=10**6):
    total = 0.0
    for j in range(mu.size):
        a = mu.flat[j] + sigma.flat[j] * rng.standard_normal(n)
        log_q = -0.5 * np.log(2 * np.pi * sigma.flat[j] ** 2) - (a - mu.flat[j]) ** 2 / (2 * sigma.flat[j] ** 2)
        log_p = -0.5 * np.log(2 * np.pi * gamma.flat[j]) - a**2 / (2 * gamma.flat[j])
        total += np.mean(log_q - log_p)
    return total


def test_kl_oracle():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        mu, sigma = rng.uniform(-2, 2, (1, 3)), rng.uniform(0.3, 2, (1, 3))
        gamma = rng.uniform(0.3, 3, (1, 3))
        post = GaussianPosterior.from_moments(mu, sigma)
        for closed, g in ((kl_diag_gauss(post, gamma).item(), gamma),
                          (kl_standard_normal(post).item(), np.ones_like(gamma))):
            worst = max(worst, abs(closed - mc_kl(mu, sigma, g, rng)) / abs(closed))
    record("KL oracle", worst < 0.01, f"20 posteriors x 2 priors, worst MC rel diff {worst:.2e} (< 1e-2)")


# ---------------------------------------------------------------- gamma update


def test_gamma_optimality():
    rng = np.random.default_rng(2)
    beaten, simple_err = 0, 0.0
    for _ in range(1000):
        mu, sigma = rng.standard_normal((1, 4)), rng.uniform(0.1, 3, (1, 4))
        post = GaussianPosterior.from_moments(mu, sigma)
        gamma = update_gamma(post)
        best = kl_diag_gauss(post, gamma).item()
        simple_err = max(simple_err, abs(best - 0.5 * np.sum(np.log1p(mu**2 / sigma**2))))
        factors = np.exp(rng.uniform(np.log(0.5), np.log(2.0), (100, 4)))
        for f in factors:
            if kl_diag_gauss(post, gamma * f).item() < best:
                beaten += 1
    record("gamma optimality", beaten == 0 and simple_err < 1e-10,
           f"1000 x 100 perturbations, {beaten} beat the closed form; simplified KL err {simple_err:.1e} (< 1e-10)")


# ---------------------------------------------------------------- STFT


def test_stft_round_trip():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(5):
        clip = AudioClip(rng.uniform(-1, 1, 16000))
        back = istft(stft(clip)).samples
        sl = interior(len(back))  # trailing samples past the last full frame are not analysed
        worst = max(worst, np.max(np.abs(back[sl] - clip.samples[sl])))
    w2 = sine_window(1024) ** 2
    sums = np.array([w2[r::256].sum() for r in range(256)])
    cola = np.max(np.abs(sums / _cola_gain(sine_window(1024), 256) - 1))
    record("STFT round trip", worst < 1e-10 and cola < 1e-12,
           f"interior max abs err {worst:.1e} (< 1e-10), COLA rel dev {cola:.1e} (< 1e-12)")


# ---------------------------------------------------------------- dictionaries


def test_dictionary_contracts():
    norm_err, gram_err = 0.0, 0.0
    for m in (2, 8, 32):
        for k in (m // 2 or 1, m, 2 * m):
            d = build_dct(m, k)
            norm_err = max(norm_err, np.max(np.abs(np.linalg.norm(d.atoms, axis=0) - 1)))
            if k == m:
                g = d.gram()
                gram_err = max(gram_err, np.max(np.abs(g - np.diag(np.diag(g)))))
    codes = np.random.default_rng(4).standard_normal((5, 16))
    ident = build_identity(16)
    id_norm = np.max(np.abs(np.linalg.norm(ident.atoms, axis=0) - 1))
    exact = np.array_equal(apply(ident, codes).data, codes)
    record("dictionary contracts", max(norm_err, id_norm) < 1e-12 and gram_err < 1e-10 and exact,
           f"column norm err {max(norm_err, id_norm):.1e}, complete DCT off-diag {gram_err:.1e}, identity exact={exact}")


# ---------------------------------------------------------------- Hoyer


def test_hoyer_contract():
    rng = np.random.default_rng(5)
    one_hot = max(abs(hoyer(np.eye(d)[d // 2]) - 1) for d in (2, 10, 64))
    const = max(abs(hoyer(np.full(d, 0.7))) for d in (2, 10, 64))
    inv = 0.0
    for _ in range(200):
        v = rng.standard_normal(int(rng.integers(2, 50)))
        h = hoyer(v)
        inv = max(inv, abs(hoyer(-37.5 * v) - h), abs(hoyer(rng.permutation(v)) - h))
    hand = hoyer([3.0, 4.0])
    ok = one_hot < 1e-12 and const < 1e-12 and inv < 1e-12 and abs(hand - 0.0343) < 1e-4
    record("Hoyer contract", ok, f"one-hot err {one_hot:.0e}, constant err {const:.0e}, invariance err {inv:.0e}, "
                                 f"[3,4] -> {hand:.4f}")


# ---------------------------------------------------------------- sparsity trend


def test_sparsity_trend():
    start = time.perf_counter()
    split = synthetic_split(0, 120, 1.0)
    train, val = frames_of(split.train).power, frames_of(split.validation).power
    results = {}
    for variant, k in (("standard", 32), ("sdm_identity", 32), ("sdm_dct", 32), ("sdm_dct", 64)):
        model = build_model(variant, 32, k, seed=0)
        fit_input_normalization(model.params, train)
        cfg = TrainConfig(variant=variant, m=32, k=k, lr=1e-3, max_epochs=300, patience=20)
        report = evaluate(fit(model, train, val, cfg).model, split.test)
        results[f"{variant}/k={k}"] = (report.hoyer_mean, report.lsd_mean)
    base_h, base_lsd = results.pop("standard/k=32")
    ok = all(h > base_h and lsd <= 1.1 * base_lsd for h, lsd in results.values())
    parts = [f"VAE H={base_h:.3f} LSD={base_lsd:.2f}"]
    parts += [f"{name} H={h:.3f} LSD={lsd:.2f} ({lsd / base_lsd - 1:+.1%})" for name, (h, lsd) in results.items()]
    record("sparsity trend", ok, "; ".join(parts) + f"; {time.perf_counter() - start:.0f}s")


# ---------------------------------------------------------------- training mechanics


def test_training_mechanics(tmp_path):
    rng = np.random.default_rng(6)
    frames = rng.exponential(size=(96, 33)) * rng.exponential(size=(1, 33))
    cfg = TrainConfig(batch_size=16, lr=1e-3, patience=3, max_epochs=8, m=4, k=8, rng_seed=7)
    for i in range(2):
        result = fit(build_model("sdm_dct", 4, 8, n_bins=33, hidden=16, seed=7), frames[:64], frames[64:], cfg)
        write_log(tmp_path / f"log{i}.csv", result.history)
    identical = (tmp_path / "log0.csv").read_bytes() == (tmp_path / "log1.csv").read_bytes()

    losses = [4.0, 3.0, 2.5, 2.7, 2.5, 2.6, 3.0, 2.9, 0.1, 0.1]
    stopper = EarlyStopping(patience=5)
    stopped = next(e for e, v in enumerate(losses) if stopper.update(v))
    exact = stopper.best_epoch == 2 and stopped - stopper.best_epoch == 5
    record("training mechanics", identical and exact,
           f"logs bit-identical={identical}; best epoch {stopper.best_epoch}, stopped at {stopped} (patience 5)")


# ---------------------------------------------------------------- end to end

SMOKE = """\
[experiment]
variant = sdm_dct
m = 8
k = 16
seed = 0
output_dir = run

[train]
batch_size = 64
patience = 5
max_epochs = 30
lr = 3e-3

[data]
source = synthetic
n_clips = 20
n_speakers = 10
duration_s = 1.0
"""


def test_end_to_end_smoke(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("SDMVAE_OUTPUT_DIR", raising=False)
    (tmp_path / "smoke.ini").write_text(SMOKE)
    ckpt = tmp_path / "run/model.ckpt"
    codes = [main(["train", str(tmp_path / "smoke.ini")]),
             main(["eval", str(ckpt), "synthetic:test"])]
    split = synthetic_split(0, 20, 1.0, 10)
    src = tmp_path / "in.wav"
    write_wav(src, split.test[0])
    codes.append(main(["resynth", str(ckpt), str(src), str(tmp_path / "out.wav")]))
    capsys.readouterr()

    trained = load_checkpoint(ckpt)
    untrained = build_model("sdm_dct", 8, 16, seed=0)
    fit_input_normalization(untrained.params, frames_of(split.train).power)
    report_untrained = evaluate(untrained, split.test)
    report_trained = evaluate(trained, split.test)
    lsd_trained = report_trained.lsd_mean
    finite = all(np.isfinite(v) for v in report_trained.summary().values())
    with wave.open(str(tmp_path / "out.wav")) as w:
        playable = (w.getnchannels(), w.getsampwidth(), w.getframerate()) == (1, 2, 16000) and w.getnframes() > 0
    ok = codes == [EXIT_OK] * 3 and finite and playable and lsd_trained < report_untrained.lsd_mean
    record("end-to-end smoke", ok, f"exit codes {codes}, finite metrics={finite}, playable WAV={playable}, "
                                   f"LSD trained {lsd_trained:.2f} < untrained {report_untrained.lsd_mean:.2f} dB")
