"""Walk through the signal front end: STFT, resynthesis and the DCT dictionary."""

import numpy as np

from sdmvae.corpus import synth_speech_like
from sdmvae.dictionary import apply, build_dct, build_identity
from sdmvae.metrics import hoyer
from sdmvae.signal import interior, istft, resynthesize, sine_window, stft

# one second of synthetic voiced speech at 16 kHz
clip = synth_speech_like(seed=0, n_clips=1, duration_s=1.0)[0]
print(clip.name, len(clip), "samples")

# 1024-sample sine window, hop 256 -> 513 bins per frame
frames = stft(clip)
print("power spectrogram", frames.power.shape)

# the squared window overlaps to a constant, so the inverse is exact away from the edges
w = sine_window(1024)
print("overlap gain", (w**2).sum() / 256)
back = istft(frames).samples
sl = interior(len(back))
print("max interior error", np.max(np.abs(back[sl] - clip.samples[sl])))

# resynthesis from power plus the original phase is the same operation
est = resynthesize(frames.power, frames.phase).samples
print("same as istft:", np.allclose(est, back))

# energy sits in the low bins, as for real voiced speech
cutoff = 4000 * 1024 // 16000
print("fraction below 4 kHz", frames.power[:, :cutoff].sum() / frames.power.sum())

# DCT dictionary: unit-norm atoms, orthonormal when complete
d = build_dct(m=8, k=8)
print("column norms", np.round(np.linalg.norm(d.atoms, axis=0), 12))
print("max off-diagonal Gram", np.max(np.abs(d.gram() - np.eye(8))))

# an overcomplete dictionary has correlated atoms
d2 = build_dct(m=8, k=16)
g = d2.gram()
print("overcomplete max |<d_i, d_j>|", np.max(np.abs(g - np.diag(np.diag(g)))))

# a one-hot code picks one atom; its Hoyer score is 1
codes = np.zeros((1, 16))
codes[0, 3] = 2.0
z = apply(d2, codes).data
print("z is atom 3:", np.allclose(z[0], 2.0 * d2.atoms[:, 3]))
print("hoyer(one-hot) =", hoyer(codes[0]), " hoyer(flat) =", hoyer(np.ones(16)))
print("hoyer of z itself", round(hoyer(z[0]), 3))

# identity dictionary is a no-op
print("identity passes codes through:", np.array_equal(apply(build_identity(4), np.eye(4)).data, np.eye(4)))
