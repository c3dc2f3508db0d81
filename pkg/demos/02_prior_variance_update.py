"""The prior variance update and the KL term it leaves behind."""

import numpy as np

from sdmvae.model import GaussianPosterior, kl_diag_gauss, kl_standard_normal, update_gamma

rng = np.random.default_rng(0)

# a posterior over 6 code coefficients, two of them clearly active
mu = np.array([[2.0, -1.5, 0.05, 0.0, 0.1, -0.02]])
sigma = np.full((1, 6), 0.3)
post = GaussianPosterior.from_moments(mu, sigma)

# gamma minimising the KL is the posterior second moment
gamma = update_gamma(post)
print("gamma", np.round(gamma, 4))

kl_opt = kl_diag_gauss(post, gamma).item()
print("KL at optimum", kl_opt)
print("closed form 0.5 * sum log(1 + mu^2/sigma^2)", 0.5 * np.sum(np.log1p(mu**2 / sigma**2)))

# any rescaling of gamma does worse
for f in (0.5, 0.8, 1.25, 2.0):
    print(f"gamma x {f}: KL = {kl_diag_gauss(post, gamma * f).item():.4f}")

# random perturbations never win either
worst = min(kl_diag_gauss(post, gamma * np.exp(rng.uniform(-0.7, 0.7, (1, 6)))).item() - kl_opt
            for _ in range(2000))
print("smallest excess over 2000 random perturbations", worst)

# compare with a fixed N(0, I) prior: inactive coefficients are charged
# almost nothing under the learned prior, which is what favours sparse codes
print("per-coefficient KL, learned prior:", np.round(0.5 * np.log1p(mu**2 / sigma**2), 3))
per_std = [kl_standard_normal(GaussianPosterior.from_moments(mu[:, [j]], sigma[:, [j]])).item() for j in range(6)]
print("per-coefficient KL, N(0, I) prior:", np.round(per_std, 3))
