"""Closed-form diffusion testbed: VE noising, analytic Gaussian-mixture
denoiser, score conversion, and reverse-time samplers.

The optimal denoiser of the variance-exploding process is the posterior
mean E[X0 | Xt]; for an isotropic Gaussian mixture it has a closed form,
so the reverse-time machinery can be verified end-to-end without any
learned model. Noise level doubles as integration time (sigma(t) = t),
giving diffusion coefficient g^2 = 2*sigma.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .rng import substream

__all__ = [
    "GaussianMixture",
    "SigmaSchedule",
    "ChurnParams",
    "karras_schedule",
    "gmm_posterior_mean",
    "score_from_denoiser",
    "reverse_sample",
    "sample_diagnostics",
]

MIN_SIGMA = 1e-4


@dataclass(frozen=True)
class GaussianMixture:
    """Isotropic Gaussian mixture: weights, means (K, d), stdevs (K,)."""

    weights: np.ndarray
    means: np.ndarray
    stdevs: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        s = np.asarray(self.stdevs, dtype=float).reshape(-1)
        if not (len(w) == len(mu) == len(s)):
            raise ValueError("component count mismatch")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")
        if np.any(s <= 0):
            raise ValueError("component stdevs must be positive")
        for arr in (w, mu, s):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "stdevs", s)

    @property
    def dimension(self) -> int:
        return self.means.shape[1]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        eps = rng.standard_normal((n, self.dimension))
        return self.means[comp] + self.stdevs[comp, None] * eps

    def mean(self) -> np.ndarray:
        return (self.weights[:, None] * self.means).sum(axis=0)


@dataclass(frozen=True)
class SigmaSchedule:
    """Strictly decreasing noise levels; the last must stay >= MIN_SIGMA."""

    sigmas: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sigmas, dtype=float).reshape(-1)
        if len(s) < 2:
            raise ValueError("schedule needs at least 2 levels")
        if np.any(np.diff(s) >= 0):
            raise ValueError("sigmas must be strictly decreasing")
        if s[-1] < MIN_SIGMA:
            raise ValueError(f"last sigma must be >= {MIN_SIGMA}")
        s.setflags(write=False)
        object.__setattr__(self, "sigmas", s)

    def __len__(self):
        return len(self.sigmas)


def karras_schedule(n: int, sigma_min: float, sigma_max: float,
                    rho: float = 7.0) -> SigmaSchedule:
    """Power-interpolated noise schedule from sigma_max down to sigma_min."""
    if n < 2:
        raise ValueError("need at least 2 steps")
    if not 0 < sigma_min < sigma_max:
        raise ValueError("require 0 < sigma_min < sigma_max")
    i = np.arange(n) / (n - 1)
    sig = (sigma_max ** (1 / rho)
           + i * (sigma_min ** (1 / rho) - sigma_max ** (1 / rho))) ** rho
    # pin the endpoints exactly against float drift
    sig[0], sig[-1] = sigma_max, sigma_min
    return SigmaSchedule(sig)


def gmm_posterior_mean(target: GaussianMixture, x, sigma: float) -> np.ndarray:
    """E[X0 | Xt = x] for the VE process at noise level sigma (closed form).

    Component responsibilities use log-sum-exp for stability; each
    component contributes its conjugate posterior mean
    mu_k + s_k^2/(s_k^2 + sigma^2) (x - mu_k).
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    var = target.stdevs ** 2 + sigma ** 2  # (K,)
    diff = pts[:, None, :] - target.means[None, :, :]  # (n, K, d)
    sq = (diff ** 2).sum(axis=2)
    log_resp = (np.log(target.weights)[None, :]
                - 0.5 * target.dimension * np.log(2 * np.pi * var)[None, :]
                - 0.5 * sq / var[None, :])
    log_resp -= logsumexp(log_resp, axis=1, keepdims=True)
    resp = np.exp(log_resp)
    shrink = (target.stdevs ** 2 / var)[None, :, None]
    comp_mean = target.means[None, :, :] + shrink * diff
    out = (resp[:, :, None] * comp_mean).sum(axis=1)
    return out[0] if np.asarray(x).ndim == 1 else out


def score_from_denoiser(denoised, x, sigma: float) -> np.ndarray:
    """Stein score from the denoiser output: (D - x) / sigma^2."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return (np.asarray(denoised, dtype=float)
            - np.asarray(x, dtype=float)) / sigma ** 2


@dataclass(frozen=True)
class ChurnParams:
    """Stochastic-churn sampler knobs (production defaults)."""

    gamma0: float = 0.8
    noise_scale: float = 1.003
    step_scale: float = 1.5


def reverse_sample(target: GaussianMixture, schedule: SigmaSchedule,
                   n_samples: int, seed: int = 0,
                   method: str = "euler_maruyama",
                   churn: ChurnParams = ChurnParams()) -> np.ndarray:
    """Draw samples by integrating the reverse-time VE dynamics.

    Methods:

    - ``euler_maruyama``: reverse SDE, dx = -2 sigma s(x) dsigma plus
      sqrt(2 sigma) noise per step.
    - ``probability_flow_ode``: deterministic flow with the half score
      coefficient, dx = -sigma s(x) dsigma.
    - ``churn``: noise-inflating stochastic variant with the documented
      production constants.

    Chains start from N(0, sigma_max^2 I) and integrate down to the last
    schedule sigma; deterministic given the seed.
    """
    if method not in ("euler_maruyama", "probability_flow_ode", "churn"):
        raise ValueError(f"unknown method: {method!r}")
    d = target.dimension
    if n_samples == 0:
        return np.empty((0, d))
    rng = substream(seed, "reverse", method)
    sig = schedule.sigmas
    x = sig[0] * rng.standard_normal((n_samples, d))

    for i in range(len(sig) - 1):
        s_cur, s_next = sig[i], sig[i + 1]
        dt = s_next - s_cur  # negative
        if method == "euler_maruyama":
            score = score_from_denoiser(
                gmm_posterior_mean(target, x, s_cur), x, s_cur)
            x = x - 2.0 * s_cur * score * dt \
                + np.sqrt(2.0 * s_cur) * np.sqrt(-dt) \
                * rng.standard_normal(x.shape)
        elif method == "probability_flow_ode":
            score = score_from_denoiser(
                gmm_posterior_mean(target, x, s_cur), x, s_cur)
            x = x - s_cur * score * dt
        else:
            s_hat = s_cur * (1.0 + churn.gamma0)
            bump = churn.noise_scale * np.sqrt(s_hat ** 2 - s_cur ** 2)
            x_hat = x + bump * rng.standard_normal(x.shape)
            denoised = gmm_posterior_mean(target, x_hat, s_hat)
            drift = (x_hat - denoised) / s_hat
            x = x_hat + churn.step_scale * (s_next - s_hat) * drift
    return x


def sample_diagnostics(samples: np.ndarray,
                       target: GaussianMixture) -> dict:
    """Moments plus nearest-mean cluster weights and centroids."""
    samples = np.atleast_2d(samples)
    out = {
        "n": int(len(samples)),
        "mean": samples.mean(axis=0).tolist() if len(samples) else [],
        "cov_diag": (samples.var(axis=0).tolist() if len(samples) else []),
    }
    if len(samples):
        d2 = ((samples[:, None, :] - target.means[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        weights = np.bincount(assign, minlength=len(target.weights)) / len(samples)
        out["cluster_weights"] = weights.tolist()
        out["cluster_means"] = [
            samples[assign == k].mean(axis=0).tolist()
            if np.any(assign == k) else [float("nan")] * target.dimension
            for k in range(len(target.weights))
        ]
    return out
