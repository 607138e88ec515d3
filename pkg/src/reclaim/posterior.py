"""Sampling Importance Resampling for the latent posterior p(x | y).

Proposals are Gaussians centered at the channel's latent-space pullback of
y; weights combine the learned latent density, the channel density, and the
proposal correction, all in log space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePosteriorError, ParameterError
from .measurement import (Channel, GaussianAdditiveChannel, channel_logpdf,
                          proposal_covariance, proposal_mean)
from .model import LogDetConfig, ModelParams, latent_logpdf_batch
from .scm import InterventionRegime


@dataclass(frozen=True)
class WeightedParticles:
    """SIR output for a single observation."""

    xs: np.ndarray
    log_w: np.ndarray
    norm_w: np.ndarray
    resampled: np.ndarray

    @property
    def ess(self) -> float:
        return effective_sample_size(self)


def effective_sample_size(particles: WeightedParticles) -> float:
    """1 / sum(norm_w^2); ranges from 1 (degenerate) to S (uniform)."""
    return float(1.0 / np.sum(particles.norm_w ** 2))


def _normalize_log_weights(log_w: np.ndarray) -> np.ndarray:
    finite = np.isfinite(log_w)
    if not np.any(finite):
        raise DegeneratePosteriorError("all importance weights are numerically zero")
    shifted = log_w - np.max(log_w[finite])
    w = np.where(finite, np.exp(np.where(finite, shifted, -np.inf)), 0.0)
    return w / w.sum()


def _proposal_logpdf(xs: np.ndarray, mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    return -0.5 * np.sum(np.log(2.0 * np.pi * var) + (xs - mean) ** 2 / var, axis=-1)


class GaussianProposal:
    """Latent-space proposal q(x | y) for a batch of observations.

    Additive channel: N(y, D) with the channel's own noise variances. Linear
    channel: the Gaussian approximation of the posterior, combining the
    channel likelihood pulled back through the mixing with a diagonal prior
    at the latent noise scale: precision A'D^-1 A + diag(1/prior_var). The
    naive d-dimensional diagonal built from raw measurement variances is
    orders of magnitude wider than the posterior once the mixing has any
    redundancy (weights collapse), while the un-ridged pullback explodes
    along weakly measured directions of ill-conditioned square systems.
    """

    def __init__(self, channel: Channel, Y: np.ndarray, scale: float = 1.0,
                 prior_var=1.0):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        self.d = channel.d
        if isinstance(channel, GaussianAdditiveChannel):
            self.diag_var = channel.noise_var * scale
            self.mean = Y.copy()
            self.chol = None
        else:
            A = channel.mixing
            prior_prec = 1.0 / np.broadcast_to(np.asarray(prior_var, dtype=float),
                                               (self.d,))
            precision = (A / channel.noise_var[:, None]).T @ A / scale \
                + np.diag(prior_prec)
            cov = np.linalg.inv(precision)
            cov = 0.5 * (cov + cov.T)
            self.chol = np.linalg.cholesky(cov)
            self.precision = precision
            self.logdet_cov = 2.0 * float(np.sum(np.log(np.diag(self.chol))))
            self.mean = Y @ (A / channel.noise_var[:, None]) @ cov.T
            self.diag_var = None

    def draw(self, rng, rows, n_samples: int) -> np.ndarray:
        mu = self.mean[rows]
        eps = rng.normal(size=(mu.shape[0], n_samples, self.d))
        if self.chol is None:
            return mu[:, None, :] + eps * np.sqrt(self.diag_var)
        return mu[:, None, :] + eps @ self.chol.T

    def logpdf(self, xs: np.ndarray, rows) -> np.ndarray:
        mu = self.mean[rows]
        delta = xs - mu[:, None, :]
        if self.chol is None:
            return _proposal_logpdf(xs, mu[:, None, :], self.diag_var)
        quad = np.einsum("ksi,ij,ksj->ks", delta, self.precision, delta)
        return -0.5 * (self.d * np.log(2.0 * np.pi) + self.logdet_cov + quad)


def sir_sample(y: np.ndarray, params: ModelParams, mask, channel: Channel,
               regime: InterventionRegime, intervention_var: float,
               n_proposals: int, n_resample: int, seed=None,
               logdet_mode: str = "exact",
               logdet_cfg: LogDetConfig = LogDetConfig()) -> WeightedParticles:
    """Approximate posterior draws for one observation.

    Draws ``n_proposals`` Gaussian proposals, weights them by
    latent * channel / proposal in log space, normalizes, and resamples
    ``n_resample`` particles multinomially. A collapsed weight vector
    (ESS below 2 with several proposals) is retried once with the proposal
    covariance doubled before raising.
    """
    if not (n_proposals >= n_resample >= 1):
        raise ParameterError("need n_proposals >= n_resample >= 1")
    y = np.atleast_2d(np.asarray(y, dtype=float))
    rng = np.random.default_rng(seed)
    rows = np.array([0])

    for attempt, scale in enumerate((1.0, 2.0)):
        proposal = GaussianProposal(channel, y, scale=scale,
                                    prior_var=params.sigma_z ** 2)
        xs = proposal.draw(rng, rows, n_proposals)[0]
        log_latent = latent_logpdf_batch(params, mask, regime, intervention_var, xs,
                                         logdet_mode, logdet_cfg,
                                         seed=rng.integers(2 ** 63))
        log_chan = channel_logpdf(channel, y[0][None, :], xs)
        log_q = proposal.logpdf(xs[None, :, :], rows)[0]
        log_w = log_latent + np.atleast_1d(log_chan) - log_q
        try:
            norm_w = _normalize_log_weights(log_w)
        except DegeneratePosteriorError:
            if attempt == 0 and n_proposals > 1:
                continue
            raise
        ess = 1.0 / np.sum(norm_w ** 2)
        if n_proposals > 1 and ess < 2.0 and attempt == 0:
            continue
        if n_proposals > 1 and ess < 2.0:
            raise DegeneratePosteriorError(
                f"effective sample size {ess:.2f} after widened retry")
        idx = rng.choice(n_proposals, size=n_resample, replace=True, p=norm_w)
        return WeightedParticles(xs=xs, log_w=log_w, norm_w=norm_w,
                                 resampled=xs[idx])
    raise DegeneratePosteriorError("unreachable")  # pragma: no cover


def sir_sample_batch(Y: np.ndarray, params: ModelParams, mask, channel: Channel,
                     regime: InterventionRegime, intervention_var: float,
                     n_proposals: int, n_resample: int, seed=None,
                     logdet_mode: str = "exact",
                     logdet_cfg: LogDetConfig = LogDetConfig(),
                     chunk: int = 65536):
    """Vectorized SIR across a regime's observations.

    Returns ``(particles, ess, kept)``: resampled particles of shape
    (n_kept, n_resample, d), per-kept-observation effective sample sizes,
    and the boolean keep mask over input rows (False marks observations
    whose weights collapsed even after the widened retry).
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = Y.shape[0]
    rng = np.random.default_rng(seed)
    d = params.d

    S = n_proposals
    log_w = np.full((n, S), -np.inf)
    xs_all = np.empty((n, S, d))
    pending = np.arange(n)
    for scale in (1.0, 2.0):
        if pending.size == 0:
            break
        proposal = GaussianProposal(channel, Y, scale=scale,
                                    prior_var=params.sigma_z ** 2)
        for start in range(0, pending.size, max(1, chunk // S)):
            rows = pending[start:start + max(1, chunk // S)]
            xs = proposal.draw(rng, rows, S)
            flat = xs.reshape(-1, d)
            log_latent = latent_logpdf_batch(params, mask, regime, intervention_var,
                                             flat, logdet_mode, logdet_cfg,
                                             seed=rng.integers(2 ** 63))
            log_chan = channel_logpdf(channel, Y[rows][:, None, :], xs)
            log_q = proposal.logpdf(xs, rows)
            log_w[rows] = log_latent.reshape(rows.size, S) + log_chan - log_q
            xs_all[rows] = xs
        finite_max = np.max(np.where(np.isfinite(log_w[pending]), log_w[pending], -np.inf),
                            axis=1)
        ok = np.isfinite(finite_max)
        w = np.exp(np.clip(log_w[pending] - finite_max[:, None], -745.0, 0.0))
        w_sum = w.sum(axis=1)
        ess_pending = np.where(ok, w_sum ** 2 / np.maximum((w ** 2).sum(axis=1), 1e-300), 0.0)
        bad = ~ok | ((S > 1) & (ess_pending < 2.0))
        pending = pending[bad]

    kept = np.ones(n, dtype=bool)
    kept[pending] = False
    keep_idx = np.nonzero(kept)[0]

    norm_w = np.zeros((keep_idx.size, S))
    for pos, row in enumerate(keep_idx):
        norm_w[pos] = _normalize_log_weights(log_w[row])
    ess = 1.0 / np.sum(norm_w ** 2, axis=1) if keep_idx.size else np.zeros(0)

    # Vectorized multinomial resampling via inverse-CDF on sorted uniforms.
    particles = np.empty((keep_idx.size, n_resample, d))
    if keep_idx.size:
        cdf = np.cumsum(norm_w, axis=1)
        cdf[:, -1] = 1.0
        u = rng.random((keep_idx.size, n_resample))
        pick = np.sum(u[:, :, None] > cdf[:, None, :], axis=2)
        particles = xs_all[keep_idx[:, None], pick]
    return particles, ess, kept
