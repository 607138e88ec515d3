"""Measurement channels: corrupt latents into observations.

Two channels are supported: additive Gaussian noise on each coordinate
(``y = x + eps``) and a known full-column-rank linear mixing
(``y = A x + eps``), both with independent Gaussian noise of per-output
variance ``noise_var``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, RankError

_RANK_TOL = 1e-10


@dataclass(frozen=True)
class GaussianAdditiveChannel:
    """y = x + eps, eps ~ N(0, diag(noise_var))."""

    noise_var: np.ndarray

    def __post_init__(self):
        var = np.atleast_1d(np.asarray(self.noise_var, dtype=float))
        if var.ndim != 1 or np.any(var <= 0):
            raise ParameterError("noise variances must be a positive vector")
        object.__setattr__(self, "noise_var", var)

    @property
    def d(self) -> int:
        return self.noise_var.shape[0]

    @property
    def p(self) -> int:
        return self.noise_var.shape[0]


@dataclass(frozen=True)
class LinearChannel:
    """y = A x + eps with known A (p x d, rank d) and eps ~ N(0, diag(noise_var))."""

    mixing: np.ndarray
    noise_var: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.mixing, dtype=float)
        var = np.atleast_1d(np.asarray(self.noise_var, dtype=float))
        if A.ndim != 2:
            raise ParameterError("mixing matrix must be 2-dimensional")
        p, d = A.shape
        if p < d:
            raise ParameterError(f"need at least as many measurements as latents (p={p}, d={d})")
        if var.shape != (p,) or np.any(var <= 0):
            raise ParameterError("noise variances must be a positive p-vector")
        smallest = np.linalg.svd(A, compute_uv=False)[-1]
        if smallest <= _RANK_TOL:
            raise RankError(f"mixing matrix is rank deficient (smallest singular value {smallest:.2e})")
        object.__setattr__(self, "mixing", A)
        object.__setattr__(self, "noise_var", var)

    @property
    def d(self) -> int:
        return self.mixing.shape[1]

    @property
    def p(self) -> int:
        return self.mixing.shape[0]


Channel = GaussianAdditiveChannel | LinearChannel


def channel_mean(channel: Channel, x: np.ndarray) -> np.ndarray:
    """Noise-free measurement of latent(s) x; accepts (d,) or (n, d)."""
    x = np.asarray(x, dtype=float)
    if isinstance(channel, GaussianAdditiveChannel):
        return x.copy()
    return x @ channel.mixing.T


def measure(channel: Channel, x: np.ndarray, seed) -> np.ndarray:
    """Draw y | x; accepts a (d,) vector or an (n, d) batch."""
    x = np.asarray(x, dtype=float)
    rng = np.random.default_rng(seed)
    mean = channel_mean(channel, x)
    return mean + rng.normal(0.0, np.sqrt(channel.noise_var), size=mean.shape)


def channel_logpdf(channel: Channel, y: np.ndarray, x: np.ndarray):
    """Exact diagonal-Gaussian log density log p(y | x).

    Vectorizes over leading batch dimensions of either argument; returns a
    scalar for a single (y, x) pair.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if y.shape[-1] != channel.p or x.shape[-1] != channel.d:
        raise ParameterError(
            f"dimension mismatch: y has {y.shape[-1]} entries, x has {x.shape[-1]}, "
            f"channel expects p={channel.p}, d={channel.d}"
        )
    resid = y - channel_mean(channel, x)
    var = channel.noise_var
    ll = -0.5 * np.sum(np.log(2.0 * np.pi * var) + resid ** 2 / var, axis=-1)
    return float(ll) if ll.ndim == 0 else ll


def proposal_mean(channel: Channel, y: np.ndarray) -> np.ndarray:
    """Latent-space center for posterior proposals given measurement(s) y.

    Identity for the additive channel; least-squares pullback through A for
    the linear channel. Accepts (p,) or (n, p).
    """
    y = np.asarray(y, dtype=float)
    if isinstance(channel, GaussianAdditiveChannel):
        return y.copy()
    sol, *_ = np.linalg.lstsq(channel.mixing, np.atleast_2d(y).T, rcond=None)
    return sol.T[0] if y.ndim == 1 else sol.T


def proposal_covariance(channel: Channel) -> np.ndarray:
    """Diagonal (as a d-vector) of the proposal covariance.

    The additive channel uses its own noise variances. The linear channel's
    noise lives in measurement space, so the proposal falls back to the mean
    noise variance on every latent coordinate; any positive choice is valid
    because the importance weights correct for it.
    """
    if isinstance(channel, GaussianAdditiveChannel):
        return channel.noise_var.copy()
    return np.full(channel.d, float(np.mean(channel.noise_var)))


def channel_to_json(channel: Channel) -> str:
    if isinstance(channel, GaussianAdditiveChannel):
        return json.dumps({"type": "gan", "sigma_sq": channel.noise_var.tolist()})
    return json.dumps({
        "type": "linear",
        "sigma_sq": channel.noise_var.tolist(),
        "A": channel.mixing.tolist(),
    })


def channel_from_json(text: str) -> Channel:
    obj = json.loads(text)
    if obj["type"] == "gan":
        return GaussianAdditiveChannel(np.asarray(obj["sigma_sq"], dtype=float))
    if obj["type"] == "linear":
        return LinearChannel(np.asarray(obj["A"], dtype=float),
                             np.asarray(obj["sigma_sq"], dtype=float))
    raise ParameterError(f"unknown channel type {obj['type']!r}")
