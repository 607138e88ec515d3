"""Penalized EM: SIR-based expectation steps and Adam-ascent M-steps.

Each round freezes posterior particles drawn under the current parameters,
then runs minibatch gradient ascent on the Monte-Carlo surrogate (mean
complete-data latent log-density) minus an expected-edge-count penalty.
The measurement-channel term of the complete-data likelihood is constant in
the latent parameters, so it is tracked for reporting but not optimized.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import noise
from .errors import EStepError, ParameterError
from .graphs import DirectedGraph
from .measurement import (Channel, GaussianAdditiveChannel, LinearChannel,
                          channel_logpdf)
from .model import (LogDetConfig, ModelParams, edge_scores, expected_mask,
                    init_params, latent_logpdf_batch, latent_logpdf_grads,
                    sample_mask, spectral_normalize)
from .posterior import GaussianProposal, sir_sample_batch
from .scm import InterventionFamily

logger = logging.getLogger(__name__)

_ADAM_BETAS = (0.9, 0.999)
_ADAM_EPS = 1e-8
_TRAINED_FIELDS = ("w_in", "b_in", "w_out", "b_out", "edge_logits")


@dataclass
class EmConfig:
    """Knobs for the EM driver; defaults follow the benchmark protocol."""

    sparsity_lambda: float = 1e-3
    learning_rate: float = 1e-2
    em_rounds: int = 200
    m_steps_per_round: int = 50
    batch_size: int = 256
    n_proposals: int = 64
    n_resample: int = 16
    temperature: float = 1.0
    logdet_mode: str = "exact"
    logdet: LogDetConfig = field(default_factory=LogDetConfig)
    seed: int = 0
    convergence_tol: float = 1e-4
    skip_tolerance: float = 0.05
    elbo_every: int = 0
    elbo_proposals: int = 512
    hidden: int | None = None
    lipschitz_target: float = 0.9
    init_weight_scale: float = 0.1

    def __post_init__(self):
        if self.sparsity_lambda < 0:
            raise ParameterError("sparsity_lambda must be >= 0")
        for name in ("learning_rate", "m_steps_per_round", "batch_size",
                     "n_proposals", "n_resample", "temperature",
                     "convergence_tol"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive")
        if self.em_rounds < 0:
            raise ParameterError("em_rounds must be >= 0")


@dataclass
class RegimeCache:
    """Frozen posterior particles for one regime's kept observations."""

    regime_index: int
    regime: object
    y: np.ndarray
    particles: np.ndarray  # (n_kept, n_resample, d)
    ess: np.ndarray

    @property
    def flat_particles(self) -> np.ndarray:
        n, r, d = self.particles.shape
        return self.particles.reshape(n * r, d)


@dataclass
class ParticleCache:
    regimes: list[RegimeCache]
    n_observations: int
    n_skipped: int

    @property
    def n_particles(self) -> int:
        return sum(rc.particles.shape[0] * rc.particles.shape[1] for rc in self.regimes)


@dataclass
class FitReport:
    edge_scores: np.ndarray
    theta: ModelParams
    phi_hat: Channel
    elbo_trace: list
    diagnostics: dict


def _round_seeds(seed: int, round_index: int, n: int = 4) -> list[int]:
    """Independent child seeds per (run seed, round); stable across resumes."""
    return list(np.random.SeedSequence((seed, round_index)).generate_state(n))


def e_step(theta: ModelParams, phi_hat: Channel, datasets, family: InterventionFamily,
           cfg: EmConfig, seed=None) -> ParticleCache:
    """Draw and freeze posterior particles for every observation.

    Observations whose importance weights collapse even after the widened
    retry are skipped with a warning; the step fails if more than the
    configured fraction is lost.
    """
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    mask = expected_mask(theta.edge_logits)
    regimes = []
    n_obs = 0
    n_skipped = 0
    for k, regime in enumerate(family.regimes):
        Y = np.atleast_2d(np.asarray(datasets[k], dtype=float))
        n_obs += Y.shape[0]
        if Y.shape[0] == 0:
            regimes.append(RegimeCache(k, regime, Y, np.zeros((0, cfg.n_resample, theta.d)),
                                       np.zeros(0)))
            continue
        particles, ess, kept = sir_sample_batch(
            Y, theta, mask, phi_hat, regime, regime.variance,
            cfg.n_proposals, cfg.n_resample, seed=rng.integers(2 ** 63),
            logdet_mode=cfg.logdet_mode, logdet_cfg=cfg.logdet)
        dropped = int((~kept).sum())
        if dropped:
            n_skipped += dropped
            logger.debug("regime %d: skipped %d/%d degenerate observations",
                         k, dropped, Y.shape[0])
        regimes.append(RegimeCache(k, regime, Y[kept], particles, ess))
    if n_skipped:
        logger.warning("e-step skipped %d/%d degenerate observations", n_skipped, n_obs)
    if n_obs and n_skipped / n_obs > cfg.skip_tolerance:
        raise EStepError(
            f"{n_skipped}/{n_obs} observations degenerate (> {cfg.skip_tolerance:.0%})")
    return ParticleCache(regimes, n_obs, n_skipped)


def surrogate_q(theta: ModelParams, cache: ParticleCache, family: InterventionFamily,
                cfg: EmConfig, seed=None) -> float:
    """Monte-Carlo surrogate: mean cached-particle latent log-density.

    One relaxed mask sample per minibatch; the measurement term is omitted
    (it does not depend on the latent parameters).
    """
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    total = 0.0
    n_total = cache.n_particles
    if n_total == 0:
        return 0.0
    for rc in cache.regimes:
        X = rc.flat_particles
        for start in range(0, X.shape[0], cfg.batch_size):
            chunk = X[start:start + cfg.batch_size]
            mask = sample_mask(theta.edge_logits, cfg.temperature,
                               seed=rng.integers(2 ** 63))
            ll = latent_logpdf_batch(theta, mask, rc.regime, rc.regime.variance,
                                     chunk, cfg.logdet_mode, cfg.logdet,
                                     seed=rng.integers(2 ** 63))
            total += float(ll.sum())
    return total / n_total


def channel_term(cache: ParticleCache, phi_hat: Channel) -> float:
    """Mean channel log-density over cached particles (constant in theta)."""
    total, count = 0.0, 0
    for rc in cache.regimes:
        if rc.y.shape[0] == 0:
            continue
        ll = channel_logpdf(phi_hat, rc.y[:, None, :], rc.particles)
        total += float(np.sum(ll))
        count += ll.size
    return total / count if count else 0.0


def sparsity_penalty(theta: ModelParams, lam: float):
    """lambda * sum of off-diagonal edge probabilities, with its gradient."""
    probs = expected_mask(theta.edge_logits)
    grad = lam * probs * (1.0 - probs)
    np.fill_diagonal(grad, 0.0)
    return lam * float(probs.sum()), grad


class _Adam:
    def __init__(self, lr):
        self.lr = lr
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, values: dict, grads: dict) -> dict:
        """Ascent step; returns updated arrays."""
        self.t += 1
        b1, b2 = _ADAM_BETAS
        out = {}
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g ** 2
            m_hat = self.m[name] / (1 - b1 ** self.t)
            v_hat = self.v[name] / (1 - b2 ** self.t)
            out[name] = values[name] + self.lr * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)
        return out


def _minibatch_grads(theta, cache, rows, cfg, mask, seed=None):
    """Objective value and parameter gradients over selected cache rows.

    ``rows`` indexes the concatenation of all regimes' flattened particles.
    """
    value = 0.0
    grads = None
    batch = rows.size
    offset = 0
    seeds = iter(np.random.SeedSequence(seed).generate_state(len(cache.regimes)))
    for rc in cache.regimes:
        size = rc.particles.shape[0] * rc.particles.shape[1]
        regime_seed = int(next(seeds))
        sel = rows[(rows >= offset) & (rows < offset + size)] - offset
        offset += size
        if sel.size == 0:
            continue
        X = rc.flat_particles[sel]
        v, g = latent_logpdf_grads(theta, mask, rc.regime, rc.regime.variance, X,
                                   weights=np.full(sel.size, 1.0 / batch),
                                   logdet_mode=cfg.logdet_mode,
                                   logdet_cfg=cfg.logdet,
                                   seed=regime_seed)
        value += v
        if grads is None:
            grads = g
        else:
            for name in g:
                grads[name] = grads[name] + g[name]
    return value, grads


def m_step(theta: ModelParams, cache: ParticleCache, cfg: EmConfig, seed=None) -> ModelParams:
    """Minibatch Adam ascent on (surrogate - penalty) over the frozen cache.

    The mask is re-relaxed with fresh Gumbel noise each step and frozen
    within the step's gradient evaluation; spectral normalization runs after
    every update. A non-finite objective aborts the round: the last finite
    parameters are restored and the learning rate is halved once.
    """
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    n_total = cache.n_particles
    if n_total == 0:
        return theta
    adam = _Adam(cfg.learning_rate)
    current = theta
    last_finite = theta
    halved = False
    for _ in range(cfg.m_steps_per_round):
        rows = rng.choice(n_total, size=min(cfg.batch_size, n_total), replace=False)
        mask = sample_mask(current.edge_logits, cfg.temperature,
                           seed=rng.integers(2 ** 63))
        value, grads = _minibatch_grads(current, cache, rows, cfg, mask,
                                        seed=rng.integers(2 ** 63))
        pen_value, pen_grad = sparsity_penalty(current, cfg.sparsity_lambda)
        objective = value - pen_value
        grads["edge_logits"] = grads["edge_logits"] - pen_grad
        grads.pop("mask", None)
        finite = np.isfinite(objective) and all(np.all(np.isfinite(g)) for g in grads.values())
        if not finite:
            if halved:
                logger.warning("m-step hit a second non-finite loss; stopping round early")
                current = last_finite
                break
            current = last_finite
            adam = _Adam(cfg.learning_rate / 2.0)
            halved = True
            logger.warning("non-finite m-step loss; restoring parameters and halving lr")
            continue
        last_finite = current
        values = {name: getattr(current, name) for name in grads}
        updated = adam.step(values, grads)
        current = spectral_normalize(replace(current, **updated))
    return current


def _build_channel(channel_spec: dict, datasets, family: InterventionFamily,
                   seed) -> Channel:
    """Construct the channel from a spec dict, estimating noise if needed.

    ``channel_spec``: {"type": "gan"} or {"type": "linear", "A": [[...]]};
    a "sigma_sq" entry pins the noise variances and skips estimation.
    """
    ctype = channel_spec.get("type")
    if ctype == "gan":
        if "sigma_sq" in channel_spec and channel_spec["sigma_sq"] is not None:
            var = np.asarray(channel_spec["sigma_sq"], dtype=float)
        else:
            var = noise.estimate_gan_variances(datasets, family)
        return GaussianAdditiveChannel(var)
    if ctype == "linear":
        if "A" not in channel_spec:
            raise ParameterError("linear channel spec needs the mixing matrix 'A'")
        A = np.asarray(channel_spec["A"], dtype=float)
        if "sigma_sq" in channel_spec and channel_spec["sigma_sq"] is not None:
            var = np.asarray(channel_spec["sigma_sq"], dtype=float)
        else:
            var = noise.estimate_channel_noise(datasets, family, "linear", A, seed=seed)
        return LinearChannel(A, var)
    raise ParameterError(f"unknown channel type {ctype!r}")


def fit(datasets, family: InterventionFamily, channel_spec: dict, cfg: EmConfig,
        init_theta: ModelParams | None = None, start_round: int = 0,
        q_history: list | None = None, trace: list | None = None,
        round_callback=None) -> FitReport:
    """Full pipeline: estimate channel noise, then alternate E and M steps.

    Stops after ``cfg.em_rounds`` rounds or once the surrogate's relative
    change drops below ``cfg.convergence_tol``. Resuming is supported by
    passing the checkpointed parameters, start round, and histories; round
    seeds derive from (cfg.seed, round), so a resumed run reproduces the
    uninterrupted one.
    """
    init_seed = int(np.random.SeedSequence((cfg.seed, 0)).generate_state(1)[0])
    phi_hat = _build_channel(channel_spec, datasets, family, seed=init_seed)
    d = phi_hat.d

    theta = init_theta
    if theta is None:
        theta = init_params(d, hidden=cfg.hidden,
                            lipschitz_target=cfg.lipschitz_target,
                            seed=init_seed, weight_scale=cfg.init_weight_scale)
    q_history = [] if q_history is None else list(q_history)
    trace = [] if trace is None else list(trace)

    converged = False
    for r in range(start_round, cfg.em_rounds):
        e_seed, m_seed, q_seed, elbo_seed = (int(s) for s in _round_seeds(cfg.seed, r + 1))
        cache = e_step(theta, phi_hat, datasets, family, cfg, seed=e_seed)
        theta = m_step(theta, cache, cfg, seed=m_seed)
        q = surrogate_q(theta, cache, family, cfg, seed=q_seed)
        ess_all = np.concatenate([rc.ess for rc in cache.regimes]) if cache.regimes else np.zeros(0)
        entry = {
            "round": r,
            "q_value": q,
            "elbo_estimate": None,
            "ess_median": float(np.median(ess_all)) if ess_all.size else float("nan"),
            "channel_term": channel_term(cache, phi_hat),
            "n_skipped": cache.n_skipped,
        }
        if cfg.elbo_every and (r + 1) % cfg.elbo_every == 0:
            entry["elbo_estimate"] = elbo_estimate(theta, phi_hat, datasets, family,
                                                   cfg, seed=elbo_seed)
        trace.append(entry)
        q_history.append(q)
        if round_callback is not None:
            round_callback(r, theta, q, entry)
        if len(q_history) >= 2 and abs(q_history[-1] - q_history[-2]) \
                < cfg.convergence_tol * abs(q_history[-2]):
            converged = True
            break

    diagnostics = {
        "rounds_completed": len(q_history),
        "converged": converged,
        "logdet_mode": cfg.logdet_mode,
        "trace": trace,
    }
    return FitReport(edge_scores=edge_scores(theta), theta=theta, phi_hat=phi_hat,
                     elbo_trace=q_history, diagnostics=diagnostics)


def elbo_estimate(theta: ModelParams, phi_hat: Channel, datasets,
                  family: InterventionFamily, cfg: EmConfig,
                  n_proposals: int | None = None, seed=None,
                  return_se: bool = False):
    """Self-normalized importance estimate of sum_k sum_l log p(y | theta, phi).

    Per observation: log-mean-exp of (latent + channel - proposal) log ratios
    over fresh proposal draws. ``return_se`` adds a delta-method standard
    error for the Monte-Carlo noise of the total.
    """
    S = cfg.elbo_proposals if n_proposals is None else n_proposals
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    mask = expected_mask(theta.edge_logits)
    total = 0.0
    var_total = 0.0
    for k, regime in enumerate(family.regimes):
        Y = np.atleast_2d(np.asarray(datasets[k], dtype=float))
        if Y.shape[0] == 0:
            continue
        proposal = GaussianProposal(phi_hat, Y, prior_var=theta.sigma_z ** 2)
        step = max(1, 65536 // S)
        for start in range(0, Y.shape[0], step):
            rows = np.arange(start, min(start + step, Y.shape[0]))
            xs = proposal.draw(rng, rows, S)
            flat = xs.reshape(-1, theta.d)
            log_latent = latent_logpdf_batch(theta, mask, regime, regime.variance,
                                             flat, cfg.logdet_mode, cfg.logdet,
                                             seed=rng.integers(2 ** 63))
            lw = (log_latent.reshape(rows.size, S)
                  + channel_logpdf(phi_hat, Y[rows][:, None, :], xs)
                  - proposal.logpdf(xs, rows))
            m = np.max(lw, axis=1)
            w = np.exp(lw - m[:, None])
            mean_w = w.mean(axis=1)
            total += float(np.sum(m + np.log(mean_w)))
            var_total += float(np.sum(w.var(axis=1, ddof=1) / (S * mean_w ** 2)))
    if return_se:
        return total, float(np.sqrt(var_total))
    return total


# ---------------------------------------------------------------------------
# report / trace / checkpoint files


def report_to_json(report: FitReport) -> str:
    payload = {
        "d": int(report.edge_scores.shape[0]),
        "edge_scores": report.edge_scores.tolist(),
        "elbo_trace": report.elbo_trace,
        "diagnostics": report.diagnostics,
    }
    return json.dumps(payload, sort_keys=True)


def write_trace_csv(path, trace: list) -> None:
    lines = ["round,q_value,elbo_estimate,ess_median"]
    for entry in trace:
        elbo = "" if entry.get("elbo_estimate") is None else repr(entry["elbo_estimate"])
        lines.append(f"{entry['round']},{entry['q_value']!r},{elbo},{entry['ess_median']!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def checkpoint_to_json(report_or_state) -> str:
    """Checkpoint carries the parameters plus enough state to resume."""
    from .model import params_to_json
    state = report_or_state
    payload = {
        "params": json.loads(params_to_json(state["theta"])),
        "completed_rounds": state["completed_rounds"],
        "q_history": state["q_history"],
        "trace": state["trace"],
    }
    return json.dumps(payload, sort_keys=True)


def checkpoint_from_json(text: str) -> dict:
    from .model import params_from_json
    obj = json.loads(text)
    return {
        "theta": params_from_json(json.dumps(obj["params"])),
        "completed_rounds": obj["completed_rounds"],
        "q_history": obj["q_history"],
        "trace": obj["trace"],
    }
