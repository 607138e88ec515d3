"""Learned latent mechanism: masked contractive network and its densities.

The mechanism is a single-hidden-layer tanh network evaluated coordinate-wise
on mask-filtered inputs: output i sees the input ``mask[:, i] * x``, so the
mask column support is exactly the candidate parent set of node i. Keeping
both layers inside a spectral-norm budget makes the map contractive, which
gives a well-defined equilibrium and a convergent power series for the
log-determinant of the forward map's Jacobian.

Index conventions used throughout (kept by every einsum below):
    s: batch sample, j: input coordinate, i: output coordinate, h: hidden unit
    w_in[j, h], w_out[h, i], mask[j, i], jac[s, i, j] = dF_i/dx_j.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit
from scipy.stats import poisson

from .errors import ConvergenceError, ParameterError
from .scm import FIXED_POINT_MAX_ITER, FIXED_POINT_TOL, InterventionRegime

NEG_INF = -np.inf


@dataclass(frozen=True)
class ModelParams:
    """Masked single-hidden-layer mechanism plus edge-probability logits.

    ``edge_logits[j, i]`` scores the edge j -> i; its diagonal is pinned to
    -inf so self-loops have probability exactly zero. ``sigma_z`` holds the
    model-side exogenous standard deviations (fixed, not trained).
    """

    w_in: np.ndarray
    b_in: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray
    edge_logits: np.ndarray
    lipschitz_target: float = 0.9
    sigma_z: np.ndarray | float = 1.0
    activation: str = "tanh"
    pow_u_in: np.ndarray | None = None
    pow_u_out: np.ndarray | None = None

    def __post_init__(self):
        w_in = np.asarray(self.w_in, dtype=float)
        w_out = np.asarray(self.w_out, dtype=float)
        d, h = w_in.shape
        if w_out.shape != (h, d):
            raise ParameterError("w_out must be (hidden, d) matching w_in (d, hidden)")
        logits = np.asarray(self.edge_logits, dtype=float).copy()
        if logits.shape != (d, d):
            raise ParameterError("edge_logits must be d x d")
        np.fill_diagonal(logits, NEG_INF)
        if not (0 < self.lipschitz_target < 1):
            raise ParameterError("lipschitz_target must lie in (0, 1)")
        if self.activation not in ("tanh", "identity"):
            raise ParameterError("activation must be 'tanh' or 'identity'")
        sigma = np.broadcast_to(np.asarray(self.sigma_z, dtype=float), (d,)).copy()
        if np.any(sigma <= 0):
            raise ParameterError("sigma_z must be positive")
        object.__setattr__(self, "w_in", w_in)
        object.__setattr__(self, "b_in", np.asarray(self.b_in, dtype=float))
        object.__setattr__(self, "w_out", w_out)
        object.__setattr__(self, "b_out", np.asarray(self.b_out, dtype=float))
        object.__setattr__(self, "edge_logits", logits)
        object.__setattr__(self, "sigma_z", sigma)
        object.__setattr__(self, "pow_u_in",
                           None if self.pow_u_in is None else np.asarray(self.pow_u_in, dtype=float))
        object.__setattr__(self, "pow_u_out",
                           None if self.pow_u_out is None else np.asarray(self.pow_u_out, dtype=float))

    @property
    def d(self) -> int:
        return self.w_in.shape[0]

    @property
    def hidden(self) -> int:
        return self.w_in.shape[1]


@dataclass(frozen=True)
class MaskSample:
    """One relaxed-Bernoulli draw of the dependency mask.

    ``values`` enters the forward pass (hard samples use the 0.5-thresholded
    matrix); ``soft`` keeps the relaxed probabilities so gradients can flow
    straight-through to the logits.
    """

    values: np.ndarray
    soft: np.ndarray
    temperature: float
    hard: bool = False


@dataclass(frozen=True)
class LogDetConfig:
    """Roulette-truncated log-det estimator settings."""

    poisson_rate: float = 4.0
    min_terms: int = 1
    n_probes: int = 1
    probe_dist: str = "rademacher"

    def __post_init__(self):
        if self.poisson_rate <= 0 or self.min_terms < 1 or self.n_probes < 1:
            raise ParameterError("log-det config fields must be positive")
        if self.probe_dist != "rademacher":
            raise ParameterError("only rademacher probes are supported")


def init_params(d: int, hidden: int | None = None, lipschitz_target: float = 0.9,
                seed=0, weight_scale: float = 0.1, sigma_z=1.0,
                activation: str = "tanh") -> ModelParams:
    """Random small-weight initialization, spectrally normalized, logits at 0."""
    hidden = d if hidden is None else hidden
    rng = np.random.default_rng(seed)
    logits = np.zeros((d, d))
    params = ModelParams(
        w_in=rng.normal(0.0, weight_scale, size=(d, hidden)),
        b_in=np.zeros(hidden),
        w_out=rng.normal(0.0, weight_scale, size=(hidden, d)),
        b_out=np.zeros(d),
        edge_logits=logits,
        lipschitz_target=lipschitz_target,
        sigma_z=sigma_z,
        activation=activation,
    )
    return spectral_normalize(params)


# ---------------------------------------------------------------------------
# spectral normalization


def _power_iteration(W: np.ndarray, u: np.ndarray | None, n_steps: int = 5):
    """Estimate the top singular value; returns (sigma, refreshed u)."""
    a, b = W.shape
    if u is None or u.shape != (a,):
        u = np.ones(a) / np.sqrt(a)
    sigma = 0.0
    for _ in range(n_steps):
        v = W.T @ u
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return 0.0, u
        v = v / nv
        u_new = W @ v
        nu = np.linalg.norm(u_new)
        if nu == 0.0:
            return 0.0, u
        u = u_new / nu
        sigma = float(u @ W @ v)
    return abs(sigma), u


def spectral_normalize(params: ModelParams) -> ModelParams:
    """Scale each layer into the per-layer budget sqrt(lipschitz_target).

    Uses a few persistent-vector power-iteration steps per layer; matrices
    already inside the budget are left untouched, so the layer product stays
    below the overall Lipschitz target.
    """
    bound = np.sqrt(params.lipschitz_target)
    sigma_in, u_in = _power_iteration(params.w_in, params.pow_u_in)
    sigma_out, u_out = _power_iteration(params.w_out, params.pow_u_out)
    scale_in = 1.0 if sigma_in <= bound else bound / sigma_in
    scale_out = 1.0 if sigma_out <= bound else bound / sigma_out
    return replace(params,
                   w_in=params.w_in * scale_in,
                   w_out=params.w_out * scale_out,
                   pow_u_in=u_in, pow_u_out=u_out)


def lipschitz_estimate(params: ModelParams, n_probes: int = 1000, seed=0) -> float:
    """Largest network Jacobian spectral norm over random probe points."""
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(n_probes):
        v = rng.normal(0.0, 2.0, size=params.d)
        pre = v @ params.w_in + params.b_in
        deriv = 1.0 - np.tanh(pre) ** 2 if params.activation == "tanh" else np.ones_like(pre)
        jac = (params.w_in * deriv) @ params.w_out
        best = max(best, float(np.linalg.norm(jac, 2)))
    return best


# ---------------------------------------------------------------------------
# mask sampling and edge scores


def sample_mask(edge_logits: np.ndarray, temperature: float = 1.0,
                hard: bool = False, seed=None) -> MaskSample:
    """Binary-concrete relaxation of the Bernoulli mask entries.

    Each off-diagonal entry is sigmoid((logit + g1 - g0) / temperature) with
    independent standard Gumbel draws; ``hard`` thresholds at 0.5 while the
    soft matrix is retained for straight-through gradients.
    """
    if temperature <= 0:
        raise ParameterError("temperature must be positive")
    logits = np.asarray(edge_logits, dtype=float)
    rng = np.random.default_rng(seed)
    g1 = rng.gumbel(size=logits.shape)
    g0 = rng.gumbel(size=logits.shape)
    soft = expit((logits + g1 - g0) / temperature)
    np.fill_diagonal(soft, 0.0)
    values = (soft > 0.5).astype(float) if hard else soft
    return MaskSample(values=values, soft=soft, temperature=temperature, hard=hard)


def expected_mask(edge_logits: np.ndarray) -> np.ndarray:
    """Edge probabilities sigmoid(logits) with an exactly-zero diagonal."""
    probs = expit(np.asarray(edge_logits, dtype=float))
    np.fill_diagonal(probs, 0.0)
    return probs


def edge_scores(params: ModelParams) -> np.ndarray:
    return expected_mask(params.edge_logits)


def _mask_values(mask) -> np.ndarray:
    if isinstance(mask, MaskSample):
        return mask.values
    m = np.asarray(mask, dtype=float)
    if np.any(np.diag(m) != 0):
        raise ParameterError("mask diagonal must be zero")
    return m


def _free_vector(d: int, targets) -> np.ndarray:
    free = np.ones(d)
    if len(targets):
        free[list(targets)] = 0.0
    return free


# ---------------------------------------------------------------------------
# forward pass and Jacobian


def _forward_core(params: ModelParams, M: np.ndarray, X: np.ndarray):
    """Returns (outputs, hidden) for a batch; hidden is (s, i, h)."""
    pre = np.einsum("sj,ji,jh->sih", X, M, params.w_in) + params.b_in
    hid = np.tanh(pre) if params.activation == "tanh" else pre
    out = np.einsum("sih,hi->si", hid, params.w_out) + params.b_out
    return out, hid


def masked_forward(params: ModelParams, mask, x: np.ndarray) -> np.ndarray:
    """Coordinate-wise masked mechanism; accepts (d,) or (n, d) inputs."""
    M = _mask_values(mask)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    out, _ = _forward_core(params, M, np.atleast_2d(x))
    return out[0] if single else out


def _act_deriv(params: ModelParams, hid: np.ndarray) -> np.ndarray:
    return 1.0 - hid ** 2 if params.activation == "tanh" else np.ones_like(hid)


def _jacobian_batch(params: ModelParams, M: np.ndarray, X: np.ndarray,
                    hid: np.ndarray | None = None):
    if hid is None:
        _, hid = _forward_core(params, M, X)
    deriv = _act_deriv(params, hid)
    core = np.einsum("jh,hi,sih->sij", params.w_in, params.w_out, deriv)
    return core * M.T[None, :, :]


def jacobian(params: ModelParams, mask, x: np.ndarray, targets=()) -> np.ndarray:
    """Analytic Jacobian of x -> free_mask * masked_forward(x)."""
    M = _mask_values(mask)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    jac = _jacobian_batch(params, M, x)[0]
    free = _free_vector(params.d, targets)
    return free[:, None] * jac


# ---------------------------------------------------------------------------
# log-determinant of the forward map


def log_det_exact(params: ModelParams, mask, x: np.ndarray, targets=()) -> float:
    """log |det(I - J)| of the masked, intervention-filtered mechanism."""
    jac = jacobian(params, mask, x, targets)
    sign, logdet = np.linalg.slogdet(np.eye(params.d) - jac)
    if sign <= 0:
        raise ConvergenceError("forward-map Jacobian is not orientation preserving")
    return float(logdet)


def _probe_matrix(d: int, n_probes: int, rng) -> np.ndarray:
    return rng.choice([-1.0, 1.0], size=(d, n_probes))


def log_det_series(params: ModelParams, mask, x: np.ndarray, targets=(),
                   n_terms: int = 10, n_probes: int = 1, seed=None,
                   exact_probes: bool = False) -> float:
    """Truncated power series -sum_m tr(J^m)/m with Hutchinson traces.

    Powers of J are applied to probe vectors (never formed as matrices).
    With ``exact_probes`` the standard basis is used and every trace is
    exact, leaving only the truncation bias.
    """
    if n_terms < 1:
        raise ParameterError("n_terms must be at least 1")
    jac = jacobian(params, mask, x, targets)
    d = params.d
    if exact_probes:
        probes = np.eye(d)
        normalizer = 1.0
    else:
        probes = _probe_matrix(d, n_probes, np.random.default_rng(seed))
        normalizer = probes.shape[1]
    total = 0.0
    v = probes.copy()
    for m in range(1, n_terms + 1):
        v = jac @ v
        total -= float(np.sum(probes * v)) / (m * normalizer)
    return total


def _roulette_tail(cfg: LogDetConfig, m: int) -> float:
    """P(N >= m) for the shifted-Poisson cutoff N = min_terms + Poisson(rate)."""
    if m <= cfg.min_terms:
        return 1.0
    return float(poisson.sf(m - cfg.min_terms - 1, cfg.poisson_rate))


def log_det_unbiased(params: ModelParams, mask, x: np.ndarray, targets=(),
                     cfg: LogDetConfig = LogDetConfig(), seed=None) -> float:
    """One draw of the roulette-reweighted series estimator.

    Truncates at a random cutoff n and divides term m by P(N >= m), which
    makes the truncated sum unbiased for the full series.
    """
    rng = np.random.default_rng(seed)
    n = int(cfg.min_terms + rng.poisson(cfg.poisson_rate))
    jac = jacobian(params, mask, x, targets)
    probes = _probe_matrix(params.d, cfg.n_probes, rng)
    total = 0.0
    v = probes.copy()
    for m in range(1, n + 1):
        v = jac @ v
        total -= float(np.sum(probes * v)) / (m * cfg.n_probes * _roulette_tail(cfg, m))
    return total


# ---------------------------------------------------------------------------
# latent log-density


def _gauss_logpdf_terms(values: np.ndarray, mean, var) -> np.ndarray:
    return -0.5 * (np.log(2.0 * np.pi * var) + (values - mean) ** 2 / var)


def latent_logpdf_batch(params: ModelParams, mask, regime: InterventionRegime,
                        intervention_var: float, X: np.ndarray,
                        logdet_mode: str = "exact",
                        logdet_cfg: LogDetConfig = LogDetConfig(),
                        seed=None) -> np.ndarray:
    """Interventional log-density of each row of X under the learned model."""
    M = _mask_values(mask)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    free = _free_vector(d, regime.targets)
    out, hid = _forward_core(params, M, X)
    Z = X - free * out

    ll = np.zeros(n)
    if regime.targets:
        idx = list(regime.targets)
        ll += np.sum(_gauss_logpdf_terms(X[:, idx], regime.mean, intervention_var), axis=1)
    free_idx = np.nonzero(free)[0]
    if free_idx.size:
        ll += np.sum(_gauss_logpdf_terms(Z[:, free_idx], 0.0,
                                         params.sigma_z[free_idx] ** 2), axis=1)

    jac = free[None, :, None] * _jacobian_batch(params, M, X, hid)
    if logdet_mode == "exact":
        sign, logdet = np.linalg.slogdet(np.eye(d)[None] - jac)
        if np.any(sign <= 0):
            raise ConvergenceError("forward-map Jacobian is not orientation preserving")
    elif logdet_mode == "unbiased":
        rng = np.random.default_rng(seed)
        logdet = _roulette_logdet_batch(jac, logdet_cfg, rng)[0]
    else:
        raise ParameterError(f"unknown logdet_mode {logdet_mode!r}")
    return ll + logdet


def latent_logpdf(params: ModelParams, mask, regime: InterventionRegime,
                  intervention_var: float, x: np.ndarray,
                  logdet_mode: str = "exact",
                  logdet_cfg: LogDetConfig = LogDetConfig(), seed=None) -> float:
    return float(latent_logpdf_batch(params, mask, regime, intervention_var,
                                     np.atleast_2d(x), logdet_mode, logdet_cfg, seed)[0])


def _roulette_logdet_batch(jac: np.ndarray, cfg: LogDetConfig, rng):
    """Roulette log-det draws for a (n, d, d) Jacobian stack.

    Returns (values, trace). ``trace`` carries the frozen randomness
    (cutoffs, probes, tail weights) so the gradient of the same draw can be
    assembled later.
    """
    n, d, _ = jac.shape
    cutoffs = cfg.min_terms + rng.poisson(cfg.poisson_rate, size=n)
    probes = rng.choice([-1.0, 1.0], size=(n, d, cfg.n_probes))
    n_max = int(cutoffs.max()) if n else 0
    tails = np.array([_roulette_tail(cfg, m) for m in range(1, n_max + 1)])
    values = np.zeros(n)
    v = probes.copy()
    for m in range(1, n_max + 1):
        v = jac @ v
        active = cutoffs >= m
        term = np.sum(probes * v, axis=(1, 2)) / (m * cfg.n_probes * tails[m - 1])
        values -= np.where(active, term, 0.0)
    return values, (cutoffs, probes, tails)


# ---------------------------------------------------------------------------
# analytic gradients


def latent_logpdf_grads(params: ModelParams, mask, regime: InterventionRegime,
                        intervention_var: float, X: np.ndarray,
                        weights: np.ndarray | None = None,
                        logdet_mode: str = "exact",
                        logdet_cfg: LogDetConfig = LogDetConfig(),
                        seed=None):
    """Weighted-sum latent log-density and its parameter gradients.

    Returns ``(value, grads)`` where value = sum_s weights[s] * logpdf(x_s)
    (weights default to 1/n) and grads holds arrays for ``w_in``, ``b_in``,
    ``w_out``, ``b_out``, ``mask`` and, when ``mask`` is a MaskSample,
    ``edge_logits`` chained through the relaxed Bernoulli entries. The
    stochastic log-det mode differentiates the sampled estimator with its
    cutoffs and probes frozen, so the gradient matches finite differences of
    the identically-seeded value.
    """
    M = _mask_values(mask)
    soft = mask.soft if isinstance(mask, MaskSample) else None
    temperature = mask.temperature if isinstance(mask, MaskSample) else None
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    if weights is None:
        weights = np.full(n, 1.0 / n)
    weights = np.asarray(weights, dtype=float)

    free = _free_vector(d, regime.targets)
    free_idx = np.nonzero(free)[0]
    out, hid = _forward_core(params, M, X)
    deriv = _act_deriv(params, hid)
    core = np.einsum("jh,hi,sih->sij", params.w_in, params.w_out, deriv)
    jac_full = core * M.T[None, :, :]
    jac = free[None, :, None] * jac_full
    Z = X - free * out

    # value: clamp term (constant in theta) + free-noise term + log-det term
    value = 0.0
    if regime.targets:
        idx = list(regime.targets)
        value += float(weights @ np.sum(
            _gauss_logpdf_terms(X[:, idx], regime.mean, intervention_var), axis=1))
    var_free = params.sigma_z[free_idx] ** 2
    if free_idx.size:
        value += float(weights @ np.sum(
            _gauss_logpdf_terms(Z[:, free_idx], 0.0, var_free), axis=1))

    if logdet_mode == "exact":
        B = np.eye(d)[None] - jac
        sign, logdet = np.linalg.slogdet(B)
        if np.any(sign <= 0):
            raise ConvergenceError("forward-map Jacobian is not orientation preserving")
        value += float(weights @ logdet)
        dD = -weights[:, None, None] * np.transpose(np.linalg.inv(B), (0, 2, 1))
    elif logdet_mode == "unbiased":
        rng = np.random.default_rng(seed)
        logdet, (cutoffs, probes, tails) = _roulette_logdet_batch(jac, logdet_cfg, rng)
        value += float(weights @ logdet)
        dD = _roulette_logdet_grad(jac, logdet_cfg, cutoffs, probes, tails, weights)
    else:
        raise ParameterError(f"unknown logdet_mode {logdet_mode!r}")

    # z-term pull-back into the network output
    dF = weights[:, None] * free[None, :] * Z / params.sigma_z[None, :] ** 2

    dJ_full = free[None, :, None] * dD
    dM = np.einsum("sij,sij->ij", dJ_full, core).T
    dK = dJ_full * M.T[None, :, :]
    dw_in = np.einsum("sij,hi,sih->jh", dK, params.w_out, deriv)
    dw_out = np.einsum("sij,jh,sih->hi", dK, params.w_in, deriv)
    dderiv = np.einsum("sij,jh,hi->sih", dK, params.w_in, params.w_out)
    dhid = -2.0 * hid * dderiv if params.activation == "tanh" else np.zeros_like(hid)

    dw_out += np.einsum("si,sih->hi", dF, hid)
    db_out = dF.sum(axis=0)
    dhid += np.einsum("si,hi->sih", dF, params.w_out)
    dpre = dhid * deriv if params.activation == "tanh" else dhid
    dw_in += np.einsum("sih,sj,ji->jh", dpre, X, M)
    db_in = dpre.sum(axis=(0, 1))
    dM += np.einsum("sih,sj,jh->ji", dpre, X, params.w_in)

    grads = {"w_in": dw_in, "b_in": db_in, "w_out": dw_out, "b_out": db_out, "mask": dM}
    if soft is not None:
        dlogits = dM * soft * (1.0 - soft) / temperature
        np.fill_diagonal(dlogits, 0.0)
        grads["edge_logits"] = dlogits
    return value, grads


def _roulette_logdet_grad(jac, cfg, cutoffs, probes, tails, weights):
    """d/d(jac) of the frozen roulette draws, weighted per sample."""
    n, d, _ = jac.shape
    n_max = int(cutoffs.max()) if n else 0
    jac_t = np.transpose(jac, (0, 2, 1))
    rights = [probes]
    lefts = [probes]
    for _ in range(n_max - 1):
        rights.append(jac @ rights[-1])
        lefts.append(jac_t @ lefts[-1])
    dD = np.zeros_like(jac)
    for m in range(1, n_max + 1):
        coeff = np.where(cutoffs >= m, weights, 0.0) / (m * cfg.n_probes * tails[m - 1])
        if not np.any(coeff):
            continue
        block = np.zeros_like(jac)
        for r in range(m):
            block += np.einsum("sak,sbk->sab", lefts[r], rights[m - 1 - r])
        dD -= coeff[:, None, None] * block
    return dD


# ---------------------------------------------------------------------------
# model-side equilibrium and checkpointing


def solve_model_fixed_point(params: ModelParams, mask, z: np.ndarray,
                            regime: InterventionRegime = InterventionRegime(),
                            values=None, tol: float = FIXED_POINT_TOL,
                            max_iter: int = FIXED_POINT_MAX_ITER) -> np.ndarray:
    """Equilibrium of the learned mechanism for exogenous noise z."""
    M = _mask_values(mask)
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    n, d = Z.shape
    free = _free_vector(d, regime.targets)
    C = np.zeros((n, d))
    if regime.targets:
        v = np.atleast_2d(np.asarray(values, dtype=float))
        C[:, list(regime.targets)] = v
    X = Z.copy()
    for _ in range(max_iter):
        out, _ = _forward_core(params, M, X)
        nxt = free * (out + Z) + C
        delta = np.max(np.abs(nxt - X))
        X = nxt
        if delta <= tol:
            break
    out, _ = _forward_core(params, M, X)
    residual = np.max(np.abs(X - (free * (out + Z) + C)))
    if residual > tol:
        raise ConvergenceError(
            f"model fixed point stalled at residual {residual:.3e}", residual=residual)
    return X[0] if single else X


def params_to_json(params: ModelParams) -> str:
    payload = {
        "w_in": params.w_in.tolist(),
        "b_in": params.b_in.tolist(),
        "w_out": params.w_out.tolist(),
        "b_out": params.b_out.tolist(),
        "edge_logits": params.edge_logits.tolist(),
        "lipschitz_target": params.lipschitz_target,
        "sigma_z": params.sigma_z.tolist(),
        "activation": params.activation,
        "pow_u_in": None if params.pow_u_in is None else params.pow_u_in.tolist(),
        "pow_u_out": None if params.pow_u_out is None else params.pow_u_out.tolist(),
    }
    return json.dumps(payload)


def params_from_json(text: str) -> ModelParams:
    obj = json.loads(text)
    return ModelParams(
        w_in=np.asarray(obj["w_in"], dtype=float),
        b_in=np.asarray(obj["b_in"], dtype=float),
        w_out=np.asarray(obj["w_out"], dtype=float),
        b_out=np.asarray(obj["b_out"], dtype=float),
        edge_logits=np.asarray(obj["edge_logits"], dtype=float),
        lipschitz_target=obj["lipschitz_target"],
        sigma_z=np.asarray(obj["sigma_z"], dtype=float),
        activation=obj["activation"],
        pow_u_in=None if obj["pow_u_in"] is None else np.asarray(obj["pow_u_in"], dtype=float),
        pow_u_out=None if obj["pow_u_out"] is None else np.asarray(obj["pow_u_out"], dtype=float),
    )
