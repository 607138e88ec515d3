"""Measurement-noise variance estimation from interventional data.

Additive channel: when node i is intervened its latent variance is pinned to
the known interventional variance, so the measurement variance is the excess
observed variance. Linear channel: projection vectors orthogonal to all but
one mixing column isolate a single latent; the squared projections stack into
a linear system in the per-measurement noise variances, solved under a
non-negativity constraint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (ConvergenceError, IdentifiabilityError, ParameterError, RankError,
                     SamplingFailureError)
from .scm import InterventionFamily

VARIANCE_FLOOR = 1e-6
_NULL_RESID_TOL = 1e-10

# Defaults for the projection sampler; thresholds act on unit-norm vectors.
EPS_SIG = 0.1
DELTA_DIVERSITY = 0.05


def check_channel_identifiability(family: InterventionFamily, d: int) -> bool:
    """True iff every node is targeted by at least one regime."""
    return family.covered_nodes() >= set(range(d))


def _require_identifiable(family, d):
    if not check_channel_identifiability(family, d):
        missing = sorted(set(range(d)) - family.covered_nodes())
        raise IdentifiabilityError(
            f"nodes {missing} are never intervened; measurement noise is not identifiable"
        )


def _covering_regimes(family, node):
    return [k for k, regime in enumerate(family.regimes) if node in regime.targets]


def estimate_gan_variances(datasets, family: InterventionFamily,
                           intervention_var: float | None = None) -> np.ndarray:
    """Per-coordinate noise variances for the additive channel.

    For each node, the sample variance of its measurement column under a
    covering regime minus the interventional variance; estimates from
    multiple covering regimes are averaged, and the result is floored at
    a small positive value.
    """
    d = np.asarray(datasets[0]).shape[1]
    _require_identifiable(family, d)
    out = np.empty(d)
    for i in range(d):
        ests = []
        for k in _covering_regimes(family, i):
            pinned = family.regimes[k].variance if intervention_var is None else intervention_var
            col = np.asarray(datasets[k], dtype=float)[:, i]
            ests.append(np.var(col, ddof=1) - pinned)
        out[i] = np.mean(ests)
    return np.maximum(out, VARIANCE_FLOOR)


def null_space_basis(a_minus_i_t: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the null space of a (d-1) x p matrix of rank d-1."""
    M = np.asarray(a_minus_i_t, dtype=float)
    k, p = M.shape
    _, svals, vt = np.linalg.svd(M, full_matrices=True)
    if svals.size and svals[-1] <= _NULL_RESID_TOL * max(1.0, svals[0]):
        raise RankError("column-deleted mixing matrix is numerically rank deficient")
    basis = vt[k:].T
    resid = np.max(np.abs(M @ basis)) if basis.size else 0.0
    if resid > _NULL_RESID_TOL:
        raise RankError(f"null-space residual {resid:.2e} exceeds tolerance")
    return basis


@dataclass
class ProjectionSet:
    """Accepted projection vectors for the linear-channel noise system.

    ``vectors`` holds the unit-norm projections row-wise, ``squares`` their
    elementwise squares (the least-squares design matrix), and
    ``source_node`` the latent index each row isolates. ``rhs`` is filled in
    by the variance estimator.
    """

    vectors: np.ndarray
    source_node: np.ndarray
    rhs: np.ndarray | None = None

    @property
    def squares(self) -> np.ndarray:
        return self.vectors ** 2

    @property
    def m(self) -> int:
        return self.vectors.shape[0]


def _matrix_rank(rows: np.ndarray) -> int:
    return int(np.linalg.matrix_rank(np.asarray(rows))) if len(rows) else 0


def sample_projection_vectors(A: np.ndarray, m: int | None = None,
                              eps_sig: float = EPS_SIG,
                              delta: float = DELTA_DIVERSITY,
                              seed=None,
                              max_streak: int = 500,
                              signal_cap: float | None = None) -> ProjectionSet:
    """Sample projection vectors whose squares form a rank-p design matrix.

    Cycles over latent nodes; for node i, draws coefficients against the
    null-space basis of the other columns, keeps unit-norm vectors with
    enough signal on column i (|a_i' t| >= eps_sig) whose squared vector is
    sufficiently different (cosine < 1 - delta) from every accepted row.
    A node that keeps getting rejected (e.g. a one-dimensional null space
    already represented) is passed over, so square systems terminate with
    one row per node. Fails once the total draw budget (1e4 * m) is spent
    without reaching rank p.

    ``signal_cap`` optionally rejects vectors whose signal exceeds the cap:
    the pinned-variance term it multiplies dominates the sampling noise of
    each equation's right-hand side, so low-signal rows estimate the noise
    variances far more precisely.
    """
    A = np.asarray(A, dtype=float)
    p, d = A.shape
    if m is None:
        m = 2 * p
    if m < p:
        raise ParameterError(f"need at least p={p} rows, got m={m}")
    if signal_cap is not None and signal_cap <= eps_sig:
        raise ParameterError("signal_cap must exceed eps_sig")
    rng = np.random.default_rng(seed)

    bases = [null_space_basis(np.delete(A, i, axis=1).T) for i in range(d)]
    quota = [m // d] * d
    for extra in range(m - d * (m // d)):
        quota[extra % d] += 1

    vecs: list[np.ndarray] = []
    rows: list[np.ndarray] = []  # squares of accepted vectors, for diversity/rank
    sources: list[int] = []
    budget = 10_000 * m
    admissibility = 1e-8

    def diverse(sq):
        if not rows:
            return True
        sims = np.array(rows) @ sq / (np.linalg.norm(sq) * np.linalg.norm(np.array(rows), axis=1))
        return np.max(sims) <= 1.0 - delta

    def accept(node, t):
        vecs.append(t)
        rows.append(t ** 2)
        sources.append(node)

    def try_collect(node, want):
        nonlocal budget
        basis = bases[node]
        col = A[:, node]
        r = basis.shape[1]
        got, streak = 0, 0
        best_sig, best_t = 0.0, None
        while got < want and streak < max_streak and budget > 0:
            budget -= 1
            if r == 1:
                t = basis[:, 0]  # only admissible direction, already unit norm
            else:
                t = basis @ rng.standard_normal(r)
                norm = np.linalg.norm(t)
                if norm == 0.0:
                    streak += 1
                    continue
                t = t / norm
            sig = abs(col @ t)
            if sig > best_sig:
                best_sig, best_t = sig, t
            capped = signal_cap is not None and sig > signal_cap
            if sig < eps_sig or capped or not diverse(t ** 2):
                if r == 1:
                    break  # redraws cannot change a fixed direction
                streak += 1
                continue
            accept(node, t)
            got += 1
            streak = 0
        # A node whose admissible directions cannot pass the signal or
        # diversity tests (e.g. a one-dimensional null space whose forced
        # direction has weak signal or resembles another node's) would
        # otherwise never be represented, leaving the design matrix rank
        # deficient. Fall back to the node's strongest draw as long as it
        # is genuinely admissible (nonzero signal).
        if got == 0 and node not in sources and best_t is not None \
                and best_sig > admissibility:
            accept(node, best_t)
            got += 1
        return got

    for node in range(d):
        try_collect(node, quota[node])

    # Top up round-robin until the design matrix certifies full rank.
    node = 0
    while _matrix_rank(rows) < p and budget > 0:
        try_collect(node % d, 1)
        node += 1

    achieved = _matrix_rank(rows)
    if achieved < p:
        raise SamplingFailureError(
            f"projection sampling exhausted its budget at rank {achieved} < {p}",
            achieved_rank=achieved,
        )
    return ProjectionSet(vectors=np.array(vecs), source_node=np.array(sources))


def nnls_projected_gradient(design: np.ndarray, rhs: np.ndarray,
                            tol: float = 1e-8, max_iter: int = 500_000) -> np.ndarray:
    """Minimize ||design @ x - rhs||^2 subject to x >= 0 by projected gradient.

    Uses the fixed step 1/L with L the largest eigenvalue of design'design;
    stops when the projected-gradient residual max|x - [x - grad]_+| drops
    below ``tol`` (equivalently, the KKT conditions hold to that tolerance).
    """
    T = np.asarray(design, dtype=float)
    b = np.asarray(rhs, dtype=float)
    gram = T.T @ T
    tb = T.T @ b
    lip = np.linalg.norm(gram, 2)
    if lip == 0.0:
        return np.zeros(T.shape[1])
    step = 1.0 / lip
    x = np.maximum(np.linalg.lstsq(T, b, rcond=None)[0], 0.0)
    for _ in range(max_iter):
        grad = gram @ x - tb
        nxt = np.maximum(x - step * grad, 0.0)
        if np.max(np.abs(x - np.maximum(x - grad, 0.0))) <= tol:
            return x
        x = nxt
    residual = np.max(np.abs(x - np.maximum(x - (gram @ x - tb), 0.0)))
    raise ConvergenceError(
        f"projected gradient stalled at KKT residual {residual:.3e}", residual=residual
    )


def kkt_residual(design: np.ndarray, rhs: np.ndarray, x: np.ndarray) -> float:
    """Projected-gradient stationarity measure for the NNLS problem."""
    grad = design.T @ (design @ x - rhs)
    return float(np.max(np.abs(x - np.maximum(x - grad, 0.0))))


def estimate_linear_variances(datasets, family: InterventionFamily, A: np.ndarray,
                              intervention_var: float | None,
                              proj: ProjectionSet,
                              row_weighting: bool = True) -> np.ndarray:
    """Per-measurement noise variances for the linear channel.

    Each projection row yields one linear equation: the sample variance of
    the projected measurements, minus the pinned latent contribution, equals
    the squared projection applied to the noise variances. The stacked
    system is solved under non-negativity and floored.

    With ``row_weighting`` each (row, rhs) pair is rescaled by the inverse
    of the projected sample variance. Rescaling a projection vector scales
    its row and right-hand side together, so the ideal solution is
    unchanged, but on finite samples it equalizes the rows' noise levels
    (the sampling error of a variance estimate is proportional to the
    variance itself), which sharply reduces the estimation error.
    """
    A = np.asarray(A, dtype=float)
    p = A.shape[0]
    d = A.shape[1]
    _require_identifiable(family, d)
    if _matrix_rank(list(proj.squares)) < p:
        raise RankError("projection design matrix must have rank p")
    rhs = np.empty(proj.m)
    proj_var = np.empty(proj.m)
    for r in range(proj.m):
        t = proj.vectors[r]
        node = int(proj.source_node[r])
        gain = (t @ A[:, node]) ** 2
        contributions = []
        for k in _covering_regimes(family, node):
            pinned = family.regimes[k].variance if intervention_var is None else intervention_var
            var_k = np.var(np.asarray(datasets[k], dtype=float) @ t, ddof=1)
            contributions.append((var_k, var_k - gain * pinned))
        if not contributions:
            raise IdentifiabilityError(f"no regime covers node {node}")
        proj_var[r] = np.mean([c[0] for c in contributions])
        rhs[r] = np.mean([c[1] for c in contributions])
    proj.rhs = rhs
    if row_weighting:
        w = 1.0 / np.maximum(proj_var, VARIANCE_FLOOR)
        sigma_sq = nnls_projected_gradient(proj.squares * w[:, None], rhs * w)
    else:
        sigma_sq = nnls_projected_gradient(proj.squares, rhs)
    return np.maximum(sigma_sq, VARIANCE_FLOOR)


# Pipeline defaults: many low-signal rows plus weighting give the estimator
# most of the precision the projected data supports.
PIPELINE_ROWS_PER_MEASUREMENT = 40
PIPELINE_SIGNAL_CAP = 0.35
PIPELINE_DELTA = 0.001


def estimate_channel_noise(datasets, family: InterventionFamily,
                           channel_type: str, A: np.ndarray | None = None,
                           intervention_var: float | None = None, seed=0):
    """Estimate a measurement channel's noise variances from regime data.

    Returns the estimated variance vector (length d for ``"gan"``, length p
    for ``"linear"``). The linear path samples an accuracy-oriented
    projection set (many rows, capped signal) and solves the weighted
    non-negative system.
    """
    if channel_type == "gan":
        return estimate_gan_variances(datasets, family, intervention_var)
    if channel_type == "linear":
        if A is None:
            raise ParameterError("linear channel estimation needs the mixing matrix")
        A = np.asarray(A, dtype=float)
        p = A.shape[0]
        proj = sample_projection_vectors(
            A, m=PIPELINE_ROWS_PER_MEASUREMENT * p,
            delta=PIPELINE_DELTA, signal_cap=PIPELINE_SIGNAL_CAP, seed=seed)
        return estimate_linear_variances(datasets, family, A, intervention_var, proj)
    raise ParameterError(f"unknown channel type {channel_type!r}")
