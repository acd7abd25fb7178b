"""Penalized EM for exploratory latent class models.

The fitted objective is

    l_N(pi, Theta) - lambda1 * sum_k log_[rho](pi_k)
                   - lambda2 * sum_j sum_{k<l active} TLP(theta_jk - theta_jl; tau)

with ``lambda = N * lambda_tilde``.  The log penalty drives spurious class
proportions to zero; the truncated Lasso penalty fuses item parameters of
classes that respond alike.  The TLP is handled by difference-of-convex
linearization and the fused differences by scaled-form ADMM.

Sign convention: :func:`penalized_objective` returns the value to be
maximized; ``FitResult.objective_trace`` stores its negation (the
minimization form).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.special import logsumexp

from .core import DimensionError, InvalidParamsError, LcmParams, ResponseData

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmConfig:
    """Hyperparameters of the penalized EM.

    ``lambda1`` and ``lambda2`` are the per-subject penalty weights
    (penalty divided by N).  Classes whose proportion falls to ``rho`` or
    below are frozen at ``rho / 10`` and never re-enter.
    """

    m_upper: int = 16
    lambda1: float = 0.0
    lambda2: float = 0.0
    tau: float = 0.3
    gamma: float = 1.0
    rho: float = 1e-4
    theta_floor: float = 1e-4
    max_outer_iters: int = 500
    outer_tol: float = 1e-6
    inner_gd_iters: int = 25
    inner_gd_step: float = 0.05
    merge_tol: float = 1e-3
    weight_exponent: float = 0.6

    def __post_init__(self):
        if self.m_upper < 1:
            raise ValueError("m_upper must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("penalty weights must be nonnegative")
        if not 0 < self.rho < 1.0 / self.m_upper:
            raise ValueError("need 0 < rho < 1/m_upper")
        if self.lambda1 > 0 and self.lambda1 >= 1.0 / self.m_upper:
            raise ValueError("need lambda1 < 1/m_upper")
        if self.tau <= 0 or self.gamma <= 0:
            raise ValueError("tau and gamma must be positive")
        if not 0 < self.theta_floor < 0.5:
            raise ValueError("theta_floor must lie in (0, 0.5)")


@dataclass(frozen=True, eq=False)
class PosteriorMatrix:
    values: NDArray[np.float64]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise DimensionError("posterior must be N x M")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def class_mass(self) -> NDArray[np.float64]:
        return self.values.sum(axis=0)


@dataclass(eq=False)
class AdmmState:
    """Fused differences and scaled duals for every class pair ``k < l``.

    Columns follow ``np.triu_indices(M, 1)``; pairs touching inactive
    classes are kept in place but not updated.
    """

    d: NDArray[np.float64]
    mu: NDArray[np.float64]

    @classmethod
    def from_theta(cls, theta) -> "AdmmState":
        first, second = np.triu_indices(theta.shape[1], 1)
        d = theta[:, first] - theta[:, second]
        return cls(d, np.zeros_like(d))

    def copy(self) -> "AdmmState":
        return AdmmState(self.d.copy(), self.mu.copy())

    def feasibility_gap(self, theta, pair_mask) -> float:
        first, second = np.triu_indices(theta.shape[1], 1)
        gap = np.abs(self.d - (theta[:, first] - theta[:, second]))[:, pair_mask]
        return float(gap.max()) if gap.size else 0.0


@dataclass(frozen=True, eq=False)
class FitResult:
    params: LcmParams
    posterior: PosteriorMatrix
    objective_trace: list[float]
    loglik_trace: list[float]
    loglik: float
    n_selected: int
    converged: bool
    iterations: int
    config: EmConfig
    raw_params: LcmParams | None = field(default=None)
    gap_trace: list[float] = field(default_factory=list)

    def active(self) -> NDArray[np.bool_]:
        return self.params.active(self.config.rho)


def _check_dims(data: ResponseData, params: LcmParams):
    if params.n_items != data.n_items:
        raise DimensionError(f"data has {data.n_items} items, params {params.n_items}")


def _log_components(data: ResponseData, theta: NDArray) -> NDArray:
    """N x M matrix of log P(observed R_i | class)."""
    r = data.values.astype(np.float64)
    obs = data.observed
    with np.errstate(divide="ignore"):
        log_t = np.log(theta)
        log_1t = np.log1p(-theta)
    # 0 * log(0) must vanish for theta at the boundary
    log_t = np.where(np.isfinite(log_t), log_t, -1e300)
    log_1t = np.where(np.isfinite(log_1t), log_1t, -1e300)
    return r @ log_t + (obs - r) @ log_1t


def _log_joint(data: ResponseData, params: LcmParams) -> NDArray:
    with np.errstate(divide="ignore"):
        log_pi = np.log(params.proportions)
    return _log_components(data, params.item_params) + log_pi


def log_likelihood(data: ResponseData, params: LcmParams) -> float:
    """Marginal log-likelihood; masked entries are integrated out."""
    _check_dims(data, params)
    if (params.proportions < 0).any():
        raise InvalidParamsError("negative class proportion")
    return float(logsumexp(_log_joint(data, params), axis=1).sum())


def tlp(x, tau: float):
    """Truncated Lasso penalty ``min(|x|, tau)``."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    return np.minimum(np.abs(x), tau)


def soft_threshold(x, t: float):
    if t < 0:
        raise ValueError("threshold must be nonnegative")
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def truncated_log(pi, rho: float):
    pi = np.asarray(pi, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.where(pi > rho, np.log(np.where(pi > rho, pi, 1.0)), np.log(rho))


def penalty_terms(params: LcmParams, config: EmConfig, n_subjects: int) -> tuple[float, float]:
    """(log-penalty, TLP-penalty) as subtracted from the log-likelihood."""
    pi = params.proportions
    lam1 = config.lambda1 * n_subjects
    lam2 = config.lambda2 * n_subjects
    log_pen = lam1 * float(truncated_log(pi, config.rho).sum())
    active = np.flatnonzero(pi > config.rho)
    theta = params.item_params[:, active]
    first, second = np.triu_indices(len(active), 1)
    fused = float(tlp(theta[:, first] - theta[:, second], config.tau).sum()) if len(first) else 0.0
    return log_pen, lam2 * fused


def penalized_objective(data: ResponseData, params: LcmParams, config: EmConfig) -> float:
    """Penalized log-likelihood (to be maximized)."""
    ll = log_likelihood(data, params)
    log_pen, fused_pen = penalty_terms(params, config, data.n_subjects)
    return ll - log_pen - fused_pen


def e_step(data: ResponseData, params: LcmParams) -> PosteriorMatrix:
    """Class posteriors computed in log space."""
    _check_dims(data, params)
    lj = _log_joint(data, params)
    return PosteriorMatrix(np.exp(lj - logsumexp(lj, axis=1, keepdims=True)))


def update_proportions(posterior: PosteriorMatrix, config: EmConfig,
                       active: NDArray[np.bool_] | None = None
                       ) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
    """Closed-form proportion update under the log penalty.

    Returns the new proportions and the updated active mask.  Solving the
    Lagrangian over the active set gives ``(s_k - lambda1) / (S - A*lambda1)``,
    which is the familiar ``(s_k - lambda1) / (1 - M*lambda1)`` when every
    class is active.
    """
    s = posterior.values.mean(axis=0)
    m = s.size
    active = np.ones(m, dtype=bool) if active is None else active.copy()
    frozen = config.rho / 10
    lam = config.lambda1
    while True:
        idx = np.flatnonzero(active)
        denom = s[idx].sum() - len(idx) * lam
        pi_active = (s[idx] - lam) / denom if denom > 0 else np.zeros(len(idx))
        dead = idx[pi_active <= config.rho]
        if len(dead) == 0 or len(dead) == len(idx):
            break
        active[dead] = False
    if len(dead) == len(idx):
        # never drop the last classes: keep the largest one
        keep = idx[np.argmax(s[idx])]
        active[:] = False
        active[keep] = True
        idx = np.array([keep])
        pi_active = np.ones(1)
    pi = np.full(m, frozen)
    n_frozen = m - len(idx)
    pi[idx] = pi_active / pi_active.sum() * (1.0 - n_frozen * frozen)
    return pi, active


def _sufficient_stats(data: ResponseData, posterior: NDArray) -> tuple[NDArray, NDArray]:
    """Per-item weighted counts of correct and incorrect answers, J x M.

    Each item is normalized by its number of observed responses.
    """
    r = data.values.astype(np.float64)
    obs = data.observed
    n_obs = obs.sum(axis=0)[:, None]
    ones = (r.T @ posterior) / n_obs
    zeros = ((obs - r).T @ posterior) / n_obs
    return ones, zeros


def _pair_incidence(m: int) -> NDArray[np.float64]:
    first, second = np.triu_indices(m, 1)
    b = np.zeros((len(first), m))
    b[np.arange(len(first)), first] = 1.0
    b[np.arange(len(first)), second] = -1.0
    return b


def theta_inner_objective(theta, ones, zeros, admm: AdmmState, pair_mask, col_mask,
                          gamma: float) -> NDArray[np.float64]:
    """Per-item value of the convex theta subproblem."""
    b = _pair_incidence(theta.shape[1])
    with np.errstate(divide="ignore", invalid="ignore"):
        lik = -(ones * np.log(theta) + zeros * np.log1p(-theta))
    lik = np.where(col_mask, lik, 0.0).sum(axis=1)
    resid = (admm.d - theta @ b.T + admm.mu) * pair_mask
    return lik + 0.5 * gamma * (resid ** 2).sum(axis=1)


def minimize_theta(theta, ones, zeros, admm: AdmmState, pair_mask, col_mask,
                   config: EmConfig, history: list | None = None) -> NDArray[np.float64]:
    """Projected gradient descent on the theta subproblem, jointly per item.

    Step sizes start at ``inner_gd_step`` and are halved per item whenever a
    step would not decrease that item's objective, so every accepted step
    is a descent step.
    """
    lo, hi = config.theta_floor, 1 - config.theta_floor
    gamma = config.gamma
    b = _pair_incidence(theta.shape[1])
    theta = theta.copy()
    step = np.full(theta.shape[0], config.inner_gd_step)
    f = theta_inner_objective(theta, ones, zeros, admm, pair_mask, col_mask, gamma)
    if history is not None:
        history.append(f.copy())
    for _ in range(config.inner_gd_iters):
        resid = (admm.d - theta @ b.T + admm.mu) * pair_mask
        grad = -ones / theta + zeros / (1 - theta) - gamma * (resid @ b)
        grad = np.where(col_mask, grad, 0.0)
        if not np.isfinite(grad).all():
            logger.warning("non-finite theta gradient; clamping")
            grad = np.nan_to_num(grad, nan=0.0, posinf=1e6, neginf=-1e6)
        cand = np.clip(theta - step[:, None] * grad, lo, hi)
        f_cand = theta_inner_objective(cand, ones, zeros, admm, pair_mask, col_mask, gamma)
        ok = f_cand <= f
        theta[ok] = cand[ok]
        f[ok] = f_cand[ok]
        step[~ok] *= 0.5
        if history is not None:
            history.append(f.copy())
    return theta


def update_item_params(data: ResponseData, posterior: PosteriorMatrix, theta,
                       admm: AdmmState, config: EmConfig, active: NDArray[np.bool_],
                       history: list | None = None) -> tuple[NDArray, AdmmState]:
    """Theta block of the M-step followed by the ADMM d and mu updates.

    Without a fusion penalty the theta step is the posterior-weighted
    Bernoulli MLE and the ADMM variables are left alone.
    """
    ones, zeros = _sufficient_stats(data, posterior.values)
    lo, hi = config.theta_floor, 1 - config.theta_floor
    col_mask = np.broadcast_to(active, theta.shape)
    if config.lambda2 == 0:
        total = ones + zeros
        with np.errstate(invalid="ignore", divide="ignore"):
            mle = np.clip(ones / total, lo, hi)
        new = np.where(col_mask & (total > 0), mle, theta)
        return new, admm
    first, second = np.triu_indices(theta.shape[1], 1)
    pair_mask = active[first] & active[second]
    new = minimize_theta(theta, ones, zeros, admm, pair_mask, col_mask, config, history)
    diff = new[:, first] - new[:, second]
    x = diff - admm.mu
    shrink = np.abs(admm.d) < config.tau
    d = np.where(shrink, soft_threshold(x, config.lambda2 / config.gamma), x)
    d = np.where(pair_mask, d, admm.d)
    mu = np.where(pair_mask, admm.mu + d - diff, admm.mu)
    return new, AdmmState(d, mu)


def merge_item_params(params: LcmParams, config: EmConfig,
                      posterior: PosteriorMatrix | None = None) -> LcmParams:
    """Turn near-ties among active classes into exact ties.

    For each item, active-class values are grouped by single linkage with
    gap ``merge_tol`` and every group is replaced by its weighted mean
    (weights: posterior class mass, or the proportions).
    """
    tol = config.merge_tol
    if tol <= 0:
        return params
    active = np.flatnonzero(params.proportions > config.rho)
    weights = posterior.class_mass if posterior is not None else params.proportions
    w = weights[active]
    theta = params.item_params.copy()
    for j in range(theta.shape[0]):
        vals = theta[j, active]
        order = np.argsort(vals, kind="stable")
        sorted_vals = vals[order]
        breaks = np.flatnonzero(np.diff(sorted_vals) > tol) + 1
        for group in np.split(order, breaks):
            if len(group) > 1:
                theta[j, active[group]] = np.average(vals[group], weights=w[group])
    return LcmParams(params.proportions, theta)


def _converged(trace: list[float], tol: float) -> bool:
    if len(trace) < 2:
        return False
    prev, cur = trace[-2], trace[-1]
    return abs(cur - prev) <= tol * max(abs(prev), 1e-12)


def _validate_init(data: ResponseData, config: EmConfig, init: LcmParams):
    if init.n_classes != config.m_upper:
        raise DimensionError(f"init has {init.n_classes} classes, m_upper={config.m_upper}")
    _check_dims(data, init)


def _clamp(theta, config: EmConfig):
    return np.clip(theta, config.theta_floor, 1 - config.theta_floor)


def fit(data: ResponseData, config: EmConfig, init: LcmParams) -> FitResult:
    """Run the penalized EM from ``init``.

    Masked entries (if ``data`` carries a mask) are skipped in all sums.
    """
    return _run(data, config, init)


def fit_missing(data: ResponseData, config: EmConfig, init: LcmParams) -> FitResult:
    """Penalized EM on data with a missingness mask.

    The masked likelihood and per-item observed-count normalization are
    built into :func:`fit`; with an all-ones mask the two coincide.
    """
    if data.mask is None:
        data = ResponseData(data.values, np.ones(data.values.shape, dtype=np.int8))
    return _run(data, config, init)


def _run(data, config, init, subsample=None, weights=None, rng=None) -> FitResult:
    _validate_init(data, config, init)
    pi = init.proportions.copy()
    theta = _clamp(init.item_params, config)
    active = pi > config.rho
    if not active.any():
        active[np.argmax(pi)] = True
    pi = np.where(active, pi, config.rho / 10)
    pi[active] *= (1 - (~active).sum() * config.rho / 10) / pi[active].sum()
    admm = AdmmState.from_theta(theta)
    first, second = np.triu_indices(config.m_upper, 1)

    params = LcmParams(pi, theta)
    # the stochastic variant refreshes only part of this matrix per iteration
    post = e_step(data, params) if subsample is not None else None
    trace, ll_trace, gaps = [], [], []
    converged = False
    it = 0
    for it in range(1, config.max_outer_iters + 1):
        if subsample is None:
            post = e_step(data, params)
        else:
            post = _partial_e_step(data, params, post, subsample, rng)
        new_pi, active = update_proportions(post, config, active)
        new_theta, admm = update_item_params(data, post, params.item_params, admm, config, active)
        if weights is not None:
            w = _weight(weights, it)
            new_pi = (1 - w) * params.proportions + w * new_pi
            new_pi /= new_pi.sum()
            new_theta = (1 - w) * params.item_params + w * new_theta
        params = LcmParams(new_pi, new_theta)
        ll = log_likelihood(data, params)
        log_pen, fused_pen = penalty_terms(params, config, data.n_subjects)
        ll_trace.append(ll)
        trace.append(-(ll - log_pen - fused_pen))
        if config.lambda2 > 0:
            gaps.append(admm.feasibility_gap(params.item_params, active[first] & active[second]))
        if _converged(trace, config.outer_tol):
            converged = True
            break
    if not converged:
        logger.info("penalized EM stopped after %d iterations without converging", it)
    post = e_step(data, params)
    merged = merge_item_params(params, config, post)
    return FitResult(
        params=merged,
        posterior=post,
        objective_trace=trace,
        loglik_trace=ll_trace,
        loglik=log_likelihood(data, merged),
        n_selected=int((merged.proportions > config.rho).sum()),
        converged=converged,
        iterations=it,
        config=config,
        raw_params=params,
        gap_trace=gaps,
    )


def _weight(weights, c: int) -> float:
    if callable(weights):
        return float(weights(c))
    weights = list(weights)
    return float(weights[min(c - 1, len(weights) - 1)])


def _partial_e_step(data: ResponseData, params: LcmParams, post: PosteriorMatrix,
                    subsample, rng) -> PosteriorMatrix:
    row_frac, col_frac = subsample
    n, j = data.values.shape
    if row_frac >= 1 and col_frac >= 1:
        return e_step(data, params)
    rows = np.sort(rng.choice(n, size=max(1, int(round(row_frac * n))), replace=False))
    cols = np.sort(rng.choice(j, size=max(1, int(round(col_frac * j))), replace=False))
    sub_mask = None if data.mask is None else data.mask[np.ix_(rows, cols)]
    sub = ResponseData(data.values[np.ix_(rows, cols)], sub_mask)
    sub_params = LcmParams(params.proportions, params.item_params[cols])
    values = post.values.copy()
    values[rows] = e_step(sub, sub_params).values
    return PosteriorMatrix(values)


def fit_stochastic(data: ResponseData, config: EmConfig, init: LcmParams,
                   subsample: tuple[float, float] = (0.5, 0.5),
                   weights: Sequence[float] | Callable[[int], float] | None = None,
                   seed: int = 0) -> FitResult:
    """Stochastic penalized EM.

    Each iteration refreshes the posteriors of a random subset of subjects
    using a random subset of items, runs the usual M-step, and moves the
    parameters a fraction ``w_c`` of the way to the M-step output.
    ``weights`` defaults to ``w_c = c ** -weight_exponent``.
    """
    row_frac, col_frac = subsample
    if not (0 < row_frac <= 1 and 0 < col_frac <= 1):
        raise ValueError("subsample fractions must lie in (0, 1]")
    if weights is None:
        weights = lambda c: c ** -config.weight_exponent  # noqa: E731
    rng = np.random.Generator(np.random.Philox(seed))
    return _run(data, config, init, subsample=subsample, weights=weights, rng=rng)


def random_init(data: ResponseData, m: int, rng: np.random.Generator,
                theta_floor: float = 1e-4) -> LcmParams:
    """Uniform proportions; item parameters drawn uniformly on (0.1, 0.9).

    ``theta_floor`` is accepted for signature symmetry with
    :func:`spectral_init`.
    """
    theta = rng.uniform(0.1, 0.9, size=(data.n_items, m))
    return LcmParams(np.full(m, 1.0 / m), np.clip(theta, theta_floor, 1 - theta_floor))


def spectral_init(data: ResponseData, m: int, theta_floor: float = 1e-4,
                  seed: int = 0) -> LcmParams:
    """Initialize from spectral clustering of subjects.

    Subjects are embedded with the leading ``m`` left singular vectors of
    the degree-normalized response matrix ``D_r^-1/2 R D_c^-1/2`` (the
    eigenvectors of the smallest eigenvalues of the normalized Laplacian of
    the subject similarity ``R R^T``), rows rescaled to unit length, and
    clustered with k-means.  Cluster frequencies and per-cluster item means
    give the initial parameters.
    """
    from sklearn.cluster import KMeans

    r = data.values.astype(np.float64)
    obs = data.observed
    n = r.shape[0]
    if m == 1:
        labels = np.zeros(n, dtype=int)
    else:
        row_deg = r.sum(axis=1)
        # subjects with no correct answers get a tiny degree jitter
        row_deg = np.where(row_deg > 0, row_deg, 1e-8)
        col_deg = np.maximum(r.sum(axis=0), 1e-8)
        a = r / np.sqrt(row_deg)[:, None] / np.sqrt(col_deg)[None, :]
        u, _, _ = np.linalg.svd(a, full_matrices=False)
        emb = u[:, :m]
        emb = emb * np.sign(emb[np.argmax(np.abs(emb), axis=0), np.arange(emb.shape[1])])
        norms = np.linalg.norm(emb, axis=1, keepdims=True)
        emb = emb / np.where(norms > 0, norms, 1.0)
        labels = KMeans(n_clusters=m, n_init=10, random_state=seed).fit_predict(emb)
    counts = np.bincount(labels, minlength=m).astype(float)
    onehot = np.eye(m)[labels]
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = (r.T @ onehot) / (obs.T @ onehot)
    overall = r.sum(axis=0) / obs.sum(axis=0)
    theta = np.where(np.isfinite(theta), theta, overall[:, None])
    pi = counts / counts.sum()
    if (pi == 0).any():
        pi = np.maximum(pi, 1.0 / n)
        pi /= pi.sum()
    return LcmParams(pi, np.clip(theta, theta_floor, 1 - theta_floor))


def with_penalties(config: EmConfig, **kw) -> EmConfig:
    return replace(config, **kw)
