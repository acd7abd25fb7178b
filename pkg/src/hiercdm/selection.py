"""Information criteria and the two-stage tuning search."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import LcmParams, ResponseData
from .estimator import EmConfig, FitResult, fit

logger = logging.getLogger(__name__)

BIC_COLUMNS = ("stage", "lambda1", "lambda2", "tau", "loglik", "m_hat", "dim_total", "bic")


def _default_stage1_lambda1():
    return [round(0.01 + 0.005 * i, 3) for i in range(9)]


@dataclass(frozen=True)
class TuningGrid:
    """Candidate penalties for the two tuning stages.

    Stage 2 values of ``lambda2`` are ``exp(v)`` for ``v`` in
    ``stage2_log_lambda2`` (natural log).
    """

    stage1_lambda1: list = field(default_factory=_default_stage1_lambda1)
    stage1_lambda2: list = field(default_factory=lambda: [0.001, 0.005, 0.01, 0.015])
    stage1_tau: float = 0.3
    stage2_log_lambda2: list = field(default_factory=lambda: [-1.0, 0.0, 1.0, 2.0, 3.0])
    stage2_tau: list = field(default_factory=lambda: [0.03, 0.05, 0.1])

    def __post_init__(self):
        for name in ("stage1_lambda1", "stage1_lambda2", "stage2_log_lambda2", "stage2_tau"):
            if not list(getattr(self, name)):
                raise ValueError(f"{name} must be non-empty")

    @property
    def stage2_lambda2(self) -> list[float]:
        return [math.exp(v) for v in self.stage2_log_lambda2]

    def stage1_points(self):
        return list(itertools.product(self.stage1_lambda1, self.stage1_lambda2))

    def stage2_points(self):
        return list(itertools.product(self.stage2_lambda2, self.stage2_tau))

    @property
    def size(self) -> int:
        return len(self.stage1_points()) + len(self.stage2_points())


def n_distinct_levels(params: LcmParams, rho: float) -> list[int]:
    """Distinct item-parameter values among active classes, per item."""
    theta = params.item_params[:, params.proportions > rho]
    return [len(np.unique(row)) for row in theta]


def bic(fit_result: FitResult, data: ResponseData, rho: float | None = None,
        ebic_gamma: float = 0.0) -> float:
    """BIC counting selected classes and distinct item-parameter levels.

    ``ebic_gamma > 0`` adds the extended-BIC term
    ``2 * gamma * log C(M, M_selected)``.
    """
    rho = fit_result.config.rho if rho is None else rho
    params = fit_result.params
    m_sel = int((params.proportions > rho).sum())
    dims = sum(n_distinct_levels(params, rho))
    value = -2.0 * fit_result.loglik + math.log(data.n_subjects) * (m_sel - 1 + dims)
    if ebic_gamma:
        value += 2.0 * ebic_gamma * math.log(math.comb(params.n_classes, m_sel))
    return value


@dataclass(frozen=True, eq=False)
class SearchResult:
    fit: FitResult
    hyperparameters: dict
    table: list[dict]
    converged: bool


def _row(stage, cfg: EmConfig, res: FitResult, data, ebic_gamma) -> dict:
    return {
        "stage": stage,
        "lambda1": cfg.lambda1,
        "lambda2": cfg.lambda2,
        "tau": cfg.tau,
        "loglik": res.loglik,
        "m_hat": res.n_selected,
        "dim_total": sum(n_distinct_levels(res.params, cfg.rho)),
        "bic": bic(res, data, cfg.rho, ebic_gamma),
        "converged": res.converged,
    }


def _key(row):
    return (row["bic"], row["m_hat"], row["dim_total"])


def warm_start(data: ResponseData, init: LcmParams, config: EmConfig, iters: int) -> LcmParams:
    """Run ``iters`` unpenalized EM iterations from ``init`` (no merging)."""
    if iters <= 0:
        return init
    cfg = replace(config, lambda1=0.0, lambda2=0.0, max_outer_iters=iters, outer_tol=0.0)
    return fit(data, cfg, init).raw_params


def _fit_point(job):
    fitter, data, cfg, init = job
    return fitter(data, cfg, init)


def two_stage_search(data: ResponseData, grid: TuningGrid, config_base: EmConfig,
                     init: LcmParams, warmup_iters: int = 100, ebic_gamma: float = 0.0,
                     fitter=fit, map_fn=map) -> SearchResult:
    """Select penalties by BIC in two stages.

    Stage 1 fits every ``(lambda1, lambda2)`` pair at ``tau = stage1_tau``
    from ``init`` (after ``warmup_iters`` unpenalized EM iterations).  Stage
    2 restarts from the stage-1 winner with ``lambda1 = 0`` and searches
    ``(lambda2, tau)``.  The overall minimum-BIC fit is returned; ties go to
    fewer classes, then fewer distinct item levels.

    ``fitter(data, config, init)`` runs one grid point; ``map_fn`` may be a
    process-pool map, since grid points within a stage are independent.
    """
    start = warm_start(data, init, config_base, warmup_iters)
    table, fits = [], []

    def run_stage(stage, configs, init_params):
        jobs = [(fitter, data, cfg, init_params) for cfg in configs]
        for cfg, res in zip(configs, map_fn(_fit_point, jobs)):
            table.append(_row(stage, cfg, res, data, ebic_gamma))
            fits.append(res)

    run_stage(1, [replace(config_base, lambda1=l1, lambda2=l2, tau=grid.stage1_tau)
                  for l1, l2 in grid.stage1_points()], start)
    best1 = min(range(len(table)), key=lambda i: _key(table[i]))
    run_stage(2, [replace(config_base, lambda1=0.0, lambda2=l2, tau=tau)
                  for l2, tau in grid.stage2_points()], fits[best1].params)
    best = min(range(len(table)), key=lambda i: _key(table[i]))
    chosen = table[best]
    any_converged = any(r["converged"] for r in table)
    if not any_converged:
        logger.warning("no grid point converged; returning best by BIC")
    hyper = {k: chosen[k] for k in ("stage", "lambda1", "lambda2", "tau")}
    return SearchResult(fits[best], hyper, table, any_converged)
