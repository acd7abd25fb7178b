"""Scoring recovered structures against simulation ground truth."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, asdict

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import linear_sum_assignment

from .core import Hierarchy, IndicatorMatrix, LcmParams
from .estimator import FitResult
from .recovery import RecoveryResult, indicator_matrix, partial_orders, reconstruct_q
from .simulate import GroundTruth


@dataclass(frozen=True)
class Metrics:
    """Per-replication accuracy metrics.

    ``mse_theta`` is only defined when the number of classes is right and
    ``acc_q`` only when the hierarchy is right.
    """

    acc_m: int
    acc_p: int
    acc_e: int
    mse_theta: float | None = None
    acc_q: float | None = None

    def __post_init__(self):
        if (self.mse_theta is not None) != bool(self.acc_m):
            raise ValueError("mse_theta is defined exactly when acc_m == 1")
        if (self.acc_q is not None) != bool(self.acc_e):
            raise ValueError("acc_q is defined exactly when acc_e == 1")

    def as_dict(self) -> dict:
        return asdict(self)


def hamming_costs(gamma_hat, gamma_true) -> NDArray[np.int64]:
    """``cost[a, b]`` = Hamming distance of true column a and estimated column b."""
    gh = np.asarray(getattr(gamma_hat, "entries", gamma_hat), dtype=np.int64)
    gt = np.asarray(getattr(gamma_true, "entries", gamma_true), dtype=np.int64)
    if gh.shape[0] != gt.shape[0]:
        raise ValueError("indicator matrices cover different items")
    return (gt[:, :, None] != gh[:, None, :]).sum(axis=0)


def match_columns(gamma_hat, gamma_true, theta_hat=None, theta_true=None) -> NDArray[np.int64]:
    """Minimum total-Hamming assignment of estimated to true columns.

    Returns ``perm`` with ``perm[a]`` the estimated column matched to true
    column ``a`` (``-1`` if the estimate has too few columns).  Unequal
    column counts are padded with sentinel columns of cost J.  When both
    ``theta`` matrices are given, squared parameter distance breaks ties
    without overriding any Hamming difference.
    """
    cost = hamming_costs(gamma_hat, gamma_true).astype(np.float64)
    n_items = np.asarray(getattr(gamma_true, "entries", gamma_true)).shape[0]
    if theta_hat is not None and theta_true is not None:
        th = np.asarray(theta_hat, dtype=np.float64)
        tt = np.asarray(theta_true, dtype=np.float64)
        sq = ((tt[:, :, None] - th[:, None, :]) ** 2).sum(axis=0)
        cost = cost + sq / (n_items + 1.0)
    m_true, m_hat = cost.shape
    size = max(m_true, m_hat)
    padded = np.full((size, size), float(n_items))
    padded[:m_true, :m_hat] = cost
    rows, cols = linear_sum_assignment(padded)
    perm = np.full(m_true, -1, dtype=np.int64)
    for r, c in zip(rows, cols):
        if r < m_true and c < m_hat:
            perm[r] = c
    return perm


def _reduced_adjacency(h: Hierarchy) -> NDArray[np.bool_]:
    return h.transitive_reduction().adjacency().astype(bool)


def hierarchy_isomorphisms(h_hat: Hierarchy, h_true: Hierarchy):
    """Yield attribute maps ``sigma`` (hat index -> true index) preserving edges.

    Candidates are pruned by (in-degree, out-degree, reach) signatures of
    the transitively reduced graphs before brute-force checking.
    """
    if h_hat.n_attributes != h_true.n_attributes:
        return
    k = h_hat.n_attributes
    a = _reduced_adjacency(h_hat)
    b = _reduced_adjacency(h_true)
    from .core import transitive_closure

    ca, cb = transitive_closure(a), transitive_closure(b)

    def signature(adj, clo, v):
        return (int(adj[:, v].sum()), int(adj[v].sum()), int(clo[:, v].sum()), int(clo[v].sum()))

    sig_a = [signature(a, ca, v) for v in range(k)]
    sig_b = [signature(b, cb, v) for v in range(k)]
    if sorted(sig_a) != sorted(sig_b):
        return
    options = [[w for w in range(k) if sig_b[w] == sig_a[v]] for v in range(k)]
    for sigma in itertools.product(*options):
        if len(set(sigma)) != k:
            continue
        s = np.asarray(sigma)
        if np.array_equal(a, b[np.ix_(s, s)]):
            yield s


def is_isomorphic(h_hat: Hierarchy, h_true: Hierarchy) -> bool:
    return next(hierarchy_isomorphisms(h_hat, h_true), None) is not None


def reference_q(truth: GroundTruth) -> NDArray[np.int8]:
    """Identifiable representative of the generating Q-matrix.

    Each row is the smallest true profile among the most capable classes of
    the item, i.e. the generating q-vector closed under the hierarchy's
    prerequisites (equivalent to the raw row for conjunctive items).
    """
    g = true_indicator(truth)
    return reconstruct_q(g, truth.profiles).entries


def true_indicator(truth: GroundTruth) -> IndicatorMatrix:
    return indicator_matrix(LcmParams(truth.proportions, truth.theta), rho=0.0, eps_gamma=1e-12)


def score(recovery: RecoveryResult, fit: FitResult | LcmParams, truth: GroundTruth,
          t: float = 0.0) -> Metrics:
    """Five-metric comparison of one fitted and recovered model with truth."""
    params = fit.params if isinstance(fit, FitResult) else fit
    m0 = truth.n_classes
    m_hat = len(recovery.classes)
    acc_m = int(m_hat == m0)
    g_true = true_indicator(truth)
    p_true = partial_orders(g_true, 0.0).adjacency
    acc_p, mse = 0, None
    if acc_m:
        theta_hat = params.item_params[:, recovery.classes]
        perm = match_columns(recovery.gamma, g_true, theta_hat, truth.theta)
        p_hat = recovery.dag.adjacency[np.ix_(perm, perm)]
        acc_p = int(np.array_equal(p_hat, p_true))
        mse = float(np.mean((theta_hat[:, perm] - truth.theta) ** 2))
    h_true = truth.hierarchy
    maps = list(hierarchy_isomorphisms(recovery.hierarchy, h_true))
    acc_e = int(bool(maps))
    acc_q = None
    if acc_e:
        q_ref = reference_q(truth)
        q_hat = recovery.q.entries
        best = 0.0
        for sigma in maps:
            aligned = np.zeros_like(q_ref)
            aligned[:, sigma] = q_hat
            best = max(best, float(np.mean(aligned == q_ref)))
        acc_q = best
    return Metrics(acc_m, acc_p, acc_e, mse, acc_q)


def aggregate(rows: list[Metrics]) -> dict:
    """Mean of each metric over replications; undefined entries are skipped."""
    out = {}
    for name in ("acc_m", "acc_p", "acc_e", "mse_theta", "acc_q"):
        vals = [getattr(r, name) for r in rows if getattr(r, name) is not None]
        out[name] = float(np.mean(vals)) if vals else None
    return out
