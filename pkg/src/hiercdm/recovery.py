"""Recover attribute profiles, the attribute hierarchy and the Q-matrix.

Starting from fitted class parameters the pipeline is

1. indicator matrix of most capable classes per item,
2. partial order among classes (Hasse diagram of column domination),
3. binary representations built layer by layer over that diagram,
4. prerequisite edges from column domination of the profile matrix,
5. Q-matrix rows as the smallest indicated profile per item.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .core import (
    AttributeProfileSet,
    HierCdmError,
    Hierarchy,
    IndicatorMatrix,
    LcmParams,
    QMatrix,
    transitive_closure,
)

logger = logging.getLogger(__name__)

DEFAULT_EPS_GAMMA = 0.01


class RecoveryFailedError(HierCdmError):
    """Raised when the class ordering cannot be turned into a DAG."""

    def __init__(self, message, cycle=None):
        super().__init__(message)
        self.cycle = cycle


@dataclass(frozen=True, eq=False)
class PartialOrderDag:
    adjacency: NDArray[np.int8]

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=np.int8).copy()
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    def parents(self, node: int) -> list[int]:
        return np.flatnonzero(self.adjacency[:, node]).tolist()

    def edges(self) -> list[tuple[int, int]]:
        return [tuple(e) for e in np.argwhere(self.adjacency).tolist()]


@dataclass(frozen=True, eq=False)
class RecoveryResult:
    gamma: IndicatorMatrix
    dag: PartialOrderDag
    profiles: AttributeProfileSet
    hierarchy: Hierarchy
    q: QMatrix
    k_hat: int
    classes: NDArray[np.int64]
    empty_items: list[int] = field(default_factory=list)
    antichain_items: list[int] = field(default_factory=list)

    @property
    def degenerate(self) -> bool:
        return self.k_hat == 0


def indicator_matrix(params: LcmParams, rho: float = 1e-4,
                     eps_gamma: float = DEFAULT_EPS_GAMMA) -> IndicatorMatrix:
    """Flag, per item, the active classes within ``eps_gamma`` of the maximum."""
    active = params.proportions > rho
    if not active.any():
        raise ValueError("no active classes")
    theta = params.item_params[:, active]
    top = theta.max(axis=1, keepdims=True)
    return IndicatorMatrix((theta >= top - eps_gamma).astype(np.int8))


def _transitive_reduction(rel: NDArray[np.bool_]) -> NDArray[np.int8]:
    """Apply the two-step rule: drop a -> b whenever a -> x -> b exists."""
    p = rel.astype(np.int64)
    p2 = p @ p
    return ((p > 0) & (p2 == 0)).astype(np.int8)


def _find_cycle(rel: NDArray[np.bool_]) -> list[int] | None:
    n = rel.shape[0]
    color = [0] * n
    path: list[int] = []

    def visit(u):
        color[u] = 1
        path.append(u)
        for v in np.flatnonzero(rel[u]):
            v = int(v)
            if color[v] == 1:
                return path[path.index(v):] + [v]
            if color[v] == 0:
                found = visit(v)
                if found:
                    return found
        color[u] = 2
        path.pop()
        return None

    for s in range(n):
        if color[s] == 0:
            found = visit(s)
            if found:
                return found
    return None


def partial_orders(gamma: IndicatorMatrix, t: float = 0.0) -> PartialOrderDag:
    """Hasse diagram of the tolerant column-domination order.

    Class ``a`` precedes ``b`` when ``gamma[j, a] <= gamma[j, b]`` except on
    a proportion of items strictly below ``t``.  When both directions hold under
    the tolerance, the direction with fewer violating items wins; an exact
    tie is reported as a cycle.
    """
    if not 0 <= t < 1:
        raise ValueError("tolerance t must lie in [0, 1)")
    g = gamma.entries.astype(np.int64)
    n_items, m = g.shape
    # violations[a, b] = #items with gamma[j, a] > gamma[j, b]
    violations = (g[:, :, None] > g[:, None, :]).sum(axis=0)
    rel = (violations == 0) | (violations < t * n_items - 1e-9)
    np.fill_diagonal(rel, False)
    mutual = rel & rel.T
    for a, b in zip(*np.nonzero(np.triu(mutual, 1))):
        if violations[a, b] < violations[b, a]:
            rel[b, a] = False
        elif violations[b, a] < violations[a, b]:
            rel[a, b] = False
        else:
            raise RecoveryFailedError(
                f"classes {a} and {b} dominate each other", cycle=[int(a), int(b), int(a)])
    if t > 0 and mutual.any():
        warnings.warn("mutual domination under tolerance resolved by violation count",
                      stacklevel=2)
    cycle = _find_cycle(rel)
    if cycle is not None:
        raise RecoveryFailedError(f"class ordering contains a cycle {cycle}", cycle=cycle)
    closure = transitive_closure(rel)
    return PartialOrderDag(_transitive_reduction(closure))


def _layers(adj: NDArray) -> list[int]:
    """Longest-path depth of each node from the sources."""
    n = adj.shape[0]
    depth = [0] * n
    indeg = adj.sum(axis=0).astype(int).tolist()
    frontier = [v for v in range(n) if indeg[v] == 0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in np.flatnonzero(adj[u]):
                depth[v] = max(depth[v], depth[u] + 1)
                indeg[v] -= 1
                if indeg[v] == 0:
                    nxt.append(int(v))
        frontier = nxt
    return depth


def binary_representations(dag: PartialOrderDag) -> AttributeProfileSet:
    """Binary attribute profiles consistent with ``dag``.

    Nodes are visited by layer and then by index.  A node with a single
    parent copies the parent's bits and switches on a fresh attribute; a
    node with several parents takes the union of the parents' bits (adding
    a fresh attribute if that union would duplicate an existing profile).
    Several sources are hung below a virtual all-zero root.
    """
    adj = dag.adjacency.astype(bool)
    n = dag.n_nodes
    if n == 0:
        raise RecoveryFailedError("empty partial order")
    sources = [v for v in range(n) if not adj[:, v].any()]
    virtual_root = len(sources) > 1
    if virtual_root:
        logger.warning("partial order has %d sources; adding a virtual root", len(sources))
        adj = np.pad(adj, ((0, 1), (0, 1)))
        for s in sources:
            adj[n, s] = True
    size = adj.shape[0]
    depth = _layers(adj)
    order = sorted(range(size), key=lambda v: (depth[v], v))
    bits: dict[int, set[int]] = {}
    n_dims = 0
    for v in order:
        parents = np.flatnonzero(adj[:, v]).tolist()
        if not parents:
            bits[v] = set()
            continue
        if len(parents) == 1:
            bits[v] = bits[parents[0]] | {n_dims}
            n_dims += 1
            continue
        union = set().union(*(bits[p] for p in parents))
        if any(union == bits[u] for u in bits):
            logger.warning("union profile for node %d duplicates an existing one", v)
            union = union | {n_dims}
            n_dims += 1
        bits[v] = union
    rows = np.zeros((n, n_dims), dtype=np.int8)
    for v in range(n):
        for k in bits[v]:
            rows[v, k] = 1
    return AttributeProfileSet(n_dims, rows)


def extract_hierarchy(profiles: AttributeProfileSet) -> Hierarchy:
    """Prerequisite ``k -> l`` whenever column k dominates column l."""
    a = profiles.profiles.astype(bool)
    k = profiles.n_attributes
    rel = np.zeros((k, k), dtype=bool)
    for i in range(k):
        for j in range(k):
            if i != j and np.all(a[:, i] >= a[:, j]):
                rel[i, j] = True
    if (rel & rel.T).any():
        raise RecoveryFailedError("identical attribute columns in profile matrix")
    edges = np.argwhere(_transitive_reduction(transitive_closure(rel)))
    return Hierarchy(k, frozenset(map(tuple, edges.tolist())))


def reconstruct_q(gamma: IndicatorMatrix, profiles: AttributeProfileSet,
                  return_flags: bool = False):
    """Q-matrix rows as the smallest indicated attribute profile.

    Items whose indicated profiles have no unique minimum fall back to the
    componentwise AND of those profiles.
    """
    g = gamma.entries
    a = profiles.profiles
    if g.shape[1] != len(a):
        raise ValueError(f"indicator has {g.shape[1]} classes, profile set {len(a)}")
    q = np.zeros((g.shape[0], profiles.n_attributes), dtype=np.int8)
    antichain = []
    for j in range(g.shape[0]):
        ind = np.flatnonzero(g[j])
        cand = a[ind]
        mins = [i for i in range(len(ind)) if np.all(cand[i] <= cand).all()]
        if mins:
            q[j] = cand[mins[0]]
        else:
            antichain.append(j)
            q[j] = np.bitwise_and.reduce(cand, axis=0)
    if antichain:
        warnings.warn(f"no smallest indicated profile for items {antichain}", stacklevel=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        qm = QMatrix(q, allow_empty_rows=True)
    empty = np.flatnonzero(q.sum(axis=1) == 0).tolist() if q.shape[1] else list(range(len(q)))
    if return_flags:
        return qm, empty, antichain
    return qm


def recover(params: LcmParams, rho: float = 1e-4, eps_gamma: float = DEFAULT_EPS_GAMMA,
            t: float = 0.0, profiles_override: AttributeProfileSet | None = None
            ) -> RecoveryResult:
    """Full structure recovery from fitted class parameters.

    ``profiles_override`` substitutes user-supplied binary representations
    (one row per active class, in class order) for step 3.
    """
    classes = np.flatnonzero(params.proportions > rho)
    gamma = indicator_matrix(params, rho, eps_gamma)
    if len(classes) == 1:
        dag = PartialOrderDag(np.zeros((1, 1), dtype=np.int8))
        profiles = AttributeProfileSet(0, np.zeros((1, 0), dtype=np.int8))
    else:
        dag = partial_orders(gamma, t)
        profiles = binary_representations(dag)
    if profiles_override is not None:
        if len(profiles_override) != len(classes):
            raise ValueError("override must give one profile per active class")
        profiles = profiles_override
    hierarchy = extract_hierarchy(profiles)
    q, empty, antichain = reconstruct_q(gamma, profiles, return_flags=True)
    if empty and profiles.n_attributes:
        logger.warning("recovered Q has items measuring no attribute: %s", empty)
    return RecoveryResult(gamma, dag, profiles, hierarchy, q, profiles.n_attributes,
                          classes, empty, antichain)


def gdina_distinguishes(q_row, alpha, alpha_other) -> bool:
    """True when the profiles master different subsets of the item's attributes."""
    q = np.asarray(q_row).astype(bool)
    a = np.asarray(alpha).astype(bool)
    b = np.asarray(alpha_other).astype(bool)
    return bool(np.any((a & q) != (b & q)))
