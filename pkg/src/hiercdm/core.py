"""Domain types and attribute-hierarchy combinatorics.

Attribute and class indices are 0-based everywhere in the library.  The
file formats written by :mod:`hiercdm.io` convert to 1-based attribute
labels at the boundary.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray


class HierCdmError(Exception):
    """Base class for library errors."""


class InvalidHierarchyError(HierCdmError):
    """Raised when a prerequisite relation contains a cycle."""


class DimensionError(HierCdmError, ValueError):
    """Raised when array shapes disagree."""


class InvalidParamsError(HierCdmError, ValueError):
    """Raised for proportions or item parameters outside their domain."""


def _frozen(a: NDArray) -> NDArray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ResponseData:
    """Binary N x J response matrix with an optional observation mask.

    ``mask[i, j] == 1`` marks an observed entry.  Values under a zero mask
    are ignored; they are stored as 0.
    """

    values: NDArray[np.int8]
    mask: NDArray[np.int8] | None = None

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise DimensionError("response matrix must be two-dimensional")
        mask = None
        if self.mask is not None:
            mask = np.asarray(self.mask).astype(np.int8)
            if mask.shape != values.shape:
                raise DimensionError(
                    f"mask shape {mask.shape} != values shape {values.shape}")
            if not np.isin(mask, (0, 1)).all():
                raise ValueError("mask entries must be 0 or 1")
            if (mask.sum(axis=0) == 0).any():
                bad = np.flatnonzero(mask.sum(axis=0) == 0)
                raise ValueError(f"items without observed entries: {bad.tolist()}")
            values = np.where(mask == 1, values, 0)
        if not np.isin(values, (0, 1)).all():
            raise ValueError("responses must be 0 or 1")
        object.__setattr__(self, "values", _frozen(values.astype(np.int8)))
        object.__setattr__(self, "mask", None if mask is None else _frozen(mask))

    @property
    def n_subjects(self) -> int:
        return self.values.shape[0]

    @property
    def n_items(self) -> int:
        return self.values.shape[1]

    @property
    def observed(self) -> NDArray[np.float64]:
        """Mask as floats, all ones when no mask is attached."""
        if self.mask is None:
            return np.ones(self.values.shape)
        return self.mask.astype(np.float64)

    @property
    def has_missing(self) -> bool:
        return self.mask is not None and bool((self.mask == 0).any())


@dataclass(frozen=True, eq=False)
class LcmParams:
    """Latent class model parameters.

    Attributes
    ----------
    proportions : (M,) array
        Class proportions, summing to one.
    item_params : (J, M) array
        ``item_params[j, m] = P(R_j = 1 | class m)``.
    """

    proportions: NDArray[np.float64]
    item_params: NDArray[np.float64]

    def __post_init__(self):
        pi = np.asarray(self.proportions, dtype=np.float64).ravel()
        theta = np.asarray(self.item_params, dtype=np.float64)
        if theta.ndim != 2 or theta.shape[1] != pi.size:
            raise DimensionError(
                f"item_params shape {theta.shape} incompatible with {pi.size} classes")
        if (pi < 0).any():
            raise InvalidParamsError("negative class proportion")
        if abs(pi.sum() - 1.0) > 1e-9:
            raise InvalidParamsError(f"proportions sum to {pi.sum():.12f}")
        if ((theta < 0) | (theta > 1)).any() or not np.isfinite(theta).all():
            raise InvalidParamsError("item parameters must lie in [0, 1]")
        object.__setattr__(self, "proportions", _frozen(pi))
        object.__setattr__(self, "item_params", _frozen(theta))

    @property
    def n_classes(self) -> int:
        return self.proportions.size

    @property
    def n_items(self) -> int:
        return self.item_params.shape[0]

    def active(self, rho: float) -> NDArray[np.bool_]:
        return self.proportions > rho

    def restrict(self, rho: float) -> "LcmParams":
        """Drop classes with proportion <= rho and renormalize."""
        keep = self.active(rho)
        pi = self.proportions[keep]
        return LcmParams(pi / pi.sum(), self.item_params[:, keep])


def _bits_array(rows, n: int) -> NDArray[np.int8]:
    a = np.asarray(rows, dtype=np.int8)
    if a.ndim == 2 and a.shape[1] == n:
        return a
    if a.size == 0:
        # K = 0 keeps one empty profile per given row
        return np.zeros((len(a) if n == 0 and a.ndim == 2 else 0, n), dtype=np.int8)
    return a.reshape(-1, n)


def _profile_key(row) -> tuple:
    return (int(np.sum(row)), tuple(-int(v) for v in row))


@dataclass(frozen=True, eq=False)
class AttributeProfileSet:
    """Ordered set of distinct K-bit attribute profiles (rows)."""

    n_attributes: int
    profiles: NDArray[np.int8]

    def __post_init__(self):
        p = _bits_array(self.profiles, self.n_attributes)
        if not np.isin(p, (0, 1)).all():
            raise ValueError("profiles must be binary")
        if len({tuple(r) for r in p.tolist()}) != len(p):
            raise ValueError("profiles must be distinct")
        object.__setattr__(self, "profiles", _frozen(p))

    def __len__(self) -> int:
        return len(self.profiles)

    def bitstrings(self) -> list[str]:
        return ["".join(str(int(b)) for b in row) for row in self.profiles]

    def sorted(self) -> "AttributeProfileSet":
        order = sorted(range(len(self)), key=lambda i: _profile_key(self.profiles[i]))
        return AttributeProfileSet(self.n_attributes, self.profiles[order])


@dataclass(frozen=True)
class Hierarchy:
    """Prerequisite relation among attributes; ``(k, l)`` means k -> l."""

    n_attributes: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        edges = frozenset((int(k), int(l)) for k, l in self.edges)
        for k, l in edges:
            if k == l:
                raise InvalidHierarchyError(f"self-loop on attribute {k}")
            if not (0 <= k < self.n_attributes and 0 <= l < self.n_attributes):
                raise InvalidHierarchyError(f"edge {(k, l)} out of range")
        object.__setattr__(self, "edges", edges)
        if _find_cycle(self.n_attributes, edges) is not None:
            raise InvalidHierarchyError(
                f"cycle in hierarchy: {_find_cycle(self.n_attributes, edges)}")

    def adjacency(self) -> NDArray[np.int8]:
        a = np.zeros((self.n_attributes, self.n_attributes), dtype=np.int8)
        for k, l in self.edges:
            a[k, l] = 1
        return a

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def transitive_reduction(self) -> "Hierarchy":
        closure = transitive_closure(self.adjacency())
        reach2 = (closure.astype(int) @ closure.astype(int)) > 0
        edges = {(k, l) for k, l in self.edges if not reach2[k, l]}
        return Hierarchy(self.n_attributes, frozenset(edges))


class QMatrix:
    """J x K binary item-attribute matrix.

    All-zero rows are rejected unless ``allow_empty_rows`` is true, in which
    case a warning is issued and the offending rows are recorded.
    """

    def __init__(self, entries, allow_empty_rows: bool = False):
        q = np.asarray(entries, dtype=np.int8)
        if q.ndim != 2:
            raise DimensionError("Q-matrix must be two-dimensional")
        if not np.isin(q, (0, 1)).all():
            raise ValueError("Q-matrix must be binary")
        self.empty_rows = np.flatnonzero(q.sum(axis=1) == 0) if q.shape[1] else np.arange(len(q))
        if len(self.empty_rows) and q.shape[1]:
            if not allow_empty_rows:
                raise ValueError(f"items measuring no attribute: {self.empty_rows.tolist()}")
            warnings.warn(f"Q-matrix rows with no attribute: {self.empty_rows.tolist()}",
                          stacklevel=2)
        q.setflags(write=False)
        self.entries = q

    @property
    def shape(self):
        return self.entries.shape

    def __eq__(self, other):
        return isinstance(other, QMatrix) and np.array_equal(self.entries, other.entries)

    def __repr__(self):
        return f"QMatrix({self.entries.tolist()})"


class IndicatorMatrix:
    """J x M matrix flagging the most capable classes of each item."""

    def __init__(self, entries):
        g = np.asarray(entries, dtype=np.int8)
        if g.ndim != 2:
            raise DimensionError("indicator matrix must be two-dimensional")
        if not np.isin(g, (0, 1)).all():
            raise ValueError("indicator matrix must be binary")
        if g.shape[1] and (g.sum(axis=1) == 0).any():
            raise ValueError("every item needs at least one most-capable class")
        g.setflags(write=False)
        self.entries = g

    @property
    def shape(self):
        return self.entries.shape

    def __eq__(self, other):
        return isinstance(other, IndicatorMatrix) and np.array_equal(self.entries, other.entries)

    def __repr__(self):
        return f"IndicatorMatrix({self.entries.tolist()})"


def transitive_closure(adj) -> NDArray[np.bool_]:
    """Boolean reachability matrix (paths of length >= 1)."""
    reach = np.asarray(adj, dtype=bool).copy()
    n = reach.shape[0]
    for k in range(n):
        reach |= reach[:, [k]] & reach[[k], :]
    return reach


def _find_cycle(n: int, edges) -> list[int] | None:
    children = {i: [] for i in range(n)}
    for k, l in sorted(edges):
        children[k].append(l)
    color = [0] * n
    stack_path: list[int] = []

    def visit(u):
        color[u] = 1
        stack_path.append(u)
        for v in children[u]:
            if color[v] == 1:
                return stack_path[stack_path.index(v):] + [v]
            if color[v] == 0:
                found = visit(v)
                if found:
                    return found
        color[u] = 2
        stack_path.pop()
        return None

    for s in range(n):
        if color[s] == 0:
            found = visit(s)
            if found:
                return found
    return None


def profile_leq(a, b) -> bool:
    """Componentwise order ``a <= b`` on binary vectors."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch {a.shape} vs {b.shape}")
    return bool(np.all(a <= b))


def all_profiles(n_attributes: int) -> NDArray[np.int8]:
    rows = list(itertools.product((0, 1), repeat=n_attributes))
    return np.array(rows, dtype=np.int8).reshape(len(rows), n_attributes)


def induced_profiles(hierarchy: Hierarchy) -> AttributeProfileSet:
    """All profiles respecting every prerequisite edge of ``hierarchy``.

    Rows are ordered by number of mastered attributes, then
    lexicographically with mastered attributes first.
    """
    k = hierarchy.n_attributes
    alphas = all_profiles(k)
    ok = np.ones(len(alphas), dtype=bool)
    for pre, post in hierarchy.edges:
        ok &= ~((alphas[:, post] == 1) & (alphas[:, pre] == 0))
    return AttributeProfileSet(k, alphas[ok]).sorted()


HIERARCHY_TEMPLATES = {
    "linear": [(0, 1), (1, 2), (2, 3)],
    "convergent": [(0, 1), (0, 2), (1, 3), (2, 3)],
    "divergent": [(0, 1), (0, 2), (2, 3)],
    "unstructured": [(0, 1), (0, 2), (0, 3)],
}


def hierarchy_template(name: str, n_attributes: int = 4) -> Hierarchy:
    """One of the four canonical four-attribute hierarchies."""
    if name not in HIERARCHY_TEMPLATES:
        raise ValueError(f"unknown hierarchy template {name!r}; "
                         f"choose from {sorted(HIERARCHY_TEMPLATES)}")
    if n_attributes != 4:
        raise ValueError("hierarchy templates are defined for 4 attributes only")
    return Hierarchy(4, frozenset(HIERARCHY_TEMPLATES[name]))
