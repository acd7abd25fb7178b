"""Ground-truth hierarchical CDMs and synthetic response data."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import NDArray

from .core import (
    AttributeProfileSet,
    HierCdmError,
    Hierarchy,
    QMatrix,
    ResponseData,
    all_profiles,
    induced_profiles,
)

ModelName = Literal["dina", "dina_dino_mix", "gdina"]
MODELS = ("dina", "dina_dino_mix", "gdina")


class InfeasibleDesignError(HierCdmError, ValueError):
    """Raised when the test is too short for the identity blocks."""


def make_rng(seed: int, *substream: int) -> np.random.Generator:
    """Counter-based Philox generator for ``seed`` and a substream key.

    ``make_rng(seed, rep)`` gives an independent, platform-stable stream
    per replication.
    """
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(s) for s in substream))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SimSpec:
    model: ModelName
    hierarchy: Hierarchy
    n_items: int = 30
    n_subjects: int = 1000
    theta_high: float = 0.9
    theta_low: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}")
        if not 0 <= self.theta_low < self.theta_high <= 1:
            raise ValueError("need 0 <= theta_low < theta_high <= 1")

    @classmethod
    def from_noise(cls, model, hierarchy, noise: float, **kw) -> "SimSpec":
        """Spec with ``theta_high = 1 - noise`` and ``theta_low = noise``."""
        return cls(model, hierarchy, theta_high=1 - noise, theta_low=noise, **kw)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    q: QMatrix
    profiles: AttributeProfileSet
    proportions: NDArray[np.float64]
    theta: NDArray[np.float64]
    item_models: tuple[str, ...]
    hierarchy: Hierarchy
    memberships: NDArray[np.int64] | None = field(default=None)

    @property
    def n_classes(self) -> int:
        return len(self.profiles)


def item_model_tags(model: str, n_items: int) -> tuple[str, ...]:
    if model == "dina_dino_mix":
        half = n_items // 2
        return ("dina",) * half + ("dino",) * (n_items - half)
    return (model,) * n_items


def generate_q(spec: SimSpec, rng: np.random.Generator) -> QMatrix:
    """Q-matrix with identity blocks followed by random rows.

    DINA and GDINA put two stacked identities first.  The DINA+DINO mix
    starts each half of the test with its own identity.  GDINA random rows
    require at most three attributes.
    """
    k = spec.hierarchy.n_attributes
    j = spec.n_items
    if j < 2 * k or (spec.model == "dina_dino_mix" and j // 2 < k):
        raise InfeasibleDesignError(f"J={j} items cannot hold two {k}x{k} identity blocks")
    candidates = all_profiles(k)[1:]
    if spec.model == "gdina":
        candidates = candidates[candidates.sum(axis=1) <= 3]
    eye = np.eye(k, dtype=np.int8)

    def random_rows(n):
        return candidates[rng.integers(0, len(candidates), size=n)].reshape(n, k)

    if spec.model == "dina_dino_mix":
        half = j // 2
        q = np.vstack([eye, random_rows(half - k), eye, random_rows(j - half - k)])
    else:
        q = np.vstack([eye, eye, random_rows(j - 2 * k)])
    return QMatrix(q)


def ideal_response_dina(q_row, alpha) -> int:
    q_row, alpha = np.asarray(q_row), np.asarray(alpha)
    if q_row.shape != alpha.shape:
        raise ValueError("q-row and profile lengths differ")
    return int(np.all(alpha[q_row == 1] == 1))


def ideal_response_dino(q_row, alpha) -> int:
    q_row, alpha = np.asarray(q_row), np.asarray(alpha)
    if q_row.shape != alpha.shape:
        raise ValueError("q-row and profile lengths differ")
    return int(np.any((q_row == 1) & (alpha == 1)))


def item_params(spec: SimSpec, q: QMatrix, profiles: AttributeProfileSet) -> NDArray[np.float64]:
    """J x |profiles| response probabilities.

    DINA/DINO items take two levels.  GDINA item levels are equally spaced
    in the number of required attributes the profile possesses.
    """
    qm = q.entries.astype(int)
    alphas = profiles.profiles.astype(int)
    possessed = qm @ alphas.T
    required = qm.sum(axis=1, keepdims=True)
    hi, lo = spec.theta_high, spec.theta_low
    theta = np.empty(possessed.shape)
    for j, tag in enumerate(item_model_tags(spec.model, q.shape[0])):
        if tag == "dina":
            theta[j] = np.where(possessed[j] == required[j], hi, lo)
        elif tag == "dino":
            theta[j] = np.where(possessed[j] > 0, hi, lo)
        else:
            theta[j] = lo + possessed[j] / max(required[j, 0], 1) * (hi - lo)
    return theta


def ground_truth(spec: SimSpec, rng: np.random.Generator) -> GroundTruth:
    q = generate_q(spec, rng)
    profiles = induced_profiles(spec.hierarchy)
    theta = item_params(spec, q, profiles)
    pi = np.full(len(profiles), 1.0 / len(profiles))
    return GroundTruth(q, profiles, pi, theta,
                       item_model_tags(spec.model, spec.n_items), spec.hierarchy)


def sample_responses(truth: GroundTruth, n_subjects: int,
                     rng: np.random.Generator) -> tuple[ResponseData, NDArray[np.int64]]:
    """Draw class memberships from the proportions, then Bernoulli responses."""
    m = rng.choice(truth.n_classes, size=n_subjects, p=truth.proportions)
    p = truth.theta[:, m].T
    r = (rng.random(p.shape) < p).astype(np.int8)
    return ResponseData(r), m.astype(np.int64)


def apply_missingness(data: ResponseData, rate: float,
                      rng: np.random.Generator) -> ResponseData:
    """Mask entries completely at random with probability ``rate``.

    Columns left without observations get one entry re-observed.
    """
    if not 0 <= rate < 1:
        raise ValueError("missingness rate must lie in [0, 1)")
    mask = (rng.random(data.values.shape) >= rate).astype(np.int8)
    if data.mask is not None:
        mask &= data.mask
    for j in np.flatnonzero(mask.sum(axis=0) == 0):
        candidates = (np.arange(data.n_subjects) if data.mask is None
                      else np.flatnonzero(data.mask[:, j]))
        mask[rng.choice(candidates), j] = 1
    return ResponseData(data.values, mask)


def simulate(spec: SimSpec, rng: np.random.Generator | None = None
             ) -> tuple[GroundTruth, ResponseData]:
    """Ground truth plus data; ``rng`` defaults to ``make_rng(spec.seed)``."""
    rng = make_rng(spec.seed) if rng is None else rng
    truth = ground_truth(spec, rng)
    data, memberships = sample_responses(truth, spec.n_subjects, rng)
    truth = GroundTruth(truth.q, truth.profiles, truth.proportions, truth.theta,
                        truth.item_models, truth.hierarchy, memberships)
    return truth, data
