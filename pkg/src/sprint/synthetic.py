"""Clustered synthetic outcome data with a known best head per cluster.

Questions come from ``K`` Gaussian clusters in feature space. Cluster ``k``
owns one dedicated head that solves its questions with probability
``p_hi``; every other (cluster, head) combination succeeds with ``p_lo``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .outcomes import HeadCatalog, OutcomeMatrix
from .seeding import rng_for


@dataclass(frozen=True)
class SynthSpec:
    clusters: int = 4
    heads: int = 8
    feature_dim: int = 16
    p_hi: float = 0.95
    p_lo: float = 0.3
    n: int = 2000
    seed: int = 0
    layers: int = 1
    center_scale: float = 3.0
    spread: float = 1.0
    p_base: float | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not 0 <= self.p_lo < self.p_hi <= 1:
            raise ValueError(f"need 0 <= p_lo < p_hi <= 1, got p_lo={self.p_lo}, p_hi={self.p_hi}")
        if not 1 <= self.clusters <= self.heads:
            raise ValueError(f"need 1 <= clusters <= heads, got K={self.clusters}, LH={self.heads}")
        if self.feature_dim < 1 or self.layers < 1 or self.heads % self.layers:
            raise ValueError("feature_dim >= 1 and heads divisible by layers required")
        if self.p_base is not None and not 0 <= self.p_base <= 1:
            raise ValueError(f"p_base must lie in [0, 1], got {self.p_base}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SynthTruth:
    cluster_of: np.ndarray      # (n,) cluster index per question
    dedicated_head: np.ndarray  # (K,) head index owned by each cluster
    centers: np.ndarray         # (K, f)

    def hit_probabilities(self, spec: SynthSpec) -> np.ndarray:
        """``(K, LH)`` success probability of each head on each cluster."""
        probs = np.full((spec.clusters, spec.heads), spec.p_lo)
        probs[np.arange(spec.clusters), self.dedicated_head] = spec.p_hi
        return probs


def generate_synthetic(spec: SynthSpec):
    """Returns ``(OutcomeMatrix, features, HeadCatalog, SynthTruth)``."""
    rng = rng_for(spec.seed, "synth")
    dedicated = rng.permutation(spec.heads)[: spec.clusters]
    centers = rng.normal(0.0, spec.center_scale, size=(spec.clusters, spec.feature_dim))
    cluster_of = rng.integers(0, spec.clusters, size=spec.n)
    features = centers[cluster_of] + rng.normal(0.0, spec.spread, size=(spec.n, spec.feature_dim))
    truth = SynthTruth(cluster_of, dedicated, centers)
    probs = truth.hit_probabilities(spec)[cluster_of]
    Z = (rng.random((spec.n, spec.heads)) < probs).astype(np.int8)
    baseline = None
    if spec.p_base is not None:
        baseline = (rng.random(spec.n) < spec.p_base).astype(np.int8)
    width = len(str(spec.n - 1))
    ids = tuple(f"q{i:0{width}d}" for i in range(spec.n))
    outcomes = OutcomeMatrix(Z, ids, None, baseline)
    catalog = HeadCatalog.grid(range(spec.layers), spec.heads // spec.layers)
    return outcomes, features, catalog, truth


def split_indices(n: int, test_fraction: float, seed: int):
    """Seeded train/test split; returns sorted index arrays ``(train, test)``."""
    if not 0 <= test_fraction < 1:
        raise ValueError(f"test_fraction must lie in [0, 1), got {test_fraction}")
    perm = rng_for(seed, "split").permutation(n)
    n_test = int(round(n * test_fraction))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])
