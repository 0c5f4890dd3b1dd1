"""Pick heads to prune for a question by proximity of head embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError
from .trainer import TrainedModel, encode, squared_distances


@dataclass(frozen=True)
class RankedHead:
    j: int
    layer: int
    head: int
    squared_distance: float


@dataclass(frozen=True)
class SelectionResult:
    ranked: tuple

    @property
    def chosen(self) -> RankedHead:
        return self.ranked[0]

    @property
    def j_star(self) -> int:
        return self.ranked[0].j


@dataclass(frozen=True)
class TopN:
    heads: list
    clamped: bool = False


def rank_by_distance(distances) -> np.ndarray:
    """Head indices sorted by distance; exact ties keep ascending index."""
    return np.argsort(np.asarray(distances), axis=-1, kind="stable")


def _features(model: TrainedModel, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] != model.encoder.feature_dim:
        raise DimensionError(
            f"feature vector has dimension {x.shape[-1]}, model expects {model.encoder.feature_dim}"
        )
    if not np.all(np.isfinite(x)):
        raise NumericError("features contain non-finite values")
    return x


def head_distances(model: TrainedModel, features) -> np.ndarray:
    """Squared distances to every head; ``(LH,)`` for one vector, ``(n, LH)`` for a matrix."""
    x = _features(model, features)
    Q = np.atleast_2d(encode(model.encoder, x))
    d = squared_distances(Q, model.embeddings.V)
    return d[0] if x.ndim == 1 else d


def select(model: TrainedModel, features) -> SelectionResult:
    d = head_distances(model, np.asarray(features, dtype=np.float64).reshape(-1))
    cat = model.catalog
    return SelectionResult(tuple(
        RankedHead(int(j), cat[j].layer, cat[j].head, float(d[j])) for j in rank_by_distance(d)
    ))


def select_top_n(model: TrainedModel, features, n: int) -> TopN:
    if n < 1:
        raise ValueError(f"N must be >= 1, got {n}")
    ranked = select(model, features).ranked
    return TopN([r.j for r in ranked[:n]], clamped=n > len(ranked))
