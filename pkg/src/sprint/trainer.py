"""Contrastive training of head embeddings against question embeddings.

Objective over a set of questions ``I`` (each with at least one solving head)::

    loss = mean_{i in I} [ LSE_j(-|q_i - v_j|^2) - LSE_{j in M_i+}(-|q_i - v_j|^2) ]
           - lam * sum_{j<k} s_jk |v_j - v_k|^2

with ``q_i = x_i @ W + b``. The second term is unbounded below, so after
every optimizer step each ``v_j`` is projected back onto the ball of radius
``R``.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import AlignmentError, DimensionError, DivergenceError, NumericError
from .outcomes import HeadCatalog, OutcomeMatrix, SimilarityMatrix, similarity
from .seeding import rng_for

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "sgd_momentum", "adam")


@dataclass(frozen=True)
class QuestionEncoder:
    W: np.ndarray  # (f, p)
    b: np.ndarray  # (p,)

    @property
    def feature_dim(self) -> int:
        return self.W.shape[0]

    @property
    def embedding_dim(self) -> int:
        return self.W.shape[1]


@dataclass(frozen=True)
class HeadEmbeddings:
    V: np.ndarray  # (LH, p), row j is v_j

    @property
    def num_heads(self) -> int:
        return self.V.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.01
    learning_rate: float = 1e-2
    steps: int = 2000
    batch_size: int = 64
    seed: int = 0
    radius: float = 10.0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9
    embedding_dim: int = 16
    init_std: float = 0.1
    log_every: int = 10

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not self.radius > 0:
            raise ValueError(f"radius must be > 0, got {self.radius}")
        if self.steps < 0 or self.batch_size < 1 or self.embedding_dim < 1 or self.log_every < 1:
            raise ValueError("steps >= 0, batch_size >= 1, embedding_dim >= 1 and log_every >= 1 required")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainedModel:
    encoder: QuestionEncoder
    embeddings: HeadEmbeddings
    catalog: HeadCatalog
    config: TrainConfig
    loss_trace: tuple
    n_excluded: int = 0
    greedy_ranking: tuple = field(default_factory=tuple)


def encode(encoder: QuestionEncoder, x) -> np.ndarray:
    """``q = W^T x + b``. Accepts one feature vector or an ``n x f`` matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != encoder.feature_dim:
        raise DimensionError(f"feature dimension {x.shape[-1]} does not match encoder ({encoder.feature_dim})")
    return x @ encoder.W + encoder.b


def squared_distances(Q: np.ndarray, V: np.ndarray) -> np.ndarray:
    diff = Q[:, None, :] - V[None, :, :]
    return np.einsum("ijp,ijp->ij", diff, diff)


def _masked_lse(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    # row-wise log-sum-exp over masked entries, max-subtracted; rows need >= 1 True
    shift = np.max(np.where(mask, logits, -np.inf), axis=1, keepdims=True)
    total = np.sum(np.where(mask, np.exp(logits - shift), 0.0), axis=1)
    return np.log(total) + shift[:, 0]


def _as_arrays(Z, S):
    Z = Z.Z if isinstance(Z, OutcomeMatrix) else np.asarray(Z)
    S = S.S if isinstance(S, SimilarityMatrix) else np.asarray(S, dtype=np.float64)
    return Z, S


def _check_subset(Z: np.ndarray, subset) -> np.ndarray:
    if subset is None:
        subset = np.arange(Z.shape[0])
    subset = np.asarray(subset, dtype=int)
    if subset.size == 0:
        raise ValueError("loss needs a nonempty question subset")
    empty = subset[Z[subset].sum(axis=1) == 0]
    if empty.size:
        raise ValueError(f"question(s) {empty.tolist()} have no solving head; filter them before computing the loss")
    return subset


def regularizer(V: np.ndarray, S: np.ndarray) -> float:
    """``sum_{j<k} s_jk |v_j - v_k|^2`` (positive; enters the loss with -lam)."""
    pair = squared_distances(V, V)
    iu = np.triu_indices(V.shape[0], k=1)
    return float(np.sum(S[iu] * pair[iu]))


def first_term(encoder, embeddings, Z, F, subset=None) -> float:
    Z = Z.Z if isinstance(Z, OutcomeMatrix) else np.asarray(Z)
    subset = _check_subset(Z, subset)
    logits = -squared_distances(encode(encoder, np.asarray(F)[subset]), embeddings.V)
    pos = Z[subset] == 1
    every = np.ones_like(pos)
    return float(np.mean(_masked_lse(logits, every) - _masked_lse(logits, pos)))


def loss(encoder, embeddings, Z, S, F, lam: float, subset=None) -> float:
    Z, S = _as_arrays(Z, S)
    return first_term(encoder, embeddings, Z, F, subset) - lam * regularizer(embeddings.V, S)


def loss_and_gradients(encoder, embeddings, Z, S, F, lam: float, subset=None):
    """Objective value and its gradients ``(dW, db, dV)``."""
    Z, S = _as_arrays(Z, S)
    subset = _check_subset(Z, subset)
    X = np.asarray(F, dtype=np.float64)[subset]
    V = embeddings.V
    Q = encode(encoder, X)
    diff = Q[:, None, :] - V[None, :, :]  # (m, LH, p)
    logits = -np.einsum("ijp,ijp->ij", diff, diff)
    pos = Z[subset] == 1
    lse_all = _masked_lse(logits, np.ones_like(pos))
    lse_pos = _masked_lse(logits, pos)
    m = len(subset)
    value = float(np.mean(lse_all - lse_pos)) - lam * regularizer(V, S)

    resp_all = np.exp(logits - lse_all[:, None])
    resp_pos = np.where(pos, np.exp(logits - lse_pos[:, None]), 0.0)
    # d(term_i)/d(logit_ij), and d(logit_ij)/dq_i = -2 (q_i - v_j) = -d(logit_ij)/dv_j
    g = (resp_all - resp_pos) / m
    dQ = -2.0 * np.einsum("ij,ijp->ip", g, diff)
    dV = 2.0 * np.einsum("ij,ijp->jp", g, diff)
    laplacian = np.diag(S.sum(axis=1)) - S
    dV = dV - 2.0 * lam * (laplacian @ V)
    dW = X.T @ dQ
    db = dQ.sum(axis=0)
    return value, (dW, db, dV)


def loss_gradients(encoder, embeddings, Z, S, F, lam: float, subset=None):
    return loss_and_gradients(encoder, embeddings, Z, S, F, lam, subset)[1]


def project_to_ball(V: np.ndarray, radius: float) -> np.ndarray:
    norms = np.linalg.norm(V, axis=1, keepdims=True)
    scale = np.minimum(1.0, radius / np.maximum(norms, np.finfo(float).tiny))
    return V * scale


class _Optimizer:
    def __init__(self, cfg: TrainConfig, shapes):
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]

    def step(self, params, grads):
        cfg = self.cfg
        self.t += 1
        out = []
        for k, (p, g) in enumerate(zip(params, grads)):
            if cfg.optimizer == "sgd":
                out.append(p - cfg.learning_rate * g)
            elif cfg.optimizer == "sgd_momentum":
                self.m[k] = cfg.momentum * self.m[k] + g
                out.append(p - cfg.learning_rate * self.m[k])
            else:
                self.m[k] = cfg.beta1 * self.m[k] + (1 - cfg.beta1) * g
                self.v[k] = cfg.beta2 * self.v[k] + (1 - cfg.beta2) * g * g
                m_hat = self.m[k] / (1 - cfg.beta1 ** self.t)
                v_hat = self.v[k] / (1 - cfg.beta2 ** self.t)
                out.append(p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps))
        return out


def init_params(feature_dim: int, num_heads: int, cfg: TrainConfig):
    rng = rng_for(cfg.seed, "init")
    V = rng.normal(0.0, cfg.init_std, size=(num_heads, cfg.embedding_dim))
    W = rng.normal(0.0, cfg.init_std, size=(feature_dim, cfg.embedding_dim))
    return QuestionEncoder(W, np.zeros(cfg.embedding_dim)), HeadEmbeddings(V)


def trainable_rows(Z: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.asarray(Z).sum(axis=1) > 0)


def train(outcomes: OutcomeMatrix, F, catalog: HeadCatalog, cfg: TrainConfig = TrainConfig()) -> TrainedModel:
    from .evaluation import greedy_head_ranking

    F = np.asarray(F, dtype=np.float64)
    Z = outcomes.Z
    if F.ndim != 2 or F.shape[0] != Z.shape[0]:
        raise AlignmentError(f"features have shape {F.shape}, outcomes have {Z.shape[0]} rows")
    if len(catalog) != Z.shape[1]:
        raise AlignmentError(f"catalog has {len(catalog)} heads, outcomes have {Z.shape[1]} columns")
    if not np.all(np.isfinite(F)):
        raise NumericError("question features contain non-finite values")
    rows = trainable_rows(Z)
    if rows.size == 0:
        raise AlignmentError("no trainable questions: every row of the outcome matrix is all zeros")
    n_excluded = Z.shape[0] - rows.size
    if n_excluded:
        log.info("excluding %d question(s) with no solving head", n_excluded)

    S = similarity(outcomes).S
    encoder, emb = init_params(F.shape[1], Z.shape[1], cfg)
    trace = [(0, loss(encoder, emb, Z, S, F, cfg.lam, rows))]
    params = [encoder.W, encoder.b, emb.V]
    opt = _Optimizer(cfg, [p.shape for p in params])
    shuffle = rng_for(cfg.seed, "shuffle")
    order, cursor = shuffle.permutation(rows), 0
    for step in range(1, cfg.steps + 1):
        if cursor >= order.size:
            order, cursor = shuffle.permutation(rows), 0
        batch = order[cursor:cursor + cfg.batch_size]
        cursor += cfg.batch_size
        value, grads = loss_and_gradients(
            QuestionEncoder(params[0], params[1]), HeadEmbeddings(params[2]), Z, S, F, cfg.lam, batch
        )
        if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads):
            raise DivergenceError(
                f"loss became non-finite at step {step} (value={value}); "
                f"try a smaller learning rate (current {cfg.learning_rate}) or radius"
            )
        params = opt.step(params, grads)
        params[2] = project_to_ball(params[2], cfg.radius)
        if step % cfg.log_every == 0 or step == cfg.steps:
            full = loss(QuestionEncoder(params[0], params[1]), HeadEmbeddings(params[2]), Z, S, F, cfg.lam, rows)
            if not np.isfinite(full):
                raise DivergenceError(f"full loss became non-finite at step {step}")
            trace.append((step, full))

    return TrainedModel(
        encoder=QuestionEncoder(params[0], params[1]),
        embeddings=HeadEmbeddings(params[2]),
        catalog=catalog,
        config=cfg,
        loss_trace=tuple(trace),
        n_excluded=int(n_excluded),
        greedy_ranking=tuple(greedy_head_ranking(outcomes, Z.shape[1])),
    )
