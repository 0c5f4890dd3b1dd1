"""Pass@N evaluation of head-selection policies over an outcome matrix.

Each head's correctness on a question is a fixed bit in ``Z`` (candidates
are decoded greedily), so Pass@N over ``Z`` is exact rather than sampled.
Every policy produces, per question, an ordered list of distinct heads; the
question counts as solved at ``N`` if any of the first ``N`` heads solves it.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError
from .outcomes import OutcomeMatrix
from .seeding import rng_for
from .selector import head_distances, rank_by_distance
from .trainer import TrainedModel


def pass_at_n(row, chosen, n: int) -> int:
    row = np.asarray(row)
    k = min(n, row.shape[0])
    prefix = list(chosen[:k])
    if len(prefix) < k:
        raise ValueError(f"need at least {k} chosen heads, got {len(prefix)}")
    for j in prefix:
        if not 0 <= j < row.shape[0]:
            raise IndexError(f"head index {j} out of range for {row.shape[0]} heads")
    return int(any(row[j] == 1 for j in prefix))


def greedy_head_ranking(outcomes, pool_size: int, mode: str = "coverage") -> list:
    """Rank heads greedily by how many training questions they solve.

    ``coverage`` (default) repeatedly takes the head that solves the most
    questions not yet solved by an earlier pick; ties go to the head with
    more solved questions overall, then to the lower index. ``count`` sorts
    by raw solve count.
    """
    Z = outcomes.Z if isinstance(outcomes, OutcomeMatrix) else np.asarray(outcomes)
    lh = Z.shape[1]
    if pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    if pool_size > lh:
        raise ValueError(f"pool_size {pool_size} exceeds number of heads {lh}")
    solved = Z.astype(bool)
    counts = solved.sum(axis=0)
    if mode == "count":
        return sorted(range(lh), key=lambda j: (-counts[j], j))[:pool_size]
    if mode != "coverage":
        raise ValueError(f"mode must be 'coverage' or 'count', got {mode!r}")
    covered = np.zeros(Z.shape[0], dtype=bool)
    remaining = list(range(lh))
    ranking = []
    while len(ranking) < pool_size:
        gains = {j: int(np.sum(solved[:, j] & ~covered)) for j in remaining}
        best = min(remaining, key=lambda j: (-gains[j], -counts[j], j))
        ranking.append(best)
        remaining.remove(best)
        covered |= solved[:, best]
    return ranking


@dataclass(frozen=True)
class SprintPolicy:
    model: TrainedModel
    name: str = "sprint"

    def orders(self, Z, F, seed=None) -> np.ndarray:
        return rank_by_distance(head_distances(self.model, np.atleast_2d(F)))

    def describe(self) -> dict:
        return {"kind": "sprint", "config": self.model.config.to_dict()}


@dataclass(frozen=True)
class RandomHeadsPolicy:
    """Uniform draws without replacement from ``pool``.

    ``per_question`` draws a fresh order for every question; ``per_run``
    draws one order per seed and applies it to every question.
    """

    pool: tuple
    seeds: tuple = (0,)
    mode: str = "per_question"
    name: str = "random"

    def __post_init__(self):
        if not self.pool:
            raise ValueError("random-head pool is empty")
        if len(set(self.pool)) != len(self.pool):
            raise ValueError("random-head pool has duplicates")
        if self.mode not in ("per_question", "per_run"):
            raise ValueError(f"mode must be 'per_question' or 'per_run', got {self.mode!r}")
        if not self.seeds:
            raise ValueError("at least one seed required")

    def orders(self, Z, F, seed: int) -> np.ndarray:
        rng = rng_for(seed, f"random-heads/{self.mode}")
        pool = np.asarray(self.pool)
        n = Z.shape[0]
        if self.mode == "per_run":
            return np.tile(rng.permutation(pool), (n, 1))
        return np.stack([rng.permutation(pool) for _ in range(n)])

    def describe(self) -> dict:
        return {"kind": "random_heads", "pool": list(self.pool), "seeds": list(self.seeds), "mode": self.mode}


@dataclass(frozen=True)
class FixedPolicy:
    heads: tuple
    name: str = "fixed"

    def orders(self, Z, F, seed=None) -> np.ndarray:
        if len(set(self.heads)) != len(self.heads) or not self.heads:
            raise ValueError("fixed policy needs a nonempty list of distinct heads")
        for j in self.heads:
            if not 0 <= j < Z.shape[1]:
                raise IndexError(f"fixed head {j} out of range for {Z.shape[1]} heads")
        return np.tile(np.asarray(self.heads), (Z.shape[0], 1))

    def describe(self) -> dict:
        return {"kind": "fixed", "heads": list(self.heads)}


@dataclass(frozen=True)
class OraclePolicy:
    """Solving heads first: scores 1 at every N iff some head solves the question."""

    name: str = "oracle"

    def orders(self, Z, F, seed=None) -> np.ndarray:
        return np.argsort(-Z.astype(np.int64), axis=1, kind="stable")

    def describe(self) -> dict:
        return {"kind": "oracle"}


@dataclass
class PolicyResult:
    name: str
    pass_at: dict
    stddev: dict
    per_seed: list
    seeds: list
    config: dict
    chosen: list

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "pass_at": {str(k): v for k, v in self.pass_at.items()},
            "stddev": {str(k): v for k, v in self.stddev.items()},
            "per_seed": [{str(k): v for k, v in r.items()} for r in self.per_seed],
            "seeds": self.seeds,
            "config": self.config,
            "chosen": self.chosen,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyResult":
        def ints(m):
            return {int(k): float(v) for k, v in m.items()}

        return cls(d["name"], ints(d["pass_at"]), ints(d["stddev"]),
                   [ints(r) for r in d["per_seed"]], list(d["seeds"]), d["config"], d["chosen"])


@dataclass
class EvalReport:
    n_test: int
    n_max: int
    question_ids: list
    policies: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "n_test": self.n_test,
            "n_max": self.n_max,
            "question_ids": self.question_ids,
            "policies": [p.to_dict() for p in self.policies.values()],
        }, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        results = [PolicyResult.from_dict(p) for p in d["policies"]]
        return cls(d["n_test"], d["n_max"], d["question_ids"], {r.name: r for r in results})

    def plot_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["policy", "N", "mean", "stddev"])
        for name, r in self.policies.items():
            for n in range(1, self.n_max + 1):
                w.writerow([name, n, repr(r.pass_at[n]), repr(r.stddev[n])])
        return buf.getvalue()

    def table(self) -> str:
        names = list(self.policies)
        width = max([6] + [len(n) for n in names])
        lines = ["policy".ljust(width) + "".join(f"  Pass@{n:<3d}" for n in range(1, self.n_max + 1))]
        for name in names:
            r = self.policies[name]
            lines.append(name.ljust(width) + "".join(f"  {r.pass_at[n]:7.4f}" for n in range(1, self.n_max + 1)))
        return "\n".join(lines)


def _solved_counts(Z: np.ndarray, orders: np.ndarray, n_max: int) -> dict:
    # hits[i, k]: head orders[i, k] solves question i; running "any" gives Pass@(k+1)
    hits = np.take_along_axis(Z, orders, axis=1).astype(bool)
    solved = np.logical_or.accumulate(hits, axis=1)
    return {n: int(solved[:, min(n, orders.shape[1]) - 1].sum()) for n in range(1, n_max + 1)}


def evaluate(policies, outcomes: OutcomeMatrix, F, n_max: int) -> EvalReport:
    Z = outcomes.Z
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] != Z.shape[0]:
        raise AlignmentError(f"features have shape {F.shape}, outcomes have {Z.shape[0]} rows")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    report = EvalReport(outcomes.n, n_max, list(outcomes.question_ids))
    for policy in policies:
        if policy.name in report.policies:
            raise ValueError(f"duplicate policy name {policy.name!r}")
        seeds = list(getattr(policy, "seeds", [None]))
        counts, chosen = [], None
        for seed in seeds:
            orders = policy.orders(Z, F, seed)
            counts.append(_solved_counts(Z, orders, n_max))
            if chosen is None:
                chosen = orders[:, :min(n_max, orders.shape[1])].tolist()
        n_q = Z.shape[0]
        curves = [{n: c[n] / n_q for n in c} for c in counts]
        # exact integer totals, one rounding: keeps mean <= oracle and monotone in N
        mean = {n: sum(c[n] for c in counts) / (n_q * len(counts)) for n in range(1, n_max + 1)}
        std = {n: float(np.std([c[n] for c in curves])) for n in range(1, n_max + 1)}
        report.policies[policy.name] = PolicyResult(
            policy.name, mean, std, curves, [s for s in seeds if s is not None],
            policy.describe(), chosen,
        )
    return report
