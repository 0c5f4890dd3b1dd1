"""Binary outcome matrices for pruned-head model variants.

Column ``j`` of ``Z`` records, for every question, whether the variant with
head ``j`` pruned answered correctly. The optional baseline vector holds the
unpruned model's correctness and is never mixed into ``Z``.

CSV layout (UTF-8, LF)::

    question_id[,subject][,base],L5H0,L5H1,...

Head columns are named ``L{layer}H{head}``; their order defines the head
index ``j``.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AlignmentError, ArtifactIOError, ParseError

HEAD_COLUMN = re.compile(r"^L(\d+)H(\d+)$")


@dataclass(frozen=True)
class HeadEntry:
    j: int
    layer: int
    head: int

    @property
    def name(self) -> str:
        return f"L{self.layer}H{self.head}"


@dataclass(frozen=True)
class HeadCatalog:
    entries: tuple

    def __post_init__(self):
        entries = tuple(e if isinstance(e, HeadEntry) else HeadEntry(*e) for e in self.entries)
        object.__setattr__(self, "entries", entries)
        if not entries:
            raise ParseError("head catalog is empty")
        for pos, e in enumerate(entries):
            if e.j != pos:
                raise ParseError(f"catalog entry at position {pos} has index j={e.j}")
        pairs = [(e.layer, e.head) for e in entries]
        if len(set(pairs)) != len(pairs):
            raise ParseError("catalog contains duplicate (layer, head) pairs")
        if len(pairs) != self.num_layers * self.heads_per_layer:
            raise ParseError(
                f"catalog has {len(pairs)} entries, expected L*H = "
                f"{self.num_layers}*{self.heads_per_layer}"
            )

    @classmethod
    def grid(cls, layers, num_heads: int) -> "HeadCatalog":
        pairs = [(l, h) for l in layers for h in range(num_heads)]
        return cls(tuple(HeadEntry(j, l, h) for j, (l, h) in enumerate(pairs)))

    @classmethod
    def from_names(cls, names) -> "HeadCatalog":
        entries = []
        for j, name in enumerate(names):
            m = HEAD_COLUMN.match(name)
            if m is None:
                raise ParseError(f"column {name!r} is not of the form L{{layer}}H{{head}}")
            entries.append(HeadEntry(j, int(m.group(1)), int(m.group(2))))
        return cls(tuple(entries))

    @property
    def layers(self) -> list:
        return sorted({e.layer for e in self.entries})

    @property
    def num_layers(self) -> int:
        return len({e.layer for e in self.entries})

    @property
    def heads_per_layer(self) -> int:
        return len({e.head for e in self.entries})

    @property
    def names(self) -> list:
        return [e.name for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, j: int) -> HeadEntry:
        return self.entries[j]

    def to_json(self) -> list:
        return [{"j": e.j, "layer": e.layer, "head": e.head} for e in self.entries]

    @classmethod
    def from_json(cls, data) -> "HeadCatalog":
        try:
            return cls(tuple(HeadEntry(int(d["j"]), int(d["layer"]), int(d["head"])) for d in data))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed head catalog: {exc}") from exc


def save_catalog(catalog: HeadCatalog, path) -> None:
    Path(path).write_text(json.dumps(catalog.to_json()) + "\n", encoding="utf-8")


def load_catalog(path) -> HeadCatalog:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ArtifactIOError(str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return HeadCatalog.from_json(data)


@dataclass(frozen=True)
class OutcomeMatrix:
    Z: np.ndarray
    question_ids: tuple
    subjects: tuple | None = None
    baseline: np.ndarray | None = None

    def __post_init__(self):
        Z = np.asarray(self.Z)
        if Z.ndim != 2 or Z.shape[0] < 1 or Z.shape[1] < 1:
            raise AlignmentError(f"outcome matrix must be n x LH with n, LH >= 1, got shape {Z.shape}")
        if not np.isin(Z, (0, 1)).all():
            raise ParseError("outcome matrix has non-binary entries")
        object.__setattr__(self, "Z", Z.astype(np.int8))
        ids = tuple(str(q) for q in self.question_ids)
        object.__setattr__(self, "question_ids", ids)
        if len(ids) != Z.shape[0]:
            raise AlignmentError(f"{len(ids)} question ids for {Z.shape[0]} rows")
        if len(set(ids)) != len(ids):
            raise ParseError("question ids are not unique")
        if self.subjects is not None:
            subjects = tuple(str(s) for s in self.subjects)
            if len(subjects) != len(ids):
                raise AlignmentError(f"{len(subjects)} subject labels for {len(ids)} rows")
            object.__setattr__(self, "subjects", subjects)
        if self.baseline is not None:
            base = np.asarray(self.baseline)
            if base.shape != (len(ids),):
                raise AlignmentError(f"baseline has shape {base.shape}, expected ({len(ids)},)")
            if not np.isin(base, (0, 1)).all():
                raise ParseError("baseline has non-binary entries")
            object.__setattr__(self, "baseline", base.astype(np.int8))

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def num_heads(self) -> int:
        return self.Z.shape[1]

    def subset(self, rows) -> "OutcomeMatrix":
        rows = np.asarray(rows, dtype=int)
        return OutcomeMatrix(
            self.Z[rows],
            tuple(self.question_ids[i] for i in rows),
            None if self.subjects is None else tuple(self.subjects[i] for i in rows),
            None if self.baseline is None else self.baseline[rows],
        )


def load_outcomes(path, catalog: HeadCatalog | None = None):
    """Read an outcome CSV; returns ``(OutcomeMatrix, HeadCatalog)``.

    If ``catalog`` is given, the CSV's head columns must match it exactly.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ArtifactIOError(str(exc)) from exc
    return parse_outcomes(text, catalog, source=str(path))


def parse_outcomes(text: str, catalog: HeadCatalog | None = None, source: str = "<csv>"):
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r]
    if not rows:
        raise ParseError(f"{source}: empty file")
    header, body = [h.strip() for h in rows[0]], rows[1:]
    if not header or header[0] != "question_id":
        raise ParseError(f"{source}: first column must be 'question_id'")
    pos = 1
    subject_col = base_col = None
    if pos < len(header) and header[pos] == "subject":
        subject_col, pos = pos, pos + 1
    if pos < len(header) and header[pos] == "base":
        base_col, pos = pos, pos + 1
    head_names = header[pos:]
    if not head_names:
        raise ParseError(f"{source}: no head columns")
    csv_catalog = HeadCatalog.from_names(head_names)
    if catalog is not None and csv_catalog.to_json() != catalog.to_json():
        raise ParseError(f"{source}: head columns do not match the supplied catalog")
    if not body:
        raise ParseError(f"{source}: no question rows")

    def bit(cell: str, r: int, c: int) -> int:
        cell = cell.strip()
        if cell not in ("0", "1"):
            raise ParseError(f"{source}: non-binary value {cell!r} at row {r}, column {header[c]!r}")
        return int(cell)

    ids, subjects, base, Z = [], [], [], []
    seen = set()
    for r, row in enumerate(body, start=1):
        if len(row) != len(header):
            raise ParseError(f"{source}: row {r} has {len(row)} cells, header has {len(header)}")
        qid = row[0].strip()
        if not qid:
            raise ParseError(f"{source}: missing question id at row {r}")
        if qid in seen:
            raise ParseError(f"{source}: duplicate question id {qid!r} at row {r}")
        seen.add(qid)
        ids.append(qid)
        if subject_col is not None:
            subjects.append(row[subject_col].strip())
        if base_col is not None:
            base.append(bit(row[base_col], r, base_col))
        Z.append([bit(row[c], r, c) for c in range(pos, len(header))])
    outcomes = OutcomeMatrix(
        np.array(Z, dtype=np.int8),
        tuple(ids),
        tuple(subjects) if subject_col is not None else None,
        np.array(base, dtype=np.int8) if base_col is not None else None,
    )
    return outcomes, csv_catalog


def format_outcomes(outcomes: OutcomeMatrix, catalog: HeadCatalog) -> str:
    if len(catalog) != outcomes.num_heads:
        raise AlignmentError(f"catalog has {len(catalog)} heads, matrix has {outcomes.num_heads}")
    header = ["question_id"]
    if outcomes.subjects is not None:
        header.append("subject")
    if outcomes.baseline is not None:
        header.append("base")
    header += catalog.names
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for i, qid in enumerate(outcomes.question_ids):
        row = [qid]
        if outcomes.subjects is not None:
            row.append(outcomes.subjects[i])
        if outcomes.baseline is not None:
            row.append(int(outcomes.baseline[i]))
        row += [int(v) for v in outcomes.Z[i]]
        writer.writerow(row)
    return buf.getvalue()


def save_outcomes(outcomes: OutcomeMatrix, catalog: HeadCatalog, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_outcomes(outcomes, catalog))


@dataclass(frozen=True)
class SimilarityMatrix:
    """Head agreement ``s_jk`` kept as integer counts over ``n`` questions."""

    counts: np.ndarray
    n: int

    @property
    def S(self) -> np.ndarray:
        return self.counts / self.n


def similarity(outcomes) -> SimilarityMatrix:
    Z = outcomes.Z if isinstance(outcomes, OutcomeMatrix) else np.asarray(outcomes)
    Z = Z.astype(np.int64)
    n = Z.shape[0]
    if n < 1:
        raise AlignmentError("similarity needs at least one question")
    agree = Z.T @ Z + (1 - Z).T @ (1 - Z)
    return SimilarityMatrix(agree, n)


def partition_sets(outcomes, i: int):
    """Indices of heads that solve question ``i`` and those that do not."""
    Z = outcomes.Z if isinstance(outcomes, OutcomeMatrix) else np.asarray(outcomes)
    if not 0 <= i < Z.shape[0]:
        raise IndexError(f"question index {i} out of range for n={Z.shape[0]}")
    row = Z[i]
    return frozenset(np.flatnonzero(row == 1).tolist()), frozenset(np.flatnonzero(row == 0).tolist())


@dataclass
class GroupGain:
    group: str
    n: int
    baseline_correct: int
    head_correct: np.ndarray
    best_head: int
    layer_best: dict = field(default_factory=dict)

    @property
    def baseline_accuracy(self) -> float:
        return self.baseline_correct / self.n

    @property
    def head_accuracy(self) -> np.ndarray:
        return self.head_correct / self.n

    @property
    def best_accuracy(self) -> float:
        return int(self.head_correct[self.best_head]) / self.n

    @property
    def gain(self) -> float:
        return (int(self.head_correct[self.best_head]) - self.baseline_correct) / self.n

    def layer_gain(self, layer: int) -> float:
        return (self.layer_best[layer][1] - self.baseline_correct) / self.n


@dataclass
class GainReport:
    groups: list
    catalog: HeadCatalog

    def summary_rows(self) -> list:
        rows = []
        for g in self.groups:
            e = self.catalog[g.best_head]
            rows.append({
                "group": g.group, "n": g.n,
                "baseline_accuracy": g.baseline_accuracy,
                "best_accuracy": g.best_accuracy,
                "best_layer": e.layer, "best_head": e.head,
                "gain": g.gain,
            })
        return rows

    def violin_rows(self) -> list:
        """One row per (group, layer): best head in that layer minus baseline."""
        rows = []
        for g in self.groups:
            for layer in sorted(g.layer_best):
                j, _ = g.layer_best[layer]
                rows.append({
                    "group": g.group, "layer": layer,
                    "best_head": self.catalog[j].head,
                    "best_accuracy": int(g.head_correct[j]) / g.n,
                    "baseline_accuracy": g.baseline_accuracy,
                    "gain": g.layer_gain(layer),
                })
        return rows


def gain_stats(outcomes: OutcomeMatrix, catalog: HeadCatalog | None = None, group_by: str = "subject") -> GainReport:
    """Best pruned-head accuracy minus unpruned accuracy, per group.

    ``group_by="subject"`` groups by subject label (falling back to a single
    ``"all"`` group when the matrix has no subjects); ``"none"`` always uses
    one group. Ties for the best head go to the lowest index.
    """
    if outcomes.baseline is None:
        raise AlignmentError(
            "gain statistics need the unpruned model's correctness: add a 'base' column "
            "(0/1 per question) after question_id/subject in the outcome CSV"
        )
    if group_by not in ("subject", "none"):
        raise ValueError(f"group_by must be 'subject' or 'none', got {group_by!r}")
    if catalog is None:
        catalog = HeadCatalog.grid([0], outcomes.num_heads)
    if len(catalog) != outcomes.num_heads:
        raise AlignmentError(f"catalog has {len(catalog)} heads, matrix has {outcomes.num_heads}")

    if group_by == "none" or outcomes.subjects is None:
        labels = ["all"] * outcomes.n
    else:
        labels = list(outcomes.subjects)
    groups = []
    for label in sorted(set(labels)):
        rows = np.array([i for i, s in enumerate(labels) if s == label])
        head_correct = outcomes.Z[rows].astype(np.int64).sum(axis=0)
        layer_best = {}
        for layer in catalog.layers:
            js = [e.j for e in catalog.entries if e.layer == layer]
            j = max(js, key=lambda k: (head_correct[k], -k))
            layer_best[layer] = (j, int(head_correct[j]))
        groups.append(GroupGain(
            group=label, n=len(rows),
            baseline_correct=int(outcomes.baseline[rows].sum()),
            head_correct=head_correct,
            best_head=int(np.argmax(head_correct)),
            layer_best=layer_best,
        ))
    return GainReport(groups, catalog)
