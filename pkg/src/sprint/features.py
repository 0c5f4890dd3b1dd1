"""Question feature files: JSONL, one ``{"id": ..., "features": [...]}`` per line."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import AlignmentError, ArtifactIOError, NumericError, ParseError


def load_features(path):
    """Returns ``(ids, F)`` with ``F`` an ``n x f`` float64 matrix."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ArtifactIOError(str(exc)) from exc
    ids, rows = [], []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            qid, vec = str(obj["id"]), [float(v) for v in obj["features"]]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: bad feature record ({exc})") from exc
        if rows and len(vec) != len(rows[0]):
            raise ParseError(f"{path}:{lineno}: {len(vec)} features, earlier rows have {len(rows[0])}")
        ids.append(qid)
        rows.append(vec)
    if not rows:
        raise ParseError(f"{path}: no feature records")
    if len(set(ids)) != len(ids):
        raise ParseError(f"{path}: duplicate question ids")
    F = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(F)):
        raise NumericError(f"{path}: non-finite feature values")
    return ids, F


def save_features(path, ids, F) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for qid, row in zip(ids, np.asarray(F, dtype=np.float64)):
            fh.write(json.dumps({"id": qid, "features": [float(v) for v in row]}) + "\n")


def align_features(question_ids, feature_ids, F) -> np.ndarray:
    """Reorder feature rows to follow ``question_ids``."""
    if len(question_ids) != len(feature_ids):
        raise AlignmentError(
            f"outcomes have {len(question_ids)} questions but features have {len(feature_ids)} rows"
        )
    index = {qid: i for i, qid in enumerate(feature_ids)}
    missing = [q for q in question_ids if q not in index]
    if missing:
        raise AlignmentError(f"no features for question id(s) {missing[:5]}")
    return np.asarray(F)[[index[q] for q in question_ids]]
