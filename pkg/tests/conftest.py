import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sprint.outcomes import similarity  # noqa: E402
from sprint.trainer import HeadEmbeddings, QuestionEncoder  # noqa: E402


def loss_instance(seed, n=8, lh=6, p=4, f=5, scale=0.5):
    """Random objective instance; every row has at least one solving head."""
    rng = np.random.default_rng(seed)
    Z = (rng.random((n, lh)) < 0.4).astype(np.int8)
    Z[np.arange(n), rng.integers(0, lh, size=n)] = 1
    S = similarity(Z).S
    F = rng.normal(size=(n, f))
    enc = QuestionEncoder(rng.normal(scale=scale, size=(f, p)), rng.normal(scale=scale, size=p))
    emb = HeadEmbeddings(rng.normal(scale=scale, size=(lh, p)))
    return enc, emb, Z, S, F


def grad_rel_error(analytic, numeric, floor=1e-3):
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero partials from
    turning finite-difference roundoff into huge ratios."""
    a, nmr = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - nmr) / np.maximum(np.maximum(np.abs(a), np.abs(nmr)), floor)


@pytest.fixture
def tiny_csv(tmp_path):
    path = tmp_path / "tiny.csv"
    path.write_text("question_id,base,L0H0,L0H1\nq1,1,1,0\nq2,0,0,1\nq3,0,1,1\n", encoding="utf-8")
    return path


_verdicts = {}


@pytest.fixture
def verdict():
    def record(criterion, ok, detail):
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        _verdicts[criterion] = line
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_verdicts):
            terminalreporter.write_line(_verdicts[k])
