"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test records a PASS/FAIL line through the ``verdict`` fixture; the
lines are printed together at the end of the run (see conftest.py).
"""

import math
import time
from fractions import Fraction
from statistics import NormalDist

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import grad_rel_error, loss_instance
from oracles import brute_similarity_counts, central_differences
from sprint.attention import AttentionConfig, AttentionWeights, HeadMask, mha_forward, mha_forward_zeroed_proj
from sprint.cli import main
from sprint.evaluation import FixedPolicy, OraclePolicy, RandomHeadsPolicy, SprintPolicy, evaluate
from sprint.outcomes import HeadCatalog, OutcomeMatrix, gain_stats, parse_outcomes, similarity
from sprint.synthetic import SynthSpec, generate_synthetic, split_indices
from sprint.trainer import (
    HeadEmbeddings,
    QuestionEncoder,
    TrainConfig,
    TrainedModel,
    first_term,
    loss,
    loss_and_gradients,
    train,
)


def binomial_band(p0, trials, level=0.99):
    half = NormalDist().inv_cdf(0.5 + level / 2) * math.sqrt(p0 * (1 - p0) / trials)
    return p0 - half, p0 + half


def synthetic_run(spec, train_seeds, random_seeds=30, n_max=4):
    outcomes, F, catalog, _ = generate_synthetic(spec)
    tr, te = split_indices(spec.n, 0.2, spec.seed)
    test = outcomes.subset(te)
    reports = []
    for seed in train_seeds:
        model = train(outcomes.subset(tr), F[tr], catalog, TrainConfig(embedding_dim=8, seed=seed))
        policies = [SprintPolicy(model), RandomHeadsPolicy(tuple(range(spec.heads)), tuple(range(random_seeds))),
                    OraclePolicy()]
        reports.append(evaluate(policies, test, F[te], n_max))
    return reports, test.n


def curve_ok(report):
    oracle = report.policies["oracle"].pass_at
    for r in report.policies.values():
        seq = [r.pass_at[n] for n in range(1, report.n_max + 1)]
        if any(b < a for a, b in zip(seq, seq[1:])) or any(r.pass_at[n] > oracle[n] for n in oracle):
            return False
    return True


# -- 1 ------------------------------------------------------------------------

def test_criterion_1_pruning_equivalence(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(20240101)
    combos = [(H, d, T) for H in (1, 2, 4, 8) for d in (2, 8) for T in (1, 5)]
    worst = 0.0
    for k in range(100):
        H, d, T = combos[k % len(combos)]
        cfg = AttentionConfig.from_heads(H, d, T)
        w = AttentionWeights.random(cfg, rng, bias=bool(k % 2))
        x = rng.standard_normal((T, cfg.model_dim))
        for h in range(H):
            mask = HeadMask.heads(H, [h])
            diff = mha_forward(x, w, cfg, mask) - mha_forward_zeroed_proj(x, w, cfg, mask)
            worst = max(worst, float(np.max(np.abs(diff))))
    elapsed = time.perf_counter() - start
    verdict(1, worst <= 1e-12 and elapsed < 5, f"max abs diff {worst:.2e} (tol 1e-12), {elapsed:.2f}s (< 5s)")
    assert worst <= 1e-12
    assert elapsed < 5


# -- 2 ------------------------------------------------------------------------

def test_criterion_2_gradient_fidelity(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for k in range(50):
        n, lh, p, f = int(rng.integers(1, 11)), int(rng.integers(1, 9)), int(rng.integers(1, 7)), int(rng.integers(1, 7))
        lam = (0.0, 0.1, 1.0)[k % 3]
        enc, emb, Z, S, F = loss_instance(1000 + k, n=n, lh=lh, p=p, f=f)

        def fn(W, b, V):
            return loss(QuestionEncoder(W, b), HeadEmbeddings(V), Z, S, F, lam)

        _, analytic = loss_and_gradients(enc, emb, Z, S, F, lam)
        numeric = central_differences(fn, [enc.W, enc.b, emb.V], h=1e-6)
        for a, nm in zip(analytic, numeric):
            worst = max(worst, float(np.max(grad_rel_error(a, nm))))
    elapsed = time.perf_counter() - start
    verdict(2, worst <= 1e-5 and elapsed < 30, f"max rel error {worst:.2e} (tol 1e-5), {elapsed:.2f}s (< 30s)")
    assert worst <= 1e-5
    assert elapsed < 30


# -- 3 ------------------------------------------------------------------------

def test_criterion_3_loss_anchors(verdict):
    eye = QuestionEncoder(np.eye(2), np.zeros(2))
    # one positive and one negative head at equal distance from q
    sym = loss(eye, HeadEmbeddings(np.array([[1.0, 0.0], [-1.0, 0.0]])), [[1, 0]], np.eye(2), [[0.0, 2.5]], 0.0)
    sym_ok = abs(sym - math.log(2)) <= 1e-12

    enc, emb, _, _, F = loss_instance(5, n=6, lh=5)
    all_pos = np.ones((6, 5), dtype=np.int8)
    zero_ok = first_term(enc, emb, all_pos, F) == 0.0

    rng = np.random.default_rng(5)
    S = similarity((rng.random((9, 5)) < 0.5).astype(np.int8)).S
    V = emb.V
    expected = -0.7 * sum(S[j, k] * float(np.sum((V[j] - V[k]) ** 2)) for j in range(5) for k in range(j + 1, 5))
    reg = loss(enc, emb, all_pos, S, F, 0.7)
    reg_ok = abs(reg - expected) <= 1e-12

    ok = sym_ok and zero_ok and reg_ok
    verdict(3, ok, f"ln2 err {abs(sym - math.log(2)):.1e}, all-positive first term exactly 0: {zero_ok}, "
                   f"regularizer-only err {abs(reg - expected):.1e}")
    assert sym_ok and zero_ok and reg_ok


# -- 4 ------------------------------------------------------------------------

def test_criterion_4_similarity_oracle(verdict):
    rng = np.random.default_rng(4)
    mismatches = 0
    for k in range(100):
        n, lh = int(rng.integers(1, 51)), int(rng.integers(1, 21))
        if k == 0:
            n, lh = 50, 20
        Z = (rng.random((n, lh)) < rng.random()).astype(np.int8)
        sim = similarity(Z)
        if sim.counts.tolist() != brute_similarity_counts(Z.tolist()) or sim.n != n:
            mismatches += 1
    verdict(4, mismatches == 0, f"{mismatches}/100 instances differ from brute-force counts")
    assert mismatches == 0


# -- 5 ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def deterministic_run():
    start = time.perf_counter()
    spec = SynthSpec(clusters=4, heads=8, feature_dim=16, p_hi=1.0, p_lo=0.0, n=2000, seed=0)
    (report,), n_test = synthetic_run(spec, train_seeds=[0])
    return spec, report, n_test, time.perf_counter() - start


def test_criterion_5_synthetic_recovery(verdict, deterministic_run):
    spec, report, n_test, elapsed = deterministic_run
    sprint, rand = report.policies["sprint"].pass_at, report.policies["random"].pass_at
    lo, hi = binomial_band(spec.clusters / spec.heads, n_test * 30)
    sprint_ok = sprint[1] >= 0.95
    band_ok = lo <= rand[1] <= hi
    dominance_ok = all(sprint[n] >= rand[n] for n in range(1, 5))
    ok = sprint_ok and band_ok and dominance_ok and elapsed < 120
    verdict(5, ok, f"SPRINT Pass@1 {sprint[1]:.4f} (>= 0.95), random Pass@1 {rand[1]:.4f} vs K/LH band "
                   f"[{lo:.4f}, {hi:.4f}], SPRINT >= random at N=1..4: {dominance_ok}, {elapsed:.1f}s (< 120s)")
    assert sprint_ok
    assert dominance_ok
    assert elapsed < 120
    assert band_ok, (f"random Pass@1 {rand[1]:.4f} outside the 99% band [{lo:.4f}, {hi:.4f}] around K/LH = 0.5; "
                     "with one solving head per question the expected value is 1/LH")


def test_criterion_5_companion_random_band_at_one_over_lh(deterministic_run):
    # With p_hi=1, p_lo=0 each question has exactly one solving head, so a
    # uniform draw of one head out of LH succeeds with probability 1/LH.
    spec, report, n_test, _ = deterministic_run
    lo, hi = binomial_band(1 / spec.heads, n_test * 30)
    assert lo <= report.policies["random"].pass_at[1] <= hi
    for n in range(1, 5):
        lo, hi = binomial_band(n / spec.heads, n_test * 30)
        assert lo <= report.policies["random"].pass_at[n] <= hi
    assert curve_ok(report)


# -- 6 ------------------------------------------------------------------------

def test_criterion_6_noisy_synthetic(verdict):
    start = time.perf_counter()
    spec = SynthSpec(clusters=4, heads=8, feature_dim=16, p_hi=0.95, p_lo=0.3, n=2000, seed=0)
    reports, _ = synthetic_run(spec, train_seeds=range(10))
    margins = [r.policies["sprint"].pass_at[1] - r.policies["random"].pass_at[1] for r in reports]
    margin = float(np.mean(margins))
    elapsed = time.perf_counter() - start
    ok = margin >= 0.15 and elapsed < 300 and all(curve_ok(r) for r in reports)
    verdict(6, ok, f"mean SPRINT - random Pass@1 = {100 * margin:.1f} pp over 10 seeds (>= 15 pp), {elapsed:.1f}s (< 300s)")
    assert margin >= 0.15
    assert elapsed < 300
    assert all(curve_ok(r) for r in reports)


# -- 7 ------------------------------------------------------------------------

_checked = {"cases": 0, "bad": 0}


@settings(max_examples=150, deadline=None)
@given(arrays(np.int8, st.tuples(st.integers(1, 25), st.integers(1, 10)), elements=st.integers(0, 1)),
       st.integers(0, 2**32 - 1), st.integers(1, 12))
def _monotone_oracle_property(Z, seed, n_max):
    rng = np.random.default_rng(seed)
    n, lh = Z.shape
    F = rng.normal(size=(n, 3))
    model = TrainedModel(QuestionEncoder(rng.normal(size=(3, 2)), rng.normal(size=2)),
                         HeadEmbeddings(rng.normal(size=(lh, 2))), HeadCatalog.grid([0], lh), TrainConfig(), [])
    pool = tuple(int(j) for j in rng.permutation(lh)[: rng.integers(1, lh + 1)])
    policies = [SprintPolicy(model), RandomHeadsPolicy(pool, (0, 1, 2)),
                RandomHeadsPolicy(pool, (3, 4), mode="per_run", name="random_run"),
                FixedPolicy(tuple(int(j) for j in rng.permutation(lh))), OraclePolicy()]
    outcomes = OutcomeMatrix(Z, tuple(f"q{i}" for i in range(n)))
    report = evaluate(policies, outcomes, F, n_max)
    _checked["cases"] += 1
    if not curve_ok(report):
        _checked["bad"] += 1
    assert curve_ok(report)
    assert report.policies["oracle"].pass_at[1] == float(np.mean(Z.any(axis=1)))


def test_criterion_7_monotone_and_oracle_dominance(verdict):
    ok = False
    try:
        _monotone_oracle_property()
        ok = True
    finally:
        verdict(7, ok, f"{_checked['cases']} random (Z, policy set) cases, {_checked['bad']} violations; "
                       "synthetic reports checked in criteria 5 and 6")


# -- 8 ------------------------------------------------------------------------

def test_criterion_8_determinism(verdict, tmp_path):
    data = tmp_path / "data"
    assert main(["synth", "--n", "400", "--out-dir", str(data)]) == 0
    model, rep = tmp_path / "m.sprint", tmp_path / "rep"
    assert main(["train", "--outcomes", str(data / "train.csv"), "--features", str(data / "train.jsonl"),
                 "--output", str(model), "--steps", "300"]) == 0
    assert main(["eval", "--model", str(model), "--outcomes", str(data / "test.csv"),
                 "--features", str(data / "test.jsonl"), "--policies", "sprint,random,oracle,greedy",
                 "--output", str(rep)]) == 0
    files = [model, tmp_path / "rep.json", tmp_path / "rep.csv"]
    first = [p.read_bytes() for p in files]
    for p in files:
        p.unlink()
    # replay both steps from the manifests they wrote
    assert main(["train", "--config", str(tmp_path / "m.sprint.manifest.json")]) == 0
    assert main(["eval", "--config", str(tmp_path / "rep.manifest.json")]) == 0
    same = [p.read_bytes() == b for p, b in zip(files, first)]
    verdict(8, all(same), f"byte-identical after replay: model {same[0]}, report json {same[1]}, report csv {same[2]}")
    assert all(same)


# -- 9 ------------------------------------------------------------------------

FIXTURE_A = """question_id,subject,base,L0H0,L0H1,L1H0,L1H1
a1,algebra,1,1,0,1,1
a2,algebra,0,1,0,0,1
a3,algebra,0,1,1,0,0
a4,algebra,1,0,1,1,1
a5,algebra,0,0,0,0,1
g1,geometry,1,1,1,0,0
g2,geometry,1,0,1,0,1
g3,geometry,0,0,0,0,0
g4,geometry,1,1,0,1,0
g5,geometry,0,0,1,0,0
"""

# counts per head (L0H0, L0H1, L1H0, L1H1):
#   algebra  3,2,2,4  baseline 2 -> best L1H1 4/5, gain 2/5
#   geometry 2,3,1,1  baseline 3 -> best L0H1 3/5, gain 0
#   layer 1 of algebra: best L1H1 4/5 -> 2/5; layer 0: best L0H0 3/5 -> 1/5

FIXTURE_B = """question_id,subject,base,L0H0,L0H1
p1,prealgebra,1,0,0
p2,prealgebra,1,0,1
p3,prealgebra,1,1,0
p4,prealgebra,1,1,1
n1,number theory,0,1,0
n2,number theory,0,1,0
n3,number theory,0,0,0
n4,number theory,1,1,1
n5,number theory,0,0,0
n6,number theory,0,1,1
"""

# prealgebra: baseline 4/4, heads 2,2 -> best L0H0 2/4, gain -1/2 (pruning hurts)
# number theory: baseline 1/6, heads 4,2 -> best L0H0 4/6, gain 1/2


def test_criterion_9_gain_stats(verdict):
    expected = {
        "algebra": (Fraction(2, 5), 1, 1), "geometry": (Fraction(0), 0, 1),
        "prealgebra": (Fraction(-1, 2), 0, 0), "number theory": (Fraction(1, 2), 0, 0),
    }
    got = {}
    for text in (FIXTURE_A, FIXTURE_B):
        outcomes, catalog = parse_outcomes(text)
        report = gain_stats(outcomes, catalog)
        for row in report.summary_rows():
            got[row["group"]] = (row["gain"], row["best_layer"], row["best_head"])
        for g in report.groups:
            # best pruned accuracy minus no-prune accuracy, as exact fractions
            best = Fraction(int(g.head_correct.max()), g.n)
            assert g.gain == float(best - Fraction(g.baseline_correct, g.n))
        if text is FIXTURE_A:
            alg = report.groups[0]
            assert alg.layer_gain(0) == float(Fraction(1, 5)) and alg.layer_gain(1) == float(Fraction(2, 5))
    ok = got == {k: (float(v[0]), v[1], v[2]) for k, v in expected.items()}
    verdict(9, ok, "per-subject gains " + ", ".join(f"{k}={v[0]:+.4f}" for k, v in sorted(got.items())))
    assert ok
