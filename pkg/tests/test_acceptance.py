"""Acceptance criteria, one test per criterion.

Run on its own with ``python tests/test_acceptance.py`` (or through pytest);
the terminal summary lists one PASS/FAIL line per criterion.
"""
import filecmp
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from mulprobe.arith import Operand, Problem, compute_load, make_rng
from mulprobe.artifacts import read_csv, read_jsonl
from mulprobe.backend import MockBackend, ScoringContext
from mulprobe.cli import main
from mulprobe.cost import label_target
from mulprobe.geometry import LowRankUpdate, effective_update, materialized_cosine, streamed_cosine
from mulprobe.probe import NEUTRAL, PROBE_HEURISTICS, SUPPORT_CLASSES, TemplateBank, probe_problem, support_vector
from mulprobe.stats import AccuracyRecord, fit_error_rate, fit_logistic_xy
from mulprobe.traces import (
    build_trace_dataset,
    candidate_corruptions,
    gen_contrastive_pair,
    gen_trace,
    step_template,
    verify_step,
    verify_trace,
)
from mulprobe.words import parse_words, to_words

GOLDEN = Path(__file__).parent / "golden"


def _norm(text):
    return [" ".join(line.split()) for line in text.strip().splitlines() if line.strip()]


def test_c01_load_metric():
    for (a, b), want in (((47, 36), 16), ((1632178320, 5683473970), 360)):
        t0 = time.perf_counter()
        got = compute_load(a, b).load_C
        elapsed = time.perf_counter() - t0
        assert got == want
        assert elapsed < 1e-3


def test_c02_load_identities():
    rng = np.random.default_rng(20240601)
    violations = 0
    for _ in range(10_000):
        ops = []
        for _ in range(2):
            nd = int(rng.integers(1, 13))
            lo = 10 ** (nd - 1) if nd > 1 else 0
            ops.append(int(rng.integers(lo, 10 ** nd)))
        A, B = Operand.of(ops[0]), Operand.of(ops[1])
        n, m, s, t = A.n_digits, B.n_digits, A.n_nonzero, B.n_nonzero
        C = compute_load(*ops).load_C
        violations += C != n * s + n * t + m * s + m * t
        violations += 4 * s * t > C
    assert violations == 0


def test_c03_hds_labels():
    rows = [(49, 51, "RC"), (99, 101, "RC"), (47, 60, "DD"), (37, 100, "DD"), (87, 96, "OT"), (79, 68, "OT")]
    ok = 0
    for a, b, want in rows:
        lab = label_target(a, b)
        ok += lab is not None and lab.target.value == want and lab.margin > 0
    assert ok == 6


def test_c04_trace_oracle():
    for h in ("RC", "DD", "OT", "STYLE"):
        traces = build_trace_dataset(h, 1000, seed=11)
        assert len(traces) == 1000
        assert all(verify_trace(t) for t in traces)
    for name, a, b, h, ans in (("listing_rc_399x399.txt", 399, 399, "RC", 159201),
                               ("listing_dd_99x40.txt", 99, 40, "DD", 3960),
                               ("listing_ot_79x78.txt", 79, 78, "OT", 6162)):
        t = gen_trace(Problem.make("x", a, b), h)
        assert _norm(t.text) == _norm((GOLDEN / name).read_text(encoding="utf-8"))
        assert t.claimed_answer == ans


def test_c05_contrastive_pairs():
    rng = make_rng(5)
    pairs = []
    for h in ("DD", "RC", "OT"):
        for t in build_trace_dataset(h, 400, seed=5):
            a, b = (int(x) for x in t.lines[0][len("What is "):-1].split(" × "))
            try:
                pairs.append(gen_contrastive_pair(Problem.make(t.problem_id, a, b), h, rng))
            except ValueError:
                continue
    pairs = pairs[::2][:500]
    assert len(pairs) == 500
    assert all(verify_step(p.correct_step) for p in pairs)
    assert not any(verify_step(p.incorrect_step) for p in pairs)
    tpl = step_template(Problem.make("x", 47, 36), "DD")
    assert tpl.render() == "40 × 36 + 7 × 36 = 1440 + 252"
    assert (1, 252, 262) in candidate_corruptions(tpl)


def test_c06_logistic_recovery():
    rng = np.random.default_rng(6)
    x = rng.integers(2, 121, 5000).astype(float)
    y = (rng.random(5000) < 1 / (1 + np.exp(-(4.0 - 0.08 * x)))).astype(float)
    t0 = time.perf_counter()
    f = fit_logistic_xy(x, y)
    elapsed = time.perf_counter() - t0
    assert abs(f.beta0 - 4.0) <= 0.4
    assert abs(f.beta1 + 0.08) <= 0.008
    assert abs(f.c50 - 50.0) <= 5.0
    assert elapsed < 5.0


def test_c07_error_rate():
    rng = np.random.default_rng(7)
    N = rng.integers(2, 201, 20_000)
    ok = rng.random(N.size) < (1 - 0.01) ** N
    recs = [AccuracyRecord(str(i), "t", int(n), bool(c)) for i, (n, c) in enumerate(zip(N, ok))]
    p = fit_error_rate(recs).p
    assert abs(p - 0.01) <= 0.15 * 0.01


def test_c08_probe_ml_equivalence():
    rng = np.random.default_rng(8)
    ctx = ScoringContext("What is 47 × 36?")
    vocab = [f"tok{i}" for i in range(60)]
    agree = 0
    for case in range(100):
        T = int(rng.integers(2, 10))
        conts = {c: " ".join(rng.choice(vocab, T)) for c in SUPPORT_CLASSES}
        bank = TemplateBank({h: (conts[h],) for h in PROBE_HEURISTICS}, (conts[NEUTRAL],))
        mock = MockBackend({"scoring": {"kind": "hash", "seed": case, "low": 0.05, "high": 6.0}})
        r = probe_problem(ctx, bank, mock)
        loglik = {c: -mock.score_continuation(ctx, conts[c]).total for c in SUPPORT_CLASSES}
        agree += r.winner == max(SUPPORT_CLASSES, key=loglik.get)
        assert abs(math.fsum(r.support.values()) - 1.0) <= 1e-9
    assert agree == 100
    s = support_vector({c: 2.5 for c in SUPPORT_CLASSES})
    assert tuple(s[c] for c in SUPPORT_CLASSES) == (0.25, 0.25, 0.25, 0.25)


def test_c09_geometry():
    rng = np.random.default_rng(9)
    shapes = (("k_proj", 12, 10), ("q_proj", 12, 10), ("v_proj", 8, 14))
    r = 4

    def rand(name):
        return LowRankUpdate(name, "DD", [(m, rng.standard_normal((r, k)), rng.standard_normal((d, r)))
                                          for m, d, k in shapes])

    for _ in range(20):
        u, v = rand("u"), rand("v")
        neg = LowRankUpdate("n", "DD", [(m, A, -B) for m, A, B in u.modules])
        assert abs(streamed_cosine(u, u) - 1.0) <= 1e-9
        assert abs(streamed_cosine(u, neg) + 1.0) <= 1e-9
        assert abs(streamed_cosine(u, v) - materialized_cosine(u, v)) <= 1e-9
        mixed = []
        for m, A, B in u.modules:
            R = rng.standard_normal((r, r)) + 3 * np.eye(r)
            mixed.append((m, np.linalg.solve(R, A), B @ R))
        w = LowRankUpdate("w", "DD", mixed)
        d0, d1 = effective_update(u), effective_update(w)
        assert np.linalg.norm(d1 - d0) / np.linalg.norm(d0) <= 1e-9
    # disjoint support: row blocks of B that never overlap
    A = rng.standard_normal((2, 6))
    B1 = np.zeros((6, 2))
    B2 = np.zeros((6, 2))
    B1[:3] = rng.standard_normal((3, 2))
    B2[3:] = rng.standard_normal((3, 2))
    x = LowRankUpdate("x", "DD", [("q", A, B1)])
    y = LowRankUpdate("y", "RC", [("q", A, B2)])
    assert abs(streamed_cosine(x, y)) <= 1e-9


def _same_tree(a: Path, b: Path) -> list:
    diffs = []
    cmp = filecmp.dircmp(a, b)
    stack = [(cmp, Path("."))]
    while stack:
        c, rel = stack.pop()
        diffs += [str(rel / n) for n in c.left_only + c.right_only + c.funny_files]
        _, mismatch, errors = filecmp.cmpfiles(a / rel, b / rel, c.common_files, shallow=False)
        diffs += [str(rel / n) for n in mismatch + errors]
        stack += [(sub, rel / name) for name, sub in c.subdirs.items()]
    return diffs


def test_c10_pipeline_determinism(tmp_path):
    cfg = str(GOLDEN / "pipeline_config.json")
    times = []
    for name in ("run1", "run2"):
        t0 = time.perf_counter()
        assert main(["pipeline", "--config", cfg, "--out", str(tmp_path / name)]) == 0
        times.append(time.perf_counter() - t0)
    assert _same_tree(tmp_path / "run1", tmp_path / "run2") == []
    assert max(times) < 120.0


def test_c11_number_words():
    seen = {}
    for n in range(100_000):
        w = to_words(n)
        assert parse_words(w) == n
        seen[w] = n
    assert len(seen) == 100_000
    rng = np.random.default_rng(11)
    for v in rng.integers(10 ** 9, 10 ** 10, 10_000):
        assert parse_words(to_words(int(v))) == int(v)


def _check_against_golden(produced: Path, golden: Path):
    ph, prow = read_csv(produced)
    gh, grow = read_csv(golden)
    assert {k: ph[k] for k in ("config_hash", "manifest_hash", "kind")} == \
        {k: gh[k] for k in ("config_hash", "manifest_hash", "kind")}
    assert produced.read_text().splitlines()[1] == golden.read_text().splitlines()[1]  # column layout
    assert len(prow) == len(grow)
    for p, g in zip(prow, grow):
        for col in g:
            a, b = p[col], g[col]
            try:
                fa, fb = float(a), float(b)
            except ValueError:
                assert a == b, (col, a, b)
                continue
            assert abs(fa - fb) <= 1e-9, (col, a, b)


def _oracle_rows(results):
    """Independent recomputation of the per-heuristic Δloss and winner-share rows."""
    rows = {}
    for rep in sorted({r["representation"] for r in results}):
        rs = [r for r in results if r["representation"] == rep]
        n = len(rs)
        for h in ("DD", "RC", "OT"):
            vals = [r["losses"][h] - r["losses"]["neutral"] for r in rs]
            mu = sum(vals) / n
            sd = (sum((v - mu) ** 2 for v in vals) / (n - 1)) ** 0.5
            rows[(f"delta_loss_{h}", rep)] = (mu, sd / n ** 0.5, n)
        for c in ("DD", "RC", "OT", "neutral"):
            share = sum(r["winner"] == c for r in rs) / n
            rows[(f"winner_share_{c}", rep)] = (share, (share * (1 - share) / n) ** 0.5, n)
    return rows


def test_c12_golden_mock_run(tmp_path):
    out = tmp_path / "g"
    cfg = str(GOLDEN / "golden_config.json")
    for cmd in ("gen", "probe", "contrast", "ablate"):
        assert main([cmd, "--config", cfg, "--out", str(out)]) == 0
    _check_against_golden(out / "probe" / "aggregate.csv", GOLDEN / "probe_aggregate.csv")
    _check_against_golden(out / "contrast" / "aggregate.csv", GOLDEN / "contrast_aggregate.csv")
    _check_against_golden(out / "ablate" / "table.csv", GOLDEN / "ablation_table.csv")
    _, results = read_jsonl(out / "probe" / "results.jsonl")
    _, rows = read_csv(out / "probe" / "aggregate.csv")
    got = {(r["metric"], r["representation"]): r for r in rows}
    for key, (v, se, n) in _oracle_rows(results).items():
        assert abs(float(got[key]["value"]) - v) <= 1e-9
        assert abs(float(got[key]["se"]) - se) <= 1e-9
        assert int(got[key]["n"]) == n


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
