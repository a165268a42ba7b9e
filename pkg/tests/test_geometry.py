import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mulprobe.geometry import (
    AdapterFormatError,
    LowRankUpdate,
    cosine_similarity,
    effective_update,
    group_gap,
    load_adapter,
    materialized_cosine,
    save_adapter,
    similarity_matrix,
    streamed_cosine,
    synthetic_adapters,
)


def rand_update(rng, name="a", h="DD", modules=(("q", 6, 5), ("v", 4, 7)), r=3):
    mods = [(m, rng.standard_normal((r, k)), rng.standard_normal((d, r))) for m, d, k in modules]
    return LowRankUpdate(name, h, mods)


def negate(u):
    return LowRankUpdate(u.adapter_id + "_neg", u.heuristic, [(m, A, -B) for m, A, B in u.modules])


def test_cosine_examples():
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 2], [2, 4]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        cosine_similarity([0, 0], [1, 1])
    with pytest.raises(ValueError):
        cosine_similarity([1, 0], [1, 0, 0])


@settings(max_examples=30)
@given(st.integers(0, 10 ** 6))
def test_identity_negation_and_paths(seed):
    rng = np.random.default_rng(seed)
    u, v = rand_update(rng), rand_update(rng, "b")
    assert abs(streamed_cosine(u, u) - 1.0) <= 1e-9
    assert abs(streamed_cosine(u, negate(u)) + 1.0) <= 1e-9
    assert abs(streamed_cosine(u, v) - materialized_cosine(u, v)) <= 1e-9


@settings(max_examples=30)
@given(st.integers(0, 10 ** 6))
def test_factorization_invariance(seed):
    rng = np.random.default_rng(seed)
    u = rand_update(rng)
    mixed = []
    for m, A, B in u.modules:
        R = rng.standard_normal((A.shape[0], A.shape[0])) + 3 * np.eye(A.shape[0])
        mixed.append((m, np.linalg.solve(R, A), B @ R))
    w = LowRankUpdate("mix", "DD", mixed)
    d0, d1 = effective_update(u), effective_update(w)
    assert np.linalg.norm(d0 - d1) / np.linalg.norm(d0) <= 1e-9
    assert abs(streamed_cosine(u, w) - 1.0) <= 1e-9


def test_disjoint_support_is_zero():
    A1 = np.zeros((1, 4))
    A1[0, :2] = [1.0, 2.0]
    A2 = np.zeros((1, 4))
    A2[0, 2:] = [3.0, -1.0]
    B = np.ones((3, 1))
    u = LowRankUpdate("x", "DD", [("q", A1, B)])
    v = LowRankUpdate("y", "RC", [("q", A2, B)])
    assert abs(streamed_cosine(u, v)) <= 1e-9


def test_flatten_order_is_lexicographic_row_major():
    A = np.array([[1.0, 2.0]])
    B = np.array([[1.0], [10.0]])
    u = LowRankUpdate("x", "DD", [("z", A, B), ("a", 2 * A, B)])
    assert effective_update(u).tolist() == [2, 4, 20, 40, 1, 2, 10, 20]


def test_inner_dim_mismatch():
    with pytest.raises(ValueError):
        LowRankUpdate("x", "DD", [("q", np.ones((2, 3)), np.ones((4, 3)))])
    with pytest.raises(ValueError):
        LowRankUpdate("x", "DD", [("q", np.ones((2, 3)), np.ones((4, 2))), ("q", np.ones((2, 3)), np.ones((4, 2)))])


def test_module_mismatch():
    rng = np.random.default_rng(0)
    u = rand_update(rng)
    v = rand_update(rng, modules=(("q", 6, 5),))
    with pytest.raises(ValueError):
        streamed_cosine(u, v)


def test_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    u = rand_update(rng)
    back = load_adapter(save_adapter(u, tmp_path / "a"))
    assert back.adapter_id == "a" and back.module_names() == ["q", "v"]
    for (_, A, B), (_, A2, B2) in zip(u.ordered(), back.ordered()):
        assert np.array_equal(A.astype("<f4"), A2) and np.array_equal(B.astype("<f4"), B2)
    raw = np.fromfile(tmp_path / "a" / "m000_A.f32", dtype="<f4")
    assert raw.tolist() == u.ordered()[0][1].astype("<f4").ravel().tolist()


def test_format_errors(tmp_path):
    with pytest.raises(AdapterFormatError, match="manifest"):
        load_adapter(tmp_path)
    rng = np.random.default_rng(2)
    root = save_adapter(rand_update(rng), tmp_path / "b")
    meta = json.loads((root / "adapter.json").read_text())
    meta["modules"][0]["A"]["shape"] = [99, 99]
    (root / "adapter.json").write_text(json.dumps(meta))
    with pytest.raises(AdapterFormatError, match="expected"):
        load_adapter(root)
    (root / "adapter.json").write_text("{")
    with pytest.raises(AdapterFormatError, match="JSON"):
        load_adapter(root)
    (root / "adapter.json").write_text(json.dumps({"adapter_id": "x", "heuristic": "DD"}))
    with pytest.raises(AdapterFormatError, match="modules"):
        load_adapter(root)


def test_group_gap_synthetic():
    ads = synthetic_adapters(seed=0)
    rep = group_gap(ads)
    assert rep.same_mean > rep.cross_mean and rep.gap > 0
    M = similarity_matrix(ads)
    assert np.allclose(M, M.T) and np.allclose(np.diag(M), 1.0)
    assert np.allclose(M, similarity_matrix(ads, streamed=False), atol=1e-9)
    with pytest.raises(ValueError):
        group_gap(ads[:1])


def test_group_gap_partial():
    ads = synthetic_adapters(heuristics=("OT", "DD"), reruns=1)
    rep = group_gap(ads)
    assert rep.partial and rep.same_mean is None and rep.gap is None
