"""Cosine geometry of low-rank adapter updates.

An adapter directory holds ``adapter.json``::

    {"adapter_id": "rc_seed0", "heuristic": "RC", "seed": 0,
     "modules": [{"name": "layers.0.q_proj", "A": {"file": "q_A.f32", "shape": [r, k]},
                                            "B": {"file": "q_B.f32", "shape": [d, r]}}, ...]}

with each matrix stored as raw little-endian float32, row-major. Updates are
flattened per module row-major and concatenated in lexicographic module order.
LoRA scaling (alpha/r) is left out: a positive per-adapter factor does not move
cosine values.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

MANIFEST = "adapter.json"


class AdapterFormatError(ValueError):
    pass


@dataclass
class LowRankUpdate:
    adapter_id: str
    heuristic: str
    modules: list  # (name, A r×k, B d×r)
    seed: Optional[int] = None

    def __post_init__(self):
        names = [m[0] for m in self.modules]
        if len(set(names)) != len(names):
            raise ValueError(f"adapter {self.adapter_id}: duplicate module names")
        for name, A, B in self.modules:
            A, B = np.asarray(A), np.asarray(B)
            if A.ndim != 2 or B.ndim != 2 or B.shape[1] != A.shape[0]:
                raise ValueError(f"adapter {self.adapter_id}: module {name!r} has B {B.shape} and A {A.shape}; inner dims differ")

    def ordered(self) -> list:
        return sorted(self.modules, key=lambda m: m[0])

    def module_names(self) -> list:
        return sorted(m[0] for m in self.modules)


def module_update(A, B) -> np.ndarray:
    return np.asarray(B, dtype=np.float64) @ np.asarray(A, dtype=np.float64)


def effective_update(u: LowRankUpdate) -> np.ndarray:
    parts = [module_update(A, B).ravel(order="C") for _, A, B in u.ordered()]
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


def cosine_similarity(v1, v2) -> float:
    v1 = np.asarray(v1, dtype=np.float64).ravel()
    v2 = np.asarray(v2, dtype=np.float64).ravel()
    if v1.shape != v2.shape:
        raise ValueError(f"vector lengths differ: {v1.size} vs {v2.size}")
    n1 = math.sqrt(math.fsum(v1 * v1))
    n2 = math.sqrt(math.fsum(v2 * v2))
    if n1 == 0.0 or n2 == 0.0:
        raise ValueError("cosine similarity undefined for a zero vector")
    c = math.fsum(v1 * v2) / (n1 * n2)
    return max(-1.0, min(1.0, c))


def _check_compatible(u1: LowRankUpdate, u2: LowRankUpdate) -> None:
    if u1.module_names() != u2.module_names():
        raise ValueError(f"adapters {u1.adapter_id} and {u2.adapter_id} cover different modules")


def streamed_cosine(u1: LowRankUpdate, u2: LowRankUpdate) -> float:
    """Cosine of two adapters without building the concatenated vectors.

    Per-module products are formed one at a time; dot and norm partial sums are
    combined with compensated summation in module order.
    """
    _check_compatible(u1, u2)
    dots, s1, s2 = [], [], []
    for (name, A1, B1), (_, A2, B2) in zip(u1.ordered(), u2.ordered()):
        d1, d2 = module_update(A1, B1), module_update(A2, B2)
        if d1.shape != d2.shape:
            raise ValueError(f"module {name!r}: update shapes {d1.shape} and {d2.shape} differ")
        dots.append(math.fsum((d1 * d2).ravel()))
        s1.append(math.fsum((d1 * d1).ravel()))
        s2.append(math.fsum((d2 * d2).ravel()))
    n1, n2 = math.sqrt(math.fsum(s1)), math.sqrt(math.fsum(s2))
    if n1 == 0.0 or n2 == 0.0:
        raise ValueError("cosine similarity undefined for a zero update")
    return max(-1.0, min(1.0, math.fsum(dots) / (n1 * n2)))


def materialized_cosine(u1: LowRankUpdate, u2: LowRankUpdate) -> float:
    _check_compatible(u1, u2)
    return cosine_similarity(effective_update(u1), effective_update(u2))


@dataclass(frozen=True)
class SimilarityReport:
    adapter_ids: tuple
    heuristics: tuple
    matrix: np.ndarray
    same_mean: Optional[float]
    cross_mean: Optional[float]
    gap: Optional[float]
    n_same: int
    n_cross: int
    partial: bool

    def to_dict(self) -> dict:
        return {
            "adapter_ids": list(self.adapter_ids),
            "heuristics": list(self.heuristics),
            "matrix": self.matrix.tolist(),
            "same_mean": self.same_mean,
            "cross_mean": self.cross_mean,
            "gap": self.gap,
            "n_same": self.n_same,
            "n_cross": self.n_cross,
            "partial": self.partial,
        }


def similarity_matrix(adapters: Sequence[LowRankUpdate], streamed: bool = True) -> np.ndarray:
    n = len(adapters)
    M = np.eye(n)
    fn = streamed_cosine if streamed else materialized_cosine
    for i, j in itertools.combinations(range(n), 2):
        M[i, j] = M[j, i] = fn(adapters[i], adapters[j])
    return M


def group_gap(adapters: Sequence[LowRankUpdate], streamed: bool = True) -> SimilarityReport:
    """Mean same-heuristic vs cross-heuristic cosine over all adapter pairs."""
    if len(adapters) < 2:
        raise ValueError("need at least two adapters")
    M = similarity_matrix(adapters, streamed)
    same, cross = [], []
    for i, j in itertools.combinations(range(len(adapters)), 2):
        (same if adapters[i].heuristic == adapters[j].heuristic else cross).append(M[i, j])
    sm = math.fsum(same) / len(same) if same else None
    cm = math.fsum(cross) / len(cross) if cross else None
    gap = sm - cm if sm is not None and cm is not None else None
    return SimilarityReport(tuple(a.adapter_id for a in adapters), tuple(a.heuristic for a in adapters), M,
                            sm, cm, gap, len(same), len(cross), partial=not same)


# --- directory format ------------------------------------------------------------------


def _read_matrix(root: Path, spec: dict, where: str) -> np.ndarray:
    try:
        shape = tuple(int(x) for x in spec["shape"])
        path = root / spec["file"]
    except (KeyError, TypeError, ValueError) as exc:
        raise AdapterFormatError(f"{root / MANIFEST}: {where} needs 'file' and 'shape'") from exc
    if len(shape) != 2:
        raise AdapterFormatError(f"{root / MANIFEST}: {where}.shape must have two entries")
    if not path.exists():
        raise AdapterFormatError(f"{path}: missing matrix file for {where}")
    data = np.fromfile(path, dtype="<f4")
    if data.size != shape[0] * shape[1]:
        raise AdapterFormatError(f"{path}: {data.size} floats, expected {shape[0]}x{shape[1]} for {where}")
    return data.reshape(shape).astype(np.float64)


def load_adapter(path) -> LowRankUpdate:
    root = Path(path)
    mf = root / MANIFEST
    if not mf.exists():
        raise AdapterFormatError(f"{mf}: manifest not found")
    try:
        meta = json.loads(mf.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise AdapterFormatError(f"{mf}: invalid JSON ({exc})") from exc
    for key in ("adapter_id", "heuristic", "modules"):
        if key not in meta:
            raise AdapterFormatError(f"{mf}: missing field '{key}'")
    modules = []
    for i, m in enumerate(meta["modules"]):
        if "name" not in m:
            raise AdapterFormatError(f"{mf}: modules[{i}] missing 'name'")
        A = _read_matrix(root, m.get("A", {}), f"modules[{i}].A")
        B = _read_matrix(root, m.get("B", {}), f"modules[{i}].B")
        modules.append((m["name"], A, B))
    try:
        return LowRankUpdate(meta["adapter_id"], meta["heuristic"], modules, meta.get("seed"))
    except ValueError as exc:
        raise AdapterFormatError(f"{mf}: {exc}") from exc


def save_adapter(u: LowRankUpdate, path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    mods = []
    for idx, (name, A, B) in enumerate(u.ordered()):
        A, B = np.asarray(A), np.asarray(B)
        fa, fb = f"m{idx:03d}_A.f32", f"m{idx:03d}_B.f32"
        A.astype("<f4").tofile(root / fa)
        B.astype("<f4").tofile(root / fb)
        mods.append({"name": name, "A": {"file": fa, "shape": list(A.shape)}, "B": {"file": fb, "shape": list(B.shape)}})
    meta = {"adapter_id": u.adapter_id, "heuristic": u.heuristic, "seed": u.seed, "modules": mods}
    (root / MANIFEST).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return root


def synthetic_adapters(heuristics=("OT", "DD", "RC"), reruns: int = 2, modules=("q_proj", "v_proj"), d: int = 16,
                       k: int = 16, r: int = 4, noise: float = 0.5, seed: int = 0) -> list:
    """Adapters sharing a per-heuristic subspace plus per-rerun noise."""
    rng = np.random.default_rng(seed)
    base = {h: {m: (rng.standard_normal((r, k)), rng.standard_normal((d, r))) for m in modules} for h in heuristics}
    out = []
    for h in heuristics:
        for s in range(reruns):
            mods = []
            for m in modules:
                A0, B0 = base[h][m]
                mods.append((m, A0 + noise * rng.standard_normal((r, k)), B0 + noise * rng.standard_normal((d, r))))
            out.append(LowRankUpdate(f"{h.lower()}_seed{s}", h, mods, s))
    return out
