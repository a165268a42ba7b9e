"""Benchmark construction: paired multimodal suite, heuristic-disagreement set
(HDS) with stratified splits, adversarial traps and single-cue perturbation pairs.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional

from .arith import PAPER_TEMPLATES, DigitTemplate, Problem, canonical_key, compute_load, count_carries, make_rng, sample_operand
from .cost import DEFAULT_PARAMS, CostBreakdown, CostParams, HeuristicKind, cost_breakdown, label_from_costs
from .render import Representation

log = logging.getLogger(__name__)

GENERATOR_VERSION = "mulprobe-dataset/1"
SPLITS = ("train", "val", "test")
SPLIT_FRACTIONS = (0.70, 0.15, 0.15)
TEXT_IMAGE_REPRESENTATIONS = (
    Representation.NUMERAL_TEXT,
    Representation.WORD_TEXT,
    Representation.NUMERAL_IMAGE,
    Representation.WORD_IMAGE,
)

# Hand-curated seed pool: (a, b, family). Indices 0, 2, 9, 14, 18, 19 are the
# published snippet rows, so they keep their hds_### ids.
CURATED_POOL = (
    (49, 51, "near_50_sym"),
    (48, 52, "near_50_sym"),
    (99, 101, "near_100_sym"),
    (98, 102, "near_100_sym"),
    (197, 203, "near_200_sym"),
    (247, 253, "near_250_sym"),
    (496, 504, "near_500_sym"),
    (23, 27, "near_25_sym"),
    (203, 198, "near_200_mixed"),
    (47, 60, "zero_factor"),
    (83, 40, "zero_factor"),
    (25, 48, "quarter_hundred"),
    (75, 64, "quarter_hundred"),
    (40, 70, "clean_tens"),
    (37, 100, "hundred_factor"),
    (58, 1000, "hundred_factor"),
    (86, 97, "carry_heavy"),
    (78, 69, "carry_heavy"),
    (87, 96, "carry_heavy"),
    (79, 68, "carry_heavy"),
)

FIXED_FAMILIES = ("zero_factor", "hundred_factor", "quarter_hundred", "clean_tens", "carry_heavy", "generic")


def is_known_family(family: str) -> bool:
    if family in FIXED_FAMILIES:
        return True
    parts = family.split("_")
    return len(parts) == 3 and parts[0] == "near" and parts[1].isdigit() and parts[2] in ("sym", "mixed")


@dataclass(frozen=True)
class HdsItem:
    id: str
    problem: Problem
    target: HeuristicKind
    family: str
    split: str
    costs: CostBreakdown
    margin: float
    runner_up: HeuristicKind

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "a": self.problem.a.value,
            "b": self.problem.b.value,
            "product": self.problem.product,
            "target": self.target.value,
            "runner_up": self.runner_up.value,
            "family": self.family,
            "split": self.split,
            "margin": self.margin,
            "costs": self.costs.to_dict(),
            "load_C": compute_load(self.problem.a, self.problem.b).load_C,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HdsItem":
        c = d["costs"]
        return cls(
            id=d["id"],
            problem=Problem.make(d["id"], d["a"], d["b"]),
            target=HeuristicKind(d["target"]),
            family=d["family"],
            split=d["split"],
            costs=CostBreakdown(c["ot_cost"], c["dd_cost"], c["rc_cost"], c["rc_base"], c.get("components", {})),
            margin=d["margin"],
            runner_up=HeuristicKind(d["runner_up"]),
        )


class BucketExhausted(RuntimeError):
    pass


def bucket_quotas(count: int) -> dict:
    base, rem = divmod(count, 3)
    q = {HeuristicKind.RC: base, HeuristicKind.DD: base, HeuristicKind.OT: base}
    for h in (HeuristicKind.RC, HeuristicKind.DD, HeuristicKind.OT)[:rem]:
        q[h] += 1
    return q


# --- bucket samplers: each returns (a, b, family) ---------------------------------


def _digits(rng, nd: int) -> int:
    return int(rng.integers(10 ** (nd - 1), 10 ** nd))


def _no_zero_digits(rng, nd: int) -> int:
    v = 0
    for _ in range(nd):
        v = v * 10 + int(rng.integers(1, 10))
    return v


def _draw_rc(rng, params: CostParams):
    B = params.base_set[int(rng.integers(len(params.base_set)))]
    if rng.random() < 0.5:
        k = int(rng.integers(1, 11))
        a, b = B - k, B + k
    else:
        a, b = B + int(rng.integers(-10, 11)), B + int(rng.integers(-10, 11))
    if a <= 0 or b <= 0:
        return None
    if rng.random() < 0.5:
        a, b = b, a
    kind = "sym" if a - B == -(b - B) != 0 else "mixed"
    return a, b, f"near_{B}_{kind}"


def _draw_dd(rng, params: CostParams):
    kind = int(rng.integers(4))
    if kind == 0:
        a = _digits(rng, int(rng.integers(2, 4)))
        b = int(rng.integers(1, 10)) * 10 ** int(rng.integers(1, 3))
        fam = "zero_factor"
    elif kind == 1:
        a = _digits(rng, int(rng.integers(1, 4)))
        b = 10 ** int(rng.integers(2, 4))
        fam = "hundred_factor"
    elif kind == 2:
        a = 25 * int(rng.choice([1, 3, 5, 7, 9, 11, 13, 15, 17, 19]))
        b = 4 * int(rng.integers(3, 50))
        fam = "quarter_hundred"
    else:
        a = int(rng.integers(1, 10)) * 10 * (1 if rng.random() < 0.7 else 10)
        b = int(rng.integers(1, 10)) * 10 * (1 if rng.random() < 0.7 else 10)
        fam = "clean_tens"
    if rng.random() < 0.5:
        a, b = b, a
    return a, b, fam


def _far_from_cues(x: int, params: CostParams) -> bool:
    if x % 25 == 0 or "0" in str(x):
        return False
    return all(abs(x - B) > 10 for B in params.base_set)


def _draw_ot(rng, params: CostParams, carry_heavy_min: int = 3):
    if rng.random() < 0.5:
        a, b = _no_zero_digits(rng, 2), _no_zero_digits(rng, 2)
        if count_carries(a, b) < carry_heavy_min:
            return None
        fam = "carry_heavy"
    else:
        a, b = _no_zero_digits(rng, 3), _no_zero_digits(rng, int(rng.integers(2, 4)))
        fam = "generic"
    if not (_far_from_cues(a, params) and _far_from_cues(b, params)):
        return None
    return a, b, fam


def _split_assign(items: list, rng) -> dict:
    """Stratified 70/15/15 within each target class."""
    by_target: dict = {}
    for idx, (_, _, target, _) in enumerate(items):
        by_target.setdefault(target, []).append(idx)
    out = {}
    for target in sorted(by_target, key=lambda h: h.value):
        idxs = by_target[target]
        n = len(idxs)
        n_train = int(round(n * SPLIT_FRACTIONS[0]))
        n_val = int(round(n * SPLIT_FRACTIONS[1]))
        order = [idxs[int(i)] for i in rng.permutation(n)]
        for j, idx in enumerate(order):
            out[idx] = "train" if j < n_train else ("val" if j < n_train + n_val else "test")
    return out


def build_hds(
    count: int = 1000,
    seed: int = 0,
    margin_min: Optional[float] = None,
    params: CostParams = DEFAULT_PARAMS,
    carry_heavy_min: int = 3,
    max_attempts: Optional[int] = None,
) -> list:
    if count < 3:
        raise ValueError("HDS needs count >= 3")
    margin_min = params.margin_min if margin_min is None else margin_min
    rng = make_rng(seed)
    quotas = bucket_quotas(count)
    have: Counter = Counter()
    seen: set = set()
    chosen = []  # (problem-less tuple) a, b, target, family + label/costs

    def offer(a, b, family, expect=None):
        key = canonical_key(a, b)
        if key in seen:
            return False
        costs = cost_breakdown(a, b, params)
        label = label_from_costs(costs, margin_min)
        if label is None or (expect is not None and label.target != expect):
            return False
        if have[label.target] >= quotas[label.target]:
            return False
        seen.add(key)
        have[label.target] += 1
        chosen.append(((a, b), family, label.target, (costs, label)))
        return True

    for a, b, fam in CURATED_POOL:
        offer(a, b, fam)

    samplers = {
        HeuristicKind.RC: lambda: _draw_rc(rng, params),
        HeuristicKind.DD: lambda: _draw_dd(rng, params),
        HeuristicKind.OT: lambda: _draw_ot(rng, params, carry_heavy_min),
    }
    max_attempts = max_attempts or 2000 * count
    for h in (HeuristicKind.RC, HeuristicKind.DD, HeuristicKind.OT):
        attempts = 0
        while have[h] < quotas[h]:
            attempts += 1
            if attempts > max_attempts:
                raise BucketExhausted(
                    f"HDS bucket {h.value} exhausted after {max_attempts} draws; "
                    + ", ".join(f"{k.value}={have[k]}/{quotas[k]}" for k in quotas)
                )
            cand = samplers[h]()
            if cand is not None:
                offer(*cand, expect=h)

    splits = _split_assign([(ab, fam, t, x) for ab, fam, t, x in chosen], rng)
    items = []
    for idx, ((a, b), fam, target, (costs, label)) in enumerate(chosen):
        pid = f"hds_{idx:03d}"
        items.append(HdsItem(pid, Problem.make(pid, a, b), target, fam, splits[idx], costs, label.margin, label.runner_up))
    return items


def split_counts(items: Iterable[HdsItem]) -> dict:
    c = Counter(it.split for it in items)
    return {s: c.get(s, 0) for s in SPLITS}


# --- traps ---------------------------------------------------------------------


@dataclass(frozen=True)
class TrapItem:
    id: str
    problem: Problem
    kind: str
    tempting_heuristic: HeuristicKind
    note: str

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "a": self.problem.a.value,
            "b": self.problem.b.value,
            "product": self.problem.product,
            "kind": self.kind,
            "tempting_heuristic": self.tempting_heuristic.value,
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrapItem":
        return cls(d["id"], Problem.make(d["id"], d["a"], d["b"]), d["kind"], HeuristicKind(d["tempting_heuristic"]), d["note"])


def _anti_rounding(rng, params: CostParams):
    B = params.base_set[int(rng.integers(len(params.base_set)))]
    da = int(rng.choice([-3, -2, -1, 1, 2, 3]))
    db = int(rng.choice([-9, -8, -7, -6, -5, -4, 4, 5, 6, 7, 8, 9]))
    if da == -db or B + da <= 0 or B + db <= 0:
        return None
    a, b = (B + da, B + db) if rng.random() < 0.5 else (B + db, B + da)
    note = f"near {B} with offsets {a - B:+d}/{b - B:+d}: no difference-of-squares shortcut, three correction terms"
    return a, b, note


def _missing_term(rng, params: CostParams):
    big = _no_zero_digits(rng, int(rng.integers(3, 5)))
    small = _no_zero_digits(rng, 2)
    s = sum(1 for c in str(big) if c != "0")
    note = f"expanding {big} gives {s} non-zero partial products against {small}"
    return (big, small, note) if rng.random() < 0.5 else (small, big, note)


def build_traps(count: int = 30, seed: int = 0, hds: Iterable[HdsItem] = (), params: CostParams = DEFAULT_PARAMS) -> list:
    if count < 1:
        raise ValueError("trap count must be >= 1")
    rng = make_rng(seed + 7919)
    taken = {it.problem.key for it in hds}
    n_anti = (count + 1) // 2
    out = []
    for kind, n, draw, tempting in (
        ("anti_rounding", n_anti, _anti_rounding, HeuristicKind.RC),
        ("missing_term", count - n_anti, _missing_term, HeuristicKind.DD),
    ):
        made = 0
        attempts = 0
        while made < n:
            attempts += 1
            if attempts > 10000 * max(n, 1):
                raise BucketExhausted(f"could not build {n} {kind} traps disjoint from HDS")
            cand = draw(rng, params)
            if cand is None:
                continue
            a, b, note = cand
            key = canonical_key(a, b)
            if key in taken:
                continue
            taken.add(key)
            tid = f"trap_{len(out):03d}"
            out.append(TrapItem(tid, Problem.make(tid, a, b), kind, tempting, note))
            made += 1
    hds_keys = {it.problem.key for it in hds}
    if any(t.problem.key in hds_keys for t in out):
        raise AssertionError("trap set intersects HDS")
    return out


# --- perturbation pairs ------------------------------------------------------------

PERTURB_DELTAS = (1, -1, 2, -2, 3, -3)


def perturb_once(a: int, b: int, params: CostParams = DEFAULT_PARAMS, margin_min: Optional[float] = None):
    """Smallest single-operand edit that changes or removes the target label."""
    margin_min = params.margin_min if margin_min is None else margin_min
    base = label_from_costs(cost_breakdown(a, b, params), margin_min)
    for which in ("b", "a"):
        for d in PERTURB_DELTAS:
            na, nb = (a, b + d) if which == "b" else (a + d, b)
            if na <= 0 or nb <= 0:
                continue
            lab = label_from_costs(cost_breakdown(na, nb, params), margin_min)
            if base is None or lab is None or lab.target != base.target:
                return (na, nb), which, d, base, lab
    return None


def build_perturbation_pairs(seed: int = 0, count: int = 30, params: CostParams = DEFAULT_PARAMS) -> list:
    """Records pairing a labeled problem with a minimally edited twin."""
    rng = make_rng(seed + 104729)
    samplers = (
        lambda: _draw_rc(rng, params),
        lambda: _draw_dd(rng, params),
        lambda: _draw_ot(rng, params),
    )
    out, seen = [], set()
    attempts = 0
    while len(out) < count:
        attempts += 1
        if attempts > 10000 * count:
            raise BucketExhausted(f"only {len(out)}/{count} perturbation pairs found")
        cand = samplers[len(out) % 3]()
        if cand is None:
            continue
        a, b, fam = cand
        if canonical_key(a, b) in seen:
            continue
        base = label_from_costs(cost_breakdown(a, b, params), params.margin_min)
        if base is None:
            continue
        res = perturb_once(a, b, params)
        if res is None:
            continue
        (na, nb), which, d, lab0, lab1 = res
        seen.add(canonical_key(a, b))
        i = len(out)
        out.append({
            "id": f"pert_{i:03d}",
            "original": Problem.make(f"pert_{i:03d}_a", a, b),
            "perturbed": Problem.make(f"pert_{i:03d}_b", na, nb),
            "family": fam,
            "edited_operand": which,
            "delta": d,
            "original_target": lab0.target.value,
            "perturbed_target": lab1.target.value if lab1 else None,
        })
    return out


def perturbation_to_dict(rec: dict) -> dict:
    d = dict(rec)
    d["original"] = rec["original"].to_dict()
    d["perturbed"] = rec["perturbed"].to_dict()
    return d


# --- multimodal suite ----------------------------------------------------------------


def _parse_templates(templates) -> list:
    pairs = []
    for t in templates:
        if isinstance(t, (tuple, list)):
            pairs.append((DigitTemplate(t[0]), DigitTemplate(t[1])))
        elif "×" in t or "x" in t:
            left, right = t.replace("x", "×").split("×")
            pairs.append((DigitTemplate(left), DigitTemplate(right)))
        else:
            pairs.append((DigitTemplate(t), None))
    return pairs


def build_multimodal_suite(count: int, templates=PAPER_TEMPLATES, seed: int = 0, paper_mode: bool = True,
                           representations=TEXT_IMAGE_REPRESENTATIONS) -> list:
    """``count`` problems, each paired with every representation in ``representations``.

    Templates are single patterns (each operand draws one independently) or
    explicit pairs such as ``"VV×VV"``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    entries = _parse_templates(templates)
    singles = [e[0] for e in entries if e[1] is None]
    pairs = [e for e in entries if e[1] is not None]
    rng = make_rng(seed)
    reps = [Representation(r).value for r in representations]
    out = []
    for i in range(count):
        if pairs and (not singles or rng.random() < len(pairs) / len(entries)):
            ta, tb = pairs[int(rng.integers(len(pairs)))]
        else:
            ta = singles[int(rng.integers(len(singles)))]
            tb = singles[int(rng.integers(len(singles)))]
        a = sample_operand(ta, rng, paper_mode)
        b = sample_operand(tb, rng, paper_mode)
        pid = f"mm_{i:05d}"
        p = Problem.make(pid, a, b)
        out.append({
            "problem": p,
            "template_a": ta.pattern,
            "template_b": tb.pattern,
            "load_C": compute_load(a, b).load_C,
            "representations": list(reps),
        })
    return out


def suite_to_dict(entry: dict) -> dict:
    d = entry["problem"].to_dict()
    d.update({k: entry[k] for k in ("template_a", "template_b", "load_C", "representations")})
    return d


def suite_from_dict(d: dict) -> dict:
    return {
        "problem": Problem.make(d["id"], d["a"], d["b"]),
        "template_a": d.get("template_a"),
        "template_b": d.get("template_b"),
        "load_C": d["load_C"],
        "representations": d["representations"],
    }


# --- exclusions ----------------------------------------------------------------------


def exclusion_keys(hds: Iterable[HdsItem] = (), traps: Iterable[TrapItem] = (), held_out: Iterable[Problem] = ()) -> list:
    """Canonical keys of every problem that training traces must avoid."""
    keys = {it.problem.key for it in hds if it.split in ("val", "test")}
    keys |= {t.problem.key for t in traps}
    keys |= {p.key for p in held_out}
    return sorted(keys, key=lambda k: tuple(int(x) for x in k.split("×")))
