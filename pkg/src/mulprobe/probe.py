"""Forced-completion loss probes and their aggregate reports."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .backend import CapabilityError, ScoringContext, TokenLosses
from .cost import HeuristicKind
from .stats import binomial_se, mean_se
from .traces import ContrastivePair

log = logging.getLogger(__name__)

NEUTRAL = "neutral"
PROBE_HEURISTICS = ("DD", "RC", "OT")
SUPPORT_CLASSES = PROBE_HEURISTICS + (NEUTRAL,)
# Tie priority at exactly equal loss: the neutral baseline wins first.
TIE_PRIORITY = (NEUTRAL, "DD", "RC", "OT")

BANK_VERSION = "1"

_BALANCED = {
    "OT": (
        "Column method: start with the ones digits and carry into the next column.",
        "Column method: multiply digit by digit from the ones place, carrying as needed.",
        "Column method: work right to left through the digits, writing partial products.",
    ),
    "DD": (
        "Decomposition: split one factor into place-value parts and multiply each part.",
        "Decomposition: break one number into tens and ones, then add the products.",
        "Decomposition: expand one factor by place value and sum the partial products.",
    ),
    "RC": (
        "Round and adjust: use a nearby round base, then compensate for the offset.",
        "Round and adjust: move to a close round number, then correct the difference.",
        "Round and adjust: multiply with a rounded base, then fix the leftover part.",
    ),
}
_NEUTRAL = ("Let me solve this multiplication problem step by step.",)

_STYLE_MISMATCH = {
    "OT": (
        "OK so the classic school way, line them up and grind through each column with carries.",
        "Writing it out longhand like a textbook: ones place first, carry whatever spills over.",
        "Old-fashioned stacked multiplication here, digit after digit, keeping track of carries.",
    ),
    "DD": (
        "Easiest is probably to chop one number into pieces, multiply the pieces, glue it back.",
        "Think of it as a sum of chunks: hundreds, tens, ones, each times the other number.",
        "Pull one number apart by its places, handle every piece separately, then total up.",
    ),
    "RC": (
        "Nudge things to a friendly round number first, then patch up whatever got skipped.",
        "Pretend it's a nice round figure, do that product, then fix the error afterwards.",
        "Snap to the nearest tidy base, multiply there, and settle the difference at the end.",
    ),
}


@dataclass(frozen=True)
class TemplateBank:
    templates: dict
    neutral: tuple
    profile: str = "balanced"
    version: str = BANK_VERSION

    def __post_init__(self):
        for h in PROBE_HEURISTICS:
            if not self.templates.get(h):
                raise ValueError(f"template bank lacks paraphrases for {h}")
        if not self.neutral:
            raise ValueError("template bank lacks a neutral baseline")

    @classmethod
    def default(cls, profile: str = "balanced") -> "TemplateBank":
        if profile == "balanced":
            return cls(dict(_BALANCED), _NEUTRAL, "balanced")
        if profile == "style_mismatch":
            return cls(dict(_STYLE_MISMATCH), _NEUTRAL, "style_mismatch")
        raise ValueError(f"unknown bank profile {profile!r}")

    def to_dict(self) -> dict:
        return {
            "profile": self.profile,
            "version": self.version,
            "templates": {h: list(self.templates[h]) for h in PROBE_HEURISTICS},
            "neutral": list(self.neutral),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TemplateBank":
        return cls({h: tuple(v) for h, v in d["templates"].items()}, tuple(d["neutral"]),
                   d.get("profile", "balanced"), d.get("version", BANK_VERSION))

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def length_normalized_loss(losses: TokenLosses) -> float:
    if losses.T < 1:
        raise ValueError("T must be >= 1")
    return math.fsum(losses.losses) / losses.T


def llr(l_h: float, l_0: float, T: int) -> float:
    """-T (l_h - l_0): the log-likelihood ratio when both continuations have T tokens."""
    return -T * (l_h - l_0)


@dataclass(frozen=True)
class LikelihoodScore:
    value: float
    # False: lengths differ, so ``value`` is only a normalized naturalness score.
    exact: bool


def likelihood_score(l_h: float, l_0: float, T_h: int, T_0: int) -> LikelihoodScore:
    if T_h == T_0:
        return LikelihoodScore(llr(l_h, l_0, T_h), True)
    return LikelihoodScore(-(l_h - l_0), False)


def support_vector(losses: dict) -> dict:
    """Normalized exp(-loss) over DD, RC, OT and neutral."""
    vals = np.array([losses[c] for c in SUPPORT_CLASSES], dtype=float)
    w = np.exp(-(vals - vals.min()))
    w /= w.sum()
    return {c: float(x) for c, x in zip(SUPPORT_CLASSES, w)}


def pick_winner(losses: dict) -> str:
    best = min(losses[c] for c in SUPPORT_CLASSES)
    tied = [c for c in TIE_PRIORITY if losses[c] == best]
    if len(tied) > 1:
        log.debug("probe tie at loss %.6g among %s; picking %s", best, tied, tied[0])
    return tied[0]


@dataclass(frozen=True)
class ProbeResult:
    problem_id: str
    representation: str
    losses: dict
    neutral_loss: float
    delta: dict
    winner: str
    support: dict
    within_std: dict
    paraphrase_losses: dict
    token_counts: dict
    target: Optional[str] = None
    family: Optional[str] = None
    bank_profile: str = "balanced"

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "ProbeResult":
        return cls(**{k: d.get(k) for k in cls.__dataclass_fields__})


def score_losses(backend, ctx: ScoringContext, continuations: Sequence[str]) -> list:
    if not getattr(backend, "probe_capable", True):
        raise CapabilityError(f"{getattr(backend, 'name', 'backend')} cannot score forced continuations")
    return [backend.score_continuation(ctx, c) for c in continuations]


def probe_problem(ctx: ScoringContext, bank: TemplateBank, backend, problem_id: Optional[str] = None,
                  representation: Optional[str] = None, target: Optional[str] = None,
                  family: Optional[str] = None) -> ProbeResult:
    """Score every template in ``bank`` after ``ctx`` and summarise."""
    per_class, tcounts = {}, {}
    for cls_name, conts in [(h, bank.templates[h]) for h in PROBE_HEURISTICS] + [(NEUTRAL, bank.neutral)]:
        tl = score_losses(backend, ctx, conts)
        per_class[cls_name] = [length_normalized_loss(x) for x in tl]
        tcounts[cls_name] = [x.T for x in tl]
    # Mean of per-paraphrase normalized losses, not a pooled token mean.
    losses = {c: math.fsum(v) / len(v) for c, v in per_class.items()}
    l0 = losses[NEUTRAL]
    return ProbeResult(
        problem_id=problem_id if problem_id is not None else ctx.meta.get("problem_id", ""),
        representation=representation if representation is not None else ctx.meta.get("representation", ""),
        losses=losses,
        neutral_loss=l0,
        delta={h: losses[h] - l0 for h in PROBE_HEURISTICS},
        winner=pick_winner(losses),
        support=support_vector(losses),
        within_std={h: float(np.std(per_class[h])) for h in PROBE_HEURISTICS},
        paraphrase_losses=per_class,
        token_counts=tcounts,
        target=target,
        family=family,
        bank_profile=bank.profile,
    )


# --- contrastive step probe ----------------------------------------------------------


@dataclass(frozen=True)
class ContrastiveResult:
    problem_id: str
    heuristic: str
    loss_correct: float
    loss_incorrect: float
    representation: str = ""

    @property
    def loss_gap(self) -> float:
        return self.loss_incorrect - self.loss_correct

    @property
    def preference(self) -> bool:
        return self.loss_correct < self.loss_incorrect

    def to_dict(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "heuristic": self.heuristic,
            "representation": self.representation,
            "loss_correct": self.loss_correct,
            "loss_incorrect": self.loss_incorrect,
            "loss_gap": self.loss_gap,
            "preference": self.preference,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ContrastiveResult":
        return cls(d["problem_id"], d["heuristic"], d["loss_correct"], d["loss_incorrect"], d.get("representation", ""))


def contrastive_probe(pair: ContrastivePair, ctx: ScoringContext, backend, representation: str = "") -> ContrastiveResult:
    if pair.correct_step == pair.incorrect_step:
        raise ValueError("contrastive pair has identical correct and incorrect steps")
    good, bad = score_losses(backend, ctx, [pair.correct_step, pair.incorrect_step])
    return ContrastiveResult(pair.problem_id, HeuristicKind(pair.heuristic).value,
                             length_normalized_loss(good), length_normalized_loss(bad),
                             representation or ctx.meta.get("representation", ""))


# --- aggregate reports ---------------------------------------------------------------


def _row(metric: str, representation: str, values: Sequence[float], kind: str = "mean") -> dict:
    vals = list(values)
    n = len(vals)
    if n == 0:
        return {"metric": metric, "representation": representation, "value": None, "se": None, "n": 0}
    v = math.fsum(vals) / n
    se = binomial_se(v, n) if kind == "binomial" else mean_se(vals)
    return {"metric": metric, "representation": representation, "value": v, "se": se, "n": n}


def _by_rep(results: Iterable) -> dict:
    groups = defaultdict(list)
    for r in results:
        groups[r.representation].append(r)
    return {k: sorted(v, key=lambda r: r.problem_id) for k, v in sorted(groups.items())}


def aggregate_probe(results: Sequence[ProbeResult], accuracy: Optional[dict] = None) -> list:
    """Rows of the modality-comparison layout: accuracy, neutral loss, Δloss, target support.

    ``accuracy`` optionally maps representation -> list of 0/1 outcomes.
    Target support averages only resolved items (winner is a heuristic).
    """
    rows = []
    for rep, rs in _by_rep(results).items():
        if accuracy and rep in accuracy:
            rows.append(_row("accuracy", rep, accuracy[rep], "binomial"))
        rows.append(_row("neutral_loss", rep, [r.neutral_loss for r in rs]))
        for h in PROBE_HEURISTICS:
            rows.append(_row(f"delta_loss_{h}", rep, [r.delta[h] for r in rs]))
        for h in PROBE_HEURISTICS:
            resolved = [r.support[h] for r in rs if r.target == h and r.winner != NEUTRAL]
            rows.append(_row(f"target_support_{h}", rep, resolved))
        for c in SUPPORT_CLASSES:
            rows.append(_row(f"winner_share_{c}", rep, [1.0 if r.winner == c else 0.0 for r in rs], "binomial"))
    return rows


def aggregate_contrastive(results: Sequence[ContrastiveResult]) -> list:
    """Preference rates and loss gaps overall and by heuristic, per representation."""
    rows = []
    for rep, rs in _by_rep(results).items():
        rows.append(_row("preference_overall", rep, [1.0 if r.preference else 0.0 for r in rs], "binomial"))
        rows.append(_row("loss_gap_overall", rep, [r.loss_gap for r in rs]))
        for h in PROBE_HEURISTICS:
            hs = [r for r in rs if r.heuristic == h]
            rows.append(_row(f"preference_{h}", rep, [1.0 if r.preference else 0.0 for r in hs], "binomial"))
        for h in PROBE_HEURISTICS:
            hs = [r for r in rs if r.heuristic == h]
            rows.append(_row(f"loss_gap_{h}", rep, [r.loss_gap for r in hs]))
    return rows


def _condition_summary(rs: Sequence[ProbeResult], correct: Optional[dict]) -> dict:
    targeted = [r for r in rs if r.target in PROBE_HEURISTICS]
    match = (sum(r.winner == r.target for r in targeted) / len(targeted)) if targeted else None
    stds = {h: float(np.mean([r.within_std[h] for r in rs])) for h in PROBE_HEURISTICS}
    out = {
        "n": len(rs),
        "match_rate": match,
        "accuracy": None,
        "DD_std": stds["DD"],
        "OT_std": stds["OT"],
        "RC_std": stds["RC"],
        "mean_std": float(np.mean(list(stds.values()))),
    }
    if correct is not None:
        vals = [correct[(r.problem_id, r.representation)] for r in rs if (r.problem_id, r.representation) in correct]
        out["accuracy"] = (sum(vals) / len(vals)) if vals else None
    return out


def style_shift_ablation(balanced: Sequence[ProbeResult], mismatch: Sequence[ProbeResult],
                         correct: Optional[dict] = None) -> dict:
    """Side-by-side summary of two bank profiles over the same problems.

    ``correct`` optionally maps (problem_id, representation) -> bool.
    """
    ka = sorted((r.problem_id, r.representation) for r in balanced)
    kb = sorted((r.problem_id, r.representation) for r in mismatch)
    if ka != kb:
        raise ValueError("ablation conditions cover different problems")
    report = {"representations": {}}
    for rep in sorted({k[1] for k in ka}):
        a = _condition_summary([r for r in balanced if r.representation == rep], correct)
        b = _condition_summary([r for r in mismatch if r.representation == rep], correct)
        delta = {k: (b[k] - a[k]) if isinstance(a[k], float) and isinstance(b[k], float) else None
                 for k in ("match_rate", "accuracy", "DD_std", "OT_std", "RC_std", "mean_std")}
        report["representations"][rep] = {"balanced": a, "style_mismatch": b, "delta": delta}
    return report


def ablation_rows(report: dict) -> list:
    rows = []
    for rep, block in report["representations"].items():
        for cond in ("balanced", "style_mismatch"):
            s = block[cond]
            rows.append({"profile": cond, "representation": rep, **{k: s[k] for k in
                         ("n", "match_rate", "accuracy", "DD_std", "OT_std", "RC_std", "mean_std")}})
    return rows
