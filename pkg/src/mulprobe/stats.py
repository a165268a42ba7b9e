"""Accuracy statistics: answer extraction, logistic load curves, error-rate fits, SEs."""
from __future__ import annotations

import logging
import math
import re
from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .words import NUMBER_WORDS, parse_words

log = logging.getLogger(__name__)

IRLS_TOL = 1e-8
IRLS_MAX_ITER = 100
# Cap on |standardized slope|; beyond this the data are treated as separated.
SEPARATION_CAP = 50.0
PROB_EPS = 1e-12


@dataclass(frozen=True)
class AccuracyRecord:
    problem_id: str
    representation: str
    load_C: int
    correct: bool
    extracted_answer: Optional[int] = None
    expected: Optional[int] = None
    carry_ops: Optional[int] = None
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AccuracyRecord":
        return cls(**{k: d.get(k) for k in cls.__dataclass_fields__})


# --- answer extraction ------------------------------------------------------------

_TOKEN = re.compile(r"(?P<num>\d{1,3}(?:,\d{3})+(?![\d,]*\d)|\d+)|(?P<word>[A-Za-z]+(?:-[A-Za-z]+)*)")
_MARKER = re.compile(r"answer\s*(?:is)?\s*[:=]?", re.IGNORECASE)


def _is_number_word(w: str) -> bool:
    return all(part in NUMBER_WORDS for part in w.lower().split("-"))


def _parse_run(words: list) -> Optional[int]:
    # Longest parseable suffix of the run.
    for i in range(len(words)):
        try:
            return parse_words(" ".join(words[i:]))
        except ValueError:
            continue
    return None


def _candidates(text: str) -> list:
    """(start, end, value) for every integer mention, numerals and number words."""
    out = []
    run, run_start, run_end = [], None, None

    def flush():
        if run:
            v = _parse_run(run)
            if v is not None:
                out.append((run_start, run_end, v))

    for m in _TOKEN.finditer(text):
        if m.group("word") and _is_number_word(m.group("word")):
            if run and text[run_end:m.start()].strip() == "":
                run.append(m.group("word"))
            else:
                flush()
                run, run_start = [m.group("word")], m.start()
            run_end = m.end()
            continue
        flush()
        run = []
        if m.group("num"):
            s = m.group("num")
            # Skip decimals such as 3.5.
            if text[m.end():m.end() + 1] == "." and text[m.end() + 1:m.end() + 2].isdigit():
                continue
            if m.start() > 0 and text[m.start() - 1] == "." and m.start() > 1 and text[m.start() - 2].isdigit():
                continue
            out.append((m.start(), m.end(), int(s.replace(",", ""))))
    flush()
    return out


def extract_answer(completion: str, expected_digit_count_hint: Optional[int] = None) -> Optional[int]:
    """Last integer in ``completion``; numerals may use comma grouping, words are accepted.

    Text after an ``Answer:`` marker takes precedence. With a digit-count hint,
    the last candidate of that length is preferred over a later one that is not.
    """
    if not completion:
        return None
    markers = list(_MARKER.finditer(completion))
    if markers:
        tail = completion[markers[-1].end():]
        cands = _candidates(tail)
        if cands:
            return cands[0][2]
    cands = _candidates(completion)
    if not cands:
        return None
    if expected_digit_count_hint:
        sized = [c for c in cands if len(str(c[2])) == expected_digit_count_hint]
        if sized:
            return sized[-1][2]
    return cands[-1][2]


# --- standard errors ---------------------------------------------------------------


def binomial_se(p: float, n: int) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    return math.sqrt(p * (1.0 - p) / n)


def mean_se(values: Sequence[float]) -> float:
    """Sample standard deviation over sqrt(n); 0 for a single value."""
    v = np.asarray(values, dtype=float)
    if v.size < 1:
        raise ValueError("need at least one value")
    if v.size == 1:
        return 0.0
    return float(np.std(v, ddof=1) / math.sqrt(v.size))


def standard_errors(kind: str, data) -> float:
    """``binomial``: ``(p, n)`` or a sequence of 0/1 outcomes. ``mean``: a sequence of values."""
    if kind == "binomial":
        if isinstance(data, tuple) and len(data) == 2 and not isinstance(data[0], bool):
            return binomial_se(float(data[0]), int(data[1]))
        arr = np.asarray(data, dtype=float)
        return binomial_se(float(arr.mean()), int(arr.size))
    if kind == "mean":
        return mean_se(data)
    raise ValueError(f"unknown SE kind {kind!r}")


# --- logistic fit ----------------------------------------------------------------


@dataclass(frozen=True)
class LogisticFit:
    beta0: float
    beta1: float
    c50: Optional[float]
    r2: float
    mcfadden_r2: float
    n: int
    converged: bool
    separated: bool
    iterations: int
    loglik: float

    def predict(self, load) -> np.ndarray:
        z = self.beta0 + self.beta1 * np.asarray(load, dtype=float)
        return np.clip(1.0 / (1.0 + np.exp(-z)), PROB_EPS, 1.0 - PROB_EPS)

    def to_dict(self) -> dict:
        return asdict(self)


def _loglik(y: np.ndarray, p: np.ndarray) -> float:
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return float(np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def irls(x, y, tol: float = IRLS_TOL, max_iter: int = IRLS_MAX_ITER) -> tuple:
    """Newton/IRLS for one predictor plus intercept.

    Returns ``(beta0, beta1, converged, separated, iterations, loglik)`` in the
    original units of ``x``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    mu, sd = float(x.mean()), float(x.std())
    if sd == 0.0:
        sd = 1.0
    xs = (x - mu) / sd
    X = np.column_stack([np.ones(n), xs])
    ybar = float(y.mean())
    if ybar in (0.0, 1.0):
        b0 = SEPARATION_CAP if ybar == 1.0 else -SEPARATION_CAP
        return b0, 0.0, False, True, 0, _loglik(y, np.full(n, ybar))
    beta = np.array([math.log(ybar / (1 - ybar)), 0.0])
    ll = _loglik(y, _sigmoid(X @ beta))
    converged = separated = False
    it = 0
    for it in range(1, max_iter + 1):
        p = _sigmoid(X @ beta)
        w = np.clip(p * (1 - p), 1e-12, None)
        H = X.T @ (X * w[:, None])
        g = X.T @ (y - p)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            separated = True
            break
        new = beta + step
        new_ll = _loglik(y, _sigmoid(X @ new))
        # Step halving keeps the likelihood monotone.
        halvings = 0
        while new_ll < ll - 1e-12 and halvings < 30:
            step /= 2
            new = beta + step
            new_ll = _loglik(y, _sigmoid(X @ new))
            halvings += 1
        beta = new
        if abs(beta[1]) > SEPARATION_CAP:
            beta[1] = math.copysign(SEPARATION_CAP, beta[1])
            separated = True
            ll = new_ll
            break
        if abs(new_ll - ll) < tol:
            ll = new_ll
            converged = True
            break
        ll = new_ll
    b1 = beta[1] / sd
    b0 = beta[0] - beta[1] * mu / sd
    return float(b0), float(b1), converged and not separated, separated, it, _loglik(y, _sigmoid(b0 + b1 * x))


def pearson_r2(pred, y) -> float:
    pred = np.asarray(pred, dtype=float)
    y = np.asarray(y, dtype=float)
    if pred.size < 2 or np.std(pred) == 0.0 or np.std(y) == 0.0:
        return 0.0
    r = float(np.corrcoef(pred, y)[0, 1])
    return min(1.0, max(0.0, r * r))


def mcfadden_r2(loglik: float, y) -> float:
    y = np.asarray(y, dtype=float)
    ybar = float(y.mean())
    if ybar in (0.0, 1.0):
        return 0.0
    ll0 = _loglik(y, np.full(y.size, ybar))
    return min(1.0, max(0.0, 1.0 - loglik / ll0))


def fit_logistic_xy(load, correct) -> LogisticFit:
    x = np.asarray(load, dtype=float)
    y = np.asarray(correct, dtype=float)
    if x.size != y.size:
        raise ValueError("load and outcome arrays differ in length")
    if x.size < 10:
        raise ValueError(f"need at least 10 records, got {x.size}")
    b0, b1, conv, sep, it, ll = irls(x, y)
    pred = np.clip(_sigmoid(b0 + b1 * x), PROB_EPS, 1 - PROB_EPS)
    c50 = -b0 / b1 if b1 != 0.0 else None
    if sep:
        log.warning("logistic fit: data are (quasi-)separated; coefficients capped")
    return LogisticFit(b0, b1, c50, pearson_r2(pred, y), mcfadden_r2(ll, y), int(x.size), conv, sep, it, ll)


def fit_logistic(records: Sequence[AccuracyRecord]) -> LogisticFit:
    return fit_logistic_xy([r.load_C for r in records], [1.0 if r.correct else 0.0 for r in records])


def r_squared(fit: LogisticFit, records: Sequence[AccuracyRecord]) -> tuple:
    """(Pearson R² of predicted vs outcome, McFadden pseudo-R²)."""
    x = np.array([r.load_C for r in records], dtype=float)
    y = np.array([1.0 if r.correct else 0.0 for r in records])
    pred = fit.predict(x)
    return pearson_r2(pred, y), mcfadden_r2(_loglik(y, pred), y)


# --- error-rate model ---------------------------------------------------------------


@dataclass(frozen=True)
class ErrorRateFit:
    p: float
    ops_proxy: str
    n_buckets: int
    excluded_buckets: int

    def to_dict(self) -> dict:
        return asdict(self)


def _ops(r: AccuracyRecord, proxy: str) -> Optional[int]:
    if proxy == "load":
        return r.load_C
    if proxy == "carry":
        return r.carry_ops
    raise ValueError(f"unknown ops proxy {proxy!r}")


def fit_error_rate_grouped(n_ops, accuracy, proxy: str = "load") -> ErrorRateFit:
    """Least squares through the origin for log(acc) = -p * N over bucket means."""
    num = den = 0.0
    used = 0
    dropped = []
    for N, acc in zip(n_ops, accuracy):
        if acc <= 0.0:
            dropped.append(N)
            continue
        num += N * math.log(acc)
        den += N * N
        used += 1
    excluded = len(dropped)
    if dropped:
        log.warning("error-rate fit (%s): %d zero-accuracy bucket(s) excluded: N=%s", proxy, excluded, dropped)
    p = 0.0 if den == 0.0 else -num / den
    return ErrorRateFit(float(min(1.0, max(0.0, p))), proxy, used, excluded)


def fit_error_rate(records: Sequence[AccuracyRecord], ops: str = "load") -> ErrorRateFit:
    buckets: dict = defaultdict(list)
    for r in records:
        N = _ops(r, ops)
        if N is not None:
            buckets[N].append(1.0 if r.correct else 0.0)
    keys = sorted(buckets)
    return fit_error_rate_grouped(keys, [float(np.mean(buckets[k])) for k in keys], ops)


# --- aggregation ------------------------------------------------------------------


def accuracy_summary(records: Sequence[AccuracyRecord]) -> list:
    """One row per representation: n, accuracy, binomial SE, mean load, failures."""
    by_rep: dict = defaultdict(list)
    for r in records:
        by_rep[r.representation].append(r)
    rows = []
    for rep in sorted(by_rep):
        rs = by_rep[rep]
        acc = sum(r.correct for r in rs) / len(rs)
        rows.append({
            "representation": rep,
            "n": len(rs),
            "accuracy": acc,
            "se": binomial_se(acc, len(rs)),
            "mean_load": float(np.mean([r.load_C for r in rs])),
            "errors": sum(1 for r in rs if r.error),
        })
    return rows


def load_bins(loads, n_bins: int = 10) -> np.ndarray:
    """Quantile bin edges over distinct load values."""
    loads = np.asarray(loads, dtype=float)
    edges = np.unique(np.quantile(loads, np.linspace(0, 1, n_bins + 1)))
    if edges.size < 2:
        edges = np.array([loads.min(), loads.min() + 1.0])
    return edges


def plot_data(fit: LogisticFit, records: Sequence[AccuracyRecord], representation: str, n_grid: int = 50,
              n_bins: int = 10) -> list:
    """Rows for external plotting: fitted curve over a load grid plus binned empirical means."""
    x = np.array([r.load_C for r in records], dtype=float)
    y = np.array([1.0 if r.correct else 0.0 for r in records])
    grid = np.linspace(x.min(), x.max(), n_grid)
    rows = [{"representation": representation, "kind": "curve", "load": float(g),
             "predicted": float(fit.predict(g)), "empirical": None, "se": None, "n": None} for g in grid]
    edges = load_bins(x, n_bins)
    idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, edges.size - 2)
    for b in range(edges.size - 1):
        mask = idx == b
        if not mask.any():
            continue
        acc = float(y[mask].mean())
        centre = float(x[mask].mean())
        rows.append({"representation": representation, "kind": "bin", "load": centre,
                     "predicted": float(fit.predict(centre)), "empirical": acc,
                     "se": binomial_se(acc, int(mask.sum())), "n": int(mask.sum())})
    return rows
