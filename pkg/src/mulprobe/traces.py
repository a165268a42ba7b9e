"""Heuristic reasoning traces (RC, DD, OT, STYLE), contrastive step pairs, and
a line-level verifier that re-derives every arithmetic claim from the text.

Trace grammar version: ``GRAMMAR_VERSION``. Changing any line template must
bump it, since forced-completion losses are only comparable within a version.
"""
from __future__ import annotations

import ast
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .arith import Problem, canonical_key, count_carries, exact_multiply, make_rng
from .cost import HeuristicKind

GRAMMAR_VERSION = "1"
TRACE_BASES = (25, 50, 75, 100, 125, 150, 175, 200, 250, 300, 400, 500)
PLACE_NAMES = ("ones", "tens", "hundreds", "thousands", "ten-thousands", "hundred-thousands", "millions")
ORDINALS = ("First", "Second", "Third", "Fourth", "Fifth", "Sixth", "Seventh", "Eighth", "Ninth", "Tenth")


def place_name(k: int) -> str:
    return PLACE_NAMES[k] if k < len(PLACE_NAMES) else f"10^{k}"


def ordinal(k: int) -> str:
    return ORDINALS[k] if k < len(ORDINALS) else f"Partial {k + 1}"


def signed(v: int) -> str:
    return f"{v:+d}"


# --- safe arithmetic evaluation --------------------------------------------

_ALLOWED_BINOPS = (ast.Add, ast.Sub, ast.Mult)
# ast would also accept comments, underscores in literals, etc.
_EXPR_CHARS = re.compile(r"^[0-9\s+\-*()]+$")


def _normalize(expr: str) -> str:
    return expr.replace("×", "*").replace("−", "-").replace("²", "**2").strip()


def eval_expr(expr: str) -> int:
    """Evaluate an integer expression over + - × ² and parentheses."""
    src = _normalize(expr)
    if not _EXPR_CHARS.match(src):
        raise ValueError(f"cannot parse expression {expr!r}")
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse expression {expr!r}") from exc

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and type(node.value) is int:
            return node.value
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp):
            if isinstance(node.op, ast.Pow):
                if not (isinstance(node.right, ast.Constant) and node.right.value == 2):
                    raise ValueError(f"only squares allowed in {expr!r}")
                v = ev(node.left)
                return v * v
            if isinstance(node.op, _ALLOWED_BINOPS):
                left, right = ev(node.left), ev(node.right)
                if isinstance(node.op, ast.Add):
                    return left + right
                if isinstance(node.op, ast.Sub):
                    return left - right
                return left * right
        raise ValueError(f"unsupported syntax in {expr!r}")

    return ev(tree)


# --- data types ----------------------------------------------------------------


@dataclass(frozen=True)
class Assertion:
    line_no: int
    lhs: str
    rhs: str

    def holds(self) -> bool:
        return eval_expr(self.lhs) == eval_expr(self.rhs)


@dataclass
class ReasoningTrace:
    problem_id: str
    heuristic: HeuristicKind
    lines: list
    claimed_answer: int
    assertions: list = field(default_factory=list)

    @property
    def prompt(self) -> str:
        return self.lines[0]

    @property
    def completion(self) -> str:
        return "\n".join(self.lines[1:])

    @property
    def text(self) -> str:
        return "\n".join(self.lines)

    def to_record(self) -> dict:
        return {
            "prompt": self.prompt,
            "completion": self.completion,
            "heuristic": self.heuristic.value,
            "problem_id": self.problem_id,
        }


@dataclass(frozen=True)
class VerifyResult:
    ok: bool
    line_no: Optional[int] = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


# --- line parsing ------------------------------------------------------------------

_HEADER = re.compile(r"^What is (\d+) × (\d+)\?$")
_ANSWER = re.compile(r"^Answer: (-?\d+)$")
_CLOSE = re.compile(r"^(\d+) is close to (\d+) \(difference: ([+-]?\d+)\)\.$")
_SYM = re.compile(r"^(\d+) and (\d+) are symmetric around (\d+) \(offset (\d+)\)\.$")
_DECOMP = re.compile(r"^Let me decompose (\d+) into (.+)\.$")
_STEP = re.compile(r"^Step (\d+): Multiply (\d+) by ([\w^-]+) digit (\d):$")
_DIGIT = re.compile(
    r"^(\d+ × \d+) = (\d+)(?:, plus carry = (\d+))?(?:, write (\d), carry (\d+))?(?:, write (\d+))?\.$"
)
_PARTIAL = re.compile(r"^(\w+|Partial \d+) partial product: (\d+)(?: \(shifted by (\d+) = (\d+)\))?(?: \(digit is zero\))?\.$")


_PROSE = re.compile(r"^[A-Za-z][A-Za-z ]*?\s+(?=[\d(+-])")


def _equality_chain(text: str, line_no: int) -> list:
    parts = [p.strip() for p in text.split("=")]
    if len(parts) < 2 or any(not p for p in parts):
        raise ValueError(f"line {line_no}: malformed equality {text!r}")
    for p in parts:
        try:
            eval_expr(p)
        except ValueError as exc:
            raise ValueError(f"line {line_no}: {exc}") from None
    return [Assertion(line_no, parts[i], parts[i + 1]) for i in range(len(parts) - 1)]


def extract_assertions(lines: list) -> tuple:
    """Return ``(a, b, answer, assertions)`` parsed from trace lines.

    Raises ``ValueError`` naming the line for anything unparseable.
    """
    a = b = answer = None
    out = []
    carry = 0
    step_ctx = None
    for no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        m = _HEADER.match(line)
        if m:
            a, b = int(m.group(1)), int(m.group(2))
            continue
        m = _ANSWER.match(line)
        if m:
            answer = int(m.group(1))
            if a is None:
                raise ValueError(f"line {no}: answer before problem header")
            out.append(Assertion(no, f"{a} × {b}", m.group(1)))
            continue
        m = _CLOSE.match(line)
        if m:
            out.append(Assertion(no, f"{m.group(1)} - {m.group(2)}", m.group(3)))
            continue
        m = _SYM.match(line)
        if m:
            lo, hi, base, k = m.groups()
            out.append(Assertion(no, f"{base} - {k}", lo))
            out.append(Assertion(no, f"{base} + {k}", hi))
            continue
        m = _DECOMP.match(line)
        if m:
            eval_expr(m.group(2))
            out.append(Assertion(no, m.group(2), m.group(1)))
            continue
        m = _STEP.match(line)
        if m:
            _, mcand, place, digit = m.groups()
            names = list(PLACE_NAMES)
            k = names.index(place) if place in names else int(place.split("^")[1])
            step_ctx = (int(mcand), int(digit), k)
            carry = 0
            continue
        m = _DIGIT.match(line)
        if m and step_ctx is not None:
            prod_expr, prod, plus, w, c, w_final = m.groups()
            out.append(Assertion(no, prod_expr, prod))
            value = prod
            if plus is not None:
                out.append(Assertion(no, f"{prod} + {carry}", plus))
                value = plus
            elif carry:
                raise ValueError(f"line {no}: incoming carry {carry} not added")
            if w is not None:
                out.append(Assertion(no, f"10 × {c} + {w}", value))
                carry = int(c)
            else:
                carry = 0
            if w_final is not None:
                out.append(Assertion(no, w_final, value))
            continue
        m = _PARTIAL.match(line)
        if m and step_ctx is not None:
            _, partial, shift, shifted = m.groups()
            mcand, digit, k = step_ctx
            out.append(Assertion(no, f"{mcand} × {digit}", partial))
            if shift is not None:
                if int(shift) != 10 ** k:
                    raise ValueError(f"line {no}: shift {shift} does not match place 10^{k}")
                out.append(Assertion(no, f"{partial} × {shift}", shifted))
            continue
        if "=" in line:
            body = line.rsplit(":", 1)[-1] if ":" in line else line
            body = _PROSE.sub("", body.strip()).rstrip(".")
            out.extend(_equality_chain(body, no))
    return a, b, answer, out


def verify_trace(t: ReasoningTrace) -> VerifyResult:
    try:
        a, b, answer, assertions = extract_assertions(t.lines)
    except ValueError as exc:
        m = re.match(r"line (\d+)", str(exc))
        return VerifyResult(False, int(m.group(1)) if m else None, f"unparseable: {exc}")
    if a is None:
        return VerifyResult(False, 1, "missing problem header")
    if answer is None:
        return VerifyResult(False, len(t.lines), "missing answer line")
    for asr in assertions:
        try:
            ok = asr.holds()
        except ValueError as exc:
            return VerifyResult(False, asr.line_no, f"unparseable: {exc}")
        if not ok:
            return VerifyResult(False, asr.line_no, f"{asr.lhs} != {asr.rhs}")
    if answer != t.claimed_answer:
        return VerifyResult(False, len(t.lines), f"answer line {answer} != claimed {t.claimed_answer}")
    if t.claimed_answer != exact_multiply(a, b):
        return VerifyResult(False, len(t.lines), "claimed answer is not the exact product")
    return VerifyResult(True)


def verify_step(step: str) -> VerifyResult:
    """Check a single ``lhs = rhs`` step line."""
    try:
        assertions = _equality_chain(step.strip().rstrip("."), 1)
    except ValueError as exc:
        return VerifyResult(False, 1, f"unparseable: {exc}")
    for asr in assertions:
        if not asr.holds():
            return VerifyResult(False, 1, f"{asr.lhs} != {asr.rhs}")
    return VerifyResult(True)


def _finish(p: Problem, h: HeuristicKind, lines: list) -> ReasoningTrace:
    lines.append(f"Answer: {p.product}")
    _, _, _, assertions = extract_assertions(lines)
    return ReasoningTrace(p.id, h, lines, p.product, assertions)


def _header(p: Problem) -> str:
    return f"What is {p.a.value} × {p.b.value}?"


# --- RC ------------------------------------------------------------------------


def _is_round(x: int) -> bool:
    if x in TRACE_BASES:
        return True
    nd = len(str(x))
    return nd >= 2 and x % 10 ** (nd - 1) == 0


def round_base(x: int) -> int:
    nd = len(str(x))
    unit = 10 ** max(1, nd - 1)
    lo = (x // unit) * unit
    cands = set(TRACE_BASES) | {c for c in (lo, lo + unit) if c > 0}
    # nearest; ties prefer listed bases, then the larger base
    return min(cands, key=lambda c: (abs(x - c), c not in TRACE_BASES, -c))


def symmetric_base(a: int, b: int) -> Optional[int]:
    if a == b or (a + b) % 2:
        return None
    mid = (a + b) // 2
    return mid if _is_round(mid) else None


def gen_rc_trace(p: Problem) -> ReasoningTrace:
    a, b = p.a.value, p.b.value
    lines = [_header(p), "Let me round to convenient bases and adjust."]
    B = symmetric_base(a, b)
    if B is not None:
        k = abs(a - B)
        lo, hi = min(a, b), max(a, b)
        lines += [
            f"{lo} and {hi} are symmetric around {B} (offset {k}).",
            f"Use the difference of squares: {B}² - {k}².",
            f"{B}² = {B * B}.",
            f"{k}² = {k * k}.",
            f"{B * B} - {k * k} = {p.product}.",
        ]
        return _finish(p, HeuristicKind.RC, lines)
    ba, bb = round_base(a), round_base(b)
    da, db = a - ba, b - bb
    for x, base, d in ((a, ba, da), (b, bb, db)):
        if d:
            lines.append(f"{x} is close to {base} (difference: {signed(d)}).")
        else:
            lines.append(f"{x} is already a round number.")
    start = ba * bb
    lines.append(f"Start with {ba} × {bb} = {start}.")
    terms = []
    if db:
        v = ba * db
        lines.append(f"Adjustment for {a}: {ba} × {db} = {signed(v)}.")
        terms.append(v)
    if da:
        v = da * bb
        lines.append(f"Adjustment for {b}: {da} × {bb} = {signed(v)}.")
        terms.append(v)
    if da and db:
        v = da * db
        lines.append(f"Cross term: {da} × {db} = {signed(v)}.")
        terms.append(v)
    if terms:
        lines.append("Total: " + " + ".join([str(start)] + [f"({signed(v)})" for v in terms]) + f" = {p.product}.")
    return _finish(p, HeuristicKind.RC, lines)


# --- DD ------------------------------------------------------------------------


def dd_split(a: int, b: int) -> Optional[tuple]:
    """(decomposed operand, other operand, high part, low part) or None."""
    order = [(a, b), (b, a)] if a >= b else [(b, a), (a, b)]
    for x, y in order:
        if x < 10:
            continue
        lo = x % 10
        if lo:
            return x, y, x - lo, lo
        s = str(x).rstrip("0")
        if len(s) >= 2:
            unit = 10 ** (len(str(x)) - 1)
            hi = (x // unit) * unit
            return x, y, hi, x - hi
    return None


def gen_dd_trace(p: Problem) -> ReasoningTrace:
    a, b = p.a.value, p.b.value
    lines = [_header(p)]
    split = dd_split(a, b)
    if split is None:
        lines.append(f"{a} × {b} = {p.product}.")
        return _finish(p, HeuristicKind.DD, lines)
    x, y, hi, lo = split
    p1, p2 = hi * y, lo * y
    lines += [
        f"Let me decompose {x} into {hi} + {lo}.",
        f"First compute {hi} × {y}:",
        f"{hi} × {y} = {p1}.",
        f"Then compute {lo} × {y}:",
        f"{lo} × {y} = {p2}.",
        "Now sum the partial products:",
        f"{p1} + {p2} = {p.product}.",
    ]
    return _finish(p, HeuristicKind.DD, lines)


# --- OT ------------------------------------------------------------------------


def ot_partials(a: int, b: int) -> list:
    """(place k, multiplier digit, partial product) for each digit of ``b``."""
    return [(k, int(d), a * int(d)) for k, d in enumerate(reversed(str(b)))]


def gen_ot_trace(p: Problem) -> ReasoningTrace:
    a, b = p.a.value, p.b.value
    lines = [_header(p), "Let me use column multiplication step by step."]
    a_digits = [int(c) for c in reversed(str(a))]
    partials = ot_partials(a, b)
    for k, d, partial in partials:
        lines.append(f"Step {k + 1}: Multiply {a} by {place_name(k)} digit {d}:")
        if d == 0:
            lines.append(f"  {ordinal(k)} partial product: 0 (digit is zero).")
            continue
        carry = 0
        for i, ad in enumerate(a_digits):
            prod = ad * d
            last = i == len(a_digits) - 1
            text = f"  {ad} × {d} = {prod}"
            value = prod + carry
            if carry:
                text += f", plus carry = {value}"
            if not last:
                w, carry = value % 10, value // 10
                text += f", write {w}, carry {carry}" if carry else f", write {w}"
            lines.append(text + ".")
        if k == 0:
            lines.append(f"  {ordinal(k)} partial product: {partial}.")
        else:
            lines.append(f"  {ordinal(k)} partial product: {partial} (shifted by {10 ** k} = {partial * 10 ** k}).")
    shifted = [partial * 10 ** k for k, _, partial in partials if partial]
    if len(partials) > 1:
        lines.append(f"Step {len(partials) + 1}: Add partial products:")
        if len(shifted) > 1:
            lines.append("  " + " + ".join(str(v) for v in shifted) + f" = {p.product}.")
        else:
            lines.append(f"  Only one non-zero partial product: {p.product}.")
    return _finish(p, HeuristicKind.OT, lines)


# --- STYLE ---------------------------------------------------------------------

STYLE_PREAMBLE = (
    "Let me work through this carefully.",
    "Step 1: Identify the two factors.",
    "Step 2: Multiply them together.",
    "Step 3: State the final result.",
)


def gen_style_trace(p: Problem) -> ReasoningTrace:
    return _finish(p, HeuristicKind.STYLE, [_header(p), *STYLE_PREAMBLE])


GENERATORS = {
    HeuristicKind.RC: gen_rc_trace,
    HeuristicKind.DD: gen_dd_trace,
    HeuristicKind.OT: gen_ot_trace,
    HeuristicKind.STYLE: gen_style_trace,
}


def gen_trace(p: Problem, h) -> ReasoningTrace:
    return GENERATORS[HeuristicKind(h)](p)


# --- contrastive steps -------------------------------------------------------------

CORRUPTION_DELTAS = (10, -10, 5, -5, 1, -1)


@dataclass(frozen=True)
class StepTemplate:
    """A step line with ``{}`` slots; ``values`` fill the slots in order."""

    fmt: str
    values: tuple
    editable: tuple  # slot indices that may be corrupted
    signed_slots: tuple = ()

    def render(self, values=None) -> str:
        vals = self.values if values is None else values
        return self.fmt.format(*[signed(v) if i in self.signed_slots else str(v) for i, v in enumerate(vals)])


def step_template(p: Problem, h) -> StepTemplate:
    h = HeuristicKind(h)
    a, b = p.a.value, p.b.value
    if h is HeuristicKind.DD:
        split = dd_split(a, b)
        if split is None:
            return StepTemplate(f"{a} × {b} = {{}}", (p.product,), (0,))
        x, y, hi, lo = split
        return StepTemplate(f"{hi} × {y} + {lo} × {y} = {{}} + {{}}", (hi * y, lo * y), (0, 1))
    if h is HeuristicKind.RC:
        B = symmetric_base(a, b)
        if B is not None:
            k = abs(a - B)
            return StepTemplate(f"{{}} - {{}} = {p.product}", (B * B, k * k), (0, 1))
        ba, bb = round_base(a), round_base(b)
        da, db = a - ba, b - bb
        terms = [v for v in (ba * db, da * bb, da * db) if v]
        if not terms:
            return StepTemplate(f"{ba} × {bb} = {{}}", (p.product,), (0,))
        fmt = "{} + " + " + ".join("({})" for _ in terms) + f" = {p.product}"
        slots = tuple(range(1, len(terms) + 1))
        return StepTemplate(fmt, (ba * bb, *terms), slots, signed_slots=slots)
    if h is HeuristicKind.OT:
        shifted = [partial * 10 ** k for k, _, partial in ot_partials(a, b) if partial]
        if len(shifted) < 2:
            return StepTemplate(f"{a} × {b} = {{}}", (p.product,), (0,))
        fmt = " + ".join("{}" for _ in shifted) + f" = {p.product}"
        return StepTemplate(fmt, tuple(shifted), tuple(range(len(shifted))))
    raise ValueError(f"contrastive pairs need OT, DD or RC, got {h.value}")


def candidate_corruptions(template: StepTemplate) -> list:
    """Every (slot, old, new) single-value edit allowed by the corruption rule."""
    out = []
    for slot in template.editable:
        v = template.values[slot]
        mag = abs(v)
        for delta in CORRUPTION_DELTAS:
            new_mag = mag + delta
            if new_mag < 1 or len(str(new_mag)) != len(str(mag)):
                continue
            new = -new_mag if v < 0 else new_mag
            out.append((slot, v, new))
    return out


@dataclass(frozen=True)
class ContrastivePair:
    problem_id: str
    heuristic: HeuristicKind
    correct_step: str
    incorrect_step: str
    corruption: str

    def to_dict(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "heuristic": self.heuristic.value,
            "correct_step": self.correct_step,
            "incorrect_step": self.incorrect_step,
            "corruption": self.corruption,
        }


def corrupt(template: StepTemplate, slot: int, new: int) -> str:
    vals = list(template.values)
    vals[slot] = new
    return template.render(vals)


def gen_contrastive_pair(p: Problem, h, rng: np.random.Generator) -> ContrastivePair:
    h = HeuristicKind(h)
    template = step_template(p, h)
    cands = candidate_corruptions(template)
    slots = sorted({c[0] for c in cands})
    if not slots:
        raise ValueError(f"{p.id}: no value in the {h.value} step admits a digit-preserving edit")
    slot = slots[int(rng.integers(len(slots)))]
    options = [c for c in cands if c[0] == slot]
    _, old, new = options[int(rng.integers(len(options)))]
    correct = template.render()
    return ContrastivePair(p.id, h, correct, corrupt(template, slot, new), f"{old} -> {new}")


# --- trace corpora -----------------------------------------------------------------


class CandidateExhausted(RuntimeError):
    pass


def _rand_int(rng, nd: int) -> int:
    return int(rng.integers(10 ** (nd - 1), 10 ** nd))


def _draw_rc(rng):
    if rng.random() < 0.25:
        B = TRACE_BASES[int(rng.integers(len(TRACE_BASES)))]
        k = int(rng.integers(1, 6))
        return (B + k, B - k) if rng.random() < 0.5 else (B - k, B + k)
    B = TRACE_BASES[int(rng.integers(len(TRACE_BASES)))]
    offs = [o for o in range(-5, 6) if o]
    return B + offs[int(rng.integers(len(offs)))], B + offs[int(rng.integers(len(offs)))]


def _draw_dd(rng):
    kind = int(rng.integers(3))
    if kind == 0:
        a = _rand_int(rng, 2)
        b = int(rng.integers(1, 10)) * 10 ** int(rng.integers(1, 3))
    elif kind == 1:
        a = _rand_int(rng, 2)
        b = int(rng.integers(2, 10))
    else:
        a, b = _rand_int(rng, 2), _rand_int(rng, 2)
    return (a, b) if rng.random() < 0.5 else (b, a)


def _draw_ot(rng):
    if rng.random() < 0.5:
        while True:
            a, b = _rand_int(rng, int(rng.integers(2, 4))), _rand_int(rng, int(rng.integers(2, 4)))
            if count_carries(a, b) >= 3:
                return a, b
    return _rand_int(rng, int(rng.integers(3, 5))), _rand_int(rng, int(rng.integers(2, 5)))


def _draw_style(rng):
    return (_draw_rc, _draw_dd, _draw_ot)[int(rng.integers(3))](rng)


DRAWERS = {
    HeuristicKind.RC: _draw_rc,
    HeuristicKind.DD: _draw_dd,
    HeuristicKind.OT: _draw_ot,
    HeuristicKind.STYLE: _draw_style,
}


def build_trace_dataset(heuristic, count: int, seed: int, exclusions=frozenset(), max_attempts: Optional[int] = None) -> list:
    """``count`` verified traces on distinct ordered problems outside ``exclusions``."""
    h = HeuristicKind(heuristic)
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = make_rng(seed)
    draw = DRAWERS[h]
    seen = set()
    traces = []
    attempts = 0
    max_attempts = max_attempts or 200 * count
    excluded = 0
    while len(traces) < count:
        attempts += 1
        if attempts > max_attempts:
            raise CandidateExhausted(
                f"{h.value}: found {len(traces)}/{count} problems after {max_attempts} draws "
                f"({excluded} rejected by exclusions)"
            )
        a, b = draw(rng)
        if (a, b) in seen:
            continue
        if canonical_key(a, b) in exclusions:
            excluded += 1
            continue
        seen.add((a, b))
        p = Problem.make(f"{h.value.lower()}_{len(traces):04d}", a, b)
        t = gen_trace(p, h)
        res = verify_trace(t)
        if not res:
            raise AssertionError(f"generated trace failed verification: {p.id} line {res.line_no}: {res.reason}")
        traces.append(t)
    return traces


def split_train_val(traces: list, val_fraction: float = 0.155, seed: int = 0) -> tuple:
    n_val = int(round(len(traces) * val_fraction))
    order = make_rng(seed).permutation(len(traces))
    val_idx = set(int(i) for i in order[:n_val])
    train = [t for i, t in enumerate(traces) if i not in val_idx]
    val = [t for i, t in enumerate(traces) if i in val_idx]
    return train, val
