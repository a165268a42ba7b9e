"""OT / DD / RC cost proxies and minimum-cost target labeling.

Every term of every cost is multiplied by exactly one ``lambda_*`` weight, so
scaling all weights by ``c > 0`` scales every cost (and every margin) by ``c``.
"""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field
from typing import Optional

from .arith import as_operand, count_carries


class HeuristicKind(str, enum.Enum):
    OT = "OT"
    DD = "DD"
    RC = "RC"
    STYLE = "STYLE"

    def __str__(self) -> str:
        return self.value


COST_HEURISTICS = (HeuristicKind.OT, HeuristicKind.DD, HeuristicKind.RC)
DEFAULT_BASES = (25, 50, 100, 200, 250, 500)


@dataclass(frozen=True)
class CostParams:
    lambda_mul: float = 1.0
    lambda_carry: float = 0.25
    lambda_add: float = 0.5
    lambda_base: float = 1.0
    lambda_off: float = 1.0
    lambda_shift: float = 0.75
    margin_min: float = 1.0
    base_set: tuple = DEFAULT_BASES

    def __post_init__(self):
        object.__setattr__(self, "base_set", tuple(int(b) for b in self.base_set))
        for name in ("lambda_mul", "lambda_carry", "lambda_add", "lambda_base", "lambda_off", "lambda_shift"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def scaled(self, c: float) -> "CostParams":
        kw = {k: v * c for k, v in asdict(self).items() if k.startswith("lambda_") or k == "margin_min"}
        return CostParams(base_set=self.base_set, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["base_set"] = list(self.base_set)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CostParams":
        d = dict(d)
        if "base_set" in d:
            d["base_set"] = tuple(d["base_set"])
        return cls(**d)


DEFAULT_PARAMS = CostParams()


def _nd(x: int) -> int:
    return len(str(abs(int(x))))


def _strip(x: int) -> tuple[int, int]:
    if x == 0:
        return 0, 0
    z = 0
    while x % 10 == 0:
        x //= 10
        z += 1
    return x, z


def _carries(a, b) -> int:
    # schoolbook carries depend on which operand is on top; take the cheaper layout
    return min(count_carries(a, b), count_carries(b, a))


def ot_cost(a, b, params: CostParams = DEFAULT_PARAMS) -> float:
    a, b = as_operand(a), as_operand(b)
    return params.lambda_mul * a.n_digits * b.n_digits + params.lambda_carry * _carries(a, b)


def _side(x: int, y: int, params: CostParams) -> float:
    """Expand the non-zero digits of ``x`` against all of ``y``."""
    digits = [int(c) for c in str(x) if c != "0"]
    mults = len(digits) * _nd(y)
    adds = sum(_nd(d * y) for d in digits[1:])
    return params.lambda_mul * mults + params.lambda_add * adds


def _dd_core(x: int, y: int, params: CostParams, parts: dict) -> float:
    x0, zx = _strip(x)
    y0, zy = _strip(y)
    shifts = params.lambda_shift * ((zx > 0) + (zy > 0))
    if x0 == 0 or y0 == 0:
        parts.setdefault("route", "zero")
        return 0.0
    if x0 == 1 or y0 == 1:
        parts.setdefault("route", "power_of_ten" if (zx and x0 == 1) or (zy and y0 == 1) else "identity")
        return shifts
    expand = min(_side(x0, y0, params), _side(y0, x0, params))
    carries = params.lambda_carry * _carries(x0, y0)
    parts.setdefault("route", "trailing_zero" if (zx or zy) else "generic")
    return expand + carries + shifts


def dd_cost(a, b, params: CostParams = DEFAULT_PARAMS, parts: Optional[dict] = None) -> float:
    """One-sided expansion cost, with trailing-zero and quarter-hundred shortcuts."""
    a, b = as_operand(a).value, as_operand(b).value
    parts = {} if parts is None else parts
    main: dict = {}
    best = _dd_core(a, b, params, main)
    route = main["route"]
    for x, y in ((a, b), (b, a)):
        if x and y and x % 25 == 0 and y % 4 == 0:
            q: dict = {}
            c = _dd_core(x // 25, y // 4, params, q) + params.lambda_shift
            if c < best:
                best, route = c, "quarter_hundred"
    parts["route"] = route
    return best


def rc_base_candidates(a: int, b: int, base_set) -> list[int]:
    if not base_set:
        raise ValueError("RC cost needs a non-empty base set")
    dist = {B: abs(a - B) + abs(b - B) for B in base_set}
    best = min(dist.values())
    return sorted(B for B, d in dist.items() if d == best)


def _rc_for_base(a: int, b: int, B: int, params: CostParams) -> float:
    da, db = a - B, b - B
    if da == 0 and db == 0:
        return params.lambda_base
    if da == -db:
        return params.lambda_base + params.lambda_off * _nd(da) ** 2
    work = 0
    terms = 0
    if da:
        work += _nd(da)
        terms += 1
    if db:
        work += _nd(db)
        terms += 1
    if da and db:
        work += _nd(da) * _nd(db)
        terms += 1
    return params.lambda_base + params.lambda_off * work + params.lambda_add * terms


def rc_cost(a, b, params: CostParams = DEFAULT_PARAMS, parts: Optional[dict] = None) -> float:
    a, b = as_operand(a).value, as_operand(b).value
    best_cost, best_base = None, None
    for B in rc_base_candidates(a, b, params.base_set):
        c = _rc_for_base(a, b, B, params)
        if best_cost is None or c < best_cost:
            best_cost, best_base = c, B
    if parts is not None:
        parts["base"] = best_base
        parts["offsets"] = [a - best_base, b - best_base]
        parts["symmetric"] = a - best_base == -(b - best_base) != 0
    return best_cost


@dataclass(frozen=True)
class CostBreakdown:
    ot_cost: float
    dd_cost: float
    rc_cost: float
    rc_base: int
    components: dict = field(default_factory=dict)

    def cost(self, h: HeuristicKind) -> float:
        return {HeuristicKind.OT: self.ot_cost, HeuristicKind.DD: self.dd_cost, HeuristicKind.RC: self.rc_cost}[
            HeuristicKind(h)
        ]

    def to_dict(self) -> dict:
        return {
            "ot_cost": self.ot_cost,
            "dd_cost": self.dd_cost,
            "rc_cost": self.rc_cost,
            "rc_base": self.rc_base,
            "components": self.components,
        }


def cost_breakdown(a, b, params: CostParams = DEFAULT_PARAMS) -> CostBreakdown:
    a, b = as_operand(a), as_operand(b)
    dd_parts: dict = {}
    rc_parts: dict = {}
    ot = ot_cost(a, b, params)
    dd = dd_cost(a, b, params, dd_parts)
    rc = rc_cost(a, b, params, rc_parts)
    comps = {
        "OT": {"digit_products": a.n_digits * b.n_digits, "carries": _carries(a, b)},
        "DD": {"one_sided": min(b.n_digits * a.n_nonzero, a.n_digits * b.n_nonzero), "route": dd_parts["route"]},
        "RC": {"offsets": rc_parts["offsets"], "symmetric": rc_parts["symmetric"]},
    }
    return CostBreakdown(ot, dd, rc, rc_parts["base"], comps)


@dataclass(frozen=True)
class TargetLabel:
    target: HeuristicKind
    margin: float
    runner_up: HeuristicKind


def label_from_costs(costs: CostBreakdown, margin_min: float) -> Optional[TargetLabel]:
    # stable order OT, DD, RC for equal costs; equal costs never pass the margin anyway
    ranked = sorted(COST_HEURISTICS, key=lambda h: costs.cost(h))
    best, second = ranked[0], ranked[1]
    margin = costs.cost(second) - costs.cost(best)
    if margin > margin_min:
        return TargetLabel(best, margin, second)
    return None


def label_target(a, b, margin_min: Optional[float] = None, params: CostParams = DEFAULT_PARAMS) -> Optional[TargetLabel]:
    """Minimum-cost heuristic, if it beats the runner-up by more than ``margin_min``."""
    margin_min = params.margin_min if margin_min is None else margin_min
    if margin_min <= 0:
        raise ValueError("margin_min must be positive")
    return label_from_costs(cost_breakdown(a, b, params), margin_min)
