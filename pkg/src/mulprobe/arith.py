"""Operands, digit templates, exact schoolbook multiplication and load metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

PAPER_TEMPLATES = ("V", "VV", "VVV", "V0", "V00", "VV0", "V0V")
PAPER_MAX_DIGITS = 32


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 stream for ``seed``; the only RNG used for dataset generation."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class Operand:
    value: int
    digits: tuple[int, ...]
    n_digits: int
    n_nonzero: int

    @classmethod
    def of(cls, value: int) -> "Operand":
        if isinstance(value, Operand):
            return value
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
            raise TypeError(f"operand must be an integer, got {type(value).__name__}")
        value = int(value)
        if value < 0:
            raise ValueError(f"operand must be non-negative, got {value}")
        digits = tuple(int(c) for c in str(value))
        return cls(value, digits, len(digits), sum(1 for d in digits if d))

    @property
    def le_bytes(self) -> bytes:
        return bytes(reversed(self.digits))

    @property
    def trailing_zeros(self) -> int:
        if self.value == 0:
            return 0
        k = 0
        for d in reversed(self.digits):
            if d:
                break
            k += 1
        return k

    def __int__(self) -> int:
        return self.value

    def __str__(self) -> str:
        return str(self.value)


def as_operand(x) -> Operand:
    return x if isinstance(x, Operand) else Operand.of(x)


@dataclass(frozen=True)
class Problem:
    id: str
    a: Operand
    b: Operand
    product: int

    @classmethod
    def make(cls, pid: str, a, b) -> "Problem":
        a, b = as_operand(a), as_operand(b)
        return cls(pid, a, b, exact_multiply(a, b))

    @property
    def key(self) -> str:
        return canonical_key(self.a.value, self.b.value)

    def to_dict(self) -> dict:
        return {"id": self.id, "a": self.a.value, "b": self.b.value, "product": self.product}

    @classmethod
    def from_dict(cls, d: dict) -> "Problem":
        p = cls.make(d["id"], int(d["a"]), int(d["b"]))
        if "product" in d and int(d["product"]) != p.product:
            raise ValueError(f"{d['id']}: stored product {d['product']} != {p.product}")
        return p


def canonical_key(a: int, b: int) -> str:
    """Commutative identity of an operand pair, smaller operand first."""
    a, b = int(a), int(b)
    lo, hi = (a, b) if a <= b else (b, a)
    return f"{lo}×{hi}"


@dataclass(frozen=True)
class DigitTemplate:
    pattern: str

    def __post_init__(self):
        p = self.pattern
        if not p or any(c not in "V0" for c in p):
            raise ValueError(f"invalid digit template {p!r}: use symbols 'V' and '0' only")
        if p[0] != "V":
            raise ValueError(f"invalid digit template {p!r}: first symbol must be 'V'")

    @property
    def in_paper_family(self) -> bool:
        return self.pattern in PAPER_TEMPLATES

    def check(self, paper_mode: bool = True) -> "DigitTemplate":
        if paper_mode:
            if not self.in_paper_family:
                raise ValueError(
                    f"template {self.pattern!r} outside {PAPER_TEMPLATES}; pass paper_mode=False"
                )
            if len(self.pattern) > PAPER_MAX_DIGITS:
                raise ValueError(f"paper mode caps operands at {PAPER_MAX_DIGITS} digits")
        return self


def sample_operand(template, rng: np.random.Generator, paper_mode: bool = True) -> Operand:
    """Draw an operand matching ``template``: V -> digit 1-9, 0 -> 0."""
    if isinstance(template, str):
        template = DigitTemplate(template)
    template.check(paper_mode)
    draws = rng.integers(1, 10, size=len(template.pattern))
    value = 0
    for sym, d in zip(template.pattern, draws):
        value = value * 10 + (int(d) if sym == "V" else 0)
    return Operand.of(value)


def schoolbook(a, b) -> tuple[int, int, int]:
    """(product, multiplication-stage carries, addition-stage carries)."""
    a, b = as_operand(a), as_operand(b)
    digits, mul_c, add_c = kernels.schoolbook(a.le_bytes, b.le_bytes)
    product = int(bytes(d + 48 for d in reversed(digits)).decode("ascii"))
    return product, int(mul_c), int(add_c)


def exact_multiply(a, b) -> int:
    return schoolbook(a, b)[0]


def count_carries(a, b) -> int:
    _, mul_c, add_c = schoolbook(a, b)
    return mul_c + add_c


@dataclass(frozen=True)
class LoadMetrics:
    d_total: int
    d_nonzero: int
    load_C: int
    ot_ops: int
    dd_one_sided: int
    nonzero_products: int
    carry_count: int
    mul_carries: int
    add_carries: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def compute_load(a, b) -> LoadMetrics:
    a, b = as_operand(a), as_operand(b)
    n, m, s, t = a.n_digits, b.n_digits, a.n_nonzero, b.n_nonzero
    _, mul_c, add_c = schoolbook(a, b)
    d_total = n + m
    d_nonzero = s + t
    return LoadMetrics(
        d_total=d_total,
        d_nonzero=d_nonzero,
        load_C=d_total * d_nonzero,
        ot_ops=n * m,
        dd_one_sided=min(m * s, n * t),
        nonzero_products=s * t,
        carry_count=mul_c + add_c,
        mul_carries=mul_c,
        add_carries=add_c,
    )


def load_C(a, b) -> int:
    """Arithmetic load only; skips the carry simulation."""
    a, b = as_operand(a), as_operand(b)
    return (a.n_digits + b.n_digits) * (a.n_nonzero + b.n_nonzero)
