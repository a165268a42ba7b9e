import numpy as np
import pytest
from hypothesis import given, strategies as st

from mulprobe import _kernels_py, kernels
from mulprobe.arith import (
    PAPER_TEMPLATES,
    DigitTemplate,
    Operand,
    Problem,
    canonical_key,
    compute_load,
    count_carries,
    exact_multiply,
    load_C,
    make_rng,
    sample_operand,
    schoolbook,
)

try:
    from mulprobe import _kernels as _kernels_c
except ImportError:  # pragma: no cover
    _kernels_c = None


def carry_oracle(a: int, b: int) -> tuple:
    """Row-by-row long multiplication on Python ints, counting positions that reach 10."""
    mul = add = 0
    total_digits = []  # little-endian running total
    for k, bd in enumerate(int(c) for c in reversed(str(b))):
        if bd == 0:
            continue
        row, carry = [], 0
        for ad in (int(c) for c in reversed(str(a))):
            v = ad * bd + carry
            mul += v >= 10
            row.append(v % 10)
            carry = v // 10
        if carry:
            row.append(carry)
        shifted = [0] * k + row
        if not total_digits:
            total_digits = shifted
            continue
        out, carry = [], 0
        for i in range(max(len(total_digits), len(shifted))):
            v = (total_digits[i] if i < len(total_digits) else 0) + (shifted[i] if i < len(shifted) else 0) + carry
            add += v >= 10
            out.append(v % 10)
            carry = v // 10
        if carry:
            out.append(carry)
        total_digits = out
    return mul, add


operands = st.integers(min_value=0, max_value=10 ** 12)


def test_load_examples():
    assert compute_load(47, 36).load_C == 16
    assert compute_load(1632178320, 5683473970).load_C == 360
    assert load_C(47, 36) == 16


def test_load_fields():
    m = compute_load(47, 36)
    assert (m.d_total, m.d_nonzero, m.ot_ops, m.nonzero_products) == (4, 4, 4, 4)
    assert m.carry_count == m.mul_carries + m.add_carries == 4


def test_zero_digits_count_toward_total_only():
    m = compute_load(100, 7)
    assert m.d_total == 4 and m.d_nonzero == 2 and m.load_C == 8


@given(operands, operands)
def test_load_identities(a, b):
    A, B = Operand.of(a), Operand.of(b)
    n, m, s, t = A.n_digits, B.n_digits, A.n_nonzero, B.n_nonzero
    C = compute_load(a, b).load_C
    assert C == n * s + n * t + m * s + m * t
    assert 4 * s * t <= C


@given(operands, operands)
def test_product_and_carries_match_oracle(a, b):
    prod, mul_c, add_c = schoolbook(a, b)
    assert prod == a * b
    assert (mul_c, add_c) == carry_oracle(a, b)


@pytest.mark.skipif(_kernels_c is None, reason="extension not built")
@given(operands, operands)
def test_kernel_parity(a, b):
    x, y = Operand.of(a).le_bytes, Operand.of(b).le_bytes
    assert tuple(_kernels_c.schoolbook(x, y)) == tuple(_kernels_py.schoolbook(x, y))
    assert _kernels_c.nonzero_count(x) == _kernels_py.nonzero_count(x)


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")


def test_carry_example():
    # 47 x 36: rows 282 and 141; every row digit overflows, the addition does not.
    assert carry_oracle(47, 36) == (4, 0)
    assert count_carries(47, 36) == 4


def test_exact_multiply_big():
    a, b = 98765432109876543210, 12345678901234567890
    assert exact_multiply(a, b) == a * b


def test_zero_operand():
    assert schoolbook(0, 12345) == (0, 0, 0)
    assert compute_load(0, 5).load_C == 2 * 1


def test_operand_validation():
    with pytest.raises(ValueError):
        Operand.of(-3)
    with pytest.raises(TypeError):
        Operand.of(2.5)
    with pytest.raises(TypeError):
        Operand.of(True)


def test_trailing_zeros():
    assert Operand.of(1200).trailing_zeros == 2
    assert Operand.of(0).trailing_zeros == 0


def test_canonical_key_commutes():
    assert canonical_key(60, 47) == canonical_key(47, 60) == "47×60"


def test_problem_roundtrip_and_tamper():
    p = Problem.make("x", 47, 36)
    assert Problem.from_dict(p.to_dict()) == p
    with pytest.raises(ValueError):
        Problem.from_dict({"id": "x", "a": 47, "b": 36, "product": 1693})


@pytest.mark.parametrize("bad", ["", "0V", "VX", "v"])
def test_template_validation(bad):
    with pytest.raises(ValueError):
        DigitTemplate(bad)


def test_paper_mode_rejects_other_templates():
    rng = make_rng(0)
    with pytest.raises(ValueError):
        sample_operand("VVVV", rng)
    assert sample_operand("VVVV", rng, paper_mode=False).n_digits == 4


@given(st.sampled_from(PAPER_TEMPLATES), st.integers(0, 2 ** 32))
def test_sample_matches_template(pattern, seed):
    op = sample_operand(pattern, make_rng(seed))
    assert len(op.digits) == len(pattern)
    for sym, d in zip(pattern, op.digits):
        assert (d == 0) if sym == "0" else (1 <= d <= 9)


def test_rng_is_deterministic():
    assert np.array_equal(make_rng(5).integers(0, 100, 10), make_rng(5).integers(0, 100, 10))


def test_spec_trivial_examples():
    m = compute_load(100, 100)
    assert (m.d_total, m.d_nonzero, m.load_C) == (6, 2, 12)
    assert count_carries(11, 11) == 0
    assert exact_multiply(87, 96) == 8352
    assert exact_multiply(399, 399) == 159201


def test_carries_match_oracle_examples():
    for a, b in ((79, 78), (99, 99), (999, 999)):
        assert count_carries(a, b) == sum(carry_oracle(a, b))
    # 9 x 8 = 72 in 79 x 78 is one of the multiplication carries
    assert carry_oracle(79, 78)[0] >= 1


@given(st.integers(0, 999), st.integers(0, 999))
def test_multiply_commutes_and_matches_repeated_addition(a, b):
    total = 0
    for _ in range(b):
        total += a
    assert exact_multiply(a, b) == exact_multiply(b, a) == total


def test_pure_env_selects_fallback():
    import os
    import subprocess
    import sys

    env = dict(os.environ, MULPROBE_PURE="1")
    out = subprocess.run([sys.executable, "-c", "from mulprobe import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
