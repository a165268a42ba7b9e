"""Pure-Python schoolbook kernel; same contract as the compiled ``_kernels``.

Digits are little-endian byte strings (least significant digit first), one
decimal digit (0-9) per byte.
"""


def schoolbook(a_digits, b_digits):
    """Multiply two little-endian digit strings column by column.

    Returns ``(product_digits, mul_carries, add_carries)``. A carry event is
    any digit-position computation whose value reaches 10, both while forming
    a partial-product row and while adding the shifted rows into the running
    total. Rows for zero multiplier digits are skipped.
    """
    n = len(a_digits)
    m = len(b_digits)
    acc = [0] * (n + m + 1)
    acc_len = 0
    mul_carries = 0
    add_carries = 0
    row = [0] * (n + 1)
    for j in range(m):
        d = b_digits[j]
        if d == 0:
            continue
        carry = 0
        for i in range(n):
            p = a_digits[i] * d + carry
            if p >= 10:
                mul_carries += 1
            row[i] = p % 10
            carry = p // 10
        row_len = n
        if carry:
            row[n] = carry
            row_len = n + 1
        while row_len > 1 and row[row_len - 1] == 0:
            row_len -= 1
        if acc_len == 0:
            for i in range(row_len):
                acc[j + i] = row[i]
            acc_len = j + row_len
            continue
        carry = 0
        top = max(acc_len, j + row_len)
        for k in range(j, top):
            r = row[k - j] if k - j < row_len else 0
            s = acc[k] + r + carry
            if s >= 10:
                add_carries += 1
            acc[k] = s % 10
            carry = s // 10
        if carry:
            acc[top] = carry
            top += 1
        acc_len = top
    if acc_len == 0:
        return b"\x00", mul_carries, add_carries
    while acc_len > 1 and acc[acc_len - 1] == 0:
        acc_len -= 1
    return bytes(acc[:acc_len]), mul_carries, add_carries


def nonzero_count(digits):
    return sum(1 for d in digits if d)
