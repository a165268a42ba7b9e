# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled schoolbook kernel. Contract mirrors ``_kernels_py``."""

from libc.stdlib cimport malloc, calloc, free


def schoolbook(const unsigned char[:] a_digits, const unsigned char[:] b_digits):
    cdef Py_ssize_t n = a_digits.shape[0]
    cdef Py_ssize_t m = b_digits.shape[0]
    cdef Py_ssize_t i, j, k, top, row_len
    cdef Py_ssize_t acc_len = 0
    cdef long mul_carries = 0
    cdef long add_carries = 0
    cdef unsigned int p, carry, d, r, s
    cdef unsigned char* acc = <unsigned char*>calloc(n + m + 1, 1)
    cdef unsigned char* row = <unsigned char*>calloc(n + 1, 1)
    if acc == NULL or row == NULL:
        free(acc)
        free(row)
        raise MemoryError()
    try:
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
            top = acc_len if acc_len > j + row_len else j + row_len
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
        return (<bytes>acc[:acc_len]), mul_carries, add_carries
    finally:
        free(acc)
        free(row)


def nonzero_count(const unsigned char[:] digits):
    cdef Py_ssize_t i
    cdef long c = 0
    for i in range(digits.shape[0]):
        if digits[i]:
            c += 1
    return c
