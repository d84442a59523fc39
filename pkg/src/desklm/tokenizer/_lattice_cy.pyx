# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled lattice kernels.

Line-for-line port of ``_lattice_py`` with C-typed DP state.  The float
operation order is identical to the pure backend, so results are
bit-identical; the equivalence test in the suite enforces that.
"""

import array

from libc.math cimport exp, log1p
from cpython cimport array


cdef double _NEG = -1e300


cdef inline int _utf8_len_cp(Py_UCS4 cp):
    if cp < 0x80:
        return 1
    if cp < 0x800:
        return 2
    if cp < 0x10000:
        return 3
    return 4


def viterbi(unicode text, dict pieces, int max_len, byte_logp):
    """Same contract as _lattice_py.viterbi (see that docstring)."""
    cdef Py_ssize_t n = len(text)
    cdef bint use_bytes = byte_logp is not None
    cdef double b_logp = byte_logp if use_bytes else 0.0

    cdef array.array score_a = array.array('d', bytes(8 * (n + 1)))
    cdef array.array tokens_a = array.array('q', bytes(8 * (n + 1)))
    cdef array.array len_a = array.array('q', bytes(8 * (n + 1)))
    cdef array.array idx_a = array.array('q', bytes(8 * (n + 1)))
    cdef double[::1] best_score = score_a
    cdef long long[::1] best_tokens = tokens_a
    cdef long long[::1] best_len = len_a
    cdef long long[::1] best_idx = idx_a

    cdef Py_ssize_t s, k, nxt, top
    cdef double bs_score, sc
    cdef long long bs_tokens, tk
    cdef long long bs_len, bs_idx
    cdef int nb
    cdef tuple ent
    cdef object got

    best_score[n] = 0.0
    best_tokens[n] = 0
    best_len[n] = 0
    best_idx[n] = -1

    for s in range(n - 1, -1, -1):
        bs_score = _NEG
        bs_tokens = 0
        bs_len = -1
        bs_idx = -1
        if use_bytes:
            nxt = s + 1
            if best_len[nxt] != -1:
                nb = _utf8_len_cp(text[s])
                bs_score = b_logp * nb + best_score[nxt]
                bs_tokens = nb + best_tokens[nxt]
                bs_len = 0
                bs_idx = -1
        top = max_len if max_len < n - s else n - s
        for k in range(1, top + 1):
            nxt = s + k
            if best_len[nxt] == -1:
                continue
            got = pieces.get(text[s:nxt])
            if got is None:
                continue
            ent = <tuple> got
            sc = <double> ent[1] + best_score[nxt]
            tk = 1 + best_tokens[nxt]
            if (sc > bs_score
                    or (sc == bs_score and (tk < bs_tokens
                                            or (tk == bs_tokens and k > bs_len)))):
                bs_score = sc
                bs_tokens = tk
                bs_len = k
                bs_idx = <long long> ent[0]
        best_score[s] = bs_score
        best_tokens[s] = bs_tokens
        best_len[s] = bs_len
        best_idx[s] = bs_idx

    if n and best_len[0] == -1:
        return None
    out = []
    s = 0
    while s < n:
        k = best_len[s]
        if k == 0:
            out.append((s, s + 1, -1))
            s += 1
        else:
            out.append((s, s + k, <long long> best_idx[s]))
            s += k
    return out


cdef inline double _logadd(double a, double b):
    cdef double t
    if a < b:
        t = a
        a = b
        b = t
    if b <= _NEG:
        return a
    return a + log1p(exp(b - a))


def estep(unicode text, dict pieces, int max_len, byte_logp,
          double[::1] counts, double weight):
    """Same contract as _lattice_py.estep (see that docstring)."""
    cdef Py_ssize_t n = len(text)
    if n == 0:
        return 0.0
    cdef bint use_bytes = byte_logp is not None
    cdef double b_logp = byte_logp if use_bytes else 0.0

    cdef array.array alpha_a = array.array('d', bytes(8 * (n + 1)))
    cdef array.array beta_a = array.array('d', bytes(8 * (n + 1)))
    cdef double[::1] alpha = alpha_a
    cdef double[::1] beta = beta_a

    cdef Py_ssize_t e, s, k, top
    cdef double acc, z
    cdef tuple ent
    cdef object got

    for e in range(n + 1):
        alpha[e] = _NEG
    alpha[0] = 0.0
    for e in range(1, n + 1):
        acc = _NEG
        if use_bytes and alpha[e - 1] > _NEG:
            acc = alpha[e - 1] + b_logp * _utf8_len_cp(text[e - 1])
        top = max_len if max_len < e else e
        for k in range(1, top + 1):
            if alpha[e - k] <= _NEG:
                continue
            got = pieces.get(text[e - k:e])
            if got is None:
                continue
            ent = <tuple> got
            acc = _logadd(acc, alpha[e - k] + <double> ent[1])
        alpha[e] = acc
    z = alpha[n]
    if z <= _NEG:
        return None

    for s in range(n + 1):
        beta[s] = _NEG
    beta[n] = 0.0
    for s in range(n - 1, -1, -1):
        acc = _NEG
        if use_bytes and beta[s + 1] > _NEG:
            acc = beta[s + 1] + b_logp * _utf8_len_cp(text[s])
        top = max_len if max_len < n - s else n - s
        for k in range(1, top + 1):
            if beta[s + k] <= _NEG:
                continue
            got = pieces.get(text[s:s + k])
            if got is None:
                continue
            ent = <tuple> got
            acc = _logadd(acc, <double> ent[1] + beta[s + k])
        beta[s] = acc

    for s in range(n):
        if alpha[s] <= _NEG:
            continue
        top = max_len if max_len < n - s else n - s
        for k in range(1, top + 1):
            if beta[s + k] <= _NEG:
                continue
            got = pieces.get(text[s:s + k])
            if got is None:
                continue
            ent = <tuple> got
            counts[<Py_ssize_t> ent[0]] += weight * exp(alpha[s] + <double> ent[1] + beta[s + k] - z)
    return z


def fnv1a64(const unsigned char[::1] data):
    """FNV-1a 64-bit checksum over a bytes-like object."""
    cdef unsigned long long h = 0xCBF29CE484222325ULL
    cdef unsigned long long prime = 0x100000001B3ULL
    cdef Py_ssize_t i
    for i in range(data.shape[0]):
        h = (h ^ data[i]) * prime
    return h
