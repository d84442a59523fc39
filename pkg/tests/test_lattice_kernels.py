"""Bit-equivalence of the pure-Python and compiled lattice kernels."""

import array
import math

import pytest

from desklm.rng import Rng
from desklm.tokenizer import lattice
from desklm.tokenizer._lattice_py import estep as py_estep
from desklm.tokenizer._lattice_py import fnv1a64 as py_fnv
from desklm.tokenizer._lattice_py import viterbi as py_viterbi

cy = pytest.importorskip(
    "desklm.tokenizer._lattice_cy",
    reason="compiled lattice extension not built on this machine")


def _random_workloads(seed, n):
    """Yields (text, piece->(id, logp) map, use_bytes) triples."""
    rng = Rng(seed)
    alphabet = "abcd ไท"
    for _ in range(n):
        raw = {}
        for _ in range(3 + rng.randint(10)):
            k = 1 + rng.randint(4)
            piece = "".join(alphabet[rng.randint(len(alphabet))] for _ in range(k))
            raw[piece] = math.log(rng.uniform() + 1e-3)
        pieces = {p: (j, raw[p]) for j, p in enumerate(sorted(raw))}
        text = "".join(alphabet[rng.randint(len(alphabet))]
                       for _ in range(1 + rng.randint(24)))
        use_bytes = rng.randint(2) == 1
        yield text, pieces, use_bytes


def test_viterbi_bit_identical():
    for text, pieces, use_bytes in _random_workloads(4242, 200):
        blp = -100.0 if use_bytes else None
        a = py_viterbi(text, pieces, 8, blp)
        b = cy.viterbi(text, pieces, 8, blp)
        assert a == b, (text, sorted(pieces), use_bytes)


def test_estep_bit_identical():
    for i, (text, pieces, use_bytes) in enumerate(_random_workloads(777, 200)):
        ca = array.array("d", [0.0]) * len(pieces)
        cb = array.array("d", [0.0]) * len(pieces)
        weight = 1.0 + (i % 3)
        za = py_estep(text, pieces, 8, -100.0 if use_bytes else None, ca, weight)
        zb = cy.estep(text, pieces, 8, -100.0 if use_bytes else None, cb, weight)
        assert (za is None) == (zb is None), text
        if za is not None:
            assert za == zb, (text, za, zb)
        assert ca.tolist() == cb.tolist(), text


def test_fnv1a64_bit_identical():
    rng = Rng(5150)
    assert py_fnv(b"hello") == cy.fnv1a64(b"hello") == 0xA430D84680AABD0B
    for _ in range(100):
        blob = bytes(rng.randint(256) for _ in range(rng.randint(300)))
        assert py_fnv(blob) == cy.fnv1a64(blob)


def test_backend_report():
    names = lattice.backends()
    assert "pure-python" in names
    assert lattice.BACKEND in ("pure-python", "compiled")
