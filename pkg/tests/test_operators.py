import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lindloc.errors import SizeLimitError
from lindloc.lindblad import depolarizing
from lindloc.operators import (
    OperatorSum,
    PauliString,
    SuperOp,
    cb_norm,
    coeffs_to_dense,
    dense_to_coeffs,
    induced_norm,
    l1_coefficient_norm,
    op_norm,
    pauli_mul,
)

pauli_strings = st.lists(st.sampled_from("IXYZ"), min_size=1, max_size=4).map(
    lambda ls: PauliString(tuple((i, l) for i, l in enumerate(ls))))


def test_parse_and_label_round_trip():
    p = PauliString.parse("Z3 X0")
    assert p.support == (0, 3)
    assert p.label() == "X0 Z3"
    assert PauliString.parse("I") == PauliString()


def test_parse_rejects_bad_tokens():
    with pytest.raises(ValueError):
        PauliString.parse("Q1")
    with pytest.raises(ValueError):
        PauliString.parse("X0 Z0")


def test_single_site_product_phase():
    p = pauli_mul(PauliString.parse("X0"), PauliString.parse("Y0"))
    assert p.letters == ((0, "Z"),)
    assert p.phase == 1j


def test_identity_is_neutral():
    a = PauliString.parse("X0 Y2")
    assert pauli_mul(a, PauliString()) == a


def test_two_site_product_against_dense():
    a, b = PauliString.parse("X0 Z1"), PauliString.parse("Y0 Z1")
    p = pauli_mul(a, b)
    assert p.letters == ((0, "Z"),) and p.phase == 1j
    np.testing.assert_allclose(p.to_dense([0, 1]), a.to_dense([0, 1]) @ b.to_dense([0, 1]))


@given(pauli_strings, pauli_strings)
@settings(max_examples=60, deadline=None)
def test_product_matches_dense(a, b):
    sites = list(range(4))
    np.testing.assert_allclose(pauli_mul(a, b).to_dense(sites), a.to_dense(sites) @ b.to_dense(sites), atol=1e-12)


@given(pauli_strings, pauli_strings)
@settings(max_examples=60, deadline=None)
def test_commutes_with_matches_dense(a, b):
    sites = list(range(4))
    A, B = a.to_dense(sites), b.to_dense(sites)
    assert a.commutes_with(b) == np.allclose(A @ B, B @ A)


def test_operator_sum_parse_and_arithmetic():
    A = OperatorSum.parse("0.5 X0 + 0.5 Z1 - 2 I")
    assert A.coefficient("X0") == 0.5
    assert A.coefficient("I") == -2
    B = A * A
    np.testing.assert_allclose(B.to_dense([0, 1]), A.to_dense([0, 1]) @ A.to_dense([0, 1]))
    assert (A - A).is_zero()


def test_dense_round_trip(rng):
    M = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    A = OperatorSum.from_dense(M, [0, 1, 2])
    np.testing.assert_allclose(A.to_dense([0, 1, 2]), M, atol=1e-12)
    np.testing.assert_allclose(coeffs_to_dense(dense_to_coeffs(M, 3), 3), M, atol=1e-12)


def test_json_round_trip():
    A = OperatorSum.parse("0.25 X0 Y1 + 1j Z2")
    assert OperatorSum.from_json(A.to_json()).allclose(A)


def test_op_norm_examples():
    assert op_norm(OperatorSum.parse("X0")) == pytest.approx(1.0)
    assert op_norm(OperatorSum.parse("X0 Z1 + I")) == pytest.approx(2.0)


def test_op_norm_against_svd(rng):
    c = rng.standard_normal(64) + 1j * rng.standard_normal(64)
    A = OperatorSum.from_vector(c, [0, 1, 2])
    assert op_norm(A) == pytest.approx(np.linalg.svd(A.to_dense([0, 1, 2]), compute_uv=False)[0], rel=1e-12)


def test_op_norm_size_limit():
    big = OperatorSum.parse(" ".join(f"X{i}" for i in range(14)))
    with pytest.raises(SizeLimitError):
        op_norm(big)


def test_l1_norm_examples():
    assert l1_coefficient_norm(OperatorSum.parse("X0")) == pytest.approx(1.0)
    assert l1_coefficient_norm(OperatorSum.parse("0.5 Z0 + 0.5 X0")) == pytest.approx(1.0)
    A = OperatorSum({PauliString.parse("Z0 Z1"): 0.3 * np.exp(1j * np.pi / 3), PauliString.parse("X0"): 0.9})
    assert l1_coefficient_norm(A) == pytest.approx(1.2)


def test_superop_ptm_consistency(rng):
    U = np.linalg.qr(rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4)))[0]
    phi = SuperOp.conjugation(U, (0, 1))
    A = OperatorSum.parse("X0 + 0.3 Z1")
    np.testing.assert_allclose(phi.apply(A).to_dense([0, 1]), U @ A.to_dense([0, 1]) @ U.conj().T, atol=1e-12)
    np.testing.assert_allclose(SuperOp.from_ptm((0, 1), phi.ptm).natural, phi.natural, atol=1e-12)


def test_cb_norm_identity_and_unitary(rng):
    assert cb_norm(SuperOp.identity((0,))) == pytest.approx(1.0, abs=1e-6)
    U = np.linalg.qr(rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))[0]
    assert cb_norm(SuperOp.conjugation(U, (0,))) == pytest.approx(1.0, abs=1e-6)


def test_cb_norm_depolarizer_against_random_search():
    # the unit-rate depolarizing term is the map A -> 1/2 Tr[A] 1 - A
    phi = depolarizing(0).superop
    X = np.array([[0, 1], [1, 0]])
    np.testing.assert_allclose(phi.apply_dense(X), -X, atol=1e-12)
    np.testing.assert_allclose(phi.apply_dense(np.eye(2)), np.zeros((2, 2)), atol=1e-12)
    rng = np.random.default_rng(5)
    best = 0.0
    for _ in range(3000):
        M = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        M /= np.linalg.norm(M, 2)
        best = max(best, np.linalg.norm(phi.apply_amplified(M, 2), 2))
    ascent = induced_norm(phi, anc=2)
    value = cb_norm(phi)
    assert value >= max(best, ascent) - 1e-6
    assert value == pytest.approx(max(best, ascent), abs=1e-5)
