import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lindloc.convex import (
    ConvexBasisSpec,
    c_phi_constant,
    classify_graph_case,
    decay_rate,
    evolve_graph_term,
    fit_rate,
    graph_case_exact,
    graph_case_tabulated,
    membership,
    preservation_check,
    substochastic_check,
)
from lindloc.errors import LeakageError
from lindloc.lindblad import (
    ClassicalChain,
    GraphSpec,
    build_generator,
    build_graph_lindblad,
    dephasing,
    depolarizing,
    embed_classical,
    hamiltonian_term,
    swap_hopping,
)
from lindloc.operators import OperatorSum, PauliString


def test_spec_letters_and_indices():
    spec = ConvexBasisSpec("IZ", {1: "IXYZ"})
    assert spec.letters(0) == "IZ" and spec.letters(1) == "IXYZ"
    assert list(spec.indices((0, 1))) == [0, 1, 2, 3, 12, 13, 14, 15]
    with pytest.raises(ValueError):
        ConvexBasisSpec("XZ")


def test_multiplicative_closure():
    assert ConvexBasisSpec.diagonal().multiplicatively_closed()
    assert ConvexBasisSpec.full().multiplicatively_closed()
    assert not ConvexBasisSpec("IXZ").multiplicatively_closed()


def test_membership_examples():
    assert membership("X0", ConvexBasisSpec()).r == 1.0
    assert membership("X0", ConvexBasisSpec()).inside
    with pytest.raises(LeakageError):
        membership(OperatorSum.parse("0.4 Z0 + 0.4 X0"), ConvexBasisSpec.diagonal())
    m = membership(OperatorSum.parse("X0") * np.exp(-2), ConvexBasisSpec())
    assert m.r == pytest.approx(np.exp(-2)) and m.inside


def test_preservation_depolarizing_passes():
    gen = build_generator([depolarizing(0), depolarizing(1)])
    for path in ("matrix", "strings", "terms"):
        rep = preservation_check(gen, ConvexBasisSpec(), [0.1, 1.0, 5.0], path=path)
        assert rep.passed
        assert max(rep.max_l1_gain) == pytest.approx(1.0)


def test_preservation_flags_non_clifford_rotation():
    # rotation by pi/8 about X mixes Y and Z with cos/sin weights whose moduli sum to > 1
    gen = build_generator([hamiltonian_term("X0", rate=np.pi / 16)])
    rep = preservation_check(gen, ConvexBasisSpec(), [1.0])
    assert not rep.passed
    assert rep.max_l1_gain[0] == pytest.approx(np.cos(np.pi / 8) + np.sin(np.pi / 8))


def test_preservation_reports_leakage():
    gen = build_generator([hamiltonian_term("X0")])
    rep = preservation_check(gen, ConvexBasisSpec.diagonal(), [0.3])
    assert not rep.passed and rep.leakage[0] > 0.1


@pytest.mark.parametrize("alpha", "xyz")
def test_preservation_graph_lindbladian(alpha):
    gen = build_graph_lindblad(GraphSpec((0, 1, 2), ((0, 1), (1, 2)), alpha=alpha))
    assert preservation_check(gen, ConvexBasisSpec(), [0.1, 0.5, 1.0, 5.0]).passed


def test_substochastic_examples():
    rep = substochastic_check(np.eye(2), 1)
    assert rep.passed and rep.row_sums == pytest.approx((1.0, 1.0))
    assert substochastic_check([[0, 1], [1, 0]], 1).passed
    reset = substochastic_check([[1, 0], [1, 0]], 1)
    assert reset.passed and reset.row_sums == pytest.approx((1.0, 1.0))


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_substochastic_criteria_agree(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 3))
    T = rng.random((2**k, 2**k))
    T /= T.sum(axis=1, keepdims=True)
    rep = substochastic_check(T, k)
    assert rep.agreement < 1e-12


def test_substochastic_matches_preservation():
    rng = np.random.default_rng(3)
    for _ in range(10):
        T = rng.random((2, 2))
        T /= T.sum(axis=1, keepdims=True)
        rep = substochastic_check(T, 1)
        gen = embed_classical(ClassicalChain((((0,), T),)))
        pres = preservation_check(gen, ConvexBasisSpec.diagonal(), [0.1, 0.5, 1.0, 5.0])
        if rep.passed:
            assert pres.passed


def test_c_phi_examples():
    assert c_phi_constant(build_generator([]), ConvexBasisSpec()) == 0.0
    assert c_phi_constant(build_generator([dephasing(0)]), ConvexBasisSpec()) == pytest.approx(2.0)
    assert c_phi_constant(build_generator([depolarizing(0)]), ConvexBasisSpec()) == pytest.approx(1.0)
    assert c_phi_constant(build_generator([swap_hopping(0, 1, 0.5)]), ConvexBasisSpec()) == pytest.approx(1.0)


def test_c_phi_leakage():
    with pytest.raises(LeakageError):
        c_phi_constant(build_generator([hamiltonian_term("X0")]), ConvexBasisSpec.diagonal())


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_depolarizing_decay_rate(lam):
    gen = build_generator([depolarizing(0, lam), depolarizing(1, lam)])
    rep = decay_rate(gen, ConvexBasisSpec(), np.linspace(0, 10, 41))
    assert rep.fit_ok
    assert rep.lambda_fit == pytest.approx(lam, rel=0.02)
    np.testing.assert_allclose(rep.deviation, np.exp(-lam * np.array(rep.times)), rtol=1e-8)


def test_zero_l1_decay_is_rejected():
    rep = decay_rate(build_generator([]), ConvexBasisSpec(), [0, 1, 2])
    assert not rep.fit_ok


def test_fit_rate_on_synthetic_data():
    t = np.linspace(0, 20, 81)
    lam, resid, window, ok = fit_rate(t, 3 * np.exp(-0.7 * t))
    assert ok and lam == pytest.approx(0.7) and resid < 1e-10
    # values under the floor are excluded from the fit window
    lam2, _, window2, ok2 = fit_rate(t, np.where(t < 10, np.exp(-3 * t), 0.0))
    assert ok2 and lam2 == pytest.approx(3.0) and window2[1] < 10


def test_classify_examples():
    spec1 = GraphSpec((0,), alpha="x")
    assert classify_graph_case(PauliString(), 0, spec1).case == 1
    assert classify_graph_case("Z0", 0, spec1).case == 4
    path = GraphSpec((0, 1, 2), ((0, 1), (1, 2)), alpha="x")
    # Z0 commutes with X1 and with U_1 = Z0 X1 Z2
    assert classify_graph_case("Z0", 1, path).case == 1
    assert classify_graph_case("Z1", 1, path).case == 4
    assert classify_graph_case("X0", 1, path).case == 2
    # X1 anticommutes with the z jump and commutes with U_1
    assert classify_graph_case("X1", 1, GraphSpec((0, 1, 2), ((0, 1), (1, 2)), alpha="z")).case == 3


def _graphs(n):
    pairs = list(itertools.combinations(range(n), 2))
    for mask in range(2 ** len(pairs)):
        yield tuple(p for i, p in enumerate(pairs) if mask >> i & 1)


@pytest.mark.parametrize("alpha", "xyz")
def test_exact_case_forms_on_three_vertices(alpha):
    worst = 0.0
    for edges in _graphs(3):
        spec = GraphSpec((0, 1, 2), edges, alpha=alpha, rate=0.8)
        for letters in itertools.product("IXYZ", repeat=3):
            S = PauliString(tuple((i, l) for i, l in enumerate(letters) if l != "I"))
            for k in range(3):
                num = evolve_graph_term(S, k, spec, 0.9)
                worst = max(worst, np.abs((num - graph_case_exact(S, k, spec, 0.9)).to_vector((0, 1, 2))).max())
                assert membership(num, ConvexBasisSpec()).r <= 1 + 1e-9
    assert worst < 1e-8


def test_tabulated_forms_disagree_for_anticommuting_strings():
    spec = GraphSpec((0, 1), ((0, 1),), alpha="x")
    S = PauliString.parse("Z0")  # anticommutes with X0 and with U_0 = X0 Z1: case 4
    num = evolve_graph_term(S, 0, spec, 1.0)
    assert num.allclose(graph_case_exact(S, 0, spec, 1.0))
    assert not num.allclose(graph_case_tabulated(S, 0, spec, 1.0), atol=1e-3)
    # with the rate halved the case-4 entry of the table is recovered
    assert num.allclose(graph_case_tabulated(S, 0, spec, 1.0, lam=0.5))
