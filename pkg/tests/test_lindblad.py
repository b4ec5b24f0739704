import itertools
import warnings

import numpy as np
import pytest
import scipy.linalg as sla

from conftest import dense_heisenberg
from lindloc.errors import NonCommutingError, UnitalityError
from lindloc.evolution import fixed_point_state
from lindloc.lindblad import (
    ClassicalChain,
    GraphSpec,
    LindbladTerm,
    apply_generator,
    build_generator,
    build_graph_lindblad,
    dephasing,
    depolarizing,
    embed_classical,
    graph_state,
    hamiltonian_term,
    random_term,
    remove_terms,
    split_generator,
    stabilizer_ops,
    swap_hopping,
)
from lindloc.operators import OperatorSum, PauliString, pauli_mul


def test_dephasing_examples():
    gen = build_generator([dephasing(0)])
    assert apply_generator(gen, OperatorSum.identity()).is_zero()
    assert apply_generator(gen, OperatorSum.parse("X0")).allclose(OperatorSum.parse("-2 X0"))


def test_hamiltonian_sign_convention():
    # Heisenberg picture: L[A] = i[H, A]
    gen = build_generator([hamiltonian_term("Z0")])
    out = apply_generator(gen, OperatorSum.parse("X0"))
    assert out.allclose(OperatorSum.parse("-2 Y0"))


def test_empty_generator_is_zero():
    gen = build_generator([])
    assert apply_generator(gen, OperatorSum.parse("X0 Y1")).is_zero()


def test_depolarizer_kills_identity_and_strings():
    gen = build_generator([depolarizing(2)])
    assert apply_generator(gen, OperatorSum.identity()).is_zero()
    assert apply_generator(gen, OperatorSum.parse("Y2 X0")).allclose(OperatorSum.parse("-1 Y2 X0"))


def test_two_site_dephasing_example():
    gen = build_generator([dephasing(0)])
    out = apply_generator(gen, OperatorSum.parse("X0 Z1"))
    assert out.allclose(OperatorSum.parse("-2 X0 Z1"))


def test_non_unital_term_rejected():
    bad = LindbladTerm((0,), (OperatorSum.parse("Z0"),), OperatorSum.parse("0.3 Z0"))
    with pytest.raises(UnitalityError) as info:
        build_generator([bad])
    assert info.value.residual > 0.1


def test_terms_unital_only_jointly_warn():
    a = LindbladTerm((0,), (), OperatorSum.parse("0.5 Z0"))
    b = LindbladTerm((0,), (), OperatorSum.parse("-0.5 Z0"))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        gen = build_generator([a, b])
    assert caught
    assert apply_generator(gen, OperatorSum.parse("X0")).is_zero()


def test_random_generator_against_dense_oracle(rng):
    gen = build_generator([random_term((0, 1), rng), random_term((1, 2), rng, n_jumps=3)])
    sites = (0, 1, 2)
    L = dense_heisenberg(gen, sites)
    for _ in range(5):
        A = OperatorSum.from_vector(rng.standard_normal(64), sites)
        expected = (L @ A.to_dense(sites).reshape(-1)).reshape(8, 8)
        np.testing.assert_allclose(apply_generator(gen, A).to_dense(sites), expected, atol=1e-12)


def test_classical_identity_and_flip():
    ident = embed_classical(ClassicalChain((((0,), np.eye(2)),)))
    assert apply_generator(ident, OperatorSum.parse("Z0")).is_zero()
    flip = embed_classical(ClassicalChain((((0,), [[0, 1], [1, 0]]),)))
    assert apply_generator(flip, OperatorSum.parse("Z0")).allclose(OperatorSum.parse("-2 Z0"))


def test_classical_two_site_matches_markov_semigroup(rng):
    T = rng.random((4, 4))
    T /= T.sum(axis=1, keepdims=True)
    gen = embed_classical(ClassicalChain((((0, 1), T),)))
    sites = (0, 1)
    f = rng.standard_normal(4)
    A = OperatorSum.from_dense(np.diag(f), sites)
    L = dense_heisenberg(gen, sites)
    out = (sla.expm(0.7 * L) @ A.to_dense(sites).reshape(-1)).reshape(4, 4)
    expected = sla.expm(0.7 * (T - np.eye(4))) @ f
    np.testing.assert_allclose(out, np.diag(expected), atol=1e-9)


def test_classical_rejects_non_stochastic():
    with pytest.raises(ValueError):
        ClassicalChain((((0,), [[0.5, 0.4], [0.5, 0.5]]),))


def test_stabilizers():
    assert stabilizer_ops(GraphSpec((0,))) == [PauliString.parse("X0")]
    path = GraphSpec((0, 1, 2), ((0, 1), (1, 2)))
    assert stabilizer_ops(path)[1] == PauliString.parse("Z0 X1 Z2")
    tri = GraphSpec((0, 1, 2), ((0, 1), (1, 2), (0, 2)))
    for a, b in itertools.combinations(stabilizer_ops(tri), 2):
        assert pauli_mul(a, b) == pauli_mul(b, a)


def _state_projector(psi):
    return np.outer(psi, psi.conj())


def test_single_vertex_fixed_point_is_plus_state():
    # alpha = z: the jump moves |-> into |+>
    rep = fixed_point_state(build_graph_lindblad(GraphSpec((0,), alpha="z")))
    plus = np.array([1, 1]) / np.sqrt(2)
    assert rep.unique
    np.testing.assert_allclose(rep.rho_eq, _state_projector(plus), atol=1e-9)


def test_single_vertex_alpha_x_is_degenerate():
    # sigma_x commutes with U = sigma_x, so the jump P sigma_x never leaves the -1 sector
    rep = fixed_point_state(build_graph_lindblad(GraphSpec((0,), alpha="x")))
    assert not rep.unique


def test_two_vertex_fixed_point_is_graph_state():
    spec = GraphSpec((0, 1), ((0, 1),), alpha="z")
    rep = fixed_point_state(build_graph_lindblad(spec))
    psi = np.array([1, 1, 1, -1]) / 2
    np.testing.assert_allclose(graph_state(spec), psi, atol=1e-12)
    assert rep.unique
    np.testing.assert_allclose(rep.rho_eq, _state_projector(psi), atol=1e-9)


def test_graph_stabilizer_expectation_approaches_one(rng):
    spec = GraphSpec((0, 1, 2), ((0, 1), (1, 2)), alpha="z")
    gen = build_graph_lindblad(spec)
    sites = (0, 1, 2)
    L = dense_heisenberg(gen, sites)
    psi = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    rho = _state_projector(psi / np.linalg.norm(psi))
    for U in stabilizer_ops(spec):
        A = U.to_dense(sites).reshape(-1)
        late = (sla.expm(30 * L) @ A).reshape(8, 8)
        assert np.trace(late @ rho).real == pytest.approx(1.0, abs=1e-9)


def test_split_all_l0():
    gen = build_generator([swap_hopping(0, 1), dephasing(1)])
    l0, l1 = split_generator(gen, ["L0", "L0"])
    assert len(l1) == 0 and len(l0) == 2


def test_split_disjoint_depolarizers_commute():
    gen = build_generator([depolarizing(i) for i in range(3)] + [swap_hopping(0, 1)])
    l0, l1 = split_generator(gen, lambda t: "L1" if len(t.support) == 1 else "L0")
    assert len(l1) == 3


def test_split_overlapping_graph_terms_commute():
    gen = build_graph_lindblad(GraphSpec((0, 1, 2), ((0, 1), (1, 2)), alpha="z"))
    l0, l1 = split_generator(gen, ["L1"] * 3)
    assert len(l1) == 3


def test_split_rejects_non_commuting():
    gen = build_generator([dephasing(0), swap_hopping(0, 1)])
    with pytest.raises(NonCommutingError) as info:
        split_generator(gen, ["L1", "L1"])
    assert info.value.residual > 1e-3


def test_remove_terms():
    gen = build_generator([swap_hopping(i, i + 1, split="L0") for i in range(4)]
                          + [depolarizing(i, split="L1") for i in range(5)])
    assert len(remove_terms(gen, set())) == len(gen)
    assert len(remove_terms(gen, set(range(5)))) == 5
    left = remove_terms(gen, {2})
    assert len(left.l0) == 2 and len(left.l1) == 5
