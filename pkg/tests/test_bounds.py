import math

import numpy as np
import pytest
import scipy.linalg as sla

from lindloc.bounds import (
    BoundParams,
    boundary_response,
    bound_rhs,
    commutator_profile,
    derive_params,
    effective_velocity,
    enumerate_paths,
    localization_verdict,
    path_weight_series,
    verify_bound,
)
from lindloc.convex import ConvexBasisSpec
from lindloc.errors import CoverageError, EnumerationBudgetError, MissingParameterError
from lindloc.lattice import ReproducingFunction, build_lattice
from lindloc.lindblad import GraphSpec, build_generator, build_graph_lindblad, dephasing, depolarizing, swap_hopping, xx_hopping
from lindloc.operators import OperatorSum

EXP = ReproducingFunction("exponential", (1.0,))


def test_bound_rhs_examples():
    p = BoundParams(C=1.0, v=1.0, xi=1.0, lam=0.3, mu=0.5)
    assert bound_rhs(p, "localized", 0.0, 2.0) == 0.0
    assert bound_rhs(p, "standard", 3.0, 3.0) == pytest.approx(1.0)
    T, D = np.meshgrid(np.linspace(0, 3, 7), np.arange(5))
    zero_lam = p.replace(lam=0.0)
    np.testing.assert_allclose(bound_rhs(zero_lam, "dissipative", T, D), bound_rhs(zero_lam, "standard", T, D))
    sat = bound_rhs(p, "saturating", 2.0, 1.0)
    assert sat == pytest.approx(math.exp(p.v * (1 - math.exp(-1.0)) / 0.5 - 1.0))


def test_bound_rhs_missing_parameter():
    with pytest.raises(MissingParameterError):
        bound_rhs(BoundParams(C=1.0), "standard", 1.0, 1.0)
    with pytest.raises(ValueError):
        bound_rhs(BoundParams(C=1.0, v=1.0, xi=1.0), "other", 1.0, 1.0)


def test_localized_envelope_monotone_and_clipped():
    p = BoundParams(C=2.0, v=2.0, lam=0.5, mu=0.5)
    t = np.linspace(0, 5, 30)
    vals = bound_rhs(p, "localized", t, 2.0)
    assert np.all(np.diff(vals) > 0)
    assert np.all(np.diff(bound_rhs(p, "localized", 1.0, np.arange(6))) < 0)
    assert np.all(bound_rhs(p.replace(lam=3.0), "localized", t, 2.0) == 0)


def _chain_model(n, l1_rate=0.5, hop=0.5):
    return build_generator([depolarizing(i, l1_rate, split="L1") for i in range(n)]
                           + [swap_hopping(i, i + 1, hop, split="L0") for i in range(n - 1)])


def test_derive_params_depolarizing_with_dephasing():
    lat = build_lattice([3])
    gen = build_generator([depolarizing(i, 1.0, split="L1") for i in range(3)] + [dephasing(1, 0.2, split="L0")])
    p = derive_params(gen, ConvexBasisSpec(), EXP, lat, 0.5, (0,), (2,))
    assert p.lam == pytest.approx(1.0, rel=0.02)
    assert p.c_phi == pytest.approx(0.4)
    # a single one-site term: ||L0||_mu = cb norm / F(0) = 2 * 0.2
    assert p.l0_mu_norm == pytest.approx(0.4, rel=1e-6)
    assert p.v == pytest.approx(p.c_phi * p.l0_mu_norm)
    assert p.xi == pytest.approx(2.0)


def test_derive_params_without_l0_collapses_bound():
    lat = build_lattice([3])
    gen = build_generator([depolarizing(i, split="L1") for i in range(3)])
    p = derive_params(gen, ConvexBasisSpec(), EXP, lat, 0.5, (0,), (2,))
    assert p.v == 0.0
    assert bound_rhs(p, "localized", 3.0, 2.0) == 0.0


def test_profile_zero_cases():
    lat = build_lattice([4])
    gen = _chain_model(4)
    prof = commutator_profile(gen, "Z0", OperatorSum.parse("X0"), [1, 2, 3], [0.0, 0.5], lat)
    assert np.all(prof.values[:, 0] == 0)
    empty = commutator_profile(build_generator([]), "Z0", OperatorSum.parse("X0"), [1, 2, 3], [0.0, 1.0, 2.0], lat)
    assert np.all(empty.values == 0)


def test_profile_rejects_overlap():
    prof = commutator_profile(_chain_model(3), "Z0", OperatorSum.parse("X0"), [0, 1, 2], [0.1], build_lattice([3]))
    assert prof.rejected == (0,)
    assert prof.placements == (1, 2)


def test_profile_against_dense_oracle_xx_chain():
    n = 6
    lat = build_lattice([n])
    gen = build_generator([xx_hopping(i, i + 1) for i in range(n - 1)])
    times = [0.2, 0.8, 1.5, 3.0]
    prof = commutator_profile(gen, "Z0", OperatorSum.parse("Z0"), [5], times, lat)
    sites = tuple(range(n))
    # Heisenberg evolution of a closed system: A(t) = exp(iHt) A exp(-iHt)
    H = sum((OperatorSum.parse(f"0.5 X{i} X{i + 1} + 0.5 Y{i} Y{i + 1}") for i in range(n - 1)), OperatorSum())
    Hd = H.to_dense(sites)
    B = OperatorSum.parse("Z5").to_dense(sites)
    A = OperatorSum.parse("Z0").to_dense(sites)
    for j, t in enumerate(times):
        U = sla.expm(1j * t * Hd)
        At = U @ A @ U.conj().T
        expected = np.linalg.norm(B @ At - At @ B, 2)
        assert prof.values[0, j] == pytest.approx(expected, abs=1e-9)
    # signal reaches distance 5 later than distance 1
    near = commutator_profile(gen, "Z0", OperatorSum.parse("Z0"), [1, 5], [0.3], lat)
    assert near.values[0, 0] > 1e3 * near.values[1, 0]


def test_verify_bound_pass_and_deliberate_fail():
    n = 6
    lat = build_lattice([n])
    gen = _chain_model(n)
    p = derive_params(gen, ConvexBasisSpec(), EXP, lat, 0.5, (0,), (3,))
    prof = commutator_profile(gen, "Z0", OperatorSum.parse("X0"), range(1, n), np.linspace(0, 3, 13), lat)
    assert verify_bound(prof, p).passed
    bad = verify_bound(prof, p.replace(lam=10 * p.lam, v=10 * p.lam + 0.01))
    assert not bad.passed
    assert bad.worst["margin"] < 0
    zero = commutator_profile(build_generator([]), "Z0", OperatorSum.parse("X0"), [1, 2], [0.0, 1.0], lat)
    assert verify_bound(zero, p).passed


def test_localization_verdict_and_coverage():
    lat = build_lattice([5])
    zero = commutator_profile(build_generator([]), "Z0", OperatorSum.parse("X0"), [1, 2, 3, 4], [0.0, 1.0], lat)
    assert localization_verdict(zero, 1e-3, 3, 1.0)
    with pytest.raises(CoverageError):
        localization_verdict(zero, 1e-3, 3, 5.0)
    with pytest.raises(CoverageError):
        localization_verdict(zero, 1e-3, 9, 1.0)


def test_effective_velocity_positive_for_hopping():
    lat = build_lattice([6])
    gen = build_generator([xx_hopping(i, i + 1) for i in range(5)])
    prof = commutator_profile(gen, "Z0", OperatorSum.parse("Z0"), range(1, 6), np.linspace(0, 3, 31), lat)
    fit = effective_velocity(prof)
    assert fit.fit_ok and fit.v_eff > 0


def test_enumerate_paths_pattern():
    supports = [(i, i + 1) for i in range(4)]
    paths = enumerate_paths(supports, [0], [3, 4], 4)
    assert [len(p) for p in paths] == [0, 0, 1, 0]
    assert paths[2][0] == (frozenset({0, 1}), frozenset({1, 2}), frozenset({2, 3}))
    with pytest.raises(EnumerationBudgetError):
        enumerate_paths(supports, [0], [3, 4], 4, budget=1)


def test_path_series_disconnected_is_zero():
    lat = build_lattice([4])
    gen = build_generator([swap_hopping(0, 1, split="L0"), swap_hopping(2, 3, split="L0")])
    ser = path_weight_series(lat, gen, (0,), (3,), 3, EXP, 0.5, 0.1)
    assert ser.total == 0.0 and ser.path_counts == (0, 0, 0)


def test_path_series_single_hop_matches_hand_enumeration():
    lat = build_lattice([2])
    gen = build_generator([swap_hopping(0, 1, split="L0")])
    ser = path_weight_series(lat, gen, (0,), (1,), 1, EXP, 0.0, 0.1, c_phi=1.0, l0_mu_norm=1.0)
    # x0 in B={1}, x1 in Z={0,1}, x2 in A={0}
    F = lambda d: math.exp(-d)  # noqa: E731
    hand = sum(F(abs(1 - z)) * F(abs(z - 0)) for z in (0, 1))
    assert ser.term_weights[0] == pytest.approx(hand)
    assert ser.partial_sums[0] == pytest.approx(0.1 * hand)


def test_path_series_monotone_in_t_and_n():
    lat = build_lattice([5])
    gen = _chain_model(5)
    totals = [path_weight_series(lat, gen, (0,), (3, 4), 3, EXP, 0.5, t, lam=0.5).total for t in (0.1, 0.2, 0.4)]
    assert totals == sorted(totals)
    ser = path_weight_series(lat, gen, (0,), (3, 4), 4, EXP, 0.5, 0.2, lam=0.5)
    assert list(ser.partial_sums) == sorted(ser.partial_sums)


def test_boundary_response_vanishes_at_zero_time():
    gen = _chain_model(4)
    vals = boundary_response(gen, OperatorSum.parse("Z0"), (2, 3), [0.0, 0.1])
    assert vals[0] == 0.0 and vals[1] > 0
    with pytest.raises(ValueError):
        boundary_response(gen, OperatorSum.parse("Z0"), (1, 3), [0.1])


def test_graph_l1_rate_is_below_the_tabulated_value():
    # the fitted mixing rate of the 3-vertex graph dissipator is about 0.64 at unit rate
    lat = build_lattice([3])
    spec = GraphSpec((0, 1, 2), ((0, 1), (1, 2)), alpha="z")
    gen = build_graph_lindblad(spec, split="L1")
    p = derive_params(gen, ConvexBasisSpec(), EXP, lat, 0.5)
    assert 0.5 < p.lam < 1.0
