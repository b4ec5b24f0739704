"""The phase-orbit convex hull C: membership, preservation, mixing and graph cases."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import LeakageError
from .evolution import (
    EvolutionMethod,
    SpectralProjector,
    asymptotic_projector,
    propagate,
    transfer_matrix,
)
from .lindblad import GraphSpec, Generator, graph_term, stabilizer
from .operators import (
    LETTERS,
    OperatorSum,
    PauliString,
    as_operator,
    op_norms_of_vectors,
    pauli_mul,
)

LEAK_TOL = 1e-12
GAIN_TOL = 1e-9


@dataclass(frozen=True)
class ConvexBasisSpec:
    """Allowed letters per site; ``default`` applies to sites not in ``per_site``."""

    default: str = "IXYZ"
    per_site: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "default", _letters(self.default))
        items = self.per_site.items() if isinstance(self.per_site, Mapping) else self.per_site
        object.__setattr__(self, "per_site", tuple(sorted((int(s), _letters(l)) for s, l in items)))

    @classmethod
    def diagonal(cls) -> "ConvexBasisSpec":
        return cls("IZ")

    @classmethod
    def full(cls) -> "ConvexBasisSpec":
        return cls("IXYZ")

    def letters(self, site: int) -> str:
        return dict(self.per_site).get(site, self.default)

    def allows(self, p: PauliString) -> bool:
        return all(l in self.letters(s) for s, l in p.letters)

    def indices(self, sites: Sequence[int]) -> np.ndarray:
        """Positions of the allowed strings in the coefficient ordering of ``sites``."""
        allowed = [[LETTERS.index(l) for l in self.letters(s)] for s in sites]
        n = len(sites)
        idx = [sum(d * 4 ** (n - 1 - i) for i, d in enumerate(combo)) for combo in itertools.product(*allowed)]
        return np.array(sorted(idx), dtype=int)

    def multiplicatively_closed(self) -> bool:
        sets = {self.default} | {l for _, l in self.per_site}
        for letters in sets:
            for a, b in itertools.product(letters, repeat=2):
                prod = pauli_mul(PauliString.parse(f"{a}0" if a != "I" else ""),
                                 PauliString.parse(f"{b}0" if b != "I" else ""))
                if prod.letter(0) not in letters:
                    return False
        return True

    def to_json(self) -> dict:
        return {"default": self.default, "per_site": {str(s): l for s, l in self.per_site}}


def _letters(text: str) -> str:
    text = "".join(sorted(set(text.upper().replace("1", "I")), key=LETTERS.index))
    if any(c not in LETTERS for c in text):
        raise ValueError(f"letters must come from I, X, Y, Z; got {text!r}")
    if "I" not in text:
        raise ValueError("every site's letter set must contain the identity")
    return text


@dataclass(frozen=True)
class Membership:
    r: float
    inside: bool


def membership(A, spec: ConvexBasisSpec, tol: float = LEAK_TOL) -> Membership:
    """``r`` is the l1 norm over allowed strings; ``A / r`` then lies in C."""
    A = as_operator(A)
    leaked = {p: c for p, c in A.terms.items() if not spec.allows(p)}
    leak = sum(abs(c) for c in leaked.values())
    if leak > tol:
        worst = max(leaked, key=lambda p: abs(leaked[p]))
        raise LeakageError(leak, worst=worst.label())
    r = sum(abs(c) for p, c in A.terms.items() if spec.allows(p))
    return Membership(float(r), r <= 1 + 1e-12)


# --- preservation -------------------------------------------------------------


@dataclass(frozen=True)
class PreservationReport:
    times: tuple
    max_l1_gain: tuple
    leakage: tuple
    witness: tuple
    passed: bool

    def to_json(self) -> dict:
        return {
            "times": list(self.times),
            "max_l1_gain": list(self.max_l1_gain),
            "leakage": list(self.leakage),
            "witness": list(self.witness),
            "pass": self.passed,
        }


def preservation_check(gen: Generator, spec: ConvexBasisSpec, times: Sequence[float], sites=None,
                       path: str = "auto", method: EvolutionMethod | None = None) -> PreservationReport:
    """Largest l1 coefficient norm of ``exp(tL)[X]`` over allowed strings ``X``.

    ``path="matrix"`` takes column l1 norms of the explicit propagator;
    ``path="strings"`` evolves each string and measures it as an operator sum.
    ``path="terms"`` checks every term on its own support (the default above 5 sites).
    Weight leaving the allowed span is reported separately and fails the check.
    """
    sites = tuple(sorted(gen.sites if sites is None else sites))
    if path == "auto":
        path = "matrix" if len(sites) <= 5 else "terms"
    if path == "terms":
        return _per_term_preservation(gen, spec, times, method)
    tm = transfer_matrix(gen, sites)
    idx = spec.indices(sites)
    mask = np.zeros(tm.dim, dtype=bool)
    mask[idx] = True
    gains, leaks, witness = [], [], []
    if path == "matrix":
        T = tm.dense()
        for t in times:
            E = sla.expm(t * T)[:, idx]
            col = np.abs(E[mask]).sum(axis=0)
            gains.append(float(col.max()))
            leaks.append(float(np.abs(E[~mask]).sum(axis=0).max(initial=0.0)))
            witness.append(tm.basis_label(int(idx[np.argmax(col)])))
    elif path == "strings":
        basis = np.zeros((tm.dim, idx.size))
        basis[idx, np.arange(idx.size)] = 1.0
        evolved = propagate(tm, basis, list(times), method)
        for E in evolved:
            ops = [OperatorSum.from_vector(E[:, j], sites) for j in range(idx.size)]
            col = np.array([sum(abs(c) for p, c in op.terms.items() if spec.allows(p)) for op in ops])
            leak = [sum(abs(c) for p, c in op.terms.items() if not spec.allows(p)) for op in ops]
            gains.append(float(col.max()))
            leaks.append(float(max(leak)))
            witness.append(tm.basis_label(int(idx[np.argmax(col)])))
    else:
        raise ValueError(f"unknown path {path!r}")
    passed = all(g <= 1 + GAIN_TOL for g in gains) and all(l <= LEAK_TOL for l in leaks)
    return PreservationReport(tuple(float(t) for t in times), tuple(gains), tuple(leaks), tuple(witness), passed)


def _per_term_preservation(gen: Generator, spec: ConvexBasisSpec, times, method) -> PreservationReport:
    # Each term checked on its own support; preservation of the sum follows from the
    # Lie-Trotter product formula because the convex set is closed.
    reports = [preservation_check(Generator((t,)), spec, times, t.support, "matrix", method) for t in gen.terms]
    if not reports:
        n = len(times)
        return PreservationReport(tuple(float(t) for t in times), (1.0,) * n, (0.0,) * n, ("I",) * n, True)
    gains, leaks, witness = [], [], []
    for j in range(len(times)):
        best = max(reports, key=lambda r: r.max_l1_gain[j])
        gains.append(best.max_l1_gain[j])
        leaks.append(max(r.leakage[j] for r in reports))
        witness.append(best.witness[j])
    return PreservationReport(reports[0].times, tuple(gains), tuple(leaks), tuple(witness),
                              all(r.passed for r in reports))


# --- sub-stochasticity ----------------------------------------------------------


@dataclass(frozen=True)
class SubstochasticReport:
    passed: bool
    row_sums: tuple
    proof_sums: tuple
    agreement: float

    def to_json(self) -> dict:
        return {"pass": self.passed, "row_sums": list(self.row_sums),
                "proof_sums": list(self.proof_sums), "agreement": self.agreement}


def _hadamard(k: int) -> np.ndarray:
    h = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2)
    out = np.ones((1, 1))
    for _ in range(k):
        out = np.kron(out, h)
    return out


def substochastic_check(T, support_size: int, tol: float = 1e-12) -> SubstochasticReport:
    """Row sums of ``|U^dag T^dag U|`` with ``U = ((Z + X)/sqrt 2)^{(x) k}``.

    Also evaluates ``sum_sigma |<sigma|T|tau>| / 2**k`` over the diagonal
    strings ``tau`` (as +-1 vectors), which must coincide.
    """
    T = np.asarray(T, dtype=float)
    d = 2**support_size
    if T.shape != (d, d):
        raise ValueError(f"expected a {d}x{d} matrix for {support_size} sites, got {T.shape}")
    U = _hadamard(support_size)
    M = np.abs(U.conj().T @ T.conj().T @ U)
    rows = M.sum(axis=1)
    strings = U * np.sqrt(d)  # column s is the +-1 diagonal of the s-th {I,Z} string
    proof = np.abs(strings.T @ T @ strings).sum(axis=0) / d
    return SubstochasticReport(
        bool(np.all(rows <= 1 + tol)),
        tuple(float(r) for r in rows),
        tuple(float(p) for p in proof),
        float(np.abs(rows - proof).max()),
    )


# --- C_phi ---------------------------------------------------------------------------


def c_phi_constant(gen: Generator, spec: ConvexBasisSpec) -> float:
    """``max_{Z, X} ||I_Z[X]||_l1`` over allowed strings on each term's support."""
    best = 0.0
    for term in gen.terms:
        T = term.local_transfer
        sites = term.support
        idx = spec.indices(sites)
        mask = np.zeros(T.shape[0], dtype=bool)
        mask[idx] = True
        cols = T[:, idx]
        leak = np.abs(cols[~mask]).sum(axis=0)
        if leak.size and leak.max() > LEAK_TOL:
            j = int(np.argmax(leak))
            label = OperatorSum.from_vector(np.eye(T.shape[0])[idx[j]], sites)
            raise LeakageError(float(leak[j]), term=term.describe(), string=str(label))
        best = max(best, float(np.abs(cols[mask]).sum(axis=0).max(initial=0.0)))
    return best


# --- mixing rate -------------------------------------------------------------------


@dataclass(frozen=True)
class DecayReport:
    times: tuple
    deviation: tuple
    lambda_fit: float
    fit_residual: float
    fit_window: tuple
    fit_ok: bool

    def to_json(self) -> dict:
        return {
            "times": list(self.times),
            "deviation": list(self.deviation),
            "lambda_fit": self.lambda_fit,
            "fit_residual": self.fit_residual,
            "fit_window": list(self.fit_window),
            "fit_ok": self.fit_ok,
        }


def decay_deviation(gen_L1: Generator, spec: ConvexBasisSpec, times: Sequence[float], sites=None,
                    projector: SpectralProjector | None = None, method: EvolutionMethod | None = None) -> np.ndarray:
    """``max_X ||exp(t L1)[X] - P[X]||`` (operator norm) over allowed strings."""
    sites = tuple(sorted(gen_L1.sites if sites is None else sites))
    tm = transfer_matrix(gen_L1, sites)
    idx = spec.indices(sites)
    basis = np.zeros((tm.dim, idx.size))
    basis[idx, np.arange(idx.size)] = 1.0
    limit = projector.apply_vector(basis) if projector is not None else basis
    evolved = propagate(tm, basis, list(times), method)
    out = []
    for E in evolved:
        out.append(float(op_norms_of_vectors((E - limit).T, tm.n).max(initial=0.0)))
    return np.array(out)


def fit_rate(times, deviation, floor: float = 1e-12):
    """Slope of ``-log deviation`` over the tail half of the latest run above ``floor``."""
    times = np.asarray(times, dtype=float)
    dev = np.asarray(deviation, dtype=float)
    above = np.flatnonzero(dev >= floor)
    if above.size < 2:
        return float("nan"), float("nan"), (), False
    end = start = above[-1]
    while start > 0 and dev[start - 1] >= floor:
        start -= 1
    run = np.arange(start, end + 1)
    tail = run[len(run) // 2:] if len(run) >= 4 else run
    if tail.size < 2:
        return float("nan"), float("nan"), (), False
    ts, ys = times[tail], np.log(dev[tail])
    window = (float(ts[0]), float(ts[-1]))
    if np.ptp(ys) < 1e-14:
        return 0.0, 0.0, window, False
    slope, icpt = np.polyfit(ts, ys, 1)
    resid = float(np.sqrt(np.mean((ys - (slope * ts + icpt)) ** 2)))
    return float(-slope), resid, window, True


def decay_rate(gen_L1: Generator, spec: ConvexBasisSpec, times: Sequence[float], sites=None,
               method: EvolutionMethod | None = None) -> DecayReport:
    times = tuple(float(t) for t in times)
    if not gen_L1.terms:
        dev = np.zeros(len(times))
        return DecayReport(times, tuple(dev), float("nan"), float("nan"), (), False)
    sites = tuple(sorted(gen_L1.sites if sites is None else sites))
    proj = asymptotic_projector(gen_L1, sites)
    dev = decay_deviation(gen_L1, spec, times, sites, proj, method)
    lam, resid, window, ok = fit_rate(times, dev)
    return DecayReport(times, tuple(float(d) for d in dev), lam, resid, window, ok)


# --- graph-state cases -----------------------------------------------------------


@dataclass(frozen=True)
class GraphCase:
    case: int
    sigma_commutes: bool
    stabilizer_commutes: bool
    closed_form: str
    tabulated_form: str


_TABULATED_FORMS = {
    1: "Sigma",
    2: "exp(-lam t) Sigma",
    3: "Sigma P_k + exp(-2 lam t) Sigma (1 - P_k)",
    4: "exp(-lam t) Sigma",
}


def _alpha_string(spec: GraphSpec, k: int) -> PauliString:
    return PauliString(((k, spec.alpha.upper()),))


def classify_graph_case(Sigma, k: int, spec: GraphSpec) -> GraphCase:
    """Case from the commutation of ``Sigma`` with ``sigma_alpha,k`` and with ``U_k``.

    ``closed_form`` is the exact solution for the jump ``P_k sigma_alpha,k``
    at rate ``r``; ``tabulated_form`` is the reference case table in terms of its rate
    ``lam``.
    """
    Sigma = PauliString.parse(Sigma) if isinstance(Sigma, str) else Sigma
    a = Sigma.commutes_with(_alpha_string(spec, k))
    b = Sigma.commutes_with(stabilizer(spec, k))
    case = {(True, True): 1, (True, False): 2, (False, True): 3, (False, False): 4}[(a, b)]
    if spec.alpha == "x":
        third = "Sigma (1 - P_k) + exp(-2 r t) Sigma P_k"
    else:
        third = "Sigma U_k + exp(-r t) (Sigma - Sigma U_k)"
    exact = {1: "Sigma", 2: "exp(-r t / 2) Sigma", 3: third, 4: "exp(-r t / 2) Sigma"}[case]
    return GraphCase(case, a, b, exact, _TABULATED_FORMS[case])


def _stab_op(spec: GraphSpec, k: int) -> OperatorSum:
    return OperatorSum({stabilizer(spec, k): 1.0})


def graph_case_exact(Sigma, k: int, spec: GraphSpec, t: float) -> OperatorSum:
    """Exact ``exp(t L_k)[Sigma]`` for the single vertex term ``k``."""
    Sigma = PauliString.parse(Sigma) if isinstance(Sigma, str) else Sigma
    S = OperatorSum({Sigma: 1.0})
    case = classify_graph_case(Sigma, k, spec).case
    r = spec.rate
    if case == 1:
        return S
    if case in (2, 4):
        return S * np.exp(-r * t / 2)
    U = _stab_op(spec, k)
    if spec.alpha == "x":
        P = (OperatorSum.identity() + U) * 0.5
        return S - S * P + S * P * np.exp(-2 * r * t)
    # Sigma U_k is fixed and Sigma - Sigma U_k decays at rate r
    return S * U + (S - S * U) * np.exp(-r * t)


def graph_case_tabulated(Sigma, k: int, spec: GraphSpec, t: float, lam: float | None = None) -> OperatorSum:
    """The reference case table with rate ``lam`` (default: the term rate)."""
    Sigma = PauliString.parse(Sigma) if isinstance(Sigma, str) else Sigma
    S = OperatorSum({Sigma: 1.0})
    case = classify_graph_case(Sigma, k, spec).case
    lam = spec.rate if lam is None else lam
    if case == 1:
        return S
    if case in (2, 4):
        return S * np.exp(-lam * t)
    one = OperatorSum.identity()
    P = (one + _stab_op(spec, k)) * 0.5
    return S * P + S * (one - P) * np.exp(-2 * lam * t)


def evolve_graph_term(Sigma, k: int, spec: GraphSpec, t: float) -> OperatorSum:
    """Numerical ``exp(t L_k)[Sigma]`` via the dense propagator of the single term."""
    Sigma = PauliString.parse(Sigma) if isinstance(Sigma, str) else Sigma
    term = graph_term(spec, k)
    sites = tuple(sorted(set(term.support) | set(Sigma.support)))
    gen = Generator((term,))
    T = transfer_matrix(gen, sites, sparse=False).dense()
    v = OperatorSum({Sigma: 1.0}).to_vector(sites)
    return OperatorSum.from_vector(sla.expm(t * T) @ v, sites)
