"""Local Lindblad generators in the Heisenberg picture.

A term acts as ``I_Z[A] = rate * (sum_R R^dag A R + Q A + A Q^dag)``; the
Hamiltonian convention is ``Q = -1/2 sum R^dag R + i H`` so that a pure
Hamiltonian term gives ``dA/dt = i [H, A]``.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import NonCommutingError, UnitalityError
from .operators import (
    DENSE_LIMIT,
    OperatorSum,
    PauliString,
    SuperOp,
    as_operator,
    cb_norm,
    l1_coefficient_norm,
    op_norm,
)

UNITAL_TOL = 1e-10
COMMUTE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class LindbladTerm:
    support: tuple
    jumps: tuple = ()
    q: OperatorSum = field(default_factory=OperatorSum)
    rate: float = 1.0
    split: str | None = None
    label: str = ""

    def __post_init__(self):
        support = tuple(sorted(set(int(s) for s in self.support)))
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "jumps", tuple(as_operator(j) for j in self.jumps))
        object.__setattr__(self, "q", as_operator(self.q))
        if self.rate < 0:
            raise ValueError("rate must be non-negative")
        if self.split not in (None, "L0", "L1"):
            raise ValueError(f"split must be 'L0' or 'L1', got {self.split!r}")
        ops = list(self.jumps) + [self.q]
        outside = set().union(*(o.support for o in ops)) - set(support)
        if outside:
            raise ValueError(f"term operators act on {sorted(outside)} outside support {support}")

    def residual(self) -> OperatorSum:
        """``rate * (sum R^dag R + Q + Q^dag)``; zero for an individually unital term."""
        acc = self.q + self.q.dagger()
        for R in self.jumps:
            acc = acc + R.dagger() * R
        return acc * self.rate

    def apply(self, A) -> OperatorSum:
        A = as_operator(A)
        out = self.q * A + A * self.q.dagger()
        for R in self.jumps:
            out = out + R.dagger() * A * R
        return out * self.rate

    @cached_property
    def superop(self) -> SuperOp:
        sites = self.support
        d = 2 ** len(sites)
        eye = np.eye(d)
        pairs = [(R.to_dense(sites).conj().T, R.to_dense(sites)) for R in self.jumps]
        Q = self.q.to_dense(sites)
        pairs += [(Q, eye), (eye, Q.conj().T)]
        return SuperOp.from_pairs(sites, [(self.rate * a, b) for a, b in pairs])

    @property
    def local_transfer(self) -> np.ndarray:
        """Heisenberg action on Pauli coefficients over ``support``."""
        return self.superop.ptm

    def cb_norm(self) -> float:
        return cb_norm(self.superop)

    def with_split(self, split):
        return replace(self, split=split)

    def describe(self) -> str:
        return self.label or f"term{self.support}"


@dataclass(frozen=True, eq=False)
class Generator:
    terms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))

    @property
    def sites(self) -> tuple:
        s = set()
        for t in self.terms:
            s.update(t.support)
        return tuple(sorted(s))

    def apply(self, A) -> OperatorSum:
        return apply_generator(self, A)

    def residual(self) -> OperatorSum:
        acc = OperatorSum()
        for t in self.terms:
            acc = acc + t.residual()
        return acc

    @property
    def l0(self) -> "Generator":
        return Generator(tuple(t for t in self.terms if t.split != "L1"))

    @property
    def l1(self) -> "Generator":
        return Generator(tuple(t for t in self.terms if t.split == "L1"))

    def __add__(self, other: "Generator") -> "Generator":
        return Generator(self.terms + other.terms)

    def __len__(self):
        return len(self.terms)

    def scaled(self, factor: float, which: str | None = None) -> "Generator":
        """Multiply rates, optionally only for the ``L0`` or ``L1`` part."""
        return Generator(tuple(
            replace(t, rate=t.rate * factor) if which is None or (t.split or "L0") == which else t
            for t in self.terms
        ))


def _residual_norm(op: OperatorSum) -> float:
    l1 = l1_coefficient_norm(op)
    if l1 <= UNITAL_TOL or len(op.support) > DENSE_LIMIT:
        return l1
    return op_norm(op)


def build_generator(terms: Iterable[LindbladTerm], tol: float = UNITAL_TOL) -> Generator:
    """Collect terms and verify ``L[1] = 0`` globally, warning for non-unital terms."""
    gen = Generator(tuple(terms))
    residual = _residual_norm(gen.residual())
    if residual > tol:
        raise UnitalityError(residual)
    for t in gen.terms:
        r = _residual_norm(t.residual())
        if r > tol:
            warnings.warn(f"{t.describe()} is not individually unital (residual {r:.2e})", stacklevel=2)
    return gen


def apply_generator(gen: Generator, A) -> OperatorSum:
    A = as_operator(A)
    supp = set(A.support)
    out = OperatorSum()
    for t in gen.terms:
        # a term commuting past every string of A contributes t.residual() * A
        if supp & set(t.support) or not t.residual().is_zero():
            out = out + t.apply(A)
    return out


# --- term factories ----------------------------------------------------------


def lindblad_term(support, jumps=(), hamiltonian=None, rate=1.0, split=None, label="") -> LindbladTerm:
    """Term with ``Q = -1/2 sum R^dag R + i H`` (unital by construction)."""
    jumps = tuple(as_operator(j) for j in jumps)
    q = OperatorSum()
    for R in jumps:
        q = q - R.dagger() * R * 0.5
    if hamiltonian is not None:
        q = q + as_operator(hamiltonian) * 1j
    return LindbladTerm(tuple(support), jumps, q, rate, split, label)


def dephasing(site: int, rate: float = 1.0, split=None) -> LindbladTerm:
    return lindblad_term((site,), [f"Z{site}"], rate=rate, split=split, label=f"dephasing[{site}]")


def depolarizing(site: int, rate: float = 1.0, split=None) -> LindbladTerm:
    """``rate * (1/2 Tr_site[A] (x) 1 - A)``."""
    jumps = [OperatorSum.from_string(f"{l}{site}", 0.5) for l in "XYZ"]
    return lindblad_term((site,), jumps, rate=rate, split=split, label=f"depolarizing[{site}]")


def amplitude_damping(site: int, rate: float = 1.0, split=None) -> LindbladTerm:
    lowering = OperatorSum.parse(f"0.5 X{site} + 0.5j Y{site}")
    return lindblad_term((site,), [lowering], rate=rate, split=split, label=f"damping[{site}]")


def swap_operator(i: int, j: int) -> OperatorSum:
    return OperatorSum.parse(f"0.5 I + 0.5 X{i} X{j} + 0.5 Y{i} Y{j} + 0.5 Z{i} Z{j}")


def swap_hopping(i: int, j: int, rate: float = 1.0, split=None) -> LindbladTerm:
    """Random exchange of the two sites: ``rate * (S A S - A)``."""
    return lindblad_term((i, j), [swap_operator(i, j)], rate=rate, split=split, label=f"swap[{i},{j}]")


def xx_hopping(i: int, j: int, strength: float = 1.0, split=None) -> LindbladTerm:
    H = OperatorSum.parse(f"0.5 X{i} X{j} + 0.5 Y{i} Y{j}")
    return lindblad_term((i, j), [], hamiltonian=H, rate=strength, split=split, label=f"xx[{i},{j}]")


def hamiltonian_term(H, rate: float = 1.0, split=None, label="") -> LindbladTerm:
    H = as_operator(H)
    return lindblad_term(H.support, [], hamiltonian=H, rate=rate, split=split, label=label or "hamiltonian")


def random_term(support: Sequence[int], rng: np.random.Generator, n_jumps: int = 2,
                hamiltonian: bool = True, rate: float = 1.0, split=None) -> LindbladTerm:
    support = tuple(support)
    k = len(support)

    def rand_op(hermitian=False):
        c = rng.standard_normal(4**k) + (0 if hermitian else 1j) * rng.standard_normal(4**k)
        return OperatorSum.from_vector(c / np.sqrt(4**k), support)

    jumps = [rand_op() for _ in range(n_jumps)]
    H = rand_op(hermitian=True) if hamiltonian else None
    return lindblad_term(support, jumps, hamiltonian=H, rate=rate, split=split, label=f"random{support}")


# --- graph-state preparation -------------------------------------------------


@dataclass(frozen=True)
class GraphSpec:
    """Graph for the stabiliser dissipators.

    ``alpha`` picks the Pauli ``sigma_alpha`` at vertex ``k`` in the jump
    ``c_k = 1/2 (1 + U_k) sigma_alpha,k``.
    """

    vertices: tuple
    edges: tuple = ()
    alpha: str = "x"
    rate: float = 1.0

    def __post_init__(self):
        verts = tuple(int(v) for v in self.vertices)
        if len(set(verts)) != len(verts):
            raise ValueError("duplicate vertex")
        edges = tuple(tuple(sorted((int(a), int(b)))) for a, b in self.edges)
        for a, b in edges:
            if a == b:
                raise ValueError("self-loop in graph")
            if a not in verts or b not in verts:
                raise ValueError(f"edge ({a}, {b}) references an unknown vertex")
        if self.alpha not in ("x", "y", "z"):
            raise ValueError(f"alpha must be x, y or z, got {self.alpha!r}")
        if self.rate <= 0:
            raise ValueError("rate must be positive")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "edges", tuple(sorted(set(edges))))

    def neighbours(self, k: int) -> tuple:
        out = set()
        for a, b in self.edges:
            if a == k:
                out.add(b)
            elif b == k:
                out.add(a)
        return tuple(sorted(out))


def stabilizer(spec: GraphSpec, k: int) -> PauliString:
    return PauliString(((k, "X"),) + tuple((j, "Z") for j in spec.neighbours(k)))


def stabilizer_ops(spec: GraphSpec) -> list:
    return [stabilizer(spec, k) for k in spec.vertices]


def graph_jump(spec: GraphSpec, k: int) -> OperatorSum:
    U = OperatorSum({stabilizer(spec, k): 1.0})
    P = (OperatorSum.identity() + U) * 0.5
    return P * OperatorSum.from_string(f"{spec.alpha.upper()}{k}")


def graph_term(spec: GraphSpec, k: int, split=None) -> LindbladTerm:
    c = graph_jump(spec, k)
    support = (k,) + spec.neighbours(k)
    return lindblad_term(support, [c], rate=spec.rate, split=split, label=f"graph[{k}]")


def build_graph_lindblad(spec: GraphSpec, split=None) -> Generator:
    return build_generator(graph_term(spec, k, split) for k in spec.vertices)


def graph_state(spec: GraphSpec) -> np.ndarray:
    """State vector of the graph state on ``spec.vertices`` (CZ on |+...+>)."""
    n = len(spec.vertices)
    pos = {v: i for i, v in enumerate(spec.vertices)}
    amps = np.full(2**n, 2 ** (-n / 2), dtype=complex)
    bits = (np.arange(2**n)[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1
    for a, b in spec.edges:
        amps *= (-1.0) ** (bits[:, pos[a]] * bits[:, pos[b]])
    return amps


# --- classical chains -------------------------------------------------------


@dataclass(frozen=True)
class ClassicalChain:
    """Blocks ``(support, T)`` with ``T[i, j]`` the probability of ``i -> j``.

    Rows of every block sum to one; configurations are indexed by the bits
    of the support sites (first site most significant, bit 0 is the ``Z=+1``
    state).
    """

    blocks: tuple

    def __post_init__(self):
        blocks = []
        for support, T in self.blocks:
            support = tuple(int(s) for s in support)
            T = np.array(T, dtype=float)
            d = 2 ** len(support)
            if T.shape != (d, d):
                raise ValueError(f"block on {support} needs a {d}x{d} matrix, got {T.shape}")
            if np.any(T < -1e-12) or np.any(T > 1 + 1e-12):
                raise ValueError(f"block on {support} has entries outside [0, 1]")
            if np.abs(T.sum(axis=1) - 1).max() > 1e-12:
                raise ValueError(f"block on {support} is not stochastic (rows must sum to 1)")
            T.setflags(write=False)
            blocks.append((support, T))
        object.__setattr__(self, "blocks", tuple(blocks))


def _projector_op(i: int, j: int, sites) -> OperatorSum:
    d = 2 ** len(sites)
    E = np.zeros((d, d))
    E[i, j] = 1.0
    return OperatorSum.from_dense(E, sites)


def embed_classical(chain: ClassicalChain, split=None) -> Generator:
    """Jumps ``sqrt(T[i, j]) |j><i|`` per block.

    On diagonal observables ``f`` the generator acts as ``T f - f``, so the
    diagonal span evolves by the classical semigroup.
    """
    terms = []
    for support, T in chain.blocks:
        jumps = [
            _projector_op(j, i, support) * np.sqrt(T[i, j])
            for i, j in itertools.product(range(T.shape[0]), repeat=2)
            if T[i, j] > 0
        ]
        terms.append(lindblad_term(support, jumps, split=split, label=f"classical{support}"))
    return build_generator(terms)


# --- splitting ---------------------------------------------------------------


def _embed_local(local: np.ndarray, local_sites, sites) -> np.ndarray:
    """Dense transfer matrix of a local map on a larger (small) site tuple."""
    k, n = len(local_sites), len(sites)
    pos = [sites.index(s) for s in local_sites]
    rest = [i for i in range(n) if i not in pos]
    T = local.reshape((4,) * (2 * k))
    full = np.einsum(T, list(range(2 * k)), np.eye(4 ** (n - k)).reshape((4,) * (2 * (n - k))),
                     list(range(2 * k, 2 * n)))
    # axis order: out(pos), in(pos), out(rest), in(rest)
    out_axes = [None] * n
    in_axes = [None] * n
    for a, p in enumerate(pos):
        out_axes[p] = a
        in_axes[p] = k + a
    for a, p in enumerate(rest):
        out_axes[p] = 2 * k + a
        in_axes[p] = 2 * k + (n - k) + a
    return full.transpose(out_axes + in_axes).reshape(4**n, 4**n)


def superop_commutator_residual(a: LindbladTerm, b: LindbladTerm) -> float:
    if not set(a.support) & set(b.support):
        return 0.0
    sites = tuple(sorted(set(a.support) | set(b.support)))
    Ta = _embed_local(a.local_transfer, a.support, sites)
    Tb = _embed_local(b.local_transfer, b.support, sites)
    return float(np.abs(Ta @ Tb - Tb @ Ta).max())


def split_generator(gen: Generator, assignment=None, tol: float = COMMUTE_TOL):
    """Return ``(L0, L1)`` after checking that the ``L1`` terms commute.

    ``assignment`` may be a callable ``term -> "L0"|"L1"``, a sequence of
    labels (one per term) or ``None`` to use each term's ``split`` field.
    """
    if assignment is None:
        labels = [t.split or "L0" for t in gen.terms]
    elif callable(assignment):
        labels = [assignment(t) for t in gen.terms]
    else:
        labels = list(assignment)
        if len(labels) != len(gen.terms):
            raise ValueError("assignment must cover every term")
    if any(l not in ("L0", "L1") for l in labels):
        raise ValueError("assignment labels must be 'L0' or 'L1'")
    terms = [t.with_split(l) for t, l in zip(gen.terms, labels)]
    l1 = [t for t in terms if t.split == "L1"]
    for (i, a), (j, b) in itertools.combinations(enumerate(l1), 2):
        res = superop_commutator_residual(a, b)
        if res > tol:
            raise NonCommutingError((a.describe(), b.describe()), res)
    full = Generator(tuple(terms))
    return full.l0, full.l1


def with_split(gen: Generator, assignment) -> Generator:
    l0, l1 = split_generator(gen, assignment)
    return l0 + l1


def remove_terms(gen: Generator, region) -> Generator:
    """Drop the ``L0`` terms whose support meets ``region`` (a site set or predicate).

    Terms without an explicit split count as ``L0``.
    """
    if callable(region):
        hit = lambda t: any(region(s) for s in t.support)
    else:
        region = set(region)
        hit = lambda t: bool(region & set(t.support))
    return Generator(tuple(t for t in gen.terms if t.split == "L1" or not hit(t)))
