"""Pauli-string operator algebra, dense realisations and the norms used by the bounds.

Operators on a set of qubit sites are expanded in the plain (unnormalised)
Pauli product basis.  A coefficient vector over an ordered site tuple
``sites`` uses the letter index ``I=0, X=1, Y=2, Z=3`` with the first site as
the most significant base-4 digit; dense matrices use the matching Kronecker
order.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import SizeLimitError

LETTERS = "IXYZ"
PRUNE_TOL = 1e-14
DENSE_LIMIT = 12

PAULIS = np.array(
    [
        [[1, 0], [0, 1]],
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)


def _single_products():
    table = {}
    for a, pa in enumerate(PAULIS):
        for b, pb in enumerate(PAULIS):
            prod = pa @ pb
            for c, pc in enumerate(PAULIS):
                phase = np.trace(pc.conj().T @ prod) / 2
                if abs(phase) > 0.5:
                    table[LETTERS[a], LETTERS[b]] = (complex(np.round(phase)), LETTERS[c])
    return table


_PRODUCT = _single_products()
_TOKEN = re.compile(r"^([IXYZ])(\d+)$")


@dataclass(frozen=True)
class PauliString:
    """Phase times a tensor product of single-site Paulis.

    ``letters`` is a tuple of ``(site, letter)`` pairs sorted by site with
    identity sites omitted.
    """

    letters: tuple = ()
    phase: complex = 1.0

    def __post_init__(self):
        if abs(abs(self.phase) - 1.0) > 1e-12:
            raise ValueError(f"phase must have unit modulus, got {self.phase}")
        items = sorted((int(s), str(l)) for s, l in self.letters if l != "I")
        sites = [s for s, _ in items]
        if len(set(sites)) != len(sites):
            raise ValueError("duplicate site in Pauli string")
        for _, l in items:
            if l not in "XYZ":
                raise ValueError(f"unknown Pauli letter {l!r}")
        object.__setattr__(self, "letters", tuple(items))
        object.__setattr__(self, "phase", complex(self.phase))

    @classmethod
    def from_dict(cls, letters: Mapping[int, str], phase: complex = 1.0) -> "PauliString":
        return cls(tuple(letters.items()), phase)

    @classmethod
    def parse(cls, text: str) -> "PauliString":
        """Parse ``"X0 Z3"``; ``"I"`` or ``""`` is the identity."""
        letters = []
        for tok in text.replace("*", " ").split():
            if tok == "I":
                continue
            m = _TOKEN.match(tok)
            if not m:
                raise ValueError(f"bad Pauli token {tok!r} in {text!r}")
            letters.append((int(m.group(2)), m.group(1)))
        return cls(tuple(letters))

    @property
    def support(self) -> tuple:
        return tuple(s for s, _ in self.letters)

    def letter(self, site: int) -> str:
        for s, l in self.letters:
            if s == site:
                return l
        return "I"

    @property
    def key(self) -> "PauliString":
        """The phase-stripped canonical string."""
        if self.phase == 1:
            return self
        return PauliString(self.letters)

    def shifted(self, offset: int) -> "PauliString":
        return PauliString(tuple((s + offset, l) for s, l in self.letters), self.phase)

    def label(self) -> str:
        return " ".join(f"{l}{s}" for s, l in self.letters) or "I"

    def __str__(self):
        if self.phase == 1:
            return self.label()
        return f"({self.phase:g}) {self.label()}"

    def __mul__(self, other):
        if isinstance(other, PauliString):
            return pauli_mul(self, other)
        return NotImplemented

    def to_dense(self, sites: Sequence[int] | None = None) -> np.ndarray:
        sites = tuple(self.support if sites is None else sites)
        missing = set(self.support) - set(sites)
        if missing:
            raise ValueError(f"sites {sorted(missing)} not in realisation site list")
        out = np.array([[self.phase]], dtype=complex)
        for s in sites:
            out = np.kron(out, PAULIS[LETTERS.index(self.letter(s))])
        return out

    def commutes_with(self, other: "PauliString") -> bool:
        anti = sum(
            1 for s, l in self.letters if other.letter(s) not in ("I", l)
        )
        return anti % 2 == 0


def pauli_mul(a: PauliString, b: PauliString) -> PauliString:
    phase = a.phase * b.phase
    letters = dict(a.letters)
    for s, lb in b.letters:
        la = letters.get(s, "I")
        p, lc = _PRODUCT[la, lb]
        phase *= p
        letters[s] = lc
    return PauliString(tuple(letters.items()), phase)


def _split_terms(text: str):
    chunks, depth, start = [], 0, 0
    for i, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch in "+-" and depth == 0 and i > start:
            prev = text[:i].rstrip()
            if prev and prev[-1] not in "eE*(":
                chunks.append(text[start:i])
                start = i
    chunks.append(text[start:])
    return [c.strip() for c in chunks if c.strip()]


class OperatorSum:
    """Complex linear combination of phase-stripped Pauli strings.

    Treat instances as immutable; every operation returns a new object.
    """

    def __init__(self, terms: Mapping[PauliString, complex] | None = None):
        acc: dict = {}
        for p, c in (terms or {}).items():
            k = p.key
            acc[k] = acc.get(k, 0) + complex(c) * p.phase
        self.terms = {k: v for k, v in acc.items() if abs(v) > PRUNE_TOL}

    @classmethod
    def from_string(cls, p: PauliString | str, coeff: complex = 1.0) -> "OperatorSum":
        if isinstance(p, str):
            p = PauliString.parse(p)
        return cls({p: coeff})

    @classmethod
    def identity(cls, coeff: complex = 1.0) -> "OperatorSum":
        return cls({PauliString(): coeff})

    @classmethod
    def parse(cls, text: str) -> "OperatorSum":
        """Parse expressions such as ``"0.5 X0 Z1 - (0.1+2j) Y2 + I"``."""
        out = {}
        for chunk in _split_terms(text.strip()):
            sign = 1.0
            if chunk[0] in "+-":
                sign = -1.0 if chunk[0] == "-" else 1.0
                chunk = chunk[1:].strip()
            tokens = chunk.replace("*", " ").split()
            coeff = 1.0
            if tokens and tokens[0] != "I" and not _TOKEN.match(tokens[0]):
                coeff = complex(tokens[0].strip("()"))
                tokens = tokens[1:]
            p = PauliString.parse(" ".join(tokens))
            out[p] = out.get(p, 0) + sign * coeff
        return cls(out)

    @classmethod
    def from_json(cls, items: Iterable[Mapping]) -> "OperatorSum":
        return cls({PauliString.parse(it["pauli"]): complex(it.get("re", 0.0), it.get("im", 0.0)) for it in items})

    def to_json(self) -> list:
        return [
            {"pauli": p.label(), "re": c.real, "im": c.imag}
            for p, c in sorted(self.terms.items(), key=lambda kv: _sort_key(kv[0]))
        ]

    @property
    def support(self) -> tuple:
        sites = set()
        for p in self.terms:
            sites.update(p.support)
        return tuple(sorted(sites))

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms.items())

    def coefficient(self, p: PauliString | str) -> complex:
        if isinstance(p, str):
            p = PauliString.parse(p)
        return self.terms.get(p.key, 0.0) * p.phase.conjugate()

    def __add__(self, other):
        if isinstance(other, (int, float, complex)):
            other = OperatorSum.identity(other)
        if not isinstance(other, OperatorSum):
            return NotImplemented
        out = dict(self.terms)
        for p, c in other.terms.items():
            out[p] = out.get(p, 0) + c
        return OperatorSum(out)

    __radd__ = __add__

    def __neg__(self):
        return OperatorSum({p: -c for p, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            return OperatorSum({p: c * other for p, c in self.terms.items()})
        if isinstance(other, PauliString):
            other = OperatorSum({other: 1.0})
        if not isinstance(other, OperatorSum):
            return NotImplemented
        out: dict = {}
        for pa, ca in self.terms.items():
            for pb, cb in other.terms.items():
                pc = pauli_mul(pa, pb)
                k = pc.key
                out[k] = out.get(k, 0) + ca * cb * pc.phase
        return OperatorSum(out)

    def __rmul__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            return self * other
        return NotImplemented

    def __truediv__(self, other):
        return self * (1.0 / other)

    def dagger(self) -> "OperatorSum":
        return OperatorSum({p: c.conjugate() for p, c in self.terms.items()})

    def commutator(self, other: "OperatorSum") -> "OperatorSum":
        return self * other - other * self

    def is_zero(self, tol: float = PRUNE_TOL) -> bool:
        return all(abs(c) <= tol for c in self.terms.values())

    def allclose(self, other: "OperatorSum", atol: float = 1e-10) -> bool:
        return l1_coefficient_norm(self - other) <= atol

    def to_vector(self, sites: Sequence[int]) -> np.ndarray:
        sites = tuple(sites)
        pos = {s: i for i, s in enumerate(sites)}
        n = len(sites)
        vec = np.zeros(4**n, dtype=complex)
        for p, c in self.terms.items():
            idx = 0
            for s, l in p.letters:
                if s not in pos:
                    raise ValueError(f"operator acts on site {s} outside {sites}")
                idx += LETTERS.index(l) * 4 ** (n - 1 - pos[s])
            vec[idx] += c
        return vec

    @classmethod
    def from_vector(cls, vec: np.ndarray, sites: Sequence[int], tol: float = PRUNE_TOL) -> "OperatorSum":
        sites = tuple(sites)
        n = len(sites)
        vec = np.asarray(vec)
        out = {}
        for idx in np.flatnonzero(np.abs(vec) > tol):
            digits = np.unravel_index(int(idx), (4,) * n) if n else ()
            letters = tuple((sites[i], LETTERS[d]) for i, d in enumerate(digits) if d)
            out[PauliString(letters)] = complex(vec[idx])
        return cls(out)

    def to_dense(self, sites: Sequence[int] | None = None) -> np.ndarray:
        sites = tuple(self.support if sites is None else sites)
        if len(sites) > DENSE_LIMIT:
            raise SizeLimitError(f"dense realisation on {len(sites)} sites exceeds limit {DENSE_LIMIT}")
        return coeffs_to_dense(self.to_vector(sites), len(sites))

    @classmethod
    def from_dense(cls, matrix: np.ndarray, sites: Sequence[int]) -> "OperatorSum":
        sites = tuple(sites)
        return cls.from_vector(dense_to_coeffs(matrix, len(sites)), sites)

    def __repr__(self):
        if not self.terms:
            return "OperatorSum(0)"
        parts = [f"({c:.6g}) {p.label()}" for p, c in sorted(self.terms.items(), key=lambda kv: _sort_key(kv[0]))]
        return "OperatorSum(" + " + ".join(parts) + ")"

    def __eq__(self, other):
        if not isinstance(other, OperatorSum):
            return NotImplemented
        return self.allclose(other, atol=1e-12)

    __hash__ = None


def _sort_key(p: PauliString):
    return (len(p.letters), p.letters)


def as_operator(x) -> OperatorSum:
    if isinstance(x, OperatorSum):
        return x
    if isinstance(x, PauliString):
        return OperatorSum({x: 1.0})
    if isinstance(x, str):
        return OperatorSum.parse(x)
    raise TypeError(f"cannot interpret {type(x).__name__} as an operator")


# --- coefficient <-> dense ------------------------------------------------

_PT = PAULIS.transpose(0, 2, 1)


def coeffs_to_dense(vec: np.ndarray, n: int) -> np.ndarray:
    """Pauli coefficients (..., 4**n) to dense matrices (..., 2**n, 2**n)."""
    vec = np.asarray(vec)
    batch = vec.shape[:-1]
    t = vec.reshape((-1,) + (4,) * n)
    if n == 0:
        return t.reshape(batch + (1, 1)).astype(complex)
    for _ in range(n):
        # contracts the leading site axis, appends its (row, col) pair
        t = np.tensordot(t, PAULIS, axes=([1], [0]))
    b = t.shape[0]
    order = [0] + [1 + 2 * k for k in range(n)] + [2 + 2 * k for k in range(n)]
    t = t.transpose(order).reshape((b, 2**n, 2**n))
    return t.reshape(batch + (2**n, 2**n))


def dense_to_coeffs(matrix: np.ndarray, n: int) -> np.ndarray:
    """Inverse of :func:`coeffs_to_dense`: ``c_a = Tr(sigma_a M) / 2**n``."""
    matrix = np.asarray(matrix, dtype=complex)
    batch = matrix.shape[:-2]
    d = 2**n
    t = matrix.reshape((-1,) + (2,) * n + (2,) * n)
    order = [0]
    for k in range(n):
        order += [1 + k, 1 + n + k]
    t = t.transpose(order)
    for _ in range(n):
        t = np.tensordot(t, _PT, axes=([1, 2], [1, 2]))
    return (t.reshape(batch + (4**n,)) / d)


# --- norms -----------------------------------------------------------------


def op_norm(A, sites: Sequence[int] | None = None, max_sites: int = DENSE_LIMIT) -> float:
    """Spectral norm of the dense realisation."""
    A = as_operator(A)
    sites = tuple(A.support if sites is None else sites)
    if len(sites) > max_sites:
        raise SizeLimitError(f"op_norm on {len(sites)} sites exceeds dense limit {max_sites}")
    if not A.terms:
        return 0.0
    return float(np.linalg.norm(A.to_dense(sites), 2))


def op_norms_of_vectors(vecs: np.ndarray, n: int) -> np.ndarray:
    """Spectral norms of a batch of coefficient vectors (rows)."""
    mats = coeffs_to_dense(vecs, n)
    if n == 0:
        return np.abs(mats[..., 0, 0])
    return np.linalg.norm(mats, 2, axis=(-2, -1))


def l1_coefficient_norm(A) -> float:
    A = as_operator(A)
    return float(sum(abs(c) for c in A.terms.values()))


# --- superoperators ----------------------------------------------------------


def _vec_basis(k: int):
    """Columns vec(sigma_i) and vec(sigma_i^T) for all 4**k strings."""
    eye = np.eye(4**k)
    mats = coeffs_to_dense(eye, k)
    return mats.reshape(4**k, -1).T, mats.transpose(0, 2, 1).reshape(4**k, -1).T


class SuperOp:
    """Linear map on operators supported on ``sites``.

    Stored as the natural matrix ``N`` with ``vec(phi(X)) = N vec(X)`` for
    row-major ``vec``.  The Heisenberg/Pauli transfer matrix is available as
    :attr:`ptm`.
    """

    def __init__(self, sites: Sequence[int], natural: np.ndarray):
        self.sites = tuple(sites)
        self.natural = np.asarray(natural, dtype=complex)
        d = 2 ** len(self.sites)
        if self.natural.shape != (d * d, d * d):
            raise ValueError(f"natural matrix has shape {self.natural.shape}, expected {(d * d, d * d)}")

    @property
    def dim(self) -> int:
        return 2 ** len(self.sites)

    @classmethod
    def from_pairs(cls, sites, pairs) -> "SuperOp":
        """``X -> sum_i a_i X b_i``."""
        sites = tuple(sites)
        d = 2 ** len(sites)
        nat = np.zeros((d * d, d * d), dtype=complex)
        for a, b in pairs:
            nat += np.kron(np.asarray(a), np.asarray(b).T)
        return cls(sites, nat)

    @classmethod
    def from_ptm(cls, sites, ptm) -> "SuperOp":
        sites = tuple(sites)
        k = len(sites)
        vs, vst = _vec_basis(k)
        return cls(sites, vs @ np.asarray(ptm) @ vst.T / 2**k)

    @classmethod
    def identity(cls, sites) -> "SuperOp":
        d = 2 ** len(tuple(sites))
        return cls(sites, np.eye(d * d))

    @classmethod
    def conjugation(cls, U, sites) -> "SuperOp":
        """``X -> U X U^dagger``."""
        U = np.asarray(U, dtype=complex)
        return cls.from_pairs(sites, [(U, U.conj().T)])

    @classmethod
    def commutator(cls, H, sites, coeff: complex = 1j) -> "SuperOp":
        """``X -> coeff [H, X]``."""
        H = np.asarray(H, dtype=complex)
        eye = np.eye(H.shape[0])
        return cls.from_pairs(sites, [(coeff * H, eye), (-coeff * eye, H)])

    @cached_property
    def ptm(self) -> np.ndarray:
        k = len(self.sites)
        vs, vst = _vec_basis(k)
        out = vst.T @ self.natural @ vs / 2**k
        if np.abs(out.imag).max(initial=0.0) < 1e-13:
            out = out.real.copy()
        return out

    @cached_property
    def pairs(self):
        d = self.dim
        nat = self.natural.reshape(d, d, d, d)  # [p, q, r, s]
        resh = nat.transpose(0, 2, 3, 1).reshape(d * d, d * d)  # [(p, r), (s, q)]
        u, s, vh = np.linalg.svd(resh)
        keep = s > 1e-14 * max(s[0], 1e-300) if s.size else []
        out_a = [np.sqrt(si) * u[:, i].reshape(d, d) for i, si in enumerate(s) if keep[i]]
        out_b = [np.sqrt(si) * vh[i, :].reshape(d, d) for i, si in enumerate(s) if keep[i]]
        return np.array(out_a).reshape(-1, d, d), np.array(out_b).reshape(-1, d, d)

    def apply_dense(self, X: np.ndarray) -> np.ndarray:
        d = self.dim
        return (self.natural @ np.asarray(X, dtype=complex).reshape(-1)).reshape(d, d)

    def apply(self, A) -> OperatorSum:
        A = as_operator(A)
        extra = tuple(s for s in A.support if s not in self.sites)
        sites = self.sites + extra
        vec = A.to_vector(sites)
        k, m = len(self.sites), len(extra)
        out = (self.ptm @ vec.reshape(4**k, 4**m)).reshape(-1)
        return OperatorSum.from_vector(out, sites)

    def apply_amplified(self, X: np.ndarray, anc: int) -> np.ndarray:
        """``(phi (x) id_anc)(X)`` for ``X`` on system (x) ancilla."""
        a, b = self.pairs
        d = self.dim
        X4 = np.asarray(X).reshape(d, anc, d, anc)
        return np.einsum("kpr,rasb,ksq->paqb", a, X4, b, optimize=True).reshape(d * anc, d * anc)

    def adjoint_amplified(self, M: np.ndarray, anc: int) -> np.ndarray:
        """Hilbert-Schmidt adjoint of the amplified map."""
        a, b = self.pairs
        d = self.dim
        M4 = np.asarray(M).reshape(d, anc, d, anc)
        ad = a.conj().transpose(0, 2, 1)
        bd = b.conj().transpose(0, 2, 1)
        return np.einsum("kpr,rasb,ksq->paqb", ad, M4, bd, optimize=True).reshape(d * anc, d * anc)

    def compose(self, other: "SuperOp") -> "SuperOp":
        if self.sites != other.sites:
            raise ValueError("compose requires identical site tuples")
        return SuperOp(self.sites, self.natural @ other.natural)

    def __add__(self, other):
        if self.sites != other.sites:
            raise ValueError("add requires identical site tuples")
        return SuperOp(self.sites, self.natural + other.natural)

    def __sub__(self, other):
        return self + other * (-1)

    def __mul__(self, c):
        return SuperOp(self.sites, self.natural * c)

    __rmul__ = __mul__


def _random_unitary(rng, d):
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def _polar_unitary(G):
    w, _, vh = np.linalg.svd(G)
    return w @ vh


def induced_norm(phi: SuperOp, anc: int = 1, restarts: int = 24, seed: int = 0,
                 max_iter: int = 2000, tol: float = 1e-13) -> float:
    """Operator-norm induced norm of ``phi (x) id_anc`` by alternating ascent.

    The maximum of ``||phi(X)||`` over the unit ball is attained on
    unitaries; each step replaces ``X`` by the unitary polar factor of the
    gradient ``phi^*(u v^dagger)`` which never decreases the objective.
    """
    rng = np.random.default_rng(seed)
    D = phi.dim * anc
    starts = [np.eye(D, dtype=complex)]
    for k in range(1, min(4, 4 ** len(phi.sites))):
        P = np.kron(PauliString(((phi.sites[0], LETTERS[k]),)).to_dense((phi.sites[0],)), np.eye(D // 2))
        starts.append(P)
    while len(starts) < restarts:
        starts.append(_random_unitary(rng, D))
    best = 0.0
    for X in starts:
        val = 0.0
        for _ in range(max_iter):
            Y = phi.apply_amplified(X, anc)
            u, s, vh = np.linalg.svd(Y)
            new = s[0]
            if new <= val * (1 + tol) + 1e-300 and val > 0:
                val = max(val, new)
                break
            val = new
            G = phi.adjoint_amplified(np.outer(u[:, 0], vh[0].conj()), anc)
            X = _polar_unitary(G)
        best = max(best, val)
    return float(best)


def _adjoint_choi(phi: SuperOp) -> np.ndarray:
    """Choi matrix ``sum_ij phi^*(E_ij) (x) E_ij`` of the Hilbert-Schmidt adjoint."""
    d = phi.dim
    a, b = phi.pairs
    ad = a.conj().transpose(0, 2, 1)
    bd = b.conj().transpose(0, 2, 1)
    # phi^*(E_ij)[p, q] = sum_k ad[k, p, i] bd[k, j, q]
    out = np.einsum("kpi,kjq->ijpq", ad, bd)
    return out.transpose(2, 0, 3, 1).reshape(d * d, d * d)


def _diamond_upper_sdp(J: np.ndarray, d: int, solver: str | None = None) -> float:
    """Dual of the diamond-norm SDP (a feasible point gives an upper bound)."""
    import cvxpy as cp

    scale = float(np.linalg.norm(J, 2))
    if scale == 0.0:
        return 0.0
    Jn = J / scale
    n = d * d
    Y0 = cp.Variable((n, n), hermitian=True)
    Y1 = cp.Variable((n, n), hermitian=True)
    t0, t1 = cp.Variable(), cp.Variable()
    block = cp.bmat([[Y0, -Jn], [-Jn.conj().T, Y1]])
    cons = [
        block >> 0,
        cp.partial_trace(Y0, [d, d], axis=0) << t0 * np.eye(d),
        cp.partial_trace(Y1, [d, d], axis=0) << t1 * np.eye(d),
    ]
    prob = cp.Problem(cp.Minimize((t0 + t1) / 2), cons)
    solvers = [solver] if solver else ["CVXOPT", "CLARABEL", "SCS"]
    for name in solvers:
        if name not in cp.installed_solvers():
            continue
        try:
            prob.solve(solver=name)
        except cp.error.SolverError:
            continue
        if prob.value is not None and np.isfinite(prob.value):
            return float(prob.value) * scale
    raise RuntimeError("no SDP solver produced a finite diamond-norm bound")


_CB_CACHE: dict = {}


def cb_norm(phi: SuperOp, method: str = "sdp", max_sites: int = 3, restarts: int = 16, seed: int = 0) -> float:
    """Completely bounded (operator-norm) norm of ``phi``.

    ``method="sdp"`` solves the diamond-norm SDP of the Hilbert-Schmidt
    adjoint, which equals the cb norm, and never reports less than the
    ascent lower bound.  ``method="ascent"`` runs :func:`induced_norm` with an
    ancilla of the system's own dimension.
    """
    if len(phi.sites) > max_sites:
        raise SizeLimitError(f"cb_norm on {len(phi.sites)} sites exceeds limit {max_sites}")
    key = (method, phi.natural.shape, np.round(phi.natural, 12).tobytes())
    if key in _CB_CACHE:
        return _CB_CACHE[key]
    lower = induced_norm(phi, anc=phi.dim, restarts=restarts, seed=seed)
    if method == "ascent":
        val = lower
    elif method == "sdp":
        val = max(lower, _diamond_upper_sdp(_adjoint_choi(phi), phi.dim))
    else:
        raise ValueError(f"unknown cb_norm method {method!r}")
    _CB_CACHE[key] = val
    return val
