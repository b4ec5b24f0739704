"""Coefficient-space time evolution, fixed points and asymptotic projectors."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp

from .errors import EvolutionError, NoGapError, QuadratureError, SizeLimitError
from .lindblad import Generator
from .operators import (
    LETTERS,
    OperatorSum,
    SuperOp,
    as_operator,
    coeffs_to_dense,
    dense_to_coeffs,
    op_norms_of_vectors,
)

MAX_SITES = 10
DENSE_SITES = 5
ZERO_TOL = 1e-9


def _nat_order(local_sites, sites):
    """Index map from (local sites..., remaining sites...) ordering to natural order."""
    n = len(sites)
    pos = [sites.index(s) for s in local_sites]
    rest = [i for i in range(n) if i not in pos]
    return np.arange(4**n).reshape((4,) * n).transpose(pos + rest).ravel()


def embed_local(local: np.ndarray, local_sites, sites, sparse: bool = True):
    """Lift a local transfer matrix on ``local_sites`` to all of ``sites``."""
    sites = tuple(sites)
    k, n = len(local_sites), len(sites)
    big = sp.kron(sp.coo_matrix(local), sp.identity(4 ** (n - k), format="coo"), format="coo")
    perm = _nat_order(tuple(local_sites), sites)
    out = sp.coo_matrix((big.data, (perm[big.row], perm[big.col])), shape=(4**n, 4**n))
    return out.tocsr() if sparse else out.toarray()


@dataclass(frozen=True, eq=False)
class TransferMatrix:
    """Action of a generator on Pauli coefficients over ``sites``.

    Column ``j`` holds the coefficients of ``L[sigma_j]``; basis strings are
    ordered with the first site as the most significant base-4 digit.
    """

    sites: tuple
    matrix: object

    @property
    def n(self) -> int:
        return len(self.sites)

    @property
    def dim(self) -> int:
        return 4**self.n

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if self.is_sparse else np.asarray(self.matrix)

    def basis_label(self, index: int) -> str:
        digits = np.unravel_index(index, (4,) * self.n) if self.n else ()
        parts = [f"{LETTERS[d]}{s}" for s, d in zip(self.sites, digits) if d]
        return " ".join(parts) or "I"

    @property
    def basis(self) -> list:
        return [self.basis_label(i) for i in range(self.dim)]

    def __matmul__(self, vec):
        return self.matrix @ vec

    def write_coo(self, path) -> None:
        """Coordinate text export: header line, then ``row col re im`` per entry."""
        coo = sp.coo_matrix(self.matrix)
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w", newline="\n") as fh:
            fh.write(f"# sites {' '.join(map(str, self.sites))} dim {self.dim} nnz {coo.nnz}\n")
            for i in order:
                v = complex(coo.data[i])
                fh.write(f"{coo.row[i]} {coo.col[i]} {v.real:.17g} {v.imag:.17g}\n")


def transfer_matrix(gen: Generator, sites: Sequence[int] | None = None, sparse: bool | None = None) -> TransferMatrix:
    sites = tuple(sorted(gen.sites if sites is None else set(sites)))
    if len(sites) > MAX_SITES:
        raise SizeLimitError(f"transfer matrix on {len(sites)} sites exceeds limit {MAX_SITES}")
    for t in gen.terms:
        if not set(t.support) <= set(sites):
            raise ValueError(f"{t.describe()} acts outside sites {sites}")
    if sparse is None:
        sparse = len(sites) > DENSE_SITES
    dim = 4 ** len(sites)
    acc = sp.csr_matrix((dim, dim), dtype=complex)
    for t in gen.terms:
        acc = acc + embed_local(t.local_transfer, t.support, sites)
    if not sparse:
        acc = acc.toarray()
        if np.abs(acc.imag).max(initial=0.0) == 0.0:
            acc = acc.real.copy()
    elif acc.nnz and np.abs(acc.data.imag).max() == 0.0:
        acc = acc.real.tocsr()
    return TransferMatrix(sites, acc)


@dataclass(frozen=True)
class EvolutionMethod:
    kind: str = "auto"
    tolerance: float = 1e-10
    max_sites_dense: int = DENSE_SITES
    krylov_dim: int = 30

    def __post_init__(self):
        if self.kind not in ("auto", "dense", "krylov", "adaptive"):
            raise ValueError(f"unknown evolution method {self.kind!r}")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")

    def resolve(self, n: int) -> str:
        if self.kind == "auto":
            return "dense" if n <= self.max_sites_dense else "krylov"
        if self.kind == "dense" and n > self.max_sites_dense:
            raise SizeLimitError(f"dense evolution on {n} sites exceeds limit {self.max_sites_dense}")
        return self.kind


# --- Krylov action of the exponential ---------------------------------------


def expv(t: float, A, v: np.ndarray, m: int = 30, tol: float = 1e-10, max_steps: int = 100_000) -> np.ndarray:
    """``exp(t A) v`` by restarted Arnoldi with local error control (Sidje's scheme)."""
    v = np.asarray(v, dtype=complex)
    n = v.shape[0]
    beta = np.linalg.norm(v)
    if t == 0 or beta == 0:
        return v.copy()
    anorm = spla.norm(A, np.inf) if sp.issparse(A) else np.linalg.norm(A, np.inf)
    if anorm == 0:
        return v.copy()
    m = min(m, n)
    gamma, delta = 0.9, 1.2
    btol = 1e-12 * anorm
    fact = ((m + 1) / math.e) ** (m + 1) * math.sqrt(2 * math.pi * (m + 1))
    t_new = (1 / anorm) * ((fact * tol) / (4 * beta * anorm)) ** (1 / m)
    w = v.copy()
    t_now, steps = 0.0, 0
    while t_now < t:
        steps += 1
        if steps > max_steps:
            raise EvolutionError("Krylov step budget exhausted", residual=t - t_now)
        tau = min(t - t_now, t_new)
        V = np.zeros((n, m + 1), dtype=complex)
        H = np.zeros((m + 2, m + 2), dtype=complex)
        V[:, 0] = w / beta
        happy, mb = False, m
        for j in range(m):
            p = A @ V[:, j]
            for _ in range(2):  # reorthogonalise once
                h = V[:, : j + 1].conj().T @ p
                p = p - V[:, : j + 1] @ h
                H[: j + 1, j] += h
            s = np.linalg.norm(p)
            if s < btol:
                happy, mb = True, j + 1
                tau = t - t_now
                break
            H[j + 1, j] = s
            V[:, j + 1] = p / s
        if not happy:
            H[m + 1, m] = 1.0
            avnorm = np.linalg.norm(A @ V[:, m])
        xm = 1 / m
        for _ in range(50):
            if happy:
                F = sla.expm(tau * H[:mb, :mb])
                err = 0.0
                break
            F = sla.expm(tau * H[: m + 2, : m + 2])
            phi1 = abs(beta * F[m, 0])
            phi2 = abs(beta * F[m + 1, 0] * avnorm)
            if phi1 > 10 * phi2:
                err, xm = phi2, 1 / m
            elif phi1 > phi2:
                err, xm = phi1 * phi2 / (phi1 - phi2), 1 / m
            else:
                err, xm = phi1, 1 / (m - 1) if m > 1 else 1.0
            if err <= delta * tau * tol:
                break
            tau = gamma * tau * (tau * tol / err) ** xm
        else:
            raise EvolutionError("Krylov step size control failed to converge", residual=err)
        mx = mb if happy else m + 1
        w = V[:, :mx] @ (beta * F[:mx, 0])
        beta = np.linalg.norm(w)
        t_now += tau
        if beta == 0:
            return w
        t_new = gamma * tau * (tau * tol / err) ** xm if err > 0 else 2 * tau
    return w


# --- propagation --------------------------------------------------------------


def _dense_steps(T: np.ndarray, vecs: np.ndarray, times: np.ndarray) -> np.ndarray:
    out = np.empty((len(times),) + vecs.shape, dtype=complex)
    cache = {}
    cur, t_prev = vecs.astype(complex), 0.0
    for i, t in enumerate(times):
        dt = t - t_prev
        if dt != 0:
            key = round(dt, 15)
            if key not in cache:
                cache[key] = sla.expm(dt * T)
            cur = cache[key] @ cur
        out[i] = cur
        t_prev = t
    return out


def _krylov_steps(T, vecs, times, method):
    out = np.empty((len(times),) + vecs.shape, dtype=complex)
    cur, t_prev = vecs.astype(complex), 0.0
    for i, t in enumerate(times):
        dt = t - t_prev
        if dt != 0:
            cur = np.stack([expv(dt, T, cur[:, c], m=method.krylov_dim, tol=method.tolerance)
                            for c in range(cur.shape[1])], axis=1)
        out[i] = cur
        t_prev = t
    return out


def _adaptive_steps(T, vecs, times, method):
    out = np.empty((len(times),) + vecs.shape, dtype=complex)
    for c in range(vecs.shape[1]):
        y0 = vecs[:, c].astype(complex)
        if times[-1] == 0:
            out[:, :, c] = y0
            continue
        sol = solve_ivp(lambda _t, y: T @ y, (0.0, float(times[-1])), y0, method="DOP853",
                        t_eval=times, rtol=method.tolerance, atol=method.tolerance * 1e-2)
        if not sol.success:
            raise EvolutionError(f"adaptive integrator failed: {sol.message}", residual=float("nan"))
        out[:, :, c] = sol.y.T
    return out


def propagate(tm: TransferMatrix, vecs: np.ndarray, times: Sequence[float],
              method: EvolutionMethod | None = None) -> np.ndarray:
    """Coefficient vectors (columns of ``vecs``) at each time; shape ``(len(times), dim, k)``."""
    method = method or EvolutionMethod()
    times = np.asarray(times, dtype=float)
    if times.size and (np.any(times < 0) or np.any(np.diff(times) < 0)):
        raise ValueError("times must be non-negative and sorted")
    vecs = np.asarray(vecs)
    squeeze = vecs.ndim == 1
    if squeeze:
        vecs = vecs[:, None]
    kind = method.resolve(tm.n)
    if kind == "dense":
        out = _dense_steps(tm.dense(), vecs, times)
    elif kind == "krylov":
        out = _krylov_steps(tm.matrix, vecs, times, method)
    else:
        out = _adaptive_steps(tm.matrix, vecs, times, method)
    return out[:, :, 0] if squeeze else out


def _sites_for(gen: Generator, A: OperatorSum, sites=None):
    return tuple(sorted(set(gen.sites) | set(A.support) | set(sites or ())))


def evolve(gen: Generator, A, t: float, method: EvolutionMethod | None = None, sites=None) -> OperatorSum:
    """``exp(t L)[A]``; ``t = 0`` returns ``A`` unchanged."""
    A = as_operator(A)
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return A
    return evolve_many(gen, A, [t], method, sites)[0]


def evolve_many(gen: Generator, A, times: Sequence[float], method: EvolutionMethod | None = None,
                sites=None) -> list:
    A = as_operator(A)
    sites = _sites_for(gen, A, sites)
    tm = transfer_matrix(gen, sites)
    vecs = propagate(tm, A.to_vector(sites), times, method)
    return [OperatorSum.from_vector(v, sites) for v in vecs]


# --- spectral projectors ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpectralProjector:
    """Projector onto the kernel of a transfer matrix along its other spectral subspaces.

    Stored densely (``matrix``) or as ``right @ left`` with ``left`` already
    absorbing the biorthogonal normalisation.
    """

    sites: tuple
    rank: int
    matrix: np.ndarray | None = None
    right: np.ndarray | None = None
    left: np.ndarray | None = None
    gap: float = float("nan")

    def apply_vector(self, v: np.ndarray) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix @ v
        return self.right @ (self.left @ v)

    def apply(self, A) -> OperatorSum:
        A = as_operator(A)
        return OperatorSum.from_vector(self.apply_vector(A.to_vector(self.sites)), self.sites)

    def dense(self) -> np.ndarray:
        return self.matrix if self.matrix is not None else self.right @ self.left

    def idempotency_error(self) -> float:
        if self.matrix is not None:
            return float(np.abs(self.matrix @ self.matrix - self.matrix).max(initial=0.0))
        core = self.left @ self.right
        return float(np.abs(core - np.eye(self.rank)).max(initial=0.0))

    def row(self, index: int) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix[index]
        return self.right[index] @ self.left

    def as_superop(self) -> SuperOp:
        return SuperOp.from_ptm(self.sites, self.dense())


def _zero_tol(scale: float) -> float:
    return ZERO_TOL * max(1.0, scale)


def _check_gap(eigs: np.ndarray, tol: float) -> float:
    nonzero = eigs[np.abs(eigs) > tol]
    if nonzero.size == 0:
        raise NoGapError("generator has no non-zero eigenvalue; asymptotic limit is trivial or undefined")
    if np.any(np.abs(nonzero.real) <= tol):
        raise NoGapError("non-zero eigenvalues on the imaginary axis; exp(tL) has no limit",
                         eigenvalue=str(nonzero[np.argmin(np.abs(nonzero.real))]))
    return float(np.min(np.abs(nonzero.real)))


def _dense_projector(tm: TransferMatrix, require_gap: bool) -> SpectralProjector:
    T = tm.dense().astype(complex)
    scale = np.abs(T).sum(axis=0).max(initial=0.0)
    tol = _zero_tol(scale)
    eigs = np.linalg.eigvals(T) if T.size else np.zeros(0)
    try:
        gap = _check_gap(eigs, tol)
    except NoGapError:
        if require_gap:
            raise
        gap = float("nan")
    S, U, sdim = sla.schur(T, output="complex", sort=lambda x: abs(x) <= tol)
    d = T.shape[0]
    Ps = np.zeros((d, d), dtype=complex)
    Ps[:sdim, :sdim] = np.eye(sdim)
    if 0 < sdim < d:
        X = sla.solve_sylvester(S[:sdim, :sdim], -S[sdim:, sdim:], S[:sdim, sdim:])
        Ps[:sdim, sdim:] = X
    P = U @ Ps @ U.conj().T
    if np.abs(P.imag).max(initial=0.0) < 1e-12:
        P = P.real
    return SpectralProjector(tm.sites, int(sdim), matrix=P, gap=gap)


def _sparse_kernel(M, tol, k0=4):
    d = M.shape[0]
    v0 = np.ones(d) / math.sqrt(d)
    k = min(k0, d - 2)
    while True:
        vals, vecs = spla.eigs(M.astype(complex), k=k, sigma=1e-6, v0=v0, which="LM")
        zero = np.abs(vals) <= tol
        if zero.sum() < k or k >= d - 2:
            return vals, vecs[:, zero]
        k = min(2 * k, d - 2)


def _sparse_projector(tm: TransferMatrix) -> SpectralProjector:
    T = sp.csc_matrix(tm.matrix)
    scale = float(abs(T).sum(axis=0).max()) if T.nnz else 0.0
    if scale == 0.0:
        raise NoGapError("generator is zero; asymptotic limit is trivial")
    tol = _zero_tol(scale) * 10
    vals, R = _sparse_kernel(T, tol)
    _, Lv = _sparse_kernel(T.T.tocsc(), tol)
    if R.shape[1] != Lv.shape[1]:
        raise NoGapError("left and right kernels differ in dimension", right=R.shape[1], left=Lv.shape[1])
    nonzero = vals[np.abs(vals) > tol]
    gap = float(np.min(np.abs(nonzero.real))) if nonzero.size else float("nan")
    if nonzero.size and np.any(np.abs(nonzero.real) <= tol):
        raise NoGapError("non-zero eigenvalues on the imaginary axis; exp(tL) has no limit")
    core = Lv.T @ R
    left = np.linalg.solve(core, Lv.T)
    right = R
    return SpectralProjector(tm.sites, R.shape[1], right=right, left=left, gap=gap)


def asymptotic_projector(gen_L1: Generator, sites: Sequence[int] | None = None,
                         require_gap: bool = True) -> SpectralProjector:
    """``lim_{t->inf} exp(t L1)`` as the eigenvalue-zero spectral projector.

    Dense Schur reordering up to 5 sites, sparse shift-invert kernels above.
    """
    sites = tuple(sorted(gen_L1.sites if sites is None else sites))
    if not gen_L1.terms:
        raise NoGapError("L1 is zero; the asymptotic projector is undefined")
    tm = transfer_matrix(gen_L1, sites)
    if tm.is_sparse:
        return _sparse_projector(tm)
    return _dense_projector(tm, require_gap)


# --- fixed points ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FixedPointReport:
    sites: tuple
    rho_eq: np.ndarray
    coefficients: np.ndarray
    residual: float
    spectral_gap_estimate: float
    unique: bool
    kernel_dimension: int
    clip: float
    null_basis: np.ndarray | None = None

    def expectation(self, A) -> complex:
        """``Tr(rho_eq A)``."""
        return complex(self.coefficients @ as_operator(A).to_vector(self.sites))

    def to_json(self) -> dict:
        return {
            "sites": list(self.sites),
            "residual": self.residual,
            "spectral_gap_estimate": self.spectral_gap_estimate,
            "unique": self.unique,
            "kernel_dimension": self.kernel_dimension,
            "positivity_clip": self.clip,
        }


def fixed_point_state(gen: Generator, sites: Sequence[int] | None = None) -> FixedPointReport:
    """Stationary state reached from the maximally mixed state.

    Coefficients ``r`` with ``rho = sum_b r_b sigma_b / 2**n`` evolve with the
    transposed transfer matrix, so ``r = P^T e_I``.
    """
    sites = tuple(sorted(gen.sites if sites is None else sites))
    n = len(sites)
    if n > 6:
        raise SizeLimitError(f"fixed point on {n} sites exceeds limit 6")
    dim = 4**n
    if not gen.terms:
        proj = SpectralProjector(sites, dim, matrix=np.eye(dim), gap=float("nan"))
    else:
        proj = asymptotic_projector(gen, sites, require_gap=False)
    r = np.asarray(proj.row(0)).astype(complex)
    r = r / r[0]
    rho = coeffs_to_dense(r, n) / 2**n
    rho = 0.5 * (rho + rho.conj().T)
    w, U = np.linalg.eigh(rho)
    clip = float(max(0.0, -w.min(initial=0.0)))
    w = np.clip(w, 0.0, None)
    rho = (U * w) @ U.conj().T
    rho /= np.trace(rho).real
    coeffs = dense_to_coeffs(rho, n) * 2**n
    tm = transfer_matrix(gen, sites, sparse=n > DENSE_SITES) if gen.terms else None
    residual = 0.0 if tm is None else float(np.abs(tm.matrix.T @ coeffs).max(initial=0.0)) / 2**n
    return FixedPointReport(
        sites=sites,
        rho_eq=rho,
        coefficients=coeffs,
        residual=residual,
        spectral_gap_estimate=float(proj.gap) if np.isfinite(proj.gap) else 0.0,
        unique=proj.rank == 1,
        kernel_dimension=proj.rank,
        clip=clip,
        null_basis=_row_basis(proj) if proj.rank > 1 else None,
    )


def _row_basis(proj: SpectralProjector) -> np.ndarray:
    """Orthonormal basis of the left kernel (stationary coefficient vectors)."""
    P = proj.dense()
    u, s, _ = np.linalg.svd(P.T)
    return u[:, : proj.rank].T


# --- frustration freeness ----------------------------------------------------


@dataclass(frozen=True)
class FrustrationReport:
    residuals: tuple
    max_residual: float
    passed: bool
    kernel_dimension: int
    tolerance: float

    def to_json(self) -> dict:
        return {
            "residuals": [[label, r] for label, r in self.residuals],
            "max_residual": self.max_residual,
            "pass": self.passed,
            "kernel_dimension": self.kernel_dimension,
            "tolerance": self.tolerance,
        }


def frustration_free_check(gen: Generator, sites: Sequence[int] | None = None, tol: float = 1e-9) -> FrustrationReport:
    """``max_Z ||P_full o I_Z||`` with ``P_full`` the asymptotic projector of the full generator.

    In the Heisenberg picture ``I_Z o P_full`` vanishes for any unital term
    once the fixed point is unique, so the check uses the dual ordering:
    every local term must annihilate every stationary state.
    """
    if not gen.terms:
        return FrustrationReport((), 0.0, True, 0, tol)
    sites = tuple(sorted(gen.sites if sites is None else sites))
    proj = asymptotic_projector(gen, sites, require_gap=False)
    residuals = []
    if proj.matrix is None:
        _, Rfac = np.linalg.qr(proj.right)
        for t in gen.terms:
            TZ = embed_local(t.local_transfer, t.support, sites)
            M = Rfac @ np.asarray((TZ.T @ proj.left.T).T)
            residuals.append((t.describe(), float(np.linalg.norm(M, 2))))
    else:
        for t in gen.terms:
            TZ = embed_local(t.local_transfer, t.support, sites)
            residuals.append((t.describe(), float(np.linalg.norm(proj.matrix @ TZ, 2))))
    worst = max(r for _, r in residuals)
    return FrustrationReport(tuple(residuals), worst, worst <= tol, proj.rank, tol)


# --- response functional ----------------------------------------------------


@dataclass(frozen=True)
class ResponseResult:
    value: float
    bound: float
    levels: int
    change: float


def _simpson(vals: np.ndarray, h: float) -> float:
    return float(h / 3 * (vals[0] + vals[-1] + 4 * vals[1:-1:2].sum() + 2 * vals[2:-1:2].sum()))


def response_difference(gen: Generator, phi: SuperOp, A, t: float, rho: FixedPointReport,
                        tol: float = 1e-8, max_level: int = 14, method: EvolutionMethod | None = None) -> ResponseResult:
    """``int_0^t Tr(rho phi[A(s)]) ds`` together with ``int_0^t ||phi[A(s)]|| ds``.

    Composite Simpson with dyadic refinement; stops once both estimates
    change by less than ``tol`` between successive levels.
    """
    A = as_operator(A)
    sites = tuple(rho.sites)
    for s in set(phi.sites) | set(A.support) | set(gen.sites):
        if s not in sites:
            raise ValueError(f"site {s} is not covered by the fixed-point report")
    if t == 0:
        return ResponseResult(0.0, 0.0, 0, 0.0)
    n = len(sites)
    tm = transfer_matrix(gen, sites)
    k = len(phi.sites)
    perm = _nat_order(phi.sites, sites)  # natural index of each (phi, rest) index
    a0 = A.to_vector(sites)
    prev = None
    for level in range(1, max_level + 1):
        N = 2**level
        times = np.linspace(0.0, t, N + 1)
        vecs = propagate(tm, a0, times, method)
        local = vecs[:, perm].reshape(N + 1, 4**k, 4 ** (n - k))
        out = np.einsum("ij,tjr->tir", phi.ptm, local).reshape(N + 1, -1)
        phi_vecs = np.empty_like(out)
        phi_vecs[:, perm] = out
        integrand = phi_vecs @ rho.coefficients
        norms = op_norms_of_vectors(phi_vecs, n)
        h = t / N
        cur = (_simpson(integrand.real, h), _simpson(norms, h))
        if prev is not None:
            change = max(abs(cur[0] - prev[0]), abs(cur[1] - prev[1]))
            if change < tol:
                return ResponseResult(cur[0], cur[1], level, change)
        prev = cur
    raise QuadratureError(f"Simpson refinement did not converge within {max_level} levels", change=change)


def perturbed_difference(gen: Generator, phi: SuperOp, A, t: float, rho: FixedPointReport) -> float:
    """Direct ``Tr(rho exp(t(L + phi))[A]) - Tr(rho exp(tL)[A])`` on dense matrices."""
    A = as_operator(A)
    sites = tuple(rho.sites)
    T = transfer_matrix(gen, sites, sparse=False).dense()
    Tphi = embed_local(phi.ptm, phi.sites, sites, sparse=False)
    a = A.to_vector(sites)
    pert = sla.expm(t * (T + Tphi)) @ a
    base = sla.expm(t * T) @ a
    return float(np.real(rho.coefficients @ (pert - base)))
