"""Light-cone measurement, bound formulas and the path-weight series."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .convex import ConvexBasisSpec, c_phi_constant, decay_rate
from .errors import CoverageError, EnumerationBudgetError, MissingParameterError
from .evolution import EvolutionMethod, propagate, transfer_matrix
from .lattice import Lattice, ReproducingFunction, c_mu, f_norm, generator_mu_norm
from .lindblad import Generator
from .operators import (
    LETTERS,
    OperatorSum,
    PauliString,
    as_operator,
    coeffs_to_dense,
    op_norm,
    op_norms_of_vectors,
)

FORMS = ("standard", "saturating", "dissipative", "localized")


@dataclass(frozen=True)
class BoundParams:
    C: float | None = None
    v: float | None = None
    xi: float | None = None
    lam: float | None = None
    mu: float | None = None
    c_phi: float | None = None
    min_support: int | None = None
    f_norm: float | None = None
    c_mu: float | None = None
    l0_mu_norm: float | None = None
    a_norm: float = 1.0
    b_cb: float = 2.0
    lambda_certified: float | None = None

    def require(self, *names):
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise MissingParameterError(f"missing bound parameters: {', '.join(missing)}", missing=missing)

    def replace(self, **kw) -> "BoundParams":
        return replace(self, **kw)

    def to_json(self) -> dict:
        return {("lambda" if k == "lam" else k): v for k, v in asdict(self).items()}


def bound_rhs(params: BoundParams, form: str, t, d):
    """Right-hand side of one of the four bound shapes, broadcast over ``t`` and ``d``.

    ``localized`` is ``C ||A|| ||B||_cb max(exp((v - lam) t) - 1, 0) exp(-mu d)``.
    """
    t = np.asarray(t, dtype=float)
    d = np.asarray(d, dtype=float)
    if form == "standard":
        params.require("C", "v", "xi")
        out = params.C * np.exp((params.v * t - d) / params.xi)
    elif form == "saturating":
        params.require("C", "v", "xi", "mu")
        mu = params.mu
        spread = params.v * t if mu == 0 else params.v * (1 - np.exp(-mu * t)) / mu
        out = params.C * np.exp((spread - d) / params.xi)
    elif form == "dissipative":
        params.require("C", "v", "xi", "lam")
        out = params.C * np.exp(((params.v - params.lam) * t - d) / params.xi)
    elif form == "localized":
        params.require("C", "v", "lam", "mu")
        growth = np.maximum(np.expm1((params.v - params.lam) * t), 0.0)
        out = params.C * params.a_norm * params.b_cb * growth * np.exp(-params.mu * d)
    else:
        raise ValueError(f"unknown bound form {form!r}; expected one of {FORMS}")
    return out if out.ndim else float(out)


def _lambda_patch(gen_L1: Generator, max_sites: int) -> Generator:
    sites = gen_L1.sites
    if len(sites) <= max_sites:
        return gen_L1
    keep = set(sites[:max_sites])
    patch = Generator(tuple(t for t in gen_L1.terms if set(t.support) <= keep))
    if not patch.terms:
        raise MissingParameterError("no L1 term fits in the decay-rate patch", patch=sorted(keep))
    return patch


def certified_rate(times, deviation) -> float:
    """Largest ``lam`` with ``deviation(t) <= exp(-lam t)`` at every sampled ``t > 0``."""
    times = np.asarray(times, dtype=float)
    dev = np.asarray(deviation, dtype=float)
    pos = times > 0
    if not pos.any():
        return float("nan")
    with np.errstate(divide="ignore"):
        rates = -np.log(np.maximum(dev[pos], 1e-300)) / times[pos]
    return float(rates.min())


def derive_params(gen: Generator, spec: ConvexBasisSpec, F: ReproducingFunction, lat: Lattice, mu: float,
                  A_support=(), B_support=(), decay_times=None, patch_sites: int = 4,
                  C_override: float | None = None, xi: float | None = None,
                  lam_override: float | None = None) -> BoundParams:
    """Constants of the localization bound from a split generator.

    ``v = C_phi ||L0||_mu`` with ``C_phi`` taken over the L0 terms; ``lam``
    is the fitted mixing rate of L1 measured on a patch of at most
    ``patch_sites`` sites; ``C = 2 ||F|| / C_mu * min(|A|, |B|)``.
    """
    l0, l1 = gen.l0, gen.l1
    fn = f_norm(F, lat)
    cm = c_mu(F, lat, mu)
    if l0.terms:
        cphi = c_phi_constant(l0, spec)
        l0n = generator_mu_norm(l0, F, lat, mu)
    else:
        cphi, l0n = 0.0, 0.0
    v = cphi * l0n
    lam_cert = None
    if lam_override is not None:
        lam = lam_override
    elif l1.terms:
        times = np.linspace(0.0, 10.0, 41) if decay_times is None else decay_times
        rep = decay_rate(_lambda_patch(l1, patch_sites), spec, times)
        lam = rep.lambda_fit if rep.fit_ok else 0.0
        lam_cert = certified_rate(rep.times, rep.deviation)
    else:
        lam = 0.0
    sizes = [len(s) for s in (A_support, B_support) if len(s)]
    min_support = min(sizes) if sizes else 1
    C = C_override if C_override is not None else 2 * fn / cm * min_support
    return BoundParams(C=C, v=v, xi=xi if xi is not None else (1 / mu if mu > 0 else None), lam=lam, mu=mu,
                       c_phi=cphi, min_support=min_support, f_norm=fn, c_mu=cm, l0_mu_norm=l0n,
                       lambda_certified=lam_cert)


# --- light-cone profiles ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LightconeProfile:
    distances: np.ndarray
    times: np.ndarray
    values: np.ndarray
    placements: tuple
    observable: str
    b_labels: tuple
    a_norm: float = 1.0
    b_norm: float = 1.0
    exact_zero: np.ndarray | None = None
    rejected: tuple = ()

    def long_rows(self):
        for i, (d, lab) in enumerate(zip(self.distances, self.b_labels)):
            for j, t in enumerate(self.times):
                yield i, lab, float(d), float(t), float(self.values[i, j])


def _as_placement(B_template, p) -> OperatorSum:
    if isinstance(B_template, PauliString):
        return OperatorSum({B_template.shifted(p): 1.0})
    B = as_operator(B_template)
    return OperatorSum({s.shifted(p): c for s, c in B.terms.items()})


def commutator_profile(gen: Generator, A, B_template, placements: Sequence[int], times: Sequence[float],
                       lat: Lattice, method: EvolutionMethod | None = None, sites=None,
                       threads: int = 1) -> LightconeProfile:
    """``||[B_p, exp(tL)[A]]||`` for each placement ``p`` of the shifted template.

    Placements overlapping ``supp(A)`` are rejected and listed.  An entry is
    exactly zero when the evolved ``A`` carries no string that fails to
    commute with ``B_p``.
    """
    A = as_operator(A)
    if isinstance(B_template, str):
        B_template = PauliString.parse(B_template)
    Bs, kept, rejected = [], [], []
    for p in placements:
        B = _as_placement(B_template, p)
        if set(B.support) & set(A.support) or not B.support:
            rejected.append(p)
            continue
        Bs.append(B)
        kept.append(p)
    all_sites = set(gen.sites) | set(A.support) | set(sites or ())
    for B in Bs:
        all_sites |= set(B.support)
    all_sites = tuple(sorted(all_sites))
    for s in all_sites:
        if not 0 <= s < lat.n_sites:
            raise ValueError(f"site {s} lies outside the lattice")
    times = np.asarray(times, dtype=float)
    n = len(all_sites)
    tm = transfer_matrix(gen, all_sites)
    vecs = propagate(tm, A.to_vector(all_sites), times, method)  # (T, dim)
    digits = np.array(np.unravel_index(np.arange(4**n), (4,) * n)).T if n else np.zeros((1, 0), int)
    values = np.zeros((len(Bs), len(times)))
    exact = np.zeros((len(Bs), len(times)), dtype=bool)

    def one(i):
        B = Bs[i]
        pauli = len(B.terms) == 1
        if pauli:
            (bs, bc), = B.terms.items()
            bletters = dict(bs.letters)
            # a string fails to commute with B iff an odd number of sites carry different non-identity letters
            count = np.zeros(4**n, dtype=int)
            for s, l in bletters.items():
                col = digits[:, all_sites.index(s)]
                count += (col != 0) & (col != LETTERS.index(l))
            anti = count % 2 == 1
            sub = vecs[:, anti]
            row_exact = np.all(np.abs(sub) <= 1e-14, axis=1)
            masked = np.zeros_like(vecs)
            masked[:, anti] = sub
            norms = 2 * abs(bc) * op_norms_of_vectors(masked, n)
        else:
            Bd = B.to_dense(all_sites)
            mats = coeffs_to_dense(vecs, n)
            comm = Bd[None] @ mats - mats @ Bd[None]
            norms = np.linalg.norm(comm, 2, axis=(-2, -1))
            touch = np.zeros(4**n, dtype=bool)
            for s in B.support:
                touch |= digits[:, all_sites.index(s)] != 0
            row_exact = np.all(np.abs(vecs[:, touch]) <= 1e-14, axis=1)
        norms = np.where(row_exact, 0.0, norms)
        return i, norms, row_exact

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for i, norms, row_exact in pool.map(one, range(len(Bs))):
            values[i] = norms
            exact[i] = row_exact
    distances = np.array([lat.set_distance(A.support, B.support) for B in Bs])
    labels = tuple(" + ".join(s.label() for s in B.terms) if len(B.terms) == 1 else repr(B) for B in Bs)
    b_norm = max((op_norm(B) for B in Bs), default=1.0)
    return LightconeProfile(distances, times, values, tuple(kept), repr(A), labels,
                            a_norm=op_norm(A), b_norm=b_norm, exact_zero=exact, rejected=tuple(rejected))


# --- verification -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BoundReport:
    form: str
    lhs: np.ndarray
    rhs: np.ndarray
    margin: np.ndarray
    passed: bool
    worst: dict

    def to_json(self) -> dict:
        return {"form": self.form, "pass": self.passed, "worst": self.worst,
                "min_margin": float(self.margin.min()) if self.margin.size else 0.0}


def verify_bound(profile: LightconeProfile, params: BoundParams, form: str = "localized", rel_tol: float = 1e-9) -> BoundReport:
    """Margins ``RHS - LHS``; passes iff every margin is at least ``-rel_tol * RHS``."""
    if form == "localized":
        params = params.replace(a_norm=profile.a_norm, b_cb=2 * profile.b_norm)
    D, T = np.meshgrid(profile.distances, profile.times, indexing="ij")
    rhs = np.asarray(bound_rhs(params, form, T, D), dtype=float)
    lhs = profile.values
    margin = rhs - lhs
    ok = margin >= -rel_tol * rhs
    if margin.size:
        if not ok.all():
            flat = np.where(ok, np.inf, margin / np.maximum(rhs, 1e-300))
            i, j = np.unravel_index(int(np.argmin(flat)), margin.shape)
        else:
            ratio = np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1.0), -1.0)
            i, j = np.unravel_index(int(np.argmax(ratio)), margin.shape)
        worst = {"placement": profile.b_labels[i], "d": float(profile.distances[i]), "t": float(profile.times[j]),
                 "lhs": float(lhs[i, j]), "rhs": float(rhs[i, j]), "margin": float(margin[i, j])}
    else:
        worst = {}
    return BoundReport(form, lhs, rhs, margin, bool(ok.all()), worst)


def localization_verdict(profile: LightconeProfile, epsilon: float, d_min: float, t_max: float) -> bool:
    """True iff every measured value with ``d >= d_min`` and ``t <= t_max`` is at most ``epsilon``."""
    rows = profile.distances >= d_min
    cols = profile.times <= t_max + 1e-12
    if not rows.any():
        raise CoverageError(f"profile has no placement at distance >= {d_min}")
    if profile.times.size == 0 or profile.times.max() < t_max - 1e-12:
        raise CoverageError(f"profile times stop before t_max = {t_max}")
    return bool(np.all(profile.values[np.ix_(rows, cols)] <= epsilon))


@dataclass(frozen=True)
class VelocityFit:
    v_eff: float
    front: tuple
    fit_ok: bool


def effective_velocity(profile: LightconeProfile, epsilon: float = 1e-3) -> VelocityFit:
    """Slope of the ``epsilon`` contour ``d*(t)`` (largest distance with value >= epsilon)."""
    front = []
    for j in range(profile.times.size):
        hit = profile.distances[profile.values[:, j] >= epsilon]
        front.append(float(hit.max()) if hit.size else 0.0)
    front = np.array(front)
    moving = front > 0
    ts = profile.times[moving]
    if ts.size < 2 or np.ptp(front[moving]) == 0:
        return VelocityFit(0.0, tuple(front), False)
    slope = np.polyfit(ts, front[moving], 1)[0]
    return VelocityFit(float(slope), tuple(front), True)


# --- path-weight series -------------------------------------------------------------


@dataclass(frozen=True)
class PathSeries:
    n_terms: int
    term_weights: tuple
    j_bound: tuple
    partial_sums: tuple
    path_counts: tuple
    l0_mu_norm: float

    @property
    def total(self) -> float:
        return self.partial_sums[-1] if self.partial_sums else 0.0

    def to_json(self) -> dict:
        return {
            "n_terms": self.n_terms,
            "term_weights": list(self.term_weights),
            "j_bound": list(self.j_bound),
            "partial_sums": list(self.partial_sums),
            "path_counts": list(self.path_counts),
            "l0_mu_norm": self.l0_mu_norm,
        }


def enumerate_paths(supports, start, end, n_max: int, budget: int = 1_000_000):
    """Sequences ``S_1..S_n`` of supports forming a chain from ``start`` to ``end``.

    With ``S_0 = start`` and ``S_{n+1} = end``, members ``i != j`` meet
    exactly when ``|i - j| = 1``.  Returns one list of paths per
    ``n = 1..n_max``.
    """
    start, end = frozenset(start), frozenset(end)
    if start & end:
        raise ValueError("start and end supports must be disjoint")
    nodes = sorted({frozenset(s) for s in supports}, key=lambda s: sorted(s))
    out = [[] for _ in range(n_max)]
    visits = 0

    def extend(chain):
        nonlocal visits
        for s in nodes:
            if not s & chain[-1] or any(s & c for c in chain[:-1]):
                continue
            visits += 1
            if visits > budget:
                raise EnumerationBudgetError(f"path enumeration exceeded budget of {budget} nodes", budget=budget)
            n = len(chain)
            if s & end:
                out[n - 1].append(tuple(chain[1:]) + (s,))
            elif n < n_max:
                extend(chain + [s])

    if n_max >= 1:
        extend([start])
    return out


def path_weight_series(lat: Lattice, gen: Generator, A_support, B_support, n_max: int, F: ReproducingFunction,
                       mu: float, t: float, lam: float = 0.0, c_phi: float | None = None,
                       l0_mu_norm: float | None = None, spec: ConvexBasisSpec | None = None,
                       budget: int = 1_000_000) -> PathSeries:
    """Truncated path expansion bounding ``||I_Z exp(tL)[A]||`` (or the commutator with ``B``).

    Per ``n``: ``w_n = sum_paths sum_{x_0 in B} ... sum_{x_{n+1} in A} prod K(x_{j-1}, x_j)``
    with ``K = F(d) exp(-mu d)``; the partial sum adds
    ``||L0||_mu^n * exp(-lam t) (C_phi ||L0||_mu t)^n / n! * w_n``.
    """
    l0 = gen.l0
    spec = spec or ConvexBasisSpec()
    if c_phi is None:
        c_phi = c_phi_constant(l0, spec) if l0.terms else 0.0
    if l0_mu_norm is None:
        l0_mu_norm = generator_mu_norm(l0, F, lat, mu) if l0.terms else 0.0
    D = lat.distances
    K = F(D) * np.exp(-mu * D)
    paths = enumerate_paths([t_.support for t_ in l0.terms], B_support, A_support, n_max, budget)
    weights, jb, partial, counts = [], [], [], []
    acc = 0.0
    bvec = sorted(B_support)
    avec = sorted(A_support)
    for n, plist in enumerate(paths, start=1):
        w = 0.0
        for path in plist:
            chain = [bvec] + [sorted(s) for s in path] + [avec]
            vec = np.ones(len(chain[0]))
            for a, b in zip(chain[:-1], chain[1:]):
                vec = vec @ K[np.ix_(a, b)]
            w += float(vec.sum())
        j = math.exp(-lam * t) * (c_phi * l0_mu_norm * t) ** n / math.factorial(n)
        acc += l0_mu_norm**n * j * w
        weights.append(w)
        jb.append(j)
        partial.append(acc)
        counts.append(len(plist))
    return PathSeries(n_max, tuple(weights), tuple(jb), tuple(partial), tuple(counts), float(l0_mu_norm))


def boundary_response(gen: Generator, A, Z_support, times: Sequence[float],
                      method: EvolutionMethod | None = None) -> np.ndarray:
    """``||I0_Z exp(tL)[A]||`` summed over the L0 terms supported exactly on ``Z``."""
    A = as_operator(A)
    Z = tuple(sorted(Z_support))
    terms = [t for t in gen.l0.terms if t.support == Z]
    if not terms:
        raise ValueError(f"no L0 term is supported on {Z}")
    sites = tuple(sorted(set(gen.sites) | set(A.support)))
    tm = transfer_matrix(gen, sites)
    local = Generator(tuple(terms))
    TZ = transfer_matrix(local, sites, sparse=True).matrix
    vecs = propagate(tm, A.to_vector(sites), times, method)
    return op_norms_of_vectors(np.asarray((TZ @ vecs.T).T), len(sites))
