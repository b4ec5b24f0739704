"""Independent dense oracles shared by the test modules."""

import numpy as np
import pytest
import scipy.linalg as sla

from lindloc.lindblad import build_generator, random_term


def dense_heisenberg(gen, sites):
    """Heisenberg generator as a d^2 x d^2 matrix acting on row-major vec(A)."""
    d = 2 ** len(sites)
    I = np.eye(d)
    L = np.zeros((d * d, d * d), dtype=complex)
    for term in gen.terms:
        Q = term.q.to_dense(sites)
        # vec(X A Y) = (X kron Y^T) vec(A) for row-major vec
        block = np.kron(Q, I) + np.kron(I, Q.conj())
        for R in term.jumps:
            Rd = R.to_dense(sites)
            block = block + np.kron(Rd.conj().T, Rd.T)
        L += term.rate * block
    return L


def dense_evolve(gen, A, t, sites):
    d = 2 ** len(sites)
    vec = A.to_dense(sites).reshape(-1)
    return (sla.expm(t * dense_heisenberg(gen, sites)) @ vec).reshape(d, d)


def random_generator(rng, n_sites, n_jumps=2):
    terms = [random_term((i, i + 1), rng, n_jumps=n_jumps, rate=float(rng.uniform(0.2, 1.0)))
             for i in range(n_sites - 1)]
    terms.append(random_term((0,), rng, n_jumps=1))
    return build_generator(terms)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def record():
    """Store the one-line verdict of an acceptance criterion."""

    def _record(number, passed, detail):
        ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(ACCEPTANCE_LINES[number])

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
