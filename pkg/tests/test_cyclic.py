from fractions import Fraction

import numpy as np
import pytest

from sflow.domain.cyclic import (
    B_chain, B_cochain, Chain, CochainEval, CyclicError, TensorTerm, b_chain, b_cochain,
    boundary_witness, chain_from_json, chain_to_json, chern_chain, pair,
)
from sflow.services.property_suites import random_int_matrix, random_unitary


def shift(n=5):
    """Circulant shift, a permutation unitary with exact products."""
    return np.roll(np.eye(n, dtype=complex), 1, axis=0)


def normalized_cochain(X, m):
    """tr(a0 [X, a1] ... [X, am]); vanishes when any a_i, i >= 1, is scalar."""
    def evaluate(*a):
        out = a[0]
        for x in a[1:]:
            out = out @ (X @ x - x @ X)
        return np.trace(out)
    return CochainEval(m, evaluate)


def chain_in_degrees(rng, degrees, n=3):
    terms = []
    for m in degrees:
        for _ in range(2):
            coeff = Fraction(int(rng.integers(1, 5)) * int(rng.choice([-1, 1])), int(rng.integers(1, 3)))
            terms.append(TensorTerm(coeff, tuple(random_int_matrix(rng, n) for _ in range(m + 1))))
    return Chain(terms)


def test_normalization_drops_scalar_factors():
    a = np.array([[1, 2], [3, 4]], dtype=complex)
    assert Chain.of(1, a, np.eye(2), a).is_zero()
    assert Chain.of(1, a, a, 3 * np.eye(2)).is_zero()
    assert not Chain.of(1, np.eye(2), a).is_zero()


def test_normalization_is_modulo_scalars():
    a = np.array([[1, 2], [3, 4]], dtype=complex)
    b = np.array([[0, 1j], [2, -1]], dtype=complex)
    one = np.eye(2)
    assert (Chain.of(1, one, a, b + one) - Chain.of(1, one, a, b)).is_zero()
    assert Chain.of(1, a, b - 3j * one, a) == Chain.of(1, a, b, a + 2 * one)
    assert not (Chain.of(1, a + one, b) - Chain.of(1, a, b)).is_zero()
    assert not (Chain.of(1, a, b) - Chain.of(1, a, 2 * b)).is_zero()


def test_chain_cancellation():
    a = np.array([[0, 1], [1, 0]], dtype=complex)
    c = Chain.of(Fraction(1, 2), a, a) + Chain.of(Fraction(-1, 2), a, a)
    assert c.is_zero()
    assert len(Chain.of(1, a, a) + Chain.of(2, a, a)) == 1


def test_b_of_degree_one_chern_term_vanishes():
    u = shift()
    assert b_chain(Chain.of(1, u.conj().T, u)).is_zero()


def test_b_of_witness_term():
    u = shift()
    us = u.conj().T
    one = np.eye(5, dtype=complex)
    got = b_chain(Chain.of(1, one, us, u, us, u))
    assert got == Chain.of(1, us, u, us, u) + Chain.of(1, u, us, u, us)


def test_B_examples():
    u = shift()
    us = u.conj().T
    one = np.eye(5, dtype=complex)
    assert B_chain(Chain.of(1, us, u)) == Chain.of(1, one, us, u) - Chain.of(1, one, u, us)
    assert B_chain(Chain.of(1, one, us, u, us, u)).is_zero()
    got = B_chain(Chain.of(1, us, u, us, u))
    assert got == Chain.of(2, one, us, u, us, u) - Chain.of(2, one, u, us, u, us)


def test_degrees_shift():
    rng = np.random.default_rng(3)
    c = chain_in_degrees(rng, [2])
    assert b_chain(c).degrees() == [1]
    assert B_chain(c).degrees() == [3]


@pytest.mark.parametrize("seed", range(10))
def test_bicomplex_identities(seed):
    rng = np.random.default_rng(seed)
    c = chain_in_degrees(rng, range(0, 7), n=2)
    assert b_chain(b_chain(c)).is_zero()
    assert B_chain(B_chain(c)).is_zero()
    assert (b_chain(B_chain(c)) + B_chain(b_chain(c))).is_zero()


def test_chern_chain_coefficients():
    u = shift()
    ch = chern_chain(u, 5)
    assert ch.degrees() == [1, 3, 5]
    assert [t.coeff for t in ch] == [1, -1, 2]
    assert np.array_equal(ch.terms(1)[0].factors[0], u.conj().T)


def test_chern_chain_errors():
    with pytest.raises(CyclicError):
        chern_chain(shift(), 4)
    with pytest.raises(CyclicError):
        chern_chain(2 * np.eye(3), 3)


@pytest.mark.parametrize("u", [shift(5), random_unitary(np.random.default_rng(11), 4)])
def test_boundary_witness(u):
    z = boundary_witness(u, 5)
    assert z.degrees() == [2, 4, 6]
    assert [t.coeff for t in z.terms(4)] == [-1]
    us = u.conj().T
    image = b_chain(z) + B_chain(z)
    assert image.component(1) == Chain.of(1, u, us) + Chain.of(1, us, u)


def test_boundary_witness_of_identity_is_zero():
    z = boundary_witness(np.eye(3), 5)
    assert z.is_zero()
    assert chern_chain(np.eye(3), 5).is_zero()


def test_pair_basics():
    X = np.diag([1.0, 2.0, 3.0]).astype(complex)
    phi = {1: normalized_cochain(X, 1)}
    assert pair(phi, Chain()) == 0
    with pytest.raises(CyclicError):
        pair(phi, Chain.of(1, X, X, X))
    with pytest.raises(CyclicError):
        phi[1](X)
    with pytest.raises(CyclicError):
        B_cochain(normalized_cochain(X, 0))


@pytest.mark.parametrize("seed", range(5))
def test_b_adjointness(seed):
    rng = np.random.default_rng(seed)
    X = random_int_matrix(rng, 3)
    c = chain_in_degrees(rng, range(1, 5))
    phis = {m: normalized_cochain(X, m) for m in range(0, 5)}
    lhs = pair(phis, b_chain(c))
    rhs = pair({m: b_cochain(phis[m - 1]) for m in range(1, 5)}, c)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


@pytest.mark.parametrize("seed", range(5))
def test_B_adjointness(seed):
    rng = np.random.default_rng(100 + seed)
    X = random_int_matrix(rng, 3)
    c = chain_in_degrees(rng, range(0, 4))
    phis = {m: normalized_cochain(X, m) for m in range(0, 5)}
    lhs = pair(phis, B_chain(c))
    rhs = pair({m: B_cochain(phis[m + 1]) for m in range(0, 4)}, c)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_cocycle_pairs_to_zero_on_boundaries():
    # tr(a0 [X, a1]) is b-closed and B-closed
    u = shift()
    X = np.diag(np.arange(5.0)).astype(complex)
    phi = {1: normalized_cochain(X, 1), 3: CochainEval(3, lambda *a: 0.0)}
    rng = np.random.default_rng(5)
    a = [random_int_matrix(rng, 5) for _ in range(3)]
    assert abs(b_cochain(phi[1])(*a)) <= 1e-9
    z = boundary_witness(u, 3)
    image = b_chain(z) + B_chain(z)
    assert image.degrees() == [1, 3]
    assert abs(pair(phi, image)) <= 1e-12


def test_chain_json():
    u = shift(3)
    c = chern_chain(u, 3)
    data = chain_to_json(c)
    assert data["3"][0]["coeff"] == "-1"
    assert chain_from_json(data) == c
