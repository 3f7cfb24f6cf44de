import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

import helpers
from markovmask import (canonical_blocks, classify_states, errors, kron_compose,
                        kron_distribution, make_distribution, point_mass,
                        validate_chain)


# --- validation --------------------------------------------------------------

def test_identity_is_absorbing_single_state():
    chain = validate_chain([[1.0]])
    cl = classify_states(chain)
    assert chain.n == 1 and cl.t == 0
    assert cl.absorbing_states == (0,)


def test_c1_validates(chain_c1):
    np.testing.assert_array_equal(chain_c1.dense(), helpers.C1)
    assert chain_c1.labels == ("t1", "a1")


def test_short_column_is_non_stochastic():
    with pytest.raises(errors.NonStochastic) as info:
        validate_chain([[0.5, 0.0], [0.4, 1.0]], tol=1e-9)
    assert info.value.column == 0
    assert info.value.deviation == pytest.approx(0.1)


def test_negative_entry():
    with pytest.raises(errors.NegativeEntry) as info:
        validate_chain([[1.2, 0.0], [-0.2, 1.0]])
    assert (info.value.i, info.value.j) == (1, 0)


def test_entry_above_one():
    with pytest.raises(errors.EntryAboveOne):
        validate_chain([[1.5, 0.0], [0.0, 1.0]])


@pytest.mark.parametrize("raw", [np.ones((2, 3)) / 2, np.ones(3), np.zeros((0, 0))])
def test_non_square(raw):
    with pytest.raises(errors.NonSquare):
        validate_chain(raw)


def test_non_finite():
    with pytest.raises(errors.NonFinite):
        validate_chain([[np.nan, 0.0], [1.0, 1.0]])


def test_bad_labels():
    with pytest.raises(errors.BadLabels):
        validate_chain(helpers.C1, ["x", "x"])
    with pytest.raises(errors.BadLabels):
        validate_chain(helpers.C1, ["x"])


def test_small_deviation_is_renormalized():
    T = np.array([[0.5 + 5e-10, 0.0], [0.5, 1.0]])
    chain = validate_chain(T)
    assert chain.dense()[:, 0].sum() == pytest.approx(1.0, abs=1e-15)


def test_tiny_entries_dropped():
    T = np.array([[1.0 - 1e-12, 0.0], [1e-12, 1.0]])
    chain = validate_chain(T)
    assert chain.nnz == 2


def test_validation_copies_input():
    T = np.array(helpers.C1)
    chain = validate_chain(T)
    T[0, 0] = 7.0
    assert chain.dense()[0, 0] == 0.5
    S = sp.csc_array(helpers.C1)
    validate_chain(S)
    assert S.toarray()[0, 0] == 0.5


def test_storage_switches_to_sparse():
    n = 600
    T = sp.eye_array(n, format="csc")
    chain = validate_chain(T)
    assert chain.is_sparse and chain.nnz == n
    assert not validate_chain(np.eye(3)).is_sparse


def test_index_lookup(chain_c5):
    assert chain_c5.index("t2") == 1
    assert chain_c5.index(2) == 2
    with pytest.raises(errors.UnknownState):
        chain_c5.index("nope")


def test_token_depends_on_structure_and_labels():
    a = validate_chain(helpers.C1, ["t1", "a1"])
    b = validate_chain(helpers.C1, ["t1", "a1"])
    c = validate_chain(helpers.C1, ["p", "q"])
    assert a.token == b.token != c.token


# --- distributions -----------------------------------------------------------

def test_distribution_clamps_tiny_negatives():
    mu = make_distribution([1.0 + 1e-12, -1e-12])
    assert mu.mu[1] == 0.0


@pytest.mark.parametrize("values", [[0.5, 0.4], [1.5, -0.5], [np.inf, 0.0]])
def test_bad_distribution(values):
    with pytest.raises(errors.BadDistribution):
        make_distribution(values)


def test_distribution_length_checked():
    with pytest.raises(errors.BadDistribution):
        make_distribution([1.0], n=2)


def test_point_mass(chain_c5):
    np.testing.assert_array_equal(point_mass(chain_c5, "t2").mu, [0, 1, 0])


# --- classification ----------------------------------------------------------

def test_classify_c1(chain_c1):
    cl = classify_states(chain_c1)
    assert cl.t == 1
    assert list(cl.transient_states) == [0]
    assert cl.absorbing_states == (1,)


def test_classify_cycle2(chain_cycle2):
    cl = classify_states(chain_cycle2)
    assert cl.t == 0
    assert len(cl.ergodic_classes) == 1
    assert set(cl.ergodic_classes[0].states) == {0, 1}
    assert cl.absorbing_states == ()


def test_classify_c5(chain_c5):
    cl = classify_states(chain_c5)
    assert cl.t == 2
    assert [c.states for c in cl.transient_classes] == [(0,), (1,)]
    assert cl.absorbing_states == (2,)


def test_transient_classes_in_topological_order():
    # t2 feeds t1 here, so t2 must come first
    T = np.array([[0.5, 0.5, 0.0],
                  [0.0, 0.5, 0.0],
                  [0.5, 0.0, 1.0]])
    cl = classify_states(validate_chain(T))
    assert list(cl.transient_states) == [1, 0]


def test_numerically_ergodic_class_warns():
    T = np.array([[1 - 1e-8, 0.0], [1e-8, 1.0]])
    with pytest.warns(RuntimeWarning, match="close to ergodic"):
        cl = classify_states(validate_chain(T))
    assert cl.t == 1
    assert cl.warnings


# --- canonical blocks --------------------------------------------------------

def test_blocks_c1(chain_c1):
    b = canonical_blocks(chain_c1, classify_states(chain_c1))
    np.testing.assert_array_equal(b.A_T, [[0.5]])
    np.testing.assert_array_equal(b.B_T, [[0.5]])
    np.testing.assert_array_equal(b.E_T, [[1.0]])


def test_blocks_c5(chain_c5):
    b = canonical_blocks(chain_c5, classify_states(chain_c5))
    np.testing.assert_array_equal(b.A_T, [[0.5, 0.0], [0.25, 0.5]])
    np.testing.assert_array_equal(b.B_T, [[0.25, 0.5]])
    np.testing.assert_array_equal(b.E_T, [[1.0]])


def test_blocks_cycle2(chain_cycle2):
    b = canonical_blocks(chain_cycle2, classify_states(chain_cycle2))
    assert b.A_T.shape == (0, 0)
    np.testing.assert_array_equal(b.E_T, helpers.CYCLE2)


def test_blocks_reject_foreign_classification(chain_c1, chain_c5):
    with pytest.raises(errors.ChainMismatch):
        canonical_blocks(chain_c1, classify_states(chain_c5))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_classification_invariants(seed):
    chain = helpers.random_chain(seed)
    cl = classify_states(chain)
    T = chain.dense()
    # t + |E| = n and the order is a permutation
    assert cl.t + len(cl.ergodic_states) == chain.n
    assert sorted(cl.order.tolist()) == list(range(chain.n))
    # ergodic classes keep their mass
    for c in cl.ergodic_classes:
        inside = T[np.ix_(c.states, c.states)].sum(axis=0)
        np.testing.assert_allclose(inside, 1.0, atol=chain.tol_stochastic)
    # canonical form: bit-exact reassembly, zero upper-right block
    b = canonical_blocks(chain, cl)
    P = T[np.ix_(cl.order, cl.order)]
    assert np.array_equal(b.assemble(), P)
    assert not P[:cl.t, cl.t:].any()
    # A_T block lower triangular over transient classes
    pos = 0
    for c in cl.transient_classes:
        assert not P[pos:pos + c.size, pos + c.size:cl.t].any()
        pos += c.size
    # rho(A_T) < 1: powers decay
    A = P[:cl.t, :cl.t]
    assert np.abs(np.linalg.matrix_power(A, 400)).max() < 1e-3


# --- Kronecker composition ---------------------------------------------------

def test_kron_identity():
    one = validate_chain([[1.0]])
    np.testing.assert_array_equal(kron_compose(one, one).dense(), [[1.0]])


def test_kron_c1(chain_c1):
    K = kron_compose(chain_c1, chain_c1)
    assert K.n == 4
    assert K.labels == ("t1|t1", "t1|a1", "a1|t1", "a1|a1")
    np.testing.assert_array_equal(K.dense()[:, 0], [0.25, 0.25, 0.25, 0.25])


def test_kron_distribution():
    np.testing.assert_array_equal(kron_distribution([1, 0], [0, 1]).mu, [0, 1, 0, 0])


def test_kron_size_limit(chain_c5):
    with pytest.raises(errors.SizeLimitExceeded):
        kron_compose(chain_c5, chain_c5, max_states=8)


def test_kron_sparse_above_threshold(chain_c5):
    K = kron_compose(chain_c5, chain_c5, dense_threshold=4)
    assert K.is_sparse
    np.testing.assert_allclose(K.dense(), np.kron(helpers.C5, helpers.C5))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kron_associative(seed):
    rng = np.random.default_rng(seed)
    chains = [validate_chain(helpers.random_reducible(rng, n_max=5)[0])
              for _ in range(3)]
    left = kron_compose(kron_compose(chains[0], chains[1]), chains[2])
    right = kron_compose(chains[0], kron_compose(chains[1], chains[2]))
    np.testing.assert_allclose(left.dense(), right.dense(), rtol=0, atol=1e-15)
    np.testing.assert_allclose(left.dense().sum(axis=0), 1.0, atol=2e-9)
