"""Hand-built chains and random generators shared by the tests."""

import numpy as np

from markovmask import validate_chain

C1 = np.array([[0.5, 0.0],
               [0.5, 1.0]])
# t1 -> a1 w.p. 0.3, t1 -> a2 w.p. 0.7
C2 = np.array([[0.0, 0.0, 0.0],
               [0.3, 1.0, 0.0],
               [0.7, 0.0, 1.0]])
C5 = np.array([[0.50, 0.0, 0.0],
               [0.25, 0.5, 0.0],
               [0.25, 0.5, 1.0]])
CYCLE2 = np.array([[0.0, 1.0],
                   [1.0, 0.0]])


def c1():
    return validate_chain(C1, ["t1", "a1"])


def c2():
    return validate_chain(C2, ["t1", "a1", "a2"])


def c5():
    return validate_chain(C5, ["t1", "t2", "a"])


def cycle2():
    return validate_chain(CYCLE2, ["u", "v"])


def _ergodic_block(rng, size, kind):
    if size == 1:
        return np.ones((1, 1))
    if kind == "cycle":
        perm = np.roll(np.arange(size), 1)
        B = np.zeros((size, size))
        B[perm, np.arange(size)] = 1.0
        return B
    B = rng.random((size, size)) * (rng.random((size, size)) < 0.7)
    # a Hamiltonian cycle keeps the class irreducible
    B[np.roll(np.arange(size), 1), np.arange(size)] += 0.5
    return B / B.sum(axis=0)


def random_reducible(rng, n_max=20, min_leak=0.1, shuffle=True,
                     periodic=True, absorbing_only=False):
    """Random column-stochastic ``T`` with ``t >= 1``.

    Transient states form a chain ``0 -> 1 -> ... -> t-1`` plus random
    extra edges (so transient classes can have several states); the last
    transient state always leaks at least ``min_leak`` into an ergodic
    class. Ergodic classes are absorbing states, random irreducible blocks
    or deterministic cycles (periodic). Returns ``(T, labels)``.
    """
    n_erg_classes = int(rng.integers(1, 4))
    kinds = ["cycle" if periodic and rng.random() < 0.3 else "random"
             for _ in range(n_erg_classes)]
    sizes = [1 if absorbing_only else int(rng.integers(1, 5))
             for _ in range(n_erg_classes)]
    e = sum(sizes)
    t = int(rng.integers(1, max(2, n_max - e + 1)))
    n = t + e
    T = np.zeros((n, n))
    off = t
    erg_states = []
    for size, kind in zip(sizes, kinds):
        T[off:off + size, off:off + size] = _ergodic_block(rng, size, kind)
        erg_states.extend(range(off, off + size))
        off += size
    for j in range(t):
        w = rng.random(t) * (rng.random(t) < 0.4)
        if j + 1 < t:
            w[j + 1] += 0.2
        col = np.zeros(n)
        col[:t] = w
        leak = rng.random(e) * (rng.random(e) < 0.5)
        if j == t - 1 or rng.random() < 0.5:
            leak[int(rng.integers(e))] += 1.0
        col[t:] = leak
        col /= col.sum()
        if j == t - 1 and col[t:].sum() < min_leak:
            col[:t] *= (1 - min_leak) / col[:t].sum()
            col[t:] *= min_leak / col[t:].sum()
        T[:, j] = col
    labels = [f"x{k}" for k in range(n)]
    if shuffle:
        p = rng.permutation(n)
        T = T[np.ix_(p, p)]
        labels = [labels[k] for k in p]
    T /= T.sum(axis=0)
    return T, labels


def random_chain(seed, **kw):
    rng = np.random.default_rng(seed)
    T, labels = random_reducible(rng, **kw)
    return validate_chain(T, labels)


def random_cumulative_mask_matrix(rng, chain, classification, density=0.6):
    """Nonnegative explicit weights, zero on ergodic-to-ergodic moves."""
    n = chain.n
    M = rng.random((n, n)) * (rng.random((n, n)) < density)
    erg = classification.is_ergodic
    M[np.ix_(erg, erg)] = 0.0
    return M


def series_terms(chain, classification, tail=1e-13):
    """Number of terms making the Neumann tail of ``A_T`` below ``tail``."""
    trans = classification.transient_states
    A = chain.dense()[np.ix_(trans, trans)]
    P = np.eye(len(trans))
    m = 0
    while np.abs(P).sum(axis=0).max() > 0.5:
        P = P @ A
        m += 1
    halvings = int(np.ceil(np.log2(1.0 / tail))) + 8
    return m * halvings
