"""Finite Markov chains: validation, state classification, canonical blocks
and Kronecker composition.

All transition matrices are column-stochastic: ``T[i, j]`` is the probability
of moving to state ``i`` from state ``j``.
"""

from __future__ import annotations

import hashlib
import heapq
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from . import errors

DEFAULT_TOL = 1e-9
DENSE_THRESHOLD = 512
MAX_COMPOSITE_STATES = 2_000_000
# leak below this makes a transient class "numerically ergodic"
NUMERICAL_ERGODIC_LEAK = 1e-6

_EPS = np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class StochasticChain:
    """A validated column-stochastic transition matrix with state labels.

    Build instances with :func:`validate_chain`; the constructor does not
    check anything.
    """

    T: np.ndarray | sp.csc_array
    labels: tuple[str, ...]
    tol_stochastic: float = DEFAULT_TOL

    @property
    def n(self) -> int:
        return self.T.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.T)

    @cached_property
    def structure(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(rows, cols, values)`` of the structural nonzeros, column-major."""
        if self.is_sparse:
            T = self.T
            cols = np.repeat(np.arange(self.n), np.diff(T.indptr))
            rows = T.indices.astype(np.int64)
            vals = T.data.astype(float)
        else:
            cols, rows = np.nonzero(self.T.T)
            vals = self.T[rows, cols]
        rows, cols = rows.astype(np.int64), cols.astype(np.int64)
        for a in (rows, cols, vals):
            a.setflags(write=False)
        return rows, cols, vals

    @property
    def nnz(self) -> int:
        return len(self.structure[0])

    @cached_property
    def token(self) -> str:
        """Content hash identifying this chain (matrix and labels)."""
        h = hashlib.blake2b(digest_size=12)
        rows, cols, vals = self.structure
        h.update(np.int64(self.n).tobytes())
        h.update(rows.tobytes())
        h.update(cols.tobytes())
        h.update(np.ascontiguousarray(vals).tobytes())
        h.update("\x1f".join(self.labels).encode())
        return h.hexdigest()

    @cached_property
    def _label_index(self) -> dict[str, int]:
        return {lab: k for k, lab in enumerate(self.labels)}

    def index(self, state: int | str) -> int:
        """Resolve a state given by label or integer index."""
        if isinstance(state, (int, np.integer)) and not isinstance(state, bool):
            if 0 <= state < self.n:
                return int(state)
            raise errors.UnknownState(state)
        try:
            return self._label_index[state]
        except (KeyError, TypeError):
            raise errors.UnknownState(state) from None

    def dense(self) -> np.ndarray:
        return self.T.toarray() if self.is_sparse else np.array(self.T)

    def submatrix(self, rows: np.ndarray, cols: np.ndarray):
        """``T[rows][:, cols]`` in the chain's storage format."""
        if self.is_sparse:
            return self.T[rows][:, cols].tocsc()
        return self.T[np.ix_(rows, cols)]

    def __repr__(self):
        kind = "sparse" if self.is_sparse else "dense"
        return f"StochasticChain(n={self.n}, nnz={self.nnz}, {kind})"


@dataclass(frozen=True, eq=False)
class DistributionVector:
    """An initial distribution: nonnegative, sums to one."""

    mu: np.ndarray

    @property
    def n(self) -> int:
        return len(self.mu)


def make_distribution(values, n: int | None = None,
                      tol: float = DEFAULT_TOL) -> DistributionVector:
    """Validate a probability vector, clamping tiny negatives to zero."""
    if isinstance(values, DistributionVector):
        values = values.mu
    mu = np.array(values, dtype=float).ravel()
    if n is not None and len(mu) != n:
        raise errors.BadDistribution(
            f"distribution has length {len(mu)}, chain has {n} states")
    if not np.all(np.isfinite(mu)):
        raise errors.BadDistribution("distribution has non-finite entries")
    if np.any(mu < -tol):
        k = int(np.argmin(mu))
        raise errors.BadDistribution(f"entry {k} = {mu[k]!r} is negative")
    mu[mu < 0] = 0.0
    total = mu.sum()
    if abs(total - 1.0) > tol:
        raise errors.BadDistribution(f"distribution sums to {total!r}, not 1")
    mu.setflags(write=False)
    return DistributionVector(mu)


def point_mass(chain: StochasticChain, state: int | str) -> DistributionVector:
    mu = np.zeros(chain.n)
    mu[chain.index(state)] = 1.0
    mu.setflags(write=False)
    return DistributionVector(mu)


def validate_chain(raw, labels: Sequence[str] | None = None,
                   tol: float = DEFAULT_TOL,
                   dense_threshold: int = DENSE_THRESHOLD) -> StochasticChain:
    """Check and normalize a column-stochastic matrix.

    Entries within ``tol`` of zero are dropped, negatives beyond ``tol``
    raise :class:`~markovmask.errors.NegativeEntry`, and every column must
    sum to one within ``tol``. Columns off by more than a few ulps are
    rescaled to sum exactly to one. Chains with more than ``dense_threshold``
    states are stored as CSC sparse matrices.
    """
    if sp.issparse(raw):
        M = sp.csc_array(raw, dtype=float, copy=True)
        shape = M.shape
    else:
        M = np.array(raw, dtype=float)
        shape = M.shape
    if len(shape) != 2 or shape[0] != shape[1] or shape[0] < 1:
        raise errors.NonSquare(shape)
    n = shape[0]

    if sp.issparse(M):
        M.sum_duplicates()
        M.sort_indices()
        data = M.data
        if not np.all(np.isfinite(data)):
            raise errors.NonFinite("transition matrix has non-finite entries")
        cols_of = np.repeat(np.arange(n), np.diff(M.indptr))
        bad = np.flatnonzero(data < -tol)
        if len(bad):
            k = bad[0]
            raise errors.NegativeEntry(int(M.indices[k]), int(cols_of[k]), float(data[k]))
        bad = np.flatnonzero(data > 1 + tol)
        if len(bad):
            k = bad[0]
            raise errors.EntryAboveOne(int(M.indices[k]), int(cols_of[k]), float(data[k]))
        data[np.abs(data) <= tol] = 0.0
        M.eliminate_zeros()
        sums = np.asarray(M.sum(axis=0)).ravel()
        counts = np.diff(M.indptr)
    else:
        if not np.all(np.isfinite(M)):
            raise errors.NonFinite("transition matrix has non-finite entries")
        neg = np.argwhere(M < -tol)
        if len(neg):
            i, j = sorted(neg.tolist(), key=lambda ij: (ij[1], ij[0]))[0]
            raise errors.NegativeEntry(i, j, float(M[i, j]))
        big = np.argwhere(M > 1 + tol)
        if len(big):
            i, j = sorted(big.tolist(), key=lambda ij: (ij[1], ij[0]))[0]
            raise errors.EntryAboveOne(i, j, float(M[i, j]))
        M[np.abs(M) <= tol] = 0.0
        sums = M.sum(axis=0)
        counts = np.count_nonzero(M, axis=0)

    dev = sums - 1.0
    bad = np.flatnonzero(np.abs(dev) > tol)
    if len(bad):
        j = int(bad[0])
        raise errors.NonStochastic(j, float(abs(dev[j])))
    rescale = np.abs(dev) > 8 * _EPS * np.maximum(counts, 1)
    if np.any(rescale):
        scale = np.where(rescale, 1.0 / sums, 1.0)
        if sp.issparse(M):
            M = sp.csc_array(M @ sp.diags_array(scale))
        else:
            M = M * scale[None, :]

    if n > dense_threshold:
        if not sp.issparse(M):
            M = sp.csc_array(M)
        M.sort_indices()
    elif sp.issparse(M):
        M = M.toarray()
    if sp.issparse(M):
        for a in (M.data, M.indices, M.indptr):
            a.setflags(write=False)
    else:
        M.setflags(write=False)

    if labels is None:
        labels = tuple(f"s{i}" for i in range(n))
    else:
        labels = tuple(str(x) for x in labels)
        if len(labels) != n:
            raise errors.BadLabels(f"{len(labels)} labels for {n} states")
        if len(set(labels)) != n:
            raise errors.BadLabels("state labels must be distinct")
    return StochasticChain(M, labels, tol)


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StateClass:
    states: tuple[int, ...]
    ergodic: bool
    max_leak: float

    @property
    def size(self) -> int:
        return len(self.states)


@dataclass(frozen=True, eq=False)
class StateClassification:
    """Partition of the states into transient and ergodic classes.

    ``classes`` is in canonical order: transient classes first, arranged so
    that probability only flows to later classes, then the ergodic classes.
    ``order[k]`` is the original index of the state in canonical position
    ``k``; ``position`` is its inverse.
    """

    n: int
    classes: tuple[StateClass, ...]
    order: np.ndarray
    position: np.ndarray
    is_ergodic: np.ndarray
    class_of: np.ndarray
    absorbing_states: tuple[int, ...]
    chain_token: str
    labels: tuple[str, ...]
    warnings: tuple[str, ...] = field(default=())

    @property
    def t(self) -> int:
        return int(self.n - self.is_ergodic.sum())

    @property
    def transient_classes(self) -> tuple[StateClass, ...]:
        return tuple(c for c in self.classes if not c.ergodic)

    @property
    def ergodic_classes(self) -> tuple[StateClass, ...]:
        return tuple(c for c in self.classes if c.ergodic)

    @property
    def transient_states(self) -> np.ndarray:
        """Transient states in canonical order."""
        return self.order[:self.t]

    @property
    def ergodic_states(self) -> np.ndarray:
        return self.order[self.t:]

    def index(self, state: int | str) -> int:
        if isinstance(state, (int, np.integer)) and not isinstance(state, bool):
            if 0 <= state < self.n:
                return int(state)
        elif state in self.labels:
            return self.labels.index(state)
        raise errors.UnknownState(state)

    def ergodic_class_of(self, state: int) -> int:
        """Index into :attr:`ergodic_classes` of the class holding ``state``."""
        k = self.class_of[state] - len(self.transient_classes)
        if k < 0:
            raise errors.UnknownClass(f"state {state} is transient")
        return int(k)


def _graph(chain: StochasticChain):
    rows, cols, vals = chain.structure
    keep = vals > chain.tol_stochastic
    # edge j -> i for T[i, j] > 0; csgraph wants adjacency[src, dst]
    return sp.csr_array((np.ones(keep.sum()), (cols[keep], rows[keep])),
                        shape=(chain.n, chain.n))


def classify_states(chain: StochasticChain) -> StateClassification:
    """Find communicating classes and put them in canonical order.

    A class is ergodic when no transition leaves it. Transient classes are
    topologically sorted along the direction of probability flow, ties going
    to the class with the smallest original state index; ergodic classes
    follow, ordered by smallest state index.
    """
    n = chain.n
    ncomp, comp = connected_components(_graph(chain), directed=True,
                                       connection="strong")
    rows, cols, vals = chain.structure
    src_c, dst_c = comp[cols], comp[rows]
    leaving = src_c != dst_c
    leak = np.bincount(cols[leaving], weights=vals[leaving], minlength=n)

    members: list[list[int]] = [[] for _ in range(ncomp)]
    for s in range(n):
        members[comp[s]].append(s)
    has_exit = np.zeros(ncomp, bool)
    has_exit[src_c[leaving]] = True

    succ: list[set[int]] = [set() for _ in range(ncomp)]
    indeg = np.zeros(ncomp, int)
    for a, b in set(zip(src_c[leaving].tolist(), dst_c[leaving].tolist())):
        succ[a].add(b)
    for a in range(ncomp):
        for b in succ[a]:
            indeg[b] += 1

    heap = [(members[c][0], c) for c in range(ncomp) if indeg[c] == 0]
    heapq.heapify(heap)
    topo = []
    while heap:
        _, c = heapq.heappop(heap)
        topo.append(c)
        for b in succ[c]:
            indeg[b] -= 1
            if indeg[b] == 0:
                heapq.heappush(heap, (members[b][0], b))

    transient = [c for c in topo if has_exit[c]]
    ergodic = sorted((c for c in range(ncomp) if not has_exit[c]),
                     key=lambda c: members[c][0])

    notes = []
    classes = []
    for c in transient + ergodic:
        states = tuple(members[c])
        max_leak = float(leak[list(states)].max())
        if has_exit[c] and max_leak < NUMERICAL_ERGODIC_LEAK:
            labels = [chain.labels[s] for s in states[:5]]
            msg = (f"transient class {labels}{'...' if len(states) > 5 else ''}"
                   f" leaks at most {max_leak:.3g} per step; numerically "
                   "close to ergodic")
            notes.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
        classes.append(StateClass(states, not has_exit[c], max_leak))

    order = np.fromiter((s for c in classes for s in c.states), np.int64, n)
    position = np.empty(n, np.int64)
    position[order] = np.arange(n)
    is_ergodic = np.zeros(n, bool)
    class_of = np.empty(n, np.int64)
    for k, c in enumerate(classes):
        class_of[list(c.states)] = k
        if c.ergodic:
            is_ergodic[list(c.states)] = True
    diag = _diagonal(chain)
    absorbing = tuple(sorted(
        c.states[0] for c in classes
        if c.ergodic and c.size == 1
        and diag[c.states[0]] >= 1 - chain.tol_stochastic))
    for a in (order, position, is_ergodic, class_of):
        a.setflags(write=False)
    return StateClassification(n, tuple(classes), order, position, is_ergodic,
                               class_of, absorbing, chain.token, chain.labels,
                               tuple(notes))


def _diagonal(chain: StochasticChain) -> np.ndarray:
    if chain.is_sparse:
        return chain.T.diagonal()
    return np.diag(chain.T).copy()


@dataclass(frozen=True, eq=False)
class CanonicalBlocks:
    """``T`` permuted to ``[[A_T, 0], [B_T, E_T]]``.

    ``A_T`` is transient-to-transient, ``B_T`` transient-to-ergodic and
    ``E_T`` the block-diagonal ergodic part; ``order`` maps canonical
    positions back to original state indices.
    """

    A_T: np.ndarray | sp.csc_array
    B_T: np.ndarray | sp.csc_array
    E_T: np.ndarray | sp.csc_array
    order: np.ndarray
    t: int

    def assemble(self) -> np.ndarray:
        """Dense canonical matrix rebuilt from the blocks."""
        def d(X):
            return X.toarray() if sp.issparse(X) else np.asarray(X)
        t, m = self.t, len(self.order) - self.t
        top = np.hstack([d(self.A_T), np.zeros((t, m))])
        bottom = np.hstack([d(self.B_T), d(self.E_T)])
        return np.vstack([top, bottom])


def canonical_blocks(chain: StochasticChain,
                     classification: StateClassification) -> CanonicalBlocks:
    """Extract the canonical blocks and check that ``rho(A_T) < 1``.

    Each transient class is irreducible, so its diagonal block has spectral
    radius below one as soon as one of its columns loses mass; with the block
    triangular layout that settles ``rho(A_T) < 1`` without eigenvalues.
    """
    if classification.chain_token != chain.token:
        raise errors.ChainMismatch("classification belongs to another chain")
    for c in classification.transient_classes:
        if not c.max_leak > chain.tol_stochastic:
            raise errors.ClassificationError(
                f"transient class {c.states} keeps all of its mass")
    trans = classification.transient_states
    erg = classification.ergodic_states
    return CanonicalBlocks(
        A_T=chain.submatrix(trans, trans),
        B_T=chain.submatrix(erg, trans),
        E_T=chain.submatrix(erg, erg),
        order=classification.order,
        t=classification.t,
    )


# ---------------------------------------------------------------------------
# composition
# ---------------------------------------------------------------------------

def kron_compose(first: StochasticChain, second: StochasticChain,
                 max_states: int = MAX_COMPOSITE_STATES,
                 dense_threshold: int = DENSE_THRESHOLD) -> StochasticChain:
    """Chain of two independent chains stepping together.

    State ``(i1, i2)`` gets index ``i1 * n2 + i2`` and label ``"l1|l2"``.
    """
    n = first.n * second.n
    if n > max_states:
        raise errors.SizeLimitExceeded(
            f"composite chain would have {n} states (limit {max_states})")
    if n > dense_threshold or first.is_sparse or second.is_sparse:
        T = sp.kron(sp.csc_array(first.T), sp.csc_array(second.T), format="csc")
    else:
        T = np.kron(first.T, second.T)
    labels = [f"{a}|{b}" for a in first.labels for b in second.labels]
    tol = max(first.tol_stochastic, second.tol_stochastic)
    return validate_chain(T, labels, tol=2 * tol, dense_threshold=dense_threshold)


def kron_distribution(first, second) -> DistributionVector:
    mu1 = make_distribution(first).mu
    mu2 = make_distribution(second).mu
    return make_distribution(np.kron(mu1, mu2))
