"""Expectations of transition events.

Cumulative events on reducible chains use ``E[Y_M] = tr(M D T^*)`` with
``D = diag(nu)``, ``nu`` the expected transient occupancy obtained by one
solve with ``I - A_T``. Time-average events use ``D = diag(G mu)`` with
``G`` the Cesaro limit of the powers of ``T``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.linalg import lapack

from . import errors
from .chain import (DistributionVector, StateClassification, StochasticChain,
                    canonical_blocks, make_distribution)
from .masks import Mask

SOLVERS = ("householder", "lu-nopivot")
PIVOT_FLOOR = 1e-14
MAX_RELATIVE_RESIDUAL = 1e-8
STATIONARY_RESIDUAL = 1e-12
LU_BLOCK = 64


# ---------------------------------------------------------------------------
# factorizations of I - A_T
# ---------------------------------------------------------------------------

def lu_nopivot(S: np.ndarray, block: int = LU_BLOCK) -> np.ndarray:
    """Blocked right-looking LU without pivoting, packed in one array.

    Safe for matrices diagonally dominant by columns, which ``I - A_T`` is.
    The unit lower factor sits below the diagonal, ``U`` on and above it.
    """
    A = np.array(S, dtype=float, order="F")
    n = A.shape[0]
    for k in range(0, n, block):
        e = min(k + block, n)
        for j in range(k, e):
            piv = A[j, j]
            if abs(piv) < PIVOT_FLOOR:
                raise errors.SingularSystem(
                    f"pivot {j} is {piv:.3g}; a transient class is "
                    "numerically ergodic")
            A[j + 1:, j] /= piv
            if j + 1 < e:
                A[j + 1:, j + 1:e] -= np.outer(A[j + 1:, j], A[j, j + 1:e])
        if e < n:
            A[k:e, e:] = sla.solve_triangular(A[k:e, k:e], A[k:e, e:],
                                              lower=True, unit_diagonal=True)
            A[e:, e:] -= A[e:, k:e] @ A[k:e, e:]
    return A


@dataclass(frozen=True, eq=False)
class Factorization:
    """Factorization of ``S = I - A_T`` (canonical transient order)."""

    solver: str
    t: int
    packed: np.ndarray
    tau: np.ndarray | None = None

    @classmethod
    def of(cls, S: np.ndarray, solver: str = "householder") -> "Factorization":
        t = S.shape[0]
        if solver == "householder":
            if t == 0:
                return cls(solver, 0, np.zeros((0, 0)), np.zeros(0))
            (qr, tau), _ = sla.qr(np.asfortranarray(S), mode="raw",
                                  overwrite_a=True, check_finite=False)
            f = cls(solver, t, qr, tau)
        elif solver == "lu-nopivot":
            f = cls(solver, t, lu_nopivot(S))
        else:
            raise ValueError(f"solver must be one of {SOLVERS}")
        d = f.min_abs_diagonal()
        if t and d < PIVOT_FLOOR:
            raise errors.SingularSystem(
                f"triangular factor has diagonal entry {d:.3g}; a transient "
                "class is numerically ergodic")
        return f

    def min_abs_diagonal(self) -> float:
        if self.t == 0:
            return np.inf
        return float(np.abs(np.diag(self.packed)).min())

    def _apply_q(self, b: np.ndarray, trans: str) -> np.ndarray:
        c = np.asfortranarray(b.reshape(self.t, -1))
        lwork = max(1, c.shape[1]) * 64
        out, _, info = lapack.dormqr("L", trans, self.packed, self.tau, c,
                                     lwork)
        if info != 0:
            raise errors.NumericalError(f"dormqr failed with info={info}")
        return out.reshape(b.shape)

    def _tri(self, b, trans=0, lower=False, unit=False):
        return sla.solve_triangular(self.packed, b, trans=trans, lower=lower,
                                    unit_diagonal=unit, check_finite=False)

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve ``S x = b``."""
        b = np.asarray(b, dtype=float)
        if self.t == 0:
            return np.zeros_like(b)
        if self.solver == "householder":
            return self._tri(self._apply_q(b, "T"))
        return self._tri(self._tri(b, lower=True, unit=True))

    def solve_transpose(self, b: np.ndarray) -> np.ndarray:
        """Solve ``S^T x = b``."""
        b = np.asarray(b, dtype=float)
        if self.t == 0:
            return np.zeros_like(b)
        if self.solver == "householder":
            return self._apply_q(self._tri(b, trans=1), "N")
        return self._tri(self._tri(b, trans=1), trans=1, lower=True, unit=True)

    def gram_inverse_apply(self, x: np.ndarray) -> np.ndarray:
        """``x -> S^{-1} S^{-T} x`` (for Householder: ``R^{-1} R^{-T} x``)."""
        if self.solver == "householder":
            return self._tri(self._tri(x, trans=1))
        return self.solve(self.solve_transpose(x))

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.t))


def factorize(chain: StochasticChain, classification: StateClassification,
              solver: str = "householder") -> tuple[Factorization, object]:
    """Factor ``I - A_T``; returns the factorization and ``A_T``."""
    if classification.chain_token != chain.token:
        raise errors.ChainMismatch("classification belongs to another chain")
    if solver not in SOLVERS:
        raise ValueError(f"solver must be one of {SOLVERS}")
    blocks = canonical_blocks(chain, classification)
    A = blocks.A_T
    t = blocks.t
    if sp.issparse(A):
        S = -A.toarray(order="F")
    else:
        S = -np.array(A, order="F")
    S[np.diag_indices(t)] += 1.0
    return Factorization.of(S, solver), A


# ---------------------------------------------------------------------------
# cumulative expectations
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SetupCache:
    """Everything that depends on ``T`` and ``mu`` but not on the mask.

    ``nu`` is indexed like the chain's states and vanishes on ergodic states.
    ``R_vals`` holds the entries of ``T D`` at the structural nonzeros of
    the transient columns (``R_rows``, ``R_cols``). ``R_full`` spreads the
    same values over all structural nonzeros, zero in ergodic columns, and
    ``ergodic_pairs`` indexes the nonzeros inside ergodic classes.
    """

    chain: StochasticChain
    classification: StateClassification
    factorization: Factorization
    A_T: object
    mu: np.ndarray
    nu: np.ndarray
    R_rows: np.ndarray
    R_cols: np.ndarray
    R_vals: np.ndarray
    residual: float
    token: str
    R_full: np.ndarray
    ergodic_pairs: np.ndarray

    @property
    def solver(self) -> str:
        return self.factorization.solver

    @property
    def t(self) -> int:
        return self.classification.t

    @property
    def chain_token(self) -> str:
        return self.chain.token

    @property
    def D_diag(self) -> np.ndarray:
        return self.nu

    @property
    def transient(self) -> np.ndarray:
        return self.classification.transient_states


def _mat_vec(A, x):
    return A @ x


def setup(chain: StochasticChain, classification: StateClassification, mu,
          solver: str = "householder",
          factorization: Factorization | None = None) -> SetupCache:
    """Factor ``I - A_T``, solve for ``nu`` and scale the transient columns.

    Probability that ``mu`` puts on ergodic states does not enter ``nu``.
    A factorization from an earlier call may be passed to skip step one.
    """
    mu = make_distribution(mu, chain.n).mu
    if factorization is None:
        factorization, A = factorize(chain, classification, solver)
    else:
        if factorization.t != classification.t:
            raise errors.ChainMismatch("factorization does not fit the chain")
        A = chain.submatrix(classification.transient_states,
                            classification.transient_states)
    trans = classification.transient_states
    mu_t = mu[trans]
    nu_t = factorization.solve(mu_t)
    if not np.all(np.isfinite(nu_t)):
        raise errors.SingularSystem("solve produced non-finite values")
    resid = mu_t - (nu_t - _mat_vec(A, nu_t))
    scale = np.linalg.norm(mu_t)
    rel = float(np.linalg.norm(resid) / scale) if scale > 0 else 0.0
    if rel > MAX_RELATIVE_RESIDUAL:
        raise errors.ResidualTooLarge(
            f"relative residual {rel:.3g} exceeds {MAX_RELATIVE_RESIDUAL}")
    nu = np.zeros(chain.n)
    nu[trans] = nu_t
    nu.setflags(write=False)

    rows, cols, vals = chain.structure
    keep = ~classification.is_ergodic[cols]
    R_rows, R_cols = rows[keep], cols[keep]
    R_vals = vals[keep] * nu[R_cols]
    R_full = np.zeros(len(vals))
    R_full[keep] = R_vals
    erg = classification.is_ergodic
    ergodic_pairs = np.flatnonzero(erg[rows] & erg[cols])
    for a in (R_rows, R_cols, R_vals, R_full, ergodic_pairs):
        a.setflags(write=False)

    h = hashlib.blake2b(digest_size=8)
    h.update(chain.token.encode())
    h.update(mu.tobytes())
    h.update(factorization.solver.encode())
    return SetupCache(chain, classification, factorization, A, mu, nu,
                      R_rows, R_cols, R_vals, rel, h.hexdigest(), R_full,
                      ergodic_pairs)


@dataclass(frozen=True)
class ExpectationResult:
    value: float
    mask_kind: str
    setup_token: str | None
    mode: str = "cumulative"
    solver: str | None = None
    diagnostics: dict = field(default_factory=dict)

    def __float__(self):
        return self.value


def check_zero_condition(chain: StochasticChain,
                         classification: StateClassification,
                         weights: np.ndarray) -> None:
    """Raise if the mask weighs a transition inside an ergodic class."""
    rows, cols, _ = chain.structure
    erg = classification.is_ergodic
    bad = np.flatnonzero(erg[rows] & erg[cols] & (weights != 0))
    if len(bad):
        k = bad[0]
        raise errors.ZeroConditionViolated(int(rows[k]), int(cols[k]),
                                           float(weights[k]))


def expect(cache: SetupCache, mask: Mask) -> ExpectationResult:
    """Expected cumulative weight ``sum_j nu_j (M_j . T_j)``."""
    chain = cache.chain
    w = mask.on(chain)
    inside = cache.ergodic_pairs[w[cache.ergodic_pairs] != 0]
    if len(inside):
        rows, cols, _ = chain.structure
        k = inside[0]
        raise errors.ZeroConditionViolated(int(rows[k]), int(cols[k]), float(w[k]))
    value = float(np.dot(w, cache.R_full))
    if not np.isfinite(value):
        raise errors.NumericalError("expectation is not finite")
    return ExpectationResult(value, mask.kind, cache.token, "cumulative",
                             cache.solver)


def expect_many(cache: SetupCache, masks: Sequence[Mask]) -> list[ExpectationResult]:
    return [expect(cache, m) for m in masks]


def fundamental_matrix(cache: SetupCache) -> np.ndarray:
    """``(I - A_T)^{-1}`` in canonical transient order (dense, ``t x t``)."""
    return cache.factorization.inverse()


def q_minus(cache: SetupCache) -> np.ndarray:
    """The (1,2)-inverse of ``I - T``: ``(I - A_T)^{-1}`` padded with zeros,
    in the chain's original state order."""
    n = cache.chain.n
    trans = cache.transient
    Q = np.zeros((n, n))
    Q[np.ix_(trans, trans)] = fundamental_matrix(cache)
    return Q


def truncated_series_oracle(chain: StochasticChain, mu, mask: Mask,
                            K: int) -> float:
    """``sum_{k=0}^{K} 1^T (M o T) T^k mu`` by repeated multiplication.

    Uses no factorization; it converges to the cumulative expectation for
    masks satisfying the zero condition.
    """
    mu = make_distribution(mu, chain.n).mu
    rows, cols, vals = chain.structure
    colw = np.bincount(cols, weights=mask.on(chain) * vals, minlength=chain.n)
    x = np.array(mu)
    total = 0.0
    for _ in range(K + 1):
        total += float(colw @ x)
        x = chain.T @ x
    return total


# ---------------------------------------------------------------------------
# time averages
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CesaroProjector:
    """``G = lim (1/N) sum_k T^k`` in factored form.

    ``G = sum_m pi_m p_m^T`` where ``pi_m`` is the stationary vector of
    ergodic class ``m`` and ``p_m`` is 1 on that class, the absorption
    probability into it on transient states, and 0 elsewhere.
    """

    n: int
    class_states: tuple[np.ndarray, ...]
    stationary: tuple[np.ndarray, ...]
    absorption: np.ndarray  # (classes, t) in canonical transient order
    transient: np.ndarray

    def apply(self, mu) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        y = np.zeros(self.n)
        mu_t = mu[self.transient]
        for m, (states, pi) in enumerate(zip(self.class_states, self.stationary)):
            weight = mu[states].sum() + self.absorption[m] @ mu_t
            y[states] += weight * pi
        return y

    @property
    def G(self) -> np.ndarray:
        G = np.zeros((self.n, self.n))
        for m, (states, pi) in enumerate(zip(self.class_states, self.stationary)):
            G[np.ix_(states, states)] = pi[:, None]
            G[np.ix_(states, self.transient)] = np.outer(pi, self.absorption[m])
        return G


def stationary_vector(T_mm: np.ndarray) -> np.ndarray:
    """Stationary vector of an irreducible column-stochastic block.

    Solves ``(T - I) pi = 0`` with the last equation replaced by
    ``sum(pi) = 1``; periodicity does not matter.
    """
    k = T_mm.shape[0]
    A = np.array(T_mm, dtype=float) - np.eye(k)
    A[-1, :] = 1.0
    b = np.zeros(k)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise errors.StationaryFailure(str(exc)) from None
    resid = np.abs(T_mm @ pi - pi).max(initial=0.0)
    if not resid <= STATIONARY_RESIDUAL * max(1, k):
        raise errors.StationaryFailure(
            f"stationary residual {resid:.3g} for class of size {k}")
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def cesaro_projector(chain: StochasticChain,
                     classification: StateClassification,
                     cache: SetupCache | None = None) -> CesaroProjector:
    """Build ``G`` class by class from stationary vectors and absorption
    probabilities; the group inverse of ``I - T`` is never formed."""
    if classification.chain_token != chain.token:
        raise errors.ChainMismatch("classification belongs to another chain")
    if cache is not None and cache.chain_token == chain.token:
        fact = cache.factorization
    else:
        fact, _ = factorize(chain, classification)
    trans = classification.transient_states
    states, pis, rhs = [], [], []
    for cls in classification.ergodic_classes:
        idx = np.array(cls.states, dtype=np.int64)
        block = chain.submatrix(idx, idx)
        if sp.issparse(block):
            block = block.toarray()
        states.append(idx)
        pis.append(stationary_vector(block))
        into = chain.submatrix(idx, trans)
        rhs.append(np.asarray(into.sum(axis=0)).ravel())
    if len(trans) and rhs:
        P = fact.solve_transpose(np.column_stack(rhs)).T
    else:
        P = np.zeros((len(rhs), len(trans)))
    for a in pis + [P]:
        a.setflags(write=False)
    return CesaroProjector(chain.n, tuple(states), tuple(pis), P, trans)


def time_average_expect(chain: StochasticChain, projector: CesaroProjector,
                        mu, mask: Mask) -> ExpectationResult:
    """Expected long-run average weight per step, ``sum_j (G mu)_j M_j . T_j``."""
    mu = make_distribution(mu, chain.n).mu
    if projector.n != chain.n:
        raise errors.ChainMismatch("projector does not fit the chain")
    g = projector.apply(mu)
    rows, cols, vals = chain.structure
    w = mask.on(chain)
    value = float(np.dot(w, vals * g[cols]))
    return ExpectationResult(value, mask.kind, None, "time_average")
