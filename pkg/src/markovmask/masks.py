"""Masks: weights attached to the transitions of a chain.

``M[i, j]`` weighs the transition from state ``j`` to state ``i``. Only the
values at structural nonzeros of ``T`` influence any expectation, so most
builders return a vectorized weight function ``fn(rows, cols)`` instead of
an ``n x n`` matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from . import errors
from .chain import StateClassification, StochasticChain

WeightFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class Mask:
    """Transition weights, explicit or lazy.

    Exactly one of ``matrix`` (dense or sparse ``n x n``) and ``fn`` is set.
    ``time_average_only`` marks masks that break the zero condition on
    purpose, such as steady-state loop masks.
    """

    kind: str
    n: int
    matrix: np.ndarray | sp.sparray | None = None
    fn: WeightFn | None = None
    time_average_only: bool = False
    chain_token: str | None = None
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if (self.matrix is None) == (self.fn is None):
            raise ValueError("a mask needs exactly one of matrix or fn")

    @property
    def is_explicit(self) -> bool:
        return self.matrix is not None

    def weights_at(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if self.fn is not None:
            w = np.asarray(self.fn(rows, cols), dtype=float)
            return np.broadcast_to(w, rows.shape).astype(float, copy=False)
        if sp.issparse(self.matrix):
            if len(rows) == 0:
                return np.zeros(0)
            return np.asarray(self.matrix[rows, cols], dtype=float).ravel()
        return self.matrix[rows, cols].astype(float)

    def on(self, chain: StochasticChain) -> np.ndarray:
        """Weights at the structural nonzeros of ``chain`` (column-major)."""
        self.check_chain(chain)
        rows, cols, _ = chain.structure
        return self.weights_at(rows, cols)

    def check_chain(self, chain: StochasticChain) -> None:
        if self.n != chain.n:
            raise errors.ChainMismatch(
                f"mask is {self.n}x{self.n}, chain has {chain.n} states")
        if self.chain_token is not None and self.chain_token != chain.token:
            raise errors.ChainMismatch(
                f"mask {self.kind!r} was built for a different chain")

    def dense(self) -> np.ndarray:
        """Materialize as a dense matrix; only sensible for small ``n``."""
        if self.matrix is not None:
            return (self.matrix.toarray() if sp.issparse(self.matrix)
                    else np.array(self.matrix, dtype=float))
        i, j = np.indices((self.n, self.n))
        return self.weights_at(i.ravel(), j.ravel()).reshape(self.n, self.n)

    def frobenius(self, chain: StochasticChain) -> float:
        """Frobenius norm: every stored entry of an explicit mask, the
        structural nonzeros of ``chain`` for a lazy one."""
        if self.matrix is not None:
            if sp.issparse(self.matrix):
                return float(np.sqrt((self.matrix.data ** 2).sum()))
            return float(np.linalg.norm(self.matrix))
        return float(np.linalg.norm(self.on(chain)))

    def scaled(self, alpha: float) -> "Mask":
        return linear_combination([self], [alpha])


def linear_combination(masks: Sequence[Mask], coeffs: Sequence[float]) -> Mask:
    if not masks:
        raise ValueError("need at least one mask")
    n = masks[0].n
    if any(m.n != n for m in masks):
        raise errors.ChainMismatch("masks have different sizes")
    tokens = {m.chain_token for m in masks} - {None}
    if len(tokens) > 1:
        raise errors.ChainMismatch("masks belong to different chains")
    masks, coeffs = list(masks), [float(c) for c in coeffs]

    def fn(rows, cols):
        out = np.zeros(len(rows))
        for m, c in zip(masks, coeffs):
            out += c * m.weights_at(rows, cols)
        return out

    return Mask("combination", n, fn=fn,
                time_average_only=any(m.time_average_only for m in masks),
                chain_token=tokens.pop() if tokens else None,
                meta={"parts": [m.kind for m in masks], "coeffs": coeffs})


def mask_explicit(entries, n: int, labels: Sequence[str] | None = None,
                  kind: str = "explicit") -> Mask:
    """Explicit mask from an ``n x n`` array or ``(from, to, w)`` triples."""
    if sp.issparse(entries):
        M = sp.csr_array(entries, dtype=float)
    elif isinstance(entries, np.ndarray) and entries.ndim == 2:
        M = np.array(entries, dtype=float)
    else:
        index = {lab: k for k, lab in enumerate(labels or ())}

        def resolve(s):
            if isinstance(s, (int, np.integer)) and not isinstance(s, bool):
                if 0 <= s < n:
                    return int(s)
            elif s in index:
                return index[s]
            raise errors.UnknownState(s)

        rows, cols, vals = [], [], []
        for src, dst, w in entries:
            cols.append(resolve(src))
            rows.append(resolve(dst))
            vals.append(float(w))
        M = sp.csr_array((vals, (rows, cols)), shape=(n, n))
        M.sum_duplicates()
    if M.shape != (n, n):
        raise errors.ChainMismatch(f"mask has shape {M.shape}, expected {(n, n)}")
    return Mask(kind, n, matrix=M)


# ---------------------------------------------------------------------------
# canonical quantities
# ---------------------------------------------------------------------------

def _frozen(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


def mask_steps_to_absorption(classification: StateClassification) -> Mask:
    """Unit weight on every transition out of a transient state."""
    if classification.t == 0:
        raise errors.NoTransientStates()
    transient = _frozen(~classification.is_ergodic)

    def fn(rows, cols):
        return transient[cols].astype(float)

    return Mask("steps_to_absorption", classification.n, fn=fn,
                chain_token=classification.chain_token)


def mask_absorption_probability(classification: StateClassification,
                                ergodic_class: int) -> Mask:
    """Unit weight on entering ergodic class ``ergodic_class`` from outside."""
    ergodic = classification.ergodic_classes
    if not (isinstance(ergodic_class, (int, np.integer))
            and 0 <= ergodic_class < len(ergodic)):
        raise errors.UnknownClass(
            f"ergodic class {ergodic_class!r} not in 0..{len(ergodic) - 1}")
    target = np.zeros(classification.n, bool)
    target[list(ergodic[ergodic_class].states)] = True
    target.setflags(write=False)
    transient = _frozen(~classification.is_ergodic)

    def fn(rows, cols):
        return (target[rows] & transient[cols]).astype(float)

    return Mask("absorption_probability", classification.n, fn=fn,
                chain_token=classification.chain_token,
                meta={"ergodic_class": int(ergodic_class)})


def mask_arrivals(classification: StateClassification, state) -> Mask:
    """Arrivals at ``state`` from transient states.

    At an ergodic ``state`` only arrivals from transient sources count;
    arrivals from inside the class belong to a time-average analysis.
    """
    h = classification.index(state)
    transient = _frozen(~classification.is_ergodic)

    def fn(rows, cols):
        return ((rows == h) & transient[cols]).astype(float)

    return Mask("arrivals", classification.n, fn=fn,
                chain_token=classification.chain_token, meta={"state": h})


def mask_departures(classification: StateClassification, state) -> Mask:
    h = classification.index(state)
    transient = bool(not classification.is_ergodic[h])

    def fn(rows, cols):
        return ((cols == h) & transient).astype(float)

    return Mask("departures", classification.n, fn=fn,
                chain_token=classification.chain_token, meta={"state": h})


def mask_distance(chain: StochasticChain, classification: StateClassification,
                  distance) -> Mask:
    """Weight each transient transition by the distance it covers.

    ``distance`` is an ``n x n`` array ``d[from, to]``, a mapping
    ``{(from, to): d}`` keyed by labels or indices, or a callable
    ``d(from, to)``. Every structural nonzero leaving a transient state
    needs a distance.
    """
    if classification.chain_token != chain.token:
        raise errors.ChainMismatch("classification belongs to another chain")
    rows, cols, _ = chain.structure
    keep = ~classification.is_ergodic[cols]
    rows, cols = rows[keep], cols[keep]
    if isinstance(distance, np.ndarray) or (
            isinstance(distance, (list, tuple))
            and np.ndim(distance) == 2):
        d = np.asarray(distance, dtype=float)
        if d.shape != (chain.n, chain.n):
            raise errors.ChainMismatch(f"distance table has shape {d.shape}")
        vals = d[cols, rows]
        missing = np.flatnonzero(~np.isfinite(vals))
        if len(missing):
            k = missing[0]
            raise errors.MissingDistance(int(rows[k]), int(cols[k]))
    elif isinstance(distance, Mapping):
        table = {(chain.index(a), chain.index(b)): float(v)
                 for (a, b), v in distance.items()}
        vals = np.empty(len(rows))
        for k, (i, j) in enumerate(zip(rows.tolist(), cols.tolist())):
            try:
                vals[k] = table[j, i]
            except KeyError:
                raise errors.MissingDistance(i, j) from None
    elif callable(distance):
        vals = np.array([float(distance(j, i))
                         for i, j in zip(rows.tolist(), cols.tolist())])
    else:
        raise TypeError(f"unsupported distance table {type(distance)!r}")
    M = sp.csr_array((vals, (rows, cols)), shape=(chain.n, chain.n))
    return Mask("distance", chain.n, matrix=M, chain_token=chain.token)


def mask_transition_set(n: int, predicate=None, weight=1.0, *,
                        transitions: Iterable[tuple[int, int]] | None = None,
                        kind: str = "transition_set") -> Mask:
    """``weight`` on selected transitions, zero elsewhere.

    Select with a vectorized ``predicate(rows, cols) -> bool`` or with an
    explicit collection of ``(from, to)`` index pairs. ``weight`` may be a
    scalar or a vectorized ``w(rows, cols)``.
    """
    if (predicate is None) == (transitions is None):
        raise ValueError("give exactly one of predicate or transitions")
    if transitions is not None:
        keys = np.unique(np.array([dst * n + src for src, dst in transitions],
                                  dtype=np.int64))
        keys.setflags(write=False)

        def predicate(rows, cols):
            return np.isin(rows * n + cols, keys)

    def fn(rows, cols):
        w = weight(rows, cols) if callable(weight) else float(weight)
        return np.where(predicate(rows, cols), w, 0.0)

    return Mask(kind, n, fn=fn)


def mask_steady_state_loop(classification: StateClassification, state) -> Mask:
    """Single unit weight on the self-loop of an absorbing state.

    The cumulative expectation of this mask is infinite; its time average
    is the probability of absorption into ``state``.
    """
    j = classification.index(state)
    if j not in classification.absorbing_states:
        raise errors.NotAbsorbing(f"state {state!r} is not absorbing")

    def fn(rows, cols):
        return ((rows == j) & (cols == j)).astype(float)

    return Mask("steady_state_loop", classification.n, fn=fn,
                time_average_only=True,
                chain_token=classification.chain_token, meta={"state": j})


# ---------------------------------------------------------------------------
# composite chains
# ---------------------------------------------------------------------------

def _composite_layout(classification: StateClassification, n0: int, p: int,
                      ordering):
    if n0 < 1 or p < 1 or n0 ** p != classification.n:
        raise errors.NotComposite(
            f"{classification.n} states is not {n0}**{p}")
    if ordering is None:
        rank = np.arange(n0, dtype=float)
    else:
        rank = np.asarray(ordering, dtype=float)
        if rank.shape != (n0,):
            raise errors.NotComposite(f"ordering must have {n0} entries")
    # base state a is absorbing iff (a, ..., a) is absorbing in the product
    step = sum(n0 ** k for k in range(p))
    absorbing = set(classification.absorbing_states)
    base_abs = np.array([a * step in absorbing for a in range(n0)])
    powers = n0 ** np.arange(p - 1, -1, -1, dtype=np.int64)
    rank.setflags(write=False)
    base_abs.setflags(write=False)
    return rank, base_abs, powers


def _coords(idx, n0, powers):
    return (idx[None, :] // powers[:, None]) % n0


def mask_lead_changes_2p(classification: StateClassification, n0: int,
                         ordering=None) -> Mask:
    """Lead changes between two players of a Kronecker-squared game.

    ``ordering[a]`` ranks base state ``a`` (higher is closer to winning;
    default: the state index). A strict swap of the lead scores 1, creating
    or breaking a tie scores 1/2, and transitions out of a state where either
    player has been absorbed score 0.
    """
    rank, base_abs, powers = _composite_layout(classification, n0, 2, ordering)

    def fn(rows, cols):
        i1, i2 = rank[rows // n0], rank[rows % n0]
        j1, j2 = rank[cols // n0], rank[cols % n0]
        live = ~(base_abs[cols // n0] | base_abs[cols % n0])
        swap = ((j2 < j1) & (i2 > i1)) | ((j2 > j1) & (i2 < i1))
        half = ((j2 == j1) & (i2 != i1)) | ((j2 != j1) & (i2 == i1))
        return np.where(live, np.where(swap, 1.0, np.where(half, 0.5, 0.0)), 0.0)

    return Mask("lead_changes_2p", classification.n, fn=fn,
                chain_token=classification.chain_token, meta={"n0": n0})


LEAD_VARIANTS = ("leader-passing", "permutation-count")


def mask_lead_changes_p(classification: StateClassification, n0: int, p: int,
                        variant: str = "leader-passing", ordering=None) -> Mask:
    """Lead changes among ``p`` players.

    ``"leader-passing"`` scores 1 when the unique leader changes and 1/2
    when the set of players tied for the lead changes otherwise.
    ``"permutation-count"`` scores each pair of players whose strict order
    flips with 1, and each pair entering or leaving a tie with 1/2. Both
    reduce to :func:`mask_lead_changes_2p` for ``p = 2``.
    """
    if variant not in LEAD_VARIANTS:
        raise ValueError(f"variant must be one of {LEAD_VARIANTS}")
    rank, base_abs, powers = _composite_layout(classification, n0, p, ordering)
    bits = (1 << np.arange(p, dtype=np.int64))[:, None]

    def leaders(r):
        top = r.max(axis=0)
        return ((r == top[None, :]) * bits).sum(axis=0)

    def fn(rows, cols):
        src_c, dst_c = _coords(cols, n0, powers), _coords(rows, n0, powers)
        live = ~base_abs[src_c].any(axis=0)
        rs, rd = rank[src_c], rank[dst_c]
        if variant == "leader-passing":
            ls, ld = leaders(rs), leaders(rd)
            single = ((ls & (ls - 1)) == 0) & ((ld & (ld - 1)) == 0)
            w = np.where(ls == ld, 0.0, np.where(single, 1.0, 0.5))
        else:
            w = np.zeros(len(rows))
            for a, b in combinations(range(p), 2):
                s = np.sign(rs[a] - rs[b])
                d = np.sign(rd[a] - rd[b])
                w += (s * d < 0) + 0.5 * ((s == 0) != (d == 0))
        return np.where(live, w, 0.0)

    meta = {"n0": n0, "p": p, "variant": variant}
    if p > 2:
        meta["extension"] = "tie weights for p > 2 are an interpretation"
    return Mask(f"lead_changes_p:{variant}", classification.n, fn=fn,
                chain_token=classification.chain_token, meta=meta)
