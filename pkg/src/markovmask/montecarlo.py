"""Monte Carlo estimates of transition-event expectations.

Paths are simulated in fixed-size shards. Shard ``s`` draws from a Philox
counter-based stream keyed by ``(seed, s)``, so results do not depend on how
many worker threads run the shards. Shard statistics are merged pairwise in
shard order.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import errors
from .chain import StateClassification, StochasticChain, classify_states, make_distribution
from .engine import check_zero_condition
from .masks import Mask

SHARD_SIZE = 1 << 15
MAX_TRUNCATED_FRACTION = 1e-3
THREADS_ENV = "MARKOV_MASK_THREADS"


@dataclass(frozen=True)
class SimulationEstimate:
    mean: float
    stderr: float
    n_paths: int
    seed: int
    truncations: int = 0
    mode: str = "cumulative"

    def to_dict(self) -> dict:
        return asdict(self)

    def z_score(self, exact: float) -> float:
        """``(exact - mean) / stderr``; 0 when both agree exactly."""
        diff = exact - self.mean
        if self.stderr == 0.0:
            return 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
        return diff / self.stderr


def stream(seed: int, shard: int) -> np.random.Generator:
    """Independent generator for one shard of paths."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, shard], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class _Sampler:
    """Inverse-CDF sampling over the structural nonzeros of each column.

    The cumulative table is offset by the column index, so one
    ``searchsorted`` over all nonzeros serves every column at once.
    """

    def __init__(self, chain: StochasticChain):
        rows, cols, vals = chain.structure
        n = chain.n
        self.rows = rows
        counts = np.bincount(cols, minlength=n)
        self.indptr = np.concatenate([[0], np.cumsum(counts)])
        cs = np.cumsum(vals)
        before = np.concatenate([[0.0], cs])[self.indptr[:-1]]
        within = cs - before[cols]
        colsum = within[self.indptr[1:] - 1]
        gcum = cols + within / colsum[cols]
        gcum[self.indptr[1:] - 1] = np.arange(n) + 1.0
        self.gcum = gcum

    def step(self, states: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Index of the sampled nonzero for each current state."""
        k = np.searchsorted(self.gcum, states + u, side="right")
        return np.minimum(k, self.indptr[states + 1] - 1)


def _initial_states(mu: np.ndarray, rng: np.random.Generator, m: int):
    cum = np.cumsum(mu)
    cum[-1] = 1.0
    return np.minimum(np.searchsorted(cum, rng.random(m), side="right"),
                      len(mu) - 1)


def sample_path(chain: StochasticChain, mu, rng, mode: str = "cumulative",
                max_steps: int | None = None,
                classification: StateClassification | None = None) -> list[int]:
    """One realization ``X_0, X_1, ...`` as a list of state indices.

    In cumulative mode the path stops on entering an ergodic state or after
    ``max_steps`` steps; in time-average mode it always runs ``max_steps``.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    mu = make_distribution(mu, chain.n).mu
    if max_steps is None:
        max_steps = 100 * chain.n
    if max_steps < 1:
        raise errors.ValidationError("max_steps must be at least 1")
    if mode not in ("cumulative", "time_average"):
        raise ValueError("mode must be 'cumulative' or 'time_average'")
    cl = classification or classify_states(chain)
    sampler = _Sampler(chain)
    state = int(_initial_states(mu, rng, 1)[0])
    path = [state]
    for _ in range(max_steps):
        if mode == "cumulative" and cl.is_ergodic[state]:
            break
        k = sampler.step(np.array([state]), rng.random(1))[0]
        state = int(sampler.rows[k])
        path.append(state)
    return path


# ---------------------------------------------------------------------------
# shard statistics
# ---------------------------------------------------------------------------

def _merge(a, b):
    """Combine (count, mean, M2) triples; arrays of per-mask statistics."""
    na, ma, sa = a
    nb, mb, sb = b
    n = na + nb
    if n == 0:
        return a
    d = mb - ma
    mean = ma + d * (nb / n)
    m2 = sa + sb + d * d * (na * nb / n)
    return n, mean, m2


def _tree_merge(stats):
    while len(stats) > 1:
        nxt = [_merge(stats[i], stats[i + 1]) for i in range(0, len(stats) - 1, 2)]
        if len(stats) % 2:
            nxt.append(stats[-1])
        stats = nxt
    return stats[0]


def _shard_sizes(n_paths: int) -> list[int]:
    full, rest = divmod(n_paths, SHARD_SIZE)
    return [SHARD_SIZE] * full + ([rest] if rest else [])


def _workers(threads: int | None, shards: int) -> int:
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(int(threads), shards))


def _run_shards(fn, n_paths, threads):
    sizes = _shard_sizes(n_paths)
    jobs = list(enumerate(sizes))
    workers = _workers(threads, len(jobs))
    if workers == 1:
        results = [fn(s, m) for s, m in jobs]
    else:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda job: fn(*job), jobs))
    stats = [r[0] for r in results]
    trunc = sum(r[1] for r in results)
    return _tree_merge(stats), trunc


def _stats(Y: np.ndarray):
    m = Y.shape[1]
    mean = Y.mean(axis=1)
    m2 = ((Y - mean[:, None]) ** 2).sum(axis=1)
    return m, mean, m2


def _estimates(merged, seed, trunc, mode):
    n, mean, m2 = merged
    out = []
    for k in range(len(mean)):
        var = m2[k] / (n - 1) if n > 1 else 0.0
        stderr = math.sqrt(max(var, 0.0) / n)
        out.append(SimulationEstimate(float(mean[k]), stderr, int(n), seed,
                                      int(trunc), mode))
    return out


def _weights(chain, masks):
    return np.vstack([m.on(chain) for m in masks])


# ---------------------------------------------------------------------------
# public estimators
# ---------------------------------------------------------------------------

def estimate_cumulative_batch(chain: StochasticChain, mu, masks: Sequence[Mask],
                              n_paths: int, seed: int = 0,
                              max_steps: int | None = None,
                              classification: StateClassification | None = None,
                              threads: int | None = None,
                              allow_truncation: bool = False
                              ) -> list[SimulationEstimate]:
    """Estimate several cumulative expectations from the same paths."""
    if n_paths < 1:
        raise errors.ValidationError("n_paths must be positive")
    mu = make_distribution(mu, chain.n).mu
    cl = classification or classify_states(chain)
    if max_steps is None:
        max_steps = 100 * chain.n
    W = _weights(chain, masks)
    for w in W:
        check_zero_condition(chain, cl, w)
    sampler = _Sampler(chain)
    ergodic = np.asarray(cl.is_ergodic)
    rows = sampler.rows

    def shard(s, m):
        rng = stream(seed, s)
        state = _initial_states(mu, rng, m)
        Y = np.zeros((len(W), m))
        steps = 0
        active = np.flatnonzero(~ergodic[state])
        while active.size and steps < max_steps:
            k = sampler.step(state[active], rng.random(active.size))
            Y[:, active] += W[:, k]
            nxt = rows[k]
            state[active] = nxt
            steps += 1
            active = active[~ergodic[nxt]]
        return _stats(Y), active.size

    merged, trunc = _run_shards(shard, n_paths, threads)
    out = _estimates(merged, seed, trunc, "cumulative")
    if trunc > MAX_TRUNCATED_FRACTION * n_paths and not allow_truncation:
        raise errors.ExcessiveTruncation(trunc, n_paths, max_steps)
    return out


def estimate_cumulative(chain: StochasticChain, mu, mask: Mask, n_paths: int,
                        seed: int = 0, max_steps: int | None = None,
                        **kwargs) -> SimulationEstimate:
    """Sample mean and standard error of ``Y_M`` summed until absorption.

    Raises :class:`~markovmask.errors.ExcessiveTruncation` when more than
    0.1% of paths reach ``max_steps`` (default ``100 n``) before entering an
    ergodic class.
    """
    return estimate_cumulative_batch(chain, mu, [mask], n_paths, seed,
                                     max_steps, **kwargs)[0]


def estimate_time_average_batch(chain: StochasticChain, mu,
                                masks: Sequence[Mask], horizon: int,
                                n_paths: int, seed: int = 0,
                                classification: StateClassification | None = None,
                                threads: int | None = None
                                ) -> list[SimulationEstimate]:
    """Estimate several time averages ``(1/N) sum_{k=0}^{N} M[X_{k+1}, X_k]``."""
    if horizon < 1:
        raise errors.ValidationError("horizon must be at least 1")
    if n_paths < 1:
        raise errors.ValidationError("n_paths must be positive")
    mu = make_distribution(mu, chain.n).mu
    cl = classification or classify_states(chain)
    W = _weights(chain, masks)
    sampler = _Sampler(chain)
    rows = sampler.rows
    # an absorbing state repeats its self-loop weight for the rest of the path
    absorbing = np.zeros(chain.n, bool)
    absorbing[list(cl.absorbing_states)] = True
    loop_k = np.zeros(chain.n, np.int64)
    for a in cl.absorbing_states:
        loop_k[a] = sampler.indptr[a]
    n_terms = horizon + 1

    def shard(s, m):
        rng = stream(seed, s)
        state = _initial_states(mu, rng, m)
        Y = np.zeros((len(W), m))
        active = np.arange(m)
        for step in range(n_terms):
            done = absorbing[state[active]]
            if done.any():
                idx = active[done]
                Y[:, idx] += W[:, loop_k[state[idx]]] * (n_terms - step)
                active = active[~done]
            if not active.size:
                break
            k = sampler.step(state[active], rng.random(active.size))
            Y[:, active] += W[:, k]
            state[active] = rows[k]
        return _stats(Y / horizon), 0

    merged, _ = _run_shards(shard, n_paths, threads)
    return _estimates(merged, seed, 0, "time_average")


def estimate_time_average(chain: StochasticChain, mu, mask: Mask, horizon: int,
                          n_paths: int, seed: int = 0,
                          **kwargs) -> SimulationEstimate:
    return estimate_time_average_batch(chain, mu, [mask], horizon, n_paths,
                                       seed, **kwargs)[0]
